"""Bus semantics on both transports."""

from __future__ import annotations

import random
import socket
import threading

import pytest

from marsring.msgbus import (
    MAX_PAYLOAD,
    BusServer,
    ClientIdError,
    DisconnectedError,
    InProcessBus,
    PayloadError,
    TopicError,
    connect_tcp,
    validate_topic,
)
from support import (
    assert_fifo_no_gaps,
    make_bus_script,
    predict_bus_script,
    run_bus_script,
)


@pytest.fixture
def bus():
    b = InProcessBus()
    yield b
    b.close()


@pytest.fixture
def server():
    s = BusServer()
    yield s
    s.close()


class TestTopicNames:
    def test_valid(self):
        assert validate_topic("team.percepts") == "team.percepts"
        assert validate_topic("a-b_c.0") == "a-b_c.0"

    @pytest.mark.parametrize("name", ["", "Bad Topic!", "UPPER", "x" * 65, "semi;colon"])
    def test_invalid(self, name):
        with pytest.raises(TopicError):
            validate_topic(name)


class TestInProcess:
    def test_fanout_exactly_once_per_subscriber(self, bus):
        a = bus.connect("a1")
        b = bus.connect("a2")
        c = bus.connect("a3")
        a.subscribe("team.percepts")
        b.subscribe("team.percepts")
        c.publish("team.percepts", b"ping")
        for client in (a, b):
            env = client.next_message(1.0)
            assert (env.topic, env.sender, env.seq, env.payload) == (
                "team.percepts", "a3", 1, b"ping",
            )
            assert client.next_message(0.05) is None

    def test_no_cross_talk(self, bus):
        a = bus.connect("a1")
        a.subscribe("team.auction")
        b = bus.connect("a2")
        b.publish("team.percepts", b"other")
        assert a.next_message(0.05) is None

    def test_double_subscribe_single_delivery(self, bus):
        a = bus.connect("a1")
        a.subscribe("news")
        a.subscribe("news")
        bus.connect("a2").publish("news", b"x")
        assert a.next_message(1.0) is not None
        assert a.next_message(0.05) is None

    def test_unsubscribe_stops_delivery(self, bus):
        a = bus.connect("a1")
        a.subscribe("news")
        a.unsubscribe("news")
        bus.connect("a2").publish("news", b"x")
        assert a.next_message(0.05) is None

    def test_seq_per_sender_and_topic(self, bus):
        a = bus.connect("a1")
        a.subscribe("t.one")
        a.subscribe("t.two")
        b = bus.connect("a2")
        b.publish("t.one", b"1")
        b.publish("t.two", b"2")
        b.publish("t.one", b"3")
        got = [a.next_message(1.0) for _ in range(3)]
        seqs = {(e.topic, e.seq) for e in got}
        assert seqs == {("t.one", 1), ("t.two", 1), ("t.one", 2)}

    def test_duplicate_client_id_rejected(self, bus):
        bus.connect("a1")
        with pytest.raises(ClientIdError):
            bus.connect("a1")

    def test_bad_topic_raises(self, bus):
        a = bus.connect("a1")
        with pytest.raises(TopicError):
            a.subscribe("NOT OK")
        with pytest.raises(TopicError):
            a.publish("NOT OK", b"x")

    def test_oversize_payload_rejected(self, bus):
        a = bus.connect("a1")
        with pytest.raises(PayloadError):
            a.publish("news", b"x" * (64 * 1024 + 1))

    def test_slow_consumer_disconnected_with_overflow(self):
        bus = InProcessBus(queue_limit=8)
        slow = bus.connect("slow")
        slow.subscribe("news")
        fast = bus.connect("fast")
        for i in range(20):
            fast.publish("news", b"m%d" % i)
        with pytest.raises(DisconnectedError, match="overflow"):
            while True:
                slow.next_message(0.05)
        # the publisher keeps working
        fast.publish("news", b"after")
        bus.close()

    def test_thousand_envelopes_four_agents(self, bus):
        # Four concurrent publishers, everyone subscribed: no losses and
        # per-sender order preserved.
        ids = ["a1", "a2", "a3", "a4"]
        clients = {cid: bus.connect(cid) for cid in ids}
        for c in clients.values():
            c.subscribe("team.percepts")

        def blast(cid):
            for i in range(250):
                clients[cid].publish("team.percepts", f"{cid}:{i}".encode())

        threads = [threading.Thread(target=blast, args=(cid,)) for cid in ids]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        for cid, c in clients.items():
            seen: dict[str, int] = {}
            for _ in range(1000):
                env = c.next_message(2.0)
                assert env is not None, f"{cid} lost messages"
                assert env.seq == seen.get(env.sender, 0) + 1
                seen[env.sender] = env.seq
            assert c.next_message(0.05) is None
            assert seen == {s: 250 for s in ids}


class TestTcp:
    def test_round_trip_with_binary_payload(self, server):
        a = connect_tcp(server.host, server.port, "a1")
        b = connect_tcp(server.host, server.port, "a2")
        a.subscribe("news")
        payload = bytes([0, 10, 13, 255]) + b"tail\nline"
        b.publish("news", payload)
        env = a.next_message(2.0)
        assert env.payload == payload
        assert env.sender == "a2"
        a.close()
        b.close()

    def test_duplicate_client_id_gets_err_id(self, server):
        a = connect_tcp(server.host, server.port, "dup")
        with pytest.raises(ClientIdError):
            connect_tcp(server.host, server.port, "dup")
        a.close()

    def test_first_line_must_be_hello(self, server):
        raw = socket.create_connection((server.host, server.port))
        raw.sendall(b"SUB news\n")
        assert raw.makefile("rb").readline() == b"ERR proto\n"
        raw.close()

    def test_bad_topic_err_and_connection_stays_open(self, server):
        raw = socket.create_connection((server.host, server.port))
        reader = raw.makefile("rb")
        raw.sendall(b"HELLO rawguy\n")
        assert reader.readline() == b"OK\n"
        raw.sendall(b"SUB Bad!Topic\n")
        assert reader.readline() == b"ERR topic\n"
        raw.sendall(b"SUB news\n")
        assert reader.readline() == b"OK\n"
        raw.close()

    def test_oversize_pub_err_size(self, server):
        raw = socket.create_connection((server.host, server.port))
        reader = raw.makefile("rb")
        raw.sendall(b"HELLO bigguy\n")
        assert reader.readline() == b"OK\n"
        n = 64 * 1024 + 1
        raw.sendall(b"PUB news %d\n" % n + b"x" * n + b"\n")
        assert reader.readline() == b"ERR size\n"
        raw.sendall(b"SUB news\n")
        assert reader.readline() == b"OK\n"
        raw.close()

    def test_unknown_command_err_proto(self, server):
        raw = socket.create_connection((server.host, server.port))
        reader = raw.makefile("rb")
        raw.sendall(b"HELLO protoguy\n")
        assert reader.readline() == b"OK\n"
        raw.sendall(b"FROB news\n")
        assert reader.readline() == b"ERR proto\n"
        raw.close()

    def test_overflow_disconnects_slow_client(self):
        # a client that stops reading its socket: kernel buffers fill,
        # the writer thread stalls, and the bounded queue behind it trips
        server = BusServer(queue_limit=8)
        try:
            raw = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            raw.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 4096)
            raw.connect((server.host, server.port))
            reader = raw.makefile("rb")
            raw.sendall(b"HELLO slow\n")
            assert reader.readline() == b"OK\n"
            raw.sendall(b"SUB news\n")
            assert reader.readline() == b"OK\n"

            fast = connect_tcp(server.host, server.port, "fast")
            blob = bytes(MAX_PAYLOAD)
            for _ in range(300):
                fast.publish("news", blob)

            # drain what was in flight; the stream must end with the
            # overflow notice and then EOF
            saw_overflow = False
            while True:
                line = reader.readline()
                if not line:
                    break
                if line == b"ERR overflow\n":
                    saw_overflow = True
                    continue
                assert line.startswith(b"MSG news fast ")
                nbytes = int(line.split()[-1])
                reader.read(nbytes + 1)
            assert saw_overflow
            fast.close()
            raw.close()
        finally:
            server.close()


class TestConformance:
    def test_transports_match_oracle(self):
        rng = random.Random(424)
        ids = ["a1", "a2", "a3", "a4"]
        script = make_bus_script(rng, 300, ids)
        expected = predict_bus_script(script, ids)

        bus = InProcessBus()
        try:
            local = run_bus_script(bus.connect, script, ids)
        finally:
            bus.close()

        server = BusServer()
        try:
            remote = run_bus_script(
                lambda cid: connect_tcp(server.host, server.port, cid), script, ids
            )
        finally:
            server.close()

        assert local == expected
        assert remote == expected
        assert_fifo_no_gaps(local)
        assert_fifo_no_gaps(remote)
