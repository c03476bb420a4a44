"""Shared test helpers: independent oracles and small generators.

Everything here is deliberately written against plain dicts and lists,
separate from the package's own data layout, so tests compare two
genuinely different routes to the same answer.
"""

from __future__ import annotations

import random

from marsring.worldgraph import WorldGraph

SCRIPT_TOPICS = ("team.percepts", "team.auction", "news", "map.updates", "chat.live", "x.y-z_0")


def fw_distances(vertex_ids, edges) -> dict[tuple[int, int], float]:
    """Floyd-Warshall over (u, v, w) triples; inf marks unreachable."""
    inf = float("inf")
    ids = sorted(vertex_ids)
    dist = {(u, v): (0 if u == v else inf) for u in ids for v in ids}
    for u, v, w in edges:
        if w < dist[(u, v)]:
            dist[(u, v)] = w
            dist[(v, u)] = w
    for k in ids:
        for i in ids:
            dik = dist[(i, k)]
            if dik == inf:
                continue
            for j in ids:
                alt = dik + dist[(k, j)]
                if alt < dist[(i, j)]:
                    dist[(i, j)] = alt
    return dist


def index_matches_oracle(index, graph: WorldGraph) -> None:
    edges = [(e.u, e.v, e.weight) for e in graph.edges()]
    oracle = fw_distances(graph.vertex_ids(), edges)
    got = index.distances_by_id()
    for pair, expect in oracle.items():
        actual = got[pair]
        if expect == float("inf"):
            assert actual is None, f"{pair}: expected unreachable, got {actual}"
        else:
            assert actual == expect, f"{pair}: expected {expect}, got {actual}"


def random_connected_graph(rng: random.Random, n: int, extra: float = 0.2,
                           wmax: int = 10, vmax: int = 10) -> WorldGraph:
    """Random tree plus a fraction of the remaining pairs as extra edges."""
    g = WorldGraph()
    ids = list(range(n))
    for vid in ids:
        g.add_vertex(vid, rng.randint(0, vmax))
    order = ids[:]
    rng.shuffle(order)
    for i in range(1, n):
        g.set_edge(order[i], rng.choice(order[:i]), rng.randint(1, wmax))
    pool = [(u, v) for u in ids for v in ids if u < v and not g.has_edge(u, v)]
    for u, v in rng.sample(pool, round(extra * len(pool))):
        g.set_edge(u, v, rng.randint(1, wmax))
    return g


def make_bus_script(rng: random.Random, n_ops: int, client_ids) -> list[tuple]:
    """Random subscribe/publish/unsubscribe sequence over a fixed topic pool.

    Topics under agent.* are reserved for the runner's flush sentinels and
    never appear in generated operations.
    """
    ops: list[tuple] = []
    payload_pool = [b"hi", b"x" * 40, b"line\nbreak", bytes([0, 255, 10, 13, 7])]
    for _ in range(n_ops):
        kind = rng.choices(("sub", "pub", "unsub"), weights=(3, 5, 2))[0]
        cid = rng.choice(client_ids)
        topic = rng.choice(SCRIPT_TOPICS)
        if kind == "pub":
            ops.append(("pub", cid, topic, rng.choice(payload_pool) + str(rng.randint(0, 99)).encode()))
        else:
            ops.append((kind, cid, topic))
    return ops


def predict_bus_script(script, client_ids) -> dict[str, list[tuple]]:
    """Central replay of the broker rules: the delivery oracle."""
    subs: dict[str, set[str]] = {}
    seq: dict[tuple[str, str], int] = {}
    out: dict[str, list[tuple]] = {cid: [] for cid in client_ids}
    for op in script:
        if op[0] == "sub":
            subs.setdefault(op[2], set()).add(op[1])
        elif op[0] == "unsub":
            subs.get(op[2], set()).discard(op[1])
        else:
            _, cid, topic, payload = op
            s = seq.get((cid, topic), 0) + 1
            seq[(cid, topic)] = s
            for member in subs.get(topic, ()):
                out[member].append((topic, cid, s, payload))
    return out


def run_bus_script(connect, script, client_ids) -> dict[str, list[tuple]]:
    """Execute a script against a live bus and collect per-client transcripts.

    Every client holds a subscription to its own agent.<id> topic; after the
    script a flusher publishes one sentinel per client, which marks the end
    of that client's transcript (the broker commits deliveries in publish
    order, so everything earlier has already been queued).
    """
    clients = {cid: connect(cid) for cid in client_ids}
    try:
        for cid, client in clients.items():
            client.subscribe(f"agent.{cid}")
        for op in script:
            if op[0] == "sub":
                clients[op[1]].subscribe(op[2])
            elif op[0] == "unsub":
                clients[op[1]].unsubscribe(op[2])
            else:
                clients[op[1]].publish(op[2], op[3])
        flusher = connect("flusher")
        try:
            for cid in client_ids:
                flusher.publish(f"agent.{cid}", b"FLUSH")
        finally:
            flusher.close()
        transcripts: dict[str, list[tuple]] = {}
        for cid, client in clients.items():
            got: list[tuple] = []
            while True:
                env = client.next_message(timeout=5.0)
                assert env is not None, f"flush sentinel never reached {cid}"
                if env.sender == "flusher" and env.topic == f"agent.{cid}":
                    break
                got.append((env.topic, env.sender, env.seq, env.payload))
            transcripts[cid] = got
        return transcripts
    finally:
        for client in clients.values():
            client.close()


def assert_fifo_no_gaps(transcripts) -> None:
    """Seqs from a fixed (sender, topic) must strictly increase per client."""
    for cid, entries in transcripts.items():
        last: dict[tuple[str, str], int] = {}
        for topic, sender, seq, _payload in entries:
            key = (sender, topic)
            assert seq > last.get(key, 0), f"{cid}: seq regression on {key}"
            last[key] = seq


def check_index_invariants(index) -> None:
    """Metric and path-pointer invariants that must hold for any index."""
    order = index.order
    n = len(order)
    for i, u in enumerate(order):
        assert index.dist[i][i] == 0
        for j, v in enumerate(order):
            d = index.dist[i][j]
            back = index.dist[j][i]
            assert d == back, f"asymmetry at ({u},{v})"
            if d is None:
                assert index.next_hop[i][j] is None
                continue
            for k in range(n):
                dik = index.dist[i][k]
                dkj = index.dist[k][j]
                if dik is not None and dkj is not None:
                    assert d <= dik + dkj, f"triangle violated at ({u},{v})"
            if i != j:
                hop = index.next_hop[i][j]
                assert hop is not None


def greedy_rounds(
    scores: dict[str, dict[str, int]], goal_ids: list[str]
) -> tuple[dict[str, str], int]:
    """Central replay of the ring auction: per round every open agent bids
    its best open goal, the best bid per goal wins, ties go to the smaller
    agent id.  Returns (goal -> agent, number of rounds)."""
    agents = sorted(scores)
    fixed: dict[str, str] = {}
    taken: set[str] = set()
    rounds = 0
    while len(taken) < len(agents):
        rounds += 1
        bids: dict[str, tuple[int, str]] = {}
        for agent in agents:
            if agent in taken:
                continue
            table = sorted(goal_ids, key=lambda g: (-scores[agent][g], g))
            pick = next(g for g in table if g not in fixed)
            s = scores[agent][pick]
            cur = bids.get(pick)
            if cur is None or s > cur[0] or (s == cur[0] and agent < cur[1]):
                bids[pick] = (s, agent)
        for gid, (_s, agent) in bids.items():
            fixed[gid] = agent
            taken.add(agent)
    return fixed, rounds


def graph_state(g) -> tuple:
    """Canonical snapshot of a belief graph for cross-agent comparison."""
    return (
        tuple(sorted(g.vertex_ids())),
        tuple(sorted((v, g.value(v)) for v in g.probed)),
        tuple(sorted(g.pending_edges)),
        tuple((e.u, e.v, e.weight) for e in g.edges()),
    )
