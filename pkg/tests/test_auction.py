"""Ring auction: codecs, worked examples, and the central-replay oracle."""

from __future__ import annotations

import random

import pytest

from marsring.auction import (
    MIN_SCORE,
    AuctionError,
    AuctionParticipant,
    AuctionToken,
    Goal,
    GoalKind,
    RingTopology,
    decode_result,
    decode_start,
    decode_token,
    encode_result,
    encode_start,
    encode_token,
    run_auction,
    score_goals,
)
from marsring.worldgraph import WorldGraph, build_index

from support import greedy_rounds


def fixed_scores(table: dict[str, int]):
    return lambda goals: dict(table)


def goal_list(*gids: str) -> list[Goal]:
    return [Goal(g, GoalKind.PROBE, i) for i, g in enumerate(gids)]


def auc_lines(transcript) -> list[str]:
    return [line for _s, line in transcript if line.startswith("AUC ")]


class TestCodecs:
    def test_token_round_trip(self):
        token = AuctionToken(
            7, 2, 3, {"g00": "a1", "g02": "a3"}, {"g01": (-12, "a2"), "g03": (5, "a4")}
        )
        line = encode_token(token)
        assert line == "AUC 7 2 3 fixed=g00:a1,g02:a3 bids=g01:-12:a2,g03:5:a4"
        assert decode_token(line) == token

    def test_token_empty_sections(self):
        token = AuctionToken(1, 1, 1, {}, {})
        line = encode_token(token)
        assert line == "AUC 1 1 1 fixed= bids="
        assert decode_token(line) == token

    def test_start_round_trip(self):
        goals = [Goal("g01", GoalKind.OCCUPY, 7), Goal("g00", GoalKind.PROBE, 4)]
        line = encode_start(3, ["b", "a"], goals)
        assert line == "AUCSTART 3 ring=a,b goals=g00:probe:4,g01:occupy:7"
        aid, ring, decoded = decode_start(line)
        assert aid == 3
        assert ring == ["a", "b"]
        assert decoded == [Goal("g00", GoalKind.PROBE, 4), Goal("g01", GoalKind.OCCUPY, 7)]

    def test_result_round_trip(self):
        line = encode_result(9, {"g1": "a2", "g0": "a1"})
        assert line == "AUCRESULT 9 g0:a1,g1:a2"
        assert decode_result(line) == (9, {"g0": "a1", "g1": "a2"})

    @pytest.mark.parametrize(
        "line",
        [
            "AUC x 1 1 fixed= bids=",
            "AUC 1 0 1 fixed= bids=",
            "AUC 1 1 -1 fixed= bids=",
            "AUC 1 1 1 fixed=g0 bids=",
            "AUC 1 1 1 fixed= bids=g0:notanint:a1",
            "AUC 1 1 1 fixed=g0:a1 bids=g0:3:a2",
            "AUC 1 1 fixed= bids=",
            "AUCSTART 1 ring= goals=g0:probe:1",
            "AUCSTART 1 ring=a goals=g0:dance:1",
            "AUCSTART 1 ring=a goals=g0:probe:x",
            "AUCSTART 1 ring=a,a goals=g0:probe:1,g1:probe:2",
            "AUCRESULT 1 g0",
            "AUCRESULT z g0:a1",
            "NOPE 1 2 3",
        ],
    )
    def test_bad_lines_rejected(self, line):
        with pytest.raises(AuctionError):
            if line.startswith("AUC "):
                decode_token(line)
            elif line.startswith("AUCSTART"):
                decode_start(line)
            elif line.startswith("AUCRESULT"):
                decode_result(line)
            else:
                AuctionParticipant("a", fixed_scores({})).handle_line(line)

    def test_start_needs_enough_goals(self):
        with pytest.raises(AuctionError):
            encode_start(1, ["a", "b", "c"], goal_list("g0", "g1"))


class TestRing:
    def test_positions_sorted(self):
        ring = RingTopology(["c", "a", "b"])
        assert ring.ids == ("a", "b", "c")
        assert ring.position("c") == 2
        assert ring.agent_at(2) == "c"
        assert ring.next_position(2) == 0

    def test_unknown_and_empty(self):
        ring = RingTopology(["a"])
        with pytest.raises(AuctionError):
            ring.position("z")
        with pytest.raises(AuctionError):
            RingTopology([])


class TestSingleAgent:
    def test_one_round_one_message(self):
        parts, transcript = run_auction(
            {"a1": fixed_scores({"g0": 5, "g1": 9})}, goal_list("g0", "g1")
        )
        assert parts["a1"].done
        assert parts["a1"].assignment == "g1"
        assert parts["a1"].result == {"g1": "a1"}
        tokens = auc_lines(transcript)
        assert len(tokens) == 1
        assert decode_token(tokens[0]).round == 1


class TestTwoAgents:
    def test_contested_goal_takes_two_rounds(self):
        # both prefer g1; a1 wins it outright, a2 falls back to g2
        parts, transcript = run_auction(
            {
                "a1": fixed_scores({"g1": 10, "g2": 4}),
                "a2": fixed_scores({"g1": 8, "g2": 7}),
            },
            goal_list("g1", "g2"),
        )
        assert parts["a1"].result == {"g1": "a1", "g2": "a2"}
        assert parts["a2"].result == {"g1": "a1", "g2": "a2"}
        assert parts["a1"].assignment == "g1"
        assert parts["a2"].assignment == "g2"
        tokens = [decode_token(t) for t in auc_lines(transcript)]
        assert len(tokens) == 4
        assert [t.round for t in tokens] == [1, 1, 2, 2]

    def test_equal_scores_go_to_smaller_id(self):
        parts, _ = run_auction(
            {
                "a1": fixed_scores({"g1": 6, "g2": 6}),
                "a2": fixed_scores({"g1": 6, "g2": 6}),
            },
            goal_list("g1", "g2"),
        )
        assert parts["a1"].assignment == "g1"
        assert parts["a2"].assignment == "g2"

    def test_disjoint_preferences_take_one_round(self):
        parts, transcript = run_auction(
            {
                "a1": fixed_scores({"g1": 9, "g2": 1}),
                "a2": fixed_scores({"g1": 1, "g2": 9}),
            },
            goal_list("g1", "g2"),
        )
        assert parts["a1"].assignment == "g1"
        assert parts["a2"].assignment == "g2"
        assert len(auc_lines(transcript)) == 2


class TestOracle:
    def test_matches_central_replay(self):
        rng = random.Random(2026)
        for trial in range(60):
            n = rng.randint(1, 8)
            agents = ["a%02d" % i for i in range(n)]
            gids = ["g%02d" % i for i in range(rng.randint(n, 12))]
            scores = {
                a: {
                    g: (MIN_SCORE if rng.random() < 0.1 else rng.randint(-20, 20))
                    for g in gids
                }
                for a in agents
            }
            goals = [Goal(g, GoalKind.PROBE, i) for i, g in enumerate(gids)]
            parts, transcript = run_auction(
                {a: fixed_scores(scores[a]) for a in agents}, goals
            )
            expected, rounds = greedy_rounds(scores, gids)

            results = {a: parts[a].result for a in agents}
            for a in agents:
                assert results[a] == expected, f"trial {trial}: {a} disagrees"
            # bijection over the ring
            assigned = [parts[a].assignment for a in agents]
            assert len(set(assigned)) == n and None not in assigned
            # round and message budget
            tokens = [decode_token(t) for t in auc_lines(transcript)]
            seen_rounds = sorted(set(t.round for t in tokens))
            assert seen_rounds == list(range(1, rounds + 1))
            assert rounds <= n
            for r in seen_rounds:
                assert sum(1 for t in tokens if t.round == r) == n


class TestDeadAgents:
    def test_dead_receiver_dropped_and_rerun(self):
        parts, transcript = run_auction(
            {
                "a1": fixed_scores({"g1": 9, "g2": 5, "g3": 1}),
                "a2": fixed_scores({"g1": 2, "g2": 8, "g3": 3}),
                "a3": fixed_scores({"g1": 1, "g2": 2, "g3": 7}),
            },
            goal_list("g1", "g2", "g3"),
            dead={"a2"},
        )
        starts = [line for _s, line in transcript if line.startswith("AUCSTART ")]
        assert len(starts) == 2
        aid, ring, _goals = decode_start(starts[1])
        assert aid == 2
        assert ring == ["a1", "a3"]
        assert parts["a1"].assignment == "g1"
        assert parts["a3"].assignment == "g3"
        assert parts["a1"].result == parts["a3"].result == {"g1": "a1", "g3": "a3"}

    def test_initiator_dies_mid_auction(self):
        # a1 opens the auction and sends the first token, then goes silent;
        # the agent left waiting on it restarts with the survivors
        score_fns = {
            "a1": fixed_scores({"g1": 9, "g2": 5, "g3": 1}),
            "a2": fixed_scores({"g1": 2, "g2": 8, "g3": 3}),
            "a3": fixed_scores({"g1": 1, "g2": 2, "g3": 7}),
        }
        parts = {a: AuctionParticipant(a, fn) for a, fn in score_fns.items()}
        live = ["a1", "a2", "a3"]
        parts["a1"].start(1, live, goal_list("g1", "g2", "g3"))
        pending = [("a1", line) for line in parts["a1"].take_outbox()]
        transcript = []
        for _ in range(200):
            if not pending:
                if all(parts[a].done for a in live):
                    break
                for a in live:
                    parts[a].on_timeout()
                for a in live:
                    pending.extend((a, out) for out in parts[a].take_outbox())
                assert pending, "stalled with no recovery"
                continue
            sender, line = pending.pop(0)
            transcript.append((sender, line))
            if sender == "a1" and line.startswith("AUC ") and "a1" in live:
                live = ["a2", "a3"]  # a1 dies right after its first token
            for a in live:
                if a == sender:
                    continue
                parts[a].handle_line(line)
            for a in live:
                pending.extend((a, out) for out in parts[a].take_outbox())
        assert parts["a2"].done and parts["a3"].done
        assert parts["a2"].result == parts["a3"].result
        assert parts["a2"].result == {"g2": "a2", "g3": "a3"}
        starts = [line for _s, line in transcript if line.startswith("AUCSTART ")]
        assert len(starts) == 2
        aid, ring, _goals = decode_start(starts[1])
        assert aid == 2 and ring == ["a2", "a3"]
        assert parts["a2"].auction_id == 2


class TestScoreGoals:
    def build(self):
        g = WorldGraph()
        for vid, value in [(0, 0), (1, 3), (2, 9), (5, 4)]:
            g.add_vertex(vid, value)
        g.set_edge(0, 1, 2)
        g.set_edge(1, 2, 3)
        # vertex 5 has no edges at all
        g.mark_probed(2, 9)
        return g, build_index(g)

    def test_worth_minus_distance(self):
        g, index = self.build()
        goals = [
            Goal("p1", GoalKind.PROBE, 1),
            Goal("p2", GoalKind.PROBE, 2),
            Goal("o2", GoalKind.OCCUPY, 2),
            Goal("r0", GoalKind.REPAIR, 0),
            Goal("h1", GoalKind.HUNT, 1),
        ]
        scores = score_goals(g, index, 0, goals)
        assert scores["p1"] == 1 - 2  # unprobed, flat worth 1
        assert scores["p2"] == 9 - 5  # probed, value known
        assert scores["o2"] == 3 * 9 - 5  # camps score over a payback horizon
        assert scores["r0"] == 10 - 0
        assert scores["h1"] == 5 - 2

    def test_unreachable_and_unknown(self):
        g, index = self.build()
        scores = score_goals(
            g,
            index,
            0,
            [Goal("far", GoalKind.PROBE, 5), Goal("ghost", GoalKind.OCCUPY, 77)],
        )
        assert scores["far"] == MIN_SCORE
        assert scores["ghost"] == MIN_SCORE
