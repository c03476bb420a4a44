"""Ring auction for splitting team goals between agents.

One auction assigns every ring member exactly one goal.  The token walks
the ring carrying the fixed assignments and the open bids for the current
round; the initiator (ring position 0) settles a round each time the token
returns, freezing the best bid per goal.  An agent bids on the first goal
of its own preference table that is not already fixed, so every round
fixes at least one more agent and the auction ends after at most n rounds
of exactly n token messages each.

Wire lines, all published on a single team topic:

  AUCSTART <aid> ring=<a,b,...> goals=<gid:kind:target,...>
  AUC <aid> <round> <hop> fixed=<gid:agent,...> bids=<gid:score:agent,...>
  AUCRESULT <aid> <gid:agent,...>

<hop> is the ring position of the agent that must act on the token.
Everyone else sees the same lines and ignores them, which is what makes
the failure rule work: whoever sent the last token and saw nothing come
back declares the receiver dead and restarts the auction with the
survivors under a bumped auction id.

Scores are integers.  Ties on score go to the smaller agent id, comparing
ids as strings, so a full auction is deterministic given the tables.
"""

from __future__ import annotations

import enum
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .worldgraph import GraphError

MIN_SCORE = -(10**9)

PROBE_BASE_WORTH = 1
REPAIR_WORTH = 10
HUNT_WORTH = 5
# a camp pays its value every step it is held, so travel is cheap by
# comparison; three steps of payback keeps bids from clinging to the
# nearest low vertex while a far rich one goes unclaimed
OCCUPY_HORIZON = 3

_NAME_RE = re.compile(r"^[a-z0-9._-]+$")


class AuctionError(ValueError):
    """Raised for malformed auction lines or impossible auction setups."""


class GoalKind(enum.Enum):
    PROBE = "probe"
    OCCUPY = "occupy"
    REPAIR = "repair"
    HUNT = "hunt"


@dataclass(frozen=True)
class Goal:
    id: str
    kind: GoalKind
    target: int


@dataclass
class AuctionToken:
    auction_id: int
    round: int
    hop: int
    fixed: dict[str, str]
    bids: dict[str, tuple[int, str]]


def _check_name(kind: str, value: str) -> str:
    if not isinstance(value, str) or not _NAME_RE.match(value):
        raise AuctionError("bad %s %r" % (kind, value))
    return value


def _parse_int(kind: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise AuctionError("bad %s %r" % (kind, raw)) from None


class RingTopology:
    """Sorted ring of agent ids with position lookups."""

    def __init__(self, ids: Iterable[str]):
        ordered = sorted(ids)
        if not ordered:
            raise AuctionError("empty ring")
        for agent_id in ordered:
            _check_name("agent id", agent_id)
        if len(set(ordered)) != len(ordered):
            raise AuctionError("duplicate agent id in ring")
        self.ids: tuple[str, ...] = tuple(ordered)
        self._pos = {a: i for i, a in enumerate(ordered)}

    @property
    def size(self) -> int:
        return len(self.ids)

    def position(self, agent_id: str) -> int:
        try:
            return self._pos[agent_id]
        except KeyError:
            raise AuctionError("agent %r not in ring" % agent_id) from None

    def try_position(self, agent_id: str) -> int | None:
        return self._pos.get(agent_id)

    def agent_at(self, pos: int) -> str:
        return self.ids[pos % len(self.ids)]

    def next_position(self, pos: int) -> int:
        return (pos + 1) % len(self.ids)


def goal_worth(graph, goal: Goal) -> int:
    """Flat payoff of a goal before travel cost is subtracted."""
    if goal.kind is GoalKind.PROBE:
        if goal.target in graph.probed:
            return graph.value(goal.target)
        return PROBE_BASE_WORTH
    if goal.kind is GoalKind.OCCUPY:
        return OCCUPY_HORIZON * graph.value(goal.target)
    if goal.kind is GoalKind.REPAIR:
        return REPAIR_WORTH
    return HUNT_WORTH


def score_goals(graph, index, position: int, goals: Sequence[Goal]) -> dict[str, int]:
    """Score every goal as worth minus travel distance from position.

    Unknown or unreachable targets score MIN_SCORE so an agent can still
    bid on them as a last resort without ever preferring them.
    """
    scores: dict[str, int] = {}
    for goal in goals:
        if not graph.has_vertex(goal.target):
            scores[goal.id] = MIN_SCORE
            continue
        try:
            dist = index.distance(position, goal.target)
        except GraphError:
            scores[goal.id] = MIN_SCORE
            continue
        if dist is None:
            scores[goal.id] = MIN_SCORE
        else:
            scores[goal.id] = goal_worth(graph, goal) - dist
    return scores


# --- wire codecs ---


def encode_start(auction_id: int, ring_ids: Sequence[str], goals: Sequence[Goal]) -> str:
    ring = RingTopology(ring_ids)
    if len(goals) < ring.size:
        raise AuctionError(
            "need at least %d goals for %d agents, got %d"
            % (ring.size, ring.size, len(goals))
        )
    seen: set[str] = set()
    parts = []
    for goal in sorted(goals, key=lambda g: g.id):
        _check_name("goal id", goal.id)
        if goal.id in seen:
            raise AuctionError("duplicate goal id %r" % goal.id)
        seen.add(goal.id)
        parts.append("%s:%s:%d" % (goal.id, goal.kind.value, goal.target))
    return "AUCSTART %d ring=%s goals=%s" % (
        auction_id,
        ",".join(ring.ids),
        ",".join(parts),
    )


def decode_start(line: str) -> tuple[int, list[str], list[Goal]]:
    fields = line.split()
    if len(fields) != 4 or fields[0] != "AUCSTART":
        raise AuctionError("bad AUCSTART line %r" % line)
    aid = _parse_int("auction id", fields[1])
    if not fields[2].startswith("ring=") or not fields[3].startswith("goals="):
        raise AuctionError("bad AUCSTART line %r" % line)
    ring_ids = [_check_name("agent id", a) for a in fields[2][5:].split(",") if a]
    if not ring_ids:
        raise AuctionError("empty ring in %r" % line)
    if len(set(ring_ids)) != len(ring_ids):
        raise AuctionError("duplicate agent id in %r" % line)
    goals = []
    raw_goals = fields[3][6:]
    for item in raw_goals.split(",") if raw_goals else []:
        bits = item.split(":")
        if len(bits) != 3:
            raise AuctionError("bad goal %r" % item)
        gid = _check_name("goal id", bits[0])
        try:
            kind = GoalKind(bits[1])
        except ValueError:
            raise AuctionError("bad goal kind %r" % bits[1]) from None
        goals.append(Goal(gid, kind, _parse_int("goal target", bits[2])))
    if len(set(g.id for g in goals)) != len(goals):
        raise AuctionError("duplicate goal id in %r" % line)
    return aid, ring_ids, goals


def encode_token(token: AuctionToken) -> str:
    fixed = ",".join(
        "%s:%s" % (gid, token.fixed[gid]) for gid in sorted(token.fixed)
    )
    bids = ",".join(
        "%s:%d:%s" % (gid, token.bids[gid][0], token.bids[gid][1])
        for gid in sorted(token.bids)
    )
    return "AUC %d %d %d fixed=%s bids=%s" % (
        token.auction_id,
        token.round,
        token.hop,
        fixed,
        bids,
    )


def decode_token(line: str) -> AuctionToken:
    fields = line.split()
    if len(fields) != 6 or fields[0] != "AUC":
        raise AuctionError("bad AUC line %r" % line)
    aid = _parse_int("auction id", fields[1])
    rnd = _parse_int("round", fields[2])
    hop = _parse_int("hop", fields[3])
    if rnd < 1 or hop < 0:
        raise AuctionError("bad round or hop in %r" % line)
    if not fields[4].startswith("fixed=") or not fields[5].startswith("bids="):
        raise AuctionError("bad AUC line %r" % line)
    fixed: dict[str, str] = {}
    raw = fields[4][6:]
    for item in raw.split(",") if raw else []:
        bits = item.split(":")
        if len(bits) != 2:
            raise AuctionError("bad fixed entry %r" % item)
        fixed[_check_name("goal id", bits[0])] = _check_name("agent id", bits[1])
    bids: dict[str, tuple[int, str]] = {}
    raw = fields[5][5:]
    for item in raw.split(",") if raw else []:
        bits = item.split(":")
        if len(bits) != 3:
            raise AuctionError("bad bid entry %r" % item)
        gid = _check_name("goal id", bits[0])
        score = _parse_int("bid score", bits[1])
        bids[gid] = (score, _check_name("agent id", bits[2]))
    overlap = set(fixed) & set(bids)
    if overlap:
        raise AuctionError("goal %r both fixed and bid" % sorted(overlap)[0])
    return AuctionToken(aid, rnd, hop, fixed, bids)


def encode_result(auction_id: int, assignment: dict[str, str]) -> str:
    if not assignment:
        raise AuctionError("empty auction result")
    body = ",".join("%s:%s" % (gid, assignment[gid]) for gid in sorted(assignment))
    return "AUCRESULT %d %s" % (auction_id, body)


def decode_result(line: str) -> tuple[int, dict[str, str]]:
    fields = line.split()
    if len(fields) != 3 or fields[0] != "AUCRESULT":
        raise AuctionError("bad AUCRESULT line %r" % line)
    aid = _parse_int("auction id", fields[1])
    assignment: dict[str, str] = {}
    for item in fields[2].split(","):
        bits = item.split(":")
        if len(bits) != 2:
            raise AuctionError("bad result entry %r" % item)
        assignment[_check_name("goal id", bits[0])] = _check_name("agent id", bits[1])
    return aid, assignment


# --- participant state machine ---


ScoreFn = Callable[[Sequence[Goal]], dict[str, int]]


class AuctionParticipant:
    """One agent's view of the auction, driven line by line.

    Feed it every line published on the team auction topic except the
    agent's own (those are applied internally when emitted).  Outgoing
    lines pile up in the outbox until the caller drains them with
    take_outbox and publishes them.
    """

    def __init__(self, agent_id: str, score_fn: ScoreFn):
        _check_name("agent id", agent_id)
        self.agent_id = agent_id
        self._score_fn = score_fn
        self.auction_id = 0
        self.ring: RingTopology | None = None
        self.goals: list[Goal] = []
        self.done = False
        self.result: dict[str, str] | None = None
        self.assignment: str | None = None
        self._pos: int | None = None
        self._scores: dict[str, int] = {}
        self._table: list[str] = []
        self._fixed: dict[str, str] = {}
        self._round = 0
        self._awaiting: int | None = None
        self._outbox: list[str] = []

    def take_outbox(self) -> list[str]:
        out, self._outbox = self._outbox, []
        return out

    def start(self, auction_id: int, ring_ids: Sequence[str], goals: Sequence[Goal]) -> None:
        """Open a new auction from this agent; it publishes the AUCSTART."""
        line = encode_start(auction_id, ring_ids, goals)
        self._outbox.append(line)
        self._on_start(*decode_start(line))

    def handle_line(self, line: str) -> None:
        if line.startswith("AUCSTART "):
            self._on_start(*decode_start(line))
        elif line.startswith("AUC "):
            self._on_token(decode_token(line))
        elif line.startswith("AUCRESULT "):
            self._on_result(*decode_result(line))
        else:
            raise AuctionError("unknown auction line %r" % line)

    def on_timeout(self) -> None:
        """The token this agent forwarded went unanswered; drop the receiver.

        Only the agent whose send was the last auction traffic reacts, so
        exactly one survivor restarts the auction.
        """
        if self.done or self._awaiting is None or self.ring is None:
            return
        dead = self.ring.agent_at(self._awaiting)
        survivors = [a for a in self.ring.ids if a != dead]
        self.start(self.auction_id + 1, survivors, self.goals)

    # internal transitions

    def _on_start(self, aid: int, ring_ids: list[str], goals: list[Goal]) -> None:
        if aid <= self.auction_id:
            return
        ring = RingTopology(ring_ids)
        if len(goals) < ring.size:
            raise AuctionError(
                "auction %d offers %d goals to %d agents" % (aid, len(goals), ring.size)
            )
        self.auction_id = aid
        self.ring = ring
        self.goals = list(goals)
        self.done = False
        self.result = None
        self.assignment = None
        self._fixed = {}
        self._round = 1
        self._awaiting = None
        self._pos = ring.try_position(self.agent_id)
        if self._pos is None:
            # not in the ring; just watch for the result
            self._scores = {}
            self._table = []
            return
        self._scores = self._score_fn(self.goals)
        self._table = sorted(
            (g.id for g in self.goals),
            key=lambda gid: (-self._scores.get(gid, MIN_SCORE), gid),
        )
        if self._pos == 0:
            bids: dict[str, tuple[int, str]] = {}
            self._place_bid(bids)
            self._send_token(AuctionToken(aid, 1, self.ring.next_position(0), {}, bids))

    def _on_token(self, token: AuctionToken) -> None:
        if token.auction_id != self.auction_id or self.done or self._pos is None:
            return
        self._awaiting = None
        if token.hop != self._pos:
            return
        assert self.ring is not None
        self._round = token.round
        if self._pos == 0:
            self._settle(token)
            return
        self._fixed = dict(token.fixed)
        bids = dict(token.bids)
        self._place_bid(bids)
        self._send_token(
            AuctionToken(
                token.auction_id,
                token.round,
                self.ring.next_position(self._pos),
                token.fixed,
                bids,
            )
        )

    def _settle(self, token: AuctionToken) -> None:
        assert self.ring is not None
        fixed = dict(token.fixed)
        for gid, (_score, agent_id) in token.bids.items():
            fixed[gid] = agent_id
        self._fixed = fixed
        assigned = set(fixed.values())
        if all(a in assigned for a in self.ring.ids):
            self.result = dict(fixed)
            self.done = True
            self.assignment = self._my_goal(fixed)
            self._outbox.append(encode_result(self.auction_id, fixed))
            return
        self._round += 1
        bids: dict[str, tuple[int, str]] = {}
        self._place_bid(bids)
        self._send_token(
            AuctionToken(
                self.auction_id,
                self._round,
                self.ring.next_position(0),
                fixed,
                bids,
            )
        )

    def _on_result(self, aid: int, assignment: dict[str, str]) -> None:
        if aid != self.auction_id:
            return
        self.result = dict(assignment)
        self.done = True
        self._awaiting = None
        self.assignment = self._my_goal(assignment)

    def _my_goal(self, assignment: dict[str, str]) -> str | None:
        for gid, agent_id in assignment.items():
            if agent_id == self.agent_id:
                return gid
        return None

    def _place_bid(self, bids: dict[str, tuple[int, str]]) -> None:
        if self.agent_id in self._fixed.values():
            return
        for gid in self._table:
            if gid in self._fixed:
                continue
            score = self._scores.get(gid, MIN_SCORE)
            incumbent = bids.get(gid)
            if (
                incumbent is None
                or score > incumbent[0]
                or (score == incumbent[0] and self.agent_id < incumbent[1])
            ):
                bids[gid] = (score, self.agent_id)
            return
        raise AuctionError("no open goal left to bid on")

    def _send_token(self, token: AuctionToken) -> None:
        self._outbox.append(encode_token(token))
        self._awaiting = token.hop
        if token.hop == self._pos:
            # single-agent ring: the token comes straight back
            self._on_token(token)


# --- synchronous driver ---


def run_auction(
    score_fns: dict[str, ScoreFn],
    goals: Sequence[Goal],
    *,
    auction_id: int = 1,
    dead: frozenset[str] | set[str] = frozenset(),
    budget: int = 10000,
) -> tuple[dict[str, AuctionParticipant], list[tuple[str, str]]]:
    """Drive a full auction among in-memory participants.

    Dead agents receive nothing and send nothing; the survivors notice the
    stall and restart without them.  Returns the participants plus the
    transcript of (sender, line) pairs for inspection.
    """
    parts = {a: AuctionParticipant(a, fn) for a, fn in score_fns.items()}
    live = [a for a in sorted(parts) if a not in dead]
    if not live:
        raise AuctionError("no live agents")
    ring = sorted(parts)
    initiator = ring[0]
    if initiator in dead:
        raise AuctionError("initiator is dead; caller must pick the ring")
    transcript: list[tuple[str, str]] = []
    pending: deque[tuple[str, str]] = deque()

    parts[initiator].start(auction_id, ring, goals)
    for line in parts[initiator].take_outbox():
        pending.append((initiator, line))

    delivered = 0
    while True:
        while pending:
            sender, line = pending.popleft()
            transcript.append((sender, line))
            delivered += 1
            if delivered > budget:
                raise AuctionError("auction exceeded delivery budget")
            for a in live:
                if a == sender:
                    continue
                parts[a].handle_line(line)
            for a in live:
                for out in parts[a].take_outbox():
                    pending.append((a, out))
        if all(parts[a].done for a in live):
            return parts, transcript
        for a in live:
            parts[a].on_timeout()
        for a in live:
            for out in parts[a].take_outbox():
                pending.append((a, out))
        if not pending:
            raise AuctionError("auction stalled with no recovery")
