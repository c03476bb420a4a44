"""Decentralized agent: belief tracking, goal choice, and team coordination.

Each agent keeps its own picture of the world in a WorldGraph plus a
distance index that is patched incrementally as sightings arrive.  Every
step the agent integrates its simulator percept, publishes what it saw on
the team share topic, and drains the bus until all teammate shares for
the step have arrived.  Because every agent integrates the same set of
sightings, beliefs converge, and the team can agree on auctions without
any central coordinator: whoever has the lowest id among the agents heard
from this step opens the auction, and everyone scores goals against their
own converged belief.

Simulator wire lines (one channel per agent):

  JOIN <agent-id>                 agent -> sim, answered with OK
  PERCEPT <step> <pos> <energy> <health> <role> <result> v=... e=... a=...
  ACT <step> <action>[:<arg>]     agent -> sim
  END <score-a> <score-b>         sim -> agent, closes the match

Percept list syntax, all comma separated and sorted:

  v=<vertex>:<value>    value is ? until somebody probes the vertex
  e=<u>-<v>:<weight>    weight is ? until this agent surveys an endpoint
  a=<id>@<vertex>:<team>:<e|d>   every other agent within one hop

Team share lines repeat the percept lists so teammates can merge them:

  P <step> <sender> v=... e=... a=...
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass

from .auction import (
    MIN_SCORE,
    AuctionError,
    AuctionParticipant,
    Goal,
    GoalKind,
    goal_worth,
    score_goals,
)
from .worldgraph import (
    Edge,
    GraphError,
    Vertex,
    WorldGraph,
    bfs_frontier,
    build_index,
    insert_vertex,
    shortest_path,
    update_edge,
)

SHARE_TOPIC = "team.percepts"
AUCTION_TOPIC = "team.auction"

HUNT_WINDOW = 3
CHASE_WINDOW = 5
# goal scores depend on where everyone stands, so assignments go stale as
# the team moves; refresh them even when no goal has completed
REAUCTION_PERIOD = 5


class PerceptError(ValueError):
    """Raised when a percept, share, or action line does not parse."""


class Role(enum.Enum):
    EXPLORER = "explorer"
    SABOTEUR = "saboteur"


class ActionKind(enum.Enum):
    GOTO = "goto"
    PROBE = "probe"
    SURVEY = "survey"
    ATTACK = "attack"
    PARRY = "parry"
    RECHARGE = "recharge"
    NOOP = "noop"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    target: int | str | None = None


@dataclass(frozen=True)
class ActionCosts:
    """Energy prices and state caps shared by agents and the simulator."""

    probe: int = 1
    survey: int = 1
    attack: int = 2
    parry: int = 2
    recharge_gain: int = 3
    energy_cap: int = 10
    health_cap: int = 3
    attack_damage: int = 1
    disabled_heal: int = 1


def action_to_str(action: Action) -> str:
    if action.target is None:
        return action.kind.value
    return "%s:%s" % (action.kind.value, action.target)


def parse_action(text: str) -> Action:
    name, sep, arg = text.partition(":")
    try:
        kind = ActionKind(name)
    except ValueError:
        raise PerceptError("unknown action %r" % name) from None
    if not sep:
        if kind in (ActionKind.GOTO, ActionKind.ATTACK):
            raise PerceptError("action %s needs a target" % kind.value)
        return Action(kind)
    if kind is ActionKind.GOTO:
        try:
            return Action(kind, int(arg))
        except ValueError:
            raise PerceptError("bad goto target %r" % arg) from None
    if kind is ActionKind.ATTACK:
        if not arg:
            raise PerceptError("attack needs a target agent")
        return Action(kind, arg)
    raise PerceptError("action %s takes no target" % kind.value)


@dataclass(frozen=True)
class Percept:
    step: int
    position: int
    energy: int
    health: int
    role: Role
    result: str
    vertices: tuple[tuple[int, int | None], ...]
    edges: tuple[tuple[int, int, int | None], ...]
    agents: tuple[tuple[str, int, str, bool], ...]


@dataclass(frozen=True)
class Share:
    step: int
    sender: str
    vertices: tuple[tuple[int, int | None], ...]
    edges: tuple[tuple[int, int, int | None], ...]
    agents: tuple[tuple[str, int, str, bool], ...]


def _encode_vertices(vertices) -> str:
    items = sorted(vertices)
    return ",".join(
        "%d:%s" % (vid, "?" if val is None else val) for vid, val in items
    )


def _encode_edges(edges) -> str:
    normal = sorted((min(u, v), max(u, v), w) for u, v, w in edges)
    return ",".join(
        "%d-%d:%s" % (u, v, "?" if w is None else w) for u, v, w in normal
    )


def _encode_agents(agents) -> str:
    items = sorted(agents)
    return ",".join(
        "%s@%d:%s:%s" % (aid, vertex, team, "d" if disabled else "e")
        for aid, vertex, team, disabled in items
    )


def _parse_int(kind: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise PerceptError("bad %s %r" % (kind, raw)) from None


def _decode_vertices(raw: str):
    out = []
    for item in raw.split(",") if raw else []:
        vid, sep, val = item.partition(":")
        if not sep:
            raise PerceptError("bad vertex entry %r" % item)
        out.append(
            (_parse_int("vertex id", vid), None if val == "?" else _parse_int("vertex value", val))
        )
    return tuple(out)


def _decode_edges(raw: str):
    out = []
    for item in raw.split(",") if raw else []:
        ends, sep, w = item.partition(":")
        u, sep2, v = ends.partition("-")
        if not sep or not sep2:
            raise PerceptError("bad edge entry %r" % item)
        out.append(
            (
                _parse_int("edge endpoint", u),
                _parse_int("edge endpoint", v),
                None if w == "?" else _parse_int("edge weight", w),
            )
        )
    return tuple(out)


def _decode_agents(raw: str):
    out = []
    for item in raw.split(",") if raw else []:
        head, sep, tail = item.partition("@")
        if not sep:
            raise PerceptError("bad agent entry %r" % item)
        bits = tail.split(":")
        if len(bits) != 3 or bits[2] not in ("e", "d"):
            raise PerceptError("bad agent entry %r" % item)
        out.append((head, _parse_int("agent vertex", bits[0]), bits[1], bits[2] == "d"))
    return tuple(out)


def _split_lists(fields: list[str], line: str) -> tuple[str, str, str]:
    if (
        len(fields) != 3
        or not fields[0].startswith("v=")
        or not fields[1].startswith("e=")
        or not fields[2].startswith("a=")
    ):
        raise PerceptError("bad percept lists in %r" % line)
    return fields[0][2:], fields[1][2:], fields[2][2:]


def encode_percept(p: Percept) -> str:
    return "PERCEPT %d %d %d %d %s %s v=%s e=%s a=%s" % (
        p.step,
        p.position,
        p.energy,
        p.health,
        p.role.value,
        p.result,
        _encode_vertices(p.vertices),
        _encode_edges(p.edges),
        _encode_agents(p.agents),
    )


def decode_percept(line: str) -> Percept:
    fields = line.split()
    if len(fields) != 10 or fields[0] != "PERCEPT":
        raise PerceptError("bad PERCEPT line %r" % line)
    try:
        role = Role(fields[5])
    except ValueError:
        raise PerceptError("bad role %r" % fields[5]) from None
    if fields[6] not in ("ok", "failed", "none"):
        raise PerceptError("bad result %r" % fields[6])
    v_raw, e_raw, a_raw = _split_lists(fields[7:], line)
    return Percept(
        step=_parse_int("step", fields[1]),
        position=_parse_int("position", fields[2]),
        energy=_parse_int("energy", fields[3]),
        health=_parse_int("health", fields[4]),
        role=role,
        result=fields[6],
        vertices=_decode_vertices(v_raw),
        edges=_decode_edges(e_raw),
        agents=_decode_agents(a_raw),
    )


def encode_share(step: int, sender: str, p: Percept) -> str:
    return "P %d %s v=%s e=%s a=%s" % (
        step,
        sender,
        _encode_vertices(p.vertices),
        _encode_edges(p.edges),
        _encode_agents(p.agents),
    )


def decode_share(line: str) -> Share:
    fields = line.split()
    if len(fields) != 6 or fields[0] != "P":
        raise PerceptError("bad share line %r" % line)
    v_raw, e_raw, a_raw = _split_lists(fields[3:], line)
    return Share(
        step=_parse_int("step", fields[1]),
        sender=fields[2],
        vertices=_decode_vertices(v_raw),
        edges=_decode_edges(e_raw),
        agents=_decode_agents(a_raw),
    )


@dataclass
class Sighting:
    agent_id: str
    vertex: int
    team: str
    disabled: bool
    step: int


class Belief:
    """One agent's merged view of the world and everybody in it."""

    def __init__(self, agent_id: str, team: str, role: Role):
        self.agent_id = agent_id
        self.team = team
        self.role = role
        self.graph = WorldGraph()
        self.index = build_index(self.graph)
        self.position: int | None = None
        self.energy = 0
        self.health = 0
        self.step = 0
        self.last_result = "none"
        self.seen: dict[str, Sighting] = {}
        self.known_saboteurs: set[str] = set()
        self.attacked_at: int | None = None
        self.share_steps: dict[str, int] = {}
        self.stale_dropped = 0
        self.decode_errors = 0
        self.value_conflicts = 0
        self._prev_health: int | None = None
        self._prev_position: int | None = None
        self._prev_agents: tuple = ()

    def integrate_percept(self, p: Percept) -> None:
        old_pos = self.position
        old_health = self._prev_health
        self.step = p.step
        self.position = p.position
        self.energy = p.energy
        self.health = p.health
        self.last_result = p.result
        self.merge_lists(p.vertices, p.edges, p.agents, p.step)
        if old_health is not None and p.health < old_health:
            self.attacked_at = p.step
            self._mark_attackers(p, old_pos)
        self._prev_health = p.health
        self._prev_position = p.position
        self._prev_agents = p.agents

    def integrate_share(self, s: Share) -> bool:
        if s.step <= self.share_steps.get(s.sender, 0):
            self.stale_dropped += 1
            return False
        self.share_steps[s.sender] = s.step
        self.merge_lists(s.vertices, s.edges, s.agents, s.step)
        return True

    def merge_lists(self, vertices, edges, agents, step: int) -> None:
        for vid, value in sorted(vertices):
            self._ensure_vertex(vid)
            if value is not None:
                self._note_value(vid, value)
        for u, v, w in sorted((min(a, b), max(a, b), w) for a, b, w in edges):
            self._ensure_vertex(u)
            self._ensure_vertex(v)
            if w is None:
                if not self.graph.has_edge(u, v):
                    self.graph.add_pending_edge(u, v)
                continue
            try:
                update_edge(self.index, self.graph, Edge(u, v, w))
            except GraphError:
                self.value_conflicts += 1
        for aid, vertex, team, disabled in agents:
            if aid == self.agent_id:
                continue
            cur = self.seen.get(aid)
            if cur is None or step >= cur.step:
                self.seen[aid] = Sighting(aid, vertex, team, disabled, step)

    def enemies(self):
        return [s for s in self.seen.values() if s.team != self.team]

    def _ensure_vertex(self, vid: int) -> None:
        if not self.graph.has_vertex(vid):
            insert_vertex(self.index, self.graph, Vertex(vid, 0), [])

    def _note_value(self, vid: int, value: int) -> None:
        try:
            self.graph.mark_probed(vid, value)
        except GraphError:
            self.value_conflicts += 1

    def _mark_attackers(self, p: Percept, old_pos: int | None) -> None:
        for aid, vertex, team, disabled in p.agents:
            if team != self.team and vertex == p.position and not disabled:
                self.known_saboteurs.add(aid)
        for aid, vertex, team, disabled in self._prev_agents:
            if team != self.team and vertex == old_pos:
                self.known_saboteurs.add(aid)


def _camps_connected(graph) -> bool:
    """True once every vertex worth camping on is reachable from the rest
    over surveyed edges.  Auction distances mean nothing for a camp that
    only hangs off unweighted edges, so occupation waits for this."""
    valuable = [v for v in graph.probed if graph.value(v) >= 1]
    if len(valuable) < 2:
        return True
    todo = [valuable[0]]
    seen = {valuable[0]}
    while todo:
        u = todo.pop()
        for v in graph.neighbors(u):
            if v not in seen:
                seen.add(v)
                todo.append(v)
    return all(v in seen for v in valuable)


def _pending_at(graph, vid: int) -> bool:
    return any(vid in e for e in graph.pending_edges)


def goal_complete(belief: Belief, goal: Goal) -> bool:
    if goal.kind is GoalKind.PROBE:
        # the job covers the whole vertex: value confirmed and every
        # incident edge weighted, so routes through it can be trusted
        return goal.target in belief.graph.probed and not _pending_at(
            belief.graph, goal.target
        )
    if goal.kind is GoalKind.OCCUPY:
        # occupation only ends while the map is still open: a vertex left
        # to probe, or a camp the surveyed edges cannot reach yet.  Waiting
        # for every last edge instead would burn the whole match surveying
        # corners nobody will ever camp on.
        if any(v not in belief.graph.probed for v in belief.graph.vertex_ids()):
            return True
        return not _camps_connected(belief.graph)
    if goal.kind is GoalKind.HUNT:
        for s in belief.enemies():
            if (
                s.vertex == goal.target
                and not s.disabled
                and belief.step - s.step <= HUNT_WINDOW
            ):
                return False
        return True
    # repair: done once no disabled teammate is reported there
    for s in belief.seen.values():
        if s.team == belief.team and s.vertex == goal.target and s.disabled:
            return False
    return True


def generate_goals(belief: Belief, count: int, team_has_saboteur: bool) -> list[Goal]:
    """Build the goal pool for an auction over count agents.

    Probing dominates until every known vertex is valued and its edges
    weighted, then the team settles on the most valuable vertices.  Hunt
    goals appear only for teams that can actually fight back.  The pool is
    padded with filler occupation so it always offers at least count goals.
    """
    goals: list[Goal] = []
    open_probe = sorted(
        v
        for v in belief.graph.vertex_ids()
        if v not in belief.graph.probed or _pending_at(belief.graph, v)
    )
    for v in open_probe:
        goals.append(Goal("p%d" % v, GoalKind.PROBE, v))
    if team_has_saboteur:
        targets = sorted(
            {
                s.vertex
                for s in belief.enemies()
                if not s.disabled and belief.step - s.step <= HUNT_WINDOW
            }
        )
        for v in targets:
            goals.append(Goal("h%d" % v, GoalKind.HUNT, v))
    if not open_probe:
        for v in sorted(belief.graph.probed, key=lambda v: (-belief.graph.value(v), v)):
            if belief.graph.value(v) >= 1:
                goals.append(Goal("o%d" % v, GoalKind.OCCUPY, v))
    ranked = sorted(
        belief.graph.vertex_ids(), key=lambda v: (-belief.graph.value(v), v)
    )
    filler = 0
    while len(goals) < count and ranked:
        v = ranked[filler % len(ranked)]
        goals.append(Goal("x%d.%d" % (filler, v), GoalKind.OCCUPY, v))
        filler += 1
    return goals


def besieged_vertices(belief: Belief) -> set[int]:
    """Vertices a live enemy saboteur was recently seen standing on.

    A camp under siege yields roughly half its income: the attacker lands
    a hit on every step the defender spends recharging.  Scoring such camps
    at half worth makes the next refresh move the victim to any free vertex
    that pays better, instead of feeding the attacker a standing target.
    """
    return {
        s.vertex
        for s in belief.enemies()
        if s.agent_id in belief.known_saboteurs
        and not s.disabled
        and belief.step - s.step <= HUNT_WINDOW
    }


def _known_saboteur_here(belief: Belief) -> bool:
    return any(
        s.agent_id in belief.known_saboteurs
        and not s.disabled
        and s.vertex == belief.position
        and s.step == belief.step
        for s in belief.enemies()
    )


def parry_policy(belief: Belief, holding_camp: bool = False) -> bool:
    """Parry a co-located saboteur, but only while holding a camp.

    A camped agent earns its vertex income whatever action it takes, so
    blocking there is free and every block wastes the attacker's step.
    Anywhere else a standing parry costs a step of real work, while the
    hit it would block costs almost nothing: health has no effect until
    it runs out, and a disabled agent is back up within a couple of
    recharges.  On the move it is better to take the hit and keep going.
    """
    if belief.position is None or not holding_camp:
        return False
    return _known_saboteur_here(belief)


def _goto_or_recharge(belief: Belief, target: int) -> Action:
    act = _toward(belief, target)
    return act if act is not None else Action(ActionKind.RECHARGE)


def _toward(belief: Belief, target: int) -> Action | None:
    """One hop toward target, or recharge to afford it. None: no known route."""
    if not belief.graph.has_vertex(target) or target not in belief.index:
        return None
    hit = shortest_path(belief.index, belief.position, target)
    if hit is None:
        return None
    path, _cost = hit
    if len(path) < 2:
        return None
    step_cost = belief.graph.weight(belief.position, path[1])
    if belief.energy < step_cost:
        return Action(ActionKind.RECHARGE)
    return Action(ActionKind.GOTO, path[1])


def _co_located_enemies(belief: Belief) -> list[Sighting]:
    return sorted(
        (
            s
            for s in belief.enemies()
            if s.vertex == belief.position
            and not s.disabled
            and belief.step - s.step == 0
        ),
        key=lambda s: s.agent_id,
    )


def _frontier_action(belief: Belief, costs: ActionCosts) -> Action | None:
    target = bfs_frontier(belief.graph, belief.position)
    if target is None:
        return None
    if target == belief.position:
        if belief.position not in belief.graph.probed:
            if belief.energy < costs.probe:
                return Action(ActionKind.RECHARGE)
            return Action(ActionKind.PROBE)
        if belief.energy < costs.survey:
            return Action(ActionKind.RECHARGE)
        return Action(ActionKind.SURVEY)
    return _goto_or_recharge(belief, target)


def decide(
    belief: Belief,
    goal: Goal | None,
    parry_enabled: bool = True,
    costs: ActionCosts = ActionCosts(),
) -> Action:
    """Pick this step's action from the belief and the assigned goal."""
    if belief.position is None:
        return Action(ActionKind.RECHARGE)
    if belief.health <= 0:
        return Action(ActionKind.RECHARGE)
    holding_camp = (
        goal is not None
        and goal.kind is GoalKind.OCCUPY
        and belief.position == goal.target
        and not goal_complete(belief, goal)
    )
    if parry_enabled and parry_policy(belief, holding_camp):
        if belief.energy >= costs.parry:
            return Action(ActionKind.PARRY)
        return Action(ActionKind.RECHARGE)
    if belief.role is Role.SABOTEUR:
        # a foe in reach outranks whatever the auction handed us
        foes = _co_located_enemies(belief)
        if foes:
            if belief.energy < costs.attack:
                return Action(ActionKind.RECHARGE)
            return Action(ActionKind.ATTACK, foes[0].agent_id)

    if goal is not None and not goal_complete(belief, goal):
        if belief.position == goal.target:
            act = _on_goal_vertex(belief, goal, costs)
            if act is not None:
                return act
        else:
            act = _toward(belief, goal.target)
            if act is not None:
                return act
            # no route to the goal is known yet: explore instead of idling

    if belief.role is Role.SABOTEUR:
        act = _saboteur_fallback(belief)
        if act is not None:
            return act
    act = _frontier_action(belief, costs)
    if act is not None:
        return act
    return Action(ActionKind.RECHARGE)


def _on_goal_vertex(belief: Belief, goal: Goal, costs: ActionCosts) -> Action | None:
    if goal.kind is GoalKind.PROBE:
        if belief.position not in belief.graph.probed:
            if belief.energy < costs.probe:
                return Action(ActionKind.RECHARGE)
            return Action(ActionKind.PROBE)
        if _pending_at(belief.graph, belief.position):
            if belief.energy < costs.survey:
                return Action(ActionKind.RECHARGE)
            return Action(ActionKind.SURVEY)
        return None
    if goal.kind is GoalKind.OCCUPY:
        # camping is presence, not idling: income flows whatever we do,
        # so spend the hold surveying any unweighted edge under our feet.
        # The weights it reveals feed the next refresh a truer distance
        # table, which is what walks the team out of near-sighted camps.
        if _pending_at(belief.graph, belief.position):
            if belief.energy < costs.survey:
                return Action(ActionKind.RECHARGE)
            return Action(ActionKind.SURVEY)
        return Action(ActionKind.RECHARGE)
    if goal.kind is GoalKind.HUNT:
        # saboteurs never reach here with a foe present; an explorer on a
        # hunt vertex just keeps watch
        if not _co_located_enemies(belief):
            return None
        return Action(ActionKind.RECHARGE)
    return Action(ActionKind.RECHARGE)


def _saboteur_fallback(belief: Belief) -> Action | None:
    best: tuple[int, int] | None = None
    for s in belief.enemies():
        if s.disabled or belief.step - s.step > CHASE_WINDOW:
            continue
        if not belief.graph.has_vertex(s.vertex):
            continue
        try:
            dist = belief.index.distance(belief.position, s.vertex)
        except GraphError:
            continue
        if dist is None or dist == 0:
            continue
        if best is None or (dist, s.vertex) < best:
            best = (dist, s.vertex)
    if best is not None:
        return _goto_or_recharge(belief, best[1])
    return None


class Agent:
    """Runs the full per-step protocol against a simulator channel."""

    def __init__(
        self,
        agent_id: str,
        team: str,
        role: Role,
        roster: list[str],
        bus,
        *,
        parry_enabled: bool = True,
        noop: bool = False,
        team_has_saboteur: bool = False,
        step_timeout: float = 5.0,
        costs: ActionCosts = ActionCosts(),
    ):
        self.agent_id = agent_id
        self.team = team
        self.roster = sorted(set(roster) | {agent_id})
        self.bus = bus
        self.parry_enabled = parry_enabled
        self.noop = noop
        self.team_has_saboteur = team_has_saboteur
        self.step_timeout = step_timeout
        self.costs = costs
        self.belief = Belief(agent_id, team, role)
        self.participant = AuctionParticipant(agent_id, self._score)
        self.goal: Goal | None = None
        self._share_senders: set[str] = set()
        self._shares_missing: set[str] = set()
        self._auction_stash: list[str] = []
        self._future_shares: list[Share] = []
        self._auction_checked = False
        self._waiting_auction = False
        self._target_aid = 0
        self._result_aid = 0
        self._result_step = 0
        if self.bus is not None and not self.noop:
            self.bus.subscribe(SHARE_TOPIC)
            self.bus.subscribe(AUCTION_TOPIC)

    # protocol steps

    def on_percept(self, p: Percept) -> None:
        self.belief.integrate_percept(p)
        self._share_senders = {self.agent_id}
        self._shares_missing = set(self.roster) - {self.agent_id}
        self._auction_checked = False
        self._waiting_auction = False
        if self.bus is not None and not self.noop:
            self.bus.publish(SHARE_TOPIC, encode_share(p.step, self.agent_id, p).encode())
        kept = []
        for share in self._future_shares:
            if share.step == p.step:
                self._absorb_share(share)
            elif share.step > p.step:
                kept.append(share)
        self._future_shares = kept

    def drain(self, deadline: float) -> None:
        if self.bus is None or self.noop:
            return
        while True:
            if not self._shares_missing:
                if not self._auction_checked:
                    self._evaluate_auction()
                self._flush_stash()
                if not self._waiting_auction or self._auction_settled():
                    self._adopt_result()
                    return
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._on_deadline()
                return
            env = self.bus.next_message(remaining)
            if env is None:
                continue
            self._dispatch(env)

    def choose_action(self) -> Action:
        if self.noop:
            return Action(ActionKind.NOOP)
        return decide(self.belief, self.goal, self.parry_enabled, self.costs)

    def step_line(self, line: str) -> str:
        percept = decode_percept(line)
        self.on_percept(percept)
        self.drain(time.monotonic() + self.step_timeout)
        action = self.choose_action()
        return "ACT %d %s" % (percept.step, action_to_str(action))

    def run(self, channel) -> None:
        """Drive the whole match: JOIN handshake, then one ACT per PERCEPT."""
        channel.send_line("JOIN %s" % self.agent_id)
        reply = channel.recv_line()
        if reply != "OK":
            raise PerceptError("join rejected: %r" % reply)
        while True:
            line = channel.recv_line()
            if line is None or line.startswith("END"):
                break
            if not line.startswith("PERCEPT "):
                continue
            channel.send_line(self.step_line(line))
        if self.bus is not None and not self.noop:
            self.bus.close()
        close = getattr(channel, "close", None)
        if close is not None:
            close()

    # internals

    def _score(self, goals) -> dict[str, int]:
        scores = score_goals(
            self.belief.graph, self.belief.index, self.belief.position, goals
        )
        hot = besieged_vertices(self.belief)
        if hot:
            for g in goals:
                if (
                    g.kind is GoalKind.OCCUPY
                    and g.target in hot
                    and scores[g.id] != MIN_SCORE
                ):
                    scores[g.id] -= (goal_worth(self.belief.graph, g) + 1) // 2
        return scores

    def _dispatch(self, env) -> None:
        if env.sender == self.agent_id:
            return
        try:
            text = env.payload.decode()
        except UnicodeDecodeError:
            self.belief.decode_errors += 1
            return
        if env.topic == SHARE_TOPIC:
            try:
                share = decode_share(text)
            except PerceptError:
                self.belief.decode_errors += 1
                return
            if share.step == self.belief.step:
                self._absorb_share(share)
            elif share.step > self.belief.step:
                self._future_shares.append(share)
            else:
                self.belief.stale_dropped += 1
        elif env.topic == AUCTION_TOPIC:
            if self._shares_missing:
                self._auction_stash.append(text)
            else:
                self._feed_auction(text)

    def _absorb_share(self, share: Share) -> None:
        if self.belief.integrate_share(share):
            self._share_senders.add(share.sender)
            self._shares_missing.discard(share.sender)

    def _feed_auction(self, text: str) -> None:
        try:
            self.participant.handle_line(text)
        except AuctionError:
            self.belief.decode_errors += 1
            return
        self._publish_outbox()

    def _flush_stash(self) -> None:
        stash, self._auction_stash = self._auction_stash, []
        for text in stash:
            self._feed_auction(text)

    def _publish_outbox(self) -> None:
        for line in self.participant.take_outbox():
            self.bus.publish(AUCTION_TOPIC, line.encode())

    def _auction_settled(self) -> bool:
        return self.participant.done and self.participant.auction_id >= self._target_aid

    def _evaluate_auction(self) -> None:
        self._auction_checked = True
        if not self.participant.done and self.participant.auction_id > 0:
            # an auction from an earlier step is still open
            self._waiting_auction = True
            self._target_aid = self.participant.auction_id
            return
        if not self._expect_auction():
            self._waiting_auction = False
            return
        # every teammate reaches the same verdict from its own converged
        # belief, so they all wait for the same auction id
        self._waiting_auction = True
        self._target_aid = self.participant.auction_id + 1
        ring = sorted(self._share_senders)
        if ring[0] == self.agent_id:
            goals = generate_goals(self.belief, len(ring), self.team_has_saboteur)
            self.participant.start(self._target_aid, ring, goals)
            self._publish_outbox()

    def _expect_auction(self) -> bool:
        if self.participant.result is None:
            return True
        assigned = set(self.participant.result.values())
        if any(a not in assigned for a in self._share_senders):
            return True
        if self.belief.step - self._result_step >= REAUCTION_PERIOD:
            return True
        by_id = {g.id: g for g in self.participant.goals}
        for gid in self.participant.result:
            g = by_id.get(gid)
            if g is not None and goal_complete(self.belief, g):
                return True
        return False

    def _adopt_result(self) -> None:
        if not self.participant.done:
            return
        if self.participant.auction_id != self._result_aid:
            # teammates settle each auction during the same step, so this
            # stamp matches across the team and keeps refreshes in lockstep
            self._result_aid = self.participant.auction_id
            self._result_step = self.belief.step
        gid = self.participant.assignment
        if gid is None:
            self.goal = None
            return
        for g in self.participant.goals:
            if g.id == gid:
                self.goal = g
                return
        self.goal = None

    def _on_deadline(self) -> None:
        # teammates went quiet; recover what we can and act anyway
        if self._shares_missing:
            self._shares_missing = set()
            if not self._auction_checked:
                self._evaluate_auction()
            self._flush_stash()
        if self._waiting_auction and not self.participant.done:
            self.participant.on_timeout()
            self._publish_outbox()
        self._adopt_result()
