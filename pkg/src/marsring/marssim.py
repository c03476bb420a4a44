"""Contest simulator: seeded worlds, lockstep resolution, and replays.

The engine holds the true graph and all agent states.  Each step it sends
every live agent a percept, waits for their ACT replies (advancing early
once everyone answered), then resolves the batch in one deterministic
pass: parries first, then attacks, moves, probes, surveys, recharges, and
finally occupation income.  Because resolution only looks at the batch
and sorted agent ids, arrival order never changes the outcome.

Scoring: probing an unprobed vertex pays its value to the prober's team
once (lowest agent id wins a same-step race), and every step each team
earns the value of every vertex that was already probed at the start of
the step and holds at least one of its non-disabled agents.

Replays capture the seed, the graph, the roster, and one line per step
with every action and the running score, so a match can be re-scored and
checked line by line later.
"""

from __future__ import annotations

import queue
import random
import socket
import threading
import time
from dataclasses import dataclass, field

from .agentcore import (
    Action,
    ActionCosts,
    ActionKind,
    Percept,
    PerceptError,
    Role,
    action_to_str,
    encode_percept,
    parse_action,
)
from .worldgraph import (
    GraphError,
    WorldGraph,
    format_graph_text,
    parse_graph_text,
)


class ReplayError(ValueError):
    """Raised when a replay file is malformed or inconsistent."""


class ChannelClosed(Exception):
    """Raised when writing to a channel whose peer is gone."""


@dataclass(frozen=True)
class WorldParams:
    vertices: int = 12
    density: float = 0.25
    weight_min: int = 1
    weight_max: int = 10
    value_min: int = 0
    value_max: int = 10


@dataclass(frozen=True)
class AgentSpec:
    agent_id: str
    role: Role
    noop: bool = False


@dataclass(frozen=True)
class TeamSpec:
    name: str
    agents: tuple[AgentSpec, ...]
    parry: bool = True


@dataclass
class MatchConfig:
    steps: int
    seed: int
    teams: tuple[TeamSpec, TeamSpec]
    step_duration: float = 1.0
    world: WorldParams | None = None
    graph: WorldGraph | None = None


@dataclass
class AgentState:
    agent_id: str
    team: str
    role: Role
    position: int
    energy: int
    health: int
    start_position: int
    last_result: str = "none"
    revealed: bool = False

    @property
    def disabled(self) -> bool:
        return self.health <= 0


@dataclass(frozen=True)
class StepRecord:
    step: int
    actions: dict[str, str]
    score_a: int
    score_b: int


@dataclass
class MatchResult:
    seed: int
    steps: int
    world: WorldParams | None
    graph: WorldGraph
    team_names: tuple[str, str]
    roster: list[tuple[str, int, Role, int]]
    records: list[StepRecord] = field(default_factory=list)

    @property
    def scores(self) -> tuple[int, int]:
        if not self.records:
            return (0, 0)
        last = self.records[-1]
        return (last.score_a, last.score_b)


def generate_world(params: WorldParams, seed: int) -> WorldGraph:
    """Random connected world: a spanning tree plus density-scaled extras."""
    if params.vertices < 1:
        raise GraphError("world needs at least one vertex")
    rng = random.Random("world:%d" % seed)
    g = WorldGraph()
    for vid in range(params.vertices):
        g.add_vertex(vid, rng.randint(params.value_min, params.value_max))
    order = list(range(params.vertices))
    rng.shuffle(order)
    tree: set[tuple[int, int]] = set()
    for i in range(1, params.vertices):
        u, v = order[i], order[rng.randrange(i)]
        g.set_edge(u, v, rng.randint(params.weight_min, params.weight_max))
        tree.add((min(u, v), max(u, v)))
    remaining = [
        (u, v)
        for u in range(params.vertices)
        for v in range(u + 1, params.vertices)
        if (u, v) not in tree
    ]
    extra = min(int(params.density * len(remaining)), len(remaining))
    for u, v in rng.sample(remaining, extra) if extra > 0 else []:
        g.set_edge(u, v, rng.randint(params.weight_min, params.weight_max))
    return g


def place_agents(config: MatchConfig, graph: WorldGraph) -> dict[str, int]:
    """Seeded start vertex per agent, in team then roster order."""
    rng = random.Random("placement:%d" % config.seed)
    verts = sorted(graph.vertex_ids())
    spots: dict[str, int] = {}
    for team in config.teams:
        for spec in team.agents:
            if spec.agent_id in spots:
                raise GraphError("duplicate agent id %r" % spec.agent_id)
            spots[spec.agent_id] = verts[rng.randrange(len(verts))]
    return spots


class MatchEngine:
    """Authoritative match state plus the one-pass step resolver."""

    def __init__(
        self,
        graph: WorldGraph,
        teams: tuple[TeamSpec, TeamSpec],
        placements: dict[str, int],
        costs: ActionCosts = ActionCosts(),
    ):
        self.graph = graph
        self.teams = teams
        self.costs = costs
        self.step = 0
        self.scores: dict[str, int] = {teams[0].name: 0, teams[1].name: 0}
        self.agents: dict[str, AgentState] = {}
        for team in teams:
            for spec in team.agents:
                pos = placements[spec.agent_id]
                if not graph.has_vertex(pos):
                    raise GraphError("start vertex %d not in world" % pos)
                self.agents[spec.agent_id] = AgentState(
                    agent_id=spec.agent_id,
                    team=team.name,
                    role=spec.role,
                    position=pos,
                    energy=costs.energy_cap,
                    health=costs.health_cap,
                    start_position=pos,
                )

    def build_percept(self, agent_id: str) -> Percept:
        state = self.agents[agent_id]
        visible = {state.position} | set(self.graph.neighbors(state.position))
        vertices = tuple(
            (v, self.graph.value(v) if v in self.graph.probed else None)
            for v in sorted(visible)
        )
        edges = tuple(
            (
                min(state.position, n),
                max(state.position, n),
                self.graph.weight(state.position, n) if state.revealed else None,
            )
            for n in sorted(self.graph.neighbors(state.position))
        )
        others = tuple(
            (s.agent_id, s.position, s.team, s.disabled)
            for s in sorted(self.agents.values(), key=lambda s: s.agent_id)
            if s.agent_id != agent_id and s.position in visible
        )
        return Percept(
            step=self.step + 1,
            position=state.position,
            energy=state.energy,
            health=state.health,
            role=state.role,
            result=state.last_result,
            vertices=vertices,
            edges=tuple(sorted(edges)),
            agents=others,
        )

    def resolve_step(self, actions: dict[str, Action]) -> StepRecord:
        costs = self.costs
        probed_at_start = set(self.graph.probed)
        acting: dict[str, Action] = {}
        results: dict[str, str] = {}
        for aid in sorted(self.agents):
            state = self.agents[aid]
            state.revealed = False
            act = actions.get(aid)
            if act is None:
                acting[aid] = Action(ActionKind.NOOP)
                results[aid] = "failed"
                continue
            if state.disabled and act.kind not in (ActionKind.RECHARGE, ActionKind.NOOP):
                acting[aid] = Action(ActionKind.NOOP)
                results[aid] = "failed"
                continue
            acting[aid] = act

        parrying: set[str] = set()
        for aid in sorted(acting):
            if acting[aid].kind is not ActionKind.PARRY:
                continue
            state = self.agents[aid]
            if state.energy < costs.parry:
                results[aid] = "failed"
                continue
            state.energy -= costs.parry
            parrying.add(aid)
            results[aid] = "ok"

        for aid in sorted(acting):
            act = acting[aid]
            if act.kind is not ActionKind.ATTACK:
                continue
            state = self.agents[aid]
            target = self.agents.get(act.target)
            if (
                target is None
                or target.position != state.position
                or state.energy < costs.attack
            ):
                results[aid] = "failed"
                continue
            state.energy -= costs.attack
            results[aid] = "ok"
            if act.target not in parrying:
                target.health = max(0, target.health - costs.attack_damage)

        for aid in sorted(acting):
            act = acting[aid]
            if act.kind is not ActionKind.GOTO:
                continue
            state = self.agents[aid]
            if not self.graph.has_edge(state.position, act.target):
                results[aid] = "failed"
                continue
            w = self.graph.weight(state.position, act.target)
            if state.energy < w:
                results[aid] = "failed"
                continue
            state.energy -= w
            state.position = act.target
            results[aid] = "ok"

        for aid in sorted(acting):
            if acting[aid].kind is not ActionKind.PROBE:
                continue
            state = self.agents[aid]
            if state.energy < costs.probe:
                results[aid] = "failed"
                continue
            state.energy -= costs.probe
            results[aid] = "ok"
            if state.position not in self.graph.probed:
                value = self.graph.value(state.position)
                self.graph.mark_probed(state.position, value)
                self.scores[state.team] += value

        for aid in sorted(acting):
            if acting[aid].kind is not ActionKind.SURVEY:
                continue
            state = self.agents[aid]
            if state.energy < costs.survey:
                results[aid] = "failed"
                continue
            state.energy -= costs.survey
            state.revealed = True
            results[aid] = "ok"

        for aid in sorted(acting):
            if acting[aid].kind is not ActionKind.RECHARGE:
                continue
            state = self.agents[aid]
            if state.disabled:
                state.health = min(costs.health_cap, state.health + costs.disabled_heal)
            else:
                state.energy = min(costs.energy_cap, state.energy + costs.recharge_gain)
            results[aid] = "ok"

        for team in self.teams:
            held = {
                s.position
                for s in self.agents.values()
                if s.team == team.name and not s.disabled
            }
            self.scores[team.name] += sum(
                self.graph.value(v) for v in probed_at_start if v in held
            )

        self.step += 1
        for aid, state in self.agents.items():
            state.last_result = results.get(aid, "ok")
        return StepRecord(
            step=self.step,
            actions={aid: action_to_str(acting[aid]) for aid in sorted(acting)},
            score_a=self.scores[self.teams[0].name],
            score_b=self.scores[self.teams[1].name],
        )


def setup_match(config: MatchConfig, costs: ActionCosts = ActionCosts()):
    """Build the engine and the result shell from a match config."""
    if (config.graph is None) == (config.world is None):
        raise GraphError("config needs exactly one of graph or world params")
    if config.graph is not None:
        graph = config.graph.copy()
    else:
        graph = generate_world(config.world, config.seed)
    placements = place_agents(config, graph)
    engine = MatchEngine(graph, config.teams, placements, costs)
    roster = []
    for idx, team in enumerate(config.teams):
        for spec in team.agents:
            roster.append((spec.agent_id, idx, spec.role, placements[spec.agent_id]))
    result = MatchResult(
        seed=config.seed,
        steps=config.steps,
        world=config.world,
        graph=graph,
        team_names=(config.teams[0].name, config.teams[1].name),
        roster=roster,
    )
    return engine, result


# --- channels ---


class LocalChannel:
    """One end of an in-process line pipe."""

    def __init__(self, inbox: queue.SimpleQueue, outbox: queue.SimpleQueue):
        self._in = inbox
        self._out = outbox
        self._closed = False

    def send_line(self, line: str) -> None:
        if self._closed:
            raise ChannelClosed("channel is closed")
        self._out.put(line)

    def recv_line(self) -> str | None:
        if self._closed:
            return None
        item = self._in.get()
        if item is None:
            self._closed = True
        return item

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._out.put(None)
            self._in.put(None)  # wake any reader blocked on our side


def local_pair() -> tuple[LocalChannel, LocalChannel]:
    a, b = queue.SimpleQueue(), queue.SimpleQueue()
    return LocalChannel(a, b), LocalChannel(b, a)


class SocketChannel:
    """Line pipe over a TCP socket."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._reader = sock.makefile("r", encoding="utf-8", newline="\n")
        self._lock = threading.Lock()

    def send_line(self, line: str) -> None:
        try:
            with self._lock:
                self._sock.sendall((line + "\n").encode("utf-8"))
        except OSError as exc:
            raise ChannelClosed(str(exc)) from exc

    def recv_line(self) -> str | None:
        try:
            line = self._reader.readline()
        except OSError:
            return None
        if not line:
            return None
        return line.rstrip("\n")

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._reader.close()
        except OSError:
            pass
        self._sock.close()


def connect_sim(host: str, port: int, timeout: float = 10.0) -> SocketChannel:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(None)
    return SocketChannel(sock)


def complete_join(channel) -> str:
    """Sim side of the handshake: read JOIN, answer OK, return the id."""
    line = channel.recv_line()
    if line is None or not line.startswith("JOIN ") or len(line.split()) != 2:
        raise ChannelClosed("expected JOIN, got %r" % line)
    channel.send_line("OK")
    return line.split()[1]


class SimServer:
    """Accepts agent connections over TCP and runs their JOIN handshakes."""

    def __init__(self, expected: set[str], host: str = "127.0.0.1", port: int = 0):
        self.expected = set(expected)
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]

    def wait_for_agents(self, timeout: float = 30.0) -> dict[str, SocketChannel]:
        channels: dict[str, SocketChannel] = {}
        deadline = time.monotonic() + timeout
        self._listener.settimeout(1.0)
        while set(channels) != self.expected:
            if time.monotonic() > deadline:
                missing = sorted(self.expected - set(channels))
                raise ChannelClosed("agents never joined: %s" % ",".join(missing))
            try:
                sock, _addr = self._listener.accept()
            except socket.timeout:
                continue
            channel = SocketChannel(sock)
            try:
                aid = complete_join(channel)
            except ChannelClosed:
                channel.close()
                continue
            if aid not in self.expected or aid in channels:
                channel.send_line("ERR")
                channel.close()
                continue
            channels[aid] = channel
        return channels

    def close(self) -> None:
        self._listener.close()


# --- match loop ---


def run_match(
    config: MatchConfig,
    channels: dict[str, SocketChannel | LocalChannel],
    costs: ActionCosts = ActionCosts(),
) -> MatchResult:
    """Drive a full match over already-joined channels."""
    engine, result = setup_match(config, costs)
    if set(channels) != set(engine.agents):
        raise GraphError("channels do not cover the roster")

    acts: queue.Queue = queue.Queue()

    def reader(aid: str, channel) -> None:
        while True:
            line = channel.recv_line()
            acts.put((aid, line))
            if line is None:
                return

    threads = [
        threading.Thread(target=reader, args=(aid, ch), daemon=True)
        for aid, ch in channels.items()
    ]
    for t in threads:
        t.start()

    alive = set(channels)
    for _ in range(config.steps):
        step = engine.step + 1
        for aid in sorted(alive):
            try:
                channels[aid].send_line(encode_percept(engine.build_percept(aid)))
            except ChannelClosed:
                alive.discard(aid)
        deadline = time.monotonic() + config.step_duration
        batch: dict[str, Action] = {}
        waiting = set(alive)
        while waiting:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            try:
                aid, line = acts.get(timeout=remaining)
            except queue.Empty:
                break
            if line is None:
                alive.discard(aid)
                waiting.discard(aid)
                continue
            fields = line.split(" ", 2)
            if len(fields) < 3 or fields[0] != "ACT":
                continue
            if fields[1] != str(step):
                continue
            try:
                batch[aid] = parse_action(fields[2])
            except PerceptError:
                pass
            waiting.discard(aid)
        result.records.append(engine.resolve_step(batch))

    final = result.scores
    for aid in sorted(channels):
        try:
            channels[aid].send_line("END %d %d" % final)
        except ChannelClosed:
            pass
        channels[aid].close()
    return result


# --- replays ---


def build_replay(result: MatchResult) -> str:
    if result.world is not None:
        gen = "%d %r" % (result.world.vertices, result.world.density)
    else:
        gen = "- -"
    lines = ["REPLAY %d %d %s" % (result.seed, result.steps, gen)]
    lines.append(format_graph_text(result.graph).rstrip("\n"))
    for aid, team_idx, role, start in result.roster:
        lines.append("agent %s %d %s %d" % (aid, team_idx, role.value, start))
    for rec in result.records:
        entries = " ".join(
            "%s:%s" % (aid, rec.actions[aid]) for aid in sorted(rec.actions)
        )
        lines.append("S %d %s %d %d" % (rec.step, entries, rec.score_a, rec.score_b))
    return "\n".join(lines) + "\n"


@dataclass
class Replay:
    seed: int
    steps: int
    world: WorldParams | None
    graph: WorldGraph
    roster: list[tuple[str, int, Role, int]]
    records: list[tuple[int, dict[str, str], int, int]]


def parse_replay(text: str) -> Replay:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("REPLAY "):
        raise ReplayError("line 1: missing REPLAY header")
    head = lines[0].split()
    if len(head) != 5:
        raise ReplayError("line 1: bad REPLAY header")
    try:
        seed, steps = int(head[1]), int(head[2])
        world = None
        if head[3] != "-":
            world = WorldParams(vertices=int(head[3]), density=float(head[4]))
    except ValueError:
        raise ReplayError("line 1: bad REPLAY header") from None

    graph_lines: list[str] = []
    roster: list[tuple[str, int, Role, int]] = []
    records: list[tuple[int, dict[str, str], int, int]] = []
    for num, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        kind = line.split(None, 1)[0]
        if kind in ("vertex", "edge"):
            graph_lines.append(line)
        elif kind == "agent":
            bits = line.split()
            if len(bits) != 5:
                raise ReplayError("line %d: bad agent line" % num)
            try:
                role = Role(bits[3])
                roster.append((bits[1], int(bits[2]), role, int(bits[4])))
            except ValueError:
                raise ReplayError("line %d: bad agent line" % num) from None
        elif kind == "S":
            bits = line.split()
            if len(bits) < 4:
                raise ReplayError("line %d: bad step line" % num)
            try:
                step = int(bits[1])
                score_a, score_b = int(bits[-2]), int(bits[-1])
            except ValueError:
                raise ReplayError("line %d: bad step line" % num) from None
            actions: dict[str, str] = {}
            for entry in bits[2:-2]:
                aid, sep, act = entry.partition(":")
                if not sep:
                    raise ReplayError("line %d: bad action entry %r" % (num, entry))
                actions[aid] = act
            records.append((step, actions, score_a, score_b))
        else:
            raise ReplayError("line %d: unknown line %r" % (num, line))
    try:
        graph = parse_graph_text("\n".join(graph_lines))
    except GraphError as exc:
        raise ReplayError("graph: %s" % exc) from None
    if not roster:
        raise ReplayError("replay has no roster")
    return Replay(seed, steps, world, graph, roster, records)


def verify_replay(text: str) -> tuple[int, int]:
    """Re-run a replay and check it against itself.

    Confirms the graph and placements match the recorded seed when the
    world was generated, then re-scores every step.  Returns the final
    scores; raises ReplayError naming the first offending step or line.
    """
    replay = parse_replay(text)
    if replay.world is not None:
        want = generate_world(replay.world, replay.seed)
        if format_graph_text(want) != format_graph_text(replay.graph):
            raise ReplayError("graph does not match seed %d" % replay.seed)
    teams = _roster_teams(replay.roster)
    placements = {aid: start for aid, _idx, _role, start in replay.roster}
    if replay.world is not None:
        config = MatchConfig(
            steps=replay.steps, seed=replay.seed, teams=teams, world=replay.world
        )
        expected = place_agents(config, replay.graph)
        for aid, start in placements.items():
            if expected.get(aid) != start:
                raise ReplayError(
                    "agent %s: start %d does not match seed" % (aid, start)
                )
    engine = MatchEngine(replay.graph.copy(), teams, placements)
    for step, actions, score_a, score_b in replay.records:
        if step != engine.step + 1:
            raise ReplayError("step %d: out of order" % step)
        parsed: dict[str, Action] = {}
        for aid, text_act in actions.items():
            if aid not in engine.agents:
                raise ReplayError("step %d: unknown agent %s" % (step, aid))
            try:
                parsed[aid] = parse_action(text_act)
            except PerceptError as exc:
                raise ReplayError("step %d: %s" % (step, exc)) from None
        rec = engine.resolve_step(parsed)
        if (rec.score_a, rec.score_b) != (score_a, score_b):
            raise ReplayError(
                "step %d: scores %d %d do not re-derive (expected %d %d)"
                % (step, score_a, score_b, rec.score_a, rec.score_b)
            )
    last = replay.records[-1] if replay.records else (0, {}, 0, 0)
    return (last[2], last[3])


def _roster_teams(roster) -> tuple[TeamSpec, TeamSpec]:
    by_idx: dict[int, list[AgentSpec]] = {0: [], 1: []}
    for aid, idx, role, _start in roster:
        if idx not in by_idx:
            raise ReplayError("agent %s: team index %d out of range" % (aid, idx))
        by_idx[idx].append(AgentSpec(aid, role))
    return (
        TeamSpec("team-a", tuple(by_idx[0])),
        TeamSpec("team-b", tuple(by_idx[1])),
    )
