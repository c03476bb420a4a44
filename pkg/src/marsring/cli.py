"""Command line front end.

Subcommands:

    broker        run a standalone message bus on TCP
    agent         run one agent against a remote bus and simulator
    match         play a configured match end to end and report scores
    bench-apsp    compare incremental index maintenance against rebuilds
    replay-check  re-score a replay file and flag the first bad line

Match configs are INI files; see configs/smoke.cfg for the shape.  Set
MARSRING_LOG=debug (or info, warning) to get timestamped diagnostics on
stderr from every component.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import random
import sys
import threading
import time
from pathlib import Path

from .agentcore import Agent, Role
from .marssim import (
    AgentSpec,
    MatchConfig,
    MatchResult,
    ReplayError,
    SimServer,
    TeamSpec,
    WorldParams,
    build_replay,
    complete_join,
    connect_sim,
    generate_world,
    local_pair,
    run_match,
    verify_replay,
)
from .msgbus import BusError, BusServer, InProcessBus, connect_tcp
from .worldgraph import (
    Edge,
    GraphError,
    Vertex,
    build_index,
    insert_vertex,
    parse_graph_text,
    stock_distances,
)

log = logging.getLogger("marsring.cli")


class ConfigError(ValueError):
    """Raised when a match config file is unusable; names the bad field."""


# --- config files ---


def load_config(path: str | Path) -> MatchConfig:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError("cannot read config file %s" % path)

    def field(section, key, cast, default=None, required=False):
        try:
            raw = parser.get(section, key)
        except (configparser.NoSectionError, configparser.NoOptionError):
            if required:
                raise ConfigError("%s.%s is required" % (section, key)) from None
            return default
        try:
            return cast(raw)
        except ValueError:
            raise ConfigError(
                "%s.%s: cannot read %r" % (section, key, raw)
            ) from None

    steps = field("match", "steps", int, required=True)
    seed = field("match", "seed", int, required=True)
    step_duration = field("match", "step_duration", float, default=1.0)
    if steps < 1:
        raise ConfigError("match.steps: must be at least 1")
    if step_duration <= 0:
        raise ConfigError("match.step_duration: must be positive")

    graph = None
    world = None
    if parser.has_option("world", "graph_file"):
        gpath = Path(parser.get("world", "graph_file"))
        if not gpath.is_absolute():
            gpath = Path(path).parent / gpath
        try:
            graph = parse_graph_text(gpath.read_text())
        except OSError as exc:
            raise ConfigError("world.graph_file: %s" % exc) from None
        except GraphError as exc:
            raise ConfigError("world.graph_file: %s" % exc) from None
    else:
        world = WorldParams(
            vertices=field("world", "vertices", int, required=True),
            density=field("world", "density", float, default=0.25),
            weight_min=field("world", "weight_min", int, default=1),
            weight_max=field("world", "weight_max", int, default=10),
            value_min=field("world", "value_min", int, default=0),
            value_max=field("world", "value_max", int, default=10),
        )
        if world.vertices < 1:
            raise ConfigError("world.vertices: must be at least 1")
        if not 0.0 <= world.density <= 1.0:
            raise ConfigError("world.density: must be between 0 and 1")
        if not 1 <= world.weight_min <= world.weight_max:
            raise ConfigError("world.weight_min/weight_max: bad range")
        if not 0 <= world.value_min <= world.value_max:
            raise ConfigError("world.value_min/value_max: bad range")

    teams = (_load_team(parser, "team.a"), _load_team(parser, "team.b"))
    if teams[0].name == teams[1].name:
        raise ConfigError("team.b.name: clashes with team.a")
    seen: set[str] = set()
    for team in teams:
        for spec in team.agents:
            if spec.agent_id in seen:
                raise ConfigError("duplicate agent id %r" % spec.agent_id)
            seen.add(spec.agent_id)

    return MatchConfig(
        steps=steps,
        seed=seed,
        teams=teams,
        step_duration=step_duration,
        world=world,
        graph=graph,
    )


def _load_team(parser: configparser.ConfigParser, section: str) -> TeamSpec:
    if not parser.has_section(section):
        raise ConfigError("section [%s] is required" % section)
    name = parser.get(section, "name", fallback=section.split(".", 1)[1])
    raw = parser.get(section, "agents", fallback="")
    if not raw.strip():
        raise ConfigError("%s.agents is required" % section)
    specs = []
    for chunk in raw.split(","):
        bits = chunk.strip().split(":")
        if len(bits) not in (2, 3) or not bits[0]:
            raise ConfigError(
                "%s.agents: bad entry %r (want id:role[:noop])" % (section, chunk.strip())
            )
        try:
            role = Role(bits[1])
        except ValueError:
            raise ConfigError(
                "%s.agents: unknown role %r" % (section, bits[1])
            ) from None
        noop = False
        if len(bits) == 3:
            if bits[2] != "noop":
                raise ConfigError(
                    "%s.agents: trailing flag must be 'noop', got %r" % (section, bits[2])
                )
            noop = True
        specs.append(AgentSpec(bits[0], role, noop))
    try:
        parry = parser.getboolean(section, "parry", fallback=True)
    except ValueError:
        raise ConfigError("%s.parry: want a boolean" % section) from None
    return TeamSpec(name, tuple(specs), parry)


# --- match orchestration ---


def run_configured_match(config: MatchConfig, transport: str = "inproc") -> MatchResult:
    """Spin up both teams in this process and play the match out.

    Each team gets its own bus (an in-process broker, or a real TCP one
    when transport is "tcp"); agent threads talk to the simulator over
    local pipes or sockets to match.  Noop agents get no bus at all.
    """
    if transport not in ("inproc", "tcp"):
        raise ConfigError("transport must be 'inproc' or 'tcp'")
    agents: list[Agent] = []
    brokers = []
    # the drain deadline must fire before the simulator gives up on us
    agent_timeout = max(0.1, config.step_duration * 0.9)
    for team in config.teams:
        live = [s.agent_id for s in team.agents if not s.noop]
        has_saboteur = any(s.role is Role.SABOTEUR for s in team.agents)
        connect = None
        if live:
            if transport == "tcp":
                broker = BusServer()
                connect = lambda aid, b=broker: connect_tcp(b.host, b.port, aid)
            else:
                broker = InProcessBus()
                connect = lambda aid, b=broker: b.connect(aid)
            brokers.append(broker)
        for spec in team.agents:
            if spec.noop:
                agents.append(Agent(spec.agent_id, team.name, spec.role, [], None, noop=True))
                continue
            agents.append(
                Agent(
                    spec.agent_id,
                    team.name,
                    spec.role,
                    live,
                    connect(spec.agent_id),
                    parry_enabled=team.parry,
                    team_has_saboteur=has_saboteur,
                    step_timeout=agent_timeout,
                )
            )

    threads: list[threading.Thread] = []
    server = None
    try:
        if transport == "tcp":
            server = SimServer({a.agent_id for a in agents})
            for agent in agents:
                t = threading.Thread(
                    target=lambda a=agent: a.run(connect_sim(server.host, server.port)),
                    name="agent-%s" % agent.agent_id,
                    daemon=True,
                )
                t.start()
                threads.append(t)
            channels = server.wait_for_agents(timeout=30.0)
        else:
            channels = {}
            for agent in agents:
                sim_ch, agent_ch = local_pair()
                t = threading.Thread(
                    target=agent.run,
                    args=(agent_ch,),
                    name="agent-%s" % agent.agent_id,
                    daemon=True,
                )
                t.start()
                threads.append(t)
                channels[complete_join(sim_ch)] = sim_ch
        log.info("match: %d agents joined, %d steps", len(channels), config.steps)
        result = run_match(config, channels)
    finally:
        if server is not None:
            server.close()
        for broker in brokers:
            broker.close()
    for t in threads:
        t.join(timeout=10.0)
        if t.is_alive():
            log.warning("agent thread %s did not exit", t.name)
    return result


# --- benchmarks ---


def bench_apsp(sizes: list[int], trials: int, seed: int) -> list[dict]:
    """Price vertex insertion three ways on random connected graphs.

    For each size and trial: take a generated world, then add one fresh
    vertex with a handful of incident edges.  Report the relaxations an
    incremental insert performs, the relaxations a from-scratch rebuild
    performs, and the cost of answering one all-sources sweep with plain
    per-source searches instead of keeping an index at all.
    """
    rng = random.Random(seed)
    rows = []
    for n in sizes:
        for trial in range(trials):
            world = generate_world(
                WorldParams(vertices=n, density=0.2), rng.randrange(1 << 30)
            )
            new_vid = n
            degree = min(3, n)
            peers = rng.sample(range(n), degree)
            edges = [Edge(new_vid, p, rng.randint(1, 10)) for p in peers]

            g_inc = world.copy()
            index = build_index(g_inc)
            before = index.relaxations
            insert_vertex(index, g_inc, Vertex(new_vid, 0), edges)
            insert_cost = index.relaxations - before

            g_reb = world.copy()
            g_reb.add_vertex(new_vid, 0)
            for e in edges:
                g_reb.set_edge(e.u, e.v, e.weight)
            rebuild_cost = build_index(g_reb).relaxations

            sweep = sum(
                stock_distances(g_reb, src)[1] for src in g_reb.vertex_ids()
            )
            rows.append(
                {
                    "n": n,
                    "trial": trial,
                    "insert": insert_cost,
                    "rebuild": rebuild_cost,
                    "stock_sweep": sweep,
                }
            )
    return rows


# --- subcommands ---


def cmd_broker(args) -> int:
    server = BusServer(args.host, args.port, queue_limit=args.queue_limit)
    print("bus listening on %s:%d" % (server.host, server.port), flush=True)
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


def _host_port(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ConfigError("want host:port, got %r" % text)
    try:
        return host, int(port)
    except ValueError:
        raise ConfigError("bad port in %r" % text) from None


def cmd_agent(args) -> int:
    try:
        role = Role(args.role)
    except ValueError:
        raise ConfigError("unknown role %r" % args.role) from None
    bus = None
    if not args.noop:
        if not args.bus:
            raise ConfigError("--bus is required unless --noop")
        bhost, bport = _host_port(args.bus)
        bus = connect_tcp(bhost, bport, args.id)
    roster = [s for s in (args.roster or args.id).split(",") if s]
    shost, sport = _host_port(args.sim)
    agent = Agent(
        args.id,
        args.team,
        role,
        roster,
        bus,
        parry_enabled=not args.no_parry,
        noop=args.noop,
        team_has_saboteur=args.saboteur_team,
        step_timeout=args.step_timeout,
    )
    agent.run(connect_sim(shost, sport))
    return 0


def cmd_match(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.steps is not None:
        config.steps = args.steps
    result = run_configured_match(config, args.transport)
    a, b = result.team_names
    sa, sb = result.scores
    print("RESULT %s %d %s %d" % (a, sa, b, sb))
    if args.replay:
        Path(args.replay).write_text(build_replay(result))
        print("replay written to %s" % args.replay)
    return 0


def cmd_bench_apsp(args) -> int:
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s]
    except ValueError:
        raise ConfigError("--sizes wants a comma list of integers") from None
    if not sizes or min(sizes) < 1:
        raise ConfigError("--sizes wants positive integers")
    rows = bench_apsp(sizes, args.trials, args.seed)
    for row in rows:
        print(
            "n=%(n)d trial=%(trial)d insert=%(insert)d rebuild=%(rebuild)d "
            "stock_sweep=%(stock_sweep)d" % row
        )
    for n in sizes:
        group = [r for r in rows if r["n"] == n]
        print(
            "n=%d mean insert=%.0f rebuild=%.0f stock_sweep=%.0f"
            % (
                n,
                sum(r["insert"] for r in group) / len(group),
                sum(r["rebuild"] for r in group) / len(group),
                sum(r["stock_sweep"] for r in group) / len(group),
            )
        )
    return 0


def cmd_replay_check(args) -> int:
    try:
        text = Path(args.file).read_text()
    except OSError as exc:
        print("BAD %s" % exc)
        return 1
    try:
        scores = verify_replay(text)
    except ReplayError as exc:
        print("BAD %s" % exc)
        return 1
    print("OK %d %d" % scores)
    return 0


# --- entry point ---


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="marsring", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("broker", help="run a standalone TCP message bus")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--queue-limit", type=int, default=4096)
    p.set_defaults(func=cmd_broker)

    p = sub.add_parser("agent", help="run one agent against a bus and simulator")
    p.add_argument("--id", required=True)
    p.add_argument("--team", required=True)
    p.add_argument("--role", required=True)
    p.add_argument("--sim", required=True, help="simulator host:port")
    p.add_argument("--bus", help="team bus host:port")
    p.add_argument("--roster", help="comma list of teammate ids (including own)")
    p.add_argument("--noop", action="store_true")
    p.add_argument("--no-parry", action="store_true")
    p.add_argument("--saboteur-team", action="store_true")
    p.add_argument("--step-timeout", type=float, default=5.0)
    p.set_defaults(func=cmd_agent)

    p = sub.add_parser("match", help="play a configured match")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--transport", choices=("inproc", "tcp"), default="inproc")
    p.add_argument("--replay", help="write the replay to this file")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("bench-apsp", help="compare index maintenance strategies")
    p.add_argument("--sizes", default="16,32,64")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_bench_apsp)

    p = sub.add_parser("replay-check", help="re-score a replay file")
    p.add_argument("file")
    p.set_defaults(func=cmd_replay_check)

    return parser


def _setup_logging() -> None:
    level_name = os.environ.get("MARSRING_LOG", "").strip()
    if not level_name:
        return
    level = getattr(logging, level_name.upper(), None)
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except (GraphError, BusError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
