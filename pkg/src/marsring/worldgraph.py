"""Weighted undirected world graph plus the route machinery agents rely on:
an all-pairs distance index that is maintained incrementally as the known
world grows, hop-based searches for exploration, and a small text format
for graph fixtures.

The index keeps exact distances and first-hop pointers for every indexed
vertex pair. Growing the index by one vertex costs one pass over the new
vertex's incident edges plus one relaxation sweep over all existing pairs,
which is quadratic in the vertex count rather than the cubic cost of a
rebuild. Unreachable pairs are represented as None, never as an oversized
weight.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

__all__ = [
    "GraphError",
    "Vertex",
    "Edge",
    "WorldGraph",
    "DistanceIndex",
    "edge_key",
    "build_index",
    "insert_vertex",
    "update_edge",
    "shortest_path",
    "bfs_nearest",
    "bfs_frontier",
    "stock_distances",
    "parse_graph_text",
    "format_graph_text",
]


class GraphError(ValueError):
    """A graph operation was rejected (bad weight, unknown vertex, ...)."""


def edge_key(u: int, v: int) -> tuple[int, int]:
    """Normalized undirected edge key with the smaller id first."""
    return (u, v) if u <= v else (v, u)


@dataclass(frozen=True)
class Vertex:
    id: int
    value: int = 0


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    weight: int

    def key(self) -> tuple[int, int]:
        return edge_key(self.u, self.v)


class WorldGraph:
    """Undirected graph with positive integer edge weights.

    Besides topology the graph carries the knowledge marks needed by a
    partially explored copy: which vertices have a confirmed value
    (``probed``) and which edges are known to exist but have no confirmed
    weight yet (``pending_edges``). Pending edges are not part of the
    adjacency and never enter the distance index; they only mark where
    exploration still has work to do. A fully known graph simply leaves
    both sets alone.
    """

    def __init__(self) -> None:
        self.values: dict[int, int] = {}
        self.adjacency: dict[int, dict[int, int]] = {}
        self.probed: set[int] = set()
        self.pending_edges: set[tuple[int, int]] = set()

    # -- vertices ---------------------------------------------------------

    def vertex_ids(self) -> list[int]:
        return sorted(self.values)

    def vertex_count(self) -> int:
        return len(self.values)

    def has_vertex(self, vid: int) -> bool:
        return vid in self.values

    def value(self, vid: int) -> int:
        try:
            return self.values[vid]
        except KeyError:
            raise GraphError(f"unknown vertex {vid}") from None

    def add_vertex(self, vid: int, value: int = 0) -> None:
        if vid in self.values:
            raise GraphError(f"duplicate vertex {vid}")
        if value < 0:
            raise GraphError(f"vertex {vid}: negative value {value}")
        self.values[vid] = value
        self.adjacency[vid] = {}

    def mark_probed(self, vid: int, value: int) -> None:
        """Record a confirmed vertex value. Values are immutable once set."""
        if vid not in self.values:
            raise GraphError(f"unknown vertex {vid}")
        if vid in self.probed and self.values[vid] != value:
            raise GraphError(
                f"vertex {vid}: probed value {self.values[vid]} cannot change to {value}"
            )
        self.values[vid] = value
        self.probed.add(vid)

    # -- edges ------------------------------------------------------------

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.adjacency.get(u, ())

    def weight(self, u: int, v: int) -> int | None:
        return self.adjacency.get(u, {}).get(v)

    def neighbors(self, vid: int) -> dict[int, int]:
        try:
            return self.adjacency[vid]
        except KeyError:
            raise GraphError(f"unknown vertex {vid}") from None

    def edges(self) -> Iterator[Edge]:
        for u in sorted(self.adjacency):
            for v, w in sorted(self.adjacency[u].items()):
                if u < v:
                    yield Edge(u, v, w)

    def edge_count(self) -> int:
        return sum(len(nbrs) for nbrs in self.adjacency.values()) // 2

    def set_edge(self, u: int, v: int, weight: int) -> None:
        """Add or reweight the undirected edge u-v. Clears any pending mark."""
        if u == v:
            raise GraphError(f"self loop at vertex {u}")
        if u not in self.values or v not in self.values:
            raise GraphError(f"edge {u}-{v}: unknown endpoint")
        if not isinstance(weight, int) or weight < 1:
            raise GraphError(f"edge {u}-{v}: weight must be a positive integer, got {weight!r}")
        self.adjacency[u][v] = weight
        self.adjacency[v][u] = weight
        self.pending_edges.discard(edge_key(u, v))

    def add_pending_edge(self, u: int, v: int) -> None:
        """Mark that an edge u-v exists but its weight is still unknown."""
        if u == v:
            raise GraphError(f"self loop at vertex {u}")
        if u not in self.values or v not in self.values:
            raise GraphError(f"pending edge {u}-{v}: unknown endpoint")
        if not self.has_edge(u, v):
            self.pending_edges.add(edge_key(u, v))

    def copy(self) -> "WorldGraph":
        g = WorldGraph()
        g.values = dict(self.values)
        g.adjacency = {u: dict(nbrs) for u, nbrs in self.adjacency.items()}
        g.probed = set(self.probed)
        g.pending_edges = set(self.pending_edges)
        return g


class DistanceIndex:
    """Exact all-pairs distances and first hops over an indexed vertex set.

    ``dist`` and ``next_hop`` are dense matrices in index order; None marks
    an unreachable pair. ``relaxations`` counts every pair-relaxation the
    index has performed since construction, so callers can compare the cost
    of incremental maintenance against rebuilds.
    """

    def __init__(self, order: Iterable[int] = ()) -> None:
        self.order: list[int] = list(order)
        self._pos: dict[int, int] = {v: i for i, v in enumerate(self.order)}
        n = len(self.order)
        self.dist: list[list[int | None]] = [[None] * n for _ in range(n)]
        self.next_hop: list[list[int | None]] = [[None] * n for _ in range(n)]
        for i in range(n):
            self.dist[i][i] = 0
        self.relaxations = 0

    def __contains__(self, vid: int) -> bool:
        return vid in self._pos

    def size(self) -> int:
        return len(self.order)

    def distance(self, u: int, v: int) -> int | None:
        try:
            return self.dist[self._pos[u]][self._pos[v]]
        except KeyError as exc:
            raise GraphError(f"vertex {exc.args[0]} not indexed") from None

    def next_hop_id(self, u: int, v: int) -> int | None:
        try:
            return self.next_hop[self._pos[u]][self._pos[v]]
        except KeyError as exc:
            raise GraphError(f"vertex {exc.args[0]} not indexed") from None

    def distances_by_id(self) -> dict[tuple[int, int], int | None]:
        """Distance map keyed by vertex ids, independent of index order."""
        out: dict[tuple[int, int], int | None] = {}
        for i, u in enumerate(self.order):
            row = self.dist[i]
            for j, v in enumerate(self.order):
                out[(u, v)] = row[j]
        return out

    def _append(self, vid: int) -> int:
        self._pos[vid] = len(self.order)
        self.order.append(vid)
        for row in self.dist:
            row.append(None)
        for row in self.next_hop:
            row.append(None)
        n = len(self.order)
        self.dist.append([None] * n)
        self.next_hop.append([None] * n)
        self.dist[n - 1][n - 1] = 0
        return n - 1


def _init_from_adjacency(index: DistanceIndex, graph: WorldGraph) -> None:
    pos = index._pos
    for u in index.order:
        i = pos[u]
        for v, w in graph.adjacency[u].items():
            j = pos[v]
            index.dist[i][j] = w
            index.next_hop[i][j] = v


def _floyd_warshall(index: DistanceIndex) -> None:
    n = len(index.order)
    dist = index.dist
    nxt = index.next_hop
    relax = 0
    for k in range(n):
        dk = dist[k]
        for i in range(n):
            dik = dist[i][k]
            if dik is None or i == k:
                continue
            di = dist[i]
            ni = nxt[i]
            nik = ni[k]
            for j in range(n):
                dkj = dk[j]
                relax += 1
                if dkj is None:
                    continue
                alt = dik + dkj
                cur = di[j]
                if cur is None or alt < cur:
                    di[j] = alt
                    ni[j] = nik
    index.relaxations += relax


def build_index(graph: WorldGraph) -> DistanceIndex:
    """Index every vertex of the graph from scratch."""
    index = DistanceIndex(sorted(graph.values))
    _init_from_adjacency(index, graph)
    _floyd_warshall(index)
    return index


def _rebuild_in_order(index: DistanceIndex, graph: WorldGraph) -> None:
    n = len(index.order)
    index.dist = [[None] * n for _ in range(n)]
    index.next_hop = [[None] * n for _ in range(n)]
    for i in range(n):
        index.dist[i][i] = 0
    _init_from_adjacency(index, graph)
    _floyd_warshall(index)


def insert_vertex(
    index: DistanceIndex,
    graph: WorldGraph,
    vertex: Vertex,
    incident_edges: Iterable[Edge] = (),
) -> DistanceIndex:
    """Add one vertex (and its incident edges) to the graph and the index.

    The index ends up exactly as a rebuild of the enlarged graph would
    leave it, but the work is one single-source pass over the incident
    edges followed by a relaxation of all existing pairs through the new
    vertex: quadratic, not cubic.
    """
    vid = vertex.id
    if vid in index or graph.has_vertex(vid):
        raise GraphError(f"duplicate vertex {vid}")
    incident: list[tuple[int, int]] = []
    seen_other: set[int] = set()
    for e in incident_edges:
        if vid not in (e.u, e.v):
            raise GraphError(f"edge {e.u}-{e.v} does not touch vertex {vid}")
        other = e.v if e.u == vid else e.u
        if other == vid:
            raise GraphError(f"self loop at vertex {vid}")
        if other not in index._pos:
            raise GraphError(f"edge endpoint {other} not indexed")
        if other in seen_other:
            raise GraphError(f"duplicate incident edge {vid}-{other}")
        seen_other.add(other)
        incident.append((other, e.weight))
    incident.sort()

    graph.add_vertex(vid, vertex.value)
    for other, w in incident:
        graph.set_edge(vid, other, w)

    vi = index._append(vid)
    n_old = vi
    dist = index.dist
    nxt = index.next_hop
    pos = index._pos
    relax = 0

    # Single-source pass: the best route from the new vertex to any indexed
    # vertex leaves through one incident edge and continues on a path that
    # existed before the insert.
    dv = dist[vi]
    nv = nxt[vi]
    for j in range(n_old):
        best: int | None = None
        first_v: int | None = None
        first_j: int | None = None
        for other, w in incident:
            up = pos[other]
            relax += 1
            duj = dist[up][j]
            if duj is None:
                continue
            alt = w + duj
            if best is None or alt < best:
                best = alt
                first_v = other
                first_j = vid if up == j else nxt[j][up]
        if best is not None:
            dv[j] = best
            dist[j][vi] = best
            nv[j] = first_v
            nxt[j][vi] = first_j

    # Relax every existing pair through the new vertex.
    for i in range(n_old):
        div = dist[i][vi]
        if div is None:
            continue
        niv = nxt[i][vi]
        di = dist[i]
        ni = nxt[i]
        for j in range(n_old):
            relax += 1
            dvj = dv[j]
            if dvj is None:
                continue
            alt = div + dvj
            cur = di[j]
            if cur is None or alt < cur:
                di[j] = alt
                ni[j] = niv

    index.relaxations += relax
    return index


def update_edge(index: DistanceIndex, graph: WorldGraph, edge: Edge) -> DistanceIndex:
    """Apply one edge announcement to the graph and the index.

    Re-announcing the current weight is a no-op. A new or cheaper edge is
    folded in by relaxing all pairs through its endpoints. A strictly larger
    weight cannot be fixed by relaxation (stale entries would survive), so
    that rare case falls back to a rebuild over the same vertex order.
    """
    u, v, w = edge.u, edge.v, edge.weight
    if u == v:
        raise GraphError(f"self loop at vertex {u}")
    for end in (u, v):
        if end not in index._pos:
            raise GraphError(f"vertex {end} not indexed")
    if not isinstance(w, int) or w < 1:
        raise GraphError(f"edge {u}-{v}: weight must be a positive integer, got {w!r}")

    old_w = graph.weight(u, v)
    if old_w == w:
        graph.pending_edges.discard(edge_key(u, v))
        return index
    graph.set_edge(u, v, w)
    if old_w is not None and w > old_w:
        _rebuild_in_order(index, graph)
        return index

    dist = index.dist
    nxt = index.next_hop
    pos = index._pos
    i, j = pos[u], pos[v]
    n = len(index.order)
    relax = 0

    # Snapshot the pre-update distances and first hops touching the two
    # endpoints; relaxation must read old values only, or a pass over the
    # pairs can record hops that disagree with the distances it writes.
    to_u = [dist[p][i] for p in range(n)]
    to_v = [dist[p][j] for p in range(n)]
    hop_u = [nxt[p][i] for p in range(n)]
    hop_v = [nxt[p][j] for p in range(n)]

    for p in range(n):
        dpu = to_u[p]
        dpv = to_v[p]
        if dpu is None and dpv is None:
            continue
        dp = dist[p]
        np_ = nxt[p]
        for q in range(n):
            relax += 1
            if p == q:
                continue
            best = dp[q]
            if dpu is not None:
                dvq = to_v[q]
                if dvq is not None:
                    alt = dpu + w + dvq
                    if best is None or alt < best:
                        best = alt
                        dp[q] = alt
                        np_[q] = v if p == i else hop_u[p]
            if dpv is not None:
                duq = to_u[q]
                if duq is not None:
                    alt = dpv + w + duq
                    if best is None or alt < best:
                        dp[q] = alt
                        np_[q] = u if p == j else hop_v[p]
    index.relaxations += relax
    return index


def shortest_path(index: DistanceIndex, src: int, dst: int) -> tuple[list[int], int] | None:
    """Vertex path and total cost between two indexed vertices.

    Returns None iff the pair is unreachable.
    """
    d = index.distance(src, dst)
    if d is None:
        return None
    path = [src]
    cur = src
    for _ in range(index.size()):
        if cur == dst:
            return path, d
        cur = index.next_hop_id(cur, dst)
        if cur is None:
            break
        path.append(cur)
    raise GraphError(f"next-hop chain from {src} to {dst} is corrupt")


def bfs_nearest(graph: WorldGraph, start: int, predicate: Callable[[int], bool]) -> int | None:
    """Nearest vertex (by hop count) satisfying the predicate.

    Ties at equal hop distance go to the smallest vertex id. Returns None
    when no reachable vertex satisfies the predicate.
    """
    if not graph.has_vertex(start):
        raise GraphError(f"unknown vertex {start}")
    seen = {start}
    level = [start]
    while level:
        for vid in sorted(level):
            if predicate(vid):
                return vid
        nxt: list[int] = []
        for vid in level:
            for nb in graph.adjacency[vid]:
                if nb not in seen:
                    seen.add(nb)
                    nxt.append(nb)
        level = nxt
    return None


def bfs_frontier(graph: WorldGraph, start: int) -> int | None:
    """Nearest vertex that still has exploration work: an unprobed value
    or a known edge whose weight is unconfirmed."""
    pending_ends: set[int] = set()
    for a, b in graph.pending_edges:
        pending_ends.add(a)
        pending_ends.add(b)

    def unfinished(vid: int) -> bool:
        return vid not in graph.probed or vid in pending_ends

    return bfs_nearest(graph, start, unfinished)


def stock_distances(graph: WorldGraph, source: int) -> tuple[dict[int, int], int]:
    """Single-source distances the plain way (binary-heap search).

    Returns the distance map and the number of edge relaxations performed,
    so callers can price per-step searching against index maintenance.
    """
    if not graph.has_vertex(source):
        raise GraphError(f"unknown vertex {source}")
    dist: dict[int, int] = {source: 0}
    done: set[int] = set()
    heap: list[tuple[int, int]] = [(0, source)]
    relax = 0
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, w in graph.adjacency[u].items():
            relax += 1
            alt = d + w
            if v not in dist or alt < dist[v]:
                dist[v] = alt
                heapq.heappush(heap, (alt, v))
    return dist, relax


# -- text fixtures --------------------------------------------------------


def parse_graph_text(text: str) -> WorldGraph:
    """Parse the line-oriented graph format.

    ``vertex <id> <value>`` and ``edge <id> <id> <weight>`` lines in any
    order; ``#`` starts a comment. Bad input raises GraphError naming the
    offending line.
    """
    vertex_lines: list[tuple[int, int, int]] = []
    edge_lines: list[tuple[int, int, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "vertex" and len(parts) == 3:
                vertex_lines.append((lineno, int(parts[1]), int(parts[2])))
            elif parts[0] == "edge" and len(parts) == 4:
                edge_lines.append((lineno, int(parts[1]), int(parts[2]), int(parts[3])))
            else:
                raise GraphError(f"line {lineno}: unrecognized line {raw.strip()!r}")
        except ValueError:
            raise GraphError(f"line {lineno}: bad integer in {raw.strip()!r}") from None

    graph = WorldGraph()
    for lineno, vid, value in vertex_lines:
        try:
            graph.add_vertex(vid, value)
        except GraphError as exc:
            raise GraphError(f"line {lineno}: {exc}") from None
    for lineno, u, v, w in edge_lines:
        if graph.has_edge(u, v):
            raise GraphError(f"line {lineno}: duplicate edge {u}-{v}")
        try:
            graph.set_edge(u, v, w)
        except GraphError as exc:
            raise GraphError(f"line {lineno}: {exc}") from None
    return graph


def format_graph_text(graph: WorldGraph) -> str:
    lines = [f"vertex {vid} {graph.values[vid]}" for vid in sorted(graph.values)]
    lines.extend(f"edge {e.u} {e.v} {e.weight}" for e in graph.edges())
    return "\n".join(lines) + "\n"
