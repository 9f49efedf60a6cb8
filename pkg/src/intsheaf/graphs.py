"""Graphs, reflexive graphs and the discrete interval sheaves they present.

An Int_N-sheaf is the same thing as a graph: its sections of length n are the
paths of length n, restriction takes sub-paths and gluing concatenates.
:class:`PathSheaf` realizes one direction of that equivalence and
:func:`graph_of_sheaf` the other.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Mapping

from .intervals import DiscreteTranslation, discrete_length


class GraphError(ValueError):
    pass


class GlueError(ValueError):
    """Two sections do not agree on their shared endpoint."""


@dataclass(frozen=True)
class Edge:
    id: Hashable
    src: Hashable
    tgt: Hashable
    label: Any = None


@dataclass(frozen=True)
class Graph:
    vertices: frozenset
    edges: tuple[Edge, ...]
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", frozenset(self.vertices))
        edges = tuple(self.edges)
        index = {}
        for e in edges:
            if e.id in index:
                raise GraphError(f"duplicate edge id {e.id!r}")
            if e.src not in self.vertices or e.tgt not in self.vertices:
                raise GraphError(f"edge {e.id!r} has an endpoint outside the vertex set")
            index[e.id] = e
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_index", index)

    def edge(self, edge_id) -> Edge:
        try:
            return self._index[edge_id]
        except KeyError:
            raise GraphError(f"unknown edge {edge_id!r}") from None

    def src(self, edge_id):
        return self.edge(edge_id).src

    def tgt(self, edge_id):
        return self.edge(edge_id).tgt

    def out_edges(self, v) -> list[Edge]:
        return [e for e in self.edges if e.src == v]

    def __contains__(self, edge_id):
        return edge_id in self._index


@dataclass(frozen=True)
class ReflexiveGraph:
    base: Graph
    ids: Mapping

    def __post_init__(self):
        for v in self.base.vertices:
            if v not in self.ids:
                raise GraphError(f"vertex {v!r} has no designated identity loop")
            loop = self.base.edge(self.ids[v])
            if loop.src != v or loop.tgt != v:
                raise GraphError(f"ids({v!r}) is not a self-loop at {v!r}")


def reflexivize(g: Graph) -> ReflexiveGraph:
    """Freely add a designated identity loop ``("id", v)`` at every vertex."""
    loops = tuple(Edge(("id", v), v, v, None) for v in sorted(g.vertices, key=repr))
    base = Graph(g.vertices, g.edges + loops)
    return ReflexiveGraph(base, {v: ("id", v) for v in g.vertices})


def forget(rg: ReflexiveGraph) -> Graph:
    """The underlying graph, identity loops included as ordinary edges."""
    return rg.base


# -- the three graphs of the collision-avoidance model --------------------

STAR = "v*"


def loop_graph(labels: Iterable) -> Graph:
    labels = list(dict.fromkeys(labels))
    if not labels:
        raise GraphError("loop graph needs at least one label")
    return Graph(frozenset([STAR]), tuple(Edge(lam, STAR, STAR, lam) for lam in labels))


def complete_graph(labels: Iterable) -> Graph:
    labels = list(dict.fromkeys(labels))
    if not labels:
        raise GraphError("complete graph needs at least one label")
    edges = tuple(Edge((a, b), a, b, (a, b)) for a in labels for b in labels)
    return Graph(frozenset(labels), edges)


def transition_graph(lts) -> Graph:
    """``G(Λ, S)``: an edge ``(λ, s) -> T(λ, s)`` for each pair in the domain of T."""
    edges = []
    for lam in lts.inputs:
        for s in lts.states:
            if (lam, s) in lts.transitions:
                edges.append(Edge((lam, s), s, lts.transitions[(lam, s)], lam))
    return Graph(frozenset(lts.states), tuple(edges))


# -- paths -----------------------------------------------------------------


@dataclass(frozen=True)
class Path:
    start: Hashable
    steps: tuple = ()
    end: Hashable = None

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.end is None and not self.steps:
            object.__setattr__(self, "end", self.start)

    def __len__(self):
        return len(self.steps)


def make_path(g: Graph, start, steps: Iterable = ()) -> Path:
    steps = tuple(steps)
    here = start
    if start not in g.vertices:
        raise GraphError(f"unknown vertex {start!r}")
    for e in steps:
        edge = g.edge(e)
        if edge.src != here:
            raise GraphError(f"edge {e!r} does not leave {here!r}")
        here = edge.tgt
    return Path(start, steps, here)


def paths_of_length(g: Graph, n: int, start=None) -> set[Path]:
    n = discrete_length(n)
    starts = g.vertices if start is None else [start]
    out_edges = defaultdict(list)
    for e in g.edges:
        out_edges[e.src].append(e)
    frontier = [Path(v, (), v) for v in starts if v in g.vertices]
    for _ in range(n):
        frontier = [
            Path(p.start, p.steps + (e.id,), e.tgt) for p in frontier for e in out_edges[p.end]
        ]
    return set(frontier)


def count_paths(g: Graph, n: int) -> int:
    """Number of length-n paths by a vertex-weighted walk count (no enumeration)."""
    n = discrete_length(n)
    weight = {v: 1 for v in g.vertices}
    for _ in range(n):
        nxt = defaultdict(int)
        for e in g.edges:
            nxt[e.tgt] += weight[e.src]
        weight = {v: nxt[v] for v in g.vertices}
    return sum(weight.values())


def restrict_path(g: Graph, p: Path, sub: DiscreteTranslation) -> Path:
    if sub.total != len(p):
        raise GraphError(f"window over {sub.total} steps applied to a path of {len(p)}")
    here = p.start
    for e in p.steps[: sub.offset]:
        here = g.tgt(e)
    steps = p.steps[sub.offset : sub.offset + sub.length]
    end = here
    for e in steps:
        end = g.tgt(e)
    return Path(here, steps, end)


def glue_paths(p1: Path, p2: Path) -> Path:
    if p1.end != p2.start:
        raise GlueError(f"path ending at {p1.end!r} cannot glue to a path starting at {p2.start!r}")
    return Path(p1.start, p1.steps + p2.steps, p2.end)


class PathSheaf:
    """The Int_N-sheaf presented by a graph."""

    def __init__(self, graph: Graph):
        self.graph = graph

    def sections(self, n: int) -> set[Path]:
        return paths_of_length(self.graph, n)

    def restrict(self, p: Path, offset: int, length: int) -> Path:
        return restrict_path(self.graph, p, DiscreteTranslation(offset, length, len(p)))

    def glue(self, p1: Path, p2: Path) -> Path:
        return glue_paths(p1, p2)


@dataclass(frozen=True)
class GraphIso:
    graph: Graph
    vertex_map: dict
    edge_map: dict


def graph_of_sheaf(sheaf: PathSheaf) -> GraphIso:
    """Read a graph back off a discrete sheaf: vertices are 0-sections, edges 1-sections.

    Returns the graph together with the comparison maps from the original
    graph, so callers can verify the round trip is an isomorphism.
    """
    vertices = sheaf.sections(0)
    edges = []
    for path in sheaf.sections(1):
        src = sheaf.restrict(path, 0, 0)
        tgt = sheaf.restrict(path, 1, 0)
        edges.append(Edge(path, src, tgt, None))
    edges.sort(key=lambda e: repr(e.id))
    rebuilt = Graph(frozenset(vertices), tuple(edges))
    g = sheaf.graph
    vmap = {v: Path(v, (), v) for v in g.vertices}
    emap = {e.id: Path(e.src, (e.id,), e.tgt) for e in g.edges}
    return GraphIso(rebuilt, vmap, emap)


def is_isomorphism(g: Graph, h: Graph, vmap: Mapping, emap: Mapping) -> bool:
    if set(vmap) != set(g.vertices) or set(vmap.values()) != set(h.vertices):
        return False
    if len(set(vmap.values())) != len(vmap):
        return False
    if set(emap) != {e.id for e in g.edges} or len(set(emap.values())) != len(emap):
        return False
    if set(emap.values()) != {e.id for e in h.edges}:
        return False
    for e in g.edges:
        image = h.edge(emap[e.id])
        if image.src != vmap[e.src] or image.tgt != vmap[e.tgt]:
            return False
    return True


# -- text form -------------------------------------------------------------


def graph_to_text(g: Graph) -> str:
    lines = ["vertices"]
    lines += [f"  {v}" for v in sorted(map(str, g.vertices))]
    lines.append("edges")
    rows = sorted((str(e.id), str(e.src), str(e.tgt), "" if e.label is None else str(e.label)) for e in g.edges)
    lines += ["  " + "\t".join(row).rstrip("\t") for row in rows]
    return "\n".join(lines) + "\n"


def graph_from_text(text: str) -> Graph:
    """Inverse of :func:`graph_to_text` for graphs whose ids are plain strings."""
    vertices, edges, section = [], [], None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line in ("vertices", "edges"):
            section = line
            continue
        if section == "vertices":
            vertices.append(line)
        elif section == "edges":
            parts = raw.strip().split("\t")
            if len(parts) not in (3, 4):
                raise GraphError(f"line {lineno}: expected id, src, tgt[, label]")
            label = parts[3] if len(parts) == 4 else None
            edges.append(Edge(parts[0], parts[1], parts[2], label))
        else:
            raise GraphError(f"line {lineno}: content before a 'vertices' header")
    return Graph(frozenset(vertices), tuple(edges))
