"""Chain graphs and chain mixed graphs.

Undirected edges and arcs are stored as frozensets of two labels, directed
edges as ``(tail, head)`` pairs. Vertex order is kept for printing only;
equality ignores it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import networkx as nx

from causalphi.core.errors import GraphError

UNDIRECTED = "--"
DIRECTED = "->"
ARC = "<->"


def _pair(a: str, b: str) -> frozenset[str]:
    if a == b:
        raise GraphError(f"self-loop on {a!r}")
    return frozenset((a, b))


@dataclass(frozen=True, eq=False)
class ChainMixedGraph:
    vertices: tuple[str, ...]
    undirected: frozenset[frozenset[str]] = frozenset()
    directed: frozenset[tuple[str, str]] = frozenset()
    arcs: frozenset[frozenset[str]] = frozenset()
    check: bool = True

    def __post_init__(self):
        vertices = tuple(dict.fromkeys(self.vertices))
        undirected = frozenset(_pair(*sorted(e)) for e in self.undirected)
        directed = frozenset((a, b) for a, b in self.directed)
        arcs = frozenset(_pair(*sorted(e)) for e in self.arcs)
        if any(a == b for a, b in directed):
            raise GraphError("self-loop in directed edges")
        known = set(vertices)
        used = {v for e in undirected | arcs for v in e} | {v for e in directed for v in e}
        if used - known:
            raise GraphError(f"edges mention undeclared vertices {sorted(used - known)}")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "undirected", undirected)
        object.__setattr__(self, "directed", directed)
        object.__setattr__(self, "arcs", arcs)
        if self.check and self.has_semi_directed_cycle():
            raise GraphError("graph has a semi-directed cycle")

    # ── builders ──

    @classmethod
    def build(
        cls,
        undirected: Iterable[tuple[str, str]] = (),
        directed: Iterable[tuple[str, str]] = (),
        arcs: Iterable[tuple[str, str]] = (),
        vertices: Iterable[str] = (),
        check: bool = True,
    ) -> "ChainMixedGraph":
        undirected, directed, arcs = list(undirected), list(directed), list(arcs)
        order = list(vertices)
        for a, b in undirected + directed + arcs:
            order += [a, b]
        return cls(
            tuple(order),
            frozenset(_pair(a, b) for a, b in undirected),
            frozenset(directed),
            frozenset(_pair(a, b) for a, b in arcs),
            check=check,
        )

    # ── adjacency ──

    def neighbours(self, v: str) -> set[str]:
        return {u for e in self.undirected if v in e for u in e if u != v}

    def parents(self, v: str) -> set[str]:
        return {a for a, b in self.directed if b == v}

    def children(self, v: str) -> set[str]:
        return {b for a, b in self.directed if a == v}

    def spouses(self, v: str) -> set[str]:
        return {u for e in self.arcs if v in e for u in e if u != v}

    def undirected_graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.vertices)
        g.add_edges_from(tuple(e) for e in self.undirected)
        return g

    def skeleton(self) -> nx.Graph:
        g = self.undirected_graph()
        g.add_edges_from(self.directed)
        g.add_edges_from(tuple(e) for e in self.arcs)
        return g

    def components(self) -> list[frozenset[str]]:
        """Connected components of the undirected part, in vertex order."""
        comps = [frozenset(c) for c in nx.connected_components(self.undirected_graph())]
        rank = {v: i for i, v in enumerate(self.vertices)}
        return sorted(comps, key=lambda c: min(rank[v] for v in c))

    def has_semi_directed_cycle(self) -> bool:
        """A directed edge inside a component, or a cycle among components."""
        owner = {v: i for i, comp in enumerate(self.components()) for v in comp}
        quotient = nx.DiGraph()
        quotient.add_nodes_from(set(owner.values()))
        for a, b in self.directed:
            if owner[a] == owner[b]:
                return True
            quotient.add_edge(owner[a], owner[b])
        return not nx.is_directed_acyclic_graph(quotient)

    def subgraph(self, keep: Iterable[str]) -> "ChainMixedGraph":
        keep = set(keep)
        return type(self)._from_parts(
            tuple(v for v in self.vertices if v in keep),
            frozenset(e for e in self.undirected if e <= keep),
            frozenset(e for e in self.directed if set(e) <= keep),
            frozenset(e for e in self.arcs if e <= keep),
            check=False,
        )

    @classmethod
    def _from_parts(cls, vertices, undirected, directed, arcs, check=True) -> "ChainMixedGraph":
        if cls is ChainGraph:
            if arcs:
                raise GraphError("a chain graph has no arcs")
            return ChainGraph(vertices, undirected, directed, check=check)
        return cls(vertices, undirected, directed, arcs, check=check)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ChainMixedGraph):
            return NotImplemented
        return (
            set(self.vertices) == set(other.vertices)
            and self.undirected == other.undirected
            and self.directed == other.directed
            and self.arcs == other.arcs
        )

    def __hash__(self) -> int:
        return hash((frozenset(self.vertices), self.undirected, self.directed, self.arcs))

    def __str__(self) -> str:
        return format_graph(self)


@dataclass(frozen=True, eq=False)
class ChainGraph(ChainMixedGraph):
    """Chain mixed graph without arcs."""

    def __post_init__(self):
        if self.arcs:
            raise GraphError("a chain graph has no arcs")
        super().__post_init__()


def as_chain_graph(G: ChainMixedGraph) -> ChainGraph:
    if isinstance(G, ChainGraph):
        return G
    if G.arcs:
        raise GraphError("graph has arcs; not a chain graph")
    return ChainGraph(G.vertices, G.undirected, G.directed)


# ── text format ──────────────────────────────────────


def parse_graph(text: str) -> ChainMixedGraph:
    """One edge per line (``a -- b``, ``a -> b``, ``a <-> b``); a bare label declares a vertex."""
    undirected, directed, arcs, vertices = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) == 1:
            vertices.append(parts[0])
        elif len(parts) == 3 and parts[1] == UNDIRECTED:
            undirected.append((parts[0], parts[2]))
        elif len(parts) == 3 and parts[1] == DIRECTED:
            directed.append((parts[0], parts[2]))
        elif len(parts) == 3 and parts[1] == ARC:
            arcs.append((parts[0], parts[2]))
        else:
            raise GraphError(f"line {lineno}: cannot parse edge {line!r}")
    G = ChainMixedGraph.build(undirected, directed, arcs, vertices)
    return G if G.arcs else as_chain_graph(G)


def format_graph(G: ChainMixedGraph) -> str:
    lines = [f"{a} {UNDIRECTED} {b}" for a, b in sorted(tuple(sorted(e)) for e in G.undirected)]
    lines += [f"{a} {DIRECTED} {b}" for a, b in sorted(G.directed)]
    lines += [f"{a} {ARC} {b}" for a, b in sorted(tuple(sorted(e)) for e in G.arcs)]
    touched = G.skeleton()
    lines += [v for v in G.vertices if touched.degree(v) == 0]
    return "\n".join(lines) + "\n" if lines else ""
