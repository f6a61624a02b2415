"""Separation and latent marginalization on chain (mixed) graphs."""

from __future__ import annotations

import logging
from collections import deque
from typing import Iterable

import networkx as nx

from causalphi.core.errors import GraphError, InvalidArgumentError
from causalphi.models.graphs import (
    ChainGraph,
    ChainMixedGraph,
    as_chain_graph,
    format_graph,
    parse_graph,
)

log = logging.getLogger(__name__)


def _vertex_set(G: ChainMixedGraph, vs: Iterable[str], name: str) -> frozenset[str]:
    vs = frozenset(vs)
    unknown = vs - set(G.vertices)
    if unknown:
        raise InvalidArgumentError(f"{name} mentions unknown vertices {sorted(unknown)}")
    return vs


def _triple(G: ChainMixedGraph, A, B, C) -> tuple[frozenset[str], frozenset[str], frozenset[str]]:
    A, B, C = _vertex_set(G, A, "A"), _vertex_set(G, B, "B"), _vertex_set(G, C, "C")
    if not A or not B:
        raise InvalidArgumentError("A and B must be nonempty")
    if A & B or A & C or B & C:
        raise InvalidArgumentError("A, B and the conditioning set must be disjoint")
    return A, B, C


# ── chain graph structure ─────────────────────────────


def chain_components(G: ChainMixedGraph) -> list[frozenset[str]]:
    return G.components()


def moralize(G: ChainMixedGraph) -> nx.Graph:
    """Skeleton plus an edge between any two parents of the same chain component."""
    G = as_chain_graph(G)
    moral = G.skeleton()
    for comp in G.components():
        parents = sorted({p for v in comp for p in G.parents(v)} - comp)
        for i, a in enumerate(parents):
            for b in parents[i + 1 :]:
                moral.add_edge(a, b)
    return moral


def ancestral_closure(G: ChainMixedGraph, A: Iterable[str]) -> frozenset[str]:
    """Smallest superset of A closed under parents and neighbours."""
    closed = set(_vertex_set(G, A, "A"))
    frontier = list(closed)
    while frontier:
        v = frontier.pop()
        for u in G.parents(v) | G.neighbours(v):
            if u not in closed:
                closed.add(u)
                frontier.append(u)
    return frozenset(closed)


def cg_separates(G: ChainMixedGraph, A: Iterable[str], B: Iterable[str], S: Iterable[str] = ()) -> bool:
    """Global chain Markov separation via the moral graph of the ancestral subgraph."""
    G = as_chain_graph(G)
    A, B, S = _triple(G, A, B, S)
    moral = moralize(G.subgraph(ancestral_closure(G, A | B | S)))
    moral.remove_nodes_from(S)
    reach = set()
    for a in A:
        if a not in reach:
            reach |= nx.node_connected_component(moral, a)
    return not (reach & B)


# ── c-separation ──────────────────────────────────────


def _steps(G: ChainMixedGraph, v: str) -> Iterable[tuple[str, str, bool, bool]]:
    """(kind, next vertex, arrowhead at v, arrowhead at next) for every edge at v."""
    for u in G.neighbours(v):
        yield "undirected", u, False, False
    for u in G.children(v):
        yield "directed", u, False, True
    for u in G.parents(v):
        yield "directed", u, True, False
    for u in G.spouses(v):
        yield "arc", u, True, True


def c_separates(G: ChainMixedGraph, A: Iterable[str], B: Iterable[str], C: Iterable[str] = ()) -> bool:
    """True iff no walk from A to B has every collider section meeting C and every other section avoiding it.

    Searches states (vertex, arrowhead entering the current section, section met C).
    """
    A, B, C = _triple(G, A, B, C)
    start = [(a, False, a in C) for a in sorted(A)]
    seen = set(start)
    queue = deque(start)
    while queue:
        v, head_in, hit = queue.popleft()
        if v in B and not hit:
            return False
        for kind, u, head_here, head_there in _steps(G, v):
            if kind == "undirected":
                nxt = (u, head_in, hit or u in C)
            else:
                collider = head_in and head_here
                if hit != collider:
                    continue
                nxt = (u, head_there, u in C)
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return True


# ── marginalization ───────────────────────────────────


class _EdgeSet:
    """Mutable working copy of a graph's edges during marginalization."""

    def __init__(self, G: ChainMixedGraph):
        self.undirected = set(G.undirected)
        self.directed = set(G.directed)
        self.arcs = set(G.arcs)

    def d(self, a: str, b: str) -> bool:
        return (a, b) in self.directed

    def u(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.undirected

    def arc(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.arcs

    def add(self, kind: str, a: str, b: str) -> bool:
        if a == b:
            return False
        if kind == "directed":
            edge, target = (a, b), self.directed
        else:
            edge, target = frozenset((a, b)), self.undirected if kind == "undirected" else self.arcs
        if edge in target:
            return False
        target.add(edge)
        return True


# tripath i ? m ? j  ->  edge generated between i and j
_TRIPATH_RULES = (
    (lambda E, i, m, j: E.d(m, i) and E.d(j, m), "directed", lambda i, j: (j, i)),
    (lambda E, i, m, j: E.d(m, i) and E.u(m, j), "directed", lambda i, j: (j, i)),
    (lambda E, i, m, j: E.arc(i, m) and E.u(m, j), "arc", lambda i, j: (i, j)),
    (lambda E, i, m, j: E.d(m, i) and E.d(m, j), "arc", lambda i, j: (i, j)),
    (lambda E, i, m, j: E.d(m, i) and E.arc(m, j), "arc", lambda i, j: (i, j)),
    (lambda E, i, m, j: E.u(i, m) and E.d(j, m), "directed", lambda i, j: (j, i)),
    (lambda E, i, m, j: E.u(i, m) and E.u(m, j), "undirected", lambda i, j: (i, j)),
)


def _collider_trislides(G: ChainMixedGraph, E: _EdgeSet, M: frozenset[str]) -> None:
    """m -> i -- ... -- k <- j gives j -> i; m -> i -- ... -- k <-> j gives i <-> j."""
    undirected = G.undirected_graph()
    additions = []
    for m in sorted(M):
        for i in sorted(G.children(m)):
            for k in nx.node_connected_component(undirected, i):
                for j in G.parents(k):
                    if j not in (m, i):
                        additions.append(("directed", j, i))
                for j in G.spouses(k):
                    if j != i:
                        additions.append(("arc", i, j))
    for kind, a, b in additions:
        E.add(kind, a, b)


def marginalize_cmg(G: ChainMixedGraph, M: Iterable[str]) -> ChainMixedGraph:
    """Chain mixed graph over the vertices outside M that keeps the marginal independences."""
    M = _vertex_set(G, M, "M")
    if not M:
        return G
    E = _EdgeSet(G)
    _collider_trislides(G, E, M)

    vertices = G.vertices
    changed = True
    while changed:
        changed = False
        for m in vertices:
            if m not in M:
                continue
            for i in vertices:
                for j in vertices:
                    if i in (j, m) or j == m:
                        continue
                    for rule, kind, ends in _TRIPATH_RULES:
                        if rule(E, i, m, j):
                            changed |= E.add(kind, *ends(i, j))

    keep = [v for v in vertices if v not in M]
    out = ChainMixedGraph(
        tuple(keep),
        frozenset(e for e in E.undirected if not (e & M)),
        frozenset(e for e in E.directed if not (set(e) & M)),
        frozenset(e for e in E.arcs if not (e & M)),
        check=False,
    )
    if out.has_semi_directed_cycle():
        log.warning("marginalizing %s produced a semi-directed cycle", sorted(M))
    return out


# ── split graphs ──────────────────────────────────────


def split_graph(n: int, latent: bool = False) -> ChainGraph:
    """X1..Xn pairwise undirected, Xi -> Yi, and W -> Yi for every i when ``latent``."""
    if n < 1:
        raise InvalidArgumentError("split graph needs n >= 1")
    xs = [f"X{i + 1}" for i in range(n)]
    ys = [f"Y{i + 1}" for i in range(n)]
    undirected = [(a, b) for k, a in enumerate(xs) for b in xs[k + 1 :]]
    directed = list(zip(xs, ys))
    if latent:
        directed += [("W", y) for y in ys]
    return as_chain_graph(ChainMixedGraph.build(undirected, directed, vertices=xs + ys))


def ncis_graph() -> ChainGraph:
    """P(x1) P(x2) P(y1 | x1, y2) P(y2)."""
    return as_chain_graph(
        ChainMixedGraph.build(directed=[("X1", "Y1"), ("Y2", "Y1")], vertices=["X1", "X2", "Y1", "Y2"])
    )


def ncii_graph() -> ChainGraph:
    """Q(x1) Q(x2) Σ_w Q(y1 | x1, w) Q(y2 | w) Q(w)."""
    return as_chain_graph(
        ChainMixedGraph.build(
            directed=[("X1", "Y1"), ("W", "Y1"), ("W", "Y2")],
            vertices=["X1", "X2", "Y1", "Y2", "W"],
        )
    )


# ── query files ───────────────────────────────────────


def _parse_query(body: str) -> tuple[list[str], list[str], list[str]]:
    if ";" not in body:
        raise GraphError(f"query {body!r} needs 'A ; B | C'")
    left, rest = body.split(";", 1)
    right, _, given = rest.partition("|")

    def labels(s: str) -> list[str]:
        return s.replace(",", " ").split()

    return labels(left), labels(right), labels(given)


def run_graph_queries(text: str) -> list[str]:
    """Build a graph from the edge lines, then run the directive lines in order.

    ``marginalize v...`` replaces the working graph and prints it;
    ``csep A ; B | C`` and ``cgsep A ; B | C`` print ``true`` or ``false``.
    """
    edges, directives = [], []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head = line.split(None, 1)[0]
        (directives if head in ("marginalize", "csep", "cgsep") else edges).append(line)
    G = parse_graph("\n".join(edges))
    out: list[str] = []
    for line in directives:
        head, _, body = line.partition(" ")
        if head == "marginalize":
            G = marginalize_cmg(G, body.replace(",", " ").split())
            out.append(format_graph(G).rstrip("\n"))
        elif head == "csep":
            out.append(str(c_separates(G, *_parse_query(body))).lower())
        else:
            out.append(str(cg_separates(G, *_parse_query(body))).lower())
    return out
