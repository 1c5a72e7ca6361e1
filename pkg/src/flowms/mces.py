"""Exact maximum common edge subgraph distance between molecular graphs.

A common edge is a g1 bond whose endpoints map (element-preserving, injective)
onto a g2 bond of the same category; the common subgraph may be disconnected.
Distance = |E1| + |E2| - 2 * common_edges.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field

from .errors import BudgetExceeded
from .molgraph import MolecularGraph


@dataclass(frozen=True)
class McesResult:
    distance: int
    common_edges: int
    mapping: dict[int, int] = field(default_factory=dict)
    is_lower_bound: bool = False


def _edge_count(g: MolecularGraph) -> int:
    return sum(1 for _ in g.edges())


def _adjacency(g: MolecularGraph) -> list[list[tuple[int, int]]]:
    return [g.neighbors(i) for i in range(g.n)]


def _edge_type(atoms, i, j, cat):
    a, b = atoms[i], atoms[j]
    return (a, b, cat) if a <= b else (b, a, cat)


def _bfs_order(adj, n):
    """Assignment order: BFS from the highest-degree atom, components in turn,
    so new atoms usually touch already-assigned ones and gains accrue early."""
    seen = [False] * n
    order = []
    for start in sorted(range(n), key=lambda i: -len(adj[i])):
        if seen[start]:
            continue
        queue = [start]
        seen[start] = True
        while queue:
            u = queue.pop(0)
            order.append(u)
            for v, _ in sorted(adj[u], key=lambda jc: -len(adj[jc[0]])):
                if not seen[v]:
                    seen[v] = True
                    queue.append(v)
    return order


def mces_distance(
    g1: MolecularGraph,
    g2: MolecularGraph,
    node_budget: int = 25,
    threshold: int | None = None,
) -> McesResult:
    """Branch-and-bound MCES distance.

    The bound at each node sums, per (element pair, bond category) type, the
    smaller of the undecided edge counts on either side; this dominates the
    plain remaining-degree-sum bound while staying cheap to maintain.

    With ``threshold`` set, the search may stop once the distance is provably
    >= threshold and return that bound with ``is_lower_bound=True``.
    """
    if max(g1.n, g2.n) > node_budget:
        raise BudgetExceeded(f"graph larger than node budget {node_budget}")

    e1, e2 = _edge_count(g1), _edge_count(g2)
    adj1, adj2 = _adjacency(g1), _adjacency(g2)

    by_element: dict[str, list[int]] = defaultdict(list)
    for j, elem in enumerate(g2.atoms):
        by_element[elem].append(j)

    order = _bfs_order(adj1, g1.n)
    position = {atom: k for k, atom in enumerate(order)}

    # future1[k]: typed counts of g1 edges with >= 1 endpoint at position >= k
    future1: list[dict] = [dict() for _ in range(g1.n + 1)]
    for k in range(g1.n - 1, -1, -1):
        counts = dict(future1[k + 1])
        for i, j, cat in g1.edges():
            if max(position[i], position[j]) == k:
                key = _edge_type(g1.atoms, i, j, cat)
                counts[key] = counts.get(key, 0) + 1
        future1[k] = counts

    # future2: typed counts of g2 edges with >= 1 unused endpoint (all, at root)
    future2: dict = defaultdict(int)
    for i, j, cat in g2.edges():
        future2[_edge_type(g2.atoms, i, j, cat)] += 1

    def bound(k: int) -> int:
        total = 0
        for key, count in future1[k].items():
            other = future2.get(key, 0)
            total += count if count < other else other
        return total

    root_bound = bound(0)
    if threshold is not None and e1 + e2 - 2 * root_bound >= threshold:
        return McesResult(e1 + e2 - 2 * root_bound, root_bound, {}, is_lower_bound=True)

    best_common = -1
    best_mapping: dict[int, int] = {}
    mapping: dict[int, int] = {}
    used = [False] * g2.n

    def search(k: int, common: int) -> bool:
        """Returns True once the incumbent is provably optimal."""
        nonlocal best_common, best_mapping
        if k == g1.n:
            if common > best_common:
                best_common = common
                best_mapping = dict(mapping)
            return best_common >= root_bound
        if common + bound(k) <= best_common:
            return False
        atom = order[k]
        candidates = []
        for w in by_element[g1.atoms[atom]]:
            if used[w]:
                continue
            gain = 0
            for j, cat in adj1[atom]:
                img = mapping.get(j)
                if img is not None and g2.bonds[w, img, cat]:
                    gain += 1
            # tie-break toward high-degree images so the greedy descent seeds
            # a strong incumbent (pure heuristic, never affects exactness)
            candidates.append((-gain, -len(adj2[w]), w))
        for neg_gain, _, w in sorted(candidates):
            mapping[atom] = w
            used[w] = True
            decided = []
            for v, cat in adj2[w]:
                if used[v]:
                    key = _edge_type(g2.atoms, w, v, cat)
                    future2[key] -= 1
                    decided.append(key)
            done = search(k + 1, common - neg_gain)
            for key in decided:
                future2[key] += 1
            used[w] = False
            del mapping[atom]
            if done:
                return True
        return search(k + 1, common)  # leave this atom unmapped

    search(0, 0)
    return McesResult(e1 + e2 - 2 * best_common, best_common, best_mapping)


def mces_bruteforce(g1: MolecularGraph, g2: MolecularGraph) -> McesResult:
    """Exhaustive enumeration oracle; only feasible for <= 8 atoms per graph.

    Every partial injection extends to an element-maximal one without losing
    common edges, so enumerating per-element maximal matchings is exhaustive.
    """
    if max(g1.n, g2.n) > 8:
        raise BudgetExceeded("brute force limited to 8 atoms")

    groups1: dict[str, list[int]] = defaultdict(list)
    groups2: dict[str, list[int]] = defaultdict(list)
    for i, elem in enumerate(g1.atoms):
        groups1[elem].append(i)
    for j, elem in enumerate(g2.atoms):
        groups2[elem].append(j)

    shared = sorted(set(groups1) & set(groups2))
    per_element = []
    for elem in shared:
        left, right = groups1[elem], groups2[elem]
        options = []
        if len(left) <= len(right):
            for images in itertools.permutations(right, len(left)):
                options.append(list(zip(left, images)))
        else:
            for chosen in itertools.combinations(left, len(right)):
                for images in itertools.permutations(right):
                    options.append(list(zip(chosen, images)))
        per_element.append(options)

    e1, e2 = _edge_count(g1), _edge_count(g2)
    edges1 = list(g1.edges())
    best_common = 0
    best_mapping: dict[int, int] = {}
    for combo in itertools.product(*per_element) if per_element else [()]:
        mapping = {i: w for pairs in combo for i, w in pairs}
        common = 0
        for i, j, cat in edges1:
            wi, wj = mapping.get(i), mapping.get(j)
            if wi is not None and wj is not None and g2.bonds[wi, wj, cat]:
                common += 1
        if common > best_common:
            best_common = common
            best_mapping = mapping
    return McesResult(e1 + e2 - 2 * best_common, best_common, best_mapping)
