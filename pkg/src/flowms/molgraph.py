"""Molecular graph data model, SMILES-subset parsing, canonicalization, validity.

Graphs are heavy-atom only: hydrogens in input SMILES are dropped and bond
categories live on an n x n x 5 one-hot tensor over
(none, single, double, triple, aromatic).
"""

from __future__ import annotations

import re
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataError,
    EmptyInput,
    InvalidToken,
    UnclosedBranch,
    UnclosedRing,
    UnsupportedElement,
)

BOND_NONE, BOND_SINGLE, BOND_DOUBLE, BOND_TRIPLE, BOND_AROMATIC = range(5)
NUM_BOND_TYPES = 5
BOND_NAMES = ("none", "single", "double", "triple", "aromatic")

ELEMENTS = ("C", "N", "O", "S", "P", "F", "Cl", "Br", "I")
ELEMENT_INDEX = {e: i for i, e in enumerate(ELEMENTS)}
AROMATIC_ELEMENTS = frozenset({"C", "N", "O", "S", "P"})
MAX_VALENCE = {"C": 4, "N": 3, "O": 2, "S": 6, "P": 5, "F": 1, "Cl": 1, "Br": 1, "I": 1}

# order used when expanding a formula into an atom list: carbon first, rest alphabetical
_ATOM_LIST_ORDER = ("C", "Br", "Cl", "F", "I", "N", "O", "P", "S")

_BOND_SYMBOLS = {"-": BOND_SINGLE, "=": BOND_DOUBLE, "#": BOND_TRIPLE, ":": BOND_AROMATIC}


@dataclass(frozen=True)
class Formula:
    """Heavy-atom element counts plus an informational hydrogen count."""

    element_counts: dict[str, int]
    hydrogen_count: int = 0

    def __post_init__(self):
        for elem, count in self.element_counts.items():
            if elem not in ELEMENT_INDEX:
                raise DataError(f"unsupported element {elem!r} in formula")
            if count < 0:
                raise DataError(f"negative count for {elem!r}")
        if self.heavy_atom_count < 1:
            raise DataError("formula must contain at least one heavy atom")
        if self.hydrogen_count < 0:
            raise DataError("negative hydrogen count")

    @property
    def heavy_atom_count(self) -> int:
        return sum(self.element_counts.values())

    def atom_list(self) -> list[str]:
        """Expand to a deterministic atom list (C first, rest alphabetical)."""
        out = []
        for elem in _ATOM_LIST_ORDER:
            out.extend([elem] * self.element_counts.get(elem, 0))
        return out

    def __str__(self) -> str:
        parts = []
        for elem in ("C", "H"):
            count = self.hydrogen_count if elem == "H" else self.element_counts.get(elem, 0)
            if count:
                parts.append(elem + (str(count) if count > 1 else ""))
        for elem in sorted(self.element_counts):
            if elem == "C":
                continue
            count = self.element_counts[elem]
            if count:
                parts.append(elem + (str(count) if count > 1 else ""))
        return "".join(parts)


_FORMULA_TOKEN = re.compile(r"([A-Z][a-z]?)(\d*)")


def parse_formula(text: str) -> Formula:
    """Parse a Hill-style formula string like ``C9H11NO2``."""
    text = text.strip()
    if not text:
        raise DataError("empty formula")
    pos = 0
    counts: Counter[str] = Counter()
    hydrogens = 0
    while pos < len(text):
        match = _FORMULA_TOKEN.match(text, pos)
        if match is None or not match.group(1):
            raise DataError(f"bad formula {text!r} at position {pos}")
        elem = match.group(1)
        count = int(match.group(2)) if match.group(2) else 1
        if elem == "H":
            hydrogens += count
        elif elem in ELEMENT_INDEX:
            counts[elem] += count
        else:
            raise DataError(f"unsupported element {elem!r} in formula {text!r}")
        pos = match.end()
    return Formula(dict(counts), hydrogens)


@dataclass
class MolecularGraph:
    """Atoms plus a symmetric one-hot bond tensor over the 5 bond categories."""

    atoms: tuple[str, ...]
    bonds: np.ndarray  # (n, n, 5) one-hot uint8

    def __post_init__(self):
        self.atoms = tuple(self.atoms)
        self.bonds = np.asarray(self.bonds, dtype=np.uint8)
        n = len(self.atoms)
        if self.bonds.shape != (n, n, NUM_BOND_TYPES):
            raise ValueError(f"bond tensor shape {self.bonds.shape} != ({n}, {n}, 5)")

    @property
    def n(self) -> int:
        return len(self.atoms)

    @classmethod
    def from_category_matrix(cls, atoms, categories) -> "MolecularGraph":
        categories = np.asarray(categories, dtype=np.int64)
        n = len(atoms)
        bonds = np.zeros((n, n, NUM_BOND_TYPES), dtype=np.uint8)
        idx = np.indices((n, n))
        bonds[idx[0], idx[1], categories] = 1
        return cls(tuple(atoms), bonds)

    @classmethod
    def from_edges(cls, atoms, edges) -> "MolecularGraph":
        """Build from ``(i, j, category)`` triples; unlisted pairs get `none`."""
        n = len(atoms)
        cats = np.zeros((n, n), dtype=np.int64)
        for i, j, cat in edges:
            if i == j:
                raise ValueError("self-bonds are not allowed")
            cats[i, j] = cat
            cats[j, i] = cat
        return cls.from_category_matrix(atoms, cats)

    def category_matrix(self) -> np.ndarray:
        return self.bonds.argmax(axis=2)

    def bond_category(self, i: int, j: int) -> int:
        return int(self.bonds[i, j].argmax())

    def edges(self):
        """Yield ``(i, j, category)`` for every real bond with i < j."""
        cats = self.category_matrix()
        for i, j in zip(*np.nonzero(np.triu(cats, k=1))):
            yield int(i), int(j), int(cats[i, j])

    def neighbors(self, i: int) -> list[tuple[int, int]]:
        """Neighbors of atom i as ``(j, category)`` pairs."""
        cats = self.bonds[i].argmax(axis=1)
        return [(int(j), int(cats[j])) for j in np.nonzero(cats)[0]]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, MolecularGraph)
            and self.atoms == other.atoms
            and np.array_equal(self.bonds, other.bonds)
        )


@dataclass(frozen=True)
class ValidityReport:
    valence_ok: bool
    connected: bool
    per_atom_violations: list[tuple[int, int, int]] = field(default_factory=list)


def assert_graph_invariants(g: MolecularGraph) -> None:
    """Raise if the bond tensor breaks a type invariant (test helper)."""
    if not np.array_equal(g.bonds, g.bonds.transpose(1, 0, 2)):
        raise AssertionError("bond tensor is not symmetric")
    if not np.array_equal(g.bonds.sum(axis=2), np.ones((g.n, g.n), dtype=np.uint8)):
        raise AssertionError("bond tensor is not one-hot")
    if g.n and not np.array_equal(
        g.bonds[np.arange(g.n), np.arange(g.n)].argmax(axis=1), np.zeros(g.n, dtype=np.int64)
    ):
        raise AssertionError("diagonal must be one-hot at `none`")


# ---------------------------------------------------------------------------
# SMILES parsing
# ---------------------------------------------------------------------------

_ORGANIC_UPPER = {"C", "N", "O", "S", "P", "F", "I"}  # Cl/Br handled as two-letter
_ORGANIC_AROMATIC = {"c", "n", "o", "s", "p"}


class _Tok:
    ATOM = "atom"
    BOND = "bond"
    OPEN = "open"
    CLOSE = "close"
    RING = "ring"
    DOT = "dot"


def _parse_bracket(text: str, start: int):
    """Parse a bracket atom starting at ``text[start] == '['``."""
    i = start + 1
    if i >= len(text):
        raise InvalidToken("unterminated bracket atom", start)
    ch = text[i]
    if ch.isdigit():
        raise InvalidToken("isotope labels are not supported", i)
    aromatic = False
    if ch in _ORGANIC_AROMATIC:
        elem = ch.upper()
        aromatic = True
        i += 1
    elif ch.isupper():
        if i + 1 < len(text) and text[i + 1].islower() and text[i + 1] != "h":
            elem = text[i : i + 2]
            i += 2
        else:
            elem = ch
            i += 1
    else:
        raise InvalidToken(f"unexpected {ch!r} in bracket atom", i)
    if elem != "H" and elem not in ELEMENT_INDEX:
        raise UnsupportedElement(f"element {elem!r} is not supported", start)
    # optional hydrogen count: recorded nowhere, heavy-atom graphs drop it
    if i < len(text) and text[i] == "H" and elem != "H":
        i += 1
        while i < len(text) and text[i].isdigit():
            i += 1
    if i >= len(text):
        raise InvalidToken("unterminated bracket atom", start)
    ch = text[i]
    if ch != "]":
        if ch in "+-":
            raise InvalidToken("charges are not supported", i)
        if ch == "@":
            raise InvalidToken("stereochemistry is not supported", i)
        if ch == ":":
            raise InvalidToken("atom classes are not supported", i)
        raise InvalidToken(f"unexpected {ch!r} in bracket atom", i)
    return (elem, aromatic, elem == "H"), i + 1


def _tokenize(text: str):
    """Yield ``(kind, value, offset)`` triples; offsets are byte positions."""
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "[":
            atom, end = _parse_bracket(text, i)
            yield _Tok.ATOM, atom, i
            i = end
        elif ch in ("C", "B") and i + 1 < n and text[i : i + 2] in ("Cl", "Br"):
            yield _Tok.ATOM, (text[i : i + 2], False, False), i
            i += 2
        elif ch in _ORGANIC_UPPER:
            yield _Tok.ATOM, (ch, False, False), i
            i += 1
        elif ch in _ORGANIC_AROMATIC:
            yield _Tok.ATOM, (ch.upper(), True, False), i
            i += 1
        elif ch in ("B", "b"):
            raise UnsupportedElement("element 'B' is not supported", i)
        elif ch in _BOND_SYMBOLS:
            yield _Tok.BOND, _BOND_SYMBOLS[ch], i
            i += 1
        elif ch == "(":
            yield _Tok.OPEN, None, i
            i += 1
        elif ch == ")":
            yield _Tok.CLOSE, None, i
            i += 1
        elif ch.isdigit():
            yield _Tok.RING, int(ch), i
            i += 1
        elif ch == "%":
            if i + 2 >= n or not text[i + 1 : i + 3].isdigit():
                raise InvalidToken("'%' must be followed by two digits", i)
            yield _Tok.RING, int(text[i + 1 : i + 3]), i
            i += 3
        elif ch == ".":
            yield _Tok.DOT, None, i
            i += 1
        elif ch in "/\\@":
            raise InvalidToken("stereochemistry is not supported", i)
        elif ch in "+-":
            raise InvalidToken("charges are not supported", i)
        else:
            raise InvalidToken(f"unexpected character {ch!r}", i)


def parse_smiles(text: str) -> MolecularGraph:
    """Parse a SMILES string (supported subset) into a heavy-atom graph.

    Aromatic lowercase atoms bonded to each other default to the aromatic
    category; explicit bond symbols override.  Hydrogens (bracket counts and
    explicit ``[H]`` atoms) are silently dropped.
    """
    if not text or not text.strip():
        raise EmptyInput("empty SMILES input", 0)

    atoms: list[str] = []
    aromatic_flags: list[bool] = []
    edge_cats: dict[tuple[int, int], int] = {}
    prev: int | None = None
    pending: int | None = None
    branch_stack: list[tuple[int, int]] = []  # (atom index, offset of '(')
    ring_open: dict[int, tuple[int, int | None, int]] = {}

    def add_edge(i: int, j: int, cat: int, offset: int) -> None:
        key = (min(i, j), max(i, j))
        if key in edge_cats:
            raise InvalidToken("duplicate bond between atoms", offset)
        edge_cats[key] = cat

    for kind, value, offset in _tokenize(text):
        if kind == _Tok.ATOM:
            elem, aromatic, is_hydrogen = value
            if is_hydrogen:
                pending = None
                continue
            idx = len(atoms)
            atoms.append(elem)
            aromatic_flags.append(aromatic)
            if prev is not None:
                if pending is not None:
                    cat = pending
                elif aromatic and aromatic_flags[prev]:
                    cat = BOND_AROMATIC
                else:
                    cat = BOND_SINGLE
                add_edge(prev, idx, cat, offset)
            pending = None
            prev = idx
        elif kind == _Tok.BOND:
            if pending is not None:
                raise InvalidToken("two bond symbols in a row", offset)
            if prev is None:
                raise InvalidToken("bond symbol with no preceding atom", offset)
            pending = value
        elif kind == _Tok.OPEN:
            if prev is None:
                raise InvalidToken("branch with no preceding atom", offset)
            if pending is not None:
                raise InvalidToken("bond symbol before branch", offset)
            branch_stack.append((prev, offset))
        elif kind == _Tok.CLOSE:
            if not branch_stack:
                raise InvalidToken("unmatched ')'", offset)
            if pending is not None:
                raise InvalidToken("dangling bond before ')'", offset)
            prev = branch_stack.pop()[0]
        elif kind == _Tok.RING:
            if prev is None:
                raise InvalidToken("ring marker with no preceding atom", offset)
            if value in ring_open:
                other, other_bond, _ = ring_open.pop(value)
                if other == prev:
                    raise InvalidToken("ring bond to the same atom", offset)
                if other_bond is not None and pending is not None and other_bond != pending:
                    raise InvalidToken("conflicting ring bond symbols", offset)
                cat = other_bond if other_bond is not None else pending
                if cat is None:
                    if aromatic_flags[prev] and aromatic_flags[other]:
                        cat = BOND_AROMATIC
                    else:
                        cat = BOND_SINGLE
                add_edge(prev, other, cat, offset)
            else:
                ring_open[value] = (prev, pending, offset)
            pending = None
        elif kind == _Tok.DOT:
            if pending is not None:
                raise InvalidToken("bond symbol before '.'", offset)
            prev = None

    if branch_stack:
        raise UnclosedBranch("unclosed branch", branch_stack[-1][1])
    if ring_open:
        first = min(ring_open.values(), key=lambda item: item[2])
        raise UnclosedRing("unclosed ring", first[2])
    if pending is not None:
        raise InvalidToken("dangling bond at end of input", len(text) - 1)
    if not atoms:
        raise EmptyInput("no heavy atoms in input", 0)

    return MolecularGraph.from_edges(atoms, [(i, j, c) for (i, j), c in edge_cats.items()])


# ---------------------------------------------------------------------------
# Canonicalization
# ---------------------------------------------------------------------------


def _dense_ranks(keys) -> list[int]:
    order = sorted(set(keys))
    lookup = {k: r for r, k in enumerate(order)}
    return [lookup[k] for k in keys]


def _refine(ranks, adjacency) -> list[int]:
    """Iterate neighborhood refinement until the partition stabilizes."""
    n = len(ranks)
    while True:
        keys = [
            (ranks[i], tuple(sorted((cat, ranks[j]) for j, cat in adjacency[i])))
            for i in range(n)
        ]
        new = _dense_ranks(keys)
        if len(set(new)) == len(set(ranks)):
            return new
        ranks = new


def _aromatic_atom_flags(g: MolecularGraph) -> list[bool]:
    cats = g.category_matrix()
    has_aromatic = (cats == BOND_AROMATIC).any(axis=1)
    return [bool(has_aromatic[i]) and g.atoms[i] in AROMATIC_ELEMENTS for i in range(g.n)]


def _emit_component(elements, lowercase, adjacency, ranks) -> str:
    """Write one connected component given distinct per-atom ranks."""
    n = len(elements)
    by_rank = {r: i for i, r in enumerate(ranks)}
    start = by_rank[min(ranks)]

    def bond_str(cat: int, i: int, j: int) -> str:
        if cat == BOND_SINGLE:
            return "-" if lowercase[i] and lowercase[j] else ""
        if cat == BOND_DOUBLE:
            return "="
        if cat == BOND_TRIPLE:
            return "#"
        return "" if lowercase[i] and lowercase[j] else ":"

    # pass 1: classify tree vs ring edges; the ring opener is the endpoint
    # entered first, so emission (same traversal) sees the digit opened first
    visited = [False] * n
    tree_children: list[list[int]] = [[] for _ in range(n)]
    ring_openings: list[list[int]] = [[] for _ in range(n)]
    ring_edges: set[tuple[int, int]] = set()

    def classify(u: int, parent: int) -> None:
        visited[u] = True
        for v, _cat in sorted(adjacency[u], key=lambda jc: ranks[jc[0]]):
            if v == parent:
                continue
            if visited[v]:
                key = (min(u, v), max(u, v))
                if key not in ring_edges:
                    ring_edges.add(key)
                    ring_openings[v].append(u)
            else:
                tree_children[u].append(v)
                classify(v, u)

    classify(start, -1)

    # pass 2: emit with ring digits allocated in opening order
    digits: dict[tuple[int, int], int] = {}
    active: set[int] = set()

    def alloc() -> int:
        d = 1
        while d in active:
            d += 1
        if d > 99:
            raise ValueError("too many simultaneously open rings")
        active.add(d)
        return d

    def digit_str(d: int) -> str:
        return str(d) if d < 10 else f"%{d:02d}"

    def atom_str(u: int) -> str:
        return elements[u].lower() if lowercase[u] else elements[u]

    def cat_of(u: int, v: int) -> int:
        for j, cat in adjacency[u]:
            if j == v:
                return cat
        raise KeyError((u, v))

    out: list[str] = []

    def walk(u: int) -> None:
        out.append(atom_str(u))
        closers = sorted(
            (v for v in range(n) if (min(u, v), max(u, v)) in digits), key=lambda v: digits[(min(u, v), max(u, v))]
        )
        for v in closers:
            d = digits.pop((min(u, v), max(u, v)))
            active.discard(d)
            out.append(digit_str(d))
        for v in ring_openings[u]:
            d = alloc()
            digits[(min(u, v), max(u, v))] = d
            out.append(bond_str(cat_of(u, v), u, v) + digit_str(d))
        children = tree_children[u]
        for idx, v in enumerate(children):
            sym = bond_str(cat_of(u, v), u, v)
            if idx < len(children) - 1:
                out.append("(" + sym)
                walk(v)
                out.append(")")
            else:
                out.append(sym)
                walk(v)

    walk(start)
    return "".join(out)


def _canonical_component(elements, lowercase, adjacency) -> str:
    n = len(elements)
    init_keys = [
        (elements[i], len(adjacency[i]), tuple(sorted(cat for _, cat in adjacency[i])))
        for i in range(n)
    ]
    best: list[str | None] = [None]

    def search(ranks) -> None:
        counts = Counter(ranks)
        tied = sorted(r for r, c in counts.items() if c > 1)
        if not tied:
            s = _emit_component(elements, lowercase, adjacency, ranks)
            if best[0] is None or s < best[0]:
                best[0] = s
            return
        target = tied[0]
        for atom in [i for i in range(n) if ranks[i] == target]:
            keyed = [(ranks[i], 0 if i == atom else 1) for i in range(n)]
            search(_refine(_dense_ranks(keyed), adjacency))

    search(_refine(_dense_ranks(init_keys), adjacency))
    return best[0]


def _components(g: MolecularGraph) -> list[list[int]]:
    cats = g.category_matrix()
    seen = [False] * g.n
    comps = []
    for s in range(g.n):
        if seen[s]:
            continue
        comp = []
        queue = deque([s])
        seen[s] = True
        while queue:
            u = queue.popleft()
            comp.append(u)
            for v in np.nonzero(cats[u])[0]:
                if not seen[v]:
                    seen[v] = True
                    queue.append(int(v))
        comps.append(comp)
    return comps


def write_canonical(g: MolecularGraph) -> str:
    """Deterministic, permutation-invariant SMILES for a molecular graph.

    Disconnected graphs are written as '.'-joined component strings in sorted
    order, so the result stays usable as a deduplication key.
    """
    if g.n == 0:
        raise ValueError("cannot canonicalize an empty graph")
    lowercase = _aromatic_atom_flags(g)
    parts = []
    for comp in _components(g):
        local = {a: i for i, a in enumerate(comp)}
        elements = [g.atoms[a] for a in comp]
        flags = [lowercase[a] for a in comp]
        adjacency = [
            [(local[j], cat) for j, cat in g.neighbors(a) if j in local] for a in comp
        ]
        parts.append(_canonical_component(elements, flags, adjacency))
    return ".".join(sorted(parts))


def is_same_molecule(g1: MolecularGraph, g2: MolecularGraph) -> bool:
    return write_canonical(g1) == write_canonical(g2)


# ---------------------------------------------------------------------------
# Validity and misc operations
# ---------------------------------------------------------------------------

# valence contribution per category, doubled to stay integral (aromatic = 1.5)
_DOUBLED_ORDER = np.array([0, 2, 4, 6, 3], dtype=np.int64)


def validate(g: MolecularGraph) -> ValidityReport:
    """Check valences (bond-order sums, aromatic 1.5, ceil) and connectivity."""
    counts = g.bonds.sum(axis=1, dtype=np.int64)  # (n, 5) neighbor category counts
    used = (counts @ _DOUBLED_ORDER + 1) // 2
    violations = []
    for i in range(g.n):
        cap = MAX_VALENCE[g.atoms[i]]
        if used[i] > cap:
            violations.append((i, int(used[i]), cap))
    connected = len(_components(g)) == 1 if g.n else False
    return ValidityReport(
        valence_ok=not violations, connected=connected, per_atom_violations=violations
    )


def formula_of(g: MolecularGraph) -> Formula:
    return Formula(dict(Counter(g.atoms)), hydrogen_count=0)


def permute(g: MolecularGraph, perm) -> MolecularGraph:
    """Relabel atoms so that old index i becomes ``perm[i]``."""
    perm = np.asarray(perm, dtype=np.int64)
    n = g.n
    atoms = [""] * n
    for i in range(n):
        atoms[perm[i]] = g.atoms[i]
    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n)
    bonds = g.bonds[np.ix_(inv, inv)]
    return MolecularGraph(tuple(atoms), bonds)


def load_smiles_corpus(path) -> list[tuple[int, str, str]]:
    """Read a corpus file: one ``<smiles>`` or ``<smiles>\\t<id>`` per line.

    Returns ``(line number, smiles, id)`` records; '#' lines are skipped and a
    missing id defaults to the line number.
    """
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            smiles = fields[0].strip()
            ident = fields[1].strip() if len(fields) > 1 and fields[1].strip() else str(lineno)
            records.append((lineno, smiles, ident))
    return records
