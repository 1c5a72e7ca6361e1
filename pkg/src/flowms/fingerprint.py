"""Circular (Morgan/ECFP-family) fingerprints and Tanimoto similarity.

The hashing is a stable 64-bit FNV-1a over a text serialization of the
environment tuples, so bits are reproducible across platforms but NOT
bit-compatible with external toolkits; only the algorithmic family matches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch
from .molgraph import BOND_AROMATIC, MolecularGraph

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class Fingerprint:
    bits: np.ndarray  # (nbits,) bool

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=bool))

    @property
    def nbits(self) -> int:
        return self.bits.shape[0]

    def popcount(self) -> int:
        return int(self.bits.sum())

    def to_hex(self) -> str:
        return np.packbits(self.bits).tobytes().hex()

    @classmethod
    def from_hex(cls, text: str) -> "Fingerprint":
        raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
        return cls(np.unpackbits(raw).astype(bool))

    def to_float(self) -> np.ndarray:
        return self.bits.astype(np.float64)

    def __eq__(self, other) -> bool:
        return isinstance(other, Fingerprint) and np.array_equal(self.bits, other.bits)


def _initial_invariants(g: MolecularGraph) -> list[int]:
    invariants = []
    for i in range(g.n):
        nbrs = g.neighbors(i)
        aromatic = any(cat == BOND_AROMATIC for _, cat in nbrs)
        cats = ",".join(str(c) for c in sorted(cat for _, cat in nbrs))
        text = f"A|{g.atoms[i]}|{len(nbrs)}|{int(aromatic)}|{cats}"
        invariants.append(fnv1a(text.encode()))
    return invariants


def morgan_fingerprint(g: MolecularGraph, radius: int = 2, nbits: int = 2048) -> Fingerprint:
    """ECFP-style circular fingerprint over heavy-atom environments.

    Every environment identifier from rounds 0..radius is folded into the
    bitset by ``id % nbits``; the result is permutation-invariant.
    """
    bits = np.zeros(nbits, dtype=bool)
    invariants = _initial_invariants(g)
    neighbor_lists = [g.neighbors(i) for i in range(g.n)]
    for inv in invariants:
        bits[inv % nbits] = True
    for _ in range(radius):
        updated = []
        for i in range(g.n):
            pairs = sorted((cat, invariants[j]) for j, cat in neighbor_lists[i])
            text = f"R|{invariants[i]}|" + ";".join(f"{c}:{v}" for c, v in pairs)
            updated.append(fnv1a(text.encode()))
        invariants = updated
        for inv in invariants:
            bits[inv % nbits] = True
    return Fingerprint(bits)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """Intersection over union of two bitsets; 1.0 when both are empty."""
    if a.nbits != b.nbits:
        raise LengthMismatch(f"fingerprint lengths differ: {a.nbits} vs {b.nbits}")
    union = int(np.logical_or(a.bits, b.bits).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(a.bits, b.bits).sum()) / union


def dump_fingerprints(records, handle) -> None:
    """Write ``<id>\\t<hex>`` lines for an iterable of (id, Fingerprint)."""
    for ident, fp in records:
        handle.write(f"{ident}\t{fp.to_hex()}\n")


def load_fingerprints(handle) -> list[tuple[str, Fingerprint]]:
    records = []
    for line in handle:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        ident, hexpart = line.split("\t")
        records.append((ident, Fingerprint.from_hex(hexpart)))
    return records
