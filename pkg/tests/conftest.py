import os

import numpy as np
import pytest

from flowms import molgraph as mg

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
TOY_CORPUS = os.path.join(DATA_DIR, "toy50.smi")


@pytest.fixture
def toy_corpus_path():
    return TOY_CORPUS


def random_molecule(rng: np.random.Generator, n: int) -> mg.MolecularGraph:
    """Random connected labeled graph (tree plus a few chords).

    Satisfies the graph-tensor invariants; valences may be chemically wrong,
    which is fine for math/canonicalization properties.
    """
    elements = list(rng.choice(["C", "C", "C", "N", "O", "S"], size=n))
    edges = []
    present = set()
    for i in range(1, n):
        j = int(rng.integers(0, i))
        edges.append((j, i, int(rng.integers(1, 5))))
        present.add((j, i))
    extra = int(rng.integers(0, max(1, n // 3)))
    for _ in range(extra):
        i, j = sorted(int(v) for v in rng.choice(n, size=2, replace=False))
        if (i, j) not in present:
            present.add((i, j))
            edges.append((i, j, int(rng.integers(1, 5))))
    return mg.MolecularGraph.from_edges(elements, edges)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
