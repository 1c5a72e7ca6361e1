import numpy as np
import pytest

from flowms import errors
from flowms import mces
from flowms import molgraph as mg

from conftest import random_molecule


class TestExamples:
    def test_identical_benzene_distance_zero(self):
        benzene = mg.parse_smiles("c1ccccc1")
        result = mces.mces_distance(benzene, benzene)
        assert result.distance == 0
        assert result.common_edges == 6

    def test_ethane_vs_ethanol(self):
        result = mces.mces_distance(mg.parse_smiles("CC"), mg.parse_smiles("CCO"))
        assert result.common_edges == 1
        assert result.distance == 1

    def test_edgeless_graphs(self):
        result = mces.mces_distance(mg.parse_smiles("C"), mg.parse_smiles("O"))
        assert result.distance == 0
        assert result.common_edges == 0

    def test_bond_category_must_match(self):
        single = mg.parse_smiles("CC")
        double = mg.parse_smiles("C=C")
        aromatic = mg.parse_smiles("C:C")
        assert mces.mces_distance(single, double).common_edges == 0
        assert mces.mces_distance(single, aromatic).common_edges == 0
        assert mces.mces_distance(single, double).distance == 2

    def test_element_labels_must_match(self):
        assert mces.mces_distance(mg.parse_smiles("CO"), mg.parse_smiles("CN")).common_edges == 0

    def test_budget(self):
        big = mg.parse_smiles("C" * 26)
        with pytest.raises(errors.BudgetExceeded):
            mces.mces_distance(big, big)
        with pytest.raises(errors.BudgetExceeded):
            mces.mces_bruteforce(mg.parse_smiles("C" * 9), mg.parse_smiles("CC"))
        assert mces.mces_distance(big, big, node_budget=26).distance == 0

    def test_threshold_returns_flagged_lower_bound(self):
        chain = mg.parse_smiles("CCCCCCCC")  # 7 edges
        lone = mg.parse_smiles("C")
        result = mces.mces_distance(chain, lone, threshold=3)
        assert result.is_lower_bound
        assert result.distance >= 3
        exact = mces.mces_distance(chain, lone)
        assert not exact.is_lower_bound
        assert exact.distance == 7


class TestOracle:
    def test_agrees_with_bruteforce_on_random_pairs(self, rng):
        for _ in range(50):
            g1 = random_molecule(rng, int(rng.integers(2, 9)))
            g2 = random_molecule(rng, int(rng.integers(2, 9)))
            fast = mces.mces_distance(g1, g2)
            slow = mces.mces_bruteforce(g1, g2)
            assert fast.distance == slow.distance
            assert fast.common_edges == slow.common_edges

    def test_symmetry(self, rng):
        for _ in range(20):
            g1 = random_molecule(rng, int(rng.integers(2, 8)))
            g2 = random_molecule(rng, int(rng.integers(2, 8)))
            assert (
                mces.mces_distance(g1, g2).distance
                == mces.mces_distance(g2, g1).distance
            )

    def test_permuted_graph_distance_zero(self, rng):
        for _ in range(15):
            g = random_molecule(rng, int(rng.integers(2, 9)))
            h = mg.permute(g, rng.permutation(g.n))
            assert mces.mces_distance(g, h).distance == 0

    def test_differing_edge_multisets_are_positive(self, rng):
        for _ in range(20):
            g1 = random_molecule(rng, int(rng.integers(2, 8)))
            g2 = random_molecule(rng, int(rng.integers(2, 8)))
            lab1 = sorted(
                (g1.atoms[i], g1.atoms[j], c) if g1.atoms[i] <= g1.atoms[j] else (g1.atoms[j], g1.atoms[i], c)
                for i, j, c in g1.edges()
            )
            lab2 = sorted(
                (g2.atoms[i], g2.atoms[j], c) if g2.atoms[i] <= g2.atoms[j] else (g2.atoms[j], g2.atoms[i], c)
                for i, j, c in g2.edges()
            )
            if lab1 != lab2:
                assert mces.mces_distance(g1, g2).distance > 0


class TestResultInvariants:
    def test_mapping_preserves_elements_and_distance_identity(self, rng):
        for _ in range(25):
            g1 = random_molecule(rng, int(rng.integers(2, 9)))
            g2 = random_molecule(rng, int(rng.integers(2, 9)))
            e1 = sum(1 for _ in g1.edges())
            e2 = sum(1 for _ in g2.edges())
            result = mces.mces_distance(g1, g2)
            assert result.distance == e1 + e2 - 2 * result.common_edges
            images = list(result.mapping.values())
            assert len(images) == len(set(images))  # injective
            for i, w in result.mapping.items():
                assert g1.atoms[i] == g2.atoms[w]
            # recount the common edges claimed by the mapping
            common = sum(
                1
                for i, j, cat in g1.edges()
                if i in result.mapping
                and j in result.mapping
                and g2.bonds[result.mapping[i], result.mapping[j], cat]
            )
            assert common == result.common_edges

    def test_larger_molecules_stay_exact(self):
        aspirin = mg.parse_smiles("CC(=O)Oc1ccccc1C(=O)O")
        ibuprofen = mg.parse_smiles("CC(C)Cc1ccc(cc1)C(C)C(=O)O")
        result = mces.mces_distance(aspirin, ibuprofen)
        assert result.distance == mces.mces_distance(ibuprofen, aspirin).distance
        assert result.common_edges >= 8  # shared aromatic ring + acid group
