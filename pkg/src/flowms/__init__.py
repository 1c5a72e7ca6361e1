"""Spectrum-conditioned molecular graph generation via discrete flow matching."""

from .flowcore import (
    InitialDistribution,
    NoisyGraphState,
    conditional_rate,
    euler_step,
    expected_rate,
    noise_prob,
    sample_molecule,
    sample_molecules,
    sample_noisy,
    uniform_initial,
)
from .fingerprint import Fingerprint, morgan_fingerprint, tanimoto
from .mces import McesResult, mces_bruteforce, mces_distance
from .molgraph import (
    Formula,
    MolecularGraph,
    ValidityReport,
    formula_of,
    is_same_molecule,
    parse_formula,
    parse_smiles,
    permute,
    validate,
    write_canonical,
)

__all__ = [
    "Fingerprint",
    "Formula",
    "InitialDistribution",
    "McesResult",
    "MolecularGraph",
    "NoisyGraphState",
    "ValidityReport",
    "conditional_rate",
    "euler_step",
    "expected_rate",
    "formula_of",
    "is_same_molecule",
    "mces_bruteforce",
    "mces_distance",
    "morgan_fingerprint",
    "noise_prob",
    "parse_formula",
    "parse_smiles",
    "permute",
    "sample_molecule",
    "sample_molecules",
    "sample_noisy",
    "tanimoto",
    "uniform_initial",
    "validate",
    "write_canonical",
]

__version__ = "0.1.0"
