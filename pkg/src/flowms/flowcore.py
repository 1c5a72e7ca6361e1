"""Discrete flow matching over bond categories.

Linear noising paths, conditional and expected rate matrices, and the CTMC
Euler sampler that generates adjacency structure for a fixed atom list.  All
randomness comes from counter-based Philox streams keyed by
(seed, stream, trajectory, step), so results are bit-reproducible regardless
of execution order or parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularTime
from .molgraph import NUM_BOND_TYPES, MolecularGraph

_MASK64 = (1 << 64) - 1

# stream salts for independent RNG substreams
STREAM_NOISE = 1
STREAM_INIT = 2
STREAM_EULER = 3
STREAM_FINAL = 4
STREAM_TRAIN = 5
STREAM_SHUFFLE = 6


def philox_uniforms(seed: int, stream: int, trajectory: int, step: int, count: int) -> np.ndarray:
    """Draw ``count`` uniforms from the (seed, stream, trajectory, step) substream."""
    key = np.array(
        [seed & _MASK64, ((stream << 56) ^ trajectory) & _MASK64], dtype=np.uint64
    )
    counter = np.array([0, 0, 0, step & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter)).random(count)


@dataclass(frozen=True)
class InitialDistribution:
    """Shared per-edge noise distribution; strictly positive so Z_t stays 5."""

    p0: np.ndarray

    def __post_init__(self):
        p0 = np.asarray(self.p0, dtype=np.float64)
        object.__setattr__(self, "p0", p0)
        if p0.shape != (NUM_BOND_TYPES,):
            raise DomainError(f"p0 must have {NUM_BOND_TYPES} entries")
        if not np.all(p0 > 0):
            raise DomainError("p0 entries must be strictly positive")
        if abs(float(p0.sum()) - 1.0) > 1e-9:
            raise DomainError("p0 must sum to 1")


def uniform_initial() -> InitialDistribution:
    return InitialDistribution(np.full(NUM_BOND_TYPES, 1.0 / NUM_BOND_TYPES))


@dataclass
class NoisyGraphState:
    """Time-indexed state consumed by the denoiser: (A_t, X, y, t)."""

    bonds_t: np.ndarray  # (n, n, 5) one-hot
    atoms: tuple[str, ...]
    condition: np.ndarray | None
    t: float

    @property
    def n(self) -> int:
        return len(self.atoms)


def _check_t(t: float) -> None:
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t={t} outside [0, 1]")


def noise_prob(a1: int, t: float, p0: InitialDistribution) -> np.ndarray:
    """Linear interpolation from noise to the clean category a1."""
    _check_t(t)
    probs = (1.0 - t) * p0.p0.copy()
    probs[a1] += t
    return probs


def conditional_rate(a_t: int, a1: int, t: float, p0: InitialDistribution) -> np.ndarray:
    """Off-diagonal transition rates out of a_t given the clean category a1.

    Entry ``a_t`` is 0; the implicit diagonal is minus the row sum.
    """
    if t >= 1.0:
        raise SingularTime(f"rate matrix undefined at t={t} >= 1")
    if t < 0.0:
        raise DomainError(f"t={t} outside [0, 1)")
    return _rate_tensor(t, p0)[a_t, a1]


def _rate_tensor(t: float, p0: InitialDistribution) -> np.ndarray:
    """All conditional rates as a (a_t, a1, target) tensor for one time."""
    k = NUM_BOND_TYPES
    eye = np.eye(k)
    dp = eye - p0.p0[:, None]  # dp[x, a1] = d/dt p_{t|1}(x | a1) = delta(x,a1) - p0[x]
    # numer[a_t, a1, x] = max(0, dp[x, a1] - dp[a_t, a1])
    numer = np.maximum(0.0, dp.T[None, :, :] - dp[:, :, None])
    p_at = t * eye + (1.0 - t) * p0.p0[:, None]  # p_{t|1}(a_t | a1)
    rates = numer / (k * p_at)[:, :, None]
    idx = np.arange(k)
    rates[idx, :, idx] = 0.0
    return rates


def expected_rate(
    a_t: int, p1_pred: np.ndarray, t: float, p0: InitialDistribution
) -> np.ndarray:
    """Rates under the denoiser's predicted clean distribution."""
    if t >= 1.0:
        raise SingularTime(f"rate matrix undefined at t={t} >= 1")
    p1_pred = np.asarray(p1_pred, dtype=np.float64)
    return p1_pred @ _rate_tensor(t, p0)[a_t]


def _transition_rows(
    cats: np.ndarray, pred: np.ndarray, t: float, dt: float, p0: InitialDistribution
) -> np.ndarray:
    """Per-edge Euler transition distributions.

    ``cats``: (..., ) current categories; ``pred``: (..., 5) predicted clean
    distributions.  Off-diagonal mass exceeding 1 is rescaled proportionally.
    """
    rate_tensor = _rate_tensor(t, p0)  # (5, 5, 5)
    rates = np.einsum("...a,...ax->...x", pred, rate_tensor[cats])
    q = rates * dt
    flat_q = q.reshape(-1, NUM_BOND_TYPES)
    flat_c = cats.reshape(-1)
    rows = np.arange(flat_q.shape[0])
    flat_q[rows, flat_c] = 0.0
    mass = flat_q.sum(axis=1)
    over = mass > 1.0
    if over.any():
        flat_q[over] /= mass[over, None]
        mass = np.minimum(mass, 1.0)
    flat_q[rows, flat_c] = 1.0 - mass
    return flat_q.reshape(q.shape)


def _sample_rows(rows: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draw per row."""
    cdf = np.cumsum(rows, axis=-1)
    cdf[..., -1] = 1.0
    return (uniforms[..., None] > cdf).sum(axis=-1)


def _onehot_from_upper(cats_ut: np.ndarray, n: int) -> np.ndarray:
    """Mirror upper-triangular categories into a symmetric one-hot tensor."""
    iu, ju = np.triu_indices(n, k=1)
    full = np.zeros(cats_ut.shape[:-1] + (n, n), dtype=np.int64)
    full[..., iu, ju] = cats_ut
    full[..., ju, iu] = cats_ut
    onehot = np.zeros(full.shape + (NUM_BOND_TYPES,), dtype=np.uint8)
    np.put_along_axis(onehot, full[..., None], 1, axis=-1)
    return onehot


def sample_noisy(
    g: MolecularGraph,
    t: float,
    p0: InitialDistribution,
    rng_seed: int,
    condition: np.ndarray | None = None,
    trajectory: int = 0,
) -> NoisyGraphState:
    """Corrupt a clean graph by sampling each upper-triangular edge from the
    linear path, then mirroring."""
    _check_t(t)
    n = g.n
    iu, ju = np.triu_indices(n, k=1)
    clean = g.category_matrix()[iu, ju]
    probs = (1.0 - t) * p0.p0[None, :].repeat(clean.shape[0], 0)
    probs[np.arange(clean.shape[0]), clean] += t
    uniforms = philox_uniforms(rng_seed, STREAM_NOISE, trajectory, 0, clean.shape[0])
    cats = _sample_rows(probs, uniforms)
    return NoisyGraphState(_onehot_from_upper(cats, n), g.atoms, condition, t)


def euler_step(
    state: NoisyGraphState,
    pred: np.ndarray,
    dt: float,
    p0: InitialDistribution,
    rng_seed: int,
    step: int = 0,
    trajectory: int = 0,
) -> NoisyGraphState:
    """One first-order CTMC step under the expected rate matrix."""
    if dt <= 0:
        raise DomainError("dt must be positive")
    if state.t + dt > 1.0 + 1e-12:
        raise DomainError(f"step past t=1: {state.t} + {dt}")
    n = state.n
    iu, ju = np.triu_indices(n, k=1)
    cats = state.bonds_t.argmax(axis=2)[iu, ju]
    pred = np.asarray(pred, dtype=np.float64)
    rows = _transition_rows(cats, pred[iu, ju], state.t, dt, p0)
    uniforms = philox_uniforms(rng_seed, STREAM_EULER, trajectory, step, cats.shape[0])
    new_cats = _sample_rows(rows, uniforms)
    return NoisyGraphState(
        _onehot_from_upper(new_cats, n), state.atoms, state.condition, state.t + dt
    )


def sample_molecules(
    predict,
    atoms,
    condition,
    steps: int,
    p0: InitialDistribution,
    rng_seed: int,
    count: int,
    first_trajectory: int = 0,
) -> list[MolecularGraph]:
    """Run ``count`` denoising trajectories in lockstep.

    ``predict(bonds, atoms, condition, t)`` maps a (B, n, n, 5) one-hot batch
    to (B, n, n, 5) clean-bond distributions.  Trajectory ``b`` draws from RNG
    substreams keyed by ``first_trajectory + b``, so splitting a batch does
    not change its random numbers.  The last step samples each edge directly
    from the prediction at t = 1 - 1/steps (the rate diverges at t -> 1).
    """
    if steps < 1:
        raise DomainError("steps must be >= 1")
    atoms = tuple(atoms)
    n = len(atoms)
    m = n * (n - 1) // 2
    trajectories = [first_trajectory + b for b in range(count)]

    def stream(salt, step):
        return np.stack(
            [philox_uniforms(rng_seed, salt, traj, step, m) for traj in trajectories]
        )

    init_uniforms = stream(STREAM_INIT, 0)
    cats = _sample_rows(np.broadcast_to(p0.p0, (count, m, NUM_BOND_TYPES)), init_uniforms)

    dt = 1.0 / steps
    for k in range(steps - 1):
        t = k / steps
        bonds = _onehot_from_upper(cats, n)
        pred = np.asarray(predict(bonds, atoms, condition, t), dtype=np.float64)
        iu, ju = np.triu_indices(n, k=1)
        rows = _transition_rows(cats, pred[:, iu, ju], t, dt, p0)
        cats = _sample_rows(rows, stream(STREAM_EULER, k))

    t_last = (steps - 1) / steps
    bonds = _onehot_from_upper(cats, n)
    pred = np.asarray(predict(bonds, atoms, condition, t_last), dtype=np.float64)
    iu, ju = np.triu_indices(n, k=1)
    rows = pred[:, iu, ju]
    rows = rows / rows.sum(axis=-1, keepdims=True)
    cats = _sample_rows(rows, stream(STREAM_FINAL, steps - 1))

    bonds = _onehot_from_upper(cats, n)
    return [MolecularGraph(atoms, bonds[b]) for b in range(count)]


def sample_molecule(
    predict,
    atoms,
    condition,
    steps: int,
    p0: InitialDistribution,
    rng_seed: int,
    trajectory: int = 0,
) -> MolecularGraph:
    """Sample a single molecular graph; see :func:`sample_molecules`."""
    return sample_molecules(
        predict, atoms, condition, steps, p0, rng_seed, 1, first_trajectory=trajectory
    )[0]
