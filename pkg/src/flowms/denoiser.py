"""Graph-transformer denoiser: noisy bond tensor -> clean bond distributions.

The network is permutation-equivariant by construction: node attention with
per-edge bias, edge-update MLPs, and global FiLM modulation from the
conditioning vector and time embedding.  All math runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import checkpoint as ckpt
from .errors import NonFiniteGradient, ShapeMismatch, TruncatedFile, VersionMismatch
from .flowcore import (
    STREAM_SHUFFLE,
    STREAM_TRAIN,
    InitialDistribution,
    NoisyGraphState,
    philox_uniforms,
    sample_noisy,
    uniform_initial,
)
from .molgraph import BOND_NONE, ELEMENT_INDEX, ELEMENTS, NUM_BOND_TYPES, MolecularGraph


@dataclass(frozen=True)
class DenoiserConfig:
    blocks: int = 4
    heads: int = 8
    d_node: int = 128
    d_edge: int = 128
    d_cond: int = 128
    d_time: int = 64
    cond_dim: int = 2048

    def meta(self) -> list[int]:
        return [
            self.blocks,
            self.heads,
            self.d_node,
            self.d_edge,
            self.d_cond,
            self.d_time,
            self.cond_dim,
        ]

    @classmethod
    def from_meta(cls, meta: list[int]) -> "DenoiserConfig":
        blocks, heads, d_node, d_edge, d_cond, d_time, cond_dim = meta
        return cls(blocks, heads, d_node, d_edge, d_cond, d_time, cond_dim)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 16
    lr: float = 3e-4
    min_lr: float = 1e-6
    weight_decay: float = 1e-12
    betas: tuple[float, float] = (0.9, 0.999)
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs, batch_size, and lr must be positive")


def _mlp(d_in: int, d_hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, d_hidden), nn.ReLU(), nn.Linear(d_hidden, d_out))


def time_embedding(t: float, dim: int) -> torch.Tensor:
    half = dim // 2
    scale = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half
    )
    args = 1000.0 * t * scale
    return torch.cat([torch.cos(args), torch.sin(args)])


class _Block(nn.Module):
    """Node attention with edge bias, node/edge MLP updates, FiLM modulation."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        dn, de = cfg.d_node, cfg.d_edge
        self.heads = cfg.heads
        self.head_dim = dn // cfg.heads
        if self.head_dim * cfg.heads != dn:
            raise ValueError("d_node must be divisible by heads")
        self.film = nn.Linear(cfg.d_cond + cfg.d_time, 2 * dn + 2 * de)
        self.norm_attn = nn.LayerNorm(dn)
        self.q = nn.Linear(dn, dn)
        self.k = nn.Linear(dn, dn)
        self.v = nn.Linear(dn, dn)
        self.attn_out = nn.Linear(dn, dn)
        self.norm_bias = nn.LayerNorm(de)
        self.edge_bias = nn.Linear(de, cfg.heads)
        self.norm_node = nn.LayerNorm(dn)
        self.node_mlp = _mlp(dn, 2 * dn, dn)
        self.norm_edge = nn.LayerNorm(de)
        self.edge_mlp = _mlp(de + 2 * dn, 2 * de, de)

    def forward(self, x: torch.Tensor, e: torch.Tensor, ctx: torch.Tensor):
        dn = x.shape[-1]
        de = e.shape[-1]
        gn, bn, ge, be = torch.split(self.film(ctx), [dn, dn, de, de], dim=-1)
        x = x * (1.0 + gn[:, None, :]) + bn[:, None, :]
        e = e * (1.0 + ge[:, None, None, :]) + be[:, None, None, :]

        batch, n, _ = x.shape
        h = self.norm_attn(x)
        q = self.q(h).view(batch, n, self.heads, self.head_dim).transpose(1, 2)
        k = self.k(h).view(batch, n, self.heads, self.head_dim).transpose(1, 2)
        v = self.v(h).view(batch, n, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores + self.edge_bias(self.norm_bias(e)).permute(0, 3, 1, 2)
        attn = torch.softmax(scores, dim=-1)
        pooled = (attn @ v).transpose(1, 2).reshape(batch, n, dn)
        x = x + self.attn_out(pooled)
        x = x + self.node_mlp(self.norm_node(x))

        he = self.norm_edge(e)
        xi = x[:, :, None, :].expand(batch, n, n, dn)
        xj = x[:, None, :, :].expand(batch, n, n, dn)
        e = e + self.edge_mlp(torch.cat([he, xi, xj], dim=-1))
        return x, e


class BondDenoiser(nn.Module):
    """Predicts per-edge clean-bond distributions from a noisy graph state."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        if cfg.d_time % 2:
            raise ValueError("d_time must be even")
        self.cfg = cfg
        self.node_in = _mlp(len(ELEMENTS), cfg.d_node, cfg.d_node)
        self.edge_in = _mlp(NUM_BOND_TYPES, cfg.d_edge, cfg.d_edge)
        self.cond_in = _mlp(cfg.cond_dim, cfg.d_cond, cfg.d_cond)
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.blocks))
        self.norm_out = nn.LayerNorm(cfg.d_edge)
        self.head_hidden = nn.Linear(cfg.d_edge, cfg.d_edge)
        self.head_out = nn.Linear(cfg.d_edge, NUM_BOND_TYPES)

    def forward(
        self,
        bonds: torch.Tensor,
        atom_onehot: torch.Tensor,
        condition: torch.Tensor,
        t: float,
    ) -> torch.Tensor:
        """bonds (B, n, n, 5), atom_onehot (n, E), condition (cond_dim,) -> probs."""
        if condition.shape != (self.cfg.cond_dim,):
            raise ShapeMismatch(
                f"condition length {tuple(condition.shape)} != ({self.cfg.cond_dim},)"
            )
        if bonds.ndim != 4 or bonds.shape[-1] != NUM_BOND_TYPES:
            raise ShapeMismatch(f"bond tensor shape {tuple(bonds.shape)}")
        batch, n = bonds.shape[0], bonds.shape[1]
        if bonds.shape[2] != n or atom_onehot.shape[0] != n:
            raise ShapeMismatch("atom count disagrees with bond tensor")

        x = self.node_in(atom_onehot)[None, :, :].expand(batch, n, -1).contiguous()
        e = self.edge_in(bonds)
        ctx = torch.cat([self.cond_in(condition), time_embedding(t, self.cfg.d_time)])
        ctx = ctx[None, :].expand(batch, -1)
        for block in self.blocks:
            x, e = block(x, e, ctx)
        logits = self.head_out(torch.relu(self.head_hidden(self.norm_out(e))))
        logits = 0.5 * (logits + logits.transpose(1, 2))
        probs = torch.softmax(logits, dim=-1)
        diag = torch.zeros(NUM_BOND_TYPES, dtype=probs.dtype)
        diag[BOND_NONE] = 1.0
        eye = torch.eye(n, dtype=torch.bool)
        return torch.where(eye[None, :, :, None], diag, probs)


def build_denoiser(cfg: DenoiserConfig, seed: int = 0) -> BondDenoiser:
    """Deterministic construction; the output head starts at zero so the
    initial prediction is uniform."""
    torch.manual_seed(seed)
    model = BondDenoiser(cfg).double()
    nn.init.zeros_(model.head_out.weight)
    nn.init.zeros_(model.head_out.bias)
    return model


def atoms_onehot(atoms) -> np.ndarray:
    out = np.zeros((len(atoms), len(ELEMENTS)), dtype=np.float64)
    for i, elem in enumerate(atoms):
        out[i, ELEMENT_INDEX[elem]] = 1.0
    return out


def forward(model: BondDenoiser, state: NoisyGraphState) -> np.ndarray:
    """Per-edge clean-bond distribution grid for one noisy state."""
    if state.condition is None:
        raise ShapeMismatch("state carries no conditioning vector")
    with torch.no_grad():
        probs = model(
            torch.from_numpy(np.asarray(state.bonds_t, dtype=np.float64))[None],
            torch.from_numpy(atoms_onehot(state.atoms)),
            torch.from_numpy(np.asarray(state.condition, dtype=np.float64)),
            state.t,
        )
    return probs[0].numpy()


def as_sampler(model: BondDenoiser):
    """Adapt a denoiser to the ``predict(bonds, atoms, condition, t)`` protocol."""

    def predict(bonds, atoms, condition, t):
        with torch.no_grad():
            probs = model(
                torch.from_numpy(np.asarray(bonds, dtype=np.float64)),
                torch.from_numpy(atoms_onehot(atoms)),
                torch.from_numpy(np.asarray(condition, dtype=np.float64)),
                float(t),
            )
        return probs.numpy()

    return predict


def loss(pred, target: MolecularGraph) -> torch.Tensor:
    """Cross-entropy over upper-triangular edges only (log input clamped)."""
    pred = torch.as_tensor(pred, dtype=torch.float64)
    if pred.shape != (target.n, target.n, NUM_BOND_TYPES):
        raise ShapeMismatch(f"prediction shape {tuple(pred.shape)} vs n={target.n}")
    cats = torch.from_numpy(target.category_matrix())
    picked = torch.gather(pred, 2, cats[:, :, None]).squeeze(2)
    iu, ju = np.triu_indices(target.n, k=1)
    return -torch.log(torch.clamp(picked[iu, ju], min=1e-12)).sum()


def mean_batch_loss(model: BondDenoiser, batch):
    """Mean loss over (NoisyGraphState, target MolecularGraph) pairs."""
    total = None
    detached = []
    for state, target in batch:
        if state.condition is None:
            raise ShapeMismatch("state carries no conditioning vector")
        pred = model(
            torch.from_numpy(state.bonds_t.astype(np.float64))[None],
            torch.from_numpy(atoms_onehot(state.atoms)),
            torch.from_numpy(np.asarray(state.condition, dtype=np.float64)),
            state.t,
        )
        item = loss(pred[0], target)
        detached.append(float(item.detach()))
        total = item if total is None else total + item
    return total / len(batch), detached


def _check_finite_grads(model: nn.Module) -> None:
    for name, param in model.named_parameters():
        if param.grad is not None and not torch.isfinite(param.grad).all():
            raise NonFiniteGradient(f"non-finite gradient in {name}")


def grad(model: BondDenoiser, batch) -> dict[str, np.ndarray]:
    """Gradients of the mean batch loss over (state, target) pairs."""
    if not batch:
        raise ValueError("batch is empty")
    model.zero_grad(set_to_none=True)
    mean_loss, _ = mean_batch_loss(model, batch)
    mean_loss.backward()
    _check_finite_grads(model)
    return {
        name: param.grad.detach().numpy().copy()
        for name, param in model.named_parameters()
    }


def train(
    model: BondDenoiser,
    corpus,
    config: TrainConfig,
    p0: InitialDistribution | None = None,
) -> list[float]:
    """Train on (MolecularGraph, conditioning vector) pairs.

    Per example per step: t ~ U[0,1], corrupt with the linear path, edge
    cross-entropy, AdamW with decoupled weight decay, global-norm clip, cosine
    annealed learning rate.  Deterministic given the seed (single-threaded).

    Returns the per-epoch mean loss history.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    p0 = p0 or uniform_initial()
    torch.set_num_threads(1)
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=config.lr,
        betas=config.betas,
        weight_decay=config.weight_decay,
    )
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=config.epochs, eta_min=config.min_lr
    )
    count = len(corpus)
    history = []
    for epoch in range(config.epochs):
        order = np.argsort(
            philox_uniforms(config.seed, STREAM_SHUFFLE, 0, epoch, count), kind="stable"
        )
        epoch_total = 0.0
        for start in range(0, count, config.batch_size):
            chunk = order[start : start + config.batch_size]
            batch = []
            for offset, i in enumerate(chunk):
                graph, condition = corpus[i]
                stream = epoch * count + start + offset
                t = float(philox_uniforms(config.seed, STREAM_TRAIN, stream, 0, 1)[0])
                batch.append(
                    (sample_noisy(graph, t, p0, config.seed, condition, trajectory=stream), graph)
                )
            optimizer.zero_grad(set_to_none=True)
            mean_loss, per_item = mean_batch_loss(model, batch)
            mean_loss.backward()
            _check_finite_grads(model)
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            epoch_total += sum(per_item)
        scheduler.step()
        history.append(epoch_total / count)
    return history


def save_checkpoint(model: BondDenoiser, path) -> None:
    arrays = {name: tensor.detach().numpy() for name, tensor in model.state_dict().items()}
    ckpt.save_container(path, ckpt.KIND_DENOISER, model.cfg.meta(), arrays)


def load_checkpoint(path) -> BondDenoiser:
    kind, meta, arrays = ckpt.load_container(path)
    if kind != ckpt.KIND_DENOISER:
        raise VersionMismatch(f"not a denoiser checkpoint (kind {kind})")
    cfg = DenoiserConfig.from_meta(meta)
    model = BondDenoiser(cfg).double()
    state = {name: torch.from_numpy(array) for name, array in arrays.items()}
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise TruncatedFile(f"checkpoint sections incomplete: {exc}") from exc
    return model
