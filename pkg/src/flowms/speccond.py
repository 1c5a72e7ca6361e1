"""Spectrum ingestion and the binned-peak conditioning encoder.

The encoder here is a deliberate stand-in: a fixed-width binning of the m/z
axis followed by a feed-forward net trained to predict 2048-bit fingerprints.
It replaces the set-attention peak encoder used upstream of the generator in
the original pipeline; any conditioning source with the right width works.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import checkpoint as ckpt
from .errors import (
    BadPeakLine,
    DomainError,
    MalformedBlock,
    MissingPrecursor,
    NonFiniteGradient,
    ShapeMismatch,
    VersionMismatch,
)
from .fingerprint import Fingerprint
from .flowcore import STREAM_SHUFFLE, philox_uniforms


@dataclass(frozen=True)
class Spectrum:
    peaks: tuple[tuple[float, float], ...]  # (mz, intensity), sorted by mz
    precursor_mz: float
    id: str

    def __post_init__(self):
        if not self.peaks:
            raise DomainError("spectrum must have at least one peak")


@dataclass(frozen=True)
class BinnedSpectrum:
    bins: np.ndarray
    dropped: int = 0


def parse_mgf(stream) -> list[Spectrum]:
    """Parse an MGF-subset stream: BEGIN IONS / TITLE= / PEPMASS= / peaks / END IONS.

    Unknown ``KEY=`` headers are ignored; blocks keep file order.
    """
    spectra = []
    in_block = False
    block_line = 0
    title = None
    precursor = None
    peaks: list[tuple[float, float]] = []
    lineno = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "BEGIN IONS":
            if in_block:
                raise MalformedBlock("nested BEGIN IONS", lineno)
            in_block = True
            block_line = lineno
            title, precursor, peaks = None, None, []
        elif line == "END IONS":
            if not in_block:
                raise MalformedBlock("END IONS without BEGIN IONS", lineno)
            if precursor is None:
                raise MissingPrecursor("block has no PEPMASS", block_line)
            if not peaks:
                raise MalformedBlock("block has no peaks", block_line)
            ident = title if title is not None else f"spectrum_{len(spectra) + 1}"
            spectra.append(
                Spectrum(tuple(sorted(peaks)), precursor, ident)
            )
            in_block = False
        elif not in_block:
            raise MalformedBlock(f"content outside BEGIN IONS: {line!r}", lineno)
        elif "=" in line and not line[0].isdigit():
            key, _, value = line.partition("=")
            if key == "TITLE":
                title = value.strip()
            elif key == "PEPMASS":
                try:
                    precursor = float(value.split()[0])
                except (ValueError, IndexError):
                    raise BadPeakLine(f"bad PEPMASS value {value!r}", lineno) from None
        else:
            fields = line.split()
            if len(fields) < 2:
                raise BadPeakLine(f"peak line needs mz and intensity: {line!r}", lineno)
            try:
                mz, intensity = float(fields[0]), float(fields[1])
            except ValueError:
                raise BadPeakLine(f"non-numeric peak line: {line!r}", lineno) from None
            if mz <= 0 or intensity < 0:
                raise BadPeakLine(f"peak out of range: {line!r}", lineno)
            peaks.append((mz, intensity))
    if in_block:
        raise MalformedBlock("missing END IONS", block_line)
    return spectra


def serialize_mgf(spectra, handle) -> None:
    for spectrum in spectra:
        handle.write("BEGIN IONS\n")
        handle.write(f"TITLE={spectrum.id}\n")
        handle.write(f"PEPMASS={spectrum.precursor_mz}\n")
        for mz, intensity in spectrum.peaks:
            handle.write(f"{mz} {intensity}\n")
        handle.write("END IONS\n")


def bin_spectrum(
    spectrum: Spectrum, bin_width: float = 1.0, mz_max: float = 1000.0
) -> BinnedSpectrum:
    """Accumulate intensities into fixed bins, then max-normalize."""
    if bin_width <= 0:
        raise DomainError("bin_width must be positive")
    n_bins = int(np.ceil(mz_max / bin_width))
    bins = np.zeros(n_bins, dtype=np.float64)
    dropped = 0
    for mz, intensity in spectrum.peaks:
        if mz >= mz_max:
            dropped += 1
            continue
        bins[int(mz // bin_width)] += intensity
    peak = bins.max()
    if peak > 0:
        bins /= peak
    return BinnedSpectrum(bins, dropped)


@dataclass(frozen=True)
class EncoderConfig:
    n_bins: int = 1000
    hidden: int = 1024
    out_dim: int = 2048

    def meta(self) -> list[int]:
        return [self.n_bins, self.hidden, self.out_dim]

    @classmethod
    def from_meta(cls, meta: list[int]) -> "EncoderConfig":
        return cls(*meta)


@dataclass(frozen=True)
class EncoderTrainConfig:
    epochs: int
    batch_size: int = 32
    lr: float = 3e-4
    min_lr: float = 1e-6
    weight_decay: float = 1e-12
    betas: tuple[float, float] = (0.9, 0.999)
    grad_clip: float = 1.0
    seed: int = 0


class SpectrumEncoder(nn.Module):
    """Three-layer feed-forward predictor from binned peaks to bit logits."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.net = nn.Sequential(
            nn.Linear(cfg.n_bins, cfg.hidden),
            nn.ReLU(),
            nn.Linear(cfg.hidden, cfg.hidden),
            nn.ReLU(),
            nn.Linear(cfg.hidden, cfg.out_dim),
        )

    def forward(self, bins: torch.Tensor) -> torch.Tensor:
        if bins.shape[-1] != self.cfg.n_bins:
            raise ShapeMismatch(
                f"bin vector length {bins.shape[-1]} != {self.cfg.n_bins}"
            )
        return self.net(bins)


def build_encoder(cfg: EncoderConfig, seed: int = 0) -> SpectrumEncoder:
    torch.manual_seed(seed)
    return SpectrumEncoder(cfg).double()


def encode(model: SpectrumEncoder, binned: BinnedSpectrum) -> np.ndarray:
    """Conditioning vector in (0, 1); sigmoid of the bit logits."""
    with torch.no_grad():
        logits = model(torch.from_numpy(np.asarray(binned.bins, dtype=np.float64)))
    return torch.sigmoid(logits).numpy()


def encoder_loss(model: SpectrumEncoder, bins: torch.Tensor, bits: torch.Tensor) -> torch.Tensor:
    """Mean per-bit binary cross-entropy."""
    return nn.functional.binary_cross_entropy_with_logits(model(bins), bits)


def train_encoder(
    model: SpectrumEncoder,
    corpus: list[tuple[Spectrum, Fingerprint]],
    config: EncoderTrainConfig,
    bin_width: float = 1.0,
) -> list[float]:
    """Fit fingerprints from binned spectra; same optimizer contract as the
    denoiser (AdamW, cosine annealing, global-norm clip).  Returns per-epoch
    mean loss history."""
    if not corpus:
        raise ValueError("corpus is empty")
    torch.set_num_threads(1)
    mz_max = model.cfg.n_bins * bin_width
    bins = torch.from_numpy(
        np.stack([bin_spectrum(s, bin_width, mz_max).bins for s, _ in corpus])
    )
    bits = torch.from_numpy(np.stack([fp.to_float() for _, fp in corpus]))
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
            philox_uniforms(config.seed, STREAM_SHUFFLE, 1, epoch, count), kind="stable"
        )
        epoch_total = 0.0
        for start in range(0, count, config.batch_size):
            chunk = torch.from_numpy(order[start : start + config.batch_size].copy())
            optimizer.zero_grad(set_to_none=True)
            batch_loss = encoder_loss(model, bins[chunk], bits[chunk])
            batch_loss.backward()
            for name, param in model.named_parameters():
                if param.grad is not None and not torch.isfinite(param.grad).all():
                    raise NonFiniteGradient(f"non-finite gradient in {name}")
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            epoch_total += float(batch_loss.detach()) * len(chunk)
        scheduler.step()
        history.append(epoch_total / count)
    return history


def save_encoder(model: SpectrumEncoder, path) -> None:
    arrays = {name: tensor.detach().numpy() for name, tensor in model.state_dict().items()}
    ckpt.save_container(path, ckpt.KIND_ENCODER, model.cfg.meta(), arrays)


def load_encoder(path) -> SpectrumEncoder:
    kind, meta, arrays = ckpt.load_container(path)
    if kind != ckpt.KIND_ENCODER:
        raise VersionMismatch(f"not an encoder checkpoint (kind {kind})")
    model = SpectrumEncoder(EncoderConfig.from_meta(meta)).double()
    model.load_state_dict({name: torch.from_numpy(a) for name, a in arrays.items()})
    return model
