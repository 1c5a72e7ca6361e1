"""End-to-end pipelines: pretraining, finetuning, sampling, evaluation.

Everything here is deterministic given (config, seed): sampling fans out
across records with per-record RNG substreams and single-threaded torch ops,
so thread count never changes the output bytes.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import torch

from . import denoiser as dn
from . import flowcore as fc
from . import molgraph as mg
from . import speccond as sc
from .errors import DataError, SmilesParseError
from .evaluation import EvalReport, evaluate_dataset
from .fingerprint import morgan_fingerprint

log = logging.getLogger("flowms")


@dataclass(frozen=True)
class PairRecord:
    lineno: int
    id: str
    smiles: str
    formula: str


def load_pairing_file(path) -> list[PairRecord]:
    """Read ``<spectrum id>\\t<smiles>\\t<formula>`` records."""
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            ident, smiles, formula = (f.strip() for f in fields)
            if ident in seen:
                raise DataError(f"{path}:{lineno}: duplicate spectrum id {ident!r}")
            seen.add(ident)
            records.append(PairRecord(lineno, ident, smiles, formula))
    return records


def parse_corpus(path) -> list[tuple[str, mg.MolecularGraph]]:
    """Parse a SMILES corpus file into (id, graph) pairs with line context."""
    out = []
    for lineno, smiles, ident in mg.load_smiles_corpus(path):
        try:
            out.append((ident, mg.parse_smiles(smiles)))
        except SmilesParseError as exc:
            raise DataError(f"{path}:{lineno}: bad SMILES {smiles!r}: {exc}") from exc
    return out


def parse_pair_graphs(path, records) -> dict[str, mg.MolecularGraph]:
    graphs = {}
    for rec in records:
        try:
            graphs[rec.id] = mg.parse_smiles(rec.smiles)
        except SmilesParseError as exc:
            raise DataError(f"{path}:{rec.lineno}: bad SMILES {rec.smiles!r}: {exc}") from exc
    return graphs


def write_history_csv(path, history) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("epoch,loss\n")
        for epoch, value in enumerate(history, start=1):
            handle.write(f"{epoch},{value!r}\n")


def pretrain_decoder(
    corpus_path, out_path, model_cfg: dn.DenoiserConfig, train_cfg: dn.TrainConfig
) -> list[float]:
    """Fingerprint-conditioned decoder pretraining on a SMILES corpus."""
    molecules = parse_corpus(corpus_path)
    if not molecules:
        raise DataError(f"{corpus_path}: corpus is empty")
    corpus = [
        (graph, morgan_fingerprint(graph, 2, model_cfg.cond_dim).to_float())
        for _, graph in molecules
    ]
    model = dn.build_denoiser(model_cfg, train_cfg.seed)
    log.info("pretraining decoder on %d molecules for %d epochs", len(corpus), train_cfg.epochs)
    history = dn.train(model, corpus, train_cfg)
    dn.save_checkpoint(model, out_path)
    return history


def match_spectra(
    mgf_path, records: list[PairRecord]
) -> list[tuple[PairRecord, sc.Spectrum]]:
    """Pair spectra with pairing-file records by id; report mismatches."""
    with open(mgf_path, "r", encoding="utf-8") as handle:
        spectra = sc.parse_mgf(handle)
    by_id = {s.id: s for s in spectra}
    missing = [rec.id for rec in records if rec.id not in by_id]
    if missing:
        shown = ", ".join(missing[:10])
        raise DataError(
            f"{len(missing)} pairing ids missing from {mgf_path}: {shown}"
        )
    extra = set(by_id) - {rec.id for rec in records}
    if extra:
        log.warning("%d spectra in %s have no pairing record", len(extra), mgf_path)
    return [(rec, by_id[rec.id]) for rec in records]


def pretrain_encoder(
    mgf_path,
    pairing_path,
    out_path,
    enc_cfg: sc.EncoderConfig,
    train_cfg: sc.EncoderTrainConfig,
) -> list[float]:
    records = load_pairing_file(pairing_path)
    graphs = parse_pair_graphs(pairing_path, records)
    matched = match_spectra(mgf_path, records)
    corpus = [
        (spectrum, morgan_fingerprint(graphs[rec.id], 2, enc_cfg.out_dim))
        for rec, spectrum in matched
    ]
    model = sc.build_encoder(enc_cfg, train_cfg.seed)
    history = sc.train_encoder(model, corpus, train_cfg)
    sc.save_encoder(model, out_path)
    return history


def finetune(
    decoder: dn.BondDenoiser,
    encoder: sc.SpectrumEncoder,
    pairs: list[tuple[sc.Spectrum, mg.MolecularGraph]],
    config: dn.TrainConfig,
    freeze_encoder: bool = False,
    bin_width: float = 1.0,
) -> list[float]:
    """End-to-end training: encoder output conditions the edge loss.

    Gradients flow into both parameter sets unless the encoder is frozen.
    """
    if not pairs:
        raise DataError("no paired examples to finetune on")
    if encoder.cfg.out_dim != decoder.cfg.cond_dim:
        raise DataError(
            f"encoder output {encoder.cfg.out_dim} != decoder conditioning "
            f"{decoder.cfg.cond_dim}"
        )
    torch.set_num_threads(1)
    p0 = fc.uniform_initial()
    mz_max = encoder.cfg.n_bins * bin_width
    bins = [
        torch.from_numpy(sc.bin_spectrum(s, bin_width, mz_max).bins) for s, _ in pairs
    ]
    encoder.requires_grad_(not freeze_encoder)
    params = list(decoder.parameters())
    if not freeze_encoder:
        params += list(encoder.parameters())
    optimizer = torch.optim.AdamW(
        params, lr=config.lr, betas=config.betas, weight_decay=config.weight_decay
    )
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=config.epochs, eta_min=config.min_lr
    )
    count = len(pairs)
    history = []
    for epoch in range(config.epochs):
        order = np.argsort(
            fc.philox_uniforms(config.seed, fc.STREAM_SHUFFLE, 2, epoch, count),
            kind="stable",
        )
        epoch_total = 0.0
        for start in range(0, count, config.batch_size):
            chunk = order[start : start + config.batch_size]
            optimizer.zero_grad(set_to_none=True)
            total = None
            for offset, index in enumerate(chunk):
                _, graph = pairs[index]
                stream = epoch * count + start + offset
                t = float(fc.philox_uniforms(config.seed, fc.STREAM_TRAIN, stream, 1, 1)[0])
                state = fc.sample_noisy(graph, t, p0, config.seed, trajectory=stream)
                condition = torch.sigmoid(encoder(bins[index]))
                pred = decoder(
                    torch.from_numpy(state.bonds_t.astype(np.float64))[None],
                    torch.from_numpy(dn.atoms_onehot(graph.atoms)),
                    condition,
                    t,
                )
                item = dn.loss(pred[0], graph)
                epoch_total += float(item.detach())
                total = item if total is None else total + item
            (total / len(chunk)).backward()
            dn._check_finite_grads(decoder)
            if not freeze_encoder:
                dn._check_finite_grads(encoder)
            torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
            optimizer.step()
        scheduler.step()
        history.append(epoch_total / count)
    return history


@dataclass(frozen=True)
class SampleRecord:
    index: int
    id: str
    atoms: tuple[str, ...]
    condition: np.ndarray


def build_gold_records(pairing_path, cond_dim: int = 2048) -> list[SampleRecord]:
    """Records conditioned on the true molecule's fingerprint."""
    records = load_pairing_file(pairing_path)
    graphs = parse_pair_graphs(pairing_path, records)
    out = []
    for index, rec in enumerate(records):
        atoms = tuple(mg.parse_formula(rec.formula).atom_list())
        condition = morgan_fingerprint(graphs[rec.id], 2, cond_dim).to_float()
        out.append(SampleRecord(index, rec.id, atoms, condition))
    return out


def build_spectrum_records(pairing_path, mgf_path, encoder: sc.SpectrumEncoder) -> list[SampleRecord]:
    """Records conditioned on encoded spectra."""
    records = load_pairing_file(pairing_path)
    matched = match_spectra(mgf_path, records)
    out = []
    for index, (rec, spectrum) in enumerate(matched):
        atoms = tuple(mg.parse_formula(rec.formula).atom_list())
        binned = sc.bin_spectrum(spectrum, 1.0, float(encoder.cfg.n_bins))
        out.append(SampleRecord(index, rec.id, atoms, sc.encode(encoder, binned)))
    return out


def sample_records(
    model: dn.BondDenoiser,
    records: list[SampleRecord],
    samples: int,
    steps: int,
    seed: int,
    threads: int = 1,
) -> list[str]:
    """Candidate lines ``<id>\\t<trajectory>\\t<canonical smiles>``.

    Trajectory RNG substreams are keyed by record index, so output is
    byte-identical for any thread count.
    """
    torch.set_num_threads(1)
    model.eval()
    predict = dn.as_sampler(model)
    p0 = fc.uniform_initial()

    def run(record: SampleRecord) -> list[str]:
        molecules = fc.sample_molecules(
            predict,
            record.atoms,
            record.condition,
            steps,
            p0,
            seed,
            samples,
            first_trajectory=record.index * samples,
        )
        return [
            f"{record.id}\t{k}\t{mg.write_canonical(molecule)}"
            for k, molecule in enumerate(molecules)
        ]

    if threads <= 1:
        chunks = [run(record) for record in records]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(run, records))
    return [line for chunk in chunks for line in chunk]


def load_candidates(path) -> dict[str, list[str]]:
    """Candidate SMILES per spectrum id, in trajectory order."""
    groups: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            groups.setdefault(fields[0], []).append(fields[2])
    return groups


def evaluate_files(candidates_path, pairing_path) -> EvalReport:
    records = load_pairing_file(pairing_path)
    truths = parse_pair_graphs(pairing_path, records)
    groups = load_candidates(candidates_path)
    truth_ids = {rec.id for rec in records}
    unknown = sorted(set(groups) - truth_ids)
    missing = sorted(truth_ids - set(groups))
    if unknown or missing:
        raise DataError(
            f"candidate/truth id mismatch: {len(unknown)} unknown "
            f"({', '.join(unknown[:5])}), {len(missing)} missing "
            f"({', '.join(missing[:5])})"
        )
    pairs = []
    for ident in sorted(truth_ids):
        graphs = []
        for smiles in groups[ident]:
            try:
                graphs.append(mg.parse_smiles(smiles))
            except SmilesParseError as exc:
                raise DataError(
                    f"{candidates_path}: bad candidate SMILES {smiles!r} for {ident}: {exc}"
                ) from exc
        pairs.append((ident, truths[ident], graphs))
    return evaluate_dataset(pairs)
