"""Candidate filtering, frequency ranking, and the top-k metric suite."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .fingerprint import morgan_fingerprint, tanimoto
from .mces import mces_distance
from .molgraph import MolecularGraph, validate, write_canonical


@dataclass(frozen=True)
class RankedCandidates:
    """Deduplicated molecules ordered by (count desc, first_seen asc)."""

    entries: tuple[tuple[MolecularGraph, int, int], ...]  # (graph, count, first_seen)

    def __len__(self) -> int:
        return len(self.entries)

    def top(self, k: int) -> list[MolecularGraph]:
        return [graph for graph, _, _ in self.entries[:k]]


@dataclass(frozen=True)
class SpectrumScore:
    id: str
    top1_hit: bool
    top10_hit: bool
    top1_mces: float  # math.inf when no candidates survive filtering
    top10_mces: float
    top1_tanimoto: float
    top10_tanimoto: float
    kept: int
    discarded: int


@dataclass(frozen=True)
class EvalReport:
    per_spectrum: tuple[SpectrumScore, ...]
    aggregate: dict[str, float] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        records = []
        for score in self.per_spectrum:
            records.append(
                {
                    "id": score.id,
                    "top1_hit": score.top1_hit,
                    "top10_hit": score.top10_hit,
                    "top1_mces": None if math.isinf(score.top1_mces) else score.top1_mces,
                    "top10_mces": None if math.isinf(score.top10_mces) else score.top10_mces,
                    "top1_tanimoto": score.top1_tanimoto,
                    "top10_tanimoto": score.top10_tanimoto,
                    "kept": score.kept,
                    "discarded": score.discarded,
                }
            )
        return {"per_spectrum": records, "aggregate": dict(self.aggregate)}


def filter_candidates(samples) -> tuple[list[MolecularGraph], int]:
    """Keep valence-valid connected molecules; return kept list + discard count."""
    kept = []
    discarded = 0
    for graph in samples:
        report = validate(graph)
        if report.valence_ok and report.connected:
            kept.append(graph)
        else:
            discarded += 1
    return kept, discarded


def rank_by_frequency(samples) -> RankedCandidates:
    """Group by canonical form; order by count desc, earliest occurrence asc."""
    groups: dict[str, list] = {}
    for index, graph in enumerate(samples):
        key = write_canonical(graph)
        if key in groups:
            groups[key][1] += 1
        else:
            groups[key] = [graph, 1, index]
    ordered = sorted(groups.values(), key=lambda rec: (-rec[1], rec[2]))
    return RankedCandidates(tuple((g, c, f) for g, c, f in ordered))


def topk_metrics(
    ranked: RankedCandidates, truth: MolecularGraph, k: int
) -> tuple[bool, float, float]:
    """(hit, min MCES, max Tanimoto) over the first k ranked candidates.

    An empty list scores (False, inf, 0.0).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    truth_key = write_canonical(truth)
    truth_fp = morgan_fingerprint(truth)
    hit = False
    min_mces = math.inf
    max_tanimoto = 0.0
    for candidate in ranked.top(k):
        if write_canonical(candidate) == truth_key:
            hit = True
        min_mces = min(min_mces, mces_distance(candidate, truth).distance)
        max_tanimoto = max(max_tanimoto, tanimoto(morgan_fingerprint(candidate), truth_fp))
    return hit, min_mces, max_tanimoto


def evaluate_spectrum(ident: str, truth: MolecularGraph, samples) -> SpectrumScore:
    kept, discarded = filter_candidates(samples)
    ranked = rank_by_frequency(kept)
    hit1, mces1, tani1 = topk_metrics(ranked, truth, 1) if kept else (False, math.inf, 0.0)
    hit10, mces10, tani10 = topk_metrics(ranked, truth, 10) if kept else (False, math.inf, 0.0)
    return SpectrumScore(ident, hit1, hit10, mces1, mces10, tani1, tani10, len(kept), discarded)


def evaluate_dataset(pairs) -> EvalReport:
    """Score (spectrum id, truth graph, samples) triples and aggregate.

    Accuracy aggregates are percentages; MCES means exclude spectra with no
    surviving candidates, counted separately in ``no_candidate_count``.
    """
    scores = [evaluate_spectrum(ident, truth, samples) for ident, truth, samples in pairs]
    count = len(scores)

    def mean(values):
        values = list(values)
        return sum(values) / len(values) if values else 0.0

    aggregate = {
        "top1_accuracy": 100.0 * mean(s.top1_hit for s in scores),
        "top1_mces": mean(s.top1_mces for s in scores if not math.isinf(s.top1_mces)),
        "top1_tanimoto": mean(s.top1_tanimoto for s in scores),
        "top10_accuracy": 100.0 * mean(s.top10_hit for s in scores),
        "top10_mces": mean(s.top10_mces for s in scores if not math.isinf(s.top10_mces)),
        "top10_tanimoto": mean(s.top10_tanimoto for s in scores),
        "no_candidate_count": sum(1 for s in scores if s.kept == 0),
    }
    if count == 0:
        aggregate = {key: 0.0 for key in aggregate}
        aggregate["no_candidate_count"] = 0
    return EvalReport(tuple(scores), aggregate)
