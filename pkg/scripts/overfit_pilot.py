#!/usr/bin/env python3
"""Overfit-and-regenerate experiment on the 50-molecule toy corpus.

Pretrains the decoder with gold-fingerprint conditioning, samples candidates
per training molecule, and reports frequency-ranked top-1/top-10 accuracy.
This is the memorization run backing the acceptance suite; the defaults here
are the ones the acceptance test uses.
"""

import argparse
import os
import sys
import tempfile
import time

from flowms import cli
from flowms import molgraph as mg


def build_pairing_file(corpus_path, out_path):
    with open(out_path, "w", encoding="utf-8") as handle:
        for _, smiles, ident in mg.load_smiles_corpus(corpus_path):
            graph = mg.parse_smiles(smiles)
            handle.write(f"{ident}\t{smiles}\t{mg.formula_of(graph)}\n")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    default_corpus = os.path.join(
        os.path.dirname(__file__), "..", "tests", "data", "toy50.smi"
    )
    parser.add_argument("--corpus", default=default_corpus)
    parser.add_argument("--workdir", default=None)
    parser.add_argument("--epochs", type=int, default=200)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--lr", type=float, default=3e-4)
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--samples", type=int, default=100)
    parser.add_argument("--steps", type=int, default=50)
    parser.add_argument("--threads", type=int, default=8)
    parser.add_argument("--blocks", type=int, default=2)
    parser.add_argument("--heads", type=int, default=4)
    parser.add_argument("--dim", type=int, default=64)
    args = parser.parse_args()

    workdir = args.workdir or tempfile.mkdtemp(prefix="flowms_pilot_")
    os.makedirs(workdir, exist_ok=True)
    pairing = os.path.join(workdir, "pairs.tsv")
    build_pairing_file(args.corpus, pairing)
    checkpoint = os.path.join(workdir, "decoder.flwm")
    candidates = os.path.join(workdir, "candidates.tsv")
    report = os.path.join(workdir, "report.json")

    t0 = time.time()
    rc = cli.main(
        [
            "pretrain-decoder",
            "--corpus", args.corpus,
            "--out", checkpoint,
            "--epochs", str(args.epochs),
            "--batch-size", str(args.batch_size),
            "--lr", str(args.lr),
            "--seed", str(args.seed),
            "--blocks", str(args.blocks),
            "--heads", str(args.heads),
            "--d-node", str(args.dim),
            "--d-edge", str(args.dim),
            "--d-cond", str(args.dim),
            "--d-time", "32",
        ]
    )
    if rc:
        return rc
    train_time = time.time() - t0
    print(f"[pilot] training: {train_time:.1f}s")

    t0 = time.time()
    rc = cli.main(
        [
            "sample",
            "--checkpoint", checkpoint,
            "--pairs", pairing,
            "--gold-fingerprints",
            "--out", candidates,
            "--seed", str(args.seed + 1),
            "--samples", str(args.samples),
            "--steps", str(args.steps),
            "--threads", str(args.threads),
        ]
    )
    if rc:
        return rc
    sample_time = time.time() - t0
    print(f"[pilot] sampling: {sample_time:.1f}s")

    t0 = time.time()
    rc = cli.main(["evaluate", "--candidates", candidates, "--pairs", pairing, "--out", report])
    print(f"[pilot] evaluation: {time.time() - t0:.1f}s")
    print(f"[pilot] artifacts in {workdir}")
    return rc


if __name__ == "__main__":
    sys.exit(main())
