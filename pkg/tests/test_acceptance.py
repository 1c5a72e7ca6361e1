"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run as ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines and timings.  The overfit-and-regenerate criterion dominates runtime.
"""

import math
import os
import time

import numpy as np
import pytest
import torch

from flowms import cli
from flowms import denoiser as dn
from flowms import evaluation as ev
from flowms import flowcore as fc
from flowms import mces
from flowms import molgraph as mg
from flowms import pipelines as pl
from flowms import speccond as sc
from flowms.fingerprint import morgan_fingerprint, tanimoto

from conftest import TOY_CORPUS, random_molecule

P0 = fc.uniform_initial()
README = os.path.join(os.path.dirname(__file__), "..", "README.md")


def report(number, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"criterion {number:02d} {status} - {detail}")
    assert ok, detail


def test_criterion_01_headline_numbers_documented():
    text = open(README, encoding="utf-8").read()
    numbers = ["9.15", "9.32", "0.46", "12.05", "7.96", "0.51"]
    missing = [n for n in numbers if n not in text]
    stated = "not reproducible" in text
    report(
        1,
        not missing and stated,
        f"README documents the published NPLIB1 numbers and the desk-scale caveat "
        f"(missing: {missing or 'none'})",
    )


def test_criterion_02_noising_marginals():
    start = time.time()
    n = 460  # 105,570 upper-triangular edges per draw
    iu = np.triu_indices(n, k=1)
    worst = 0.0
    for a1 in range(5):
        cats = np.full((n, n), a1, dtype=np.int64)
        np.fill_diagonal(cats, 0)
        graph = mg.MolecularGraph.from_category_matrix(["C"] * n, cats)
        for t in (0.1, 0.5, 0.9):
            state = fc.sample_noisy(graph, t, P0, rng_seed=hash((a1, t)) & 0xFFFF)
            freq = np.bincount(state.bonds_t.argmax(2)[iu], minlength=5) / iu[0].size
            expected = fc.noise_prob(a1, t, P0)
            if a1 != mg.BOND_NONE:
                # the diagonal stays `none`; only off-diagonal edges sampled
                worst = max(worst, np.abs(freq - expected).max())
            else:
                worst = max(worst, np.abs(freq - expected).max())
    elapsed = time.time() - start
    report(
        2,
        worst < 0.01 and elapsed < 60,
        f"empirical noising marginals within +/-0.01 of the linear path "
        f"(max dev {worst:.4f}, {elapsed:.1f}s < 60s)",
    )


def test_criterion_03_rate_matrix_analytic_and_fd():
    start = time.time()
    rng = np.random.default_rng(99)
    worst_analytic = 0.0
    worst_fd = 0.0
    h = 1e-6
    for _ in range(20):
        t = float(rng.uniform(0.02, 0.97))
        a_t, a1 = (int(v) for v in rng.integers(0, 5, size=2))
        got = fc.conditional_rate(a_t, a1, t, P0)
        analytic = np.zeros(5)
        if a_t != a1:
            analytic[a1] = 1.0 / (1.0 - t)
        worst_analytic = max(worst_analytic, np.abs(got - analytic).max())
        fd = np.zeros(5)
        p_at = fc.noise_prob(a1, t, P0)[a_t]
        for x in range(5):
            if x == a_t:
                continue
            d_x = (fc.noise_prob(a1, t + h, P0)[x] - fc.noise_prob(a1, t - h, P0)[x]) / (2 * h)
            d_at = (fc.noise_prob(a1, t + h, P0)[a_t] - fc.noise_prob(a1, t - h, P0)[a_t]) / (2 * h)
            fd[x] = max(0.0, d_x - d_at) / (5 * p_at)
        worst_fd = max(worst_fd, np.abs(got - fd).max())
    elapsed = time.time() - start
    report(
        3,
        worst_analytic < 1e-8 and worst_fd < 1e-8 and elapsed < 1.0,
        f"conditional rates match 1/(1-t) analytic form (dev {worst_analytic:.2e}) and "
        f"finite-difference oracle (dev {worst_fd:.2e}), {elapsed:.2f}s < 1s",
    )


def test_criterion_04_oracle_denoiser_recovery():
    start = time.time()
    target = mg.parse_smiles("CC(=O)Oc1ccccc1CO")  # 12 atoms
    assert target.n == 12
    onehot = target.bonds.astype(np.float64)

    def oracle(bonds, atoms, condition, t):
        return np.broadcast_to(onehot, bonds.shape)

    iu = np.triu_indices(target.n, k=1)
    truth = target.category_matrix()[iu]

    def edge_accuracy(steps):
        outs = fc.sample_molecules(
            oracle, target.atoms, None, steps, P0, rng_seed=17, count=1000
        )
        return float(
            np.mean([(o.category_matrix()[iu] == truth).mean() for o in outs])
        )

    acc50 = edge_accuracy(50)
    acc500 = edge_accuracy(500)
    elapsed = time.time() - start
    report(
        4,
        acc50 >= 0.99 and acc500 >= 0.998 and acc500 >= acc50 and elapsed < 300,
        f"oracle recovery: steps=50 -> {acc50:.4f} (>=0.99), steps=500 -> {acc500:.4f} "
        f"(>=0.998), non-decreasing, {elapsed:.1f}s < 300s",
    )


def test_criterion_05_gradient_correctness():
    start = time.time()
    rng = np.random.default_rng(5)

    def sweep(model, loss_fn):
        model.zero_grad(set_to_none=True)
        loss_fn().backward()
        worst = 0.0
        for _, param in model.named_parameters():
            grad_flat = param.grad.detach().numpy().ravel()
            flat = param.detach().numpy().ravel()
            for k in range(flat.size):
                h = 1e-5
                original = flat[k]
                with torch.no_grad():
                    param.view(-1)[k] = original + h
                    up = float(loss_fn())
                    param.view(-1)[k] = original - h
                    down = float(loss_fn())
                    param.view(-1)[k] = original
                fd = (up - down) / (2 * h)
                an = grad_flat[k]
                if max(abs(fd), abs(an)) > 1e-10:
                    worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))
        return worst

    cfg = dn.DenoiserConfig(
        blocks=2, heads=4, d_node=16, d_edge=16, d_cond=16, d_time=8, cond_dim=6
    )
    model = dn.build_denoiser(cfg, seed=4)
    graph = random_molecule(rng, 3)
    state = fc.sample_noisy(graph, 0.37, P0, 6, condition=rng.random(6))
    batch = [(state, graph)]
    worst_denoiser = sweep(model, lambda: dn.mean_batch_loss(model, batch)[0])

    enc = sc.build_encoder(sc.EncoderConfig(n_bins=12, hidden=10, out_dim=8), seed=4)
    bins = torch.from_numpy(rng.random((3, 12)))
    bits = torch.from_numpy((rng.random((3, 8)) < 0.4).astype(np.float64))
    worst_encoder = sweep(enc, lambda: sc.encoder_loss(enc, bins, bits))

    elapsed = time.time() - start
    report(
        5,
        worst_denoiser < 1e-4 and worst_encoder < 1e-4 and elapsed < 120,
        f"full-parameter finite-difference sweep: denoiser rel err {worst_denoiser:.2e}, "
        f"encoder rel err {worst_encoder:.2e} (< 1e-4), {elapsed:.1f}s < 120s",
    )


def test_criterion_06_overfit_and_regenerate(tmp_path):
    start = time.time()
    pairing = tmp_path / "pairs.tsv"
    with open(pairing, "w") as handle:
        for _, smiles, ident in mg.load_smiles_corpus(TOY_CORPUS):
            graph = mg.parse_smiles(smiles)
            handle.write(f"{ident}\t{smiles}\t{mg.formula_of(graph)}\n")

    model_cfg = dn.DenoiserConfig(
        blocks=2, heads=4, d_node=64, d_edge=64, d_cond=64, d_time=32, cond_dim=2048
    )
    train_cfg = dn.TrainConfig(epochs=200, batch_size=8, lr=3e-4, seed=2024)
    checkpoint = tmp_path / "decoder.flwm"
    history = pl.pretrain_decoder(TOY_CORPUS, checkpoint, model_cfg, train_cfg)
    assert history[-1] < 0.25 * history[0], "final epoch loss must drop below 25% of initial"

    model = dn.load_checkpoint(checkpoint)
    records = pl.build_gold_records(pairing, model.cfg.cond_dim)
    lines = pl.sample_records(model, records, samples=100, steps=50, seed=2025, threads=1)
    candidates = tmp_path / "candidates.tsv"
    candidates.write_text("\n".join(lines) + "\n")

    result = pl.evaluate_files(candidates, pairing)
    top1 = result.aggregate["top1_accuracy"]
    top10 = result.aggregate["top10_accuracy"]
    elapsed = time.time() - start
    report(
        6,
        top1 >= 60.0 and top10 >= 85.0 and elapsed < 2700,
        f"overfit-and-regenerate: top-1 {top1:.1f}% (>=60%), top-10 {top10:.1f}% (>=85%), "
        f"loss ratio {history[-1] / history[0]:.3f} (<0.25), {elapsed / 60:.1f}min < 45min",
    )


def test_criterion_07_mces_oracle_equivalence(rng):
    start = time.time()
    mismatches = 0
    for _ in range(50):
        g1 = random_molecule(rng, int(rng.integers(2, 9)))
        g2 = random_molecule(rng, int(rng.integers(2, 9)))
        if mces.mces_distance(g1, g2).distance != mces.mces_bruteforce(g1, g2).distance:
            mismatches += 1
    benzene = mg.parse_smiles("c1ccccc1")
    identical_zero = mces.mces_distance(benzene, benzene).distance == 0
    elapsed = time.time() - start
    report(
        7,
        mismatches == 0 and identical_zero and elapsed < 120,
        f"branch-and-bound equals exhaustive enumeration on 50 random pairs "
        f"({mismatches} mismatches), identical graphs score 0, {elapsed:.1f}s < 120s",
    )


def test_criterion_08_fingerprint_invariances(rng):
    start = time.time()
    violations = 0
    for _ in range(1000):
        graph = random_molecule(rng, int(rng.integers(1, 11)))
        perm = rng.permutation(graph.n)
        if morgan_fingerprint(mg.permute(graph, perm)) != morgan_fingerprint(graph):
            violations += 1
    f = morgan_fingerprint(mg.parse_smiles("CC(=O)Oc1ccccc1C(=O)O"))
    self_sim = tanimoto(f, f)
    monotone = True
    for smiles in ("CCO", "c1ccccc1CC", "CSCCC(N)C(=O)O"):
        graph = mg.parse_smiles(smiles)
        previous = morgan_fingerprint(graph, radius=0)
        for radius in (1, 2, 3):
            current = morgan_fingerprint(graph, radius=radius)
            if not np.all(current.bits[previous.bits]):
                monotone = False
            previous = current
    elapsed = time.time() - start
    report(
        8,
        violations == 0 and self_sim == 1.0 and monotone and elapsed < 60,
        f"permutation invariance on 1000 pairs ({violations} violations), "
        f"tanimoto(f,f)={self_sim}, radius-subset monotonicity holds, {elapsed:.1f}s < 60s",
    )


def test_criterion_09_formula_preservation(rng):
    start = time.time()

    def junk_predict(bonds, atoms, condition, t):
        out = rng.random(bonds.shape)
        return out / out.sum(-1, keepdims=True)

    total = 0
    bad = 0
    for case in range(20):
        counts = {"C": int(rng.integers(1, 8))}
        for elem in ("N", "O", "S", "Cl"):
            if rng.random() < 0.5:
                counts[elem] = int(rng.integers(1, 3))
        formula = mg.Formula(counts)
        atoms = tuple(formula.atom_list())
        outs = fc.sample_molecules(
            junk_predict, atoms, None, steps=10, p0=P0, rng_seed=case, count=500
        )
        for out in outs:
            total += 1
            if mg.formula_of(out) != mg.Formula(counts):
                bad += 1
    elapsed = time.time() - start
    report(
        9,
        total == 10000 and bad == 0 and elapsed < 300,
        f"{total} sampled molecules, {bad} formula mismatches (must be 0), "
        f"{elapsed:.1f}s < 300s",
    )


def test_criterion_10_end_to_end_determinism(tmp_path):
    start = time.time()
    corpus = tmp_path / "corpus.smi"
    corpus.write_text("CCO\tm1\nCCN\tm2\nCC=O\tm3\n")
    pairing = tmp_path / "pairs.tsv"
    pairing.write_text("s1\tCCO\tC2H6O\ns2\tCCN\tC2H7N\ns3\tCC=O\tC2H4O\n")
    checkpoint = tmp_path / "decoder.flwm"
    rc = cli.main(
        ["pretrain-decoder", "--corpus", str(corpus), "--out", str(checkpoint),
         "--epochs", "2", "--batch-size", "2", "--seed", "3",
         "--blocks", "1", "--heads", "2", "--d-node", "8", "--d-edge", "8",
         "--d-cond", "8", "--d-time", "4", "--cond-dim", "64"]
    )
    assert rc == 0
    outputs = []
    for threads in ("1", "8"):
        out = tmp_path / f"candidates_{threads}.tsv"
        rc = cli.main(
            ["sample", "--checkpoint", str(checkpoint), "--pairs", str(pairing),
             "--gold-fingerprints", "--out", str(out), "--seed", "11",
             "--samples", "25", "--steps", "10", "--threads", threads]
        )
        assert rc == 0
        outputs.append(out.read_bytes())
    elapsed = time.time() - start
    report(
        10,
        outputs[0] == outputs[1],
        f"cmd_sample output byte-identical at 1 and 8 threads "
        f"({len(outputs[0])} bytes, {elapsed:.1f}s)",
    )
