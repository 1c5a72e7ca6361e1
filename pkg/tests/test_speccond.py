import io

import numpy as np
import pytest
import torch

from flowms import errors
from flowms import fingerprint as fp
from flowms import molgraph as mg
from flowms import speccond as sc

SMALL = sc.EncoderConfig(n_bins=16, hidden=12, out_dim=10)


def mgf_text():
    return (
        "BEGIN IONS\n"
        "TITLE=spec1\n"
        "PEPMASS=180.06 12345.0\n"
        "CHARGE=1+\n"
        "60.2 3.0\n"
        "50.1 1.0\n"
        "120.4 9.0\n"
        "END IONS\n"
        "\n"
        "BEGIN IONS\n"
        "TITLE=spec2\n"
        "PEPMASS=85.0\n"
        "40.0 2.5\n"
        "END IONS\n"
    )


class TestParseMgf:
    def test_one_block_sorted_peaks(self):
        spectra = sc.parse_mgf(io.StringIO(mgf_text()))
        assert len(spectra) == 2
        first = spectra[0]
        assert first.id == "spec1"
        assert first.precursor_mz == pytest.approx(180.06)
        assert [mz for mz, _ in first.peaks] == [50.1, 60.2, 120.4]

    def test_file_order_preserved(self):
        spectra = sc.parse_mgf(io.StringIO(mgf_text()))
        assert [s.id for s in spectra] == ["spec1", "spec2"]

    def test_missing_end_ions(self):
        text = "BEGIN IONS\nTITLE=x\nPEPMASS=10\n5.0 1.0\n"
        with pytest.raises(errors.MalformedBlock) as info:
            sc.parse_mgf(io.StringIO(text))
        assert info.value.line == 1

    def test_missing_precursor(self):
        text = "BEGIN IONS\nTITLE=x\n5.0 1.0\nEND IONS\n"
        with pytest.raises(errors.MissingPrecursor):
            sc.parse_mgf(io.StringIO(text))

    def test_bad_peak_line(self):
        text = "BEGIN IONS\nTITLE=x\nPEPMASS=10\n5.0 abc\nEND IONS\n"
        with pytest.raises(errors.BadPeakLine) as info:
            sc.parse_mgf(io.StringIO(text))
        assert info.value.line == 4

    def test_unknown_headers_ignored(self):
        text = "BEGIN IONS\nTITLE=x\nRTINSECONDS=12\nPEPMASS=10\n5.0 1.0\nEND IONS\n"
        assert len(sc.parse_mgf(io.StringIO(text))) == 1

    def test_serialize_roundtrip(self):
        spectra = sc.parse_mgf(io.StringIO(mgf_text()))
        buffer = io.StringIO()
        sc.serialize_mgf(spectra, buffer)
        again = sc.parse_mgf(io.StringIO(buffer.getvalue()))
        assert again == spectra


class TestBinning:
    def _spectrum(self, peaks, precursor=100.0):
        return sc.Spectrum(tuple(sorted(peaks)), precursor, "s")

    def test_single_peak(self):
        binned = sc.bin_spectrum(self._spectrum([(100.0, 1.0)]), 1.0, 1000.0)
        assert binned.bins[100] == 1.0
        assert binned.bins.sum() == 1.0
        assert binned.bins.shape == (1000,)

    def test_accumulation_then_normalize(self):
        binned = sc.bin_spectrum(self._spectrum([(50.2, 1.0), (50.7, 3.0)]), 1.0, 100.0)
        assert binned.bins[50] == 1.0  # 4.0 accumulated, then max-normalized
        assert binned.bins.max() == 1.0

    def test_out_of_range_dropped(self):
        binned = sc.bin_spectrum(self._spectrum([(5.0, 1.0), (2000.0, 9.0)]), 1.0, 1000.0)
        assert binned.dropped == 1
        assert binned.bins[5] == 1.0

    def test_peak_order_invariance(self):
        peaks = [(10.5, 1.0), (20.5, 2.0), (30.5, 3.0)]
        a = sc.bin_spectrum(self._spectrum(peaks), 0.5, 50.0)
        b = sc.bin_spectrum(self._spectrum(list(reversed(peaks))), 0.5, 50.0)
        assert np.array_equal(a.bins, b.bins)

    def test_bad_width(self):
        with pytest.raises(errors.DomainError):
            sc.bin_spectrum(self._spectrum([(1.0, 1.0)]), 0.0)

    def test_values_in_unit_interval(self):
        binned = sc.bin_spectrum(self._spectrum([(1.5, 7.0), (3.5, 2.0)]), 1.0, 10.0)
        assert binned.bins.min() >= 0.0 and binned.bins.max() <= 1.0


class TestEncoder:
    def test_output_range_and_shape(self):
        model = sc.build_encoder(SMALL, seed=1)
        binned = sc.BinnedSpectrum(np.random.default_rng(0).random(16))
        out = sc.encode(model, binned)
        assert out.shape == (10,)
        assert np.all((out > 0) & (out < 1))

    def test_deterministic(self):
        model = sc.build_encoder(SMALL, seed=1)
        binned = sc.BinnedSpectrum(np.linspace(0, 1, 16))
        assert np.array_equal(sc.encode(model, binned), sc.encode(model, binned))

    def test_shape_mismatch(self):
        model = sc.build_encoder(SMALL, seed=1)
        with pytest.raises(errors.ShapeMismatch):
            sc.encode(model, sc.BinnedSpectrum(np.zeros(7)))

    def test_gradient_matches_finite_differences(self):
        model = sc.build_encoder(SMALL, seed=2)
        rng = np.random.default_rng(3)
        bins = torch.from_numpy(rng.random((4, 16)))
        bits = torch.from_numpy((rng.random((4, 10)) < 0.4).astype(np.float64))
        loss = sc.encoder_loss(model, bins, bits)
        model.zero_grad()
        loss.backward()
        params = dict(model.named_parameters())
        worst = 0.0
        for name, param in params.items():
            flat = param.detach().numpy().ravel()
            for k in rng.choice(flat.size, size=min(20, flat.size), replace=False):
                h = 1e-5
                original = flat[k]
                with torch.no_grad():
                    param.view(-1)[k] = original + h
                    up = float(sc.encoder_loss(model, bins, bits))
                    param.view(-1)[k] = original - h
                    down = float(sc.encoder_loss(model, bins, bits))
                    param.view(-1)[k] = original
                fd = (up - down) / (2 * h)
                an = float(param.grad.view(-1)[k])
                if max(abs(fd), abs(an)) > 1e-10:
                    worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
        assert worst < 1e-4


def leaky_corpus(count=12, n_bins=16, out_dim=10):
    """Synthetic spectra whose bins encode the fingerprint bits directly."""
    rng = np.random.default_rng(7)
    corpus = []
    for i in range(count):
        bits = rng.random(out_dim) < 0.35
        peaks = tuple(
            (float(b) + 0.5, 1.0) for b in np.nonzero(bits)[0]
        ) or ((0.25, 1.0),)
        spectrum = sc.Spectrum(tuple(sorted(peaks)), 50.0, f"s{i}")
        pad = np.zeros(2048, dtype=bool)
        pad[: out_dim] = bits
        corpus.append((spectrum, fp.Fingerprint(pad[:out_dim])))
    return corpus


class TestTrainEncoder:
    def test_overfits_leaky_corpus(self):
        corpus = leaky_corpus()
        model = sc.build_encoder(SMALL, seed=4)
        history = sc.train_encoder(
            model, corpus, sc.EncoderTrainConfig(epochs=150, batch_size=4, lr=1e-2, seed=5)
        )
        assert history[-1] < 0.25 * history[0]

    def test_empty_corpus(self):
        model = sc.build_encoder(SMALL, seed=4)
        with pytest.raises(ValueError):
            sc.train_encoder(model, [], sc.EncoderTrainConfig(epochs=1))

    def test_same_seed_identical_history(self):
        corpus = leaky_corpus()
        cfg = sc.EncoderTrainConfig(epochs=5, batch_size=4, seed=6)
        h1 = sc.train_encoder(sc.build_encoder(SMALL, seed=3), corpus, cfg)
        h2 = sc.train_encoder(sc.build_encoder(SMALL, seed=3), corpus, cfg)
        assert h1 == h2


class TestEncoderCheckpoint:
    def test_roundtrip(self, tmp_path):
        model = sc.build_encoder(SMALL, seed=9)
        path = tmp_path / "enc.flwm"
        sc.save_encoder(model, path)
        loaded = sc.load_encoder(path)
        assert loaded.cfg == model.cfg
        for a, b in zip(model.state_dict().values(), loaded.state_dict().values()):
            assert torch.equal(a, b)

    def test_kind_mismatch(self, tmp_path):
        from flowms import denoiser as dn

        model = dn.build_denoiser(
            dn.DenoiserConfig(blocks=1, heads=2, d_node=8, d_edge=8, d_cond=8, d_time=4, cond_dim=4),
            seed=0,
        )
        path = tmp_path / "d.flwm"
        dn.save_checkpoint(model, path)
        with pytest.raises(errors.VersionMismatch):
            sc.load_encoder(path)


def test_encoder_output_feeds_denoiser():
    from flowms import denoiser as dn
    from flowms import flowcore as fc

    enc = sc.build_encoder(sc.EncoderConfig(n_bins=16, hidden=8, out_dim=12), seed=1)
    deno = dn.build_denoiser(
        dn.DenoiserConfig(blocks=1, heads=2, d_node=8, d_edge=8, d_cond=8, d_time=4, cond_dim=12),
        seed=2,
    )
    g = mg.parse_smiles("CCO")
    condition = sc.encode(enc, sc.BinnedSpectrum(np.linspace(0, 1, 16)))
    state = fc.sample_noisy(g, 0.5, fc.uniform_initial(), 3, condition=condition)
    pred = dn.forward(deno, state)
    assert pred.shape == (3, 3, 5)
