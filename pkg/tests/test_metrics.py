import numpy as np
import pytest

from phasedcn.dsp import FrameSpec, Waveform
from phasedcn.data import MixtureRecord
from phasedcn.metrics import evaluate_corpus, segmental_snr, si_sdr, stoi
from helpers import IdentityMaskModel, PassNormalizer, mixture_at, trim_pair
from oracles import segmental_snr_loop, si_sdr_scalar


def _speechish(seed=0, n=16000):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / 16000.0
    env = 0.4 + 0.6 * np.sin(2 * np.pi * 3.0 * t) ** 2
    return Waveform(env * np.sin(2 * np.pi * 220.0 * t)
                    + 0.3 * env * np.sin(2 * np.pi * 440.0 * t + 1.0), 16000)


def test_si_sdr_caps_and_scale_invariance():
    ref = _speechish(0)
    assert si_sdr(ref, ref) == 100.0
    doubled = Waveform(2.0 * ref.samples, 16000)
    assert si_sdr(ref, doubled) == 100.0
    rng = np.random.default_rng(1)
    est = Waveform(ref.samples + 0.1 * rng.standard_normal(len(ref)), 16000)
    # scaling by powers of two is exact in floating point
    assert si_sdr(ref, Waveform(2.0 * est.samples, 16000)) == si_sdr(ref, est)
    assert si_sdr(ref, Waveform(0.5 * est.samples, 16000)) == si_sdr(ref, est)
    a = si_sdr(ref, Waveform(3.0 * est.samples, 16000))
    assert a == pytest.approx(si_sdr(ref, est), abs=1e-10)


def test_si_sdr_orthogonal_noise_case():
    rng = np.random.default_rng(2)
    ref = rng.standard_normal(8000)
    noise = rng.standard_normal(8000)
    noise -= (noise @ ref) / (ref @ ref) * ref  # exactly orthogonal
    noise *= np.sqrt((ref @ ref) / 100.0 / (noise @ noise))
    value = si_sdr(Waveform(ref, 16000), Waveform(ref + noise, 16000))
    assert value == pytest.approx(20.0, abs=1e-9)


def test_si_sdr_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    ref = rng.standard_normal(2000)
    est = ref + 0.5 * rng.standard_normal(2000)
    got = si_sdr(Waveform(ref, 16000), Waveform(est, 16000))
    assert got == pytest.approx(si_sdr_scalar(ref, est), abs=1e-9)


def test_si_sdr_silent_reference():
    with pytest.raises(ValueError):
        si_sdr(Waveform(np.zeros(100), 16000), Waveform(np.ones(100), 16000))


def test_segmental_snr_clamps():
    ref = _speechish(4)
    assert segmental_snr(ref, ref) == 35.0
    assert segmental_snr(ref, Waveform(np.zeros(len(ref)), 16000)) == -10.0


def test_segmental_snr_matches_loop():
    rng = np.random.default_rng(5)
    ref = _speechish(5)
    est = Waveform(ref.samples + 0.2 * rng.standard_normal(len(ref)), 16000)
    got = segmental_snr(ref, est)
    want = segmental_snr_loop(ref.samples, est.samples)
    assert got == pytest.approx(want, abs=1e-9)


def test_segmental_snr_no_active_frames():
    silent = Waveform(np.zeros(4096), 16000)
    with pytest.raises(ValueError):
        segmental_snr(silent, silent)


def test_stoi_self_identity():
    ref = _speechish(6)
    assert stoi(ref, ref) == pytest.approx(1.0, abs=1e-6)


def test_stoi_white_noise_low():
    ref = _speechish(7)
    noise = Waveform(0.1 * np.random.default_rng(8).standard_normal(len(ref)), 16000)
    assert stoi(ref, noise) < 0.3


def test_stoi_too_short():
    short = Waveform(np.zeros(8000), 16000)
    with pytest.raises(ValueError):
        stoi(short, short)


def test_stoi_monotonic_in_snr(toy_corpus):
    # 20 clean/noise pairings evaluated at four SNRs
    pairs = [(c, toy_corpus.noise[i % 3], 41 * i % 997)
             for i, c in enumerate(toy_corpus.clean)]
    means = []
    for snr in (-5.0, 0.0, 5.0, 10.0):
        values = []
        for clean_name, noise_name, offset in pairs:
            mixture, clean, _ = mixture_at(toy_corpus, clean_name, noise_name, snr,
                                           split="train", offset=offset)
            values.append(stoi(clean, mixture))
        means.append(float(np.mean(values)))
    assert all(b > a for a, b in zip(means, means[1:])), means


def test_evaluate_corpus_identity_enhancer(toy_corpus):
    records = [
        MixtureRecord(clean=c, noise=toy_corpus.noise[i % 3], snr_db=snr,
                      noise_offset=0, split="test-seen", seed=0)
        for i, c in enumerate(toy_corpus.clean[16:20])
        for snr in (0.0, 5.0)
    ]
    report = evaluate_corpus(IdentityMaskModel(), PassNormalizer(), records,
                             toy_corpus.root, modes=("irm-unpha",))
    assert not report.errors
    assert {(r["mode"], r["snr_db"], r["split"]) for r in report.rows} == {
        ("irm-unpha", 0.0, "test-seen"), ("irm-unpha", 5.0, "test-seen"),
    }
    for row in report.rows:
        # all-ones mask reproduces the noisy input: SI-SDR tracks the mixing SNR
        assert abs(row["si_sdr"] - row["snr_db"]) < 0.5
        members = [u for u in report.utterances
                   if (u["mode"], u["snr_db"], u["split"])
                   == (row["mode"], row["snr_db"], row["split"])]
        assert row["count"] == len(members)
        assert row["si_sdr"] == pytest.approx(
            np.mean([u["si_sdr"] for u in members]), abs=1e-12)
    assert "si_sdr" in report.to_table()


def test_evaluate_corpus_empty_manifest(toy_corpus):
    with pytest.raises(ValueError):
        evaluate_corpus(IdentityMaskModel(), PassNormalizer(), [], toy_corpus.root)


def test_evaluate_corpus_missing_file_continues(toy_corpus):
    records = [
        MixtureRecord(clean="missing.wav", noise=toy_corpus.noise[0], snr_db=0.0,
                      noise_offset=0, split="test-seen", seed=0),
        MixtureRecord(clean=toy_corpus.clean[0], noise=toy_corpus.noise[0], snr_db=0.0,
                      noise_offset=0, split="test-seen", seed=0),
    ]
    report = evaluate_corpus(IdentityMaskModel(), PassNormalizer(), records,
                             toy_corpus.root, modes=("irm-unpha",))
    assert len(report.errors) == 1 and "missing.wav" in report.errors[0]
    assert len(report.utterances) == 1
