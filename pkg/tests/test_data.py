import math

import numpy as np
import pytest

from phasedcn.dsp import Waveform, load_wav
from phasedcn.data import (
    MixtureRecord,
    make_batches,
    mix_at_snr,
    noise_region_for_split,
    plan_corpus,
    read_manifest,
    realize_mixture,
    split_noise_file,
    synth_corpus,
    take_noise_segment,
    write_manifest,
)


def test_split_regions():
    assert split_noise_file(100000) == ((0, 60000), (60000, 80000), (80000, 100000))
    assert split_noise_file(10) == ((0, 6), (6, 8), (8, 10))


def test_split_disjoint_cover():
    for n in (10, 997, 123456):
        regions = split_noise_file(n)
        assert regions[0][0] == 0 and regions[-1][1] == n
        for (_, end), (start, _) in zip(regions, regions[1:]):
            assert end == start


def test_split_too_short():
    with pytest.raises(ValueError):
        split_noise_file(4)


def test_region_for_split():
    assert noise_region_for_split(100, "train") == (0, 60)
    assert noise_region_for_split(100, "val") == (60, 80)
    assert noise_region_for_split(100, "test-seen") == (80, 100)
    assert noise_region_for_split(100, "test-unseen") == (0, 100)


def test_noise_segment_wraps_inside_region():
    noise = Waveform(np.arange(20, dtype=np.float64), 16000)
    seg = take_noise_segment(noise, (5, 10), offset=3, length=7)
    assert np.array_equal(seg, [8.0, 9.0, 5.0, 6.0, 7.0, 8.0, 9.0])
    with pytest.raises(ValueError):
        take_noise_segment(noise, (5, 10), offset=5, length=3)


def test_mix_gain_cases():
    rng = np.random.default_rng(0)
    clean = Waveform(rng.standard_normal(8000), 16000)
    noise = Waveform(clean.samples[::-1].copy(), 16000)  # equal power
    _, scaled0 = mix_at_snr(clean, noise, 0.0)
    assert np.abs(scaled0.samples - noise.samples).max() < 1e-12
    _, scaled10 = mix_at_snr(clean, noise, 10.0)
    gain = scaled10.samples[0] / noise.samples[0]
    assert gain == pytest.approx(10.0 ** -0.5, abs=1e-12)


def test_mix_hits_target_exactly():
    rng = np.random.default_rng(1)
    clean = Waveform(rng.standard_normal(5000) * 0.3, 16000)
    noise = Waveform(rng.standard_normal(5000) * 2.1, 16000)
    for snr in (-5.0, 0.0, 7.5, 15.0):
        mixture, scaled = mix_at_snr(clean, noise, snr)
        achieved = 10.0 * math.log10(
            np.mean(clean.samples ** 2) / np.mean(scaled.samples ** 2)
        )
        assert abs(achieved - snr) < 1e-9
        assert np.array_equal(mixture.samples, clean.samples + scaled.samples)


def test_mix_rejects_silence_and_mismatch():
    clean = Waveform(np.ones(100), 16000)
    with pytest.raises(ValueError):
        mix_at_snr(Waveform(np.zeros(100), 16000), clean, 0.0)
    with pytest.raises(ValueError):
        mix_at_snr(clean, Waveform(np.zeros(100), 16000), 0.0)
    with pytest.raises(ValueError):
        mix_at_snr(clean, Waveform(np.ones(99), 16000), 0.0)


def test_synth_deterministic_and_counts(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    clean_a, noise_a = synth_corpus(a, 5, 2, seed=7)
    clean_b, noise_b = synth_corpus(b, 5, 2, seed=7)
    assert clean_a == clean_b and noise_a == noise_b
    assert len(list(a.glob("*.wav"))) == 7
    for name in clean_a + noise_a:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_synth_clean_energy_below_4k(tmp_path):
    clean, _ = synth_corpus(tmp_path, 3, 0, seed=3)
    for name in clean:
        samples = load_wav(tmp_path / name).samples
        power = np.abs(np.fft.rfft(samples)) ** 2
        freqs = np.fft.rfftfreq(len(samples), 1.0 / 16000)
        assert power[freqs < 4000.0].sum() / power.sum() >= 0.9


def test_make_batches_packing():
    plan = make_batches([3000, 4000, 5000], budget=10000, shuffle=False)
    assert [[idx for idx, _ in batch] for batch in plan] == [[0, 1], [2]]
    assert plan[0][0][1] == (0, 3000)


def test_make_batches_oversized_utterance():
    plan = make_batches([12000], budget=10000, shuffle=False)
    assert plan == [[(0, (0, 12000))]]


def test_make_batches_partition():
    rng = np.random.default_rng(5)
    counts = rng.integers(50, 400, size=37).tolist()
    plan = make_batches(counts, budget=1000, seed=3)
    seen = sorted(idx for batch in plan for idx, _ in batch)
    assert seen == list(range(37))
    for batch in plan:
        total = sum(n for _, (_, n) in batch)
        assert total <= 1000 or len(batch) == 1


def test_make_batches_empty():
    with pytest.raises(ValueError):
        make_batches([], budget=100)


def test_manifest_roundtrip(tmp_path):
    records = [
        MixtureRecord("c0.wav", "n0.wav", -2.5, 123, "train", 0),
        MixtureRecord("c1.wav", "n1.wav", 15.0, 0, "test-unseen", 0),
    ]
    path = tmp_path / "m.jsonl"
    write_manifest(path, records)
    assert read_manifest(path) == records


def test_record_validation():
    with pytest.raises(ValueError):
        MixtureRecord("c", "n", 0.0, 0, "nope", 0)
    with pytest.raises(ValueError):
        MixtureRecord("c", "n", float("inf"), 0, "train", 0)


def test_plan_corpus_structure(toy_corpus):
    records = toy_corpus.records
    assert all(r.split in ("train", "val", "test-seen") for r in records)
    assert sum(r.split == "train" for r in records) == 16 * 3
    assert sum(r.split == "val" for r in records) == 2 * 2
    train_snrs = [r.snr_db for r in records if r.split == "train"]
    assert min(train_snrs) >= -5.0 and max(train_snrs) <= 15.0
    for rec in records:
        region = noise_region_for_split(toy_corpus.noise_lengths[rec.noise], rec.split)
        assert 0 <= rec.noise_offset < region[1] - region[0]


def test_plan_corpus_unseen_disjoint(toy_corpus):
    with pytest.raises(ValueError):
        plan_corpus({"train": ["c"]}, ["n1"], ["n1"], {"n1": 100000})
    records = plan_corpus(
        {"test": ["c0"]}, ["n_seen"], ["n_new"],
        {"n_seen": 100000, "n_new": 100000}, test_snrs=(0, 5), seed=1,
    )
    unseen = [r for r in records if r.split == "test-unseen"]
    assert len(unseen) == 2
    assert all(r.noise == "n_new" for r in unseen)
    seen_noises = {r.noise for r in records if r.split != "test-unseen"}
    assert "n_new" not in seen_noises


def test_plan_corpus_rejects_bad_range():
    with pytest.raises(ValueError):
        plan_corpus({"train": ["c"]}, ["n"], [], {"n": 1000}, snr_range=(15, -5))


def test_realize_mixture_deterministic(toy_corpus):
    rec = toy_corpus.records[0]
    a, _, _ = realize_mixture(rec, toy_corpus.root)
    b, _, _ = realize_mixture(rec, toy_corpus.root)
    assert np.array_equal(a.samples, b.samples)
