"""Corpus handling: noise-file region splits, SNR-controlled mixing, a
deterministic synthetic corpus generator, frame batching, and the JSONL
mixture manifest.

A mixture manifest is one JSON object per line with the fields of
`MixtureRecord`; paths are stored relative to the corpus directory.
"""

from dataclasses import dataclass, asdict
import json
import math
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .dsp import SAMPLE_RATE, Waveform, load_wav, save_wav

SPLITS = ("train", "val", "test-seen", "test-unseen")

# sample-region fractions of every noise file reserved per split
TRAIN_FRACTION = 0.6
VAL_FRACTION = 0.2


@dataclass
class MixtureRecord:
    clean: str
    noise: str
    snr_db: float
    noise_offset: int
    split: str
    seed: int

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")


def split_noise_file(n_samples: int):
    """Region boundaries (train, val, test) of one noise file.

    Regions are [0, 0.6L), [0.6L, 0.8L), [0.8L, L) with floored boundaries;
    they are disjoint and cover the whole file.
    """
    if n_samples < 5:
        raise ValueError(f"noise file too short to split ({n_samples} samples)")
    a = int(n_samples * TRAIN_FRACTION)
    b = int(n_samples * (TRAIN_FRACTION + VAL_FRACTION))
    return (0, a), (a, b), (b, n_samples)


def noise_region_for_split(n_samples: int, split: str):
    """Sample region a mixture of the given split may draw noise from.

    Unseen-noise files are never used in training, so their whole length is
    available to the test split.
    """
    train, val, test = split_noise_file(n_samples)
    if split == "train":
        return train
    if split == "val":
        return val
    if split == "test-seen":
        return test
    return (0, n_samples)


def take_noise_segment(noise: Waveform, region, offset: int, length: int) -> np.ndarray:
    """Crop `length` samples starting at region_start + offset, wrapping
    inside the region when the segment is shorter than the clean signal."""
    start, end = region
    width = end - start
    if width < 1:
        raise ValueError("empty noise region")
    if not 0 <= offset < width:
        raise ValueError(f"offset {offset} outside region of {width} samples")
    idx = start + (offset + np.arange(length)) % width
    return noise.samples[idx]


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float):
    """Scale the noise to hit the target SNR exactly and add it to the clean.

    Returns (mixture, scaled_noise); the scaled noise is what mask/spectrum
    targets must be computed from.
    """
    if len(clean) != len(noise):
        raise ValueError("clean and noise must have equal lengths")
    p_clean = float(np.mean(clean.samples ** 2))
    p_noise = float(np.mean(noise.samples ** 2))
    if p_clean <= 0.0:
        raise ValueError("clean signal is silent")
    if p_noise <= 0.0:
        raise ValueError("noise signal is silent")
    gain = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    scaled = noise.samples * gain
    return (
        Waveform(clean.samples + scaled, clean.sample_rate),
        Waveform(scaled, clean.sample_rate),
    )


def realize_mixture(record: MixtureRecord, corpus_dir):
    """Deterministically reconstruct (mixture, clean, scaled_noise) from a
    manifest record."""
    corpus_dir = Path(corpus_dir)
    clean = load_wav(corpus_dir / record.clean)
    noise = load_wav(corpus_dir / record.noise)
    region = noise_region_for_split(len(noise), record.split)
    segment = Waveform(
        take_noise_segment(noise, region, record.noise_offset, len(clean)),
        noise.sample_rate,
    )
    mixture, scaled = mix_at_snr(clean, segment, record.snr_db)
    return mixture, clean, scaled


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------


def _synth_clean(rng, n_samples, sample_rate):
    """Speech-like signal: an AM-modulated harmonic stack with vibrato.

    All partials stay below 4 kHz, so nearly all energy sits in the speech
    band.
    """
    t = np.arange(n_samples) / sample_rate
    f0 = rng.uniform(80.0, 300.0)
    vib_depth = rng.uniform(0.003, 0.012)
    vib_rate = rng.uniform(4.0, 7.0)
    inst_f0 = f0 * (1.0 + vib_depth * np.sin(2 * np.pi * vib_rate * t + rng.uniform(0, 2 * np.pi)))
    phase = 2.0 * np.pi * np.cumsum(inst_f0) / sample_rate

    max_harmonic = max(1, int(3900.0 / (f0 * (1.0 + vib_depth))))
    sig = np.zeros(n_samples)
    for h in range(1, max_harmonic + 1):
        amp = h ** -0.8 * rng.uniform(0.5, 1.0)
        sig += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    syllable_rate = rng.uniform(2.0, 8.0)
    envelope = 0.5 - 0.5 * np.cos(2 * np.pi * syllable_rate * t + rng.uniform(0, 2 * np.pi))
    sig *= 0.08 + 0.92 * envelope ** 1.5
    return 0.5 * sig / np.max(np.abs(sig))


def _synth_noise(rng, n_samples, sample_rate, family):
    white = rng.standard_normal(n_samples)
    if family == 0:
        sig = white
    elif family == 1:
        # one-pole low-pass, cutoff loosely around 1 kHz
        alpha = math.exp(-2.0 * math.pi * rng.uniform(600.0, 1500.0) / sample_rate)
        sig = lfilter([1.0 - alpha], [1.0, -alpha], white)
    else:
        t = np.arange(n_samples) / sample_rate
        rate = rng.uniform(1.0, 4.0)
        sig = white * (0.55 + 0.45 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
    return 0.3 * sig / np.max(np.abs(sig))


def synth_corpus(out_dir, n_clean, n_noise, clean_duration_s=2.0,
                 noise_duration_s=8.0, sample_rate=SAMPLE_RATE, seed=0):
    """Write a deterministic synthetic corpus; returns (clean, noise) paths
    relative to out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clean_paths, noise_paths = [], []
    for i in range(n_clean):
        rng = np.random.default_rng([seed, 1, i])
        sig = _synth_clean(rng, int(clean_duration_s * sample_rate), sample_rate)
        name = f"clean_{i:03d}.wav"
        save_wav(out_dir / name, Waveform(sig, sample_rate))
        clean_paths.append(name)
    for i in range(n_noise):
        rng = np.random.default_rng([seed, 2, i])
        sig = _synth_noise(rng, int(noise_duration_s * sample_rate), sample_rate, i % 3)
        name = f"noise_{i:03d}.wav"
        save_wav(out_dir / name, Waveform(sig, sample_rate))
        noise_paths.append(name)
    return clean_paths, noise_paths


# ---------------------------------------------------------------------------
# mixture planning
# ---------------------------------------------------------------------------


def plan_corpus(clean_by_split, seen_noise, unseen_noise, noise_lengths,
                snr_range=(-5.0, 15.0), test_snrs=(-5, 0, 5, 10, 15),
                mixes_per_train=3, mixes_per_val=1, seed=0):
    """Build MixtureRecords for every split.

    `clean_by_split` maps "train"/"val"/"test" to clean file lists; training
    and validation SNRs are drawn uniformly from `snr_range`, test mixtures
    get every level in `test_snrs`. Unseen-noise test records only use files
    from `unseen_noise`, which must be disjoint from `seen_noise`.
    """
    if snr_range[0] > snr_range[1]:
        raise ValueError("snr_range low must be <= high")
    if set(seen_noise) & set(unseen_noise):
        raise ValueError("seen and unseen noise files must be disjoint")
    rng = np.random.default_rng(seed)
    records = []

    def offset_for(noise_path, split):
        region = noise_region_for_split(noise_lengths[noise_path], split)
        return int(rng.integers(0, region[1] - region[0]))

    def uniform_snr():
        return float(np.round(rng.uniform(*snr_range), 3))

    for split, per_clean in (("train", mixes_per_train), ("val", mixes_per_val)):
        for clean in clean_by_split.get(split, []):
            for _ in range(per_clean):
                noise = seen_noise[rng.integers(len(seen_noise))]
                records.append(MixtureRecord(
                    clean=clean, noise=noise, snr_db=uniform_snr(),
                    noise_offset=offset_for(noise, split), split=split,
                    seed=seed,
                ))
    for clean in clean_by_split.get("test", []):
        for snr in test_snrs:
            noise = seen_noise[rng.integers(len(seen_noise))]
            records.append(MixtureRecord(
                clean=clean, noise=noise, snr_db=float(snr),
                noise_offset=offset_for(noise, "test-seen"), split="test-seen",
                seed=seed,
            ))
            if unseen_noise:
                noise = unseen_noise[rng.integers(len(unseen_noise))]
                records.append(MixtureRecord(
                    clean=clean, noise=noise, snr_db=float(snr),
                    noise_offset=offset_for(noise, "test-unseen"),
                    split="test-unseen", seed=seed,
                ))
    return records


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec)) + "\n")


def read_manifest(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(MixtureRecord(**json.loads(line)))
    return records


def make_batches(frame_counts, budget=10000, seed=0, shuffle=True):
    """Pack whole utterances into batches of at most `budget` frames.

    Utterances are shuffled per seed, then packed in order; an utterance is
    never split across batches (causal context and batch statistics stay
    intact), so a single oversized utterance forms its own batch. Returns a
    list of batches, each a list of (utterance_index, (0, n_frames)).
    """
    if len(frame_counts) == 0:
        raise ValueError("empty corpus: nothing to batch")
    order = np.arange(len(frame_counts))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(frame_counts))
    batches, current, used = [], [], 0
    for idx in order:
        idx = int(idx)
        n = int(frame_counts[idx])
        if current and used + n > budget:
            batches.append(current)
            current, used = [], 0
        current.append((idx, (0, n)))
        used += n
    batches.append(current)
    return batches
