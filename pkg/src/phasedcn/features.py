"""Input features (log power spectrum, windowed frame, real/imag spectrum),
training targets (ratio mask and clean RI spectrum), and global z-scoring.

Normalizer statistics are persisted as a little-endian binary file:
4-byte uint32 header length, a UTF-8 JSON header
(``{"format": "phasedcn-normalizer", "version": 1, "frame_count": N,
"streams": [{"name": ..., "dim": ...}, ...]}``), then for each stream in
header order its mean vector followed by its std vector, both float32.
"""

from dataclasses import dataclass
import json
import struct

import numpy as np

from .dsp import FrameSpec, frame_signal, stft

LPS_FLOOR = 1e-12
STD_FLOOR = 1e-8

STREAMS = ("y1", "y2", "y3")


def compute_lps(frames: np.ndarray) -> np.ndarray:
    """Log power spectrum ln(max(|Y|^2, 1e-12)) per bin; the floor keeps
    silent bins finite."""
    power = np.abs(np.asarray(frames)) ** 2
    return np.log(np.maximum(power, LPS_FLOOR))


def compute_ri(frames: np.ndarray) -> np.ndarray:
    """Concatenate real parts then imaginary parts along the last axis."""
    frames = np.asarray(frames)
    return np.concatenate([frames.real, frames.imag], axis=-1)


def ri_to_complex(ri: np.ndarray) -> np.ndarray:
    """Inverse of compute_ri."""
    ri = np.asarray(ri)
    half = ri.shape[-1] // 2
    return ri[..., :half] + 1j * ri[..., half:]


def compute_irm(clean, noise, exponent: float = 0.5) -> np.ndarray:
    """Ratio mask (|S|^2 / (|S|^2 + |N|^2))^exponent with 0/0 -> 0."""
    ps = np.abs(np.asarray(clean)) ** 2
    pn = np.abs(np.asarray(noise)) ** 2
    total = ps + pn
    out = np.zeros_like(ps)
    np.divide(ps, total, out=out, where=total > 0.0)
    return out ** exponent if exponent != 1.0 else out


@dataclass
class FeatureTriplet:
    """Per-frame network inputs: y1 (bins), y2 (frame_len), y3 (2*bins)."""

    y1: np.ndarray
    y2: np.ndarray
    y3: np.ndarray

    def __post_init__(self):
        t = self.y1.shape[0]
        if self.y2.shape[0] != t or self.y3.shape[0] != t:
            raise ValueError("feature streams disagree on frame count")
        if self.y3.shape[1] != 2 * self.y1.shape[1]:
            raise ValueError("y3 width must be twice y1 width")
        for arr in (self.y1, self.y2, self.y3):
            if not np.isfinite(arr).all():
                raise ValueError("non-finite feature values")

    @property
    def n_frames(self):
        return self.y1.shape[0]

    def dims(self):
        return (self.y1.shape[1], self.y2.shape[1], self.y3.shape[1])


@dataclass
class TargetPair:
    """Training targets: mask in [0,1] (bins) and clean RI spectrum (2*bins)."""

    irm: np.ndarray
    ri_clean: np.ndarray


def extract_triplet(samples, spec: FrameSpec) -> tuple[FeatureTriplet, np.ndarray]:
    """Compute the raw (unnormalized) feature triplet of a signal.

    Returns the triplet and the noisy complex spectrogram (needed later for
    the noisy magnitude/phase during reconstruction).
    """
    spectrogram = stft(samples, spec)
    y1 = compute_lps(spectrogram)
    y2 = frame_signal(samples, spec)
    y3 = compute_ri(spectrogram)
    return FeatureTriplet(y1=y1, y2=y2, y3=y3), spectrogram


def compute_targets(clean_spec, noise_spec, irm_exponent: float = 0.5) -> TargetPair:
    """Targets from the aligned clean/scaled-noise spectrogram pair."""
    return TargetPair(
        irm=compute_irm(clean_spec, noise_spec, irm_exponent),
        ri_clean=compute_ri(clean_spec),
    )


class FeatureNormalizer:
    """Per-dimension z-scoring fitted on the training split only.

    Mean/variance use a deterministic two-pass population estimate; standard
    deviations are floored at 1e-8 so constant dimensions normalize to zero.
    """

    def __init__(self):
        self.mean = None  # dict stream -> (dim,) float64
        self.std = None
        self.frame_count = 0

    @property
    def fitted(self):
        return self.mean is not None

    def fit(self, triplets):
        """Fit from an iterable of FeatureTriplet."""
        triplets = list(triplets)
        if not triplets:
            raise ValueError("cannot fit normalizer on an empty corpus")
        total = sum(t.n_frames for t in triplets)
        if total < 2:
            raise ValueError("normalizer needs at least 2 frames")
        self.mean, self.std = {}, {}
        for name in STREAMS:
            stacked = [np.asarray(getattr(t, name), dtype=np.float64) for t in triplets]
            mean = sum(s.sum(axis=0) for s in stacked) / total
            var = sum(((s - mean) ** 2).sum(axis=0) for s in stacked) / total
            self.mean[name] = mean
            self.std[name] = np.maximum(np.sqrt(var), STD_FLOOR)
        self.frame_count = total
        return self

    def transform(self, triplet: FeatureTriplet) -> FeatureTriplet:
        if not self.fitted:
            raise RuntimeError("normalizer used before fit")
        out = {}
        for name in STREAMS:
            arr = np.asarray(getattr(triplet, name), dtype=np.float64)
            if arr.shape[1] != self.mean[name].shape[0]:
                raise ValueError(
                    f"{name} has {arr.shape[1]} dims, normalizer expects "
                    f"{self.mean[name].shape[0]}"
                )
            out[name] = (arr - self.mean[name]) / self.std[name]
        return FeatureTriplet(**out)

    def fit_transform(self, triplets):
        triplets = list(triplets)
        self.fit(triplets)
        return [self.transform(t) for t in triplets]

    # -- persistence --------------------------------------------------------

    def save(self, path):
        if not self.fitted:
            raise RuntimeError("nothing to save; normalizer not fitted")
        header = {
            "format": "phasedcn-normalizer",
            "version": 1,
            "frame_count": int(self.frame_count),
            "streams": [
                {"name": n, "dim": int(self.mean[n].shape[0])} for n in STREAMS
            ],
        }
        blob = json.dumps(header).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for name in STREAMS:
                fh.write(self.mean[name].astype("<f4").tobytes())
                fh.write(self.std[name].astype("<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            if header.get("format") != "phasedcn-normalizer":
                raise ValueError(f"{path}: not a normalizer file")
            norm = cls()
            norm.mean, norm.std = {}, {}
            for stream in header["streams"]:
                name, dim = stream["name"], stream["dim"]
                norm.mean[name] = np.frombuffer(
                    fh.read(4 * dim), dtype="<f4"
                ).astype(np.float64)
                norm.std[name] = np.frombuffer(
                    fh.read(4 * dim), dtype="<f4"
                ).astype(np.float64)
            norm.frame_count = header["frame_count"]
        return norm
