"""Framing, windowing, STFT/iSTFT with weighted overlap-add, and WAV file I/O.

All arithmetic is 64-bit. The analysis/synthesis pair uses the same window
on both sides and divides the overlap-added signal by the overlap-added
squared window, which makes `istft(stft(x))` exact (up to roundoff) on every
sample covered by at least one frame.
"""

from dataclasses import dataclass, field
import struct

import numpy as np

SAMPLE_RATE = 16000


class WavFormatError(ValueError):
    """Raised for files that are not well-formed RIFF/WAVE."""


class WavUnsupportedError(ValueError):
    """Raised for WAV codecs other than PCM-16 and 32-bit IEEE float."""


def hamming_window(n: int) -> np.ndarray:
    """Periodic Hamming window: w[i] = 0.54 - 0.46*cos(2*pi*i/n).

    The periodic form satisfies w[i] + w[i + n/2] = 1.08 exactly, so a
    50%-overlap analysis/synthesis chain has a constant overlap sum.
    """
    if n < 2:
        raise ValueError(f"window length must be >= 2, got {n}")
    i = np.arange(n, dtype=np.float64)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * i / n)


def _default_window():
    return hamming_window(512)


@dataclass(frozen=True)
class FrameSpec:
    """Analysis framing: frame length, hop, and analysis window."""

    frame_len: int = 512
    hop: int = 256
    window: np.ndarray = field(default_factory=_default_window)

    def __post_init__(self):
        if self.frame_len != 2 * self.hop:
            raise ValueError("frame_len must equal 2*hop")
        if self.frame_len & (self.frame_len - 1):
            raise ValueError("frame_len must be a power of two")
        if len(self.window) != self.frame_len:
            raise ValueError("window length must match frame_len")
        w = np.asarray(self.window, dtype=np.float64)
        if w.min() < 0.0 or w.max() > 1.0:
            raise ValueError("window values must lie in [0, 1]")

    @property
    def bins(self) -> int:
        return self.frame_len // 2 + 1

    def num_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            raise ValueError(
                f"signal of {n_samples} samples is shorter than one "
                f"{self.frame_len}-sample frame"
            )
        return (n_samples - self.frame_len) // self.hop + 1

    def output_length(self, n_frames: int) -> int:
        return (n_frames - 1) * self.hop + self.frame_len


@dataclass
class Waveform:
    """Mono sampled signal; samples are dimensionless in nominal [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("waveform samples must be one-dimensional")
        if not np.isfinite(self.samples).all():
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)


def frame_signal(x, spec: FrameSpec) -> np.ndarray:
    """Slice x into windowed frames of shape (T, frame_len).

    Frame t covers samples [t*hop, t*hop + frame_len); trailing samples that
    do not fill a whole frame are dropped (no padding).
    """
    x = np.asarray(x, dtype=np.float64)
    n_frames = spec.num_frames(len(x))
    idx = np.arange(spec.frame_len)[None, :] + spec.hop * np.arange(n_frames)[:, None]
    return x[idx] * spec.window[None, :]


def stft(x, spec: FrameSpec) -> np.ndarray:
    """Windowed real-input STFT; returns (T, frame_len//2 + 1) complex frames."""
    frames = frame_signal(x, spec)
    return np.fft.rfft(frames, n=spec.frame_len, axis=1)


def istft(spectrogram, spec: FrameSpec) -> np.ndarray:
    """Inverse STFT by weighted overlap-add.

    Each frame is inverse-transformed, multiplied by the analysis window and
    overlap-added; the result is divided pointwise by the overlap-added
    squared window so that analysis-synthesis is exact wherever the envelope
    is nonzero (always, for a Hamming window at 50% overlap).
    """
    spectrogram = np.asarray(spectrogram)
    if spectrogram.ndim != 2 or spectrogram.shape[1] != spec.bins:
        raise ValueError(
            f"expected (T, {spec.bins}) spectrogram, got {spectrogram.shape}"
        )
    n_frames = spectrogram.shape[0]
    frames = np.fft.irfft(spectrogram, n=spec.frame_len, axis=1) * spec.window[None, :]

    out_len = spec.output_length(n_frames)
    out = np.zeros(out_len)
    envelope = np.zeros(out_len)
    w2 = spec.window ** 2
    for t in range(n_frames):
        start = t * spec.hop
        out[start : start + spec.frame_len] += frames[t]
        envelope[start : start + spec.frame_len] += w2
    if envelope.min() < 1e-12:
        raise RuntimeError("overlap-add envelope vanished; window unsuitable")
    return out / envelope


# ---------------------------------------------------------------------------
# WAV (RIFF) I/O: PCM-16 and IEEE-754 float32 only, mono or first channel.
# ---------------------------------------------------------------------------

_FMT_PCM = 1
_FMT_IEEE_FLOAT = 3


def load_wav(path) -> Waveform:
    """Read a RIFF/WAVE file; PCM-16 is scaled to [-1, 1) by 1/32768."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"{path}: truncated {cid!r} chunk")
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError(f"{path}: fmt chunk too small")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)

    if fmt is None or payload is None:
        raise WavFormatError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if channels < 1:
        raise WavFormatError(f"{path}: zero channels")

    if audio_format == _FMT_PCM and bits == 16:
        raw = np.frombuffer(payload[: len(payload) // 2 * 2], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == _FMT_IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(payload[: len(payload) // 4 * 4], dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise WavUnsupportedError(
            f"{path}: unsupported codec (format={audio_format}, bits={bits}); "
            "only PCM-16 and 32-bit IEEE float are readable"
        )
    if channels > 1:
        samples = samples[:: channels].copy()
    return Waveform(samples=samples, sample_rate=rate)


def save_wav(path, wave: Waveform) -> None:
    """Write a mono 32-bit IEEE float WAV; float round-trips bit-exactly."""
    samples = np.asarray(wave.samples, dtype=np.float64)
    if not np.isfinite(samples).all():
        raise ValueError("refusing to write non-finite samples")
    payload = samples.astype("<f4").tobytes()
    n = len(samples)
    header = b"".join(
        [
            b"RIFF",
            struct.pack("<I", 4 + 8 + 16 + 8 + 4 + 8 + len(payload)),
            b"WAVE",
            b"fmt ",
            struct.pack(
                "<IHHIIHH",
                16,
                _FMT_IEEE_FLOAT,
                1,
                wave.sample_rate,
                wave.sample_rate * 4,
                4,
                32,
            ),
            b"fact",
            struct.pack("<II", 4, n),
            b"data",
            struct.pack("<I", len(payload)),
        ]
    )
    with open(path, "wb") as fh:
        fh.write(header + payload)
