"""Turn network outputs into an enhanced waveform.

Two magnitude routes (mask applied to the noisy magnitude, and the modulus
of the predicted RI spectrum) and two phase routes (noisy or predicted RI
phase) combine into five reconstruction modes mirroring the mask/mapping
averaging scheme: irm-unpha, irm-enpha, ri-enpha, ave-unpha, ave-enpha.
"""

import numpy as np

from .dsp import SAMPLE_RATE, FrameSpec, Waveform, istft
from .features import extract_triplet, ri_to_complex

MODES = ("irm-unpha", "irm-enpha", "ri-enpha", "ave-unpha", "ave-enpha")
DEFAULT_MODE = "ave-enpha"


def magnitude_from_irm(y1_raw, irm_est):
    """Masked noisy magnitude: sqrt(exp(Y1)) * mask, with Y1 the raw LPS."""
    return np.sqrt(np.exp(np.asarray(y1_raw))) * np.asarray(irm_est)


def magnitude_from_ri(ri_est):
    """Modulus sqrt(Re^2 + Im^2) of the predicted RI spectrum."""
    spec = ri_to_complex(np.asarray(ri_est))
    return np.sqrt(spec.real ** 2 + spec.imag ** 2)


def phase_from_ri(ri_est):
    """Four-quadrant angle of the predicted RI spectrum; (0, 0) maps to 0."""
    spec = ri_to_complex(np.asarray(ri_est))
    return np.arctan2(spec.imag, spec.real)


def fuse_spectra(mag_irm, mag_ri, phase):
    """Average the two magnitude estimates; keep the given phase."""
    mag_irm = np.asarray(mag_irm)
    mag_ri = np.asarray(mag_ri)
    if mag_irm.shape != mag_ri.shape or mag_irm.shape != np.shape(phase):
        raise ValueError("magnitude/phase shapes disagree")
    return 0.5 * (mag_ri + mag_irm), np.asarray(phase)


def assemble_complex(magnitude, phase):
    return np.asarray(magnitude) * np.exp(1j * np.asarray(phase))


def select_spectrum(mode, y1_raw, noisy_phase, irm_est=None, ri_est=None):
    """Magnitude/phase of the enhanced spectrum for one reconstruction mode."""
    if mode not in MODES:
        raise ValueError(f"unknown reconstruction mode {mode!r}; choose from {MODES}")
    need_irm = mode.startswith(("irm", "ave"))
    need_ri = mode.startswith(("ri", "ave")) or mode.endswith("enpha")
    if need_irm and irm_est is None:
        raise ValueError(f"mode {mode!r} needs the mask branch output")
    if need_ri and ri_est is None:
        raise ValueError(f"mode {mode!r} needs the RI branch output")

    if mode.startswith("irm"):
        magnitude = magnitude_from_irm(y1_raw, irm_est)
    elif mode.startswith("ri"):
        magnitude = magnitude_from_ri(ri_est)
    else:
        magnitude, _ = fuse_spectra(
            magnitude_from_irm(y1_raw, irm_est),
            magnitude_from_ri(ri_est),
            np.zeros_like(y1_raw),
        )
    phase = phase_from_ri(ri_est) if mode.endswith("enpha") else np.asarray(noisy_phase)
    return magnitude, phase


def enhance_utterance(noisy: Waveform, model, normalizer, mode=DEFAULT_MODE,
                      spec: FrameSpec | None = None) -> Waveform:
    """Enhance one 16 kHz mono waveform.

    `model` needs an ``infer(y1, y2, y3) -> (irm_est, ri_est)`` method taking
    normalized features; `normalizer` provides ``transform``. The output
    length is the synthesis length for the analysed frame count.
    """
    spec = spec or FrameSpec()
    if noisy.sample_rate != SAMPLE_RATE:
        raise ValueError(
            f"expected {SAMPLE_RATE} Hz input, got {noisy.sample_rate} Hz "
            "(resampling is out of scope)"
        )
    triplet, spectrogram = extract_triplet(noisy.samples, spec)
    normalized = normalizer.transform(triplet)
    irm_est, ri_est = model.infer(normalized.y1, normalized.y2, normalized.y3)
    if irm_est is not None:
        irm_est = np.asarray(irm_est, dtype=np.float64)
    if ri_est is not None:
        ri_est = np.asarray(ri_est, dtype=np.float64)
    magnitude, phase = select_spectrum(
        mode, triplet.y1, np.angle(spectrogram), irm_est=irm_est, ri_est=ri_est
    )
    samples = istft(assemble_complex(magnitude, phase), spec)
    return Waveform(samples=samples, sample_rate=SAMPLE_RATE)
