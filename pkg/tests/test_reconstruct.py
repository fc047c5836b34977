import numpy as np
import pytest

from phasedcn.dsp import FrameSpec, Waveform, istft, stft
from phasedcn.features import compute_irm, compute_lps, compute_ri
from phasedcn.reconstruct import (
    MODES,
    assemble_complex,
    enhance_utterance,
    fuse_spectra,
    magnitude_from_irm,
    magnitude_from_ri,
    phase_from_ri,
    select_spectrum,
)
from helpers import PassNormalizer, StubModel, mixture_at


def test_magnitude_from_irm_values():
    y1 = np.log(np.array([[4.0]]))
    assert magnitude_from_irm(y1, np.array([[0.5]]))[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert magnitude_from_irm(y1, np.array([[0.0]]))[0, 0] == 0.0


def test_magnitude_from_irm_identity_mask():
    rng = np.random.default_rng(0)
    frame = rng.standard_normal((3, 7)) + 1j * rng.standard_normal((3, 7))
    y1 = compute_lps(frame)
    got = magnitude_from_irm(y1, np.ones((3, 7)))
    want = np.abs(frame)
    assert np.max(np.abs(got - want) / want) < 1e-9


def test_magnitude_from_ri():
    ri = np.array([[3.0, 0.0, 4.0, 0.0]])  # frame of two bins: (3+4i, 0)
    mags = magnitude_from_ri(ri)
    assert mags[0, 0] == 5.0
    assert mags[0, 1] == 0.0
    rng = np.random.default_rng(1)
    frame = rng.standard_normal((4, 9)) + 1j * rng.standard_normal((4, 9))
    assert np.abs(magnitude_from_ri(compute_ri(frame)) - np.abs(frame)).max() < 1e-12


def test_phase_quadrants():
    ri = np.array([[1.0, 0.0, -1.0, 1.0, 1.0, 0.0]])  # bins: 1+i, 0+i, -1+0i
    phase = phase_from_ri(ri)
    assert phase[0, 0] == pytest.approx(np.pi / 4)
    assert phase[0, 1] == pytest.approx(np.pi / 2)
    assert phase[0, 2] == pytest.approx(np.pi)
    assert phase_from_ri(np.zeros((1, 2)))[0, 0] == 0.0


def test_fuse_and_assemble():
    mag, phase = fuse_spectra(np.array([[3.0]]), np.array([[5.0]]), np.array([[0.0]]))
    assert mag[0, 0] == 4.0
    same, _ = fuse_spectra(np.array([[2.0]]), np.array([[2.0]]), np.array([[0.0]]))
    assert same[0, 0] == 2.0
    z = assemble_complex(np.array([[2.0]]), np.array([[np.pi / 2]]))
    assert abs(z[0, 0] - 2.0j) < 1e-12
    with pytest.raises(ValueError):
        fuse_spectra(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 3)))


def test_ri_route_inverts_exactly():
    rng = np.random.default_rng(2)
    frame = rng.standard_normal((5, 11)) + 1j * rng.standard_normal((5, 11))
    ri = compute_ri(frame)
    back = assemble_complex(magnitude_from_ri(ri), phase_from_ri(ri))
    assert np.abs(back - frame).max() < 1e-12


def test_select_spectrum_guards():
    y1 = np.zeros((2, 3))
    phase = np.zeros((2, 3))
    with pytest.raises(ValueError):
        select_spectrum("nope", y1, phase)
    with pytest.raises(ValueError):
        select_spectrum("irm-unpha", y1, phase, irm_est=None, ri_est=np.zeros((2, 6)))
    with pytest.raises(ValueError):
        select_spectrum("ri-enpha", y1, phase, irm_est=np.zeros((2, 3)), ri_est=None)
    # mask-only mode works without the RI branch
    mag, ph = select_spectrum("irm-unpha", y1, phase, irm_est=np.ones((2, 3)))
    assert mag.shape == (2, 3) and np.array_equal(ph, phase)


def test_ave_magnitude_is_exact_mean(toy_corpus):
    mixture, _, _ = mixture_at(toy_corpus, "clean_018.wav", "noise_001.wav", 0.0)
    spec = FrameSpec()
    spectrogram = stft(mixture.samples, spec)
    y1 = compute_lps(spectrogram)
    n = spectrogram.shape[0]
    rng = np.random.default_rng(3)
    irm_est = rng.uniform(size=(n, 257))
    ri_est = rng.standard_normal((n, 514))
    phase = np.angle(spectrogram)
    mag_irm, _ = select_spectrum("irm-unpha", y1, phase, irm_est=irm_est)
    mag_ri, _ = select_spectrum("ri-enpha", y1, phase, ri_est=ri_est)
    for mode in ("ave-unpha", "ave-enpha"):
        mag_ave, _ = select_spectrum(mode, y1, phase, irm_est=irm_est, ri_est=ri_est)
        assert np.array_equal(mag_ave, 0.5 * (mag_ri + mag_irm))


def test_enhance_all_modes_finite(toy_corpus):
    mixture, _, _ = mixture_at(toy_corpus, "clean_019.wav", "noise_000.wav", 5.0)
    spec = FrameSpec()
    n = stft(mixture.samples, spec).shape[0]
    rng = np.random.default_rng(4)
    model = StubModel(irm=rng.uniform(size=(n, 257)), ri=rng.standard_normal((n, 514)))
    for mode in MODES:
        out = enhance_utterance(mixture, model, PassNormalizer(), mode, spec)
        assert np.isfinite(out.samples).all()
        assert len(out) == spec.output_length(n)


def test_zero_outputs_enpha_silent(toy_corpus):
    mixture, _, _ = mixture_at(toy_corpus, "clean_019.wav", "noise_002.wav", 0.0)
    spec = FrameSpec()
    n = stft(mixture.samples, spec).shape[0]
    model = StubModel(irm=np.zeros((n, 257)), ri=np.zeros((n, 514)))
    for mode in ("irm-enpha", "ri-enpha", "ave-enpha"):
        out = enhance_utterance(mixture, model, PassNormalizer(), mode, spec)
        assert np.all(out.samples == 0.0)


def test_oracle_ri_outputs_recover_clean(toy_corpus):
    mixture, clean, scaled = mixture_at(toy_corpus, "clean_018.wav", "noise_000.wav", 0.0)
    spec = FrameSpec()
    clean_spec = stft(clean.samples, spec)
    model = StubModel(
        irm=compute_irm(clean_spec, stft(scaled.samples, spec)),
        ri=compute_ri(clean_spec),
    )
    out = enhance_utterance(mixture, model, PassNormalizer(), "ri-enpha", spec)
    want = istft(clean_spec, spec)
    rms = np.sqrt(np.mean((out.samples - want) ** 2))
    assert rms < 1e-9


def test_enhance_rejects_wrong_rate():
    wave = Waveform(np.zeros(4096), sample_rate=8000)
    with pytest.raises(ValueError):
        enhance_utterance(wave, StubModel(), PassNormalizer())
