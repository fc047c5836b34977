"""Small shared test utilities."""

import numpy as np

from phasedcn.dsp import FrameSpec, Waveform, load_wav
from phasedcn.data import MixtureRecord, realize_mixture


class StubModel:
    """Duck-typed model returning fixed outputs regardless of input."""

    def __init__(self, irm=None, ri=None):
        self._irm = irm
        self._ri = ri

    def infer(self, y1, y2, y3):
        return self._irm, self._ri


class IdentityMaskModel:
    """Identity enhancer: all-ones mask (masked output equals the input)."""

    def infer(self, y1, y2, y3):
        return np.ones((y1.shape[0], y1.shape[1])), None


class PassNormalizer:
    def transform(self, triplet):
        return triplet


def neutral_batchnorm(block):
    """Make a ConvBlock's BN an exact identity in inference mode."""
    bn = block.bn
    bn.running_mean = np.zeros_like(bn.running_mean)
    bn.running_var = np.ones_like(bn.running_var)
    bn.scale.value = np.ones_like(bn.scale.value)
    bn.shift.value = np.zeros_like(bn.shift.value)


def randomize_batchnorm(block, rng):
    bn = block.bn
    bn.running_mean = rng.standard_normal(bn.channels)
    bn.running_var = rng.uniform(0.5, 2.0, bn.channels)
    bn.scale.value = rng.uniform(0.5, 1.5, bn.channels)
    bn.shift.value = rng.standard_normal(bn.channels)


def mixture_at(corpus, clean_name, noise_name, snr_db, split="test-seen", offset=0):
    rec = MixtureRecord(clean=clean_name, noise=noise_name, snr_db=snr_db,
                        noise_offset=offset, split=split, seed=0)
    return realize_mixture(rec, corpus.root)


def trim_pair(reference: Waveform, estimate: Waveform):
    n = min(len(reference), len(estimate))
    return (Waveform(reference.samples[:n], reference.sample_rate),
            Waveform(estimate.samples[:n], estimate.sample_rate))
