"""scikit-learn style estimator facade over the enhancement pipeline.

`DcnSpeechEnhancer.fit` takes paired waveforms (X = noisy, y = clean),
derives the noise as their difference, fits the feature normalizer, and
trains the network; `transform` enhances noisy waveforms. `get_params` /
`set_params` / `clone` behave as usual for sklearn estimators, so the model
drops into pipelines and searches.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .dsp import SAMPLE_RATE, FrameSpec, Waveform, stft
from .features import FeatureNormalizer, compute_targets, extract_triplet
from .model import ModelConfig, PRESETS, build_model
from .reconstruct import DEFAULT_MODE, enhance_utterance
from .training import TrainSettings, Trainer


def _as_samples(x, what):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{what} must be a 1-D sample array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{what} contains non-finite samples")
    return arr


def check_waveform_pairs(X, y, min_len):
    """Validate paired (noisy, clean) waveform lists; returns sample arrays."""
    if len(X) != len(y):
        raise ValueError(f"got {len(X)} noisy but {len(y)} clean waveforms")
    if len(X) == 0:
        raise ValueError("need at least one training pair")
    pairs = []
    for i, (noisy, clean) in enumerate(zip(X, y)):
        a = _as_samples(noisy, f"X[{i}]")
        b = _as_samples(clean, f"y[{i}]")
        if a.shape != b.shape:
            raise ValueError(f"pair {i}: noisy and clean lengths differ")
        if len(a) < min_len:
            raise ValueError(f"pair {i}: shorter than one analysis frame")
        pairs.append((a, b))
    return pairs


class DcnSpeechEnhancer(BaseEstimator, TransformerMixin):
    """Trainable speech enhancer with a fit/transform interface.

    The default widths are the full-size network; pass `scale_factor` or
    explicit widths for desk-scale experiments. X and y are sequences of
    equal-length 1-D sample arrays at 16 kHz.
    """

    def __init__(self, preset="multi-ms-a", scale_factor=1.0,
                 feature_channels=512, trunk_dense_out=514, fusion_out=1028,
                 edu_dim=514, dropout=0.2, dtype="float32", lr=1e-3,
                 steps=200, batch_frames=10000, seed=0, mode=DEFAULT_MODE):
        self.preset = preset
        self.scale_factor = scale_factor
        self.feature_channels = feature_channels
        self.trunk_dense_out = trunk_dense_out
        self.fusion_out = fusion_out
        self.edu_dim = edu_dim
        self.dropout = dropout
        self.dtype = dtype
        self.lr = lr
        self.steps = steps
        self.batch_frames = batch_frames
        self.seed = seed
        self.mode = mode

    def _model_config(self):
        return ModelConfig(
            **PRESETS[self.preset],
            scale_factor=self.scale_factor,
            feature_channels=self.feature_channels,
            trunk_dense_out=self.trunk_dense_out,
            fusion_out=self.fusion_out,
            edu_dim=self.edu_dim,
            dropout=self.dropout,
            dtype=self.dtype,
        ).validate()

    def fit(self, X, y):
        spec = FrameSpec()
        pairs = check_waveform_pairs(X, y, spec.frame_len)
        triplets, targets = [], []
        for noisy, clean in pairs:
            triplet, _ = extract_triplet(noisy, spec)
            triplets.append(triplet)
            targets.append(
                compute_targets(stft(clean, spec), stft(noisy - clean, spec))
            )
        self.normalizer_ = FeatureNormalizer().fit(triplets)
        utterances = []
        for triplet, target in zip(triplets, targets):
            norm = self.normalizer_.transform(triplet)
            utterances.append({
                "y1": norm.y1.astype(np.float32),
                "y2": norm.y2.astype(np.float32),
                "y3": norm.y3.astype(np.float32),
                "irm": target.irm.astype(np.float32),
                "ri": target.ri_clean.astype(np.float32),
                "frames": triplet.n_frames,
            })
        self.model_ = build_model(self._model_config(), seed=self.seed)
        settings = TrainSettings(lr=self.lr, steps=self.steps,
                                 batch_frames=self.batch_frames, seed=self.seed)
        trainer = Trainer(self.model_, utterances, settings)
        while trainer.step < settings.steps:
            trainer.train_step()
        self.n_features_in_ = spec.bins
        return self

    def transform(self, X):
        if not hasattr(self, "model_"):
            raise RuntimeError("enhancer is not fitted; call fit first")
        spec = FrameSpec()
        out = []
        for i, noisy in enumerate(X):
            wave = Waveform(_as_samples(noisy, f"X[{i}]"), SAMPLE_RATE)
            out.append(
                enhance_utterance(wave, self.model_, self.normalizer_,
                                  self.mode, spec).samples
            )
        return out
