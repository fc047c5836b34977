"""Causal dual-target speech enhancement toolkit.

Exports are resolved lazily so the CLI can pin BLAS thread counts through
environment variables before numpy is first imported.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "Waveform": ".dsp",
    "FrameSpec": ".dsp",
    "hamming_window": ".dsp",
    "stft": ".dsp",
    "istft": ".dsp",
    "load_wav": ".dsp",
    "save_wav": ".dsp",
    "FeatureNormalizer": ".features",
    "FeatureTriplet": ".features",
    "compute_lps": ".features",
    "compute_ri": ".features",
    "compute_irm": ".features",
    "extract_triplet": ".features",
    "compute_targets": ".features",
    "partition_bands": ".multiscale",
    "MultiScaleConv": ".multiscale",
    "ModelConfig": ".model",
    "PhaseDcn": ".model",
    "build_model": ".model",
    "preset_config": ".model",
    "PRESETS": ".model",
    "save_checkpoint": ".model",
    "load_checkpoint": ".model",
    "expected_receptive_field": ".model",
    "measure_receptive_field": ".model",
    "MODES": ".reconstruct",
    "enhance_utterance": ".reconstruct",
    "mix_at_snr": ".data",
    "synth_corpus": ".data",
    "make_batches": ".data",
    "MixtureRecord": ".data",
    "si_sdr": ".metrics",
    "segmental_snr": ".metrics",
    "stoi": ".metrics",
    "evaluate_corpus": ".metrics",
    "TrainSettings": ".training",
    "Trainer": ".training",
    "run_training": ".training",
    "RunConfig": ".config",
    "parse_config": ".config",
    "DcnSpeechEnhancer": ".enhancer",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    if name in _EXPORTS:
        module = importlib.import_module(_EXPORTS[name], __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
