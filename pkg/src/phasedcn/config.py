"""Run configuration: strict JSON parsing with defaults.

Unknown keys are rejected by name, so a typo like "dropuot" fails loudly
instead of silently using a default. Command-line flags (--seed, --threads,
--mode) override file values.
"""

from dataclasses import dataclass, field, fields
import json
from pathlib import Path

from .model import ConfigError, ModelConfig, PRESETS
from .reconstruct import MODES, DEFAULT_MODE
from .training import TrainSettings


@dataclass
class SynthSpec:
    n_clean: int = 20
    n_noise: int = 3
    n_unseen_noise: int = 0
    clean_duration_s: float = 2.0
    noise_duration_s: float = 8.0
    clean_split: tuple = (14, 3, 3)  # train/val/test file counts
    mixes_per_train: int = 3
    mixes_per_val: int = 1
    seed: int = 0


@dataclass
class DataConfig:
    corpus_dir: str = "corpus"
    manifest: str = ""
    normalizer: str = ""
    snr_range: tuple = (-5.0, 15.0)
    test_snrs: tuple = (-5, 0, 5, 10, 15)
    synth: SynthSpec = field(default_factory=SynthSpec)

    def __post_init__(self):
        if not self.manifest:
            self.manifest = str(Path(self.corpus_dir) / "manifest.jsonl")
        if not self.normalizer:
            self.normalizer = str(Path(self.corpus_dir) / "normalizer.bin")
        if self.snr_range[0] > self.snr_range[1]:
            raise ConfigError(
                f"snr_range low must be <= high, got {list(self.snr_range)}"
            )


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainSettings = field(default_factory=TrainSettings)
    data: DataConfig = field(default_factory=DataConfig)
    checkpoint_dir: str = "runs"
    mode: str = DEFAULT_MODE
    threads: int = 1

    def validate(self):
        self.model.validate()
        if self.mode not in MODES:
            raise ConfigError(f"unknown reconstruction mode {self.mode!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.training.batch_frames < 1 or self.training.steps < 0:
            raise ConfigError("invalid training sizes")
        return self


def _build_section(cls, raw, where, extra_allowed=()):
    allowed = {f.name for f in fields(cls)} | set(extra_allowed)
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown config key '{where}.{key}'")
    kwargs = {}
    for f in fields(cls):
        if f.name in raw:
            value = raw[f.name]
            if isinstance(value, list):
                value = tuple(value)
            kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad value in '{where}': {exc}") from exc


def parse_config(source, seed=None, threads=None, mode=None) -> RunConfig:
    """Build a RunConfig from a JSON file path, JSON text, or dict."""
    if isinstance(source, dict):
        doc = source
    else:
        text = Path(source).read_text(encoding="utf-8") if Path(str(source)).exists() else str(source)
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")

    top_allowed = {"model", "training", "data", "checkpoint_dir", "mode", "threads"}
    for key in doc:
        if key not in top_allowed:
            raise ConfigError(f"unknown config key '{key}'")

    model_raw = dict(doc.get("model", {}))
    preset = model_raw.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        model_raw = {**PRESETS[preset], **model_raw}
    model = _build_section(ModelConfig, model_raw, "model")

    training = _build_section(TrainSettings, dict(doc.get("training", {})), "training")

    data_raw = dict(doc.get("data", {}))
    if "synth" in data_raw:
        data_raw["synth"] = _build_section(SynthSpec, dict(data_raw["synth"]), "data.synth")
    data = _build_section(DataConfig, data_raw, "data")

    cfg = RunConfig(
        model=model,
        training=training,
        data=data,
        checkpoint_dir=doc.get("checkpoint_dir", "runs"),
        mode=doc.get("mode", DEFAULT_MODE),
        threads=doc.get("threads", 1),
    )
    if seed is not None:
        cfg.training.seed = seed
        cfg.data.synth.seed = seed
    if threads is not None:
        cfg.threads = threads
    if mode is not None:
        cfg.mode = mode
    return cfg.validate()
