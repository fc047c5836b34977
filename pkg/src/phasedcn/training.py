"""Training loop: deterministic batch packing, Adam updates, validation
tracking, loss logging (JSONL), and checkpoint/resume.

Everything downstream of (config, seed, thread count) is reproducible: the
epoch shuffles are pure functions of (seed, epoch), the dropout RNG state
rides in the checkpoint manifest, and with the default float32 model the
parameters and optimizer moments round-trip through the checkpoint exactly,
so a resumed run continues the bitwise-identical loss trajectory.
"""

from dataclasses import dataclass
import json
import math
from pathlib import Path

import numpy as np

from .dsp import FrameSpec, stft
from .data import make_batches, realize_mixture
from .features import FeatureNormalizer, compute_targets, extract_triplet
from .model import PhaseDcn, load_checkpoint, save_checkpoint
from .nn import Adam, ForwardContext, SegmentContext, Tape, Var


@dataclass
class TrainSettings:
    lr: float = 1e-3
    steps: int = 1000
    batch_frames: int = 10000
    seed: int = 0
    checkpoint_interval: int = 200
    val_interval: int = 50
    irm_exponent: float = 0.5


def build_training_arrays(records, corpus_dir, spec: FrameSpec,
                          normalizer: FeatureNormalizer | None = None,
                          irm_exponent: float = 0.5):
    """Extract per-utterance network inputs and targets for a record list.

    Fits the normalizer when none is given (training split only); returns
    (utterances, normalizer) where each utterance dict holds normalized
    y1/y2/y3, targets, the raw LPS, and the frame count.
    """
    raw = []
    for rec in records:
        mixture, clean, scaled = realize_mixture(rec, corpus_dir)
        triplet, _ = extract_triplet(mixture.samples, spec)
        targets = compute_targets(
            stft(clean.samples, spec), stft(scaled.samples, spec), irm_exponent
        )
        raw.append((triplet, targets))
    if normalizer is None:
        normalizer = FeatureNormalizer().fit(t for t, _ in raw)
    utterances = []
    for triplet, targets in raw:
        norm = normalizer.transform(triplet)
        utterances.append({
            "y1": norm.y1.astype(np.float32),
            "y2": norm.y2.astype(np.float32),
            "y3": norm.y3.astype(np.float32),
            "irm": targets.irm.astype(np.float32),
            "ri": targets.ri_clean.astype(np.float32),
            "frames": triplet.n_frames,
        })
    return utterances, normalizer


class Trainer:
    """Drives optimization over whole-utterance batches."""

    def __init__(self, model: PhaseDcn, utterances, settings: TrainSettings,
                 val_utterances=()):
        if not utterances:
            raise ValueError("no training utterances")
        self.model = model
        self.utterances = utterances
        self.val_utterances = list(val_utterances)
        self.settings = settings
        self.optimizer = Adam(model.params(), lr=settings.lr)
        self.dropout_rng = np.random.default_rng([settings.seed, 7])
        self.step = 0
        self.best_val = math.inf
        self._epoch = 0
        self._plan = []

    # batch plans are a pure function of (seed, epoch), so a resumed trainer
    # can fast-forward without serializing them
    def _refill_plan(self):
        counts = [u["frames"] for u in self.utterances]
        self._plan = make_batches(
            counts, budget=self.settings.batch_frames,
            seed=[self.settings.seed, 11, self._epoch],
        )
        self._epoch += 1

    def _next_batch(self):
        while not self._plan:
            self._refill_plan()
        return self._plan.pop(0)

    def _fast_forward(self, n_batches):
        for _ in range(n_batches):
            self._next_batch()

    def _assemble(self, batch):
        dt = self.model.cfg.np_dtype
        utts = [self.utterances[idx] for idx, _ in batch]
        lengths = [u["frames"] for u in utts]
        arrays = {
            key: np.concatenate([u[key] for u in utts]).astype(dt)
            for key in ("y1", "y2", "y3", "irm", "ri")
        }
        return arrays, SegmentContext(lengths)

    def train_step(self):
        arrays, segments = self._assemble(self._next_batch())
        tape = Tape()
        ctx = ForwardContext(training=True, segments=segments,
                             rng=self.dropout_rng, update_stats=True)
        irm_est, ri_est = self.model.forward(
            tape, Var(arrays["y1"]), Var(arrays["y2"]), Var(arrays["y3"]), ctx
        )
        loss, parts = self.model.loss(tape, irm_est, ri_est, arrays["irm"], arrays["ri"])
        self.optimizer.zero_grad()
        tape.backward(loss)
        self.optimizer.step()
        self.step += 1
        return {
            "step": self.step,
            "irm_mse": float(parts["irm"].value) if "irm" in parts else None,
            "ri_mse": float(parts["ri"].value) if "ri" in parts else None,
            "total": float(loss.value),
        }

    def validate(self):
        """Frame-weighted mean total loss over the validation utterances."""
        if not self.val_utterances:
            return None
        total = 0.0
        frames = 0
        for utt in self.val_utterances:
            dt = self.model.cfg.np_dtype
            tape = Tape()
            ctx = ForwardContext(training=False, segments=SegmentContext([utt["frames"]]))
            irm_est, ri_est = self.model.forward(
                tape,
                Var(utt["y1"].astype(dt)),
                Var(utt["y2"].astype(dt)),
                Var(utt["y3"].astype(dt)),
                ctx,
            )
            loss, _ = self.model.loss(tape, irm_est, ri_est,
                                      utt["irm"].astype(dt), utt["ri"].astype(dt))
            total += float(loss.value) * utt["frames"]
            frames += utt["frames"]
        return total / frames

    # -- persistence --------------------------------------------------------

    def save(self, stem):
        save_checkpoint(
            str(stem), self.model, self.optimizer, step=self.step,
            rng=self.dropout_rng,
            extra={
                "best_val": None if math.isinf(self.best_val) else self.best_val,
                "train_seed": self.settings.seed,
                "batch_frames": self.settings.batch_frames,
            },
        )

    @classmethod
    def resume(cls, stem, utterances, settings: TrainSettings, val_utterances=()):
        model, optimizer, manifest = load_checkpoint(str(stem), with_optimizer=True)
        extra = manifest.get("extra", {})
        settings = TrainSettings(**{
            **settings.__dict__,
            "seed": extra.get("train_seed", settings.seed),
            "batch_frames": extra.get("batch_frames", settings.batch_frames),
            "lr": manifest["hyperparameters"]["lr"],
        })
        trainer = cls(model, utterances, settings, val_utterances)
        trainer.optimizer = optimizer
        trainer.step = manifest["step"]
        if manifest.get("rng_state") is not None:
            trainer.dropout_rng = np.random.default_rng()
            trainer.dropout_rng.bit_generator.state = manifest["rng_state"]
        if extra.get("best_val") is not None:
            trainer.best_val = extra["best_val"]
        trainer._fast_forward(trainer.step)
        return trainer


def run_training(trainer: Trainer, checkpoint_dir, log_fn=None):
    """Run until `settings.steps`, logging per-batch losses and periodic
    validation, keeping both the last and the best-validation checkpoint."""
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    settings = trainer.settings
    loss_log = open(checkpoint_dir / "loss_log.jsonl", "a", encoding="utf-8")
    val_log = open(checkpoint_dir / "val_log.jsonl", "a", encoding="utf-8")
    try:
        while trainer.step < settings.steps:
            entry = trainer.train_step()
            loss_log.write(json.dumps(entry) + "\n")
            if log_fn:
                log_fn(entry)
            if trainer.val_utterances and trainer.step % settings.val_interval == 0:
                val = trainer.validate()
                val_log.write(json.dumps({"step": trainer.step, "val_total": val}) + "\n")
                if val < trainer.best_val:
                    trainer.best_val = val
                    trainer.save(checkpoint_dir / "checkpoint_best")
            if (trainer.step % settings.checkpoint_interval == 0
                    or trainer.step >= settings.steps):
                trainer.save(checkpoint_dir / "checkpoint_last")
    finally:
        loss_log.close()
        val_log.close()
    return trainer
