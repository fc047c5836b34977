"""Command-line surface: prepare | train | enhance | evaluate | inspect.

Heavy imports happen inside the command functions so the requested thread
count can be exported to the BLAS runtime before numpy loads.
"""

import argparse
import json
import os
import sys
from pathlib import Path

_COMMANDS = ("prepare", "train", "enhance", "evaluate", "inspect")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="phasedcn",
        description="Causal dual-target (mask + complex spectrum) speech enhancement",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--mode", default=None, help="reconstruction mode override")
        sp.add_argument("--seed", type=int, default=None, help="run seed override")
        sp.add_argument("--threads", type=int, default=None, help="thread count override")
        if name == "enhance":
            sp.add_argument("input", nargs="?", help="input WAV (omit for manifest mode)")
            sp.add_argument("output", nargs="?", help="output WAV")
    return parser


def _peek_threads(config_path, flag):
    if flag is not None:
        return max(1, flag)
    try:
        doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
        return max(1, int(doc.get("threads", 1)))
    except (OSError, ValueError):
        return 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    threads = _peek_threads(args.config, args.threads)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(threads)

    from .config import parse_config

    try:
        cfg = parse_config(args.config, seed=args.seed, threads=args.threads,
                           mode=args.mode)
        return dispatch(args.command, cfg, args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"phasedcn {args.command}: error: {exc}", file=sys.stderr)
        return 1


def dispatch(command, cfg, args=None):
    if command == "prepare":
        return _cmd_prepare(cfg)
    if command == "train":
        return _cmd_train(cfg)
    if command == "enhance":
        return _cmd_enhance(cfg, args)
    if command == "evaluate":
        return _cmd_evaluate(cfg)
    if command == "inspect":
        return _cmd_inspect(cfg)
    raise ValueError(f"unknown command {command!r}")


def _cmd_prepare(cfg):
    from .data import plan_corpus, synth_corpus, write_manifest
    from .dsp import FrameSpec, load_wav
    from .training import build_training_arrays

    corpus = Path(cfg.data.corpus_dir)
    synth = cfg.data.synth
    n_train, n_val, n_test = synth.clean_split
    if n_train + n_val + n_test > synth.n_clean:
        raise ValueError("clean_split exceeds n_clean")
    clean, noise = synth_corpus(
        corpus, synth.n_clean, synth.n_noise + synth.n_unseen_noise,
        clean_duration_s=synth.clean_duration_s,
        noise_duration_s=synth.noise_duration_s, seed=synth.seed,
    )
    seen, unseen = noise[: synth.n_noise], noise[synth.n_noise :]
    clean_by_split = {
        "train": clean[:n_train],
        "val": clean[n_train : n_train + n_val],
        "test": clean[n_train + n_val : n_train + n_val + n_test],
    }
    noise_lengths = {p: len(load_wav(corpus / p)) for p in noise}
    records = plan_corpus(
        clean_by_split, seen, unseen, noise_lengths,
        snr_range=cfg.data.snr_range, test_snrs=cfg.data.test_snrs,
        mixes_per_train=synth.mixes_per_train, mixes_per_val=synth.mixes_per_val,
        seed=synth.seed,
    )
    write_manifest(cfg.data.manifest, records)
    train_records = [r for r in records if r.split == "train"]
    _, normalizer = build_training_arrays(
        train_records, corpus, FrameSpec(), irm_exponent=cfg.training.irm_exponent
    )
    normalizer.save(cfg.data.normalizer)
    print(
        f"prepared corpus: {len(clean)} clean + {len(noise)} noise files, "
        f"{len(records)} mixtures -> {cfg.data.manifest}; "
        f"normalizer over {normalizer.frame_count} frames -> {cfg.data.normalizer}"
    )
    return 0


def _load_utterances(cfg, splits, normalizer):
    from .data import read_manifest
    from .dsp import FrameSpec
    from .training import build_training_arrays

    records = [r for r in read_manifest(cfg.data.manifest) if r.split in splits]
    utts, _ = build_training_arrays(
        records, cfg.data.corpus_dir, FrameSpec(), normalizer,
        irm_exponent=cfg.training.irm_exponent,
    )
    return utts


def _cmd_train(cfg):
    from .features import FeatureNormalizer
    from .model import build_model
    from .training import Trainer, run_training

    normalizer = FeatureNormalizer.load(cfg.data.normalizer)
    train_utts = _load_utterances(cfg, ("train",), normalizer)
    val_utts = _load_utterances(cfg, ("val",), normalizer)

    ckpt_dir = Path(cfg.checkpoint_dir)
    last = ckpt_dir / "checkpoint_last"
    if last.with_suffix(".json").exists():
        trainer = Trainer.resume(last, train_utts, cfg.training, val_utts)
        print(f"resuming from step {trainer.step}")
    else:
        model = build_model(cfg.model, seed=cfg.training.seed)
        trainer = Trainer(model, train_utts, cfg.training, val_utts)
    run_training(trainer, ckpt_dir)
    print(f"trained to step {trainer.step}; checkpoints in {ckpt_dir}")
    return 0


def _load_trained(cfg):
    from .features import FeatureNormalizer
    from .model import load_checkpoint

    ckpt_dir = Path(cfg.checkpoint_dir)
    for stem in (ckpt_dir / "checkpoint_best", ckpt_dir / "checkpoint_last"):
        if stem.with_suffix(".json").exists():
            model, _, _ = load_checkpoint(stem)
            return model, FeatureNormalizer.load(cfg.data.normalizer)
    raise FileNotFoundError(f"no checkpoint found under {ckpt_dir}")


def _cmd_enhance(cfg, args):
    from .data import read_manifest, realize_mixture
    from .dsp import load_wav, save_wav
    from .reconstruct import enhance_utterance

    model, normalizer = _load_trained(cfg)
    if args is not None and args.input:
        if not args.output:
            raise ValueError("enhance needs both input and output paths")
        enhanced = enhance_utterance(load_wav(args.input), model, normalizer, cfg.mode)
        save_wav(args.output, enhanced)
        print(f"enhanced {args.input} -> {args.output} [{cfg.mode}]")
        return 0

    out_dir = Path(cfg.checkpoint_dir) / "enhanced"
    out_dir.mkdir(parents=True, exist_ok=True)
    records = [
        r for r in read_manifest(cfg.data.manifest)
        if r.split in ("test-seen", "test-unseen")
    ]
    for rec in records:
        mixture, _, _ = realize_mixture(rec, cfg.data.corpus_dir)
        enhanced = enhance_utterance(mixture, model, normalizer, cfg.mode)
        name = f"{Path(rec.clean).stem}__{Path(rec.noise).stem}__{rec.snr_db:+.0f}dB.wav"
        save_wav(out_dir / name, enhanced)
    print(f"enhanced {len(records)} test mixtures -> {out_dir} [{cfg.mode}]")
    return 0


def _cmd_evaluate(cfg):
    from .data import read_manifest
    from .metrics import evaluate_corpus

    model, normalizer = _load_trained(cfg)
    records = [
        r for r in read_manifest(cfg.data.manifest)
        if r.split in ("test-seen", "test-unseen")
    ]
    report = evaluate_corpus(model, normalizer, records, cfg.data.corpus_dir,
                             modes=(cfg.mode,))
    out_dir = Path(cfg.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out_dir / "report.txt").write_text(report.to_table() + "\n", encoding="utf-8")
    print(report.to_table())
    if report.errors:
        print(f"{len(report.errors)} mixture(s) failed:", file=sys.stderr)
        for err in report.errors:
            print(f"  {err}", file=sys.stderr)
        return 2
    return 0


def _cmd_inspect(cfg):
    from .model import build_model, expected_receptive_field

    model = build_model(cfg.model, seed=cfg.training.seed)
    params, flops = model.count_params_flops()
    print(f"{'layer':<24} {'params':>12} {'flops/frame':>14}")
    print("-" * 52)
    for name, p, f in model.layer_table():
        print(f"{name:<24} {p:>12,} {f:>14,}")
    print("-" * 52)
    print(f"{'total':<24} {params:>12,} {flops:>14,}")
    print(f"flops/params ratio: {flops / params:.3f}")
    print(f"receptive field: {expected_receptive_field(model.cfg)} frames")
    return 0


if __name__ == "__main__":
    sys.exit(main())
