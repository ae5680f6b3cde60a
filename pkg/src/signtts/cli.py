"""Command-line entry point.

One executable, nine subcommands covering the whole pipeline: corpus
generation, label extraction, backbone pretraining, adversarial
training, synthesis, evaluation, the ablation suite, plotting, and the
gradient-check suite. Configuration comes from a JSON file; flags only
choose the file, the output directory, and an optional seed override.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage problems as exceptions so the
    process can exit with code 1 instead of argparse's default 2."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def build_parser() -> _Parser:
    parser = _Parser(prog="signtts", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None,
                       help="JSON config file (defaults apply if omitted)")
        p.add_argument("--out", type=str, default=".",
                       help="directory for all outputs")
        p.add_argument("--seed", type=int, default=None,
                       help="override the seed relevant to this subcommand")
        return p

    add("gen-corpus", "generate the synthetic sign and speech corpora")
    add("extract-labels", "bin motion histograms for every sign clip")
    add("pretrain-backbone", "teacher-forced pretraining of the frozen TTS")

    p = add("train", "adversarial training of the sign branch")
    p.add_argument("--resume", type=str, default=None,
                   help="training checkpoint to continue from")

    p = add("synthesize", "text + sign clip -> mel + contours")
    p.add_argument("--state", type=str, default="train_state.ckpt",
                   help="training checkpoint holding the branch weights")
    p.add_argument("--clip-id", type=str, default=None,
                   help="sign clip to condition on (default: first test clip)")

    p = add("evaluate", "expressiveness and arousal-contrast report")
    p.add_argument("--state", type=str, default="train_state.ckpt")

    add("ablate", "train every loss-toggle combination and tabulate")

    p = add("plot", "mel heatmaps and contour overlays for test clips")
    p.add_argument("--state", type=str, default="train_state.ckpt")

    add("gradcheck", "finite-difference gradient verification suite")
    return parser


def _load_config(args) -> RunConfig:
    if args.config is None:
        return RunConfig()
    return RunConfig.load(args.config)


def _seeded(cfg: RunConfig, command: str, seed: int | None) -> RunConfig:
    if seed is None:
        return cfg
    if command == "gen-corpus":
        return replace(cfg, corpus=replace(cfg.corpus, seed=seed))
    if command == "pretrain-backbone":
        return replace(cfg, backbone=replace(cfg.backbone, seed=seed))
    return replace(cfg, train=replace(cfg.train, seed=seed))


def _read_corpora(cfg: RunConfig, out: Path):
    from .corpus import read_sign_corpus, read_speech_corpus
    sign = read_sign_corpus(out / cfg.train.sign_corpus)
    speech = read_speech_corpus(out / cfg.train.speech_corpus)
    return sign, speech


def _restore_trainer(cfg: RunConfig, out: Path, state: str):
    from .backbone import load_backbone
    from .trainer import Trainer
    sign, speech = _read_corpora(cfg, out)
    backbone, _ = load_backbone(out / cfg.train.backbone_checkpoint)
    return Trainer.resume(out / state, cfg, sign, speech, backbone)


def cmd_gen_corpus(cfg: RunConfig, args, out: Path) -> int:
    from .corpus import (gen_sign_corpus, gen_speech_corpus, write_sign_corpus,
                         write_speech_corpus)
    cc = cfg.corpus
    clips = gen_sign_corpus(cc.n_sign_clips, cc.seed, cc)
    utts = gen_speech_corpus(cc.n_speech_utts, cc.n_speakers, cc.seed, cc)
    sign_path = out / cfg.train.sign_corpus
    speech_path = out / cfg.train.speech_corpus
    sign_path.parent.mkdir(parents=True, exist_ok=True)
    speech_path.parent.mkdir(parents=True, exist_ok=True)
    write_sign_corpus(clips, sign_path)
    write_speech_corpus(utts, speech_path)
    cfg.save(out / "config.json")
    print(f"wrote {len(clips)} sign clips -> {sign_path}")
    print(f"wrote {len(utts)} utterances -> {speech_path}")
    return 0


def cmd_extract_labels(cfg: RunConfig, args, out: Path) -> int:
    from .corpus import read_sign_corpus
    from .sign_prosody import corpus_labels, write_labels
    clips = read_sign_corpus(out / cfg.train.sign_corpus)
    labels = corpus_labels(clips, cfg.train.label_bins)
    path = out / "labels.jsonl"
    write_labels(labels, path)
    print(f"wrote {len(labels)} labels ({cfg.train.label_bins} bins) -> {path}")
    return 0


def cmd_pretrain(cfg: RunConfig, args, out: Path) -> int:
    from .backbone import pretrain_backbone, save_backbone
    from .corpus import read_speech_corpus
    speech = read_speech_corpus(out / cfg.train.speech_corpus)
    model, history = pretrain_backbone(speech, cfg.backbone, cfg.corpus)
    path = out / cfg.train.backbone_checkpoint
    path.parent.mkdir(parents=True, exist_ok=True)
    save_backbone(model, path, step=cfg.backbone.pretrain_steps)
    if history["mel_l1"]:
        print(f"mel L1 {history['mel_l1'][0]:.4f} -> {history['mel_l1'][-1]:.4f} "
              f"over {len(history['mel_l1'])} steps")
    print(f"wrote backbone -> {path}")
    return 0


def cmd_train(cfg: RunConfig, args, out: Path) -> int:
    from .backbone import load_backbone
    from .trainer import Trainer, build_trainer
    if args.resume is not None:
        sign, speech = _read_corpora(cfg, out)
        backbone, _ = load_backbone(out / cfg.train.backbone_checkpoint)
        trainer = Trainer.resume(out / args.resume, cfg, sign, speech, backbone)
    else:
        trainer = build_trainer(cfg, base_dir=out)
    ckpt_dir = out / "checkpoints"
    records = trainer.run(metrics_path=out / "metrics.jsonl",
                          checkpoint_dir=ckpt_dir)
    state_path = out / "train_state.ckpt"
    trainer.save(state_path)
    if records:
        last = records[-1]
        print(f"step {last['step']}: total {last['gen']['total']:.4f}, "
              f"w_sign {last['w_sign']:.4f}")
    print(f"wrote training state -> {state_path}")
    return 0


def cmd_synthesize(cfg: RunConfig, args, out: Path) -> int:
    from .corpus import write_mel
    trainer = _restore_trainer(cfg, out, args.state)
    clips = trainer.sign_test or trainer.sign_train
    if args.clip_id is not None:
        matches = [c for c in clips + trainer.sign_train
                   if c.clip_id == args.clip_id]
        if not matches:
            raise _UsageError(f"unknown clip id {args.clip_id!r}")
        clips = matches[:1]
    else:
        clips = clips[:1]
    record = trainer.synthesize(clips)[0]
    synth_dir = out / "synth"
    synth_dir.mkdir(parents=True, exist_ok=True)
    mel_path = synth_dir / f"{record['clip_id']}.mel"
    write_mel(record["mel"], mel_path)
    meta = {
        "clip_id": record["clip_id"],
        "pitch": [float(v) for v in record["pitch"]],
        "energy": [float(v) for v in record["energy"]],
        "durations": [int(v) for v in record["durations"]],
        "w_sign": record["w_sign"],
        "mel_frames": int(record["mel"].shape[0]),
    }
    meta_path = synth_dir / f"{record['clip_id']}.json"
    with open(meta_path, "w") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")
    print(f"wrote {mel_path} and {meta_path} (w_sign {record['w_sign']:.4f})")
    return 0


def cmd_evaluate(cfg: RunConfig, args, out: Path) -> int:
    from .evaluation import full_report, write_report
    trainer = _restore_trainer(cfg, out, args.state)
    report = full_report(trainer, cfg)
    path = out / "eval.json"
    write_report(report, path)
    ex = report["expressiveness"]
    print(f"pitch std: full {ex['full']['dataset_std_pitch']:.4f} "
          f"vs two-stage {ex['two_stage']['dataset_std_pitch']:.4f}")
    print(f"energy std: full {ex['full']['dataset_std_energy']:.4f} "
          f"vs two-stage {ex['two_stage']['dataset_std_energy']:.4f}")
    contrast = report["arousal_contrast"]["energy"]
    print(f"arousal contrast (energy): diff {contrast['diff']:.4f}, "
          f"p {contrast['p_value']:.4g}")
    print(f"wrote report -> {path}")
    return 0


def cmd_ablate(cfg: RunConfig, args, out: Path) -> int:
    from .backbone import load_backbone
    from .evaluation import REPORT_SCHEMA, ablation_suite, format_ablation_table, write_report
    sign, speech = _read_corpora(cfg, out)
    backbone, _ = load_backbone(out / cfg.train.backbone_checkpoint)
    rows = ablation_suite(cfg, sign, speech, backbone)
    table = format_ablation_table(rows)
    print(table)
    write_report({"schema": REPORT_SCHEMA, "config_hash": cfg.config_hash(),
                  "rows": [r.to_dict() for r in rows]}, out / "ablation.json")
    (out / "ablation.txt").write_text(table + "\n")
    print(f"wrote {out / 'ablation.json'} and {out / 'ablation.txt'}")
    return 0


def cmd_plot(cfg: RunConfig, args, out: Path) -> int:
    from .evaluation import plot_clips
    trainer = _restore_trainer(cfg, out, args.state)
    paths = plot_clips(trainer, out / "plots", n_clips=cfg.eval.plot_clips)
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_gradcheck(cfg: RunConfig, args, out: Path) -> int:
    from .gradcheck import TOLERANCE, format_results, run_all
    seed = 0 if args.seed is None else args.seed
    results = run_all(seed)
    print(format_results(results))
    worst = max(err for _, err in results)
    if worst >= TOLERANCE:
        print(f"error: worst relative error {worst:.3e} exceeds {TOLERANCE:.0e}",
              file=sys.stderr)
        return 2
    return 0


_COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "extract-labels": cmd_extract_labels,
    "pretrain-backbone": cmd_pretrain,
    "train": cmd_train,
    "synthesize": cmd_synthesize,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _seeded(_load_config(args), args.command, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, args, out)
    except _UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (KeyboardInterrupt, SystemExit):
        raise
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
