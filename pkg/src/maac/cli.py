"""Command-line entry point: ``maac <command> [options]``."""

from __future__ import annotations

import argparse
import json
import sys

from . import pipeline
from .config import ConfigError, load_config

COMMANDS = ("gen-synth", "build-keywords", "build-labels", "pretrain-encoder", "train-ce",
            "finetune-rl", "infer", "evaluate", "export-attention")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--preset", choices=("tiny", "paper"), default="paper", help="base config (default: paper)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out-dir", default=".", help="directory for outputs and the resolved config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")


def _corpus(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--captions", required=required, help="captions CSV (file_name, caption_1..caption_5)")
    p.add_argument("--data-dir", required=True, help="directory with .wav or .feat files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maac", description="Keyword-guided audio captioning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic captioned dataset")
    _common(p)
    p.add_argument("--n-clips", type=int, default=50)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--audio", action="store_true", help="also write WAV files")

    p = sub.add_parser("build-keywords", help="frequency-ranked noun/verb keyword table")
    _common(p)
    _corpus(p)
    p.add_argument("--n", type=int, help="table size (default: config n_keywords)")
    p.add_argument("--stoplist", help="stoplist file (default: bundled)")

    p = sub.add_parser("build-labels", help="multi-hot keyword labels per clip")
    _common(p)
    _corpus(p)
    p.add_argument("--keywords", required=True)

    p = sub.add_parser("pretrain-encoder", help="two-phase keyword encoder training")
    _common(p)
    _corpus(p)
    p.add_argument("--keywords", required=True)
    p.add_argument("--planted", help="planted.json of a synthetic set, to log keyword recall")

    p = sub.add_parser("train-ce", help="cross-entropy captioner training")
    _common(p)
    _corpus(p)
    p.add_argument("--encoder", required=True, help="encoder checkpoint")

    p = sub.add_parser("finetune-rl", help="CIDEr-D self-critical fine-tuning")
    _common(p)
    _corpus(p)
    p.add_argument("--checkpoint", required=True, help="CE captioner checkpoint")

    p = sub.add_parser("infer", help="caption clips")
    _common(p)
    _corpus(p, required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--beam", type=int, help="beam size (1 = greedy; default: config beam_size)")

    p = sub.add_parser("evaluate", help="score hypotheses against references")
    _common(p)
    p.add_argument("--hypotheses", required=True, help="CSV with file_name, caption")
    p.add_argument("--references", required=True, help="captions CSV")
    p.add_argument("--spice", type=float, help="externally computed SPICE (enables SPIDEr)")
    p.add_argument("--spider-mode", choices=("raw", "unit"), default="raw")

    p = sub.add_parser("export-attention", help="dump per-step attention weights as JSON")
    _common(p)
    _corpus(p, required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", help="only this file_name")
    p.add_argument("--beam", type=int)
    return parser


def resolve_config(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, args.preset, overrides)


def run(args) -> dict:
    cfg = resolve_config(args)
    c = args.command
    if c == "gen-synth":
        return pipeline.run_gen_synth(cfg, args.out_dir, args.n_clips, args.frames, args.audio)
    if c == "build-keywords":
        return pipeline.run_build_keywords(cfg, args.captions, args.data_dir, args.out_dir, args.n, args.stoplist)
    if c == "build-labels":
        return pipeline.run_build_labels(cfg, args.captions, args.data_dir, args.keywords, args.out_dir)
    if c == "pretrain-encoder":
        return pipeline.run_pretrain_encoder(cfg, args.captions, args.data_dir, args.keywords, args.out_dir,
                                             args.planted)
    if c == "train-ce":
        return pipeline.run_train_ce(cfg, args.captions, args.data_dir, args.encoder, args.out_dir)
    if c == "finetune-rl":
        return pipeline.run_finetune_rl(cfg, args.captions, args.data_dir, args.checkpoint, args.out_dir)
    if c == "infer":
        return pipeline.run_infer(cfg, args.checkpoint, args.data_dir, args.out_dir, args.captions, args.beam)
    if c == "evaluate":
        return pipeline.run_evaluate(cfg, args.hypotheses, args.references, None, args.out_dir, args.spice,
                                     args.spider_mode)
    if c == "export-attention":
        return pipeline.run_export_attention(cfg, args.checkpoint, args.data_dir, args.out_dir, args.captions,
                                             args.clip, args.beam)
    raise AssertionError(c)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary = run(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"maac {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary, indent=1, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
