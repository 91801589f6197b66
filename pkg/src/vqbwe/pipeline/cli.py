"""Command-line entry point: ``vqbwe {synth,train,infer,eval}``."""
from __future__ import annotations

import argparse
import sys

from .commands import cmd_eval, cmd_infer, cmd_synth, cmd_train
from .config import RunConfig, load_config


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' config file (defaults if omitted)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vqbwe", description="Discrete-diffusion bandwidth extension over codec tokens.")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", help="generate the synthetic corpus")
    _common(p)
    p = sub.add_parser("train", help="train codebooks and the denoiser")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    p = sub.add_parser("infer", help="band-extend a directory of WAV files")
    _common(p)
    p.add_argument("--checkpoint", required=True, help="directory written by 'train'")
    p.add_argument("--input", required=True, help="directory of low-resolution WAV files")
    p = sub.add_parser("eval", help="LSD report of estimates against references")
    _common(p)
    p.add_argument("--reference", required=True)
    p.add_argument("--estimate", required=True)
    p.add_argument("--input", help="low-resolution inputs, adds an input-vs-reference column")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = cfg.with_seed(args.seed)
        if args.command == "synth":
            print(cmd_synth(cfg, args.out))
        elif args.command == "train":
            print(cmd_train(cfg, args.corpus, args.out, resume=args.resume))
        elif args.command == "infer":
            print(cmd_infer(cfg, args.checkpoint, args.input, args.out))
        else:
            rep = cmd_eval(cfg, args.reference, args.estimate, args.out, inputs=args.input)
            sys.stdout.write(rep.table())
    except (ValueError, OSError, RuntimeError, KeyError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"vqbwe {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0
