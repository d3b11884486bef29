"""``scout`` command line: datagen, train, eval, ablate, inspect-gates.

Exit codes: 0 success, 2 usage/config/data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .ablation import run_ablation
from .checkpoint import ShapeMismatchError, load_checkpoint, load_state_dict, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .data import (FeatureFileError, Vocabulary, generate_corpus, load_corpus,
                   read_feature_bundle, save_corpus)
from .generation import beam_generate, corpus_evaluate, write_generations
from .model import Scout
from .training import AdamW, DivergenceError, train

log = logging.getLogger("scout")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _out_dir(path: str | None) -> Path:
    out = Path(path or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "corpus", None):
        cfg = cfg.replace(corpus=args.corpus)
    return cfg


def _model(cfg: RunConfig, vocab_size: int, checkpoint: str | None = None) -> Scout:
    model = Scout(cfg.model_config(vocab_size), seed=cfg.seed)
    if checkpoint is not None:
        try:
            state = load_checkpoint(checkpoint)
        except OSError as exc:
            raise UsageError(f"cannot read checkpoint {checkpoint}: {exc}") from exc
        load_state_dict(model.parameters(), state)
    return model


def cmd_datagen(args) -> int:
    cfg = _config(args)
    out = _out_dir(args.out)
    bundles, splits, vocab = generate_corpus(cfg.task_spec, cfg.num_cases, cfg.seed, cfg.fractions)
    save_corpus(out, bundles, splits, vocab)
    cfg.save(out / "config.ini")
    log.info("wrote %d cases to %s", len(bundles), out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args.out)
    corpus = load_corpus(cfg.corpus)
    model = _model(cfg, len(corpus.vocab))
    params = model.parameters()
    tc = cfg.train_config
    optimizer = AdamW(params, tc.lr_max, weight_decay=tc.weight_decay, no_decay=model.no_decay())
    start, best_val = 0, math.inf
    log_mode = "w"
    if args.resume:
        state = load_checkpoint(args.resume)
        load_state_dict(params, {k[6:]: v for k, v in state.items() if k.startswith("param.")})
        optimizer.load_state({k[4:]: v for k, v in state.items() if k.startswith("opt.")})
        start = int(state["meta.epoch"]) + 1
        best_val = float(state["meta.best_val"])
        log_mode = "a"
    cfg.save(out / "config.ini")
    with open(out / "train.log", log_mode, encoding="utf-8") as fh:
        def on_epoch(entry):
            fh.write(entry.line() + "\n")
            fh.flush()

        try:
            result = train(model, corpus.splits["train"], corpus.splits["val"], tc,
                           optimizer=optimizer, start_epoch=start, on_epoch=on_epoch)
        except DivergenceError as exc:
            if exc.state is not None:
                save_checkpoint(out / "diverged.sck", exc.state)
            raise
    if result.best_state is not None and result.best_val < best_val:
        save_checkpoint(out / "checkpoint.sck", result.best_state)
        best_val = result.best_val
    last = {f"param.{k}": p.data for k, p in params.items()}
    last.update({f"opt.{k}": v for k, v in optimizer.state().items()})
    last["meta.epoch"] = np.array(float(max(cfg.epochs, start) - 1))
    last["meta.best_val"] = np.array(best_val)
    save_checkpoint(out / "last.sck", last)
    if not (out / "checkpoint.sck").exists():
        save_checkpoint(out / "checkpoint.sck", {k: p.data for k, p in params.items()})
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = _out_dir(args.out)
    corpus = load_corpus(cfg.corpus)
    model = _model(cfg, len(corpus.vocab), args.checkpoint)
    split = args.split or cfg.split
    bundles = corpus.splits.get(split, [])
    if not bundles:
        raise UsageError(f"split {split!r} is empty")
    report, gens = corpus_evaluate(model, bundles, corpus.vocab, cfg.beam_size, cfg.max_len,
                                   cfg.length_alpha)
    report.write(out / "metrics.tsv")
    write_generations(gens, out / "generations.tsv")
    for name, value in report.scores.items():
        print(f"{name}\t{value:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args.out)
    corpus = load_corpus(cfg.corpus)
    cfg.save(out / "config.ini")
    result = run_ablation(corpus, cfg)
    result.write(out)
    print("\n".join(result.table()))
    return EXIT_OK


def cmd_inspect_gates(args) -> int:
    cfg = _config(args)
    out = _out_dir(args.out)
    bundle = read_feature_bundle(args.bundle)
    vocab_path = Path(args.corpus or cfg.corpus) / "vocab.txt"
    if not vocab_path.exists():
        vocab_path = Path(args.bundle).parent / "vocab.txt"
    vocab = Vocabulary.load(vocab_path)
    model = _model(cfg, len(vocab), args.checkpoint)
    if model.config.fusion_mode != "film_gated":
        raise UsageError("gate inspection needs fusion_mode = film_gated")
    tokens, trace = beam_generate(model, bundle, cfg.beam_size, cfg.max_len, cfg.length_alpha)
    trace.write(out / "gates.tsv", vocab.itos)
    summary = trace.summary()
    lines = [f"{name}\t{value!r}" for name, value in summary.items()]
    (out / "gates_summary.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(vocab.decode(tokens))
    print("\n".join(lines))
    return EXIT_OK


COMMANDS = {
    "datagen": cmd_datagen,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "inspect-gates": cmd_inspect_gates,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scout", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--out", help="output directory", default=".")
        if name != "datagen":
            p.add_argument("--corpus", help="corpus directory (overrides [paths] corpus)")
        if name in ("eval", "inspect-gates"):
            p.add_argument("--checkpoint", required=True)
        if name == "eval":
            p.add_argument("--split", choices=("train", "val", "test"))
        if name == "inspect-gates":
            p.add_argument("--bundle", required=True, help="feature-bundle file")
        if name == "train":
            p.add_argument("--resume", help="last.sck from an earlier run")
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("SCOUT_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"scout: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, UsageError, ShapeMismatchError, FeatureFileError,
            FileNotFoundError, ValueError) as exc:
        print(f"scout: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
