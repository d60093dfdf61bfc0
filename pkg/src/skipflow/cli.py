"""Command-line entry point: ``skipflow {synth,prepare,train,cv,eval,gradcheck}``.

Config files are flat ``key = value`` text (``#`` starts a comment). Keys are
the long flag names with ``-`` or ``_``; flags given on the command line win
over the file. Exit codes: 0 ok, 1 validation error, 2 I/O error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .diagnostics import SMALL, check_model_gradients
from .errors import ConfigurationError, DataValidationError, NumericalError, SkipFlowError
from .model import VARIANTS, ModelConfig
from .text import (
    VOCAB_CAP,
    EncodedSet,
    Vocabulary,
    build_vocab,
    default_max_len,
    load_asap_tsv,
    scale_for,
    split_folds,
    synth_coherence_dataset,
    tokenize,
    tokenize_essays,
    write_asap_tsv,
    write_token_cache,
)
from .training import TrainConfig, evaluate, train

log = logging.getLogger("skipflow")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3

# key -> (type, default); None defaults are resolved from the prompt
RUN_KEYS: dict[str, tuple[type, object]] = {
    "variant": (str, "tensor"),
    "delta": (int, 50),
    "slices": (int, 4),
    "hidden_dim": (int, 50),
    "embed_dim": (int, 50),
    "dense_dim": (int, 50),
    "max_len": (int, None),
    "start_index": (int, 3),
    "activation": (str, "tanh"),
    "vocab_cap": (int, VOCAB_CAP),
    "lr": (float, 0.001),
    "batch": (int, 64),
    "clip": (float, 1.0),
    "epochs": (int, 50),
    "seed": (int, 0),
    "split_seed": (int, 0),
    "prompt": (int, 1),
    "fold": (int, 0),
    "data": (str, None),
    "out": (str, None),
}


class UsageError(SkipFlowError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def read_config_file(path) -> dict:
    path = Path(path)
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_")] = value
    unknown = sorted(set(out) - set(RUN_KEYS))
    if unknown:
        raise ConfigurationError(f"{path}: unknown config keys: {', '.join(unknown)}")
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    settings = {k: d for k, (_, d) in RUN_KEYS.items()}
    if getattr(args, "config", None):
        for k, v in read_config_file(args.config).items():
            typ = RUN_KEYS[k][0]
            try:
                settings[k] = typ(v)
            except ValueError:
                raise ConfigurationError(f"config key {k}: cannot parse {v!r} as {typ.__name__}") from None
    for k in RUN_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    if settings["variant"] not in VARIANTS:
        raise ConfigurationError(f"unknown variant {settings['variant']!r}")
    if settings["max_len"] is None:
        settings["max_len"] = default_max_len(settings["prompt"])
    return settings


def git_blob_hash(path) -> str:
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _model_config(s: dict, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        max_len=s["max_len"],
        embed_dim=s["embed_dim"],
        hidden_dim=s["hidden_dim"],
        delta=s["delta"],
        slices=s["slices"],
        dense_dim=s["dense_dim"],
        start_index=s["start_index"],
        variant=s["variant"],
        activation=s["activation"],
    )


def _train_config(s: dict) -> TrainConfig:
    return TrainConfig(lr=s["lr"], batch_size=s["batch"], clip_norm=s["clip"], epochs=s["epochs"], seed=s["seed"])


def _load_prompt(data, prompt: int):
    if data is None:
        raise UsageError("--data is required")
    essays = load_asap_tsv(data, prompt_id=prompt)
    if not essays:
        raise DataValidationError(f"{data}: no essays for prompt {prompt}")
    return essays


class FoldData:
    """Essays of one prompt split into train/dev/test, with a train-only vocabulary."""

    def __init__(self, essays, fold: int, split_seed: int, max_len: int, vocab_cap: int, vocab: Vocabulary | None = None):
        if not 0 <= fold < 5:
            raise ConfigurationError(f"fold must be in 0..4, got {fold}")
        plan = split_folds([e.id for e in essays], split_seed).folds[fold]
        by_id = {e.id: e for e in essays}
        if len(by_id) != len(essays):
            raise DataValidationError("duplicate essay ids")
        self.prompt = essays[0].prompt_id
        self.raw = {name: [by_id[i] for i in getattr(plan, name)] for name in ("train", "dev", "test")}
        self.vocab = vocab or build_vocab([tokenize(e.text) for e in self.raw["train"]], cap=vocab_cap)
        self.tokenized = {k: tokenize_essays(v, self.vocab, max_len) for k, v in self.raw.items()}
        self.sets = {k: EncodedSet.stack(v, self.prompt) for k, v in self.tokenized.items()}


def run_fold(s: dict, essays, out: Path, data_hash: str) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    fd = FoldData(essays, s["fold"], s["split_seed"], s["max_len"], s["vocab_cap"])
    mcfg = _model_config(s, len(fd.vocab))
    tcfg = _train_config(s)
    manifest = {
        "settings": s,
        "model_config": mcfg.to_dict(),
        "train_config": tcfg.to_dict(),
        "seed": s["seed"],
        "split_seed": s["split_seed"],
        "inputs": {"data": {"path": s["data"], "git_blob_sha1": data_hash}},
        "output_dir": str(out),
    }
    _write_json(out / "manifest.json", manifest)
    scale = scale_for(fd.prompt)
    timing = logging.FileHandler(out / "timing.log", mode="w")
    timing.setFormatter(logging.Formatter("%(asctime)s %(message)s"))
    tlog = logging.getLogger("skipflow.timing")
    tlog.setLevel(logging.INFO)
    tlog.propagate = False
    tlog.addHandler(timing)
    try:
        report, model = train(mcfg, fd.sets["train"], fd.sets["dev"], fd.sets["test"], tcfg, scale)
        for e, sec in enumerate(report.epoch_seconds, start=1):
            tlog.info("epoch %d %.3fs", e, sec)
    finally:
        tlog.removeHandler(timing)
        timing.close()
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    meta = {
        "prompt": fd.prompt,
        "fold": s["fold"],
        "split_seed": s["split_seed"],
        "vocab": fd.vocab.words(),
        "data_git_blob_sha1": data_hash,
    }
    checkpoint.save(out / "checkpoint.ckpt", model, meta)
    evaluate(model, fd.sets["test"], scale, fd.prompt).write_csv(out / "predictions.csv")
    return report.to_dict()


def cmd_train(args) -> int:
    s = resolve(args)
    if s["out"] is None:
        raise UsageError("--out is required")
    essays = _load_prompt(s["data"], s["prompt"])
    report = run_fold(s, essays, Path(s["out"]), git_blob_hash(s["data"]))
    print(json.dumps({"best_epoch": report["best_epoch"], "test_qwk": report["test_qwk"]}))
    return EXIT_OK


def cmd_cv(args) -> int:
    s = resolve(args)
    if s["out"] is None:
        raise UsageError("--out is required")
    essays = _load_prompt(s["data"], s["prompt"])
    data_hash = git_blob_hash(s["data"])
    out = Path(s["out"])
    folds = []
    for fold in range(5):
        rep = run_fold({**s, "fold": fold}, essays, out / f"fold{fold}", data_hash)
        folds.append({"fold": fold, "best_epoch": rep["best_epoch"], "best_dev_qwk": rep["best_dev_qwk"], "test_qwk": rep["test_qwk"]})
        log.info("fold %d test_qwk=%.4f", fold, rep["test_qwk"])
    summary = {
        "prompt": s["prompt"],
        "variant": s["variant"],
        "folds": folds,
        "mean_test_qwk": float(np.mean([f["test_qwk"] for f in folds])),
    }
    _write_json(out / "cv_report.json", summary)
    print(json.dumps({"mean_test_qwk": summary["mean_test_qwk"]}))
    return EXIT_OK


def cmd_eval(args) -> int:
    model, meta = checkpoint.load(args.checkpoint)
    prompt = meta["prompt"]
    if args.prompt is not None and args.prompt != prompt:
        raise ConfigurationError(f"checkpoint was trained on prompt {prompt}, --prompt is {args.prompt}")
    essays = _load_prompt(args.data, prompt)
    vocab = Vocabulary(meta["vocab"])
    scale = scale_for(prompt)
    if args.split == "all":
        data = EncodedSet.stack(tokenize_essays(essays, vocab, model.config.max_len), prompt)
    else:
        fd = FoldData(essays, meta["fold"], meta["split_seed"], model.config.max_len, 0, vocab=vocab)
        data = fd.sets[args.split]
    result = evaluate(model, data, scale, prompt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.write_csv(out / "predictions.csv")
    _write_json(out / "eval.json", {"prompt": prompt, "split": args.split, "essays": len(data), "qwk": result.qwk})
    print(json.dumps({"qwk": result.qwk, "essays": len(data)}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = dict(SMALL)
    for key in ("delta", "slices", "hidden_dim", "embed_dim", "max_len"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    config = ModelConfig(variant=args.variant, **cfg)
    report = check_model_gradients(config, seed=args.seed, corrupt=args.corrupt)
    doc = {"variant": config.variant, "seed": args.seed, **report.to_dict()}
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def cmd_synth(args) -> int:
    essays, _ = synth_coherence_dataset(args.n, args.length, args.delta, args.vocab_size, args.seed, decoys=not args.no_decoys)
    write_asap_tsv(essays, args.out)
    print(json.dumps({"essays": len(essays), "out": args.out}))
    return EXIT_OK


def cmd_prepare(args) -> int:
    s = resolve(args)
    if s["out"] is None:
        raise UsageError("--out is required")
    essays = _load_prompt(s["data"], s["prompt"])
    fd = FoldData(essays, s["fold"], s["split_seed"], s["max_len"], s["vocab_cap"])
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    for name, items in fd.tokenized.items():
        write_token_cache(items, out / f"{name}.jsonl")
    _write_json(out / "vocab.json", {"tokens": fd.vocab.id_to_token})
    print(json.dumps({k: len(v) for k, v in fd.tokenized.items()}))
    return EXIT_OK


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--delta", type=int, help="relevance width between matched states")
    p.add_argument("--slices", type=int, help="tensor slices k")
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--dense-dim", dest="dense_dim", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--start-index", dest="start_index", type=int)
    p.add_argument("--activation", choices=["tanh", "relu"])
    p.add_argument("--vocab-cap", dest="vocab_cap", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--clip", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--prompt", type=int)
    p.add_argument("--fold", type=int)
    p.add_argument("--data")
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skipflow", description="SkipFlow LSTM essay scoring")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, fn, help_ in (
        ("train", cmd_train, "train one prompt/fold"),
        ("cv", cmd_cv, "5-fold cross validation for one prompt"),
        ("prepare", cmd_prepare, "write tokenized caches for one prompt/fold"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_run_flags(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("eval", help="score a checkpoint on its split or all essays")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--prompt", type=int)
    p.add_argument("--split", choices=["train", "dev", "test", "all"], default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--variant", choices=VARIANTS, default="tensor")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta", type=int)
    p.add_argument("--slices", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--corrupt", choices=["ntn", "bilinear"], help="negative control: flip the scorer's gradient sign")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic coherence corpus in ASAP TSV format")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--length", type=int, default=80)
    p.add_argument("--delta", type=int, default=10)
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-decoys", dest="no_decoys", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, DataValidationError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
