"""Command-line entry point: ``subilstm {train,eval,bench,verify}``.

Settings resolve as built-in defaults, then a ``--config`` file of
``key=value`` lines, then explicit flags. The effective settings are echoed
as ``config.<key>=<value>`` lines at the top of every report.

Exit codes: 0 success, 1 a check or metric failed, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .data import gen_longrange, load_embeddings, load_labeled_corpus, train_test_split
from .encoders import EncoderConfig, normalize_variant, param_count
from .experiments import SYNTH_EMBED_DIM, SYNTH_VOCAB, scheduler_bench, token_step_scaling
from .models import EncodeOptions, load_checkpoint, make_classifier, make_siamese, save_checkpoint
from .numerics import NonFiniteError, Rng
from .training import AdamState, TrainReport, evaluate, fit

logger = logging.getLogger("subilstm")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "train": {
        "task": "synthetic",
        "encoder": "subilstm-tied",
        "tied": False,
        "d": SYNTH_EMBED_DIM,
        "h": 32,
        "combiner": "max",
        "merge": True,
        "lr": 1e-3,
        "weight_decay": 1e-5,
        "dropout": 0.2,
        "clip_norm": None,
        "epochs": 30,
        "batch_size": 32,
        "seed": 0,
        "threads": 1,
        "dtype": "float32",
        "format": "single",
        "train": None,
        "val": None,
        "test": None,
        "val_fraction": 0.1,
        "embeddings": None,
        "freeze_embeddings": None,
        "mlp_hidden": "64,64",
        "seq_len": 60,
        "num_train": 8000,
        "num_val": 1000,
        "num_test": 2000,
        "vocab_size": SYNTH_VOCAB,
        "checkpoint": "model.ckpt",
        "report": None,
    },
    "eval": {
        "checkpoint": None,
        "data": None,
        "split": "test",
        "format": None,
        "batch_size": 64,
        "threads": 1,
        "report": None,
    },
    "bench": {
        "n_max": "5,10,20,40",
        "batch": 32,
        "h": 128,
        "d": None,
        "threads": 1,
        "repeat": 3,
        "uniform": True,
        "naive": True,
        "seed": 0,
        "report": None,
    },
    "verify": {
        "seed": 0,
        "quick": False,
        "inject_fault": 0.0,
        "report": None,
    },
}

_FLOATS = {"lr", "weight_decay", "dropout", "clip_norm", "val_fraction", "inject_fault"}
_INTS = {"d", "h", "epochs", "batch_size", "seed", "threads", "seq_len", "num_train", "num_val",
         "num_test", "vocab_size", "batch", "repeat"}
_BOOLS = {"tied", "merge", "freeze_embeddings", "uniform", "naive", "quick"}


def _variant(text: str) -> str:
    try:
        return normalize_variant(text)
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value settings file (flags override it)")
    common.add_argument("--report", help="also write the report to this file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="subilstm", description="SuBiLSTM encoders: train, evaluate, benchmark, verify.")
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", parents=[common], help="train a classifier or pair model")
    tr.add_argument("--task", choices=("classify", "pair", "synthetic"))
    tr.add_argument("--encoder", type=_variant, help="bilstm, bilstm2, subilstm or subilstm-tied")
    tr.add_argument("--tied", action=argparse.BooleanOptionalAction, help="use the tied variant of a suffix encoder")
    tr.add_argument("--d", "--embed-dim", dest="d", type=int, help="embedding (input) dimension")
    tr.add_argument("--h", "--hidden-dim", dest="h", type=int, help="LSTM hidden dimension")
    tr.add_argument("--combiner", choices=("max", "mean", "concat"))
    tr.add_argument("--merge", action=argparse.BooleanOptionalAction, help="coalesce short suffix passes")
    tr.add_argument("--lr", type=float)
    tr.add_argument("--weight-decay", type=float)
    tr.add_argument("--dropout", type=float)
    tr.add_argument("--clip-norm", type=float)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--threads", type=int)
    tr.add_argument("--dtype", choices=("float32", "float64"))
    tr.add_argument("--format", choices=("single", "pair", "trec"))
    tr.add_argument("--train", help="training corpus file")
    tr.add_argument("--val", help="validation corpus (default: split off the training file)")
    tr.add_argument("--test", help="test corpus, evaluated with the best checkpoint")
    tr.add_argument("--val-fraction", type=float)
    tr.add_argument("--embeddings", help="GloVe-style text embeddings of dimension --d")
    tr.add_argument("--freeze-embeddings", action=argparse.BooleanOptionalAction)
    tr.add_argument("--mlp-hidden", help="pair task hidden layer sizes, comma separated")
    tr.add_argument("--seq-len", type=int)
    tr.add_argument("--num-train", type=int)
    tr.add_argument("--num-val", type=int)
    tr.add_argument("--num-test", type=int)
    tr.add_argument("--vocab-size", type=int)
    tr.add_argument("--checkpoint", help="where to write the best-validation model")

    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint")
    ev.add_argument("--data", help="corpus file (synthetic checkpoints regenerate their data)")
    ev.add_argument("--split", choices=("train", "val", "test"))
    ev.add_argument("--format", choices=("single", "pair", "trec"))
    ev.add_argument("--batch-size", type=int)
    ev.add_argument("--threads", type=int)

    be = sub.add_parser("bench", parents=[common], help="time suffix scheduling strategies")
    be.add_argument("--n-max", help="comma separated sentence lengths")
    be.add_argument("--batch", type=int)
    be.add_argument("--h", type=int)
    be.add_argument("--d", type=int, help="input dimension (default: --h)")
    be.add_argument("--threads", type=int)
    be.add_argument("--repeat", type=int)
    be.add_argument("--uniform", action=argparse.BooleanOptionalAction, help="all sentences of length n_max")
    be.add_argument("--naive", action=argparse.BooleanOptionalAction, help="also time the one-suffix-at-a-time loop")
    be.add_argument("--seed", type=int)

    ve = sub.add_parser("verify", parents=[common], help="run gradient and oracle checks")
    ve.add_argument("--seed", type=int)
    ve.add_argument("--quick", action=argparse.BooleanOptionalAction)
    ve.add_argument("--inject-fault", type=float, help=argparse.SUPPRESS)
    return parser


def read_config_file(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _coerce(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    if value.lower() in ("none", ""):
        return None
    try:
        if key in _INTS:
            return int(value)
        if key in _FLOATS:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key} expects a number, got {value!r}") from None
    if key in _BOOLS:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key} expects true/false, got {value!r}")
    if key == "encoder":
        return normalize_variant(value)
    return value


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults < config file < explicit flags."""
    cfg = dict(DEFAULTS[args.command])
    if args.config:
        if not Path(args.config).is_file():
            raise ConfigError(f"config file {args.config} does not exist")
        for key, value in read_config_file(args.config).items():
            if key not in cfg:
                raise ConfigError(f"unknown setting {key!r} for {args.command}")
            cfg[key] = _coerce(key, value)
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


class Reporter:
    """Collects report lines, echoing them to stdout as they arrive."""

    def __init__(self, path=None):
        self.path = path
        self.lines: list[str] = []

    def emit(self, line: str = "") -> None:
        print(line, flush=True)
        self.lines.append(line)

    def record(self, **fields) -> None:
        self.emit(" ".join(f"{k}={_fmt(v)}" for k, v in fields.items()))

    def config(self, cfg: dict) -> None:
        for k in sorted(cfg):
            self.emit(f"config.{k}={cfg[k]}")

    def close(self) -> None:
        if self.path:
            Path(self.path).write_text("\n".join(self.lines) + "\n", encoding="utf-8")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


# ---------------------------------------------------------------------------
# train


def _check_train_config(cfg: dict) -> EncoderConfig:
    variant = normalize_variant(cfg["encoder"])
    if cfg["tied"]:
        if variant not in ("subilstm", "subilstm-tied"):
            raise ConfigError("--tied only applies to the subilstm encoder")
        variant = "subilstm-tied"
    if cfg["task"] != "synthetic" and not cfg["train"]:
        raise ConfigError(f"--train is required for task {cfg['task']}")
    for key in ("train", "val", "test", "embeddings"):
        if cfg[key] and not Path(cfg[key]).is_file():
            raise ConfigError(f"{key} file {cfg[key]} does not exist")
    if cfg["task"] == "pair" and cfg["format"] != "pair":
        cfg["format"] = "pair"
    if cfg["task"] == "classify" and cfg["format"] == "pair":
        raise ConfigError("pair-format corpora need --task pair")
    for key in ("d", "h", "epochs", "batch_size", "threads"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be positive")
    if not 0.0 <= cfg["dropout"] < 1.0:
        raise ConfigError("dropout must be in [0, 1)")
    if cfg["task"] == "synthetic" and (cfg["seq_len"] < 4 or cfg["vocab_size"] < 4):
        raise ConfigError("synthetic task needs seq_len >= 4 and vocab_size >= 4")
    return EncoderConfig(variant, cfg["d"], cfg["h"], cfg["combiner"])


def synthetic_splits(seed: int, seq_len: int, num_train: int, num_val: int, num_test: int, vocab_size: int):
    rng = Rng(seed)
    return {
        "train": gen_longrange(num_train, seq_len, vocab_size, rng.child(1)),
        "val": gen_longrange(num_val, seq_len, vocab_size, rng.child(2)),
        "test": gen_longrange(num_test, seq_len, vocab_size, rng.child(3)),
    }


def _load_splits(cfg: dict, rng: Rng) -> dict:
    if cfg["task"] == "synthetic":
        return synthetic_splits(
            cfg["seed"], cfg["seq_len"], cfg["num_train"], cfg["num_val"], cfg["num_test"], cfg["vocab_size"]
        )
    train = load_labeled_corpus(cfg["train"], cfg["format"])
    if cfg["val"]:
        val = load_labeled_corpus(cfg["val"], cfg["format"], train.vocab, train.label_names)
    else:
        train, val = train_test_split(train, cfg["val_fraction"], rng.child(5))
    splits = {"train": train, "val": val}
    if cfg["test"]:
        splits["test"] = load_labeled_corpus(cfg["test"], cfg["format"], train.vocab, train.label_names)
    return splits


def cmd_train(cfg: dict, out: Reporter) -> int:
    enc_cfg = _check_train_config(cfg)
    cfg["encoder"] = enc_cfg.variant
    rng = Rng(cfg["seed"])
    splits = _load_splits(cfg, rng)
    train = splits["train"]
    dtype = np.dtype(cfg["dtype"])
    table = None
    if cfg["embeddings"]:
        table = load_embeddings(cfg["embeddings"], train.vocab, cfg["d"], rng.child(6), dtype)
    if cfg["freeze_embeddings"] is None:
        # Pretrained vectors stay fixed for single-sentence tasks, trainable for pairs.
        cfg["freeze_embeddings"] = bool(table is not None and cfg["task"] == "classify")
    opts = EncodeOptions(merge=cfg["merge"], threads=cfg["threads"])
    if cfg["task"] == "pair":
        hidden = tuple(int(x) for x in str(cfg["mlp_hidden"]).split(",") if x.strip())
        model = make_siamese(
            len(train.vocab), train.num_classes, enc_cfg, rng.child(7), hidden, table,
            freeze_embeddings=cfg["freeze_embeddings"], dropout=cfg["dropout"], dtype=dtype, options=opts,
        )
    else:
        model = make_classifier(
            len(train.vocab), train.num_classes, enc_cfg, rng.child(7), table,
            freeze_embeddings=cfg["freeze_embeddings"], dropout=cfg["dropout"], dtype=dtype, options=opts,
        )
    out.config(cfg)
    n_enc = param_count(enc_cfg)
    out.record(encoder=enc_cfg.variant, encoder_params=n_enc, model_params=sum(p.size for p in model.parameters()))
    out.record(train_examples=len(train), val_examples=len(splits["val"]), classes=train.num_classes)

    extra = {f"data_{k}": cfg[k] for k in ("task", "seed", "seq_len", "num_train", "num_val", "num_test", "vocab_size", "format")}
    best = {"acc": -1.0}

    def on_epoch(rec, m):
        parts = [f"epoch={rec.epoch}", f"loss={rec.loss:.6f}", f"train_acc={rec.train_accuracy:.4f}"]
        if rec.val_accuracy is not None:
            parts.append(f"val_acc={rec.val_accuracy:.4f}")
        if rec.val_f1 is not None:
            parts.append(f"val_f1={rec.val_f1:.4f}")
        parts.append(f"seconds={rec.seconds:.2f}")
        out.emit(" ".join(parts))
        if rec.val_accuracy is not None and rec.val_accuracy > best["acc"]:
            best["acc"] = rec.val_accuracy
            save_checkpoint(cfg["checkpoint"], m, train.vocab, train.label_names, extra)

    state = AdamState(lr=cfg["lr"], weight_decay=cfg["weight_decay"], clip_norm=cfg["clip_norm"])
    report = TrainReport(seed=cfg["seed"], config=dict(cfg))
    fit(model, train, state, rng.child(8), cfg["epochs"], cfg["batch_size"], splits["val"], report=report, on_epoch=on_epoch)

    out.emit("")
    out.emit(report.summary_table())
    b = report.best
    out.record(best_epoch=b.epoch, best_val_acc=b.val_accuracy, checkpoint=cfg["checkpoint"])
    if "test" in splits:
        best_model, _, _, _ = load_checkpoint(cfg["checkpoint"])
        best_model.options = opts
        metrics = evaluate(best_model, splits["test"])
        out.record(**{f"test_{k}": v for k, v in metrics.items()})
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(cfg: dict, out: Reporter) -> int:
    path = cfg["checkpoint"]
    if not path or not Path(path).is_file():
        raise ConfigError(f"checkpoint {path} does not exist")
    model, mcfg, vocab, labels = load_checkpoint(path)
    model.options = EncodeOptions(threads=cfg["threads"])
    out.config(cfg)
    if cfg["data"]:
        if not Path(cfg["data"]).is_file():
            raise ConfigError(f"data file {cfg['data']} does not exist")
        fmt = cfg["format"] or mcfg.get("data_format") or ("pair" if mcfg["kind"] == "siamese" else "single")
        if vocab is None:
            raise ConfigError("checkpoint has no vocabulary; cannot read text data")
        corpus = load_labeled_corpus(cfg["data"], fmt, vocab, labels)
    elif mcfg.get("data_task") == "synthetic":
        splits = synthetic_splits(
            *(int(mcfg[f"data_{k}"]) for k in ("seed", "seq_len", "num_train", "num_val", "num_test", "vocab_size"))
        )
        corpus = splits[cfg["split"]]
    else:
        raise ConfigError("--data is required for checkpoints not trained on the synthetic task")
    if corpus.num_classes > model.num_classes:
        raise ConfigError("corpus has more classes than the checkpoint")
    if (mcfg["kind"] == "siamese") != corpus.is_pair:
        raise ConfigError("checkpoint and corpus disagree about sentence pairs")
    metrics = evaluate(model, corpus, batch_size=cfg["batch_size"])
    out.record(examples=len(corpus), **metrics)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def cmd_bench(cfg: dict, out: Reporter) -> int:
    try:
        grid = [int(x) for x in str(cfg["n_max"]).split(",") if x.strip()]
    except ValueError:
        raise ConfigError("--n-max expects comma separated integers") from None
    if not grid or min(grid) < 1 or cfg["batch"] < 1 or cfg["h"] < 1:
        raise ConfigError("bench sizes must be positive")
    out.config(cfg)
    status = EXIT_OK
    for row in token_step_scaling(sorted(set(grid) | {2 * n for n in grid}), cfg["batch"]):
        out.record(kind="scaling", **row)
    rows = []
    for n in grid:
        row = scheduler_bench(
            n, cfg["batch"], cfg["h"], cfg["d"] or cfg["h"], cfg["seed"], cfg["threads"],
            cfg["repeat"], cfg["uniform"], naive=cfg["naive"],
        )
        rows.append(row)
        out.record(kind="timing", **row)
        if row["passes_merged"] > row["passes_unmerged"]:
            status = EXIT_FAIL
    out.emit("")
    head = f"{'n_max':>5} {'tok_steps':>9} {'passes':>9} {'naive_s':>8} {'unmrg_s':>8} {'merged_s':>8} {'speedup':>7}"
    out.emit(head)
    out.emit("-" * len(head))
    for r in rows:
        naive = r.get("seconds_naive")
        out.emit(
            f"{r['n_max']:>5} {r['token_steps']:>9} {r['passes_unmerged']:>4}/{r['passes_merged']:<4} "
            f"{naive if naive is not None else float('nan'):>8.3f} {r['seconds_unmerged']:>8.3f} "
            f"{r['seconds_merged']:>8.3f} {r.get('speedup_merged', float('nan')):>7.2f}"
        )
    return status


# ---------------------------------------------------------------------------
# verify


def cmd_verify(cfg: dict, out: Reporter) -> int:
    from .verify import perturbed, run_suite

    out.config(cfg)
    batched = perturbed(cfg["inject_fault"]) if cfg["inject_fault"] else None
    checks = run_suite(cfg["seed"], batched=batched, quick=cfg["quick"])
    for c in checks:
        out.emit(c.line())
    failed = [c.name for c in checks if not c.passed]
    out.record(checks=len(checks), failed=len(failed))
    return EXIT_FAIL if failed else EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, ValueError, OSError) as err:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    out = Reporter(cfg.get("report"))
    try:
        code = COMMANDS[args.command](cfg, out)
    except ConfigError as err:
        print(f"{parser.prog} {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as err:
        print(f"{parser.prog} {args.command}: training diverged: {err}", file=sys.stderr)
        code = EXIT_FAIL
    except (ValueError, OSError) as err:
        print(f"{parser.prog} {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    out.close()
    return code


if __name__ == "__main__":
    sys.exit(main())
