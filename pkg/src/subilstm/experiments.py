"""Reproducible end-to-end runs shared by the CLI and the acceptance suite.

Each function returns plain dicts of numbers so callers can print them as
``key=value`` records.
"""

from __future__ import annotations

import logging
import os
import time
from pathlib import Path

import numpy as np

from .data import gen_longrange, load_embeddings, load_labeled_corpus, make_batches, train_test_split
from .encoders import VARIANTS, EncoderConfig
from .lstm import LstmParams
from .models import EncodeOptions, make_classifier
from .numerics import Rng, Tensor
from .scheduler import build_plan, execute_plan, plan_stats, suffix_loop, time_call, token_steps
from .training import AdamState, evaluate, fit

logger = logging.getLogger(__name__)

SYNTH_VOCAB = 20
SYNTH_EMBED_DIM = 16


def longrange_run(
    variant: str,
    seed: int,
    seq_len: int = 60,
    num_train: int = 8000,
    num_test: int = 2000,
    hidden_dim: int = 32,
    epochs: int = 30,
    batch_size: int = 32,
    lr: float = 1e-3,
    embed_dim: int = SYNTH_EMBED_DIM,
    vocab_size: int = SYNTH_VOCAB,
    dtype=np.float32,
    threads: int = 1,
) -> dict:
    """Train one encoder on the first/last agreement task; report test accuracy.

    Data depends only on ``seed`` (not on the variant), so variants trained
    with the same seed see the same corpus.
    """
    data_rng = Rng(seed)
    train = gen_longrange(num_train, seq_len, vocab_size, data_rng.child(1))
    test = gen_longrange(num_test, seq_len, vocab_size, data_rng.child(2))
    model_rng = data_rng.child(3)
    cfg = EncoderConfig(variant, embed_dim, hidden_dim)
    model = make_classifier(
        len(train.vocab), 2, cfg, model_rng, freeze_embeddings=False, dtype=dtype,
        options=EncodeOptions(threads=threads),
    )
    state = AdamState(lr=lr)
    t0 = time.perf_counter()
    report = fit(model, train, state, model_rng.child(4), epochs, batch_size)
    seconds = time.perf_counter() - t0
    acc = evaluate(model, test)["accuracy"]
    last = report.epochs[-1]
    logger.info("longrange %s seed=%d test_acc=%.4f (%.0fs)", variant, seed, acc, seconds)
    return {
        "variant": cfg.variant,
        "seed": seed,
        "test_accuracy": acc,
        "train_accuracy": last.train_accuracy,
        "final_loss": last.loss,
        "epochs": len(report.epochs),
        "seconds": seconds,
    }


def longrange_comparison(seeds=(0, 1, 2), variants=("subilstm-tied", "bilstm"), **kwargs) -> dict:
    """Run every variant under every seed and summarize median test accuracy."""
    runs = [longrange_run(v, s, **kwargs) for v in variants for s in seeds]
    medians = {}
    for v in variants:
        accs = [r["test_accuracy"] for r in runs if r["variant"] == EncoderConfig(v, 1, 1).variant]
        medians[v] = float(np.median(accs))
    return {"runs": runs, "median": medians}


def overfit_run(
    variant: str = "subilstm-tied",
    seed: int = 0,
    num_examples: int = 32,
    seq_len: int = 12,
    hidden_dim: int = 16,
    max_epochs: int = 200,
    batch_size: int = 8,
    lr: float = 1e-3,
    dtype=np.float64,
) -> dict:
    """Fit a small synthetic subset until train accuracy (dropout off) hits 1.0."""
    rng = Rng(seed)
    corpus = gen_longrange(num_examples, seq_len, SYNTH_VOCAB, rng.child(1))
    cfg = EncoderConfig(variant, SYNTH_EMBED_DIM, hidden_dim)
    model = make_classifier(
        len(corpus.vocab), 2, cfg, rng.child(2), freeze_embeddings=False, dropout=0.0, dtype=dtype
    )
    state = AdamState(lr=lr, weight_decay=0.0)
    report = fit(model, corpus, state, rng.child(3), max_epochs, batch_size, stop_at_train_accuracy=1.0)
    last = report.epochs[-1]
    return {
        "variant": cfg.variant,
        "seed": seed,
        "epochs": last.epoch,
        "train_accuracy": last.train_eval_accuracy,
        "final_loss": last.loss,
    }


def _random_batch(batch: int, n_max: int, dim: int, rng: Rng, uniform: bool, dtype) -> tuple[Tensor, np.ndarray]:
    if uniform:
        lengths = np.full(batch, n_max, dtype=np.int64)
    else:
        lengths = rng.integers(1, n_max + 1, size=batch).astype(np.int64)
        lengths[0] = n_max
    E = rng.uniform(-1.0, 1.0, (batch, n_max, dim), dtype=dtype)
    E[np.arange(n_max)[None, :] >= lengths[:, None]] = 0.0
    return Tensor(E), lengths


def scheduler_bench(
    n_max: int = 40,
    batch: int = 32,
    hidden_dim: int = 128,
    input_dim: int = 128,
    seed: int = 0,
    threads: int = 1,
    repeat: int = 3,
    uniform: bool = True,
    dtype=np.float64,
    naive: bool = True,
) -> dict:
    """Wall-clock of the suffix loop vs unmerged, merged and threaded plans.

    Timings cover the forward suffix pass of one direction, the part whose
    cost is quadratic in ``n_max``.
    """
    rng = Rng(seed)
    params = LstmParams.init(input_dim, hidden_dim, rng, dtype)
    E, lengths = _random_batch(batch, n_max, input_dim, rng, uniform, dtype)
    unmerged = build_plan(lengths, merge=False)
    merged = build_plan(lengths, merge=True, pack_full=True)
    su, sm = plan_stats(unmerged), plan_stats(merged)
    out = {
        "n_max": n_max,
        "batch": batch,
        "hidden_dim": hidden_dim,
        "token_steps": token_steps(lengths),
        "passes_unmerged": su.num_passes,
        "passes_merged": sm.num_passes,
        "lockstep_unmerged": su.lockstep_steps,
        "lockstep_merged": sm.lockstep_steps,
    }
    out["seconds_unmerged"] = time_call(lambda: execute_plan(E, lengths, unmerged, params), repeat)
    out["seconds_merged"] = time_call(lambda: execute_plan(E, lengths, merged, params), repeat)
    if threads > 1:
        out["seconds_parallel"] = time_call(
            lambda: execute_plan(E, lengths, merged, params, threads=threads), repeat
        )
    if naive:
        out["seconds_naive"] = time_call(lambda: suffix_loop(E, lengths, params), 1)
        out["speedup_merged"] = out["seconds_naive"] / out["seconds_merged"]
    return out


def token_step_scaling(n_values=(5, 10, 20, 40, 80), batch: int = 32) -> list[dict]:
    """Token-steps for uniform-length batches as ``n_max`` doubles."""
    rows, prev = [], None
    for n in n_values:
        steps = plan_stats(build_plan([n] * batch)).total_token_steps
        rows.append({"n_max": n, "token_steps": steps, "ratio": (steps / prev) if prev else None})
        prev = steps
    return rows


def bucketing_gain(corpus, batch_size: int, rng: Rng) -> tuple[int, int]:
    """Total suffix token-steps for one epoch without and with bucketing."""
    plain = make_batches(corpus, batch_size, bucket=False, rng=rng.child(1))
    bucketed = make_batches(corpus, batch_size, bucket=True, rng=rng.child(1))

    def total(batches):
        return sum(plan_stats(build_plan(b.lengths)).total_token_steps for b in batches)

    return total(plain), total(bucketed)


# ---------------------------------------------------------------------------
# TREC-6

TREC_ENV = "SUBILSTM_TREC_DIR"
TREC_FILES = ("train_5500.label", "TREC_10.label")
TREC_LABELS = ("ABBR", "DESC", "ENTY", "HUM", "LOC", "NUM")


def find_trec(data_dir=None) -> tuple[Path, Path] | None:
    """Locate the raw TREC question files (``COARSE:fine text`` per line).

    Looks in ``data_dir``, then ``$SUBILSTM_TREC_DIR``, then ``./data/trec``.
    """
    candidates = [data_dir, os.environ.get(TREC_ENV), Path.cwd() / "data" / "trec"]
    for d in candidates:
        if d is None:
            continue
        train, test = (Path(d) / name for name in TREC_FILES)
        if train.is_file() and test.is_file():
            return train, test
    return None


def trec_run(
    variant: str,
    train_path,
    test_path,
    seed: int = 0,
    hidden_dim: int = 64,
    embed_dim: int = 100,
    embeddings=None,
    epochs: int = 10,
    batch_size: int = 32,
    lr: float = 1e-3,
    val_fraction: float = 0.1,
    dtype=np.float32,
    threads: int = 1,
) -> dict:
    """Train on the TREC training file, select the best-validation epoch, score the test file.

    ``embeddings`` is an optional GloVe-style file of dimension ``embed_dim``;
    without it the embedding table is random and trained.
    """
    rng = Rng(seed)
    full = load_labeled_corpus(train_path, "trec", label_names=TREC_LABELS)
    train, val = train_test_split(full, val_fraction, rng.child(1))
    test = load_labeled_corpus(test_path, "trec", full.vocab, TREC_LABELS)
    table = None
    if embeddings is not None:
        table = load_embeddings(embeddings, full.vocab, embed_dim, rng.child(2), dtype)
    cfg = EncoderConfig(variant, embed_dim, hidden_dim)
    model = make_classifier(
        len(full.vocab), len(TREC_LABELS), cfg, rng.child(3), table, freeze_embeddings=table is not None,
        dtype=dtype, options=EncodeOptions(threads=threads),
    )
    best = {"val": -1.0, "test": 0.0, "epoch": 0}

    def on_epoch(rec, m):
        if rec.val_accuracy > best["val"]:
            best.update(val=rec.val_accuracy, test=evaluate(m, test)["accuracy"], epoch=rec.epoch)

    t0 = time.perf_counter()
    fit(model, train, AdamState(lr=lr), rng.child(4), epochs, batch_size, val, on_epoch=on_epoch)
    seconds = time.perf_counter() - t0
    logger.info("trec %s seed=%d test_acc=%.4f (%.0fs)", cfg.variant, seed, best["test"], seconds)
    return {
        "variant": cfg.variant,
        "seed": seed,
        "test_accuracy": best["test"],
        "val_accuracy": best["val"],
        "best_epoch": best["epoch"],
        "seconds": seconds,
    }


def trec_comparison(train_path, test_path, variants=VARIANTS, **kwargs) -> dict:
    """All encoder variants under the same seed and hyperparameters."""
    runs = [trec_run(v, train_path, test_path, **kwargs) for v in variants]
    return {r["variant"]: r for r in runs}
