"""End-to-end acceptance criteria, each printed as one PASS/FAIL line.

The slow ones (long-range comparison, TREC-6) train real models and take
tens of minutes on one core.
"""

import time

import numpy as np
import pytest

from subilstm.encoders import VARIANTS, Encoder, EncoderConfig, encode_bilstm, param_count
from subilstm.experiments import (
    find_trec,
    longrange_comparison,
    overfit_run,
    scheduler_bench,
    trec_comparison,
)
from subilstm.numerics import Rng, Tensor
from subilstm.scheduler import build_plan, encode_padded, encode_subilstm_batched, pad_sequences, plan_stats, token_steps
from subilstm.verify import classifier_grad_error, random_batch, slice_oracle


def _randomize(encoder, rng):
    for t in encoder.parameters():
        t.data = rng.uniform(-1.0, 1.0, t.shape)


def test_oracle_equivalence(acceptance):
    rng = Rng(1000)
    t0 = time.perf_counter()
    worst = {"batched_vs_naive": 0.0, "naive_vs_slices": 0.0}
    for k in range(200):
        variant = ("subilstm", "subilstm-tied")[k % 2]
        h, d = int(rng.integers(1, 9)), int(rng.integers(1, 6))
        enc = Encoder.init(EncoderConfig(variant, d, h), rng.child(k))
        _randomize(enc, rng)
        seqs = random_batch(rng, max_batch=8, max_len=12, dim=d)
        reps = encode_subilstm_batched(enc, *pad_sequences(seqs), merge=bool(k % 3))
        for s, r in zip(seqs, reps):
            naive = enc.encode(Tensor(s)).H.data
            worst["batched_vs_naive"] = max(worst["batched_vs_naive"], float(np.abs(r.H.data - naive).max()))
            worst["naive_vs_slices"] = max(worst["naive_vs_slices"], float(np.abs(naive - slice_oracle(enc, s)).max()))
    seconds = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-12 and seconds < 60
    assert acceptance(1, "oracle_equivalence", ok, batches=200, **worst, seconds=seconds)


def test_parameter_accounting(acceptance):
    rows, ok = [], True
    for d, h in [(3, 4), (50, 64), (300, 300)]:
        c = {v: param_count(EncoderConfig(v, d, h)) for v in VARIANTS}
        ok &= c["subilstm-tied"] == c["bilstm"]
        ok &= c["subilstm"] == 2 * c["bilstm"]
        ok &= c["bilstm2"] > c["subilstm"]
        for v in VARIANTS:
            enc = Encoder.init(EncoderConfig(v, d, h), Rng(0))
            ok &= enc.num_params == c[v]
        rows.append(f"({d},{h}):bi={c['bilstm']}/tied={c['subilstm-tied']}/su={c['subilstm']}/bi2={c['bilstm2']}")
    assert acceptance(2, "parameter_accounting", ok, counts=";".join(rows))


def test_single_token_reduction(acceptance):
    rng = Rng(2000)
    worst = 0.0
    for k in range(100):
        d, h = int(rng.integers(1, 10)), int(rng.integers(1, 10))
        tied = Encoder.init(EncoderConfig("subilstm-tied", d, h), rng.child(k))
        _randomize(tied, rng)
        x = Tensor(rng.uniform(-3, 3, (1, d)))
        bi = encode_bilstm(x, tied.lstms["fwd_prefix"], tied.lstms["rev_prefix"]).H.data
        worst = max(worst, float(np.abs(tied.encode(x).H.data - bi).max()))
        batched = encode_padded(tied, Tensor(x.data[None]), [1]).data[0]
        worst = max(worst, float(np.abs(batched - bi).max()))
    assert acceptance(3, "single_token_reduction", worst == 0.0, trials=100, max_abs_diff=worst)


def test_representation_width(acceptance):
    rng = Rng(3000)
    bad = []
    for k in range(40):
        v = VARIANTS[k % 4]
        d, h, n = int(rng.integers(1, 12)), int(rng.integers(1, 12)), int(rng.integers(1, 8))
        enc = Encoder.init(EncoderConfig(v, d, h, "max"), rng.child(k))
        seqs = [rng.uniform(-1, 1, (n, d))]
        widths = {enc.config.width, enc.encode(Tensor(seqs[0])).H.shape[1], encode_padded(enc, *pad_sequences(seqs)).shape[2]}
        if widths != {2 * h}:
            bad.append((v, d, h, sorted(widths)))
    assert acceptance(4, "representation_width", not bad, configs=40, mismatches=len(bad))


def test_classifier_gradient(acceptance):
    t0 = time.perf_counter()
    errors = [classifier_grad_error(seed, "subilstm-tied", n=5, h=4, vocab=10) for seed in range(3)]
    seconds = time.perf_counter() - t0
    ok = max(errors) <= 1e-4 and seconds < 300
    assert acceptance(5, "classifier_gradient", ok, max_rel_error=max(errors), seeds=3, seconds=seconds)


def test_token_step_conservation(acceptance):
    rng = Rng(4000)
    mismatches = 0
    for k in range(1000):
        lengths = rng.integers(1, 41, size=int(rng.integers(1, 33))).tolist()
        expected = sum(n * (n + 1) // 2 for n in lengths)
        for merge in (False, True):
            plan = build_plan(lengths, merge=merge, pack_full=bool(k % 2))
            mismatches += plan_stats(plan).total_token_steps != expected
    ratios = [token_steps([2 * n] * 32) / token_steps([n] * 32) for n in (5, 10, 20, 40)]
    ok = mismatches == 0 and all(4 * 0.85 <= r <= 4 * 1.15 for r in ratios)
    assert acceptance(6, "token_step_conservation", ok, multisets=1000, mismatches=mismatches, doubling_ratios=ratios)


def test_merged_speedup(acceptance):
    r = scheduler_bench(n_max=40, batch=32, hidden_dim=128, input_dim=128, repeat=3)
    ok = r["speedup_merged"] >= 1.5
    assert acceptance(
        7, "merged_speedup", ok,
        speedup=r["speedup_merged"], seconds_loop=r["seconds_naive"], seconds_merged=r["seconds_merged"],
        seconds_unmerged=r["seconds_unmerged"], passes=f"{r['passes_unmerged']}->{r['passes_merged']}",
    )


def test_overfit(acceptance):
    t0 = time.perf_counter()
    runs = [overfit_run("subilstm-tied", seed, num_examples=32, hidden_dim=16, max_epochs=200) for seed in range(3)]
    seconds = time.perf_counter() - t0
    ok = all(r["train_accuracy"] == 1.0 and r["epochs"] <= 200 for r in runs) and seconds < 300
    assert acceptance(
        8, "overfit", ok, epochs=[r["epochs"] for r in runs],
        train_accuracy=[r["train_accuracy"] for r in runs], seconds=seconds,
    )


def test_longrange_comparison(acceptance):
    t0 = time.perf_counter()
    result = longrange_comparison(seeds=(0, 1, 2), variants=("subilstm-tied", "bilstm"))
    seconds = time.perf_counter() - t0
    runs = result["runs"]
    tied = [r["test_accuracy"] for r in runs if r["variant"] == "subilstm-tied"]
    bi = [r["test_accuracy"] for r in runs if r["variant"] == "bilstm"]
    med = result["median"]
    bilstm_sweep = all(b - t > 0.02 for t, b in zip(tied, bi))
    accuracy_ok = med["subilstm-tied"] >= med["bilstm"] and not bilstm_sweep
    ok = accuracy_ok and seconds < 1800
    assert acceptance(
        9, "longrange_comparison", ok, tied=tied, bilstm=bi,
        median_tied=med["subilstm-tied"], median_bilstm=med["bilstm"],
        accuracy_ok=accuracy_ok, seconds=seconds,
    )


def test_trec6(acceptance):
    paths = find_trec()
    if paths is None:
        acceptance(10, "trec6", False, reason="TREC-6 files (train_5500.label, TREC_10.label) not found; "
                   "set SUBILSTM_TREC_DIR")
        pytest.fail("TREC-6 data not available; set SUBILSTM_TREC_DIR to a directory with train_5500.label "
                    "and TREC_10.label")
    t0 = time.perf_counter()
    runs = trec_comparison(*paths, seed=0, hidden_dim=64, embed_dim=100, epochs=15)
    seconds = time.perf_counter() - t0
    acc = {v: r["test_accuracy"] for v, r in runs.items()}
    floor_ok = all(a >= 0.75 for a in acc.values())
    base = max(acc["bilstm"], acc["bilstm2"])
    close_ok = all(acc[v] >= base - 0.02 for v in ("subilstm", "subilstm-tied"))
    ok = floor_ok and close_ok and seconds < 1800
    assert acceptance(10, "trec6", ok, **{f"acc_{v}": a for v, a in acc.items()}, seconds=seconds)
