"""Batched computation of suffix encodings.

A sentence of length ``n`` has ``n`` suffixes, each needing its own pass
from the zero state, so a batch costs ``sum(n_i * (n_i + 1) / 2)`` LSTM
token-steps. A :class:`SuffixPlan` lays those slices out as passes. Slices
in a pass are right-aligned: a slice of length ``L`` in a pass of ``T``
steps joins at step ``T - L`` with a zero state, and every slice finishes
on the last step. Rows are kept sorted longest-first, so the active rows at
each step are a prefix of the block and the cell never needs masking.

Without merging there is one pass per slice length. With merging, passes
narrower than the batch are coalesced (longest first) into wider passes,
up to the width budget.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoders import BILSTM, BILSTM2, ContextualReps, Encoder, combine
from .lstm import LstmParams, lstm_scan, record_scan, run_sequence, scan_forward
from .numerics import Tensor

DEFAULT_BUDGET_FACTOR = 4


@dataclass(frozen=True)
class Slice:
    sentence: int
    start: int
    length: int


@dataclass(frozen=True)
class Pass:
    slices: tuple[Slice, ...]

    @property
    def width(self) -> int:
        return len(self.slices)

    @property
    def steps(self) -> int:
        return self.slices[0].length if self.slices else 0


@dataclass(frozen=True)
class SuffixPlan:
    passes: tuple[Pass, ...]
    lengths: tuple[int, ...]
    n_max: int
    merged: bool
    max_pass_width: int


@dataclass(frozen=True)
class PlanStats:
    num_passes: int
    total_token_steps: int
    max_pass_width: int
    lockstep_steps: int


def token_steps(lengths) -> int:
    return int(sum(n * (n + 1) // 2 for n in lengths))


def build_plan(lengths, max_pass_width: int | None = None, merge: bool = True, pack_full: bool = False) -> SuffixPlan:
    """Group every (sentence, suffix start) slice into passes.

    ``merge=False`` gives exactly ``n_max`` passes, pass ``k`` holding every
    suffix of length ``n_max - k``. With ``merge=True`` same-length groups
    narrower than the batch are coalesced up to ``max_pass_width`` slices
    per pass (default four times the batch size); ``pack_full`` lets
    full-width groups coalesce too. Slices are never split.
    """
    lengths = tuple(int(n) for n in lengths)
    if not lengths:
        raise ValueError("empty batch")
    if min(lengths) < 1:
        raise ValueError("every sentence needs at least one token")
    batch = len(lengths)
    budget = DEFAULT_BUDGET_FACTOR * batch if max_pass_width is None else int(max_pass_width)
    if budget < 1:
        raise ValueError("pass width budget must be at least 1")
    n_max = max(lengths)

    groups: list[list[Slice]] = []
    for L in range(n_max, 0, -1):
        group = [Slice(b, n - L, L) for b, n in enumerate(lengths) if n >= L]
        groups.append(group)

    if not merge:
        return SuffixPlan(tuple(Pass(tuple(g)) for g in groups), lengths, n_max, False, budget)

    passes: list[list[Slice]] = []
    current: list[Slice] = []
    for group in groups:
        chunks = [group[k : k + budget] for k in range(0, len(group), budget)]
        for chunk in chunks:
            mergeable = pack_full or len(chunk) < batch
            if current and mergeable and len(current) + len(chunk) <= budget:
                current.extend(chunk)
                continue
            if current:
                passes.append(current)
            current = list(chunk)
            if not mergeable:
                passes.append(current)
                current = []
    if current:
        passes.append(current)
    return SuffixPlan(tuple(Pass(tuple(p)) for p in passes), lengths, n_max, True, budget)


def plan_stats(plan: SuffixPlan) -> PlanStats:
    seen = set()
    total = 0
    for p in plan.passes:
        for s in p.slices:
            key = (s.sentence, s.start)
            if key in seen:
                raise AssertionError(f"slice {key} scheduled twice")
            seen.add(key)
            total += s.length
    expected = token_steps(plan.lengths)
    if total != expected or len(seen) != sum(plan.lengths):
        raise AssertionError(f"plan covers {total} token-steps, expected {expected}")
    return PlanStats(
        num_passes=len(plan.passes),
        total_token_steps=total,
        max_pass_width=max(p.width for p in plan.passes),
        lockstep_steps=sum(p.steps for p in plan.passes),
    )


# ---------------------------------------------------------------------------
# execution


def _token_index(lengths: np.ndarray, sentence: np.ndarray, pos: np.ndarray, reverse: bool) -> np.ndarray:
    """Map a position in (possibly reversed) sentence coordinates to a token column."""
    return lengths[sentence] - 1 - pos if reverse else pos


def _pass_inputs(p: Pass, lengths: np.ndarray, reverse: bool):
    """Gather indices (T x R) and per-row start steps for one pass."""
    T = p.steps
    sent = np.array([s.sentence for s in p.slices], dtype=np.int64)
    first = np.array([s.start for s in p.slices], dtype=np.int64)
    slen = np.array([s.length for s in p.slices], dtype=np.int64)
    starts = T - slen
    steps = np.arange(T)[:, None]
    pos = first[None, :] + steps - starts[None, :]
    active = steps >= starts[None, :]
    pos = np.where(active, pos, 0)
    col = np.where(active, _token_index(lengths, sent[None, :], pos, reverse), 0)
    rows = np.broadcast_to(sent[None, :], (T, len(sent)))
    return rows, col, starts


def execute_plan(
    E: Tensor,
    lengths,
    plan: SuffixPlan,
    params: LstmParams,
    reverse: bool = False,
    threads: int = 1,
) -> Tensor:
    """Final state of every suffix slice, laid out as B x n_max x h.

    ``E`` holds left-aligned token inputs (B x n_max x d). Entry ``[b, j]``
    is the encoding of suffix ``j`` of sentence ``b``, in reversed token
    order when ``reverse`` is set (then it is the reverse-direction prefix
    ending at token ``len_b - 1 - j``). Entries past a sentence's length
    are zero.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    if tuple(int(n) for n in lengths) != plan.lengths:
        raise ValueError("plan was built for different sentence lengths")
    B, n_max = E.shape[0], E.shape[1]
    if B != len(lengths) or n_max < plan.n_max:
        raise ValueError("batch shape does not match the plan")
    hd = params.hidden_dim

    inputs, starts_list = [], []
    for p in plan.passes:
        rows, col, starts = _pass_inputs(p, lengths, reverse)
        inputs.append(E[rows, col])
        starts_list.append(starts)

    W, U, b = params.W.data, params.U.data, params.b.data

    def run(k):
        return scan_forward(inputs[k].data, W, U, b, starts_list[k])

    if threads > 1 and len(plan.passes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(len(plan.passes))))
    else:
        results = [run(k) for k in range(len(plan.passes))]

    finals = [record_scan(out, cache, xs, params, last_only=True) for (out, cache), xs in zip(results, inputs)]

    # Scatter pass outputs into B x n_max slots; slot 0 of the source is a zero row.
    index = np.zeros((B, n_max), dtype=np.int64)
    offset = 1
    for p in plan.passes:
        for r, s in enumerate(p.slices):
            index[s.sentence, s.start] = offset + r
        offset += p.width
    zero = Tensor(np.zeros((1, hd), dtype=E.dtype))
    flat = nx.concat([zero] + finals, axis=0)
    return flat[index]


def prefix_pass(E: Tensor, lengths, params: LstmParams, reverse: bool = False) -> Tensor:
    """Prefix encodings for a padded batch, one right-aligned pass (B x n_max x h).

    Entry ``[b, i]`` is the state after reading tokens ``0..i`` (or, with
    ``reverse``, tokens ``len_b - 1`` down to ``i``). Padding is never fed
    to the LSTM.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    B, n_max = E.shape[0], E.shape[1]
    T = int(lengths.max())
    order = np.argsort(-lengths, kind="stable")
    slen = lengths[order]
    starts = T - slen
    steps = np.arange(T)[:, None]
    pos = steps - starts[None, :]
    active = pos >= 0
    pos = np.where(active, pos, 0)
    col = np.where(active, _token_index(lengths, order[None, :], pos, reverse), 0)
    rows = np.broadcast_to(order[None, :], (T, B))
    out = lstm_scan(E[rows, col], params, starts)  # T x B x h

    # Output step for (sentence b, token i) sits at starts[r] + k where k is
    # the reading position of token i in this direction.
    rank = np.empty(B, dtype=np.int64)
    rank[order] = np.arange(B)
    tok = np.arange(n_max)[None, :]
    k = (lengths[:, None] - 1 - tok) if reverse else np.broadcast_to(tok, (B, n_max))
    valid = tok < lengths[:, None]
    step = np.where(valid, starts[rank][:, None] + k, 0)
    row = np.broadcast_to(rank[:, None], (B, n_max))
    gathered = out[step, row]
    mask = Tensor(valid[:, :, None].astype(E.dtype))
    return gathered * mask


def _bilstm_padded(E: Tensor, lengths, fwd: LstmParams, rev: LstmParams) -> Tensor:
    return nx.concat([prefix_pass(E, lengths, fwd), prefix_pass(E, lengths, rev, reverse=True)], axis=2)


def encode_padded(
    encoder: Encoder,
    E: Tensor,
    lengths,
    merge: bool = True,
    max_pass_width: int | None = None,
    threads: int = 1,
    pack_full: bool = False,
) -> Tensor:
    """Token representations of a padded batch: B x n_max x width (padding rows zero)."""
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.size == 0 or lengths.min() < 1:
        raise ValueError("every sentence needs at least one token")
    if E.shape[0] != len(lengths) or E.shape[1] < lengths.max():
        raise ValueError("padded inputs do not match lengths")
    cfg, L = encoder.config, encoder.lstms
    if cfg.variant == BILSTM:
        return _bilstm_padded(E, lengths, L["fwd"], L["rev"])
    if cfg.variant == BILSTM2:
        first = _bilstm_padded(E, lengths, L["fwd"], L["rev"])
        return _bilstm_padded(first, lengths, L["fwd2"], L["rev2"])

    plan = build_plan(lengths, max_pass_width, merge, pack_full)
    fwd_pre = prefix_pass(E, lengths, L["fwd_prefix"])
    rev_suf = prefix_pass(E, lengths, L["rev_suffix"], reverse=True)
    fwd_suf = execute_plan(E, lengths, plan, L["fwd_suffix"], threads=threads)
    rev_pre_r = execute_plan(E, lengths, plan, L["rev_prefix"], reverse=True, threads=threads)
    # rev_pre_r[b, j] belongs to token len_b - 1 - j.
    n_max = E.shape[1]
    tok = np.arange(n_max)[None, :]
    valid = tok < lengths[:, None]
    j = np.where(valid, lengths[:, None] - 1 - tok, 0)
    rows = np.broadcast_to(np.arange(len(lengths))[:, None], j.shape)
    rev_pre = rev_pre_r[rows, j] * Tensor(valid[:, :, None].astype(E.dtype))
    fwd = combine(fwd_pre, fwd_suf, cfg.combiner)
    rev = combine(rev_pre, rev_suf, cfg.combiner)
    return nx.concat([fwd, rev], axis=2)


def split_reps(H: Tensor, lengths) -> list[ContextualReps]:
    return [ContextualReps(H[b, : int(n)], int(n)) for b, n in enumerate(lengths)]


def encode_subilstm_batched(
    encoder: Encoder,
    E: Tensor,
    lengths,
    merge: bool = True,
    max_pass_width: int | None = None,
    threads: int = 1,
) -> list[ContextualReps]:
    """Per-sentence representations computed through the suffix plan."""
    if not encoder.config.is_suffix:
        raise ValueError("batched suffix encoding needs a SuBiLSTM variant")
    H = encode_padded(encoder, E, lengths, merge, max_pass_width, threads)
    return split_reps(H, lengths)


def pad_sequences(seqs, dtype=np.float64) -> tuple[Tensor, np.ndarray]:
    """Stack n_i x d arrays into a zero-padded B x n_max x d tensor."""
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    d = np.asarray(seqs[0]).shape[1]
    out = np.zeros((len(seqs), int(lengths.max()), d), dtype=dtype)
    for b, s in enumerate(seqs):
        out[b, : len(s)] = np.asarray(s)
    return Tensor(out), lengths


def suffix_loop(E: Tensor, lengths, params: LstmParams, reverse: bool = False) -> np.ndarray:
    """One-suffix-at-a-time baseline: a separate LSTM run for every slice."""
    B, n_max, _ = E.shape
    out = np.zeros((B, n_max, params.hidden_dim), dtype=E.dtype)
    for b, n in enumerate(lengths):
        n = int(n)
        sent = E.data[b, :n]
        if reverse:
            sent = sent[::-1]
        for j in range(n):
            out[b, j] = run_sequence(Tensor(sent[j:]), params).data[-1]
    return out


def time_call(fn, repeat: int = 1) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best
