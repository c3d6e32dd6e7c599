"""Self-checks: gradients, oracle equivalences and structural identities.

Every check is deterministic for a given seed and returns a :class:`Check`
holding the measured value and the bound it was held to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .data import PaddedBatch, gen_longrange, make_batches
from .encoders import (
    BILSTM,
    BILSTM2,
    COMBINERS,
    SUBILSTM,
    SUBILSTM_TIED,
    VARIANTS,
    Encoder,
    EncoderConfig,
    param_count,
)
from .lstm import LstmParams, LstmState, cell_step, run_sequence
from .models import make_classifier
from .numerics import Rng, Tape, Tensor, grad_check
from .scheduler import build_plan, encode_padded, pad_sequences, plan_stats, token_steps


@dataclass
class Check:
    name: str
    value: float
    bound: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value)) and self.value <= self.bound

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" {self.detail}" if self.detail else ""
        return f"check={self.name} status={status} value={self.value:.3e} bound={self.bound:.1e}{extra}"


def _randomize(encoder: Encoder, rng: Rng, scale: float = 1.0) -> None:
    """Wider-than-init weights so gates leave their linear regime."""
    for p in encoder.parameters():
        p.data = rng.uniform(-scale, scale, p.shape)


def slice_oracle(encoder: Encoder, seq: np.ndarray) -> np.ndarray:
    """SuBiLSTM reps of one sentence from explicit per-slice cell loops.

    Shares no batching code with the encoders: every prefix and suffix is
    its own loop of :func:`cell_step` calls from the zero state.
    """
    L, cfg = encoder.lstms, encoder.config
    n, h = seq.shape[0], cfg.hidden_dim

    def final(tokens, params: LstmParams) -> np.ndarray:
        state = LstmState.zeros(h, seq.dtype)
        for x in tokens:
            state = cell_step(Tensor(x), state, params)
        return state.h.data

    rows = []
    for i in range(n):
        fp = final(seq[: i + 1], L["fwd_prefix"])
        fs = final(seq[i:], L["fwd_suffix"])
        rp = final(seq[i::-1], L["rev_prefix"])
        rs = final(seq[::-1][: n - i], L["rev_suffix"])
        rows.append(np.concatenate([_combine_np(fp, fs, cfg.combiner), _combine_np(rp, rs, cfg.combiner)]))
    return np.stack(rows)


def _combine_np(a, b, mode):
    if mode == "max":
        return np.maximum(a, b)
    if mode == "mean":
        return (a + b) * 0.5
    return np.concatenate([a, b])


def random_batch(rng: Rng, max_batch: int = 8, max_len: int = 12, dim: int = 3):
    B = int(rng.integers(1, max_batch + 1))
    lengths = rng.integers(1, max_len + 1, size=B)
    seqs = [rng.uniform(-1.0, 1.0, (int(n), dim)) for n in lengths]
    return seqs


def oracle_diffs(encoder: Encoder, seqs, batched=None, merge: bool = True) -> tuple[float, float]:
    """Max |batched - naive| and max |naive - slice oracle| over a batch."""
    batched = batched or encode_padded
    E, lengths = pad_sequences(seqs)
    H = batched(encoder, E, lengths, merge=merge).data
    d_batch, d_oracle = 0.0, 0.0
    for b, s in enumerate(seqs):
        naive = encoder.encode(Tensor(s)).H.data
        d_batch = max(d_batch, float(np.abs(H[b, : len(s)] - naive).max()))
        if encoder.config.is_suffix:
            d_oracle = max(d_oracle, float(np.abs(naive - slice_oracle(encoder, s)).max()))
    return d_batch, d_oracle


def check_oracle(seed: int, batches: int = 20, batched=None) -> list[Check]:
    rng = Rng(seed)
    worst_b, worst_o = 0.0, 0.0
    for k in range(batches):
        variant = (SUBILSTM, SUBILSTM_TIED)[k % 2]
        combiner = COMBINERS[k % 3]
        h = int(rng.integers(1, 9))
        enc = Encoder.init(EncoderConfig(variant, 3, h, combiner), rng)
        _randomize(enc, rng)
        seqs = random_batch(rng)
        db, do = oracle_diffs(enc, seqs, batched, merge=bool(k % 4 < 2))
        worst_b, worst_o = max(worst_b, db), max(worst_o, do)
    return [
        Check("oracle.batched_vs_naive", worst_b, 1e-12, f"batches={batches}"),
        Check("oracle.naive_vs_slices", worst_o, 1e-12, f"batches={batches}"),
    ]


def check_baseline_padding(seed: int, batched=None) -> Check:
    """Batched BiLSTM / 2-layer BiLSTM reps equal one-sentence encodings."""
    rng = Rng(seed)
    batched = batched or encode_padded
    worst = 0.0
    for variant in (BILSTM, BILSTM2):
        enc = Encoder.init(EncoderConfig(variant, 3, 4), rng)
        seqs = random_batch(rng)
        E, lengths = pad_sequences(seqs)
        H = batched(enc, E, lengths).data
        for b, s in enumerate(seqs):
            worst = max(worst, float(np.abs(H[b, : len(s)] - enc.encode(Tensor(s)).H.data).max()))
    return Check("oracle.baseline_padding", worst, 1e-12)


def check_reduction(seed: int, trials: int = 100) -> Check:
    """A one-token sentence gets identical reps from SuBiLSTM-Tied and BiLSTM."""
    rng = Rng(seed)
    worst = 0.0
    for _ in range(trials):
        d, h = int(rng.integers(1, 6)), int(rng.integers(1, 9))
        bi = Encoder.init(EncoderConfig(BILSTM, d, h), rng)
        _randomize(bi, rng)
        tied = Encoder.from_bilstm(bi.lstms["fwd"], bi.lstms["rev"], "max")
        x = Tensor(rng.uniform(-2.0, 2.0, (1, d)))
        worst = max(worst, float(np.abs(tied.encode(x).H.data - bi.encode(x).H.data).max()))
    return Check("identity.single_token", worst, 0.0, f"trials={trials}")


def check_params() -> Check:
    bad = 0
    for d, h in ((3, 4), (50, 64), (300, 300)):
        c = {v: param_count(EncoderConfig(v, d, h)) for v in VARIANTS}
        bad += c[SUBILSTM_TIED] != c[BILSTM]
        bad += c[SUBILSTM] != 2 * c[BILSTM]
        bad += h >= d and not c[BILSTM2] > c[SUBILSTM]
        rng = Rng(0)
        if d * h < 5000:
            for v in VARIANTS:
                bad += Encoder.init(EncoderConfig(v, d, h), rng).num_params != c[v]
    return Check("identity.param_count", float(bad), 0.0)


def check_width(seed: int, trials: int = 20) -> Check:
    rng = Rng(seed)
    bad = 0
    for k in range(trials):
        variant = VARIANTS[k % len(VARIANTS)]
        d, h = int(rng.integers(1, 6)), int(rng.integers(1, 7))
        enc = Encoder.init(EncoderConfig(variant, d, h, "max"), rng)
        n = int(rng.integers(1, 6))
        bad += enc.encode(Tensor(rng.uniform(-1, 1, (n, d)))).width != 2 * h
    return Check("identity.width", float(bad), 0.0, f"trials={trials}")


def check_scheduler(seed: int, trials: int = 200) -> list[Check]:
    rng = Rng(seed)
    bad = 0
    for _ in range(trials):
        lengths = rng.integers(1, 30, size=int(rng.integers(1, 40)))
        for merge in (False, True):
            stats = plan_stats(build_plan(lengths, merge=merge))
            bad += stats.total_token_steps != token_steps(lengths)
        bad += plan_stats(build_plan(lengths)).num_passes > plan_stats(build_plan(lengths, merge=False)).num_passes
    worst = 0.0
    for n in (5, 10, 20, 40):
        def steps(m):
            return plan_stats(build_plan([m] * 32)).total_token_steps

        r = steps(2 * n) / steps(n)
        worst = max(worst, abs(r - 4.0) / 4.0)
    return [
        Check("scheduler.conservation", float(bad), 0.0, f"trials={trials}"),
        Check("scheduler.quadratic", worst, 0.15),
    ]


def check_lstm_grad(seed: int) -> Check:
    rng = Rng(seed)
    p = LstmParams.init(3, 4, rng)
    for t in p.parameters():
        t.data = rng.uniform(-1, 1, t.shape)
    seq = Tensor(rng.uniform(-1, 1, (5, 3)), requires_grad=True)
    weights = Tensor(rng.uniform(-1, 1, (5, 4)))
    err = grad_check(lambda: (run_sequence(seq, p) * weights).sum(), [seq] + p.parameters())
    return Check("grad.lstm", err, 1e-6)


def check_cell_vs_scan(seed: int) -> Check:
    rng = Rng(seed)
    p = LstmParams.init(3, 5, rng)
    seq = rng.uniform(-1, 1, (7, 3))
    H = run_sequence(Tensor(seq), p).data
    state, worst = LstmState.zeros(5), 0.0
    for i in range(7):
        state = cell_step(Tensor(seq[i]), state, p)
        worst = max(worst, float(np.abs(state.h.data - H[i]).max()))
    return Check("oracle.cell_vs_scan", worst, 0.0)


def classifier_grad_error(seed: int, variant: str = SUBILSTM_TIED, n: int = 5, h: int = 4, vocab: int = 10) -> float:
    """Max relative error of the full classifier loss gradient, every coordinate."""
    rng = Rng(seed)
    cfg = EncoderConfig(variant, 3, h)
    model = make_classifier(vocab, 3, cfg, rng, freeze_embeddings=False, dropout=0.0)
    for p in model.parameters():
        p.data = rng.uniform(-1, 1, p.shape)
    lengths = np.array([n, max(1, n - 2), 1])
    tokens = np.zeros((3, n), dtype=np.int64)
    for b, L in enumerate(lengths):
        tokens[b, :L] = rng.integers(1, vocab, size=int(L))
    batch = PaddedBatch(tokens, lengths, np.array([0, 2, 1]))

    def loss():
        return nx.cross_entropy(model.logits(batch), batch.labels)

    return grad_check(loss, model.parameters())


def check_classifier_grad(seed: int) -> Check:
    return Check("grad.classifier", classifier_grad_error(seed), 1e-4)


def check_training_step(seed: int) -> Check:
    """A few Adam steps on one synthetic batch lower its loss."""
    from .training import AdamState, adam_step

    rng = Rng(seed)
    corpus = gen_longrange(16, 6, 8, rng)
    model = make_classifier(len(corpus.vocab), 2, EncoderConfig(SUBILSTM_TIED, 4, 4), rng, dropout=0.0)
    batch = make_batches(corpus, 16, shuffle=False)[0]
    state = AdamState(lr=1e-2)
    losses = []
    for _ in range(10):
        with Tape() as tape:
            loss = nx.cross_entropy(model.logits(batch), batch.labels)
        losses.append(float(loss.data))
        adam_step(model.parameters(), nx.backward(tape, loss), state)
    return Check("training.loss_decreases", losses[-1] - losses[0], 0.0)


def run_suite(seed: int = 0, batched=None, quick: bool = False) -> list[Check]:
    """All checks. ``batched`` replaces the batched encoder (a test hook)."""
    checks = []
    checks += check_oracle(seed, batches=6 if quick else 20, batched=batched)
    checks.append(check_baseline_padding(seed, batched))
    checks.append(check_reduction(seed, trials=20 if quick else 100))
    checks.append(check_params())
    checks.append(check_width(seed))
    checks += check_scheduler(seed, trials=50 if quick else 200)
    checks.append(check_lstm_grad(seed))
    checks.append(check_cell_vs_scan(seed))
    checks.append(check_classifier_grad(seed))
    checks.append(check_training_step(seed))
    return checks


def perturbed(eps: float = 1e-6):
    """A batched encoder that is off by ``eps`` in one coordinate."""

    def encode(encoder, E, lengths, **kwargs):
        H = encode_padded(encoder, E, lengths, **kwargs)
        bump = np.zeros(H.shape, dtype=H.dtype)
        bump[0, 0, 0] = eps
        return H + Tensor(bump)

    return encode
