"""Token encoders: BiLSTM, 2-layer BiLSTM, SuBiLSTM and SuBiLSTM-Tied.

Functions here are the straightforward per-sentence versions. They are the
reference the batched suffix scheduler is tested against, so they favour
clarity over speed: every suffix gets its own fresh pass from the zero
state.

For a sentence ``s`` of ``n`` tokens and token ``i`` (0-based here):

* forward prefix  ``L_fp(s[0..i])``
* forward suffix  ``L_fs(s[i..n-1])``
* reverse prefix  ``L_rp(s[i], s[i-1], ..., s[0])``
* reverse suffix  ``L_rs(s[n-1], ..., s[i])``

SuBiLSTM represents token ``i`` as
``[combine(fwd prefix, fwd suffix); combine(rev prefix, rev suffix)]``,
a BiLSTM as ``[fwd prefix; rev suffix]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .lstm import LstmParams, lstm_param_count, run_sequence
from .numerics import Rng, Tensor

BILSTM = "bilstm"
BILSTM2 = "bilstm2"
SUBILSTM = "subilstm"
SUBILSTM_TIED = "subilstm-tied"
VARIANTS = (BILSTM, BILSTM2, SUBILSTM, SUBILSTM_TIED)
COMBINERS = ("max", "mean", "concat")

_ALIASES = {
    "bilstm": BILSTM,
    "bilstm2": BILSTM2,
    "bilstm-2layer": BILSTM2,
    "bilstm2layer": BILSTM2,
    "2-layer-bilstm": BILSTM2,
    "subilstm": SUBILSTM,
    "subilstm-tied": SUBILSTM_TIED,
    "subilstmtied": SUBILSTM_TIED,
    "subilstm_tied": SUBILSTM_TIED,
}

_LSTM_NAMES = {
    BILSTM: ("fwd", "rev"),
    BILSTM2: ("fwd", "rev", "fwd2", "rev2"),
    SUBILSTM: ("fwd_prefix", "fwd_suffix", "rev_prefix", "rev_suffix"),
    SUBILSTM_TIED: ("fwd_prefix", "fwd_suffix", "rev_prefix", "rev_suffix"),
}


def normalize_variant(name: str) -> str:
    try:
        return _ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown encoder variant {name!r}; choose from {', '.join(VARIANTS)}") from None


@dataclass(frozen=True)
class EncoderConfig:
    variant: str
    input_dim: int
    hidden_dim: int
    combiner: str = "max"

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        if self.combiner not in COMBINERS:
            raise ValueError(f"unknown combiner {self.combiner!r}")
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ValueError("input_dim and hidden_dim must be positive")

    @property
    def is_suffix(self) -> bool:
        return self.variant in (SUBILSTM, SUBILSTM_TIED)

    @property
    def tied(self) -> bool:
        return self.variant == SUBILSTM_TIED

    @property
    def width(self) -> int:
        """Width of one token representation."""
        if self.is_suffix and self.combiner == "concat":
            return 4 * self.hidden_dim
        return 2 * self.hidden_dim


def param_count(config: EncoderConfig) -> int:
    """Trainable scalars in the encoder (embeddings and heads excluded)."""
    d, h = config.input_dim, config.hidden_dim
    one = lstm_param_count(d, h)
    if config.variant == BILSTM:
        return 2 * one
    if config.variant == BILSTM2:
        return 2 * one + 2 * lstm_param_count(2 * h, h)
    if config.variant == SUBILSTM:
        return 4 * one
    return 2 * one


@dataclass
class ContextualReps:
    """Per-token representations of one sentence (``length`` x width)."""

    H: Tensor
    length: int

    def __post_init__(self):
        if self.H.shape[0] != self.length:
            raise ValueError("row count must equal the sentence length")

    @property
    def width(self) -> int:
        return self.H.shape[1]


@dataclass
class Encoder:
    """An encoder configuration together with its LSTM parameters.

    For the tied variant the prefix and suffix entries of each direction
    are the same :class:`LstmParams` object.
    """

    config: EncoderConfig
    lstms: dict[str, LstmParams] = field(default_factory=dict)

    @classmethod
    def init(cls, config: EncoderConfig, rng: Rng, dtype=np.float64) -> "Encoder":
        d, h = config.input_dim, config.hidden_dim
        lstms: dict[str, LstmParams] = {}
        if config.variant == BILSTM:
            lstms["fwd"] = LstmParams.init(d, h, rng, dtype)
            lstms["rev"] = LstmParams.init(d, h, rng, dtype)
        elif config.variant == BILSTM2:
            lstms["fwd"] = LstmParams.init(d, h, rng, dtype)
            lstms["rev"] = LstmParams.init(d, h, rng, dtype)
            lstms["fwd2"] = LstmParams.init(2 * h, h, rng, dtype)
            lstms["rev2"] = LstmParams.init(2 * h, h, rng, dtype)
        elif config.variant == SUBILSTM:
            for name in _LSTM_NAMES[SUBILSTM]:
                lstms[name] = LstmParams.init(d, h, rng, dtype)
        else:
            fwd = LstmParams.init(d, h, rng, dtype)
            rev = LstmParams.init(d, h, rng, dtype)
            lstms.update(fwd_prefix=fwd, fwd_suffix=fwd, rev_prefix=rev, rev_suffix=rev)
        return cls(config, lstms)

    @classmethod
    def from_bilstm(cls, fwd: LstmParams, rev: LstmParams, combiner: str = "max") -> "Encoder":
        """SuBiLSTM-Tied encoder sharing the two LSTMs of a BiLSTM."""
        config = EncoderConfig(SUBILSTM_TIED, fwd.input_dim, fwd.hidden_dim, combiner)
        return cls(config, dict(fwd_prefix=fwd, fwd_suffix=fwd, rev_prefix=rev, rev_suffix=rev))

    def unique_lstms(self) -> list[tuple[str, LstmParams]]:
        seen, out = set(), []
        for name in _LSTM_NAMES[self.config.variant]:
            p = self.lstms[name]
            if id(p) not in seen:
                seen.add(id(p))
                out.append((name, p))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, p in self.unique_lstms() for t in p.parameters()]

    @property
    def num_params(self) -> int:
        return sum(t.size for t in self.parameters())

    @property
    def dtype(self):
        return next(iter(self.lstms.values())).dtype

    def encode(self, seq: Tensor) -> ContextualReps:
        """Reference encoding of one sentence (``n`` x ``input_dim``)."""
        L, v = self.lstms, self.config.variant
        if v == BILSTM:
            return encode_bilstm(seq, L["fwd"], L["rev"])
        if v == BILSTM2:
            return encode_bilstm_2layer(seq, (L["fwd"], L["rev"]), (L["fwd2"], L["rev2"]))
        return encode_subilstm_naive(
            seq,
            L["fwd_prefix"],
            L["fwd_suffix"],
            L["rev_prefix"],
            L["rev_suffix"],
            tied=self.config.tied,
            combiner=self.config.combiner,
        )


def _check_seq(seq: Tensor) -> int:
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ValueError("expected a non-empty n x d sequence")
    return seq.shape[0]


def _reverse_rows(x: Tensor) -> Tensor:
    return x[::-1]


def combine(prefix: Tensor, suffix: Tensor, mode: str = "max") -> Tensor:
    """Merge prefix and suffix encodings along the last axis.

    ``max`` is elementwise (ties keep the prefix side for gradients),
    ``mean`` averages and ``concat`` stacks the two side by side.
    """
    if prefix.shape != suffix.shape:
        raise ValueError(f"cannot combine shapes {prefix.shape} and {suffix.shape}")
    if mode == "max":
        return nx.maximum(prefix, suffix)
    if mode == "mean":
        return nx.mul(nx.add(prefix, suffix), 0.5)
    if mode == "concat":
        return nx.concat([prefix, suffix], axis=-1)
    raise ValueError(f"unknown combiner {mode!r}")


def encode_bilstm(seq: Tensor, fwd: LstmParams, rev: LstmParams) -> ContextualReps:
    n = _check_seq(seq)
    forward = run_sequence(seq, fwd)
    backward = _reverse_rows(run_sequence(_reverse_rows(seq), rev))
    return ContextualReps(nx.concat([forward, backward], axis=1), n)


def encode_bilstm_2layer(seq: Tensor, layer1, layer2) -> ContextualReps:
    n = _check_seq(seq)
    fwd1, rev1 = layer1
    fwd2, rev2 = layer2
    if fwd2.input_dim != 2 * fwd1.hidden_dim or rev2.input_dim != 2 * rev1.hidden_dim:
        raise ValueError("second layer input dim must be twice the first layer hidden dim")
    first = encode_bilstm(seq, fwd1, rev1)
    second = encode_bilstm(first.H, fwd2, rev2)
    return ContextualReps(second.H, n)


def encode_subilstm_naive(
    seq: Tensor,
    fwd_prefix: LstmParams,
    fwd_suffix: LstmParams,
    rev_prefix: LstmParams,
    rev_suffix: LstmParams,
    tied: bool = False,
    combiner: str = "max",
) -> ContextualReps:
    """SuBiLSTM token representations, one fresh LSTM pass per suffix."""
    n = _check_seq(seq)
    if tied and (fwd_prefix is not fwd_suffix or rev_prefix is not rev_suffix):
        raise ValueError("tied encoding needs the same LSTM object for prefixes and suffixes")
    fwd_pre = run_sequence(seq, fwd_prefix)
    rev_suf = _reverse_rows(run_sequence(_reverse_rows(seq), rev_suffix))
    rows = []
    for i in range(n):
        fwd_suf = run_sequence(seq[i:], fwd_suffix)[-1]
        rev_pre = run_sequence(_reverse_rows(seq[: i + 1]), rev_prefix)[-1]
        rows.append(
            nx.concat(
                [combine(fwd_pre[i], fwd_suf, combiner), combine(rev_pre, rev_suf[i], combiner)],
                axis=0,
            )
        )
    return ContextualReps(nx.stack(rows), n)


def pool_max(reps, length: int | None = None) -> Tensor:
    """Coordinatewise max over the first ``length`` token rows."""
    H = reps.H if isinstance(reps, ContextualReps) else reps
    if length is None:
        length = H.shape[0]
    if length < 1 or length > H.shape[0]:
        raise ValueError(f"pool length {length} out of range for {H.shape[0]} rows")
    return nx.max_axis(H[:length], axis=0)


_BIG = 1e30


def pool_max_batch(H: Tensor, lengths) -> Tensor:
    """Max-pool a padded batch (B x n_max x w) over each sentence's true tokens."""
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.min() < 1:
        raise ValueError("pool length must be at least 1")
    valid = (np.arange(H.shape[1])[None, :] < lengths[:, None])[:, :, None].astype(H.dtype)
    # Padding rows become -BIG; real rows pass through unchanged (x * 1 + 0).
    masked = H * Tensor(valid) + Tensor((valid - 1.0) * _BIG)
    return nx.max_axis(masked, axis=1)
