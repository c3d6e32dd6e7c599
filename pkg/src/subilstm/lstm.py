"""LSTM cell and the right-aligned batched scan used by every encoder.

Packed gate layout is ``(i, f, g, o)``: rows ``[0:h]`` of ``W``, ``U`` and
``b`` feed the input gate, ``[h:2h]`` the forget gate, ``[2h:3h]`` the
candidate and ``[3h:4h]`` the output gate. No peepholes.

    z  = W x + b + U h
    c' = sigmoid(z_f) * c + sigmoid(z_i) * tanh(z_g)
    h' = sigmoid(z_o) * tanh(c')

Sigmoids are evaluated as ``0.5 * tanh(z / 2) + 0.5`` so all four gates go
through one ``tanh`` call.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .numerics import Rng, Tensor, custom_op, init_params

GATE_ORDER = "ifgo"
FORGET_BIAS = 1.0

_MAGIC = b"SBLP"
_VERSION = 1
_HEADER = struct.Struct("<4sHB4sxII")  # magic, version, dtype bytes, gate order, pad, d, h


@dataclass
class LstmParams:
    """Weights for one LSTM: ``W`` (4h x d), ``U`` (4h x h), ``b`` (4h)."""

    W: Tensor
    U: Tensor
    b: Tensor

    def __post_init__(self):
        h4, d = self.W.shape
        if h4 % 4 or self.U.shape != (h4, h4 // 4) or self.b.shape != (h4,):
            raise ValueError(
                f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}"
            )

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def dtype(self):
        return self.W.dtype

    def parameters(self) -> list[Tensor]:
        return [self.W, self.U, self.b]

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: Rng, dtype=np.float64) -> "LstmParams":
        """Uniform(+-1/sqrt(h)) weights, zero biases except the forget gate at 1.0."""
        h = hidden_dim
        W = init_params((4 * h, input_dim), "uniform", rng, fan_in=h, dtype=dtype, name="W")
        U = init_params((4 * h, h), "uniform", rng, fan_in=h, dtype=dtype, name="U")
        b = init_params((4 * h,), "zeros", dtype=dtype, name="b")
        b.data[h : 2 * h] = FORGET_BIAS
        return cls(W, U, b)

    def copy(self) -> "LstmParams":
        return LstmParams(
            Tensor(self.W.data.copy(), requires_grad=True, name="W"),
            Tensor(self.U.data.copy(), requires_grad=True, name="U"),
            Tensor(self.b.data.copy(), requires_grad=True, name="b"),
        )


@dataclass
class LstmState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, hidden_dim: int, dtype=np.float64) -> "LstmState":
        return cls(Tensor(np.zeros(hidden_dim, dtype=dtype)), Tensor(np.zeros(hidden_dim, dtype=dtype)))


def lstm_param_count(input_dim: int, hidden_dim: int) -> int:
    return 4 * (input_dim * hidden_dim + hidden_dim * hidden_dim + hidden_dim)


# ---------------------------------------------------------------------------
# numpy kernels


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` with row results independent of how many rows ``a`` has.

    numpy sends single-row products to gemv, whose summation order differs
    from gemm; duplicating the row keeps every product on the gemm path.
    """
    if a.shape[0] == 1:
        return (np.concatenate([a, a]) @ b)[:1]
    return a @ b


def _mm_cols(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` for a column block ``b``; single columns stay on gemm."""
    if b.shape[1] == 1:
        return (a @ np.concatenate([b, b], axis=1))[:, :1]
    return a @ b


def _cell(zx, h_prev, c_prev, U):
    """One step on a block of columns (states are h x a, gates 4h x a).

    ``zx`` already holds ``W x + b``. Returns ``h, c, gates, tc`` where
    ``gates`` holds the activated i, f, g, o blocks.
    """
    hd = c_prev.shape[0]
    z = _mm_cols(U, h_prev)
    z += zx
    sig = (slice(0, 2 * hd), slice(3 * hd, 4 * hd))
    for s in sig:
        z[s] *= 0.5
    np.tanh(z, out=z)
    for s in sig:
        z[s] *= 0.5
        z[s] += 0.5
    i, f, g, o = z[:hd], z[hd : 2 * hd], z[2 * hd : 3 * hd], z[3 * hd :]
    c = f * c_prev
    c += i * g
    tc = np.tanh(c)
    return o * tc, c, z, tc


def _cell_grad(dh, dc, gates, c_prev, tc):
    """Gradient of one step w.r.t. the pre-activations ``z`` and ``c_prev``."""
    hd = c_prev.shape[0]
    i, f, g, o = gates[:hd], gates[hd : 2 * hd], gates[2 * hd : 3 * hd], gates[3 * hd :]
    dcc = tc * tc
    np.subtract(1.0, dcc, out=dcc)
    dcc *= o
    dcc *= dh
    dcc += dc
    dz = np.empty_like(gates)
    di, df, dg, do = dz[:hd], dz[hd : 2 * hd], dz[2 * hd : 3 * hd], dz[3 * hd :]
    np.subtract(1.0, i, out=di)
    di *= i
    di *= g
    di *= dcc
    np.subtract(1.0, f, out=df)
    df *= f
    df *= c_prev
    df *= dcc
    np.multiply(g, g, out=dg)
    np.subtract(1.0, dg, out=dg)
    dg *= i
    dg *= dcc
    np.subtract(1.0, o, out=do)
    do *= o
    do *= tc
    do *= dh
    dcc *= f
    return dz, dcc


def _active_counts(starts: np.ndarray, steps: int) -> np.ndarray:
    return np.searchsorted(starts, np.arange(steps), side="right")


def scan_forward(xs: np.ndarray, W: np.ndarray, U: np.ndarray, b: np.ndarray, starts: np.ndarray):
    """Run rows of ``xs`` (T x R x d) through the LSTM, right-aligned.

    Row ``r`` starts from the zero state at step ``starts[r]``; ``starts``
    must be non-decreasing, so the active rows at any step are a prefix of
    the block and inactive rows are never computed. Returns the hidden
    states (T x R x h, zero before each row's start) and a cache for
    :func:`scan_backward`.

    Internally states are kept column-major (h x active) so each gate
    block is a contiguous slab.
    """
    T, R, d = xs.shape
    hd = U.shape[1]
    dtype = xs.dtype
    if R == 1:
        # Step-by-step projection keeps single-sequence results independent of T.
        zx = np.stack([_mm(xs[t], W.T) + b for t in range(T)])
    else:
        zx = (_mm(xs.reshape(T * R, d), W.T) + b).reshape(T, R, 4 * hd)
    zx = np.ascontiguousarray(zx.transpose(0, 2, 1))
    counts = _active_counts(starts, T)
    out = np.zeros((T, hd, R), dtype=dtype)
    h = np.zeros((hd, 0), dtype=dtype)
    c = np.zeros((hd, 0), dtype=dtype)
    steps = []
    for t in range(T):
        a = int(counts[t])
        if a == 0:
            steps.append(None)
            continue
        if a > h.shape[1]:
            pad = np.zeros((hd, a - h.shape[1]), dtype=dtype)
            h = np.concatenate([h, pad], axis=1)
            c = np.concatenate([c, pad], axis=1)
        h_prev, c_prev = h, c
        h, c, gates, tc = _cell(zx[t, :, :a], h_prev, c_prev, U)
        out[t, :, :a] = h
        steps.append((a, h_prev, c_prev, gates, tc))
    return out.transpose(0, 2, 1), (steps, xs, W, U)


def scan_backward(dout: np.ndarray, cache, last_only: bool = False):
    """Backpropagate through :func:`scan_forward`.

    ``dout`` is the gradient of the full output (T x R x h), or of the
    final step only (R x h) when ``last_only`` is set.
    """
    steps, xs, W, U = cache
    T, R, d = xs.shape
    hd = U.shape[1]
    dtype = xs.dtype
    dzx = np.zeros((T, 4 * hd, R), dtype=dtype)
    if not last_only:
        dout = np.ascontiguousarray(dout.transpose(0, 2, 1))
    dh_carry = np.zeros((hd, R), dtype=dtype)
    dc_carry = np.zeros((hd, R), dtype=dtype)
    if last_only:
        dh_carry += dout.T
    dz_blocks, h_blocks = [], []
    for t in range(T - 1, -1, -1):
        st = steps[t]
        if st is None:
            continue
        a, h_prev, c_prev, gates, tc = st
        dh = dh_carry[:, :a] if last_only else dh_carry[:, :a] + dout[t, :, :a]
        dz, dc_prev = _cell_grad(dh, dc_carry[:, :a], gates, c_prev, tc)
        dzx[t, :, :a] = dz
        dz_blocks.append(dz)
        h_blocks.append(h_prev)
        dh_carry = _mm_cols(U.T, dz)
        dc_carry = dc_prev
    if dz_blocks:
        dU = np.concatenate(dz_blocks, axis=1) @ np.concatenate(h_blocks, axis=1).T
    else:
        dU = np.zeros_like(U)
    flat = dzx.transpose(0, 2, 1).reshape(T * R, 4 * hd)
    dW = flat.T @ xs.reshape(T * R, d)
    db = flat.sum(axis=0)
    dxs = (flat @ W).reshape(T, R, d)
    return dxs, dW, dU, db


# ---------------------------------------------------------------------------
# recorded operations


def lstm_scan(xs: Tensor, params: LstmParams, starts=None, last_only: bool = False) -> Tensor:
    """Recorded right-aligned scan; see :func:`scan_forward`.

    Returns T x R x h, or R x h (the final step) with ``last_only``.
    """
    T, R, _ = xs.shape
    if xs.shape[2] != params.input_dim:
        raise ValueError(f"input dim {xs.shape[2]} does not match LSTM input dim {params.input_dim}")
    starts = np.zeros(R, dtype=np.int64) if starts is None else np.asarray(starts, dtype=np.int64)
    if starts.shape != (R,) or np.any(np.diff(starts) < 0):
        raise ValueError("starts must hold one non-decreasing entry per row")
    out, cache = scan_forward(xs.data, params.W.data, params.U.data, params.b.data, starts)
    return record_scan(out, cache, xs, params, last_only)


def record_scan(out, cache, xs: Tensor, params: LstmParams, last_only: bool) -> Tensor:
    """Wrap a finished :func:`scan_forward` result as a tape node."""
    data = out[-1] if last_only else out

    def vjp(g):
        return scan_backward(g, cache, last_only=last_only)

    return custom_op(data, (xs, params.W, params.U, params.b), vjp)


def run_sequence(seq: Tensor, params: LstmParams) -> Tensor:
    """Hidden state after each prefix of ``seq`` (n x d), from the zero state: n x h."""
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise ValueError("run_sequence needs a non-empty n x d sequence")
    n, d = seq.shape
    out = lstm_scan(seq.reshape(n, 1, d), params)
    return out.reshape(n, params.hidden_dim)


def cell_step(x: Tensor, state: LstmState, params: LstmParams) -> LstmState:
    """Advance one step from an arbitrary state."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape != (params.input_dim,):
        raise ValueError(f"input has shape {x.shape}, expected ({params.input_dim},)")
    hd = params.hidden_dim
    if state.h.shape != (hd,) or state.c.shape != (hd,):
        raise ValueError("state size does not match hidden dim")
    W, U, b = params.W.data, params.U.data, params.b.data
    x2 = x.data.reshape(1, -1)
    zx = (_mm(x2, W.T) + b).T
    h_prev = state.h.data.reshape(hd, 1)
    c_prev = state.c.data.reshape(hd, 1)
    h, c, gates, tc = _cell(zx, h_prev, c_prev, U)

    def joint_grads(dh, dc):
        dz, dc_prev = _cell_grad(dh.reshape(hd, 1), dc.reshape(hd, 1), gates, c_prev, tc)
        return (
            (dz.T @ W).reshape(-1),
            _mm_cols(U.T, dz).reshape(-1),
            dc_prev.reshape(-1),
            dz @ x2,
            dz @ h_prev.T,
            dz.reshape(-1),
        )

    zeros = np.zeros(hd, dtype=W.dtype)
    inputs = (x, state.h, state.c, params.W, params.U, params.b)
    # h' depends on c', so its gradient flows through both outputs.
    h_out = custom_op(h.reshape(-1), inputs, lambda g: joint_grads(g, zeros))
    c_out = custom_op(c.reshape(-1), inputs, lambda g: joint_grads(zeros, g))
    return LstmState(h_out, c_out)


# ---------------------------------------------------------------------------
# serialization


def save_params(params: LstmParams, fp) -> None:
    """Write ``params`` as a header followed by little-endian W, U, b (row-major)."""
    dtype = np.dtype(params.dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    fp.write(
        _HEADER.pack(
            _MAGIC, _VERSION, dtype.itemsize, GATE_ORDER.encode(), params.input_dim, params.hidden_dim
        )
    )
    le = dtype.newbyteorder("<")
    for p in params.parameters():
        fp.write(np.ascontiguousarray(p.data, dtype=le).tobytes())


def load_params(fp) -> LstmParams:
    raw = fp.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise ValueError("truncated LSTM parameter header")
    magic, version, width, order, d, h = _HEADER.unpack(raw)
    if magic != _MAGIC:
        raise ValueError("not an LSTM parameter blob")
    if version != _VERSION or order.decode() != GATE_ORDER:
        raise ValueError(f"unsupported parameter layout v{version} {order!r}")
    dtype = {4: np.dtype("<f4"), 8: np.dtype("<f8")}[width]
    arrays = []
    for shape in ((4 * h, d), (4 * h, h), (4 * h,)):
        n = int(np.prod(shape))
        buf = fp.read(n * width)
        if len(buf) != n * width:
            raise ValueError("truncated LSTM parameter data")
        arrays.append(np.frombuffer(buf, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("=")))
    return LstmParams(*(Tensor(a, requires_grad=True) for a in arrays))


def params_to_bytes(params: LstmParams) -> bytes:
    buf = io.BytesIO()
    save_params(params, buf)
    return buf.getvalue()


def params_from_bytes(data: bytes) -> LstmParams:
    return load_params(io.BytesIO(data))
