"""Dense rank-<=3 float64 tensors with tape-based reverse-mode autodiff.

Design notes, in brief.  Every differentiable op builds its output eagerly
with numpy, then (when gradients are enabled and some input wants them)
pushes a closure onto the active tape.  ``backward`` replays the tape in
reverse execution order.  Output tensors of recorded ops have their grad
buffers zeroed at the start of each backward pass; leaf tensors do not, so
repeated backward calls accumulate into leaves.

The op set is exactly what a small post-norm Transformer encoder plus the
distillation losses need.  No broadcasting beyond bias/row addition, no
views: every op returns a fresh tensor.
"""

import contextlib

import numpy as np

from . import kernels
from .errors import (
    DegenerateVectorError,
    DimensionError,
    NumericError,
    ParameterError,
    ShapeError,
)

_GRAD_ENABLED = True
_FINITE_CHECKS = True


class Tape:
    """Ordered record of executed differentiable ops."""

    def __init__(self):
        self._entries = []  # (output Tensor, backward closure)

    def __len__(self):
        return len(self._entries)

    def record(self, out, backward_fn):
        self._entries.append((out, backward_fn))

    def clear(self):
        self._entries.clear()


_TAPE = Tape()


def active_tape() -> Tape:
    return _TAPE


def reset_tape() -> None:
    """Drop all recorded ops. Call between training steps."""
    _TAPE.clear()


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-op output validation (on by default)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ShapeError(
                "tensors are rank <= 3, got rank %d" % arr.ndim
            )
        if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
            raise NumericError("tensor initialized with non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(
                "item() needs a single-element tensor, got shape %s"
                % (self.data.shape,)
            )
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return "Tensor(shape=%s, requires_grad=%s)" % (
            self.data.shape,
            self.requires_grad,
        )


def _accum(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _out(data, inputs, backward_fn, op_name: str) -> Tensor:
    """Wrap an op result; validate and record on the tape if needed."""
    if data.ndim > 3:
        raise ShapeError("%s produced rank-%d output" % (op_name, data.ndim))
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericError("%s produced non-finite values" % op_name)
    track = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = track
    if track:
        _TAPE.record(out, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Populate grads of everything reachable from ``loss`` on the tape.

    Leaf grads accumulate across calls; op outputs are re-zeroed here so a
    second backward of the same loss doubles leaf grads, not intermediates.
    """
    if loss.data.size != 1:
        raise ShapeError(
            "backward needs a scalar loss, got shape %s" % (loss.data.shape,)
        )
    entries = _TAPE._entries
    for out, _ in entries:
        if out.grad is not None:
            out.grad.fill(0.0)
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += 1.0
    for out, fn in reversed(entries):
        if out.grad is not None:
            fn(out.grad)


# ---------------------------------------------------------------------------
# arithmetic


def matmul(a: Tensor, b: Tensor) -> Tensor:
    an, bn = a.data.ndim, b.data.ndim
    if an == 2 and bn == 2:
        if a.data.shape[1] != b.data.shape[0]:
            raise DimensionError(
                "matmul mismatch: %s x %s" % (a.data.shape, b.data.shape)
            )
        data = a.data @ b.data

        def bwd(g):
            if a.requires_grad:
                _accum(a, g @ b.data.T)
            if b.requires_grad:
                _accum(b, a.data.T @ g)

        return _out(data, (a, b), bwd, "matmul")

    if an == 3 and bn == 3:
        if a.data.shape[0] != b.data.shape[0] or a.data.shape[2] != b.data.shape[1]:
            raise DimensionError(
                "matmul mismatch: %s x %s" % (a.data.shape, b.data.shape)
            )
        data = np.matmul(a.data, b.data)

        def bwd(g):
            if a.requires_grad:
                _accum(a, np.matmul(g, b.data.transpose(0, 2, 1)))
            if b.requires_grad:
                _accum(b, np.matmul(a.data.transpose(0, 2, 1), g))

        return _out(data, (a, b), bwd, "matmul")

    if an == 3 and bn == 2:
        if a.data.shape[2] != b.data.shape[0]:
            raise DimensionError(
                "matmul mismatch: %s x %s" % (a.data.shape, b.data.shape)
            )
        data = np.matmul(a.data, b.data)

        def bwd(g):
            if a.requires_grad:
                _accum(a, np.matmul(g, b.data.T))
            if b.requires_grad:
                d = a.data.shape[2]
                k = b.data.shape[1]
                _accum(b, a.data.reshape(-1, d).T @ g.reshape(-1, k))

        return _out(data, (a, b), bwd, "matmul")

    raise DimensionError(
        "matmul supports 2x2, 3x3, 3x2 ranks, got %dD x %dD" % (an, bn)
    )


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(
            "%s shape mismatch: %s vs %s" % (op, a.data.shape, b.data.shape)
        )


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    data = a.data + b.data

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _out(data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    data = a.data - b.data

    def bwd(g):
        _accum(a, g)
        if b.requires_grad:
            _accum(b, -g)

    return _out(data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    return _out(data, (a, b), bwd, "mul")


def neg(x: Tensor) -> Tensor:
    data = -x.data

    def bwd(g):
        _accum(x, -g)

    return _out(data, (x,), bwd, "neg")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    data = x.data * c

    def bwd(g):
        _accum(x, g * c)

    return _out(data, (x,), bwd, "scale")


def add_const(x: Tensor, c) -> Tensor:
    """Add a constant array (no gradient to the constant)."""
    data = x.data + c

    def bwd(g):
        _accum(x, g)

    return _out(data, (x,), bwd, "add_const")


def mul_const(x: Tensor, c) -> Tensor:
    """Multiply by a constant array (no gradient to the constant)."""
    c = np.asarray(c, dtype=np.float64)
    data = x.data * c

    def bwd(g):
        _accum(x, g * c)

    return _out(data, (x,), bwd, "mul_const")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[..., d] + b[d], broadcasting over leading axes."""
    if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise DimensionError(
            "add_bias mismatch: %s + %s" % (x.data.shape, b.data.shape)
        )
    data = x.data + b.data

    def bwd(g):
        _accum(x, g)
        if b.requires_grad:
            _accum(b, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _out(data, (x, b), bwd, "add_bias")


def add_rows(x: Tensor, rows: Tensor) -> Tensor:
    """x[B,L,d] + rows[L,d], broadcast over the batch axis."""
    if x.data.ndim != 3 or rows.data.ndim != 2 or x.data.shape[1:] != rows.data.shape:
        raise DimensionError(
            "add_rows mismatch: %s + %s" % (x.data.shape, rows.data.shape)
        )
    data = x.data + rows.data[None, :, :]

    def bwd(g):
        _accum(x, g)
        if rows.requires_grad:
            _accum(rows, g.sum(axis=0))

    return _out(data, (x, rows), bwd, "add_rows")


# ---------------------------------------------------------------------------
# structure


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError("transpose needs a 2D tensor, got %s" % (x.data.shape,))
    data = x.data.T.copy()

    def bwd(g):
        _accum(x, g.T)

    return _out(data, (x,), bwd, "transpose")


def swap_last(x: Tensor) -> Tensor:
    """Swap the last two axes of a 3D tensor."""
    if x.data.ndim != 3:
        raise DimensionError("swap_last needs a 3D tensor, got %s" % (x.data.shape,))
    data = np.ascontiguousarray(x.data.transpose(0, 2, 1))

    def bwd(g):
        _accum(x, g.transpose(0, 2, 1))

    return _out(data, (x,), bwd, "swap_last")


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """Copy x[..., start:stop] along the last axis."""
    d = x.data.shape[-1]
    if not (0 <= start < stop <= d):
        raise ParameterError(
            "slice_last [%d:%d] out of range for extent %d" % (start, stop, d)
        )
    data = np.ascontiguousarray(x.data[..., start:stop])

    def bwd(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[..., start:stop] += g

    return _out(data, (x,), bwd, "slice_last")


def slice_first_rows(x: Tensor, stop: int) -> Tensor:
    """Copy the first ``stop`` rows of a 2D tensor."""
    if x.data.ndim != 2:
        raise DimensionError(
            "slice_first_rows needs a 2D tensor, got %s" % (x.data.shape,)
        )
    if not (1 <= stop <= x.data.shape[0]):
        raise ParameterError(
            "slice_first_rows stop %d out of range [1, %d]"
            % (stop, x.data.shape[0])
        )
    data = x.data[:stop].copy()

    def bwd(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[:stop] += g

    return _out(data, (x,), bwd, "slice_first_rows")


def concat_last(parts) -> Tensor:
    """Concatenate along the last axis; all other extents must match."""
    parts = list(parts)
    if not parts:
        raise ParameterError("concat_last needs at least one tensor")
    lead = parts[0].data.shape[:-1]
    for p in parts[1:]:
        if p.data.shape[:-1] != lead:
            raise DimensionError(
                "concat_last leading-shape mismatch: %s vs %s"
                % (parts[0].data.shape, p.data.shape)
            )
    data = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.data.shape[-1] for p in parts]

    def bwd(g):
        off = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                _accum(p, g[..., off : off + w])
            off += w

    return _out(data, tuple(parts), bwd, "concat_last")


def stack_scalars(parts) -> Tensor:
    """Stack scalar tensors into a vector."""
    parts = list(parts)
    if not parts:
        raise ParameterError("stack_scalars needs at least one tensor")
    for p in parts:
        if p.data.size != 1:
            raise DimensionError(
                "stack_scalars needs scalars, got shape %s" % (p.data.shape,)
            )
    data = np.array([p.data.reshape(()) for p in parts], dtype=np.float64)

    def bwd(g):
        for i, p in enumerate(parts):
            if p.requires_grad:
                _accum(p, np.asarray(g[i]).reshape(p.data.shape))

    return _out(data, tuple(parts), bwd, "stack_scalars")


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of table[V,d] by an integer id array (1D or 2D)."""
    ids = np.asarray(ids)
    if table.data.ndim != 2:
        raise DimensionError("embedding table must be 2D, got %s" % (table.data.shape,))
    if ids.ndim not in (1, 2):
        raise DimensionError("embedding ids must be 1D or 2D")
    data = table.data[ids]

    def bwd(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(
                table.grad,
                ids.ravel(),
                g.reshape(-1, table.data.shape[1]),
            )

    return _out(data, (table,), bwd, "embedding")


def select_pos(x: Tensor, pos: int) -> Tensor:
    """x[B,L,d] -> x[:, pos, :] as [B,d]."""
    if x.data.ndim != 3:
        raise DimensionError("select_pos needs a 3D tensor, got %s" % (x.data.shape,))
    if not (0 <= pos < x.data.shape[1]):
        raise ParameterError("select_pos position %d out of range" % pos)
    data = x.data[:, pos, :].copy()

    def bwd(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[:, pos, :] += g

    return _out(data, (x,), bwd, "select_pos")


def row_select(x: Tensor, i: int) -> Tensor:
    """x[N,m] -> row i as [m]."""
    if x.data.ndim != 2:
        raise DimensionError("row_select needs a 2D tensor, got %s" % (x.data.shape,))
    if not (0 <= i < x.data.shape[0]):
        raise ParameterError("row_select index %d out of range" % i)
    data = x.data[i].copy()

    def bwd(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[i] += g

    return _out(data, (x,), bwd, "row_select")


def take_index(x: Tensor, i: int) -> Tensor:
    """x[n] -> scalar x[i]."""
    if x.data.ndim != 1:
        raise DimensionError("take_index needs a 1D tensor, got %s" % (x.data.shape,))
    if not (0 <= i < x.data.shape[0]):
        raise ParameterError("take_index index %d out of range" % i)
    data = np.asarray(x.data[i])

    def bwd(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[i] += float(g)

    return _out(data, (x,), bwd, "take_index")


def take_per_row(x: Tensor, idx) -> Tensor:
    """x[N,k], idx[N] -> vector of x[i, idx[i]]."""
    idx = np.asarray(idx)
    if x.data.ndim != 2 or idx.ndim != 1 or idx.shape[0] != x.data.shape[0]:
        raise DimensionError(
            "take_per_row mismatch: %s with %d indices"
            % (x.data.shape, idx.size)
        )
    rows = np.arange(x.data.shape[0])
    data = x.data[rows, idx].copy()

    def bwd(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, (rows, idx), g)

    return _out(data, (x,), bwd, "take_per_row")


def select_positions(x: Tensor, rows, cols) -> Tensor:
    """x[B,L,d] gathered at (rows[i], cols[i]) -> [M,d]."""
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    if x.data.ndim != 3:
        raise DimensionError(
            "select_positions needs a 3D tensor, got %s" % (x.data.shape,)
        )
    if rows.shape != cols.shape or rows.ndim != 1:
        raise DimensionError("select_positions rows/cols must be equal-length 1D")
    data = x.data[rows, cols, :].copy()

    def bwd(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, (rows, cols), g)

    return _out(data, (x,), bwd, "select_positions")


# ---------------------------------------------------------------------------
# nonlinear kernels


def _rows2d(a):
    """View a 2D/3D array as (rows, cols) plus a restorer flag."""
    if a.ndim == 2:
        return a, None
    return a.reshape(-1, a.shape[-1]), a.shape


def softmax_rows(x: Tensor, temperature: float = 1.0, mask=None) -> Tensor:
    """Row softmax over the last axis; optional additive constant mask.

    The mask is applied after temperature scaling; padded positions carry
    -1e30 so their weights underflow to exact zero.
    """
    if temperature <= 0:
        raise ParameterError("softmax temperature must be > 0, got %r" % temperature)
    z = x.data if temperature == 1.0 else x.data / temperature
    if mask is not None:
        z = z + mask
    rows, shp = _rows2d(np.ascontiguousarray(z))
    y2 = kernels.softmax_rows_fwd(rows)
    data = y2 if shp is None else y2.reshape(shp)

    def bwd(g):
        g2 = g.reshape(y2.shape)
        gx = kernels.softmax_rows_bwd(y2, np.ascontiguousarray(g2))
        gx = gx.reshape(x.data.shape)
        _accum(x, gx if temperature == 1.0 else gx / temperature)

    return _out(data, (x,), bwd, "softmax_rows")


def log_softmax_rows(x: Tensor, temperature: float = 1.0) -> Tensor:
    """Row log-softmax over the last axis; accepts 1D, 2D or 3D input."""
    if temperature <= 0:
        raise ParameterError(
            "log_softmax temperature must be > 0, got %r" % temperature
        )
    z = x.data if temperature == 1.0 else x.data / temperature
    vec = z.ndim == 1
    if vec:
        z = z.reshape(1, -1)
    rows, shp = _rows2d(np.ascontiguousarray(z))
    y2 = kernels.log_softmax_rows_fwd(rows)
    if vec:
        data = y2.reshape(-1)
    else:
        data = y2 if shp is None else y2.reshape(shp)

    def bwd(g):
        g2 = g.reshape(y2.shape)
        gx = kernels.log_softmax_rows_bwd(y2, np.ascontiguousarray(g2))
        gx = gx.reshape(x.data.shape)
        _accum(x, gx if temperature == 1.0 else gx / temperature)

    return _out(data, (x,), bwd, "log_softmax_rows")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the last axis with learnable gain/bias."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise DimensionError(
            "layer_norm gain/bias must be (%d,), got %s and %s"
            % (d, gain.data.shape, bias.data.shape)
        )
    rows, shp = _rows2d(np.ascontiguousarray(x.data))
    y2, xhat, rstd = kernels.layer_norm_fwd(rows, gain.data, bias.data, eps)
    data = y2 if shp is None else y2.reshape(shp)

    def bwd(g):
        g2 = np.ascontiguousarray(g.reshape(y2.shape))
        gx, ggain, gbias = kernels.layer_norm_bwd(xhat, rstd, gain.data, g2)
        _accum(x, gx.reshape(x.data.shape))
        if gain.requires_grad:
            _accum(gain, ggain)
        if bias.requires_grad:
            _accum(bias, gbias)

    return _out(data, (x, gain, bias), bwd, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    data = kernels.gelu_fwd(x.data)

    def bwd(g):
        _accum(x, kernels.gelu_bwd(x.data, g))

    return _out(data, (x,), bwd, "gelu")


def dropout(x: Tensor, rate: float, rng) -> Tensor:
    """Inverted dropout. rate 0 is the identity; use only in training mode."""
    if not (0.0 <= rate < 1.0):
        raise ParameterError("dropout rate must be in [0,1), got %r" % rate)
    if rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return mul_const(x, keep)


# ---------------------------------------------------------------------------
# reductions and similarity


def mean_pool_rows(H: Tensor, valid_len: int) -> Tensor:
    """Mean of the first valid_len rows of H[L,d] -> [d]."""
    if H.data.ndim != 2:
        raise DimensionError("mean_pool_rows needs a 2D tensor, got %s" % (H.data.shape,))
    L = H.data.shape[0]
    if not (1 <= valid_len <= L):
        raise ParameterError(
            "valid_len %d out of range [1, %d]" % (valid_len, L)
        )
    data = H.data[:valid_len].mean(axis=0)

    def bwd(g):
        if H.requires_grad:
            if H.grad is None:
                H.grad = np.zeros_like(H.data)
            H.grad[:valid_len] += g / valid_len

    return _out(data, (H,), bwd, "mean_pool_rows")


def mean_pool_batch(H: Tensor, valid_lens) -> Tensor:
    """Per-example mean over valid rows: H[B,L,d], valid_lens[B] -> [B,d]."""
    if H.data.ndim != 3:
        raise DimensionError("mean_pool_batch needs a 3D tensor, got %s" % (H.data.shape,))
    B, L, d = H.data.shape
    vl = np.asarray(valid_lens, dtype=np.int64)
    if vl.shape != (B,):
        raise DimensionError("valid_lens must have one entry per example")
    if np.any(vl < 1) or np.any(vl > L):
        raise ParameterError("valid_lens entries must lie in [1, %d]" % L)
    data = np.empty((B, d))
    for b in range(B):
        data[b] = H.data[b, : vl[b]].mean(axis=0)

    def bwd(g):
        if H.requires_grad:
            if H.grad is None:
                H.grad = np.zeros_like(H.data)
            for b in range(B):
                H.grad[b, : vl[b]] += g[b] / vl[b]

    return _out(data, (H,), bwd, "mean_pool_batch")


def cosine_sim(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of two 1D tensors; rejects zero-norm inputs."""
    if u.data.ndim != 1 or v.data.ndim != 1 or u.data.shape != v.data.shape:
        raise DimensionError(
            "cosine_sim needs equal-length 1D tensors, got %s and %s"
            % (u.data.shape, v.data.shape)
        )
    nu = float(np.linalg.norm(u.data))
    nv = float(np.linalg.norm(v.data))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("cosine_sim of a zero-norm vector")
    c = float(u.data @ v.data) / (nu * nv)
    data = np.asarray(c)

    def bwd(g):
        g = float(g)
        if u.requires_grad:
            _accum(u, g * (v.data / (nu * nv) - c * u.data / (nu * nu)))
        if v.requires_grad:
            _accum(v, g * (u.data / (nu * nv) - c * v.data / (nv * nv)))

    return _out(data, (u, v), bwd, "cosine_sim")


def sum_all(x: Tensor) -> Tensor:
    data = np.asarray(np.sum(x.data))

    def bwd(g):
        _accum(x, np.full_like(x.data, float(g)))

    return _out(data, (x,), bwd, "sum_all")


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.asarray(np.sum(x.data) / n)

    def bwd(g):
        _accum(x, np.full_like(x.data, float(g) / n))

    return _out(data, (x,), bwd, "mean_all")
