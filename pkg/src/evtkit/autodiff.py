"""Dense 2-D arrays with tape-based reverse-mode differentiation.

Everything the attention backbone needs and nothing more: matrices are
immutable float64 numpy arrays, every primitive records its inputs and a
backward rule on the active :class:`Tape`, and :func:`backward` replays the
tape in reverse to accumulate gradients.  A :class:`FlopCounter` can be
armed to count the arithmetic actually executed (2 per multiply-add, fixed
per-element costs for the elementwise primitives), which is how analytic
cost models are checked against reality.

The tape is single-threaded by design: one training step owns one tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# Reject NaN/Inf at construction time.  Flip off only in hot loops that were
# already validated (the latency harness leaves it on; it is cheap).
CHECK_FINITE = True

# Per-element arithmetic cost of the elementwise primitives.  The analytic
# model in evtkit.perf uses exactly these constants, so analytic and counted
# totals differ only if the model structure is wrong.
GELU_FLOPS_PER_ELEM = 9
SOFTMAX_FLOPS_PER_ELEM = 4
LOG_SOFTMAX_FLOPS_PER_ELEM = 5
LAYER_NORM_FLOPS_PER_ELEM = 8
DROPOUT_FLOPS_PER_ELEM = 2

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Matrix:
    """A rows x cols float64 array, immutable after construction."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ValueError(f"Matrix must be 2-D, got shape {arr.shape}")
        if CHECK_FINITE and not np.all(np.isfinite(arr)):
            raise ValueError("Matrix construction rejects NaN/Inf values")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols}, requires_grad={self.requires_grad})"


def zeros(rows: int, cols: int, requires_grad: bool = False) -> Matrix:
    return Matrix(np.zeros((rows, cols)), requires_grad=requires_grad)


@dataclass
class _Node:
    """One recorded primitive: output, inputs, and the local backward rule.

    ``backward`` maps the output gradient to one gradient array per input
    (None for inputs the op does not differentiate through).
    """

    out: Matrix
    inputs: tuple[Matrix, ...]
    backward: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of primitives, replayable in reverse.

    Recording order is execution order, which is a topological order of the
    dataflow graph, so iterating the node list backwards performs reverse
    accumulation correctly.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a Tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def __len__(self) -> int:
        return len(self.nodes)


_ACTIVE_TAPE: Tape | None = None


def _record(out: Matrix, inputs: tuple[Matrix, ...], backward_rule) -> None:
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.nodes.append(_Node(out, inputs, backward_rule))


class FlopCounter:
    """Counts floating-point operations executed by the primitives.

    Use as a context manager; per-scope subtotals are kept so that model
    components (token preprocessing, cross attention, ...) can be compared
    against an analytic cost model individually.
    """

    def __init__(self):
        self.total = 0
        self.by_scope: dict[str, int] = {}
        self._scope: str | None = None

    def add(self, flops: int) -> None:
        self.total += flops
        if self._scope is not None:
            self.by_scope[self._scope] = self.by_scope.get(self._scope, 0) + flops

    def scope(self, name: str) -> "_ScopeCtx":
        return _ScopeCtx(self, name)

    def __enter__(self) -> "FlopCounter":
        global _ACTIVE_COUNTER
        _ACTIVE_COUNTER = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_COUNTER
        _ACTIVE_COUNTER = None


class _ScopeCtx:
    def __init__(self, counter: FlopCounter, name: str):
        self.counter = counter
        self.name = name
        self._prev: str | None = None

    def __enter__(self):
        self._prev = self.counter._scope
        self.counter._scope = self.name
        return self

    def __exit__(self, *exc):
        self.counter._scope = self._prev


_ACTIVE_COUNTER: FlopCounter | None = None


def _count(flops: int) -> None:
    if _ACTIVE_COUNTER is not None:
        _ACTIVE_COUNTER.add(flops)


def flop_scope(name: str):
    """Label FLOPs counted in this block; no-op when no counter is armed."""
    if _ACTIVE_COUNTER is None:
        return _NULL_SCOPE
    return _ACTIVE_COUNTER.scope(name)


class _NullScope:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        pass


_NULL_SCOPE = _NullScope()


# ---------------------------------------------------------------------------
# backward rules (module-level so tests can monkeypatch them as a negative
# control for the gradient checker)
# ---------------------------------------------------------------------------

def _matmul_grad_a(g: np.ndarray, b: np.ndarray) -> np.ndarray:
    return g @ b.T


def _matmul_grad_b(g: np.ndarray, a: np.ndarray) -> np.ndarray:
    return a.T @ g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard matrix product; gradients dA = g @ B^T, dB = A^T @ g."""
    if a.cols != b.rows:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    _count(2 * a.rows * a.cols * b.cols)
    out = Matrix(a.data @ b.data)
    ad, bd = a.data, b.data
    _record(out, (a, b), lambda g: (_matmul_grad_a(g, bd), _matmul_grad_b(g, ad)))
    return out


def add(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    _count(a.rows * a.cols)
    out = Matrix(a.data + b.data)
    _record(out, (a, b), lambda g: (g, g))
    return out


def add_row(x: Matrix, row: Matrix) -> Matrix:
    """Add a 1 x cols row vector to every row of x (bias broadcast)."""
    if row.rows != 1 or row.cols != x.cols:
        raise ValueError(f"add_row needs 1x{x.cols}, got {row.shape}")
    _count(x.rows * x.cols)
    out = Matrix(x.data + row.data)
    _record(out, (x, row), lambda g: (g, g.sum(axis=0, keepdims=True)))
    return out


def scale(x: Matrix, c: float) -> Matrix:
    _count(x.rows * x.cols)
    out = Matrix(x.data * c)
    _record(out, (x,), lambda g: (g * c,))
    return out


def transpose(x: Matrix) -> Matrix:
    out = Matrix(x.data.T)
    _record(out, (x,), lambda g: (g.T,))
    return out


def concat_cols(a: Matrix, b: Matrix) -> Matrix:
    if a.rows != b.rows:
        raise ValueError(f"concat_cols row mismatch: {a.shape} vs {b.shape}")
    out = Matrix(np.concatenate([a.data, b.data], axis=1))
    na = a.cols
    _record(out, (a, b), lambda g: (g[:, :na], g[:, na:]))
    return out


def slice_cols(x: Matrix, start: int, stop: int) -> Matrix:
    if not (0 <= start < stop <= x.cols):
        raise ValueError(f"slice_cols [{start}:{stop}] out of range for {x.shape}")
    out = Matrix(np.ascontiguousarray(x.data[:, start:stop]))

    def bwd(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    _record(out, (x,), bwd)
    return out


def take_rows(x: Matrix, indices: np.ndarray) -> Matrix:
    """Gather rows by index; gradient scatter-adds back into the table."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("take_rows needs a 1-D index array")
    if idx.size and (idx.min() < 0 or idx.max() >= x.rows):
        raise ValueError(f"take_rows index out of range for {x.rows} rows")
    out = Matrix(x.data[idx])

    def bwd(g: np.ndarray):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    _record(out, (x,), bwd)
    return out


def gelu(x: Matrix) -> Matrix:
    """Elementwise x * Phi(x), tanh approximation."""
    _count(GELU_FLOPS_PER_ELEM * x.rows * x.cols)
    xd = x.data
    inner = _GELU_C * (xd + _GELU_A * xd**3)
    t = np.tanh(inner)
    out = Matrix(0.5 * xd * (1.0 + t))

    def bwd(g: np.ndarray):
        sech2 = 1.0 - t * t
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * sech2 * dinner),)

    _record(out, (x,), bwd)
    return out


def softmax_rows(x: Matrix) -> Matrix:
    """Per-row softmax with max subtraction for stability."""
    _count(SOFTMAX_FLOPS_PER_ELEM * x.rows * x.cols)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = Matrix(s)

    def bwd(g: np.ndarray):
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    _record(out, (x,), bwd)
    return out


def log_softmax_rows(x: Matrix) -> Matrix:
    _count(LOG_SOFTMAX_FLOPS_PER_ELEM * x.rows * x.cols)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = Matrix(shifted - lse)
    sm = np.exp(shifted - lse)

    def bwd(g: np.ndarray):
        return (g - sm * g.sum(axis=1, keepdims=True),)

    _record(out, (x,), bwd)
    return out


def layer_norm(x: Matrix, gain: Matrix, bias: Matrix, eps: float = 1e-5) -> Matrix:
    """Per-row zero-mean/unit-variance normalization, then affine gain/bias."""
    if gain.shape != (1, x.cols) or bias.shape != (1, x.cols):
        raise ValueError(f"layer_norm gain/bias must be 1x{x.cols}")
    _count(LAYER_NORM_FLOPS_PER_ELEM * x.rows * x.cols)
    n = x.cols
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Matrix(xhat * gain.data + bias.data)

    def bwd(g: np.ndarray):
        dxhat = g * gain.data
        # d/dx of (x - mu) / sqrt(var + eps) with var over the same row
        dx = inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        dgain = (g * xhat).sum(axis=0, keepdims=True)
        dbias = g.sum(axis=0, keepdims=True)
        return (dx, dgain, dbias)

    _record(out, (x, gain, bias), bwd)
    return out


def mean_rows(x: Matrix) -> Matrix:
    """Mean over rows -> 1 x cols (the pooling step of the classifier)."""
    _count(x.rows * x.cols)
    out = Matrix(x.data.mean(axis=0, keepdims=True))
    r = x.rows
    _record(out, (x,), lambda g: (np.repeat(g / r, r, axis=0),))
    return out


def sum_all(x: Matrix) -> Matrix:
    _count(x.rows * x.cols)
    out = Matrix([[x.data.sum()]])
    _record(out, (x,), lambda g: (np.full_like(x.data, g[0, 0]),))
    return out


def pick(x: Matrix, row: int, col: int) -> Matrix:
    """Select a single element as a 1x1 matrix."""
    if not (0 <= row < x.rows and 0 <= col < x.cols):
        raise ValueError(f"pick ({row},{col}) out of range for {x.shape}")
    out = Matrix([[x.data[row, col]]])

    def bwd(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[row, col] = g[0, 0]
        return (full,)

    _record(out, (x,), bwd)
    return out


def dropout(x: Matrix, p: float, rng: np.random.Generator) -> Matrix:
    """Inverted dropout: scales by 1/keep at train time, so inference skips it."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    _count(DROPOUT_FLOPS_PER_ELEM * x.rows * x.cols)
    keep = 1.0 - p
    mask = (rng.random(x.shape) < keep) / keep
    out = Matrix(x.data * mask)
    _record(out, (x,), lambda g: (g * mask,))
    return out


# ---------------------------------------------------------------------------
# reverse accumulation
# ---------------------------------------------------------------------------

def backward(tape: Tape, root: Matrix) -> dict[Matrix, np.ndarray]:
    """Reverse-accumulate d(root)/d(leaf) for every requires_grad leaf.

    ``root`` must be a 1x1 matrix produced on the tape.  Returns a dict from
    leaf Matrix to its gradient array and mirrors it onto ``leaf.grad``.
    Leaves that never influenced the root are absent; callers treat absence
    as a zero gradient (see :func:`grad_for`).
    """
    if root.shape != (1, 1):
        raise ValueError(f"backward root must be scalar (1x1), got {root.shape}")
    adjoint: dict[int, np.ndarray] = {id(root): np.ones((1, 1))}
    result: dict[Matrix, np.ndarray] = {}
    for node in reversed(tape.nodes):
        g = adjoint.pop(id(node.out), None)
        if g is None:
            continue
        input_grads = node.backward(g)
        for inp, ig in zip(node.inputs, input_grads):
            if ig is None:
                continue
            key = id(inp)
            if key in adjoint:
                adjoint[key] = adjoint[key] + ig
            else:
                adjoint[key] = ig
            if inp.requires_grad:
                result[inp] = adjoint[key]
    for leaf, g in result.items():
        leaf.grad = g
    return result


def grad_for(grads: dict[Matrix, np.ndarray], leaf: Matrix) -> np.ndarray:
    """Gradient of a leaf, zero-filled when the leaf never touched the tape."""
    g = grads.get(leaf)
    return g if g is not None else np.zeros_like(leaf.data)


def grad_check(
    f: Callable[[], Matrix],
    params: Sequence[Matrix],
    h: float = 1e-5,
    max_coords_per_param: int = 64,
    rng: np.random.Generator | None = None,
    zero_tol: float = 1e-8,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must be a deterministic closure over ``params`` returning a 1x1
    matrix.  Large parameters are checked on a random coordinate subsample.
    Coordinates where both gradients fall below ``zero_tol`` are counted as
    agreeing: central differences cannot resolve a true zero (e.g. a
    parameter softmax is invariant to) from cancellation noise.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    with Tape() as tape:
        out = f()
    grads = backward(tape, out)
    max_rel = 0.0
    for p in params:
        analytic = grad_for(grads, p)
        n_coords = p.data.size
        if n_coords > max_coords_per_param:
            flat_idx = rng.choice(n_coords, size=max_coords_per_param, replace=False)
        else:
            flat_idx = np.arange(n_coords)
        for k in flat_idx:
            i, j = divmod(int(k), p.cols)
            orig = p.data[i, j]
            p.data[i, j] = orig + h
            f_plus = f().item()
            p.data[i, j] = orig - h
            f_minus = f().item()
            p.data[i, j] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[i, j]
            denom = max(abs(a), abs(numeric))
            if denom < zero_tol:
                continue
            max_rel = max(max_rel, abs(a - numeric) / denom)
    return max_rel
