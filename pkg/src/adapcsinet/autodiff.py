"""Minimal reverse-mode differentiable kernel on float64 numpy arrays.

The op set is exactly what the reconstruction and parameter-generator
networks need: dense layers, 3x3 same-padding convolutions, tanh,
broadcast addition, scalar scaling, reshape, row gather, column slice,
batched matrix-vector products and a summed-per-sample MSE loss.
Gradients propagate through closures attached to each result tensor;
``backward`` walks the graph in reverse topological order.

Everything is float64 and single-threaded by contract, so two runs with
identical seeds produce bit-identical trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(FloatingPointError):
    """NaN or Inf appeared in a forward or backward computation."""

    def __init__(self, op: str, stage: str):
        super().__init__(f"non-finite values produced by op '{op}' during {stage}")
        self.op = op
        self.stage = stage


def _check_finite(op: str, stage: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(op, stage)


class Tensor:
    """Array node in the computation graph.

    ``data`` is always a float64 ndarray. ``grad`` is filled in by
    ``backward`` for every tensor with ``requires_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf", parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents: tuple[Tensor, ...] = tuple(parents)
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op={self.op}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    _check_finite(op, "forward", data)
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, op=op, parents=parents if needs else ())
    if needs:
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray, op: str) -> None:
    if not t.requires_grad:
        return
    _check_finite(op, "backward", g)
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b for x (B, In), w (In, Out), b (Out,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"dense shape mismatch: x {x.data.shape} vs w {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ValueError(f"dense bias shape {b.data.shape} != ({w.data.shape[1]},)")
    y = x.data @ w.data + b.data

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g @ w.data.T, "dense")
        if w.requires_grad:
            _accumulate(w, x.data.T @ g, "dense")
        if b.requires_grad:
            _accumulate(b, g.sum(axis=0), "dense")

    return _result(y, "dense", (x, w, b), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 1, same padding.

    x is (B, C, H, W), w is (O, C, 3, 3), b is (O,). Spatial dims are
    preserved. Implemented as nine shifted matmuls so no im2col buffer
    is ever materialised.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("conv2d expects 4-d input and kernel")
    bsz, c, h, wd = x.data.shape
    o, ck, kh, kw = w.data.shape
    if ck != c or (kh, kw) != (3, 3):
        raise ValueError(f"conv2d kernel {w.data.shape} incompatible with input {x.data.shape}")
    if b.data.shape != (o,):
        raise ValueError(f"conv2d bias shape {b.data.shape} != ({o},)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    y = np.empty((bsz, o, h, wd))
    y[:] = b.data[None, :, None, None]
    for di in range(3):
        for dj in range(3):
            # (B,C,H,W) x (O,C) contribution for this kernel offset
            y += np.einsum("bchw,oc->bohw", xp[:, :, di:di + h, dj:dj + wd], w.data[:, :, di, dj], optimize=True)

    def backward(g):
        if b.requires_grad:
            _accumulate(b, g.sum(axis=(0, 2, 3)), "conv2d")
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for di in range(3):
                for dj in range(3):
                    gw[:, :, di, dj] = np.einsum(
                        "bchw,bohw->oc", xp[:, :, di:di + h, dj:dj + wd], g, optimize=True)
            _accumulate(w, gw, "conv2d")
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for di in range(3):
                for dj in range(3):
                    gxp[:, :, di:di + h, dj:dj + wd] += np.einsum(
                        "bohw,oc->bchw", g, w.data[:, :, di, dj], optimize=True)
            _accumulate(x, gxp[:, :, 1:-1, 1:-1], "conv2d")

    return _result(y, "conv2d", (x, w, b), backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        _accumulate(x, (1.0 - y * y) * g, "tanh")

    return _result(y, "tanh", (x,), backward)


def add(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    try:
        out = x.data + y.data
    except ValueError as exc:
        raise ValueError(f"add shape mismatch: {x.data.shape} vs {y.data.shape}") from exc

    def backward(g):
        if x.requires_grad:
            _accumulate(x, _unbroadcast(g, x.data.shape), "add")
        if y.requires_grad:
            _accumulate(y, _unbroadcast(g, y.data.shape), "add")

    return _result(out, "add", (x, y), backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = x.data * c

    def backward(g):
        _accumulate(x, g * c, "scale")

    return _result(out, "scale", (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != x.data.size:
        raise ValueError(f"reshape element count mismatch: {x.data.shape} -> {shape}")
    out = x.data.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(x.data.shape), "reshape")

    return _result(out, "reshape", (x,), backward)


def gather(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows of x along axis 0; scatter-adds on backward."""
    idx = np.asarray(idx, dtype=np.intp)
    out = x.data[idx]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx, g)
            _accumulate(x, gx, "gather")

    return _result(out, "gather", (x,), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a 2-d tensor."""
    if x.data.ndim != 2:
        raise ValueError("slice_cols expects a 2-d tensor")
    out = x.data[:, start:stop]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, start:stop] = g
            _accumulate(x, gx, "slice_cols")

    return _result(out, "slice_cols", (x,), backward)


def bmatvec(w: Tensor, s: Tensor) -> Tensor:
    """Batched mat-vec: w (B, N, M) with s (B, M) -> (B, N)."""
    if w.data.ndim != 3 or s.data.ndim != 2 or w.data.shape[0] != s.data.shape[0] \
            or w.data.shape[2] != s.data.shape[1]:
        raise ValueError(f"bmatvec shape mismatch: w {w.data.shape} vs s {s.data.shape}")
    out = np.einsum("bnm,bm->bn", w.data, s.data, optimize=True)

    def backward(g):
        if w.requires_grad:
            _accumulate(w, np.einsum("bn,bm->bnm", g, s.data, optimize=True), "bmatvec")
        if s.requires_grad:
            _accumulate(s, np.einsum("bnm,bn->bm", w.data, g, optimize=True), "bmatvec")

    return _result(out, "bmatvec", (w, s), backward)


def mse_loss(pred: Tensor, target: np.ndarray | Tensor) -> Tensor:
    """Squared error summed within each sample, averaged over the batch.

    The leading axis of ``pred`` is the batch; everything else is summed.
    """
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.data.shape != tgt.shape:
        raise ValueError(f"mse_loss shape mismatch: {pred.data.shape} vs {tgt.shape}")
    bsz = pred.data.shape[0]
    diff = pred.data - tgt
    out = np.asarray((diff * diff).sum() / bsz)

    def backward(g):
        _accumulate(pred, (2.0 / bsz) * diff * g, "mse_loss")

    return _result(out, "mse_loss", (pred,), backward)


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Fills ``grad`` on every reachable tensor with ``requires_grad``.
    """
    if loss.data.shape != ():
        raise ValueError("backward expects a scalar loss tensor")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor with requires_grad")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones(())
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params) -> None:
    for t in (params.values() if isinstance(params, dict) else params):
        t.grad = None


# ---------------------------------------------------------------------------
# initialisation and optimisation
# ---------------------------------------------------------------------------

def _fans(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 2:       # dense (In, Out)
        return shape[0], shape[1]
    if len(shape) == 4:       # conv (O, C, kh, kw)
        rf = shape[2] * shape[3]
        return shape[1] * rf, shape[0] * rf
    if len(shape) == 1:
        return shape[0], shape[0]
    raise ValueError(f"no fan convention for shape {shape}")


def glorot_uniform(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Uniform samples in +/- sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = _fans(tuple(shape))
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates plus hyperparameters."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, Tensor], lr: float, **kw) -> "AdamState":
        st = cls(lr=lr, **kw)
        st.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        st.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        return st


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected update; mutates params in place."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            continue
        _check_finite("adam_step", "backward", g)
        m = state.m[k]
        v = state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        _check_finite("adam_step", "forward", p.data)
    return state
