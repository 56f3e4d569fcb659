"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just the operations the two branches need: 2-D convolution, dilated causal
1-D convolution, dense layers, relu, dropout, global average pooling, a
last-true-step gather, softmax cross-entropy, and elementwise add/scale.
Compute is 32-bit by default (loss reduction in 64-bit); every op also
works in float64, which the gradient-check tests rely on.

Graphs are built eagerly: each op returns a new Tensor holding its value,
its parents and a closure that routes the output gradient to the parents.
``backward`` zeroes and then fills ``.grad`` on every node that needs one,
so gradients never accumulate across calls unless done so explicitly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """When on, every op validates that its output is finite."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def _checked(arr: np.ndarray) -> np.ndarray:
    if _DEBUG_CHECKS and not np.isfinite(arr).all():
        raise FloatingPointError("non-finite value produced by an op")
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = False
        self._parents: Tuple["Tensor", ...] = ()
        self._bwd = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def backward(self) -> Dict[str, np.ndarray]:
        return backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, dtype=dtype)
        self.name = name
        self.requires_grad = True

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _node(data: np.ndarray, parents: Tuple[Tensor, ...], bwd) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = _checked(data)
    t.grad = None
    t.requires_grad = any(p.requires_grad for p in parents)
    t._parents = parents
    t._bwd = bwd if t.requires_grad else None
    return t


def backward(loss: Tensor) -> Dict[str, np.ndarray]:
    """Reverse-mode accumulation from a scalar loss.

    Returns the gradients of all Parameters reachable from the loss, keyed
    by name; every reachable node's ``.grad`` is (re)set in the process.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo: List[Tensor] = []
    seen = set()
    stack: List[Tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    for node in topo:
        node.grad = np.zeros_like(node.data)
    if not loss.requires_grad:
        return {}
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._bwd is not None:
            node._bwd(node.grad)
    return {n.name: n.grad for n in topo if isinstance(n, Parameter)}


def he_uniform(shape: Sequence[int], fan_in: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Fan-in scaled uniform init: U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=tuple(shape)).astype(dtype)


# ---------------------------------------------------------------------------
# im2col index caches (keyed by shape signature; contents are immutable)

_COL2D_CACHE: dict = {}
_COL1D_CACHE: dict = {}


def _col2d_indices(C: int, H: int, W: int, k: int, stride: int, pad: int):
    key = (C, H, W, k, stride, pad)
    hit = _COL2D_CACHE.get(key)
    if hit is not None:
        return hit
    Hp, Wp = H + 2 * pad, W + 2 * pad
    Ho = (Hp - k) // stride + 1
    Wo = (Wp - k) // stride + 1
    c = np.repeat(np.arange(C), k * k)[:, None]                      # (C*k*k, 1)
    ki = np.tile(np.repeat(np.arange(k), k), C)[:, None]
    kj = np.tile(np.tile(np.arange(k), k), C)[:, None]
    oi = (stride * np.repeat(np.arange(Ho), Wo))[None, :]            # (1, Ho*Wo)
    oj = (stride * np.tile(np.arange(Wo), Ho))[None, :]
    rows = ki + oi
    cols = kj + oj
    base = (c * Hp + rows) * Wp + cols                               # flat within one sample
    out = (c, rows, cols, base, Ho, Wo)
    _COL2D_CACHE[key] = out
    return out


def _col1d_indices(C: int, L: int, k: int, dilation: int):
    key = (C, L, k, dilation)
    hit = _COL1D_CACHE.get(key)
    if hit is not None:
        return hit
    P = (k - 1) * dilation
    t = np.arange(L)[None, :]
    i = np.arange(k)[:, None]
    idx = P + t - dilation * i                                       # (k, L), all >= 0
    base = (np.arange(C)[:, None, None] * (L + P) + idx[None]).reshape(C * k, L)
    out = (idx, base, P)
    _COL1D_CACHE[key] = out
    return out


# ---------------------------------------------------------------------------
# ops


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Batched 2-D cross-correlation: (N,C,H,W) * (O,C,k,k) + (O,) -> (N,O,H',W')."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weights, got {x.data.shape} and {w.data.shape}")
    N, C, H, W = x.data.shape
    O, Cw, k, k2 = w.data.shape
    if Cw != C or k != k2:
        raise ValueError(f"conv2d weight shape {w.data.shape} incompatible with input channels {C}")
    if b.data.shape != (O,):
        raise ValueError(f"conv2d bias shape {b.data.shape} != ({O},)")
    if H + 2 * pad < k or W + 2 * pad < k:
        raise ValueError(f"conv2d spatial dims {H}x{W} with pad {pad} smaller than kernel {k}")
    c_idx, rows, cols, base, Ho, Wo = _col2d_indices(C, H, W, k, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    patches = xp[:, c_idx, rows, cols]                               # (N, C*k*k, Ho*Wo)
    K, L = C * k * k, Ho * Wo
    p2 = patches.transpose(1, 0, 2).reshape(K, N * L)
    Wm = w.data.reshape(O, K)
    out2 = Wm @ p2                                                   # (O, N*L)
    out = out2.reshape(O, N, L).transpose(1, 0, 2) + b.data[None, :, None]
    out = np.ascontiguousarray(out).reshape(N, O, Ho, Wo)

    Hp, Wp = H + 2 * pad, W + 2 * pad

    def bwd(g: np.ndarray) -> None:
        gm = g.reshape(N, O, L).transpose(1, 0, 2).reshape(O, N * L)
        if w.requires_grad:
            w.grad += (gm @ p2.T).reshape(w.data.shape)
        if b.requires_grad:
            b.grad += g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dp = (Wm.T @ gm).reshape(K, N, L).transpose(1, 0, 2)     # (N, K, L)
            flat = (np.arange(N, dtype=np.int64)[:, None, None] * (C * Hp * Wp) + base[None]).ravel()
            dxp = np.bincount(flat, weights=dp.ravel().astype(np.float64), minlength=N * C * Hp * Wp)
            dxp = dxp.reshape(N, C, Hp, Wp).astype(x.data.dtype)
            if pad:
                dxp = dxp[:, :, pad:-pad, pad:-pad]
            x.grad += dxp

    return _node(out, (x, w, b), bwd)


def conv1d_dilated_causal(x: Tensor, w: Tensor, b: Tensor, dilation: int = 1) -> Tensor:
    """Causal dilated 1-D convolution: out[t] = sum_i f(i) * x[t - d*i].

    Implicit left zero-padding keeps the output the same length as the
    input, and output position t never reads input positions after t.
    """
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ValueError(f"conv1d expects 3-d input and weights, got {x.data.shape} and {w.data.shape}")
    N, C, L = x.data.shape
    O, Cw, k = w.data.shape
    if Cw != C:
        raise ValueError(f"conv1d weight shape {w.data.shape} incompatible with input channels {C}")
    if b.data.shape != (O,):
        raise ValueError(f"conv1d bias shape {b.data.shape} != ({O},)")
    if k < 1 or dilation < 1:
        raise ValueError("kernel size and dilation must be >= 1")
    idx, base, P = _col1d_indices(C, L, k, dilation)
    xp = np.pad(x.data, ((0, 0), (0, 0), (P, 0))) if P else x.data
    patches = xp[:, :, idx].reshape(N, C * k, L)                     # (N, C*k, L)
    K = C * k
    p2 = patches.transpose(1, 0, 2).reshape(K, N * L)
    Wm = w.data.reshape(O, K)
    out = (Wm @ p2).reshape(O, N, L).transpose(1, 0, 2) + b.data[None, :, None]
    out = np.ascontiguousarray(out)

    def bwd(g: np.ndarray) -> None:
        gm = g.transpose(1, 0, 2).reshape(O, N * L)
        if w.requires_grad:
            w.grad += (gm @ p2.T).reshape(w.data.shape)
        if b.requires_grad:
            b.grad += g.sum(axis=(0, 2))
        if x.requires_grad:
            dp = (Wm.T @ gm).reshape(K, N, L).transpose(1, 0, 2)
            flat = (np.arange(N, dtype=np.int64)[:, None, None] * (C * (L + P)) + base[None]).ravel()
            dxp = np.bincount(flat, weights=dp.ravel().astype(np.float64), minlength=N * C * (L + P))
            dxp = dxp.reshape(N, C, L + P).astype(x.data.dtype)
            x.grad += dxp[:, :, P:] if P else dxp

    return _node(out, (x, w, b), bwd)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: (N,F) @ (F,O) + (O,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"dense shapes incompatible: {x.data.shape} @ {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ValueError(f"dense bias shape {b.data.shape} != ({w.data.shape[1]},)")
    out = x.data @ w.data + b.data

    def bwd(g: np.ndarray) -> None:
        if w.requires_grad:
            w.grad += x.data.T @ g
        if b.requires_grad:
            b.grad += g.sum(axis=0)
        if x.requires_grad:
            x.grad += g @ w.data.T

    return _node(out, (x, w, b), bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.grad += g * mask

    return _node(np.where(mask, x.data, x.data.dtype.type(0)), (x,), bwd)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    keep *= x.data.dtype.type(1.0 / (1.0 - p))

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.grad += g * keep

    return _node(x.data * keep, (x,), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,C) spatial mean."""
    if x.data.ndim != 4:
        raise ValueError(f"global_avg_pool expects 4-d input, got {x.data.shape}")
    N, C, H, W = x.data.shape
    out = x.data.mean(axis=(2, 3))

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.grad += np.broadcast_to((g / (H * W))[:, :, None, None], x.data.shape)

    return _node(out, (x,), bwd)


def gather_last(x: Tensor, lengths: np.ndarray) -> Tensor:
    """Pick the hidden vector at the last true position: (N,C,L) -> (N,C)."""
    if x.data.ndim != 3:
        raise ValueError(f"gather_last expects 3-d input, got {x.data.shape}")
    N, C, L = x.data.shape
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (N,) or (lengths < 1).any() or (lengths > L).any():
        raise ValueError("lengths must be in [1, L] and aligned with the batch")
    rows = np.arange(N)
    pos = lengths - 1
    out = x.data[rows, :, pos]                                       # (N, C)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.grad[rows, :, pos] += g

    return _node(np.ascontiguousarray(out), (x,), bwd)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tuple[Tensor, np.ndarray]:
    """Mean NLL over the batch (64-bit reduction) plus softmax probabilities."""
    if logits.data.ndim != 2:
        raise ValueError(f"softmax_cross_entropy expects 2-d logits, got {logits.data.shape}")
    N, K = logits.data.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (N,):
        raise ValueError(f"labels shape {labels.shape} != ({N},)")
    if (labels < 0).any() or (labels >= K).any():
        raise ValueError(f"label out of range [0, {K})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    probs = e / s
    nll = np.log(s)[:, 0] - z[np.arange(N), labels]
    loss = np.asarray(np.mean(nll, dtype=np.float64), dtype=logits.data.dtype)

    def bwd(g: np.ndarray) -> None:
        if logits.requires_grad:
            d = probs.copy()
            d[np.arange(N), labels] -= 1.0
            logits.grad += d * (g * (1.0 / N))

    node = _node(loss, (logits,), bwd)
    return node, probs


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors (residual connections)."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += g
        if b.requires_grad:
            b.grad += g

    return _node(a.data + b.data, (a, b), bwd)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar treated as a constant (no gradient into c)."""
    c = float(c)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.grad += g * x.data.dtype.type(c)

    return _node(x.data * x.data.dtype.type(c), (x,), bwd)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """One Adam update with bias correction, in place on the parameters."""
    if len(params) != len(grads):
        raise ValueError("params and grads must align")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g in zip(params, grads):
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {p.name} shape {p.data.shape}")
        m = state.m.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[p.name] = m
        state.v[p.name] = v
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state
