"""Minimal reverse-mode differentiation kernel.

Everything the parser trains with lives here: a float64 tensor type that
records a tape of backward closures, the handful of operations the model is
built from (matrix product, elementwise ops, softmax, concatenation, 1-D
convolution windows, an LSTM cell, dropout), a named parameter store with
deterministic initialization, the Adam optimizer, and a finite-difference
gradient checker.

Determinism contract: all randomness flows through :class:`Rng` (Philox
counter RNG, children derived from SHA-256 of a name), parameter values
depend only on the store seed and the parameter name, and all arithmetic is
64-bit. Two stores built with the same seed and construction sequence are
bitwise identical.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Rng",
    "ParameterStore",
    "AdamState",
    "adam_step",
    "grad_check",
    "softmax",
    "log_softmax",
    "softmax_rows",
    "matmul",
    "transpose",
    "concat",
    "stack_rows",
    "gather_rows",
    "row",
    "slice1d",
    "pick",
    "sum_all",
    "scale",
    "sigmoid",
    "tanh",
    "elu",
    "relu",
    "max_over_rows",
    "dropout",
    "mask_fill",
    "im2col_rows",
    "bilinear_vec",
    "lstm_cell",
    "global_grad_norm",
    "clip_gradients",
]

NEG_INF = float("-inf")


# ---------------------------------------------------------------------------
# Tensor and tape
# ---------------------------------------------------------------------------


class Tensor:
    """A float64 array plus an optional gradient and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Run reverse-mode accumulation from this (seed gradient = ones)."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; the free functions below do the work.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, neg(other))

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _node(data: np.ndarray, parents: Sequence[Tensor],
          backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise and linear algebra
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g: np.ndarray) -> None:
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        _accum(a, -g)

    return _node(-a.data, (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g: np.ndarray) -> None:
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g: np.ndarray) -> None:
        _accum(a, g * c)

    return _node(a.data * c, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for the 2D/1D shape combinations the model uses."""
    out_data = a.data @ b.data
    a_is_vec = a.data.ndim == 1
    b_is_vec = b.data.ndim == 1

    def backward(g: np.ndarray) -> None:
        if not a_is_vec and not b_is_vec:
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)
        elif not a_is_vec and b_is_vec:       # (m,k)@(k,) -> (m,)
            _accum(a, np.outer(g, b.data))
            _accum(b, a.data.T @ g)
        elif a_is_vec and not b_is_vec:       # (k,)@(k,n) -> (n,)
            _accum(a, b.data @ g)
            _accum(b, np.outer(a.data, g))
        else:                                  # (k,)@(k,) -> ()
            _accum(a, g * b.data)
            _accum(b, g * a.data)

    return _node(out_data, (a, b), backward)


def transpose(m: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        _accum(m, g.T)

    return _node(m.data.T, (m,), backward)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, stop)
            _accum(p, g[tuple(sl)])

    return _node(out_data, parts, backward)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    rows = list(rows)
    out_data = np.stack([r.data for r in rows], axis=0)

    def backward(g: np.ndarray) -> None:
        for i, r in enumerate(rows):
            _accum(r, g[i])

    return _node(out_data, rows, backward)


def gather_rows(table: Tensor, indices: Sequence[int]) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    out_data = table.data[idx]

    def backward(g: np.ndarray) -> None:
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx, g)
            _accum(table, gt)

    return _node(out_data, (table,), backward)


def row(m: Tensor, i: int) -> Tensor:
    def backward(g: np.ndarray) -> None:
        if m.requires_grad:
            gm = np.zeros_like(m.data)
            gm[i] = g
            _accum(m, gm)

    return _node(m.data[i], (m,), backward)


def slice1d(v: Tensor, start: int, stop: int) -> Tensor:
    def backward(g: np.ndarray) -> None:
        if v.requires_grad:
            gv = np.zeros_like(v.data)
            gv[start:stop] = g
            _accum(v, gv)

    return _node(v.data[start:stop], (v,), backward)


def pick(v: Tensor, i: int) -> Tensor:
    """Select one entry of a vector as a scalar tensor."""
    def backward(g: np.ndarray) -> None:
        if v.requires_grad:
            gv = np.zeros_like(v.data)
            gv[i] = g
            _accum(v, gv)

    return _node(np.asarray(v.data[i]), (v,), backward)


def sum_all(t: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        _accum(t, np.full_like(t.data, float(g)))

    return _node(np.asarray(t.data.sum()), (t,), backward)


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------


def sigmoid(t: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-t.data))

    def backward(g: np.ndarray) -> None:
        _accum(t, g * out_data * (1.0 - out_data))

    return _node(out_data, (t,), backward)


def tanh(t: Tensor) -> Tensor:
    out_data = np.tanh(t.data)

    def backward(g: np.ndarray) -> None:
        _accum(t, g * (1.0 - out_data * out_data))

    return _node(out_data, (t,), backward)


def elu(t: Tensor) -> Tensor:
    neg_part = np.exp(np.minimum(t.data, 0.0)) - 1.0
    out_data = np.where(t.data > 0.0, t.data, neg_part)

    def backward(g: np.ndarray) -> None:
        _accum(t, g * np.where(t.data > 0.0, 1.0, neg_part + 1.0))

    return _node(out_data, (t,), backward)


def relu(t: Tensor) -> Tensor:
    out_data = np.maximum(t.data, 0.0)

    def backward(g: np.ndarray) -> None:
        _accum(t, g * (t.data > 0.0))

    return _node(out_data, (t,), backward)


# ---------------------------------------------------------------------------
# Softmax family
# ---------------------------------------------------------------------------


def _check_softmax_input(values: np.ndarray) -> None:
    if values.size == 0:
        raise ValueError("softmax of an empty score vector")
    if np.isneginf(values).all():
        raise ValueError("fully masked distribution")
    finite_or_masked = np.isfinite(values) | np.isneginf(values)
    if not finite_or_masked.all():
        raise ValueError("softmax scores must be finite or -inf")


def softmax(scores: Tensor) -> Tensor:
    """Overflow-safe softmax of a score vector; -inf entries map to exact 0."""
    v = scores.data
    _check_softmax_input(v)
    shifted = v - v.max()
    exps = np.exp(shifted)
    probs = exps / exps.sum()

    def backward(g: np.ndarray) -> None:
        _accum(scores, probs * (g - np.dot(g, probs)))

    return _node(probs, (scores,), backward)


def log_softmax(scores: Tensor) -> Tensor:
    v = scores.data
    _check_softmax_input(v)
    shifted = v - v.max()
    log_z = math.log(np.exp(shifted).sum())
    out_data = shifted - log_z

    def backward(g: np.ndarray) -> None:
        _accum(scores, g - np.exp(out_data) * g.sum())

    return _node(out_data, (scores,), backward)


def softmax_rows(m: Tensor) -> Tensor:
    """Row-wise softmax of a matrix (used for attention probabilities)."""
    v = m.data
    shifted = v - v.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        dot = (g * probs).sum(axis=1, keepdims=True)
        _accum(m, probs * (g - dot))

    return _node(probs, (m,), backward)


def mask_fill(scores: Tensor, legal: np.ndarray) -> Tensor:
    """Replace entries where ``legal`` is False with -inf."""
    legal = np.asarray(legal, dtype=bool)
    out_data = np.where(legal, scores.data, NEG_INF)

    def backward(g: np.ndarray) -> None:
        _accum(scores, np.where(legal, g, 0.0))

    return _node(out_data, (scores,), backward)


# ---------------------------------------------------------------------------
# Convolution windows, pooling, dropout
# ---------------------------------------------------------------------------


def im2col_rows(m: Tensor, width: int) -> Tensor:
    """Stack sliding windows of ``width`` consecutive rows, flattened.

    (n, d) -> (n - width + 1, width * d); requires n >= width.
    """
    n, d = m.data.shape
    if n < width:
        raise ValueError(f"sequence of {n} rows is shorter than window {width}")
    windows = n - width + 1
    out_data = np.empty((windows, width * d))
    for w in range(width):
        out_data[:, w * d:(w + 1) * d] = m.data[w:w + windows]

    def backward(g: np.ndarray) -> None:
        if m.requires_grad:
            gm = np.zeros_like(m.data)
            for w in range(width):
                gm[w:w + windows] += g[:, w * d:(w + 1) * d]
            _accum(m, gm)

    return _node(out_data, (m,), backward)


def max_over_rows(m: Tensor) -> Tensor:
    """Column-wise max over rows (max-over-time pooling)."""
    arg = m.data.argmax(axis=0)
    cols = np.arange(m.data.shape[1])
    out_data = m.data[arg, cols]

    def backward(g: np.ndarray) -> None:
        if m.requires_grad:
            gm = np.zeros_like(m.data)
            gm[arg, cols] = g
            _accum(m, gm)

    return _node(out_data, (m,), backward)


def dropout(t: Tensor, rate: float, training: bool, rng: "Rng | None" = None) -> Tensor:
    """Inverted dropout: kept entries scaled by 1/(1-rate)."""
    if not training or rate == 0.0:
        return t
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1): {rate}")
    if rng is None:
        raise ValueError("training-mode dropout needs an Rng")
    keep = rng.random(t.data.shape) >= rate
    factor = keep / (1.0 - rate)
    out_data = t.data * factor

    def backward(g: np.ndarray) -> None:
        _accum(t, g * factor)

    return _node(out_data, (t,), backward)


def bilinear_vec(left: Tensor, weight: Tensor, right: Tensor) -> Tensor:
    """Per-slice bilinear form: out[l] = left . weight[l] . right.

    ``weight`` has shape (L, d_left, d_right); output shape (L,).
    """
    out_data = np.einsum("i,lij,j->l", left.data, weight.data, right.data)

    def backward(g: np.ndarray) -> None:
        if left.requires_grad:
            _accum(left, np.einsum("l,lij,j->i", g, weight.data, right.data))
        if weight.requires_grad:
            _accum(weight, np.einsum("l,i,j->lij", g, left.data, right.data))
        if right.requires_grad:
            _accum(right, np.einsum("l,lij,i->j", g, weight.data, left.data))

    return _node(out_data, (left, weight, right), backward)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor,
              w_ih: Tensor, w_hh: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step; gate order i, f, g, o. Returns (h', c')."""
    hidden = w_hh.data.shape[1]
    z = add(add(matmul(w_ih, x), matmul(w_hh, h)), bias)
    i = sigmoid(slice1d(z, 0, hidden))
    f = sigmoid(slice1d(z, hidden, 2 * hidden))
    g = tanh(slice1d(z, 2 * hidden, 3 * hidden))
    o = sigmoid(slice1d(z, 3 * hidden, 4 * hidden))
    c_next = add(mul(f, c), mul(i, g))
    h_next = mul(o, tanh(c_next))
    return h_next, c_next


# ---------------------------------------------------------------------------
# Random numbers
# ---------------------------------------------------------------------------


class Rng:
    """Seedable, splittable random source.

    Backed by numpy's Philox counter generator. ``split(name)`` derives an
    independent child stream keyed by the SHA-256 of the name, so a value
    drawn for e.g. parameter "encoder.attn.Wm" depends only on the seed and
    that name, never on draw order.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._key = _key
        self._gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy=self.seed, spawn_key=_key))
        )

    def split(self, name: str) -> "Rng":
        digest = hashlib.sha256(name.encode("utf-8")).digest()
        words = tuple(int.from_bytes(digest[k:k + 4], "little") for k in range(0, 16, 4))
        return Rng(self.seed, self._key + words)

    def random(self, shape: tuple[int, ...] | int | None = None) -> np.ndarray:
        return self._gen.random(shape)

    def uniform(self, low: float, high: float, shape: tuple[int, ...] | int) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int) -> int:
        return int(self._gen.integers(low, high))


# ---------------------------------------------------------------------------
# Parameter store
# ---------------------------------------------------------------------------


class ParameterStore:
    """Ordered map of hierarchical names to trainable tensors."""

    def __init__(self, rng_seed: int):
        self.rng_seed = int(rng_seed)
        self._entries: dict[str, Tensor] = {}
        self._rng = Rng(self.rng_seed)

    def create(self, name: str, shape: tuple[int, ...], init: str = "glorot") -> Tensor:
        """Create and register a parameter.

        ``init`` is one of "glorot" (uniform +-sqrt(6/(fan_in+fan_out))),
        "zeros" (biases), or "embedding" (uniform +-0.05). Values depend only
        on (rng_seed, name).
        """
        if name in self._entries:
            raise ValueError(f"duplicate parameter name: {name}")
        rng = self._rng.split(name)
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "embedding":
            data = rng.uniform(-0.05, 0.05, shape)
        elif init == "glorot":
            fan_out, fan_in = shape[-2], shape[-1]
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-bound, bound, shape)
        else:
            raise ValueError(f"unknown init scheme: {init}")
        t = Tensor(data, requires_grad=True)
        self._entries[name] = t
        return t

    def put(self, name: str, values: np.ndarray) -> Tensor:
        """Register a parameter with explicit values (checkpoint load, surgery)."""
        if name in self._entries:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._entries.items())

    def zero_grads(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        """Current gradients, with zeros for parameters untouched by the tape."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._entries.items()
        }

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._entries.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, data in values.items():
            t = self._entries[name]
            if t.data.shape != data.shape:
                raise ValueError(f"shape mismatch loading {name}")
            t.data = np.array(data, dtype=np.float64)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter Adam moments plus the shared step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParameterStore, grads: dict[str, np.ndarray],
              state: AdamState, learning_rate: float) -> tuple[ParameterStore, AdamState]:
    """Standard Adam update with bias correction; mutates in place."""
    if learning_rate <= 0:
        raise ValueError(f"learning rate must be positive: {learning_rate}")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, param in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(param.data)
        elif g.shape != param.data.shape:
            raise ValueError(
                f"gradient shape mismatch for {name}: "
                f"{g.shape} vs {param.data.shape}"
            )
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        param.data = param.data - learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    return math.sqrt(total)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients down so the global norm is at most ``max_norm``."""
    norm = global_grad_norm(grads)
    if norm > max_norm > 0:
        factor = max_norm / norm
        return {name: g * factor for name, g in grads.items()}
    return grads


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(loss_fn: Callable[[ParameterStore], Tensor],
               params: ParameterStore,
               epsilon: float = 1e-5,
               names: Iterable[str] | None = None) -> dict[str, float]:
    """Compare analytic gradients against central differences.

    Returns, per parameter tensor, the worst relative error
    |analytic - numeric| / max(1, |analytic|, |numeric|) over its scalars.
    ``names`` restricts the sweep (default: every parameter).
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon out of range [1e-7, 1e-3]: {epsilon}")

    def evaluate() -> float:
        value = float(loss_fn(params).data)
        if not math.isfinite(value):
            raise ValueError("non-finite objective")
        return value

    params.zero_grads()
    loss = loss_fn(params)
    if not math.isfinite(float(loss.data)):
        raise ValueError("non-finite objective")
    loss.backward()
    analytic = params.gradients()
    params.zero_grads()

    sweep = params.names() if names is None else list(names)
    worst: dict[str, float] = {}
    for name in sweep:
        flat = params[name].data.reshape(-1)
        ga = analytic[name].reshape(-1)
        err = 0.0
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            f_plus = evaluate()
            flat[i] = original - epsilon
            f_minus = evaluate()
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            rel = abs(ga[i] - numeric) / max(1.0, abs(ga[i]), abs(numeric))
            err = max(err, rel)
        worst[name] = err
    return worst
