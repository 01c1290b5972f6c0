"""Differentiable-computation core.

A small reverse-mode tape over float64 numpy arrays: enough ops to express
MLP encoders and the contrastive/value losses, with exact analytic gradients
verified against central finite differences. Parameters live in a
`ParamStore` with lexicographic iteration order so every reduction is
order-deterministic.

Compute is float64 throughout; checkpoints store little-endian float32
(`f32le`), so the first save of freshly trained parameters quantizes once and
save/load is the exact identity from then on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .errors import CheckpointError, NumericError, ShapeError
from .manifest import canonical_json

Array = np.ndarray
Gradients = dict[str, np.ndarray]

CHECKPOINT_FORMAT_VERSION = 1


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """Node in a reverse-mode computation graph.

    Build graphs with the overloaded operators and the module functions
    below, then call `backward(root)` on a scalar node; gradients accumulate
    into `.grad` in reverse construction order (deterministic). Nodes with
    `needs_grad=False` (constants, e.g. input batches) are skipped during
    accumulation so backward work scales with the trainable subgraph.
    """

    __slots__ = ("value", "grad", "needs_grad", "_parents", "_bw")

    def __init__(self, value, parents=(), bw=None, needs_grad: bool | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        if needs_grad is None:
            needs_grad = any(p.needs_grad for p in parents)
        self.needs_grad = needs_grad
        self._parents: tuple[Var, ...] = parents
        self._bw = bw  # callable(out_grad) -> tuple of per-parent grads (or None)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    # arithmetic -------------------------------------------------------------
    def __add__(self, other):
        other = as_var(other)
        a, b = self, other

        def bw(g):
            return (
                _unbroadcast(g, a.shape) if a.needs_grad else None,
                _unbroadcast(g, b.shape) if b.needs_grad else None,
            )

        return Var(a.value + b.value, (a, b), bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_var(other)
        a, b = self, other

        def bw(g):
            return (
                _unbroadcast(g, a.shape) if a.needs_grad else None,
                _unbroadcast(-g, b.shape) if b.needs_grad else None,
            )

        return Var(a.value - b.value, (a, b), bw)

    def __rsub__(self, other):
        return as_var(other).__sub__(self)

    def __mul__(self, other):
        other = as_var(other)
        a, b = self, other

        def bw(g):
            return (
                _unbroadcast(g * b.value, a.shape) if a.needs_grad else None,
                _unbroadcast(g * a.value, b.shape) if b.needs_grad else None,
            )

        return Var(a.value * b.value, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_var(other)
        a, b = self, other

        def bw(g):
            return (
                _unbroadcast(g / b.value, a.shape) if a.needs_grad else None,
                _unbroadcast(-g * a.value / (b.value * b.value), b.shape) if b.needs_grad else None,
            )

        return Var(a.value / b.value, (a, b), bw)

    def __rtruediv__(self, other):
        return as_var(other).__truediv__(self)

    def __neg__(self):
        return Var(-self.value, (self,), lambda g: (-g,))

    def __matmul__(self, other):
        other = as_var(other)
        a, b = self, other
        if a.value.ndim != 2 or b.value.ndim != 2:
            raise ShapeError("matmul supports 2D operands only")
        if a.value.shape[1] != b.value.shape[0]:
            raise ShapeError(f"matmul shapes do not chain: {a.shape} @ {b.shape}")

        def bw(g):
            return (
                g @ b.value.T if a.needs_grad else None,
                a.value.T @ g if b.needs_grad else None,
            )

        return Var(a.value @ b.value, (a, b), bw)

    # shape ------------------------------------------------------------------
    def reshape(self, shape):
        src = self
        return Var(src.value.reshape(shape), (src,), lambda g: (g.reshape(src.shape),))

    @property
    def T(self):
        src = self
        if src.value.ndim != 2:
            raise ShapeError("transpose supports 2D only")
        return Var(src.value.T, (src,), lambda g: (g.T,))


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def relu(v: Var) -> Var:
    mask = v.value > 0
    return Var(np.where(mask, v.value, 0.0), (v,), lambda g: (g * mask,))


def exp(v: Var) -> Var:
    out = np.exp(v.value)
    return Var(out, (v,), lambda g: (g * out,))


def log(v: Var) -> Var:
    return Var(np.log(v.value), (v,), lambda g: (g / v.value,))


def sqrt(v: Var) -> Var:
    out = np.sqrt(v.value)
    return Var(out, (v,), lambda g: (g * (0.5 / out),))


def vsum(v: Var, axis=None, keepdims: bool = False) -> Var:
    out = v.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, v.shape).copy(),)

    return Var(out, (v,), bw)


def vmean(v: Var, axis=None, keepdims: bool = False) -> Var:
    n = v.value.size if axis is None else v.value.shape[axis]
    return vsum(v, axis=axis, keepdims=keepdims) * (1.0 / n)


def vdiag(v: Var) -> Var:
    """Main diagonal of a square matrix."""
    if v.value.ndim != 2 or v.value.shape[0] != v.value.shape[1]:
        raise ShapeError(f"vdiag needs a square matrix, got {v.shape}")

    def bw(g):
        out = np.zeros_like(v.value)
        np.fill_diagonal(out, g)
        return (out,)

    return Var(np.diagonal(v.value).copy(), (v,), bw)


def logsumexp(v: Var, axis=None, keepdims: bool = False) -> Var:
    """Max-shifted log-sum-exp; the shift is detached (its gradient is the
    softmax either way) so kinks in max never enter the tape."""
    shift = np.max(v.value, axis=axis, keepdims=True)
    shifted = v - Var(shift)
    out = log(vsum(exp(shifted), axis=axis, keepdims=True)) + Var(shift)
    if not keepdims and axis is not None:
        return out.reshape(tuple(d for i, d in enumerate(out.shape) if i != axis))
    if not keepdims and axis is None:
        return out.reshape(())
    return out


def backward(root: Var) -> None:
    """Accumulate d(root)/d(node) into .grad for every reachable node."""
    if root.value.shape != ():
        raise ShapeError("backward expects a scalar root")
    topo: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones((), dtype=np.float64)
    for node in reversed(topo):
        if node._bw is None or node.grad is None:
            continue
        for parent, pg in zip(node._parents, node._bw(node.grad)):
            if pg is None or not parent.needs_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(pg, dtype=np.float64)
            else:
                parent.grad = parent.grad + pg


# -- parameters ---------------------------------------------------------------


class ParamStore:
    """Named float64 tensors. Iteration is lexicographic by name; shapes are
    fixed at creation."""

    def __init__(self):
        self._tensors: dict[str, Array] = {}

    def add(self, name: str, value) -> None:
        if name in self._tensors:
            raise ShapeError(f"duplicate parameter name {name!r}")
        self._tensors[name] = np.array(value, dtype=np.float64)

    def __getitem__(self, name: str) -> Array:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def items(self):
        for name in self.names():
            yield name, self._tensors[name]

    def n_params(self) -> int:
        return sum(int(t.size) for t in self._tensors.values())

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self.items():
            out.add(name, t.copy())
        return out

    def set_(self, name: str, value: Array) -> None:
        """Internal mutation path for the optimizer; shape must not change."""
        old = self._tensors[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != old.shape:
            raise ShapeError(f"shape change for {name!r}: {old.shape} -> {value.shape}")
        self._tensors[name] = value

    def as_vars(self) -> dict[str, Var]:
        return {name: Var(t, needs_grad=True) for name, t in self.items()}


LossFn = Callable[[Mapping[str, Var]], Var]


def loss_gradient(loss_fn: LossFn, params: ParamStore) -> tuple[float, Gradients]:
    """Evaluate a scalar loss and its exact gradients for every parameter.

    Zero gradients are explicit; a non-finite loss or gradient raises
    NumericError naming the first offending parameter (lexicographic).
    """
    var_map = params.as_vars()
    out = loss_fn(var_map)
    if out.value.shape != ():
        raise ShapeError(f"loss must be scalar, got shape {out.shape}")
    value = float(out.value)
    if not np.isfinite(value):
        raise NumericError(f"loss is non-finite: {value}")
    backward(out)
    grads: Gradients = {}
    for name in params.names():
        g = var_map[name].grad
        if g is None:
            g = np.zeros_like(params[name])
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        grads[name] = np.asarray(g, dtype=np.float64)
    return value, grads


def grad_norm(grads: Gradients) -> float:
    total = 0.0
    for name in sorted(grads):
        g = grads[name]
        total += float(np.dot(g.ravel(), g.ravel()))
    return float(np.sqrt(total))


def _coordinate(params: ParamStore, flat_index: int) -> tuple[str, int]:
    for name in params.names():
        size = params[name].size
        if flat_index < size:
            return name, flat_index
        flat_index -= size
    raise IndexError("flat index out of range")


def finite_diff_check(
    loss_fn: LossFn,
    params: ParamStore,
    step: float = 1e-5,
    samples: int = 20,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic gradients and central differences
    over `samples` randomly chosen scalar parameters.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    _, grads = loss_gradient(loss_fn, params)

    def eval_at(p: ParamStore) -> float:
        return float(loss_fn(p.as_vars()).value)

    total = params.n_params()
    worst = 0.0
    for _ in range(samples):
        name, offset = _coordinate(params, int(rng.integers(0, total)))
        analytic = float(grads[name].ravel()[offset])
        shifted = params.copy()
        flat = shifted[name].ravel()
        base = flat[offset]
        flat[offset] = base + step
        f_plus = eval_at(shifted)
        flat[offset] = base - step
        f_minus = eval_at(shifted)
        flat[offset] = base
        numeric = (f_plus - f_minus) / (2.0 * step)
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


# -- MLP forward ----------------------------------------------------------------


def mlp_layer_count(params_or_map, prefix: str) -> int:
    i = 0
    while f"{prefix}.layer{i}.W" in params_or_map:
        i += 1
    if i == 0:
        raise ShapeError(f"no layers found under prefix {prefix!r}")
    return i


def mlp_forward_graph(var_map: Mapping[str, Var], prefix: str, x: Var) -> Var:
    """Affine -> ReLU per hidden layer, final layer affine only. `x` is
    (N, in_width); returns (N, out_width)."""
    n_layers = mlp_layer_count(var_map, prefix)
    h = x
    for i in range(n_layers):
        w = var_map[f"{prefix}.layer{i}.W"]
        b = var_map[f"{prefix}.layer{i}.b"]
        if h.shape[1] != w.shape[0]:
            raise ShapeError(
                f"{prefix}.layer{i}: input width {h.shape[1]} does not match W {w.shape}"
            )
        h = h @ w + b.reshape((1, w.shape[1]))
        if i < n_layers - 1:
            h = relu(h)
    return h


def mlp_forward(params: ParamStore, prefix: str, x: np.ndarray) -> np.ndarray:
    """Plain-numpy forward pass for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"mlp_forward expects a vector, got shape {x.shape}")
    out = mlp_forward_graph(params.as_vars(), prefix, Var(x.reshape(1, -1)))
    return out.value[0]


def mlp_forward_batch(params: ParamStore, prefix: str, x: np.ndarray) -> np.ndarray:
    out = mlp_forward_graph(params.as_vars(), prefix, Var(np.asarray(x, dtype=np.float64)))
    return out.value


# -- optimizer ------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam with bias correction and decoupled weight decay (applied as
    p <- p - lr*wd*p before the Adam update)."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)


def adam_step(params: ParamStore, grads: Gradients, state: AdamState) -> tuple[ParamStore, AdamState]:
    names = params.names()
    if sorted(grads) != names:
        raise ShapeError("gradient keys do not match parameter names")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name in names:
        p = params[name]
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape mismatch for {name!r}: {g.shape} vs {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        if state.weight_decay != 0.0:
            p = p * (1.0 - state.lr * state.weight_decay)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        params.set_(name, p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return params, state


# -- checkpoints ------------------------------------------------------------------


def save_checkpoint(params: ParamStore, metadata: dict, path) -> None:
    """Directory with manifest.json (tensor table + metadata) and params.bin
    (concatenated f32le buffers at the manifest's offsets)."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    table = []
    chunks = []
    offset = 0
    for name, tensor in params.items():
        raw = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
        table.append(
            {
                "name": name,
                "shape": list(tensor.shape),
                "dtype": "f32le",
                "offset": offset,
                "length": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "tensors": table,
        "metadata": metadata,
    }
    (out / "params.bin").write_bytes(b"".join(chunks))
    (out / "manifest.json").write_text(canonical_json(manifest) + "\n")


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
        blob = (root / "params.bin").read_bytes()
    except FileNotFoundError as e:
        raise CheckpointError(f"not a checkpoint directory: {root} ({e})") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"malformed manifest in {root}: {e}") from e

    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')!r}")
    params = ParamStore()
    for entry in manifest.get("tensors", []):
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if entry.get("dtype") != "f32le":
            raise CheckpointError(f"unsupported dtype {entry.get('dtype')!r} for {entry['name']!r}")
        if entry["length"] != count * 4:
            raise CheckpointError(f"tensor {entry['name']!r}: length/shape mismatch")
        lo, hi = int(entry["offset"]), int(entry["offset"]) + int(entry["length"])
        if hi > len(blob):
            raise CheckpointError(
                f"params.bin truncated: {entry['name']!r} needs bytes up to {hi}, file has {len(blob)}"
            )
        flat = np.frombuffer(blob[lo:hi], dtype="<f4").astype(np.float64)
        params.add(entry["name"], flat.reshape(shape))
    return params, manifest.get("metadata", {})
