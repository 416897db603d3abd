"""Dense-tensor reverse-mode autodiff, just big enough for the policy nets.

Tensors wrap numpy arrays and record their producers on a tape; backward()
walks the tape in reverse topological order. Training runs in 32-bit;
gradient verification re-instantiates the same graph in 64-bit where central
finite differences are trustworthy. Attention keeps its softmax weights
around so the encoder can export them for inspection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import special as sp_special

CHECKPOINT_MAGIC = "pegbench-ckpt"
CHECKPOINT_VERSION = 1


class ShapeMismatch(Exception):
    pass


class CheckpointFormatError(Exception):
    pass


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"


def param(data, name: str) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def _needs(*tensors) -> bool:
    return any(t.requires_grad for t in tensors)


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss."""
    if loss.size != 1:
        raise ShapeMismatch(f"backward needs a scalar, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            order.append(node)
        else:
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# ------------------------------------------------------------------ core ops


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}") from exc
    out = Tensor(data, requires_grad=_needs(a, b), _parents=(a, b))

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    out._backward = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}") from exc
    out = Tensor(data, requires_grad=_needs(a, b), _parents=(a, b))

    def _bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    out._backward = _bw
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s, requires_grad=a.requires_grad, _parents=(a,))
    out._backward = lambda g: _accumulate(a, g * s)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)
    out = Tensor(data, requires_grad=_needs(a, b), _parents=(a, b))

    def _bw(g):
        _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    out._backward = _bw
    return out


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inverse = tuple(int(np.argsort(axes)[i]) for i in range(len(axes)))
    out = Tensor(np.transpose(a.data, axes), requires_grad=a.requires_grad, _parents=(a,))
    out._backward = lambda g: _accumulate(a, np.transpose(g, inverse))
    return out


def reshape(a: Tensor, shape: tuple) -> Tensor:
    out = Tensor(a.data.reshape(shape), requires_grad=a.requires_grad, _parents=(a,))
    out._backward = lambda g: _accumulate(a, g.reshape(a.shape))
    return out


def expand(a: Tensor, n: int) -> Tensor:
    """Prepend a length-n broadcast axis (shared across the batch)."""
    data = np.broadcast_to(a.data, (n, *a.shape)).copy()
    out = Tensor(data, requires_grad=a.requires_grad, _parents=(a,))
    out._backward = lambda g: _accumulate(a, g.sum(axis=0))
    return out


def concat(tensors: list, axis: int = -1) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor(data, requires_grad=_needs(*tensors), _parents=tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    out._backward = _bw
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, requires_grad=a.requires_grad, _parents=(a,))

    def _bw(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(a, (g - dot) * y)

    out._backward = _bw
    return out


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no learned affine;
    compose with mul/add for gain and bias)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out = Tensor(xhat, requires_grad=a.requires_grad, _parents=(a,))

    def _bw(g):
        m1 = g.mean(axis=-1, keepdims=True)
        m2 = (g * xhat).mean(axis=-1, keepdims=True)
        _accumulate(a, (g - m1 - xhat * m2) * inv)

    out._backward = _bw
    return out


def gelu(a: Tensor) -> Tensor:
    x = a.data
    cdf = 0.5 * (1.0 + sp_special.erf(x / np.sqrt(2.0)))
    out = Tensor(x * cdf, requires_grad=a.requires_grad, _parents=(a,))

    def _bw(g):
        pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        _accumulate(a, g * (cdf + x * pdf))

    out._backward = _bw
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = sp_special.expit(a.data)
    out = Tensor(y, requires_grad=a.requires_grad, _parents=(a,))
    out._backward = lambda g: _accumulate(a, g * y * (1.0 - y))
    return out


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = Tensor(
        np.asarray((diff * diff).mean(), dtype=pred.dtype),
        requires_grad=pred.requires_grad,
        _parents=(pred,),
    )
    out._backward = lambda g: _accumulate(pred, g * 2.0 * diff / diff.size)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeMismatch(f"linear {x.shape} @ {w.shape}")
    return add(matmul(x, w), b)


def mha(
    q_src: Tensor,
    kv_src: Tensor,
    wq: Tensor, bq: Tensor,
    wk: Tensor, bk: Tensor,
    wv: Tensor, bv: Tensor,
    wo: Tensor, bo: Tensor,
    heads: int,
) -> tuple[Tensor, np.ndarray]:
    """Multi-head scaled dot-product attention over batched [B, n, d] inputs.

    Returns the projected output and a detached copy of the softmax weights
    with shape [B, heads, n_q, n_kv].
    """
    batch, n_q, d = q_src.shape
    n_kv = kv_src.shape[1]
    if d % heads:
        raise ShapeMismatch(f"width {d} not divisible by {heads} heads")
    dh = d // heads

    def split(t: Tensor, n: int) -> Tensor:
        return transpose(reshape(t, (batch, n, heads, dh)), (0, 2, 1, 3))

    q = split(linear(q_src, wq, bq), n_q)
    k = split(linear(kv_src, wk, bk), n_kv)
    v = split(linear(kv_src, wv, bv), n_kv)
    scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    attn = softmax(scores)  # [B, h, n_q, n_kv]
    mixed = matmul(attn, v)
    merged = reshape(transpose(mixed, (0, 2, 1, 3)), (batch, n_q, d))
    return linear(merged, wo, bo), attn.data.copy()


# -------------------------------------------------------------------- adam


class Adam:
    """Bias-corrected Adam; step() consumes and zeroes the gradients."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        zero_grads(self.params)


# -------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    per_param: dict
    max_rel_error: float

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def grad_check(
    loss_fn,
    params,
    h: float = 1e-5,
    max_indices: int = 200,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Central finite differences vs analytic gradients on sampled entries.

    loss_fn() must rebuild the graph and return the scalar loss; params must
    be float64 leaves of that graph.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError(f"grad_check needs float64 params, {p.name} is {p.data.dtype}")
    zero_grads(params)
    backward(loss_fn())
    analytic = {p.name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params}
    zero_grads(params)

    per_param = {}
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        count = min(max_indices, flat.size)
        idx = rng.choice(flat.size, size=count, replace=False)
        errs = []
        for i in idx:
            keep = flat[i]
            flat[i] = keep + h
            up = loss_fn().item()
            flat[i] = keep - h
            down = loss_fn().item()
            flat[i] = keep
            numeric = (up - down) / (2.0 * h)
            a = analytic[p.name].reshape(-1)[i]
            errs.append(abs(a - numeric) / max(abs(a), abs(numeric), 1e-3))
        per_param[p.name] = float(max(errs))
        worst = max(worst, per_param[p.name])
    return GradCheckReport(per_param, worst)


# ------------------------------------------------------------- checkpoints


def save_checkpoint(path, params, meta: dict | None = None) -> None:
    """Named parameter arrays + JSON metadata in one seekable binary file."""
    entries = []
    offset = 0
    arrays = []
    for p in params:
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        entries.append({"name": p.name, "shape": list(arr.shape), "offset": offset})
        arrays.append(arr)
        offset += arr.nbytes
    header = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(len(blob).to_bytes(4, "little"))
        f.write(blob)
        for arr in arrays:
            f.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns ({name: float32 array}, meta)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise CheckpointFormatError(f"{path}: too short")
    hlen = int.from_bytes(raw[:4], "little")
    if len(raw) < 4 + hlen:
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[4 : 4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header: {exc}") from exc
    if header.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {header.get('magic')!r}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {header.get('version')}")
    body = raw[4 + hlen :]
    out = {}
    end = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 4
        start = entry["offset"]
        if start + nbytes > len(body):
            raise CheckpointFormatError(f"{path}: truncated tensor {entry['name']!r}")
        out[entry["name"]] = (
            np.frombuffer(body[start : start + nbytes], dtype="<f4").reshape(shape).copy()
        )
        end = max(end, start + nbytes)
    if end != len(body):
        raise CheckpointFormatError(f"{path}: {len(body) - end} trailing bytes")
    return out, header.get("meta", {})
