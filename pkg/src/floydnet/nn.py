"""Minimal float64 tensor type with a recorded computation graph.

Every primitive builds its output eagerly with numpy and attaches a
hand-derived backward closure. Reverse-mode accumulation walks the recorded
graph in topological order (GradTape). There is no general broadcasting:
elementwise ops demand equal shapes, and each primitive states exactly what
it accepts.

All buffers are float64. Any non-finite value produced by a primitive
raises NonFiniteError immediately.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

DTYPE = np.float64

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


def _ensure_finite(data, what):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values in {what}")
    return data


class Tensor:
    """A float64 array plus the record of the primitive that produced it."""

    __slots__ = ("data", "grad", "parents", "backward_fn", "name")

    def __init__(self, data, parents=(), backward_fn=None, name=""):
        data = np.asarray(data, dtype=DTYPE)
        if not data.flags["C_CONTIGUOUS"]:
            data = np.ascontiguousarray(data)
        self.data = data
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        GradTape(self).run(seed)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def tensor(data, name=""):
    """Wrap raw data as a leaf tensor (constant or parameter)."""
    t = Tensor(data, name=name)
    _ensure_finite(t.data, name or "leaf tensor")
    return t


def _accumulate(t: Tensor, g: np.ndarray):
    if g.shape != t.data.shape:
        raise ValueError(f"gradient shape {g.shape} != tensor shape {t.data.shape}")
    if t.grad is None:
        t.grad = g.astype(DTYPE, copy=True)
    else:
        t.grad += g


class GradTape:
    """Topologically ordered record of the primitives reaching one root."""

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes = self._toposort(root)

    @staticmethod
    def _toposort(root):
        order = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return order

    def run(self, seed=None):
        if seed is None:
            if self.root.size != 1:
                raise ValueError("backward from a non-scalar requires an explicit seed")
            seed = np.ones_like(self.root.data)
        seed = np.asarray(seed, dtype=DTYPE)
        if seed.size == 1 and self.root.size == 1:
            seed = seed.reshape(self.root.shape)
        _accumulate(self.root, seed)
        for node in reversed(self.nodes):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass
class LinearParams:
    weight: Tensor  # (d_in, d_out)
    bias: Tensor | None  # (d_out,)

    @property
    def d_in(self):
        return self.weight.shape[0]

    @property
    def d_out(self):
        return self.weight.shape[1]

    def named(self, prefix):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


@dataclass
class NormParams:
    gain: Tensor  # (d,)
    offset: Tensor  # (d,)
    epsilon: float = 1e-6

    def named(self, prefix):
        yield f"{prefix}.gain", self.gain
        yield f"{prefix}.offset", self.offset


@dataclass
class FFNParams:
    inner: LinearParams
    outer: LinearParams

    def named(self, prefix):
        yield from self.inner.named(f"{prefix}.inner")
        yield from self.outer.named(f"{prefix}.outer")


def init_linear(rng, d_in, d_out, bias=True):
    """Uniform init scaled by 1/sqrt(d_in) for both weight and bias.

    The nonzero bias also keeps states off the exact-zero point where the
    epsilon-regularized norms are worst conditioned.
    """
    scale = 1.0 / np.sqrt(max(d_in, 1))
    w = rng.uniform(-scale, scale, size=(d_in, d_out))
    b = tensor(rng.uniform(-scale, scale, size=d_out), name="bias") if bias else None
    return LinearParams(weight=tensor(w, name="weight"), bias=b)


def init_norm(d, epsilon=1e-5):
    return NormParams(gain=tensor(np.ones(d)), offset=tensor(np.zeros(d)), epsilon=epsilon)


def init_ffn(rng, d, hidden, bias=True):
    return FFNParams(inner=init_linear(rng, d, hidden, bias), outer=init_linear(rng, hidden, d, bias))


# ---------------------------------------------------------------------------
# Elementwise and shape primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(_ensure_finite(a.data + b.data, "add"), parents=(a, b))

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    out.backward_fn = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(_ensure_finite(a.data * b.data, "mul"), parents=(a, b))

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    out.backward_fn = backward
    return out


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = Tensor(x.data.reshape(shape), parents=(x,))

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    out.backward_fn = backward
    return out


def concat(parts, axis) -> Tensor:
    parts = list(parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), parents=tuple(parts))
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            _accumulate(p, piece)

    out.backward_fn = backward
    return out


def broadcast_to(x: Tensor, shape) -> Tensor:
    """Broadcast following numpy rules; backward sums over broadcast axes."""
    shape = tuple(shape)
    out_data = np.broadcast_to(x.data, shape)
    out = Tensor(out_data.copy(), parents=(x,))
    lead = len(shape) - x.ndim
    expanded = (1,) * lead + x.shape

    def backward(g):
        axes = tuple(i for i, (a, b) in enumerate(zip(expanded, shape)) if a == 1 and b != 1)
        red = g.sum(axis=axes) if axes else g
        _accumulate(x, red.reshape(x.shape))

    out.backward_fn = backward
    return out


def take_slice(x: Tensor, index) -> Tensor:
    """Basic slicing (slices/ints only); backward scatters into zeros."""
    out = Tensor(np.ascontiguousarray(x.data[index]), parents=(x,))

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g.reshape(full[index].shape)
        _accumulate(x, full)

    out.backward_fn = backward
    return out


def tsum(x: Tensor) -> Tensor:
    """Full reduction to a scalar."""
    out = Tensor(np.array(x.data.sum()), parents=(x,))

    def backward(g):
        _accumulate(x, np.full(x.shape, float(g)))

    out.backward_fn = backward
    return out


# ---------------------------------------------------------------------------
# Neural-net primitives with hand-derived backwards
# ---------------------------------------------------------------------------


def linear(x: Tensor, p: LinearParams) -> Tensor:
    """Affine map along the last axis: y[..., o] = sum_i x[..., i] W[i, o] + b[o]."""
    if x.shape[-1] != p.d_in:
        raise ValueError(f"linear expects last dim {p.d_in}, got {x.shape[-1]}")
    w, b = p.weight, p.bias
    x2 = x.data.reshape(-1, p.d_in)
    y2 = x2 @ w.data
    if b is not None:
        y2 = y2 + b.data
    y = y2.reshape(x.shape[:-1] + (p.d_out,))
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor(_ensure_finite(y, "linear"), parents=parents)

    def backward(g):
        g2 = g.reshape(-1, p.d_out)
        _accumulate(x, (g2 @ w.data.T).reshape(x.shape))
        _accumulate(w, x2.T @ g2)
        if b is not None:
            _accumulate(b, g2.sum(axis=0))

    out.backward_fn = backward
    return out


def layer_norm(x: Tensor, p: NormParams) -> Tensor:
    """Zero-mean unit-variance transform over the last axis, then gain/offset."""
    d = x.shape[-1]
    if p.gain.shape != (d,):
        raise ValueError(f"norm params sized {p.gain.shape}, input last dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + p.epsilon)
    xhat = xc * inv
    y = xhat * p.gain.data + p.offset.data
    out = Tensor(_ensure_finite(y, "layer_norm"), parents=(x, p.gain, p.offset))

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        _accumulate(p.gain, (g * xhat).sum(axis=lead))
        _accumulate(p.offset, g.sum(axis=lead))
        gh = g * p.gain.data
        term = gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, term * inv)

    out.backward_fn = backward
    return out


def rms_norm(x: Tensor, p: NormParams) -> Tensor:
    """Root-mean-square normalization over the last axis, then gain/offset."""
    d = x.shape[-1]
    if p.gain.shape != (d,):
        raise ValueError(f"norm params sized {p.gain.shape}, input last dim {d}")
    ms = (x.data * x.data).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(ms + p.epsilon)
    xhat = x.data * inv
    y = xhat * p.gain.data + p.offset.data
    out = Tensor(_ensure_finite(y, "rms_norm"), parents=(x, p.gain, p.offset))

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        _accumulate(p.gain, (g * xhat).sum(axis=lead))
        _accumulate(p.offset, g.sum(axis=lead))
        gh = g * p.gain.data
        # d/dx of x * inv with inv = (mean(x^2) + eps)^(-1/2)
        dot = (gh * x.data).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * gh - (inv**3) * dot * x.data)

    out.backward_fn = backward
    return out


def stable_softmax(data, axis):
    """Numpy softmax with max subtraction; shared by primitives and kernels."""
    m = data.max(axis=axis, keepdims=True)
    e = np.exp(data - m)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} invalid for shape {x.shape}")
    y = stable_softmax(x.data, axis)
    out = Tensor(_ensure_finite(y, "softmax"), parents=(x,))

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(x, y * (g - dot))

    out.backward_fn = backward
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact erf-based GELU: x * Phi(x)."""
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    y = x.data * phi
    out = Tensor(_ensure_finite(y, "gelu"), parents=(x,))

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        _accumulate(x, g * (phi + x.data * pdf))

    out.backward_fn = backward
    return out


def ffn(x: Tensor, p: FFNParams) -> Tensor:
    """linear -> GELU -> linear; backward composes the primitive backwards."""
    return linear(gelu(linear(x, p.inner)), p.outer)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    checked: int


@dataclass
class GradCheckReport:
    entries: list
    tol: float

    @property
    def worst(self):
        return float(max((e.max_rel_err for e in self.entries), default=0.0))

    @property
    def passed(self):
        return bool(self.worst < self.tol)

    def __str__(self):
        lines = [f"{'PASS' if self.passed else 'FAIL'} (tol {self.tol:g}, worst {self.worst:.3e})"]
        for e in self.entries:
            lines.append(f"  {e.name}: max rel err {e.max_rel_err:.3e} over {e.checked} entries")
        return "\n".join(lines)


def grad_check(f, params, eps=1e-5, tol=1e-6, samples_per_param=None, rng=None):
    """Compare analytic gradients of scalar f() against central differences.

    f is re-evaluated from scratch on each call and must depend on the
    tensors in params (a list of (name, Tensor) pairs or bare Tensors).
    samples_per_param limits how many entries of each tensor are perturbed;
    None checks every entry.
    """
    named = [(p[0], p[1]) if isinstance(p, tuple) else (f"param{i}", p) for i, p in enumerate(params)]
    if rng is None:
        rng = np.random.default_rng(0)

    for _, t in named:
        t.zero_grad()
    loss = f()
    if loss.size != 1:
        raise ValueError("grad_check needs a scalar-valued computation")
    loss.backward()
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for name, t in named}

    entries = []
    for name, t in named:
        flat = t.data.reshape(-1)
        n = flat.size
        if n == 0:
            entries.append(GradCheckEntry(name, 0.0, 0))
            continue
        if samples_per_param is None or samples_per_param >= n:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=samples_per_param, replace=False)
        worst = 0.0
        a = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            dn = f().item()
            flat[i] = orig
            num = (up - dn) / (2.0 * eps)
            if not np.isfinite(num):
                raise NonFiniteError(f"non-finite finite-difference value for {name}[{i}]")
            rel = abs(a[i] - num) / max(1.0, abs(a[i]), abs(num))
            worst = max(worst, rel)
        entries.append(GradCheckEntry(name, float(worst), len(idx)))
    return GradCheckReport(entries=entries, tol=tol)


# ---------------------------------------------------------------------------
# Checkpoint I/O: text manifest followed by one little-endian float64 blob
# ---------------------------------------------------------------------------

_CKPT_MAGIC = "FLOYDNET-CKPT 1"


def save_params(named_params, path):
    """Write (name, Tensor) pairs: manifest lines, then the flat LE buffer."""
    named = list(named_params)
    header = io.StringIO()
    header.write(_CKPT_MAGIC + "\n")
    header.write(f"{len(named)}\n")
    offset = 0
    for name, t in named:
        shape = ",".join(str(s) for s in t.shape) if t.ndim else "scalar"
        header.write(f"{name} {shape} {offset}\n")
        offset += t.size * 8
    header.write(f"BLOB {offset}\n")
    with open(path, "wb") as fh:
        fh.write(header.getvalue().encode("ascii"))
        for _, t in named:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_params(path):
    """Read a checkpoint back into an ordered {name: array} dict."""
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii").strip()
        if magic != _CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        count = int(fh.readline())
        entries = []
        for _ in range(count):
            name, shape, offset = fh.readline().decode("ascii").split()
            dims = () if shape == "scalar" else tuple(int(s) for s in shape.split(","))
            entries.append((name, dims, int(offset)))
        blob_line = fh.readline().decode("ascii").split()
        if blob_line[0] != "BLOB":
            raise ValueError("malformed checkpoint: missing BLOB marker")
        blob = fh.read(int(blob_line[1]))
    out = {}
    for name, dims, offset in entries:
        size = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(dims)
        out[name] = arr.astype(DTYPE).copy()
    return out


def restore_params(named_params, loaded):
    """Copy loaded arrays into existing tensors, verifying names and shapes."""
    named = list(named_params)
    names = [n for n, _ in named]
    if set(names) != set(loaded):
        missing = set(names) ^ set(loaded)
        raise ValueError(f"checkpoint/parameter name mismatch: {sorted(missing)}")
    for name, t in named:
        arr = loaded[name]
        if arr.shape != t.shape:
            raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {t.shape}")
        t.data[...] = arr
