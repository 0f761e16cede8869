"""Minimal dense-tensor reverse-mode automatic differentiation.

Values are float64 numpy arrays wrapped in :class:`Tensor`. Operations
executed against a :class:`Tape` append one node each; the append order is
the topological order, so a backward pass is a single reverse sweep that
touches every node at most once. Tapes are confined to one thread; tensors
without a tape are immutable values and can be shared freely.

Broadcasting is deliberately narrow: scalars combine with anything, and a
vector may be added to the rows of a matrix (bias). Everything else is a
shape error.
"""

import numpy as np

from . import kernels
from .errors import ContractError, NumericError


class _Node:
    __slots__ = ("op", "input_ids", "backward_fn", "shape")

    def __init__(self, op, input_ids, backward_fn, shape):
        self.op = op
        self.input_ids = input_ids
        self.backward_fn = backward_fn
        self.shape = shape


class Tape:
    """Append-only computation record for one forward pass."""

    def __init__(self):
        self.nodes = []

    def _record(self, op, input_ids, backward_fn, shape):
        self.nodes.append(_Node(op, input_ids, backward_fn, shape))
        return len(self.nodes) - 1


class Tensor:
    """Dense float64 array, optionally linked into a tape node."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape=None, node_id=None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor holds non-finite values")
        self.data = arr
        self.tape = tape
        self.node_id = node_id

    @classmethod
    def param(cls, data, tape):
        """Create a leaf parameter: backward() reports a gradient for it."""
        arr = np.asarray(data, dtype=np.float64)
        node_id = tape._record("param", (), None, arr.shape)
        return cls(arr, tape, node_id)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.size != 1:
            raise ContractError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, recorded={self.node_id is not None})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _common_tape(tensors):
    tape = None
    for t in tensors:
        if isinstance(t, Tensor) and t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise ContractError("operation mixes tensors from two computation records")
    return tape


def _make(op, out_data, inputs, backward_fn):
    """Finish a primitive: finite-check, record on the inputs' tape."""
    if not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite output from operation '{op}'")
    tape = _common_tape(inputs)
    if tape is None:
        return Tensor(out_data)
    ids = tuple(
        t.node_id if isinstance(t, Tensor) and t.tape is tape else None for t in inputs
    )
    node_id = tape._record(op, ids, backward_fn, np.shape(out_data))
    return Tensor(out_data, tape, node_id)


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul shapes do not conform: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _make("matmul", ad @ bd, (a, b), bwd)


def add(a, b):
    """Elementwise add; also scalar + tensor and matrix + row-vector bias."""
    a = _as_tensor(a)
    if np.isscalar(b) or (isinstance(b, np.ndarray) and b.ndim == 0):
        s = float(b)
        return _make("add", a.data + s, (a,), lambda g: (g,))
    b = _as_tensor(b)
    if a.shape == b.shape:
        return _make("add", a.data + b.data, (a, b), lambda g: (g, g))
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return _make(
            "add", a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0))
        )
    if a.size == 1 or b.size == 1:
        out = a.data + b.data

        def bwd(g):
            ga = g if a.size > 1 else np.full(a.shape, g.sum())
            gb = g if b.size > 1 else np.full(b.shape, g.sum())
            return ga, gb

        return _make("add", out, (a, b), bwd)
    raise ContractError(f"add shapes do not conform: {a.shape} + {b.shape}")


def scale(a, factor):
    a = _as_tensor(a)
    factor = float(factor)
    return _make("scale", a.data * factor, (a,), lambda g: (g * factor,))


def mul(a, b):
    """Elementwise multiply of same-shape tensors (or tensor * scalar)."""
    a = _as_tensor(a)
    if np.isscalar(b) or (isinstance(b, np.ndarray) and b.ndim == 0):
        return scale(a, b)
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise ContractError(f"mul shapes do not conform: {a.shape} * {b.shape}")
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a):
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def log(a):
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    ad = a.data
    return _make("log", out, (a,), lambda g: (g / ad,))


def clamp(a, lo, hi):
    """Bound every element into [lo, hi]; zero gradient where clamping bit."""
    a = _as_tensor(a)
    lo, hi = float(lo), float(hi)
    if lo > hi:
        raise ContractError(f"clamp bounds are inverted: [{lo}, {hi}]")
    mask = (a.data >= lo) & (a.data <= hi)
    return _make("clamp", np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def tensor_sum(a):
    a = _as_tensor(a)
    shape = a.shape
    return _make(
        "sum", np.sum(a.data), (a,), lambda g: (np.full(shape, float(g)),)
    )


def tensor_mean(a):
    a = _as_tensor(a)
    shape, n = a.shape, a.size
    return _make(
        "mean", np.mean(a.data), (a,), lambda g: (np.full(shape, float(g) / n),)
    )


def squared_distance(a, b):
    """||a - b||^2 of two equal-length vectors, as a scalar."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise ContractError(
            f"squared-distance needs two equal-length vectors: {a.shape} vs {b.shape}"
        )
    diff = a.data - b.data

    def bwd(g):
        s = 2.0 * float(g) * diff
        return s, -s

    return _make("squared-distance", np.dot(diff, diff), (a, b), bwd)


def row_sqdist(q, c):
    """Squared distance of every row of q (m,d) to the vector c: returns (m,)."""
    q, c = _as_tensor(q), _as_tensor(c)
    cv = c.data.reshape(-1)
    if q.data.ndim != 2 or q.shape[1] != cv.shape[0]:
        raise ContractError(f"row-sqdist shapes do not conform: {q.shape} vs {c.shape}")
    diff = q.data - cv
    c_shape = c.shape

    def bwd(g):
        scaled = 2.0 * diff * g[:, None]
        return scaled, (-scaled.sum(axis=0)).reshape(c_shape)

    return _make("row-sqdist", np.einsum("ij,ij->i", diff, diff), (q, c), bwd)


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape
    out = a.data.reshape(shape)
    return _make("reshape", out, (a,), lambda g: (g.reshape(old),))


def slice_rows(a, lo, hi):
    """Rows lo:hi of a 2-D tensor; backward scatters into zeros."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ContractError(f"slice-rows needs a 2-D tensor, got shape {a.shape}")
    full = a.shape

    def bwd(g):
        out = np.zeros(full)
        out[lo:hi] = g
        return (out,)

    return _make("slice-rows", a.data[lo:hi].copy(), (a,), bwd)


def conv2d(x, w, b):
    """Same-padded stride-1 2-D convolution (NHWC layout, bias per filter)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ContractError(f"conv2d shapes do not conform: {x.shape} * {w.shape}")
    if b.shape != (w.shape[3],):
        raise ContractError(f"conv2d bias shape {b.shape} does not match {w.shape[3]} filters")
    xd, wd = x.data, w.data
    out = kernels.conv2d_forward(xd, wd, b.data)

    def bwd(g):
        g = np.ascontiguousarray(g)
        gx, gw, gb = kernels.conv2d_backward(g, xd, wd)
        return gx, gw, gb

    return _make("conv2d", out, (x, w, b), bwd)


def maxpool2x2(x):
    """2x2 max pooling, floor division of the spatial extents."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ContractError(f"maxpool2x2 needs an NHWC tensor, got shape {x.shape}")
    out, argmax = kernels.maxpool2x2_forward(x.data)
    x_shape = x.shape

    def bwd(g):
        return (kernels.maxpool2x2_backward(np.ascontiguousarray(g), argmax, x_shape),)

    return _make("maxpool2x2", out, (x,), bwd)


def batch_norm_train(x, gamma, beta, eps):
    """Batch-statistics normalization over all axes but the last (channels).

    Returns (tensor, batch_mean, batch_var); the stats are plain arrays for
    the caller's running-average update and take no gradient.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ContractError(f"batch-norm scale/shift must have shape ({c},)")
    axes = tuple(range(x.data.ndim - 1))
    n = x.size // c
    if n < 2:
        raise ContractError("batch norm in train mode needs at least 2 samples per channel")
    mean = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * istd
    out = xhat * gamma.data + beta.data
    gd = gamma.data

    def bwd(g):
        dbeta = g.sum(axis=axes)
        dgamma = (g * xhat).sum(axis=axes)
        dx = (gd * istd) * (g - dbeta / n - xhat * (dgamma / n))
        return dx, dgamma, dbeta

    t = _make("batch-norm", out, (x, gamma, beta), bwd)
    return t, mean, var


def batch_norm_eval(x, gamma, beta, running_mean, running_var, eps):
    """Normalization against fixed running statistics (no batch coupling)."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ContractError(f"batch-norm scale/shift must have shape ({c},)")
    axes = tuple(range(x.data.ndim - 1))
    istd = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean) * istd
    out = xhat * gamma.data + beta.data
    gd = gamma.data

    def bwd(g):
        return g * (gd * istd), (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _make("batch-norm", out, (x, gamma, beta), bwd)


_PUBLIC_PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "scale": scale,
    "relu": relu,
    "tanh": tanh,
    "log": log,
    "clamp": clamp,
    "sum": tensor_sum,
    "mean": tensor_mean,
    "squared-distance": squared_distance,
}


def apply_primitive(kind, *inputs, **kwargs):
    """Dispatch one primitive by name. See _PUBLIC_PRIMITIVES for the kinds."""
    try:
        fn = _PUBLIC_PRIMITIVES[kind]
    except KeyError:
        raise ContractError(f"unknown primitive kind {kind!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(loss, tape=None):
    """Return {node_id: gradient Tensor} for every parameter leaf of the tape.

    Leaves not reachable from the loss get an explicit zero gradient.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is None or loss.node_id is None:
        raise ContractError("loss is not recorded on any computation record")
    if tape is None:
        tape = loss.tape
    elif tape is not loss.tape:
        raise ContractError("loss does not belong to the given computation record")

    grads = {loss.node_id: np.ones(loss.shape)}
    for nid in range(loss.node_id, -1, -1):
        node = tape.nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if node.op == "param":
            grads[nid] = g  # leaves keep their accumulated gradient for the report
            continue
        if node.backward_fn is None:
            continue
        for iid, ig in zip(node.input_ids, node.backward_fn(g)):
            if iid is None or ig is None:
                continue
            held = grads.get(iid)
            grads[iid] = ig if held is None else held + ig

    out = {}
    for nid, node in enumerate(tape.nodes):
        if node.op == "param":
            g = grads.get(nid)
            out[nid] = Tensor(g if g is not None else np.zeros(node.shape))
    return out


def grad_check(f, point, step):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps one tensor to a scalar tensor. The error at coordinate i is
    |analytic_i - central_i| / max(1, |central_i|); the max over i is returned.
    """
    if step <= 0:
        raise ContractError(f"grad_check step must be positive, got {step}")
    x0 = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)

    tape = Tape()
    p = Tensor.param(x0, tape)
    out = f(p)
    if out.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    analytic = backward(out, tape)[p.node_id].data

    def probe(x):
        try:
            v = f(Tensor(x))
        except NumericError as exc:
            raise NumericError(f"function non-finite at probe: {exc}") from exc
        return float(v.data.reshape(-1)[0])

    worst = 0.0
    flat = x0.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        try:
            flat[i] = saved + step
            fp = probe(x0)
            flat[i] = saved - step
            fm = probe(x0)
        except NumericError as exc:
            raise NumericError(f"coordinate {i}: {exc}") from exc
        finally:
            flat[i] = saved
        central = (fp - fm) / (2.0 * step)
        err = abs(analytic.reshape(-1)[i] - central) / max(1.0, abs(central))
        worst = max(worst, err)
    return worst
