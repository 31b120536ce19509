"""Minimal reverse-mode differentiation on dense numpy arrays.

A Tape records operations in creation order (parents always precede their
consumers, so the record order is already topological). backward() walks the
record in reverse, accumulating vector-Jacobian products into each Var's
grad. Only the operations the shape/motion model and its losses need are
provided; every one of them is covered by the central finite-difference
suite in gradcheck.

Graphs are dtype-generic: training runs float32, the gradient-check suite
runs the identical graph in float64.
"""

import numpy as np

_ROD_SMALL = 1e-8        # series switch for the Rodrigues value coefficients
_ROD_JAC_SMALL = 1e-4    # wider switch for the derivative coefficients


class Tape:
    """Ordered op record. One tape per logical execution stream."""

    def __init__(self):
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def reset(self):
        self._nodes.clear()


class Var:
    """A value in the graph. grad is materialized lazily by backward()."""

    __slots__ = ("value", "grad", "tape")

    def __init__(self, value, tape=None):
        self.value = np.asarray(value)
        self.grad = None
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return "Var(shape=%s, dtype=%s)" % (self.value.shape, self.value.dtype)

    # operator sugar; python scalars multiply via scale()
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return NotImplemented

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(value):
    """Wrap an array as a graph input that tracks no gradient of its own."""
    return Var(value, tape=None)


def _merge_tape(op, *vars_):
    tape = None
    for v in vars_:
        if v.tape is None:
            continue
        if tape is None:
            tape = v.tape
        elif tape is not v.tape:
            raise ValueError("%s: inputs recorded on different tapes" % op)
    return tape


def _record(op, value, parents, backward_fn):
    tape = _merge_tape(op, *parents)
    out = Var(value, tape)
    if tape is not None:
        tape._nodes.append((out, parents, backward_fn))
    return out


def backward(tape, loss):
    """Reverse traversal: populate grads of everything loss depends on.

    loss must be scalar. The tape is reset afterwards; leaf grads survive.
    """
    if loss.value.shape != ():
        raise ValueError(
            "backward needs a scalar loss, got shape %s" % (loss.value.shape,))
    loss.grad = np.ones((), dtype=loss.value.dtype)
    for out, parents, backward_fn in reversed(tape._nodes):
        g = out.grad
        if g is None:
            continue
        for parent, pg in zip(parents, backward_fn(g)):
            if pg is None:
                continue
            if parent.grad is not None:
                parent.grad += pg
            elif pg is g or pg.base is not None:
                # views of g or g itself must not be adopted in place
                parent.grad = np.array(pg, dtype=parent.value.dtype)
            elif pg.dtype != parent.value.dtype:
                parent.grad = pg.astype(parent.value.dtype)
            else:
                parent.grad = pg
    tape.reset()


# ---------------------------------------------------------------------------
# core ops


def _require(cond, op, *shapes):
    if not cond:
        raise ValueError("%s: incompatible shapes %s" % (op, list(shapes)))


def add(a, b):
    _require(a.value.shape == b.value.shape, "add", a.value.shape, b.value.shape)
    return _record("add", a.value + b.value, (a, b), lambda g: (g, g))


def add_bias(m, b):
    """Row-broadcast bias: (L, N) + (N,)."""
    _require(m.value.ndim == 2 and b.value.shape == (m.value.shape[1],),
             "add_bias", m.value.shape, b.value.shape)
    return _record("add_bias", m.value + b.value, (m, b),
                   lambda g: (g, g.sum(axis=0)))


def sub(a, b):
    _require(a.value.shape == b.value.shape, "sub", a.value.shape, b.value.shape)
    return _record("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    _require(a.value.shape == b.value.shape, "mul", a.value.shape, b.value.shape)
    return _record("mul", a.value * b.value, (a, b),
                   lambda g: (g * b.value, g * a.value))


def scale(a, c):
    c = float(c)
    return _record("scale", a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    _require(a.value.ndim == 2 and b.value.ndim == 2
             and a.value.shape[1] == b.value.shape[0],
             "matmul", a.value.shape, b.value.shape)
    return _record("matmul", a.value @ b.value, (a, b),
                   lambda g: (g @ b.value.T, a.value.T @ g))


def transpose(a):
    _require(a.value.ndim == 2, "transpose", a.value.shape)
    return _record("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))


def concat_last(parts):
    parts = list(parts)
    _require(len(parts) >= 1, "concat_last")
    widths = [p.value.shape[-1] for p in parts]
    base = parts[0].value.shape[:-1]
    _require(all(p.value.shape[:-1] == base for p in parts), "concat_last",
             *[p.value.shape for p in parts])
    value = np.concatenate([p.value for p in parts], axis=-1)

    def backward_fn(g):
        out, start = [], 0
        for w in widths:
            out.append(g[..., start:start + w])
            start += w
        return tuple(out)

    return _record("concat_last", value, tuple(parts), backward_fn)


def slice_rows(a, start, stop):
    _require(a.value.ndim >= 1, "slice_rows", a.value.shape)

    def backward_fn(g):
        z = np.zeros_like(a.value)
        z[start:stop] = g
        return (z,)

    return _record("slice_rows", a.value[start:stop].copy(), (a,), backward_fn)


def row(a, i):
    _require(a.value.ndim == 2, "row", a.value.shape)

    def backward_fn(g):
        z = np.zeros_like(a.value)
        z[i] = g
        return (z,)

    return _record("row", a.value[i].copy(), (a,), backward_fn)


def slice_cols(a, start, stop):
    _require(a.value.ndim >= 1, "slice_cols", a.value.shape)

    def backward_fn(g):
        z = np.zeros_like(a.value)
        z[..., start:stop] = g
        return (z,)

    return _record("slice_cols", a.value[..., start:stop].copy(), (a,),
                   backward_fn)


def reshape(a, shape):
    orig = a.value.shape
    return _record("reshape", a.value.reshape(shape).copy(), (a,),
                   lambda g: (g.reshape(orig),))


def sum(a):
    value = np.asarray(a.value.sum(), dtype=a.value.dtype)
    return _record("sum", value, (a,),
                   lambda g: (np.broadcast_to(g, a.value.shape).copy(),))


def mean(a):
    n = a.value.size
    value = np.asarray(a.value.mean(), dtype=a.value.dtype)
    return _record("mean", value, (a,),
                   lambda g: (np.broadcast_to(g / n, a.value.shape).copy(),))


def relu(a):
    mask = a.value > 0
    return _record("relu", np.where(mask, a.value, 0), (a,),
                   lambda g: (g * mask,))


def softmax(a):
    """Softmax over the last axis; rows of the output sum to 1."""
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    return _record("softmax", y, (a,),
                   lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def sin(a):
    return _record("sin", np.sin(a.value), (a,),
                   lambda g: (g * np.cos(a.value),))


def square(a):
    return _record("square", np.square(a.value), (a,),
                   lambda g: (g * 2.0 * a.value,))


def sqrt(a):
    y = np.sqrt(a.value)
    return _record("sqrt", y, (a,), lambda g: (g * 0.5 / y,))


# ---------------------------------------------------------------------------
# Rodrigues map and nuclear norm


def _skew(v, dtype):
    k = np.zeros((3, 3), dtype=dtype)
    k[0, 1] = -v[2]
    k[0, 2] = v[1]
    k[1, 0] = v[2]
    k[1, 2] = -v[0]
    k[2, 0] = -v[1]
    k[2, 1] = v[0]
    return k


_E = [np.array([[0., 0., 0.], [0., 0., -1.], [0., 1., 0.]]),
      np.array([[0., 0., 1.], [0., 0., 0.], [-1., 0., 0.]]),
      np.array([[0., -1., 0.], [1., 0., 0.], [0., 0., 0.]])]


def _rodrigues_value(v):
    theta = float(np.linalg.norm(v))
    k = _skew(v, v.dtype)
    if theta < _ROD_SMALL:
        a = 1.0 - theta * theta / 6.0
        b = 0.5 - theta * theta / 24.0
    else:
        a = float(np.sin(theta)) / theta
        b = (1.0 - float(np.cos(theta))) / (theta * theta)
    return np.eye(3, dtype=v.dtype) + a * k + b * (k @ k)


def rodrigues(v):
    """Axis-angle Var (3,) -> rotation Var (3, 3) via the exponential map.

    Backward applies the exact closed-form Jacobian; below a small angle the
    derivative coefficients switch to their series expansions, which avoids
    the cancellation the exact quotients suffer near zero.
    """
    _require(v.value.shape == (3,), "rodrigues", v.value.shape)
    value = _rodrigues_value(v.value)

    def backward_fn(g):
        v64 = v.value.astype(np.float64)
        g64 = g.astype(np.float64)
        theta = float(np.linalg.norm(v64))
        k = _skew(v64, np.float64)
        kk = k @ k
        t2 = theta * theta
        if theta < _ROD_JAC_SMALL:
            a = 1.0 - t2 / 6.0
            b = 0.5 - t2 / 24.0
            ap = -1.0 / 3.0 + t2 / 30.0        # (da/dtheta)/theta
            bp = -1.0 / 12.0 + t2 / 180.0      # (db/dtheta)/theta
        else:
            s, c = np.sin(theta), np.cos(theta)
            a = s / theta
            b = (1.0 - c) / t2
            ap = (theta * c - s) / (t2 * theta)
            bp = (theta * s - 2.0 * (1.0 - c)) / (t2 * t2)
        grad = np.empty(3)
        for i in range(3):
            e = _E[i]
            d = (v64[i] * ap) * k + a * e + (v64[i] * bp) * kk \
                + b * (e @ k + k @ e)
            grad[i] = np.sum(g64 * d)
        return (grad.astype(v.value.dtype),)

    return _record("rodrigues", value, (v,), backward_fn)


def nuclear_norm(m):
    """Sum of singular values; backward is the U V^T subgradient."""
    _require(m.value.ndim == 2, "nuclear_norm", m.value.shape)
    try:
        u, s, vt = np.linalg.svd(m.value, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(
            "nuclear_norm: SVD failed on %s matrix (fro=%.3e, finite=%s)"
            % (m.value.shape, np.linalg.norm(m.value),
               bool(np.all(np.isfinite(m.value))))) from exc
    value = np.asarray(s.sum(), dtype=m.value.dtype)
    return _record("nuclear_norm", value, (m,), lambda g: (g * (u @ vt),))


# ---------------------------------------------------------------------------
# optimizer


def adam_init(params):
    """Fresh Adam state for a dict of parameter arrays."""
    return {
        "step": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


try:
    import numba as _numba

    @_numba.njit(parallel=True, cache=True)
    def _adam_kernel(p, g, m, v, lr, c1, beta1, beta2, c2, eps):
        for i in _numba.prange(p.size):
            gi = g[i]
            mi = beta1 * m[i] + (1.0 - beta1) * gi
            vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
            m[i] = mi
            v[i] = vi
            p[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
except ImportError:  # pragma: no cover - numba is a normal install here
    def _adam_kernel(p, g, m, v, lr, c1, beta1, beta2, c2, eps):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on params and state.

    p -= lr * (m / (1-beta1^t)) / (sqrt(v / (1-beta2^t)) + eps), fused per
    element so the big parameter sets stay memory-bound, not allocation
    bound.
    """
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError("adam_step: grad shape %s != param shape %s (%s)"
                             % (g.shape, p.shape, name))
        _adam_kernel(p.reshape(-1), np.ascontiguousarray(g).reshape(-1),
                     state["m"][name].reshape(-1),
                     state["v"][name].reshape(-1),
                     float(lr), c1, beta1, beta2, c2, eps)
    return params, state
