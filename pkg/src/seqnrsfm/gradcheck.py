"""Central finite-difference validation of every differentiable operation.

Each registered check samples random inputs, reduces the op output to a
scalar through a fixed random weighting, and compares the tape gradient
against central differences computed in float64. The whole registry backs
both the test suite and the `gradcheck` CLI command.
"""

import numpy as np

from . import diffcore as dc
from . import geometry
from . import losses
from . import model as mdl
from .diffcore import Tape, Var

FD_STEP = 1e-5
DEFAULT_TOL = 1e-4
NUCLEAR_TOL = 1e-3


def numerical_grad(f, x, h=FD_STEP):
    """Central-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(analytic, numeric):
    """Max absolute deviation over the largest numeric-gradient magnitude."""
    num = max(np.max(np.abs(a - n)) for a, n in zip(analytic, numeric))
    den = max(np.max(np.abs(n)) for n in numeric)
    return float(num) / max(float(den), 1e-8)


def check_scalar_fn(build, inputs, h=FD_STEP):
    """Compare tape gradients of build(*vars) against finite differences.

    build must return a scalar Var; inputs is a list of float64 arrays.
    Returns the relative error across all inputs.
    """
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
    tape = Tape()
    vs = [Var(x.copy(), tape) for x in inputs]
    out = build(*vs)
    dc.backward(tape, out)
    analytic = [np.zeros_like(x) if v.grad is None else v.grad
                for x, v in zip(inputs, vs)]

    numeric = []
    for i, x in enumerate(inputs):
        def f(xi, i=i):
            args = [a.copy() for a in inputs]
            args[i] = xi
            t = Tape()
            return float(build(*[Var(a, t) for a in args]).value)
        numeric.append(numerical_grad(f, x, h))
    return relative_error(analytic, numeric)


def _weighted(op_out, weight):
    return dc.sum(dc.mul(op_out, dc.constant(weight)))


def _rand(rng, *shape):
    return rng.normal(size=shape)


# --- individual op checks ---------------------------------------------------

def _check_add(rng):
    w = _rand(rng, 4, 5)
    return check_scalar_fn(lambda a, b: _weighted(dc.add(a, b), w),
                           [_rand(rng, 4, 5), _rand(rng, 4, 5)])


def _check_add_bias(rng):
    w = _rand(rng, 4, 5)
    return check_scalar_fn(lambda a, b: _weighted(dc.add_bias(a, b), w),
                           [_rand(rng, 4, 5), _rand(rng, 5)])


def _check_sub(rng):
    w = _rand(rng, 3, 6)
    return check_scalar_fn(lambda a, b: _weighted(dc.sub(a, b), w),
                           [_rand(rng, 3, 6), _rand(rng, 3, 6)])


def _check_mul(rng):
    w = _rand(rng, 3, 4)
    return check_scalar_fn(lambda a, b: _weighted(dc.mul(a, b), w),
                           [_rand(rng, 3, 4), _rand(rng, 3, 4)])


def _check_scale(rng):
    w = _rand(rng, 4, 3)
    c = float(rng.uniform(-2, 2))
    return check_scalar_fn(lambda a: _weighted(dc.scale(a, c), w),
                           [_rand(rng, 4, 3)])


def _check_matmul(rng):
    w = _rand(rng, 4, 6)
    return check_scalar_fn(lambda a, b: _weighted(dc.matmul(a, b), w),
                           [_rand(rng, 4, 5), _rand(rng, 5, 6)])


def _check_transpose(rng):
    w = _rand(rng, 5, 3)
    return check_scalar_fn(lambda a: _weighted(dc.transpose(a), w),
                           [_rand(rng, 3, 5)])


def _check_concat_last(rng):
    w = _rand(rng, 3, 9)
    return check_scalar_fn(
        lambda a, b, c: _weighted(dc.concat_last([a, b, c]), w),
        [_rand(rng, 3, 2), _rand(rng, 3, 4), _rand(rng, 3, 3)])


def _check_slice_rows(rng):
    w = _rand(rng, 2, 4)
    return check_scalar_fn(lambda a: _weighted(dc.slice_rows(a, 1, 3), w),
                           [_rand(rng, 5, 4)])


def _check_row(rng):
    w = _rand(rng, 4)
    return check_scalar_fn(lambda a: _weighted(dc.row(a, 2), w),
                           [_rand(rng, 5, 4)])


def _check_slice_cols(rng):
    w = _rand(rng, 5, 2)
    return check_scalar_fn(lambda a: _weighted(dc.slice_cols(a, 1, 3), w),
                           [_rand(rng, 5, 4)])


def _check_reshape(rng):
    w = _rand(rng, 3, 4)
    return check_scalar_fn(lambda a: _weighted(dc.reshape(a, (3, 4)), w),
                           [_rand(rng, 12)])


def _check_sum(rng):
    return check_scalar_fn(lambda a: dc.sum(a), [_rand(rng, 4, 5)])


def _check_mean(rng):
    return check_scalar_fn(lambda a: dc.mean(a), [_rand(rng, 4, 5)])


def _check_relu(rng):
    # keep samples away from the kink so finite differences are valid
    x = _rand(rng, 4, 5)
    x = np.where(np.abs(x) < 1e-2, x + np.sign(x + 1e-12) * 0.1, x)
    w = _rand(rng, 4, 5)
    return check_scalar_fn(lambda a: _weighted(dc.relu(a), w), [x])


def _check_softmax(rng):
    w = _rand(rng, 3, 5)
    return check_scalar_fn(lambda a: _weighted(dc.softmax(a), w),
                           [_rand(rng, 3, 5)])


def _check_sin(rng):
    w = _rand(rng, 4, 3)
    return check_scalar_fn(lambda a: _weighted(dc.sin(a), w),
                           [_rand(rng, 4, 3)])


def _check_square(rng):
    w = _rand(rng, 4, 3)
    return check_scalar_fn(lambda a: _weighted(dc.square(a), w),
                           [_rand(rng, 4, 3)])


def _check_sqrt(rng):
    w = _rand(rng, 4, 3)
    x = rng.uniform(0.5, 2.0, size=(4, 3))
    return check_scalar_fn(lambda a: _weighted(dc.sqrt(a), w), [x])


def _check_rodrigues(rng):
    w = _rand(rng, 3, 3)
    v = rng.normal(size=3)
    v *= rng.uniform(0.0, np.pi) / max(np.linalg.norm(v), 1e-12)
    return check_scalar_fn(lambda a: _weighted(dc.rodrigues(a), w), [v])


def _check_nuclear_norm(rng):
    # well-separated spectrum keeps the subgradient a true gradient
    u, _ = np.linalg.qr(rng.normal(size=(8, 8)))
    v, _ = np.linalg.qr(rng.normal(size=(12, 12)))
    s = np.linspace(3.0, 1.0, 8) + rng.uniform(0, 0.1, 8)
    x = u @ np.diag(s) @ v[:8]
    return check_scalar_fn(lambda a: dc.nuclear_norm(a), [x])


def _check_composite_reuse(rng):
    # a value feeding two paths: accumulation must add both contributions
    w = _rand(rng, 4, 4)

    def build(a, b):
        prod = dc.matmul(a, b)
        left = _weighted(dc.relu(prod), w)
        right = dc.sum(dc.square(prod))
        return dc.add(left, dc.scale(right, 0.5))

    return check_scalar_fn(build, [_rand(rng, 4, 3), _rand(rng, 3, 4)])


def _tiny_config():
    return mdl.ModelConfig(points=2, seq_max=3, enc_width=6, enc_layers=2,
                           bottleneck=3, embed_dim=4, heads=2, dec_width=6,
                           canon_width=6)


def _check_model_loss(rng):
    """Full forward + total loss versus finite differences on every leaf."""
    cfg = _tiny_config()
    params = mdl.init_model(cfg, rng, dtype=np.float64)
    names = list(param_names(params))
    arrays = [leaf.copy() for _, leaf in mdl.iter_params(params)]
    w = geometry.center_frames(rng.normal(size=(3, 2, cfg.points)))
    rots = [geometry.random_rotation(rng) for _ in range(2)]
    weights = losses.LossWeights(alpha=0.05, lam=0.1, m_samples=2)

    def build(*leaves):
        it = iter(leaves)
        bound = mdl.map_params(params, lambda a: next(it))
        rotations, shapes, _ = mdl.forward_sequence(w, bound, cfg)
        total, _ = losses.total_loss(w, rotations, shapes, weights,
                                     bound.canon, None, cano_rotations=rots)
        return total

    return check_scalar_fn(build, arrays)


def param_names(params):
    for name, _ in mdl.iter_params(params):
        yield name


CHECKS = [
    ("add", _check_add, DEFAULT_TOL),
    ("add_bias", _check_add_bias, DEFAULT_TOL),
    ("sub", _check_sub, DEFAULT_TOL),
    ("mul", _check_mul, DEFAULT_TOL),
    ("scale", _check_scale, DEFAULT_TOL),
    ("matmul", _check_matmul, DEFAULT_TOL),
    ("transpose", _check_transpose, DEFAULT_TOL),
    ("concat_last", _check_concat_last, DEFAULT_TOL),
    ("slice_rows", _check_slice_rows, DEFAULT_TOL),
    ("row", _check_row, DEFAULT_TOL),
    ("slice_cols", _check_slice_cols, DEFAULT_TOL),
    ("reshape", _check_reshape, DEFAULT_TOL),
    ("sum", _check_sum, DEFAULT_TOL),
    ("mean", _check_mean, DEFAULT_TOL),
    ("relu", _check_relu, DEFAULT_TOL),
    ("softmax", _check_softmax, DEFAULT_TOL),
    ("sin", _check_sin, DEFAULT_TOL),
    ("square", _check_square, DEFAULT_TOL),
    ("sqrt", _check_sqrt, DEFAULT_TOL),
    ("rodrigues", _check_rodrigues, DEFAULT_TOL),
    ("nuclear_norm", _check_nuclear_norm, NUCLEAR_TOL),
    ("composite_reuse", _check_composite_reuse, DEFAULT_TOL),
    ("model_total_loss", _check_model_loss, DEFAULT_TOL),
]


def run_all(trials=20, seed=0, only=None):
    """Run every registered check `trials` times.

    Returns a list of (name, max_rel_error, tolerance, passed).
    """
    results = []
    for name, fn, tol in CHECKS:
        if only is not None and name != only:
            continue
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(trials):
            worst = max(worst, fn(rng))
        results.append((name, worst, tol, worst < tol))
    if only is not None and not results:
        raise ValueError("unknown op %r" % only)
    return results
