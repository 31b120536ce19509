"""Self-supervised training objective.

Three terms: squared-Frobenius reprojection error, nuclear norm of the
reshuffled shape chunk, and the canonicalization loss driving rotation
invariance of the recovered shapes. The weighted sum is the training loss.
"""

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import geometry
from . import model as mdl


@dataclass
class LossWeights:
    alpha: float = 0.01      # nuclear-norm weight
    lam: float = 0.003       # canonicalization weight
    m_samples: int = 4       # random rotations per canonicalization pass

    def __post_init__(self):
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.m_samples < 1:
            raise ValueError("m_samples must be >= 1")


def loss_data(w, rotations, shapes):
    """Mean squared-Frobenius reprojection error over frames.

    w: (L, 2, P) observations; rotations: list of L (3, 3) Vars; shapes:
    (L, 3P) Var of reshuffled rows. Each frame is unshuffled to (3, P),
    projected by the first two rotation rows, and compared to w.
    """
    w = np.asarray(w)
    l = w.shape[0]
    p = w.shape[2]
    if len(rotations) != l or shapes.value.shape != (l, 3 * p):
        raise ValueError(
            "loss_data: mismatched sizes w=%s rotations=%d shapes=%s"
            % (w.shape, len(rotations), shapes.value.shape))
    dtype = shapes.value.dtype
    acc = None
    for i in range(l):
        s_i = dc.reshape(dc.row(shapes, i), (3, p))
        r2 = dc.slice_rows(rotations[i], 0, 2)
        proj = dc.matmul(r2, s_i)
        resid = dc.sub(dc.constant(w[i].astype(dtype)), proj)
        term = dc.sum(dc.square(resid))
        acc = term if acc is None else dc.add(acc, term)
    return dc.scale(acc, 1.0 / l)


def loss_nuclear(shapes):
    """Nuclear norm of the (L, 3P) reshuffled shape chunk."""
    return dc.nuclear_norm(shapes)


def loss_cano(shapes, canon, m, rng, rotations=None):
    """Canonicalization loss: mean squared error between each shape row and
    the canonicalized version of its randomly rotated copy.

    Fresh rotations are drawn from rng each call unless an explicit list is
    supplied (used by the gradient-check suite for reproducibility).
    """
    if rotations is None:
        if m < 1:
            raise ValueError("m_samples must be >= 1")
        rotations = [geometry.random_rotation(rng) for _ in range(m)]
    l = shapes.value.shape[0]
    acc = None
    for canoned in mdl.canonicalize(shapes, rotations, canon):
        term = dc.sum(dc.square(dc.sub(shapes, canoned)))
        acc = term if acc is None else dc.add(acc, term)
    return dc.scale(acc, 1.0 / (l * len(rotations)))


def total_loss(w, rotations, shapes, weights, canon, rng, cano_rotations=None):
    """Weighted sum of the three terms plus a per-term breakdown.

    Returns (total Var, breakdown dict). Breakdown holds the raw term
    values and the weighted contributions actually summed into the total.
    """
    def checked(name, term):
        if not np.isfinite(term.value):
            raise RuntimeError("total_loss: %s is non-finite" % name)
        return term

    data = checked("loss_data", loss_data(w, rotations, shapes))
    nuc = checked("loss_norm", loss_nuclear(shapes))
    cano = checked("loss_cano", loss_cano(shapes, canon, weights.m_samples,
                                          rng, cano_rotations))
    total = dc.add(dc.add(data, dc.scale(nuc, weights.alpha)),
                   dc.scale(cano, weights.lam))
    breakdown = {
        "loss_data": float(data.value),
        "loss_norm": float(nuc.value),
        "loss_cano": float(cano.value),
        "weighted_norm": float(weights.alpha * nuc.value),
        "weighted_cano": float(weights.lam * cano.value),
        "total": float(total.value),
    }
    return total, breakdown
