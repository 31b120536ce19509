"""Numerical verification of the reshuffled-shape rank behaviour.

The oracle checks, by direct SVD rank counting on synthetic strict-rank
data, that a per-frame rotation ambiguity leaves the reshuffled rank
unchanged only when it is one global rotation: with s independent rotation
components the rank lands in ((s-1)K, sK] and saturates at 9K, the
dimension of the span of SO(3) inside the 9 basis rotations.
"""

import csv
import io
from dataclasses import dataclass, asdict

import numpy as np

from . import data as data_mod
from . import geometry


def m1(x, y, z):
    return np.array([[x, y, -z], [y, z, -x], [z, x, -y]], dtype=np.float64)


def m2(x, y, z):
    return np.array([[-y, z, x], [-z, x, y], [-x, y, z]], dtype=np.float64)


def m3(x, y, z):
    return np.array([[z, -x, y], [x, -y, z], [y, -z, x]], dtype=np.float64)


def basis_rotations():
    """The nine signed-permutation rotations spanning all of SO(3) linearly.

    Order: M1, M2, M3 each evaluated at (1,0,0), (0,1,0), (0,0,1).
    """
    out = []
    for m in (m1, m2, m3):
        out.append(m(1.0, 0.0, 0.0))
        out.append(m(0.0, 1.0, 0.0))
        out.append(m(0.0, 0.0, 1.0))
    return out


def decompose_rotation(r):
    """Coefficients of a rotation over the nine basis rotations.

    Uses the explicit half-entry-sum formulas; reconstruct() applied to the
    result reproduces r exactly for any rotation matrix.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValueError("expected a 3x3 rotation, got %s" % (r.shape,))
    return 0.5 * np.array([
        r[0, 0] + r[2, 1], r[0, 1] + r[1, 0], r[1, 1] + r[2, 0],
        r[0, 2] + r[1, 1], r[1, 2] + r[2, 1], r[0, 1] + r[2, 2],
        r[1, 0] + r[2, 2], r[0, 2] + r[2, 0], r[0, 0] + r[1, 2],
    ])


def reconstruct(coeffs):
    """Linear combination of the nine basis rotations."""
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(9)
    out = np.zeros((3, 3))
    for c, b in zip(coeffs, basis_rotations()):
        out += c * b
    return out


def numeric_rank(m, rel_tol=1e-8):
    """Count singular values above rel_tol times the largest one."""
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        return 0
    try:
        s = np.linalg.svd(m, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("numeric_rank: SVD failed on %s matrix"
                           % (m.shape,)) from exc
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def strict_rank_check(s_sharp, eps=0.1, trials=50, rng=None, rel_tol=1e-8):
    """True if the rank survives removal of any eps-fraction row batch.

    Each trial removes floor(eps*F) uniformly sampled rows and re-counts the
    rank; vacuously true when the batch would be empty.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must be in (0, 1)")
    s_sharp = np.asarray(s_sharp, dtype=np.float64)
    f = s_sharp.shape[0]
    drop = int(eps * f)
    if drop == 0:
        return True
    rng = np.random.default_rng(0) if rng is None else rng
    full = numeric_rank(s_sharp, rel_tol)
    for _ in range(trials):
        removed = rng.choice(f, size=drop, replace=False)
        keep = np.setdiff1d(np.arange(f), removed)
        if numeric_rank(s_sharp[keep], rel_tol) < full:
            return False
    return True


def sample_independent_rotations(s, rng):
    """s random rotations whose vectorizations are linearly independent.

    Rejection-sampled for s <= 9 (the vectorized rotations span a
    9-dimensional space, so more than 9 cannot be independent).
    """
    if s <= 9:
        for _ in range(100):
            rots = [geometry.random_rotation(rng) for _ in range(s)]
            vecs = np.stack([r.reshape(9) for r in rots])
            if numeric_rank(vecs, 1e-6) == s:
                return rots
        raise RuntimeError("failed to sample %d independent rotations" % s)
    return [geometry.random_rotation(rng) for _ in range(s)]


@dataclass
class RankReport:
    rank_k: int
    frames: int
    points: int
    components: int
    trials: int
    rel_tol: float
    expected_low: int        # inclusive lower bound on the rotated rank
    expected_high: int       # inclusive upper bound
    base_ranks: list
    rotated_ranks: list
    violations: int

    def to_json(self):
        return asdict(self)


def expected_rank_bounds(rank_k, components):
    """Inclusive [low, high] bounds on rank(g(Q^-1 S)) for strict-rank-K S."""
    s = components
    if s == 1:
        return rank_k, rank_k
    if s <= 9:
        return (s - 1) * rank_k + 1, s * rank_k
    return 9 * rank_k, 9 * rank_k


def theorem1_experiment(rank_k, frames, points, components, trials, rng,
                        rel_tol=1e-8):
    """Monte-Carlo rank experiment.

    Per trial: build a strict-rank-K synthetic sequence (noise free), apply
    an ambiguity with `components` independent rotation blocks (each block
    covering at least K frames), and count the reshuffled ranks before and
    after. Violations are trials whose ranks leave the proven bounds.
    """
    if 9 * rank_k > min(frames, 3 * points):
        raise ValueError("need 9K <= min(F, 3P) so saturation is observable")
    if components < 1:
        raise ValueError("components must be >= 1")
    if frames // components < rank_k:
        raise ValueError("each rotation component needs at least K frames")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)

    low, high = expected_rank_bounds(rank_k, components)
    base_ranks, rotated_ranks = [], []
    violations = 0
    bounds = np.linspace(0, frames, components + 1).astype(int)
    for _ in range(trials):
        spec = data_mod.SyntheticSpec(
            frames=frames, points=points, rank=rank_k,
            rotation_mode="random", noise_sigma=0.0,
            seed=int(rng.integers(2 ** 62)))
        stacked = data_mod.synth_sequence(spec).stacked_shapes()

        comps = sample_independent_rotations(components, rng)
        q = []
        for c in range(components):
            q.extend([comps[c]] * (bounds[c + 1] - bounds[c]))

        r0 = numeric_rank(geometry.reshuffle(stacked), rel_tol)
        r1 = numeric_rank(
            geometry.reshuffle(geometry.apply_ambiguity(stacked, q)), rel_tol)
        base_ranks.append(r0)
        rotated_ranks.append(r1)
        if r0 != rank_k or not low <= r1 <= high:
            violations += 1

    return RankReport(rank_k=rank_k, frames=frames, points=points,
                      components=components, trials=trials, rel_tol=rel_tol,
                      expected_low=low, expected_high=high,
                      base_ranks=base_ranks, rotated_ranks=rotated_ranks,
                      violations=violations)


def rank_report_csv(reports):
    """Summary table for a sweep over component counts."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["s", "min_rank", "max_rank", "expected_low",
                     "expected_high", "violations"])
    for rep in reports:
        writer.writerow([rep.components, min(rep.rotated_ranks),
                         max(rep.rotated_ranks), rep.expected_low,
                         rep.expected_high, rep.violations])
    return buf.getvalue()
