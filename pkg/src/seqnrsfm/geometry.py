"""Exact SO(3) and shape-layout primitives.

Everything here is plain float64 numpy, non-differentiable, and pure: these
functions are the reference geometry shared by the synthetic data generator,
the evaluation metrics, and the rank oracle.

Conventions:
- A stacked shape is a (3F, P) matrix: frame i occupies rows 3i..3i+2.
- A reshuffled shape is an (F, 3P) matrix: row i is the concatenation
  [x-coords | y-coords | z-coords] of frame i.
- Rotations act on column vectors: p' = R @ p.
"""

import numpy as np

SMALL_ANGLE = 1e-8


def skew(v):
    """Cross-product matrix [v]_x with [v]_x @ u = v x u."""
    v = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def rodrigues_exp(v):
    """Axis-angle vector (3,) -> rotation matrix exp([v]_x).

    Closed form R = I + sin(t)/t K + (1-cos(t))/t^2 K^2 with t = |v| and
    K = [v]_x.  Below SMALL_ANGLE the sin/cos coefficients switch to their
    series expansions so the zero-angle case is exact.
    """
    v = np.asarray(v, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(v))
    k = skew(v)
    if theta < SMALL_ANGLE:
        a = 1.0 - theta * theta / 6.0
        b = 0.5 - theta * theta / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def is_rotation(m, tol=1e-10):
    """True if m is orthonormal with determinant +1 within tol."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        return False
    ortho = np.max(np.abs(m.T @ m - np.eye(3)))
    return bool(ortho <= tol and abs(np.linalg.det(m) - 1.0) <= tol)


def quat_to_rotation(q):
    """Unit quaternion [w, x, y, z] -> rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.sqrt(w * w + x * x + y * y + z * z)
    w, x, y, z = w / n, x / n, y / n, z / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_quaternion(rng):
    """Uniform unit quaternion (Haar measure on SO(3) after conversion)."""
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_rotation(rng):
    """Rotation matrix drawn uniformly over SO(3)."""
    return quat_to_rotation(random_quaternion(rng))


def slerp(q0, q1, t):
    """Spherical interpolation between unit quaternions, shortest arc."""
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-10:
        q = q0 + t * (q1 - q0)
        return q / np.linalg.norm(q)
    omega = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(omega)
    return (np.sin((1.0 - t) * omega) * q0 + np.sin(t * omega) * q1) / s


def project_orthographic(r, s_frame):
    """Orthographic camera: (2, P) image of a (3, P) frame under rotation r."""
    r = np.asarray(r, dtype=np.float64)
    s_frame = np.asarray(s_frame, dtype=np.float64)
    if r.shape != (3, 3) or s_frame.ndim != 2 or s_frame.shape[0] != 3:
        raise ValueError(
            "shape/rotation size conflict: rotation %s vs frame %s"
            % (r.shape, s_frame.shape))
    return (r @ s_frame)[:2]


def reshuffle(s):
    """Stacked (3F, P) shape -> reshuffled (F, 3P) shape.

    Row i of the output is [x-row | y-row | z-row] of frame i.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] % 3 != 0:
        raise ValueError("stacked shape must be (3F, P), got %s" % (s.shape,))
    f = s.shape[0] // 3
    p = s.shape[1]
    return s.reshape(f, 3 * p).copy()


def unshuffle(s_sharp):
    """Reshuffled (F, 3P) shape -> stacked (3F, P) shape. Exact inverse."""
    s_sharp = np.asarray(s_sharp, dtype=np.float64)
    if s_sharp.ndim != 2 or s_sharp.shape[1] % 3 != 0:
        raise ValueError(
            "reshuffled shape needs column count divisible by 3, got %s"
            % (s_sharp.shape,))
    f = s_sharp.shape[0]
    p = s_sharp.shape[1] // 3
    return s_sharp.reshape(3 * f, p).copy()


def frames_of(s):
    """View a stacked (3F, P) shape as (F, 3, P)."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[0] % 3 != 0:
        raise ValueError("stacked shape must be (3F, P), got %s" % (s.shape,))
    return s.reshape(-1, 3, s.shape[1])


def apply_ambiguity(s, q):
    """Replace each frame S_i of a stacked shape by Q_i^-1 S_i = Q_i^T S_i.

    q is a sequence of per-frame rotation matrices, one per frame.
    """
    s = np.asarray(s, dtype=np.float64)
    frames = frames_of(s)
    if len(q) != frames.shape[0]:
        raise ValueError(
            "ambiguity count %d does not match frame count %d"
            % (len(q), frames.shape[0]))
    out = np.empty_like(frames)
    for i, qi in enumerate(q):
        out[i] = np.asarray(qi, dtype=np.float64).T @ frames[i]
    return out.reshape(s.shape)


def center_frames(frames):
    """Subtract each frame's per-coordinate mean over points.

    Accepts an (F, C, P) array (C = 2 or 3) or a single (C, P) frame and
    returns the same layout with zero per-frame means.
    """
    a = np.asarray(frames, dtype=np.float64)
    if a.ndim == 2:
        return a - a.mean(axis=1, keepdims=True)
    if a.ndim == 3:
        return a - a.mean(axis=2, keepdims=True)
    raise ValueError("expected (C, P) or (F, C, P), got %s" % (a.shape,))
