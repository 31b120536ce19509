"""Synthetic sequence generation, keypoint CSV ingestion, splits, chunking.

Synthetic sequences are built from a fixed low-rank basis with smooth
sinusoidal coefficients, so the reshuffled ground-truth shape matrix has an
exact, strict rank. Observations are orthographic projections under one of
three rotation regimes, optionally with Gaussian noise.

Keypoint CSV format: UTF-8, header `frame,joint,x,y` (2D) or
`frame,joint,x,y,z` (3D), frame ids 0..F-1 and joint ids 0..P-1 contiguous,
rows sorted by (frame, joint), values with >= 9 significant digits.
A dataset directory holds keypoints_2d.csv, optionally keypoints_3d.csv
(camera-frame ground truth), and manifest.json.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import geometry

ROTATION_MODES = ("smooth", "components", "random")


@dataclass
class SyntheticSpec:
    frames: int
    points: int
    rank: int
    rotation_mode: str = "smooth"
    components: int = 1
    noise_sigma: float = 0.0
    seed: int = 0
    waypoint_spacing: int = 48   # frames per smooth-trajectory arc
    orbit_waypoints: int = 8     # waypoints on the closed camera orbit
    coeff_period: int = 0        # coefficient recurrence window; 0 = auto

    def __post_init__(self):
        if not 1 <= self.rank <= min(self.frames, 3 * self.points):
            raise ValueError("rank must lie in [1, min(F, 3P)]")
        if self.rotation_mode not in ROTATION_MODES:
            raise ValueError("rotation_mode must be one of %s" %
                             (ROTATION_MODES,))
        if self.components < 1:
            raise ValueError("components must be >= 1")
        if self.rotation_mode == "components" and self.components > self.frames:
            raise ValueError("more rotation components than frames")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.waypoint_spacing < 1:
            raise ValueError("waypoint_spacing must be >= 1")
        if self.orbit_waypoints < 2:
            raise ValueError("orbit_waypoints must be >= 2")
        if self.coeff_period < 0:
            raise ValueError("coeff_period must be >= 0")
        if self.coeff_period == 0:
            self.coeff_period = self.frames


@dataclass
class Dataset:
    """Observations plus optional ground truth.

    w: (F, 2, P) centered 2D tracks. shapes: (F, 3, P) ground-truth shapes
    (centered; rank-structured world shapes for synthetic data, camera-frame
    shapes for data loaded from 3D files). rotations: (F, 3, 3) true camera
    rotations (identity when unknown). Camera-frame ground truth for metrics
    is rotations[i] @ shapes[i].
    """
    w: np.ndarray
    shapes: np.ndarray = None
    rotations: np.ndarray = None
    seed: int = 0
    source: str = ""
    tag: str = ""

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 3 or self.w.shape[1] != 2:
            raise ValueError("w must be (F, 2, P), got %s" % (self.w.shape,))
        means = np.abs(self.w.mean(axis=2))
        if means.size and means.max() > 1e-10:
            raise ValueError("observations are not centered (max mean %.2e)"
                             % means.max())

    @property
    def frames(self):
        return self.w.shape[0]

    @property
    def points(self):
        return self.w.shape[2]

    @property
    def has_gt(self):
        return self.shapes is not None

    def stacked_shapes(self):
        """Ground-truth shapes as a stacked (3F, P) matrix."""
        if self.shapes is None:
            raise ValueError("dataset has no ground-truth shapes")
        return self.shapes.reshape(3 * self.frames, self.points)

    def camera_shapes(self):
        """Per-frame ground truth in camera coordinates: R_i @ S_i."""
        if self.shapes is None:
            raise ValueError("dataset has no ground-truth shapes")
        if self.rotations is None:
            return self.shapes.copy()
        return np.einsum("fab,fbp->fap", self.rotations, self.shapes)


def _smooth_coefficients(rng, frames, rank, period):
    """Per-basis coefficient curves: sums of three low-frequency sinusoids.

    Whole-cycle counts over the recurrence window make the curves periodic
    with period `period`, so long sequences revisit the same deformation
    range while short sequences just get smooth curves. The first
    coefficient carries a constant offset so per-frame shape norms stay
    bounded away from zero (keeps relative 3D errors well defined).
    """
    t = np.arange(frames, dtype=np.float64)
    c = np.zeros((frames, rank))
    for k in range(rank):
        curve = np.zeros(frames)
        for _ in range(3):
            cycles = rng.integers(1, 9)
            amp = rng.uniform(0.25, 0.75)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            curve += amp * np.sin(2.0 * np.pi * cycles * t / period + phase)
        c[:, k] = curve
    c[:, 0] += 3.0
    return c


def _smooth_rotations(rng, frames, spacing, n_orbit):
    """Camera on a smooth closed orbit: slerp cyclically through n_orbit
    random waypoints, `spacing` frames per arc."""
    wps = [geometry.random_quaternion(rng) for _ in range(n_orbit)]
    out = np.empty((frames, 3, 3))
    for i in range(frames):
        pos = i / spacing
        seg = int(pos)
        q = geometry.slerp(wps[seg % n_orbit], wps[(seg + 1) % n_orbit],
                           pos - seg)
        out[i] = geometry.quat_to_rotation(q)
    return out


def _component_rotations(rng, frames, components):
    comps = [geometry.random_rotation(rng) for _ in range(components)]
    out = np.empty((frames, 3, 3))
    bounds = np.linspace(0, frames, components + 1).astype(int)
    for c in range(components):
        out[bounds[c]:bounds[c + 1]] = comps[c]
    return out


def synth_sequence(spec):
    """Generate a Dataset from a SyntheticSpec.

    Ground-truth shapes are S_sharp = C @ B with B a centered random basis,
    rescaled to unit RMS, so reshuffle(stacked shapes) has exact rank K.
    Observations are the first two rows of R_i @ S_i plus Gaussian noise of
    std noise_sigma relative to the (unit) shape RMS.
    """
    rng = np.random.default_rng(spec.seed)
    f, p, k = spec.frames, spec.points, spec.rank

    basis = rng.normal(size=(k, 3 * p))
    basis = basis.reshape(k, 3, p)
    basis -= basis.mean(axis=2, keepdims=True)
    basis = basis.reshape(k, 3 * p)

    coeff = _smooth_coefficients(rng, f, k, spec.coeff_period)
    s_sharp = coeff @ basis
    s_sharp /= np.sqrt(np.mean(np.square(s_sharp)))
    shapes = s_sharp.reshape(f, 3, p)

    if spec.rotation_mode == "smooth":
        rotations = _smooth_rotations(rng, f, spec.waypoint_spacing,
                                      spec.orbit_waypoints)
    elif spec.rotation_mode == "components":
        rotations = _component_rotations(rng, f, spec.components)
    else:
        rotations = np.stack([geometry.random_rotation(rng) for _ in range(f)])

    w = np.einsum("fab,fbp->fap", rotations, shapes)[:, :2, :]
    if spec.noise_sigma > 0:
        w = w + spec.noise_sigma * rng.normal(size=w.shape)
    w = geometry.center_frames(w)

    return Dataset(w=w, shapes=shapes, rotations=rotations, seed=spec.seed,
                   source="synth", tag="")


def split_dataset(d, train_fraction=0.8, seed=None):
    """Contiguous train/test split; the seed decides which end is held out."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    f = d.frames
    n_train = int(round(f * train_fraction))
    n_train = min(max(n_train, 1), f - 1)
    rng = np.random.default_rng(d.seed if seed is None else seed)
    test_at_end = bool(rng.integers(2))
    if test_at_end:
        tr, te = slice(0, n_train), slice(n_train, f)
    else:
        tr, te = slice(f - n_train, f), slice(0, f - n_train)

    def cut(sl, tag):
        return Dataset(
            w=d.w[sl].copy(),
            shapes=None if d.shapes is None else d.shapes[sl].copy(),
            rotations=None if d.rotations is None else d.rotations[sl].copy(),
            seed=d.seed, source=d.source, tag=tag)

    return cut(tr, "train"), cut(te, "test")


def make_chunks(d, seq_len=32, mode="train", rng=None):
    """Frame-index chunks of length seq_len.

    train: non-overlapping full windows, remainder dropped, order shuffled
    when an rng is given (frame order inside each chunk is preserved).
    eval: full windows plus the shorter remainder, original order.
    """
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    if mode not in ("train", "eval"):
        raise ValueError("mode must be train or eval")
    f = d.frames
    chunks = [np.arange(s, s + seq_len) for s in range(0, f - seq_len + 1,
                                                       seq_len)]
    if mode == "train":
        if rng is not None:
            order = rng.permutation(len(chunks))
            chunks = [chunks[i] for i in order]
        return chunks
    tail = f - (f // seq_len) * seq_len
    if tail:
        chunks.append(np.arange(f - tail, f))
    return chunks


def perturb_order(chunk, mode, rng=None):
    """Frame-order ablation inside one chunk: shuffle or reverse."""
    chunk = np.asarray(chunk)
    if mode == "shuffle":
        if rng is None:
            raise ValueError("shuffle needs an rng")
        return chunk[rng.permutation(chunk.size)]
    if mode == "reverse":
        return chunk[::-1].copy()
    raise ValueError("mode must be shuffle or reverse")


# ---------------------------------------------------------------------------
# keypoint CSV + manifest I/O


def save_keypoints(path, values):
    """Write an (F, dims, P) array in the keypoint CSV format."""
    values = np.asarray(values)
    f, dims, p = values.shape
    cols = ("x", "y", "z")[:dims]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame,joint," + ",".join(cols) + "\n")
        for i in range(f):
            for j in range(p):
                nums = ",".join("%.12g" % values[i, c, j] for c in range(dims))
                fh.write("%d,%d,%s\n" % (i, j, nums))


def _parse_keypoints(path, dims):
    expect_header = "frame,joint," + ",".join(("x", "y", "z")[:dims])
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != expect_header:
            raise ValueError("%s: line 1: expected header %r, found %r"
                             % (path, expect_header, header))
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2 + dims:
                raise ValueError("%s: line %d: expected %d fields, found %d"
                                 % (path, lineno, 2 + dims, len(parts)))
            try:
                fi = int(parts[0])
                ji = int(parts[1])
                vals = [float(x) for x in parts[2:]]
            except ValueError:
                raise ValueError("%s: line %d: malformed row %r"
                                 % (path, lineno, line)) from None
            rows.append((lineno, fi, ji, vals))
    if not rows:
        raise ValueError("%s: no data rows" % path)
    n_frames = max(r[1] for r in rows) + 1
    n_points = max(r[2] for r in rows) + 1
    out = np.zeros((n_frames, dims, n_points))
    idx = 0
    for lineno, fi, ji, vals in rows:
        exp_f, exp_j = divmod(idx, n_points)
        if (fi, ji) != (exp_f, exp_j):
            raise ValueError(
                "%s: line %d: expected frame %d joint %d, found frame %d "
                "joint %d" % (path, lineno, exp_f, exp_j, fi, ji))
        out[fi, :, ji] = vals
        idx += 1
    if idx != n_frames * n_points:
        raise ValueError("%s: incomplete grid: %d rows for %d frames x %d "
                         "joints" % (path, idx, n_frames, n_points))
    return out


def load_keypoints(path, dims):
    """Parse one keypoint CSV into a Dataset.

    2D files give observations only. 3D files are taken as camera-frame
    ground truth: observations are their first two coordinates and the
    rotations default to identity.
    """
    if dims not in (2, 3):
        raise ValueError("dims must be 2 or 3")
    values = geometry.center_frames(_parse_keypoints(path, dims))
    if dims == 2:
        return Dataset(w=values, source=str(path))
    eye = np.broadcast_to(np.eye(3), (values.shape[0], 3, 3)).copy()
    return Dataset(w=values[:, :2].copy(), shapes=values, rotations=eye,
                   source=str(path))


def save_dataset(d, dirpath):
    """Write a dataset directory: 2D CSV, optional camera-frame 3D CSV,
    manifest.json."""
    os.makedirs(dirpath, exist_ok=True)
    save_keypoints(os.path.join(dirpath, "keypoints_2d.csv"), d.w)
    if d.has_gt:
        save_keypoints(os.path.join(dirpath, "keypoints_3d.csv"),
                       d.camera_shapes())
    manifest = {
        "frames": int(d.frames),
        "points": int(d.points),
        "dims": 3 if d.has_gt else 2,
        "has_gt": bool(d.has_gt),
        "source_path": str(dirpath),
        "seed": int(d.seed),
    }
    with open(os.path.join(dirpath, "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_dataset(dirpath):
    """Read a dataset directory written by save_dataset."""
    mpath = os.path.join(dirpath, "manifest.json")
    try:
        with open(mpath, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ValueError("%s: not a dataset directory (no manifest.json)"
                         % dirpath) from None
    w = geometry.center_frames(
        _parse_keypoints(os.path.join(dirpath, "keypoints_2d.csv"), 2))
    shapes = rotations = None
    if manifest.get("has_gt"):
        shapes = geometry.center_frames(
            _parse_keypoints(os.path.join(dirpath, "keypoints_3d.csv"), 3))
        rotations = np.broadcast_to(np.eye(3),
                                    (shapes.shape[0], 3, 3)).copy()
    d = Dataset(w=w, shapes=shapes, rotations=rotations,
                seed=int(manifest.get("seed", 0)), source=str(dirpath))
    if d.frames != manifest["frames"] or d.points != manifest["points"]:
        raise ValueError("%s: manifest disagrees with CSV contents" % dirpath)
    return d
