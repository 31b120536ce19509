"""Evaluation metrics and the depth-flip protocol.

All metrics take (3, P) predicted and ground-truth frames. The depth-flip
protocol evaluates each prediction and its z-negated mirror and keeps the
per-frame minimum, resolving the orthographic depth-sign ambiguity.
"""

from dataclasses import dataclass, field

import numpy as np


def mpjpe(pred, gt):
    """Mean Euclidean per-joint error."""
    pred, gt = _pair(pred, gt)
    return float(np.mean(np.linalg.norm(pred - gt, axis=0)))


def stress(pred, gt):
    """Pairwise-distance discrepancy, denominator P(P-1).

    Invariant to rigid motion and depth sign of either argument.
    """
    pred, gt = _pair(pred, gt)
    p = pred.shape[1]
    if p < 2:
        raise ValueError("stress needs at least 2 points")
    ju, ku = np.triu_indices(p, k=1)
    dp = np.linalg.norm(pred[:, ju] - pred[:, ku], axis=0)
    dg = np.linalg.norm(gt[:, ju] - gt[:, ku], axis=0)
    return float(np.sum(np.abs(dp - dg)) / (p * (p - 1)))


def e3d(pred, gt):
    """Frobenius-norm relative error, normalized by the ground truth."""
    pred, gt = _pair(pred, gt)
    denom = np.linalg.norm(gt)
    if denom == 0.0:
        raise ValueError("e3d: zero ground-truth frame")
    return float(np.linalg.norm(pred - gt) / denom)


METRICS = {"mpjpe": mpjpe, "stress": stress, "e3d": e3d}


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[0] != 3:
        raise ValueError("expected matching (3, P) frames, got %s vs %s"
                         % (pred.shape, gt.shape))
    return pred, gt


def flip_depth(frame):
    """Negate the z coordinates of a (3, P) frame."""
    out = np.array(frame, dtype=np.float64)
    out[2] *= -1.0
    return out


@dataclass
class EvalReport:
    """Per-metric results over a frame sequence."""
    frames: int
    flip: bool
    metrics: dict                      # name -> {mean, per_frame, flip_ratio}
    extras: dict = field(default_factory=dict)

    def mean(self, name):
        return self.metrics[name]["mean"]

    def to_json(self):
        out = {"frames": self.frames, "flip": self.flip,
               "metrics": self.metrics}
        out.update(self.extras)
        return out


def depth_flip_eval(pred_seq, gt_seq, metric_names=("mpjpe", "stress", "e3d"),
                    flip=True):
    """Evaluate metrics frame by frame, optionally with the flip protocol.

    pred_seq and gt_seq are aligned sequences of (3, P) frames. With
    flip=True each frame scores min(metric(pred), metric(z-negated pred));
    flip_ratio counts the frames where the mirrored prediction won.
    """
    if len(pred_seq) != len(gt_seq):
        raise ValueError("sequence length mismatch: %d vs %d"
                         % (len(pred_seq), len(gt_seq)))
    names = list(metric_names)
    for name in names:
        if name not in METRICS:
            raise ValueError("unknown metric %r" % name)
    results = {}
    for name in names:
        fn = METRICS[name]
        per_frame = []
        flips = 0
        for pred, gt in zip(pred_seq, gt_seq):
            straight = fn(pred, gt)
            if flip:
                mirrored = fn(flip_depth(pred), gt)
                if mirrored < straight:
                    flips += 1
                    per_frame.append(mirrored)
                else:
                    per_frame.append(straight)
            else:
                per_frame.append(straight)
        results[name] = {
            "mean": float(np.mean(per_frame)) if per_frame else 0.0,
            "per_frame": [float(x) for x in per_frame],
            "flip_ratio": (flips / len(per_frame)) if (flip and per_frame)
                          else 0.0,
        }
    return EvalReport(frames=len(pred_seq), flip=flip, metrics=results)
