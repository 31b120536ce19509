"""Training loop, checkpoint persistence, and evaluation protocols.

Training is one chunk per optimizer step with a step-milestone learning
rate schedule; everything is driven by a single seeded generator so runs
replay bit-identically. Checkpoints are a small binary container: magic,
version, JSON metadata, then the raw float32 parameter payload.
"""

import io
import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import data as data_mod
from . import diffcore as dc
from . import losses
from . import metrics as metrics_mod
from . import model as mdl

CKPT_MAGIC = b"S2SNRSF1"
CKPT_VERSION = 1


@dataclass
class TrainConfig:
    seq_len: int = 32
    lr: float = 0.001
    decay_steps: tuple = ()      # steps where the lr divides by 10
    total_steps: int = 0
    alpha: float = 0.01
    lam: float = 0.003
    m_samples: int = 4
    seed: int = 0
    shuffle_chunks: bool = True

    def __post_init__(self):
        self.decay_steps = tuple(int(s) for s in self.decay_steps)
        if list(self.decay_steps) != sorted(set(self.decay_steps)):
            raise ValueError("decay_steps must be strictly increasing")
        if any(s >= self.total_steps for s in self.decay_steps):
            raise ValueError("decay_steps must be < total_steps")
        if self.seq_len < 1 or self.total_steps < 0:
            raise ValueError("bad seq_len/total_steps")


def default_decay_steps(total_steps):
    """The two-milestone pattern at 40% and 80% of the run."""
    if total_steps < 3:
        return ()
    return (int(total_steps * 0.4), int(total_steps * 0.8))


def lr_at(config, step):
    """Learning rate used for (1-based) update step `step`."""
    drops = sum(1 for d in config.decay_steps if d <= step)
    return config.lr * 10.0 ** (-drops)


@dataclass
class Checkpoint:
    params: mdl.ModelParams
    model_cfg: mdl.ModelConfig
    train_cfg: TrainConfig
    step: int
    rng_state: dict


def _pack_params(params):
    """Repack parameter leaves as views into one flat float32 buffer.

    Returns (packed structure, buffer, ordered (offset, size, shape) spans).
    A single flat buffer lets the optimizer run as one fused kernel call
    instead of one per parameter.
    """
    leaves = list(mdl.iter_params(params))
    total = int(np.sum([l.size for _, l in leaves]))
    buf = np.empty(total, dtype=np.float32)
    spans = []
    offset = 0
    it = iter(leaves)

    def repack(leaf):
        nonlocal offset
        _, arr = next(it)
        view = buf[offset:offset + arr.size]
        view[...] = arr.ravel()
        spans.append((offset, arr.size, arr.shape))
        offset += arr.size
        return view.reshape(arr.shape)

    packed = mdl.map_params(params, repack)
    return packed, buf, spans


def train(dataset, config, model_cfg=None, log_stream=None):
    """Train on a dataset; returns (Checkpoint, log records).

    One chunk per step; chunk order reshuffles every epoch. The log holds
    one dict per step: step, lr, the three raw loss terms and the total.
    """
    if model_cfg is None:
        model_cfg = mdl.ModelConfig(points=dataset.points,
                                    seq_max=config.seq_len)
    if dataset.frames < config.seq_len:
        raise ValueError("dataset has no full chunk of length %d"
                         % config.seq_len)
    rng = np.random.default_rng(config.seed)
    params, pbuf, spans = _pack_params(
        mdl.init_model(model_cfg, rng, dtype=np.float32))
    flat = {"packed": pbuf}
    gbuf = np.zeros_like(pbuf)
    state = dc.adam_init(flat)
    weights = losses.LossWeights(alpha=config.alpha, lam=config.lam,
                                 m_samples=config.m_samples)

    log = []
    step = 0
    chunks = []
    while step < config.total_steps:
        if not chunks:
            chunks = data_mod.make_chunks(
                dataset, config.seq_len, "train",
                rng if config.shuffle_chunks else None)
        idx = chunks.pop(0)
        step += 1

        tape = dc.Tape()
        bound = mdl.bind(params, tape)
        rotations, shapes, _ = mdl.forward_sequence(dataset.w[idx], bound,
                                                    model_cfg)
        try:
            total, breakdown = losses.total_loss(
                dataset.w[idx], rotations, shapes, weights, bound.canon, rng)
        except RuntimeError as exc:
            raise RuntimeError("training aborted at step %d: %s"
                               % (step, exc)) from exc
        dc.backward(tape, total)

        for (offset, size, _), (_, var) in zip(spans,
                                               mdl.iter_params(bound)):
            if var.grad is None:
                gbuf[offset:offset + size] = 0.0
            else:
                gbuf[offset:offset + size] = var.grad.ravel()
        lr = lr_at(config, step)
        dc.adam_step(flat, {"packed": gbuf}, state, lr)

        record = {"step": step, "lr": lr,
                  "loss_data": breakdown["loss_data"],
                  "loss_norm": breakdown["loss_norm"],
                  "loss_cano": breakdown["loss_cano"],
                  "total": breakdown["total"]}
        log.append(record)
        if log_stream is not None:
            log_stream.write(json.dumps(record) + "\n")

    ckpt = Checkpoint(params=params, model_cfg=model_cfg, train_cfg=config,
                      step=step, rng_state=rng.bit_generator.state)
    return ckpt, log


# ---------------------------------------------------------------------------
# checkpoint container


def save_checkpoint(path, ckpt):
    """Binary layout: magic, u32 version, u64 JSON length, JSON metadata,
    then each parameter as little-endian float32 in metadata order."""
    entries = list(mdl.iter_params(ckpt.params))
    meta = {
        "params": [[name, list(leaf.shape)] for name, leaf in entries],
        "model": asdict(ckpt.model_cfg),
        "train": asdict(ckpt.train_cfg),
        "step": int(ckpt.step),
        "rng_state": ckpt.rng_state,
    }
    blob = json.dumps(meta).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, leaf in entries:
            fh.write(np.ascontiguousarray(leaf, dtype="<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError("%s: not a checkpoint (bad magic)" % path)
    version = struct.unpack("<I", raw[8:12])[0]
    if version != CKPT_VERSION:
        raise ValueError("%s: unsupported checkpoint version %d"
                         % (path, version))
    jlen = struct.unpack("<Q", raw[12:20])[0]
    try:
        meta = json.loads(raw[20:20 + jlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError("%s: corrupt checkpoint metadata" % path) from exc

    model_cfg = mdl.ModelConfig(**meta["model"])
    train_cfg = TrainConfig(**meta["train"])
    params = mdl.init_model(model_cfg, np.random.default_rng(0),
                            dtype=np.float32)
    entries = list(mdl.iter_params(params))
    declared = meta["params"]
    if [name for name, _ in entries] != [name for name, _ in declared]:
        raise ValueError("%s: parameter names disagree with model config"
                         % path)
    offset = 20 + jlen
    for (name, leaf), (_, shape) in zip(entries, declared):
        if list(leaf.shape) != list(shape):
            raise ValueError("%s: shape mismatch for %s: %s vs %s"
                             % (path, name, list(leaf.shape), shape))
        nbytes = leaf.size * 4
        if offset + nbytes > len(raw):
            raise ValueError("%s: truncated parameter payload at %s"
                             % (path, name))
        leaf[...] = np.frombuffer(raw[offset:offset + nbytes],
                                  dtype="<f4").reshape(leaf.shape)
        offset += nbytes
    if offset != len(raw):
        raise ValueError("%s: %d trailing bytes after parameter payload"
                         % (path, len(raw) - offset))
    return Checkpoint(params=params, model_cfg=model_cfg,
                      train_cfg=train_cfg, step=int(meta["step"]),
                      rng_state=meta["rng_state"])


# ---------------------------------------------------------------------------
# evaluation


EVAL_MODES = ("normal", "shuffle", "reverse", "single_frame")


def predict_sequence(ckpt, w):
    """Frozen forward pass: (L, 2, P) frames -> (rotations (L,3,3),
    camera-frame shapes (L,3,P)) as float64 arrays."""
    bound = mdl.bind(ckpt.params, None)
    rot_vars, shape_rows, _ = mdl.forward_sequence(w, bound, ckpt.model_cfg)
    l, p = w.shape[0], w.shape[2]
    rots = np.stack([r.value.astype(np.float64) for r in rot_vars])
    shapes = shape_rows.value.astype(np.float64).reshape(l, 3, p)
    cam = np.einsum("fab,fbp->fap", rots, shapes)
    return rots, cam


def evaluate(ckpt, dataset, mode="normal", metric_names=("mpjpe", "stress",
                                                         "e3d"),
             flip=True, seq_len=None, rng=None):
    """Chunked evaluation with optional frame-order ablation.

    Metrics compare camera-frame predictions R_i @ S_i against camera-frame
    ground truth; reprojection quality is reported as range-normalized RMSE
    against the observations (extras["nrmse"]).
    """
    if mode not in EVAL_MODES:
        raise ValueError("mode must be one of %s" % (EVAL_MODES,))
    if metric_names and not dataset.has_gt:
        raise ValueError("dataset has no ground truth for 3D metrics")
    seq_len = (1 if mode == "single_frame"
               else (ckpt.train_cfg.seq_len if seq_len is None else seq_len))
    rng = np.random.default_rng(0) if rng is None else rng

    gt_cam = dataset.camera_shapes() if dataset.has_gt else None
    preds, gts, resid_sq, obs = [], [], [], []
    for idx in data_mod.make_chunks(dataset, seq_len, "eval"):
        if mode in ("shuffle", "reverse"):
            idx = data_mod.perturb_order(idx, mode, rng)
        w_chunk = dataset.w[idx]
        rots, cam = predict_sequence(ckpt, w_chunk)
        preds.extend(cam)
        if gt_cam is not None:
            gts.extend(gt_cam[idx])
        resid_sq.append(np.square(w_chunk - cam[:, :2, :]).ravel())
        obs.append(w_chunk.ravel())

    if gt_cam is not None:
        report = metrics_mod.depth_flip_eval(preds, gts, metric_names, flip)
    else:
        report = metrics_mod.EvalReport(frames=len(preds), flip=flip,
                                        metrics={})
    resid_sq = np.concatenate(resid_sq)
    obs = np.concatenate(obs)
    spread = float(obs.max() - obs.min())
    rmse = float(np.sqrt(resid_sq.mean()))
    report.extras.update({
        "mode": mode,
        "seq_len": seq_len,
        "rmse": rmse,
        "nrmse": rmse / spread if spread > 0 else float("inf"),
    })
    return report


def length_sweep(ckpt, dataset, lengths, metric_names=("mpjpe", "stress",
                                                       "e3d"), flip=True):
    """Evaluate the same data re-chunked at each length."""
    out = []
    for length in lengths:
        rep = evaluate(ckpt, dataset, mode="normal",
                       metric_names=metric_names, flip=flip, seq_len=length)
        out.append((int(length), rep))
    return out


def length_sweep_csv(results):
    buf = io.StringIO()
    names = list(results[0][1].metrics.keys()) if results else []
    buf.write("length,frames," + ",".join(names) + ",nrmse\n")
    for length, rep in results:
        vals = [("%.9g" % rep.mean(n)) for n in names]
        buf.write("%d,%d,%s,%.9g\n"
                  % (length, rep.frames, ",".join(vals),
                     rep.extras["nrmse"]))
    return buf.getvalue()
