"""Sequence-to-sequence shape/motion network.

Per-frame predictor (residual MLP encoder with shape and motion heads),
learnable temporal encoding added to embedded coarse shapes, one multi-head
attention block over the sequence, a residual decoder back to reshuffled
shape rows, and the canonicalization network used by the rotation-invariance
loss.

All forward functions take parameters already bound to Vars (see bind());
binding with tape=None gives a plain, non-recording evaluation.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Var


@dataclass
class ModelConfig:
    """Architecture dimensions. Defaults follow the reference setup."""
    points: int
    seq_max: int = 32        # temporal-encoding capacity = max sequence length
    enc_width: int = 1024
    enc_layers: int = 6      # first maps 2P -> width, the rest are residual
    bottleneck: int = 10     # shape-head inner width
    embed_dim: int = 408
    heads: int = 8
    dec_width: int = 1024
    canon_width: int = 1024

    def __post_init__(self):
        if self.points < 1:
            raise ValueError("points must be >= 1")
        if self.seq_max < 1:
            raise ValueError("seq_max must be >= 1")
        if self.enc_layers < 1:
            raise ValueError("enc_layers must be >= 1")
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim %d not divisible by heads %d"
                             % (self.embed_dim, self.heads))


@dataclass
class Linear:
    w: object  # (fan_in, fan_out)
    b: object  # (fan_out,)


@dataclass
class PredictorParams:
    encoder: list            # Linear 2P->E, then residual Linear E->E
    shape_head: list         # Linear E->bottleneck, Linear bottleneck->3P
    motion_head: Linear      # E->3


@dataclass
class ContextParams:
    embed: Linear            # 3P -> D
    gamma: object            # (seq_max, D) learnable temporal encoding
    wq: list                 # per-head Linear D -> D/h
    wk: list
    wv: list
    wo: Linear               # D -> D
    decoder: list            # Linear D->W, residual W->W x2, Linear W->3P


@dataclass
class CanonParams:
    layers: list             # Linear 3P->W, Linear W->W, Linear W->3P


@dataclass
class ModelParams:
    predictor: PredictorParams
    context: ContextParams
    canon: CanonParams


# ---------------------------------------------------------------------------
# parameter plumbing


def _init_linear(rng, fan_in, fan_out, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return Linear(
        rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype),
        rng.uniform(-bound, bound, size=fan_out).astype(dtype),
    )


def sinusoidal_encoding(rows, dim, dtype=np.float64):
    """Initial temporal encoding: sin(t / 10000^(j/dim)) at every index.

    The even/odd-index exponents coincide at j/dim, so a single expression
    covers both; the table is learnable after this initialization.
    """
    t = np.arange(rows, dtype=np.float64)[:, None]
    j = np.arange(dim, dtype=np.float64)[None, :]
    return np.sin(t / np.power(10000.0, j / dim)).astype(dtype)


def init_model(cfg, rng, dtype=np.float32):
    """Fresh parameters: uniform(-1/sqrt(fan_in), +) everywhere, sinusoidal
    temporal encoding."""
    p2 = 2 * cfg.points
    p3 = 3 * cfg.points
    e = cfg.enc_width
    d = cfg.embed_dim
    dh = d // cfg.heads

    encoder = [_init_linear(rng, p2, e, dtype)]
    encoder += [_init_linear(rng, e, e, dtype) for _ in range(cfg.enc_layers - 1)]
    shape_head = [_init_linear(rng, e, cfg.bottleneck, dtype),
                  _init_linear(rng, cfg.bottleneck, p3, dtype)]
    motion_head = _init_linear(rng, e, 3, dtype)
    predictor = PredictorParams(encoder, shape_head, motion_head)

    context = ContextParams(
        embed=_init_linear(rng, p3, d, dtype),
        gamma=sinusoidal_encoding(cfg.seq_max, d, dtype),
        wq=[_init_linear(rng, d, dh, dtype) for _ in range(cfg.heads)],
        wk=[_init_linear(rng, d, dh, dtype) for _ in range(cfg.heads)],
        wv=[_init_linear(rng, d, dh, dtype) for _ in range(cfg.heads)],
        wo=_init_linear(rng, d, d, dtype),
        decoder=[_init_linear(rng, d, cfg.dec_width, dtype),
                 _init_linear(rng, cfg.dec_width, cfg.dec_width, dtype),
                 _init_linear(rng, cfg.dec_width, cfg.dec_width, dtype),
                 _init_linear(rng, cfg.dec_width, p3, dtype)],
    )

    canon = CanonParams([
        _init_linear(rng, p3, cfg.canon_width, dtype),
        _init_linear(rng, cfg.canon_width, cfg.canon_width, dtype),
        _init_linear(rng, cfg.canon_width, p3, dtype),
    ])

    return ModelParams(predictor, context, canon)


def map_params(obj, fn):
    """Structure-preserving transform of every array leaf."""
    if isinstance(obj, (np.ndarray, Var)):
        return fn(obj)
    if dataclasses.is_dataclass(obj):
        return type(obj)(**{f.name: map_params(getattr(obj, f.name), fn)
                            for f in dataclasses.fields(obj)})
    if isinstance(obj, list):
        return [map_params(v, fn) for v in obj]
    if isinstance(obj, tuple):
        return tuple(map_params(v, fn) for v in obj)
    return obj


def iter_params(obj, prefix=""):
    """Yield (dotted_name, leaf) pairs in a deterministic order."""
    if isinstance(obj, (np.ndarray, Var)):
        yield prefix, obj
        return
    if dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            name = f.name if not prefix else prefix + "." + f.name
            yield from iter_params(getattr(obj, f.name), name)
        return
    if isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield from iter_params(v, "%s[%d]" % (prefix, i))


def param_dict(params):
    """Flat ordered name -> leaf mapping (leaves are the live arrays)."""
    return dict(iter_params(params))


def bind(params, tape):
    """Wrap every parameter array in a Var on the given tape."""
    return map_params(params, lambda a: Var(a, tape))


def params_dtype(params):
    for _, leaf in iter_params(params):
        a = leaf.value if isinstance(leaf, Var) else leaf
        return a.dtype
    raise ValueError("empty parameter structure")


def param_count(params):
    return int(np.sum([l.size for _, l in iter_params(params)]))


# ---------------------------------------------------------------------------
# forward pieces


def _linear(x, lin):
    return dc.add_bias(dc.matmul(x, lin.w), lin.b)


def _encode(x, encoder):
    h = dc.relu(_linear(x, encoder[0]))
    for lin in encoder[1:]:
        h = dc.add(h, dc.relu(_linear(h, lin)))
    return h


def predict_frames(w_flat, pp):
    """Batched predictor on (L, 2P) flattened frames.

    Returns (v, coarse): per-frame rotation vectors (L, 3) and coarse
    reshuffled shape rows (L, 3P). The shape head is a purely linear
    bottleneck, so coarse rows live in a rank-limited subspace.
    """
    h = _encode(w_flat, pp.encoder)
    coarse = _linear(_linear(h, pp.shape_head[0]), pp.shape_head[1])
    v = _linear(h, pp.motion_head)
    return v, coarse


def predict_frame(w_i, pp):
    """Single centered (2, P) frame -> (axis-angle Var (3,), coarse Var (3P,))."""
    w_i = np.asarray(w_i)
    if not np.all(np.isfinite(w_i)):
        raise ValueError("predict_frame: non-finite input frame")
    dtype = pp.encoder[0].w.value.dtype
    w_flat = dc.constant(w_i.reshape(1, -1).astype(dtype))
    v, coarse = predict_frames(w_flat, pp)
    return dc.row(v, 0), dc.row(coarse, 0)


def temporal_encode(coarse, cp):
    """X = embed(coarse) + gamma[0:L]."""
    l = coarse.value.shape[0]
    cap = cp.gamma.value.shape[0]
    if l > cap:
        raise ValueError(
            "sequence longer than trained encoding (%d > %d)" % (l, cap))
    return dc.add(_linear(coarse, cp.embed), dc.slice_rows(cp.gamma, 0, l))


def mha_block(x, cp, with_weights=False):
    """One multi-head attention block, softmax scaled by 1/sqrt(D)."""
    d = x.value.shape[1]
    inv_sqrt_d = 1.0 / np.sqrt(d)
    heads = []
    weights = []
    for hq, hk, hv in zip(cp.wq, cp.wk, cp.wv):
        q = _linear(x, hq)
        k = _linear(x, hk)
        v = _linear(x, hv)
        scores = dc.scale(dc.matmul(q, dc.transpose(k)), inv_sqrt_d)
        attn = dc.softmax(scores)
        if with_weights:
            weights.append(attn.value.copy())
        heads.append(dc.matmul(attn, v))
    out = _linear(dc.concat_last(heads), cp.wo)
    if with_weights:
        return out, weights
    return out


def decode_shapes(x, cp):
    """Residual decoder from attention features to reshuffled shape rows."""
    dec = cp.decoder
    h = dc.relu(_linear(x, dec[0]))
    h = dc.add(h, dc.relu(_linear(h, dec[1])))
    h = dc.add(h, dc.relu(_linear(h, dec[2])))
    return _linear(h, dec[3])


def forward_sequence(w, params, cfg):
    """Full pipeline on an (L, 2, P) centered frame sequence.

    Returns (rotations, shapes, coarse): a list of L rotation Vars (3, 3),
    the decoded reshuffled shape rows (L, 3P) and the coarse predictor
    rows (L, 3P).
    """
    w = np.asarray(w)
    if w.ndim != 3 or w.shape[1] != 2 or w.shape[2] != cfg.points:
        raise ValueError("expected (L, 2, %d) frames, got %s"
                         % (cfg.points, w.shape))
    if not np.all(np.isfinite(w)):
        raise ValueError("forward_sequence: non-finite input")
    l = w.shape[0]
    dtype = params_dtype(params)
    w_flat = dc.constant(w.reshape(l, -1).astype(dtype))

    v, coarse = predict_frames(w_flat, params.predictor)
    rotations = [dc.rodrigues(dc.row(v, i)) for i in range(l)]
    x = temporal_encode(coarse, params.context)
    attended = mha_block(x, params.context)
    shapes = decode_shapes(attended, params.context)
    return rotations, shapes, coarse


# ---------------------------------------------------------------------------
# canonicalization network


def rotate_rows(s_rows, r):
    """Apply one rotation matrix to every reshuffled (L, 3P) shape row."""
    p = s_rows.value.shape[1] // 3
    blocks = [dc.slice_cols(s_rows, k * p, (k + 1) * p) for k in range(3)]
    out = []
    for i in range(3):
        comp = dc.scale(blocks[0], float(r[i, 0]))
        comp = dc.add(comp, dc.scale(blocks[1], float(r[i, 1])))
        comp = dc.add(comp, dc.scale(blocks[2], float(r[i, 2])))
        out.append(comp)
    return dc.concat_last(out)


def canon_forward(s_rows, canon):
    """Canonicalization map: identity skip plus a two-hidden-layer MLP."""
    l0, l1, l2 = canon.layers
    h = dc.relu(_linear(s_rows, l0))
    h = dc.relu(_linear(h, l1))
    return dc.add(s_rows, _linear(h, l2))


def canonicalize(s_rows, rotations, canon):
    """Rotate shape rows by each sampled rotation and pass through the
    canonicalization network. Returns one (L, 3P) Var per rotation."""
    return [canon_forward(rotate_rows(s_rows, r), canon) for r in rotations]
