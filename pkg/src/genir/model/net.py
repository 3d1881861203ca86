"""Encoder-decoder transformer in plain numpy, with a hand-written backward
pass.

Pre-norm residual blocks, sinusoidal positions, ReLU feed-forward, no biases
in attention projections.  The gradient of every tensor is exercised against
central finite differences in the test suite, so any change here must keep
forward and backward in exact agreement.

All dropout is inverted dropout driven by an explicit numpy Generator; pass
dropout_rng=None (or build the config with dropout_rate=0) for deterministic
evaluation-mode behavior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from genir.constants import BOS_ID, PAD_ID
from genir.errors import ConfigError
from genir.model.config import ModelConfig, dec_embed_name, param_shapes

_NEG = -1e9
_LN_EPS = 1e-6

_pos_cache: dict[tuple[int, int], np.ndarray] = {}


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal table scaled by d_model**-0.5 to match embedding magnitude."""
    key = (length, d_model)
    if key not in _pos_cache:
        pos = np.arange(length, dtype=np.float64)[:, None]
        dim = np.arange(d_model, dtype=np.float64)[None, :]
        angle = pos / np.power(10000.0, (2.0 * (dim // 2)) / d_model)
        table = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
        _pos_cache[key] = table * d_model**-0.5
    return _pos_cache[key]


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(t.shape)) for t in self.tensors.values())

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype


def init_model(cfg: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Scaled-normal init for weights, ones for norm scales, zeros for the rest.

    Tensors are drawn in the fixed param_shapes order, so a given (config,
    seed) pair always produces the same model.
    """
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".scale"):
            tensors[name] = np.ones(shape, dtype=dtype)
        elif name.endswith((".offset", ".b1", ".b2", "adapt.b")):
            tensors[name] = np.zeros(shape, dtype=dtype)
        elif name.startswith("embed.") or name.startswith("head."):
            std = cfg.d_model**-0.5
            tensors[name] = rng.normal(0.0, std, size=shape).astype(dtype)
        else:
            std = shape[0] ** -0.5  # fan-in
            tensors[name] = rng.normal(0.0, std, size=shape).astype(dtype)
    return ModelParams(config=cfg, tensors=tensors)


# ---------------------------------------------------------------------------
# primitive blocks


def _dropout_fwd(x, rate, rng):
    if rng is None or rate <= 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def _dropout_bwd(dy, keep):
    return dy if keep is None else dy * keep


def _ln_fwd(x, scale, offset):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return xhat * scale + offset, (xhat, inv, scale)


def _ln_bwd(dy, cache):
    xhat, inv, scale = cache
    axes = tuple(range(dy.ndim - 1))
    dscale = (dy * xhat).sum(axes)
    doffset = dy.sum(axes)
    dxhat = dy * scale
    dx = inv * (
        dxhat
        - dxhat.mean(-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    return dx, dscale, doffset


def _softmax(x):
    x = x - x.max(-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(-1, keepdims=True)


def _attn_fwd(p, prefix, q_in, kv_in, add_mask, num_heads):
    Wq, Wk, Wv, Wo = (p[f"{prefix}.wq"], p[f"{prefix}.wk"], p[f"{prefix}.wv"], p[f"{prefix}.wo"])
    B, Lq, d = q_in.shape
    Lk = kv_in.shape[1]
    dh = d // num_heads
    Qh = (q_in @ Wq).reshape(B, Lq, num_heads, dh).transpose(0, 2, 1, 3)
    Kh = (kv_in @ Wk).reshape(B, Lk, num_heads, dh).transpose(0, 2, 1, 3)
    Vh = (kv_in @ Wv).reshape(B, Lk, num_heads, dh).transpose(0, 2, 1, 3)
    scores = Qh @ Kh.transpose(0, 1, 3, 2) * dh**-0.5
    if add_mask is not None:
        scores = scores + add_mask
    A = _softmax(scores)
    Oh = A @ Vh
    O = Oh.transpose(0, 2, 1, 3).reshape(B, Lq, d)
    out = O @ Wo
    cache = (q_in, kv_in, Qh, Kh, Vh, A, O, prefix, num_heads)
    return out, cache


def _attn_bwd(dout, cache, p, grads):
    q_in, kv_in, Qh, Kh, Vh, A, O, prefix, num_heads = cache
    B, Lq, d = q_in.shape
    Lk = kv_in.shape[1]
    dh = d // num_heads
    Wq, Wk, Wv, Wo = (p[f"{prefix}.wq"], p[f"{prefix}.wk"], p[f"{prefix}.wv"], p[f"{prefix}.wo"])

    _acc(grads, f"{prefix}.wo", np.einsum("bld,ble->de", O, dout))
    dO = dout @ Wo.T
    dOh = dO.reshape(B, Lq, num_heads, dh).transpose(0, 2, 1, 3)
    dA = dOh @ Vh.transpose(0, 1, 3, 2)
    dVh = A.transpose(0, 1, 3, 2) @ dOh
    dS = A * (dA - (dA * A).sum(-1, keepdims=True))
    dS = dS * dh**-0.5
    dQh = dS @ Kh
    dKh = dS.transpose(0, 1, 3, 2) @ Qh
    dQ = dQh.transpose(0, 2, 1, 3).reshape(B, Lq, d)
    dK = dKh.transpose(0, 2, 1, 3).reshape(B, Lk, d)
    dV = dVh.transpose(0, 2, 1, 3).reshape(B, Lk, d)
    _acc(grads, f"{prefix}.wq", np.einsum("bld,ble->de", q_in, dQ))
    _acc(grads, f"{prefix}.wk", np.einsum("bld,ble->de", kv_in, dK))
    _acc(grads, f"{prefix}.wv", np.einsum("bld,ble->de", kv_in, dV))
    dq_in = dQ @ Wq.T
    dkv_in = dK @ Wk.T + dV @ Wv.T
    return dq_in, dkv_in


def _ff_fwd(p, prefix, x):
    u = x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]
    r = np.maximum(u, 0.0)
    out = r @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]
    return out, (x, u, r, prefix)


def _ff_bwd(dout, cache, p, grads):
    x, u, r, prefix = cache
    axes = tuple(range(dout.ndim - 1))
    _acc(grads, f"{prefix}.b2", dout.sum(axes))
    _acc(grads, f"{prefix}.w2", np.einsum("blf,bld->fd", r, dout))
    dr = dout @ p[f"{prefix}.w2"].T
    du = dr * (u > 0)
    _acc(grads, f"{prefix}.b1", du.sum(axes))
    _acc(grads, f"{prefix}.w1", np.einsum("bld,blf->df", x, du))
    return du @ p[f"{prefix}.w1"].T


def _acc(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


def _self_block_fwd(p, prefix, attn_name, x, add_mask, num_heads, rate, rng):
    xn1, ln1c = _ln_fwd(x, p[f"{prefix}.ln1.scale"], p[f"{prefix}.ln1.offset"])
    a, attnc = _attn_fwd(p, f"{prefix}.{attn_name}", xn1, xn1, add_mask, num_heads)
    a, dmask1 = _dropout_fwd(a, rate, rng)
    h = x + a
    hn, ln2c = _ln_fwd(h, p[f"{prefix}.ln2.scale"], p[f"{prefix}.ln2.offset"])
    f, ffc = _ff_fwd(p, f"{prefix}.ff", hn)
    f, dmask2 = _dropout_fwd(f, rate, rng)
    out = h + f
    return out, (prefix, ln1c, attnc, dmask1, ln2c, ffc, dmask2)


def _self_block_bwd(dout, cache, p, grads):
    prefix, ln1c, attnc, dmask1, ln2c, ffc, dmask2 = cache
    df = _dropout_bwd(dout, dmask2)
    dhn = _ff_bwd(df, ffc, p, grads)
    dh, dscale2, doffset2 = _ln_bwd(dhn, ln2c)
    _acc(grads, f"{prefix}.ln2.scale", dscale2)
    _acc(grads, f"{prefix}.ln2.offset", doffset2)
    dh = dh + dout
    da = _dropout_bwd(dh, dmask1)
    dq, dkv = _attn_bwd(da, attnc, p, grads)
    dxn1 = dq + dkv
    dx, dscale1, doffset1 = _ln_bwd(dxn1, ln1c)
    _acc(grads, f"{prefix}.ln1.scale", dscale1)
    _acc(grads, f"{prefix}.ln1.offset", doffset1)
    return dx + dh


def _dec_block_fwd(p, prefix, x, enc_out, self_mask, cross_mask, num_heads, rate, rng):
    xn1, ln1c = _ln_fwd(x, p[f"{prefix}.ln1.scale"], p[f"{prefix}.ln1.offset"])
    a, selfc = _attn_fwd(p, f"{prefix}.self", xn1, xn1, self_mask, num_heads)
    a, dmask1 = _dropout_fwd(a, rate, rng)
    h1 = x + a
    hn2, ln2c = _ln_fwd(h1, p[f"{prefix}.ln2.scale"], p[f"{prefix}.ln2.offset"])
    c, crossc = _attn_fwd(p, f"{prefix}.cross", hn2, enc_out, cross_mask, num_heads)
    c, dmask2 = _dropout_fwd(c, rate, rng)
    h2 = h1 + c
    hn3, ln3c = _ln_fwd(h2, p[f"{prefix}.ln3.scale"], p[f"{prefix}.ln3.offset"])
    f, ffc = _ff_fwd(p, f"{prefix}.ff", hn3)
    f, dmask3 = _dropout_fwd(f, rate, rng)
    out = h2 + f
    cache = (prefix, ln1c, selfc, dmask1, ln2c, crossc, dmask2, ln3c, ffc, dmask3)
    return out, cache


def _dec_block_bwd(dout, cache, p, grads):
    prefix, ln1c, selfc, dmask1, ln2c, crossc, dmask2, ln3c, ffc, dmask3 = cache
    df = _dropout_bwd(dout, dmask3)
    dhn3 = _ff_bwd(df, ffc, p, grads)
    dh2, ds3, do3 = _ln_bwd(dhn3, ln3c)
    _acc(grads, f"{prefix}.ln3.scale", ds3)
    _acc(grads, f"{prefix}.ln3.offset", do3)
    dh2 = dh2 + dout
    dc = _dropout_bwd(dh2, dmask2)
    dhn2, denc = _attn_bwd(dc, crossc, p, grads)
    dh1, ds2, do2 = _ln_bwd(dhn2, ln2c)
    _acc(grads, f"{prefix}.ln2.scale", ds2)
    _acc(grads, f"{prefix}.ln2.offset", do2)
    dh1 = dh1 + dh2
    da = _dropout_bwd(dh1, dmask1)
    dq, dkv = _attn_bwd(da, selfc, p, grads)
    dxn1 = dq + dkv
    dx, ds1, do1 = _ln_bwd(dxn1, ln1c)
    _acc(grads, f"{prefix}.ln1.scale", ds1)
    _acc(grads, f"{prefix}.ln1.offset", do1)
    return dx + dh1, denc


# ---------------------------------------------------------------------------
# full model


def _pad_mask(ids, dtype):
    # additive mask over keys: (B, 1, 1, L)
    return np.where(ids == PAD_ID, _NEG, 0.0).astype(dtype)[:, None, None, :]


def _causal_mask(length, dtype):
    m = np.triu(np.full((length, length), _NEG, dtype=dtype), k=1)
    return m[None, None, :, :]


def _embed_fwd(p, name, ids, d, rate, rng):
    E = p[name]
    x = E[ids] + positional_encoding(ids.shape[1], d)[None, : ids.shape[1]].astype(E.dtype)
    x, dmask = _dropout_fwd(x, rate, rng)
    return x, (name, ids, dmask)


def _embed_bwd(dx, cache, p, grads):
    name, ids, dmask = cache
    dx = _dropout_bwd(dx, dmask)
    dE = np.zeros_like(p[name])
    np.add.at(dE, ids.reshape(-1), dx.reshape(-1, dx.shape[-1]))
    _acc(grads, name, dE)


def encode(params: ModelParams, src: np.ndarray, dropout_rng=None):
    """Run the encoder; returns (enc_out, cache)."""
    cfg, p = params.config, params.tensors
    rate = cfg.dropout_rate if dropout_rng is not None else 0.0
    x, embc = _embed_fwd(p, "embed.enc", src, cfg.d_model, rate, dropout_rng)
    mask = _pad_mask(src, x.dtype)
    layer_caches = []
    for i in range(cfg.num_layers):
        x, c = _self_block_fwd(p, f"enc.{i}", "attn", x, mask, cfg.num_heads, rate, dropout_rng)
        layer_caches.append(c)
    out, fin = _ln_fwd(x, p["enc.final.scale"], p["enc.final.offset"])
    return out, ("enc", embc, layer_caches, fin)


def _encode_bwd(dout, cache, params, grads):
    _, embc, layer_caches, fin = cache
    p = params.tensors
    dx, ds, do = _ln_bwd(dout, fin)
    _acc(grads, "enc.final.scale", ds)
    _acc(grads, "enc.final.offset", do)
    for i in reversed(range(len(layer_caches))):
        dx = _self_block_bwd(dx, layer_caches[i], p, grads)
    _embed_bwd(dx, embc, p, grads)


def _decoder_fwd(params, enc_out, src, tgt_in, dropout_rng):
    cfg, p = params.config, params.tensors
    rate = cfg.dropout_rate if dropout_rng is not None else 0.0
    d = cfg.d_model
    if cfg.head_kind == "atomic":
        # single BOS step; constant zero embedding plus position, no table
        B = tgt_in.shape[0]
        x = np.broadcast_to(
            positional_encoding(1, d).astype(enc_out.dtype), (B, 1, d)
        ).copy()
        x, dmask = _dropout_fwd(x, rate, dropout_rng)
        embc = ("", None, dmask)
        self_mask = None
    else:
        x, embc = _embed_fwd(p, dec_embed_name(cfg), tgt_in, d, rate, dropout_rng)
        self_mask = _causal_mask(tgt_in.shape[1], x.dtype) + _pad_mask(tgt_in, x.dtype)
    cross_mask = _pad_mask(src, x.dtype)
    layer_caches = []
    for i in range(cfg.num_layers):
        x, c = _dec_block_fwd(
            p, f"dec.{i}", x, enc_out, self_mask, cross_mask, cfg.num_heads, rate, dropout_rng
        )
        layer_caches.append(c)
    out, fin = _ln_fwd(x, p["dec.final.scale"], p["dec.final.offset"])
    return out, ("dec", embc, layer_caches, fin)


def _decoder_bwd(dout, cache, params, grads):
    _, embc, layer_caches, fin = cache
    p = params.tensors
    dx, ds, do = _ln_bwd(dout, fin)
    _acc(grads, "dec.final.scale", ds)
    _acc(grads, "dec.final.offset", do)
    denc = None
    for i in reversed(range(len(layer_caches))):
        dx, denc_i = _dec_block_bwd(dx, layer_caches[i], p, grads)
        denc = denc_i if denc is None else denc + denc_i
    name, ids, dmask = embc
    if name:
        _embed_bwd(dx, embc, p, grads)
    # atomic: decoder input is constant, nothing to accumulate
    return denc


def _pawa_fwd(params, tgt_in, dropout_rng):
    """Auxiliary decoder-only stack reading the generated prefix."""
    cfg, p = params.config, params.tensors
    rate = cfg.dropout_rate if dropout_rng is not None else 0.0
    x, embc = _embed_fwd(p, dec_embed_name(cfg), tgt_in, cfg.d_model, rate, dropout_rng)
    mask = _causal_mask(tgt_in.shape[1], x.dtype) + _pad_mask(tgt_in, x.dtype)
    layer_caches = []
    for i in range(cfg.effective_pawa_layers):
        x, c = _self_block_fwd(p, f"pawa.{i}", "attn", x, mask, cfg.num_heads, rate, dropout_rng)
        layer_caches.append(c)
    out, fin = _ln_fwd(x, p["pawa.final.scale"], p["pawa.final.offset"])
    return out, (embc, layer_caches, fin)


def _pawa_bwd(dout, cache, params, grads):
    embc, layer_caches, fin = cache
    p = params.tensors
    dx, ds, do = _ln_bwd(dout, fin)
    _acc(grads, "pawa.final.scale", ds)
    _acc(grads, "pawa.final.offset", do)
    for i in reversed(range(len(layer_caches))):
        dx = _self_block_bwd(dx, layer_caches[i], p, grads)
    _embed_bwd(dx, embc, p, grads)


def _head_fwd(params, h, tgt_in, dropout_rng):
    cfg, p = params.config, params.tensors
    if cfg.head_kind == "atomic":
        logits = h @ p["head.atomic"].T
        return logits, ("atomic", h)
    E = p[dec_embed_name(cfg)]
    if cfg.head_kind == "pawa":
        g, pawac = _pawa_fwd(params, tgt_in, dropout_rng)
        flat = g @ p["pawa.adapt.w"] + p["pawa.adapt.b"]
        B, L, _ = flat.shape
        A = flat.reshape(B, L, cfg.d_model, cfg.d_model)
        u = np.einsum("blij,blj->bli", A, h)
        logits = u @ E.T
        return logits, ("pawa", h, g, A, u, pawac)
    logits = h @ E.T
    return logits, ("standard", h)


def _head_bwd(dlogits, cache, params, grads):
    cfg, p = params.config, params.tensors
    kind = cache[0]
    if kind == "atomic":
        h = cache[1]
        _acc(grads, "head.atomic", np.einsum("blv,bld->vd", dlogits, h))
        return dlogits @ p["head.atomic"]
    E = p[dec_embed_name(cfg)]
    ename = dec_embed_name(cfg)
    if kind == "standard":
        h = cache[1]
        _acc(grads, ename, np.einsum("blv,bld->vd", dlogits, h))
        return dlogits @ E
    _, h, g, A, u, pawac = cache
    _acc(grads, ename, np.einsum("blv,bld->vd", dlogits, u))
    du = dlogits @ E
    dA = np.einsum("bli,blj->blij", du, h)
    dh = np.einsum("blij,bli->blj", A, du)
    B, L = dA.shape[:2]
    dflat = dA.reshape(B, L, cfg.d_model * cfg.d_model)
    _acc(grads, "pawa.adapt.w", np.einsum("bld,ble->de", g, dflat))
    _acc(grads, "pawa.adapt.b", dflat.sum((0, 1)))
    dg = dflat @ p["pawa.adapt.w"].T
    _pawa_bwd(dg, pawac, params, grads)
    return dh


def forward(params: ModelParams, src: np.ndarray, tgt_in: np.ndarray, dropout_rng=None):
    """Full teacher-forced pass.

    Returns (logits, h_dec, cache): logits (B, Lt, V) over the target
    vocabulary (V = corpus size for the atomic head, where Lt is 1), h_dec
    the final decoder states feeding the output projection.
    """
    src = np.asarray(src)
    tgt_in = np.asarray(tgt_in)
    if src.ndim != 2 or tgt_in.ndim != 2:
        raise ConfigError("src and tgt_in must be 2-d (batch, length)")
    enc_out, enc_cache = encode(params, src, dropout_rng)
    h, dec_cache = _decoder_fwd(params, enc_out, src, tgt_in, dropout_rng)
    logits, head_cache = _head_fwd(params, h, tgt_in, dropout_rng)
    return logits, h, (enc_cache, dec_cache, head_cache)


def backward(params: ModelParams, cache, dlogits, dh_extra=None) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given d(loss)/d(logits), plus an optional
    direct d(loss)/d(h_dec) term (used by the contrastive consistency loss)."""
    enc_cache, dec_cache, head_cache = cache
    grads: dict[str, np.ndarray] = {}
    dh = _head_bwd(dlogits, head_cache, params, grads)
    if dh_extra is not None:
        dh = dh + dh_extra
    denc = _decoder_bwd(dh, dec_cache, params, grads)
    _encode_bwd(denc, enc_cache, params, grads)
    return grads


def make_dec_input(tgt_out: np.ndarray) -> np.ndarray:
    """Teacher-forcing input: BOS followed by the target shifted right."""
    B, L = tgt_out.shape
    dec_in = np.empty((B, L), dtype=tgt_out.dtype)
    dec_in[:, 0] = BOS_ID
    dec_in[:, 1:] = tgt_out[:, :-1]
    return dec_in
