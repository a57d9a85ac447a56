"""Functional layer primitives with hand-derived parameter gradients.

Convention: ``*_forward`` returns ``(y, cache)`` and ``*_backward`` takes
``(dy, cache)`` and returns the input gradient, followed by a dict of
parameter gradients shaped exactly like the parameters. There is no autodiff
graph; these primitives are the whole differentiable surface. Parameter sets
are plain dicts of numpy arrays, treated as immutable once built.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError, FormatError, InvalidInputError

PARAMS_MAGIC = b"RENE"
PARAMS_VERSION = 1
_TAG_TO_DTYPE = {0: "<f4", 1: "<f8"}
_DTYPE_TO_TAG = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

_GELU_C = np.sqrt(2.0 / np.pi)


# ---------------------------------------------------------------- activations

def gelu_forward(x):
    x = np.asarray(x, dtype=np.float64)
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dy, cache):
    x, t = cache
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner)


def gelu(x):
    """Elementwise GELU, tanh approximation."""
    return gelu_forward(x)[0]


def sigmoid(x):
    # Split by sign so neither branch exponentiates a large positive value.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    """Max-subtracted softmax along `axis`."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dy, y, axis=-1):
    return (dy - (dy * y).sum(axis=axis, keepdims=True)) * y


# ----------------------------------------------------------------- layer norm

def layer_norm_forward(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    return gain * xhat + bias, (xhat, inv_std, gain)


def layer_norm_backward(dy, cache):
    xhat, inv_std, gain = cache
    n = xhat.shape[-1]
    dgain = (dy * xhat).reshape(-1, n).sum(axis=0)
    dbias = dy.reshape(-1, n).sum(axis=0)
    dxhat = dy * gain
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, {"gain": dgain, "bias": dbias}


# -------------------------------------------------------- positional encoding

def sinusoidal_positional_embedding(seq_len: int, dim: int) -> np.ndarray:
    """Interleaved sin/cos table: (p, 2i) = sin(p / 10000^(2i/dim))."""
    if dim % 2 != 0:
        raise InvalidInputError("positional embedding dim must be even")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / 10000.0 ** (2.0 * i / dim)
    table = np.empty((seq_len, dim))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


# --------------------------------------------------------------------- linear

def linear_forward(x, w, b):
    return x @ w + b, (x, w)


def linear_backward(dy, cache):
    x, w = cache
    d_in, d_out = w.shape
    x2 = x.reshape(-1, d_in)
    dy2 = dy.reshape(-1, d_out)
    dx = (dy2 @ w.T).reshape(x.shape)
    return dx, {"w": x2.T @ dy2, "b": dy2.sum(axis=0)}


# --------------------------------------------------------------------- conv1d

def conv1d_forward(x, w, b, stride=1, padding=0):
    """Cross-correlation over time. x: (T, Cin), w: (k, Cin, Cout).

    Output length is floor((T + 2*padding - k) / stride) + 1.
    """
    t_in, c_in = x.shape
    k, kc_in, c_out = w.shape
    if kc_in != c_in:
        raise InvalidInputError(f"kernel expects {kc_in} channels, got {c_in}")
    if t_in + 2 * padding < k:
        raise InvalidInputError("kernel wider than padded input")
    xp = np.pad(x, ((padding, padding), (0, 0)))
    t_out = (t_in + 2 * padding - k) // stride + 1
    idx = np.arange(t_out)[:, None] * stride + np.arange(k)[None, :]
    cols = xp[idx].reshape(t_out, k * c_in)
    y = cols @ w.reshape(k * c_in, c_out) + b
    return y, (cols, idx, w, x.shape, padding)


def conv1d_backward(dy, cache):
    cols, idx, w, x_shape, padding = cache
    t_in, c_in = x_shape
    k, _, c_out = w.shape
    w2 = w.reshape(k * c_in, c_out)
    dcols = (dy @ w2.T).reshape(-1, k, c_in)
    dxp = np.zeros((t_in + 2 * padding, c_in))
    np.add.at(dxp, idx, dcols)
    dx = dxp[padding : padding + t_in]
    dw = (cols.T @ dy).reshape(k, c_in, c_out)
    return dx, {"w": dw, "b": dy.sum(axis=0)}


# ----------------------------------------------------------- depthwise conv1d

def depthwise_conv1d_forward(x, w, b, padding):
    """Per-channel temporal conv, stride 1. x: (T, C), w: (k, C)."""
    t_in, c = x.shape
    k, kc = w.shape
    if kc != c:
        raise InvalidInputError(f"depthwise kernel expects {kc} channels, got {c}")
    if t_in + 2 * padding < k:
        raise InvalidInputError("kernel wider than padded input")
    xp = np.pad(x, ((padding, padding), (0, 0)))
    t_out = t_in + 2 * padding - k + 1
    idx = np.arange(t_out)[:, None] + np.arange(k)[None, :]
    cols = xp[idx]                     # (T_out, k, C)
    y = (cols * w).sum(axis=1) + b
    return y, (cols, idx, w, x.shape, padding)


def depthwise_conv1d_backward(dy, cache):
    cols, idx, w, x_shape, padding = cache
    t_in, c = x_shape
    dcols = dy[:, None, :] * w
    dxp = np.zeros((t_in + 2 * padding, c))
    np.add.at(dxp, idx, dcols)
    dx = dxp[padding : padding + t_in]
    dw = (cols * dy[:, None, :]).sum(axis=0)
    return dx, {"w": dw, "b": dy.sum(axis=0)}


# ------------------------------------------------- depthwise-separable conv2d

def depthwise_separable_conv2d_forward(x, dw_kernel, pw_weight, pw_bias):
    """Per-channel k x k spatial conv, then 1x1 channel mixing.

    x: (H, W, C); dw_kernel: (k, k, C); pw_weight: (C, Cout). Stride 1 with
    same padding, so the spatial shape is preserved. k must be odd.
    """
    h, w_dim, c = x.shape
    k, k2, kc = dw_kernel.shape
    if k != k2 or k % 2 == 0:
        raise InvalidInputError("depthwise kernel must be square with odd size")
    if kc != c or pw_weight.shape[0] != c:
        raise InvalidInputError("channel counts inconsistent")
    pad = (k - 1) // 2
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    ii = np.arange(h)[:, None, None, None] + np.arange(k)[None, None, :, None]
    jj = np.arange(w_dim)[None, :, None, None] + np.arange(k)[None, None, None, :]
    patches = xp[ii, jj]                      # (H, W, k, k, C)
    spatial = (patches * dw_kernel).sum(axis=(2, 3))
    y = spatial @ pw_weight + pw_bias
    return y, (patches, ii, jj, spatial, dw_kernel, pw_weight, x.shape, pad)


def depthwise_separable_conv2d_backward(dy, cache):
    patches, ii, jj, spatial, dw_kernel, pw_weight, x_shape, pad = cache
    h, w_dim, c = x_shape
    c_out = pw_weight.shape[1]
    d_pw = spatial.reshape(-1, c).T @ dy.reshape(-1, c_out)
    d_bias = dy.reshape(-1, c_out).sum(axis=0)
    d_spatial = dy @ pw_weight.T
    d_dw = (patches * d_spatial[:, :, None, None, :]).sum(axis=(0, 1))
    d_patches = d_spatial[:, :, None, None, :] * dw_kernel
    dxp = np.zeros((h + 2 * pad, w_dim + 2 * pad, c))
    np.add.at(dxp, (ii, jj), d_patches)
    dx = dxp[pad : pad + h, pad : pad + w_dim]
    return dx, {"dw_kernel": d_dw, "pw_weight": d_pw, "pw_bias": d_bias}


# ------------------------------------------------------------- self-attention

def multi_head_self_attention_forward(x, params, n_heads):
    """Scaled dot-product self-attention; scale is 1/sqrt(model_dim/n_heads)."""
    t, d = x.shape
    if d % n_heads != 0:
        raise InvalidInputError(f"model dim {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    scale = 1.0 / np.sqrt(dh)

    def split(m):
        return m.reshape(t, n_heads, dh).transpose(1, 0, 2)

    q = split(x @ params["wq"] + params["bq"])
    k = split(x @ params["wk"] + params["bk"])
    v = split(x @ params["wv"] + params["bv"])
    scores = q @ k.transpose(0, 2, 1) * scale
    attn = softmax(scores, axis=-1)
    ctx = (attn @ v).transpose(1, 0, 2).reshape(t, d)
    y = ctx @ params["wo"] + params["bo"]
    return y, (x, q, k, v, attn, ctx, params, n_heads, scale)


def multi_head_self_attention_backward(dy, cache):
    x, q, k, v, attn, ctx, params, n_heads, scale = cache
    t, d = x.shape
    dh = d // n_heads

    def merge(m):
        return m.transpose(1, 0, 2).reshape(t, d)

    grads = {"wo": ctx.T @ dy, "bo": dy.sum(axis=0)}
    dctx = (dy @ params["wo"].T).reshape(t, n_heads, dh).transpose(1, 0, 2)
    dattn = dctx @ v.transpose(0, 2, 1)
    dv = attn.transpose(0, 2, 1) @ dctx
    dscores = softmax_backward(dattn, attn) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 2, 1) @ q

    dq2, dk2, dv2 = merge(dq), merge(dk), merge(dv)
    grads["wq"], grads["bq"] = x.T @ dq2, dq2.sum(axis=0)
    grads["wk"], grads["bk"] = x.T @ dk2, dk2.sum(axis=0)
    grads["wv"], grads["bv"] = x.T @ dv2, dv2.sum(axis=0)
    dx = dq2 @ params["wq"].T + dk2 @ params["wk"].T + dv2 @ params["wv"].T
    return dx, grads


# ------------------------------------------------------------------------ GRU

def _gru_cell_forward(x, h, p):
    z = sigmoid(x @ p["wz"] + h @ p["uz"] + p["bz"])
    r = sigmoid(x @ p["wr"] + h @ p["ur"] + p["br"])
    hn = h @ p["un"]
    n = np.tanh(x @ p["wn"] + r * hn + p["bn"])
    h_new = (1.0 - z) * n + z * h
    return h_new, (x, h, z, r, n, hn)


def gru_cell_step(x, h_prev, params):
    """One GRU update: h_t = (1 - z) * n + z * h_prev."""
    return _gru_cell_forward(x, h_prev, params)[0]


def _gru_cell_backward(dh_new, cache, p, grads):
    x, h, z, r, n, hn = cache
    dz = dh_new * (h - n)
    dn = dh_new * (1.0 - z)
    dh = dh_new * z

    da_n = dn * (1.0 - n**2)
    grads["bn"] += da_n
    grads["wn"] += np.outer(x, da_n)
    dx = da_n @ p["wn"].T
    dr = da_n * hn
    d_hn = da_n * r
    grads["un"] += np.outer(h, d_hn)
    dh += d_hn @ p["un"].T

    da_r = dr * r * (1.0 - r)
    grads["br"] += da_r
    grads["wr"] += np.outer(x, da_r)
    grads["ur"] += np.outer(h, da_r)
    dx += da_r @ p["wr"].T
    dh += da_r @ p["ur"].T

    da_z = dz * z * (1.0 - z)
    grads["bz"] += da_z
    grads["wz"] += np.outer(x, da_z)
    grads["uz"] += np.outer(h, da_z)
    dx += da_z @ p["wz"].T
    dh += da_z @ p["uz"].T
    return dx, dh


def gru_sequence_forward(xs, params, h0=None):
    t = xs.shape[0]
    hidden = params["bz"].shape[0]
    h = np.zeros(hidden) if h0 is None else h0
    hs = np.empty((t, hidden))
    caches = []
    for i in range(t):
        h, cache = _gru_cell_forward(xs[i], h, params)
        hs[i] = h
        caches.append(cache)
    return hs, h, caches


def gru_sequence_backward(dhs, dh_final, caches, params):
    t = len(caches)
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dxs = np.empty((t, params["wz"].shape[0]))
    dh = np.zeros_like(dh_final) + dh_final
    for i in reversed(range(t)):
        if dhs is not None:
            dh = dh + dhs[i]
        dxs[i], dh = _gru_cell_backward(dh, caches[i], params, grads)
    return dxs, grads, dh


def bigru_forward(xs, params):
    """Run both directions; outputs (T, 2H), final state concat(fwd h_T, bwd h_1)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise InvalidInputError("bigru needs a non-empty (T, D) sequence")
    hs_f, hf, cache_f = gru_sequence_forward(xs, params["fwd"])
    hs_b, hb, cache_b = gru_sequence_forward(xs[::-1], params["bwd"])
    ys = np.concatenate([hs_f, hs_b[::-1]], axis=1)
    final = np.concatenate([hf, hb])
    return ys, final, (cache_f, cache_b, xs.shape)


def bigru_backward(dys, dfinal, cache, params):
    cache_f, cache_b, x_shape = cache
    hidden = len(dfinal) // 2
    dhs_f = None if dys is None else dys[:, :hidden]
    dhs_b = None if dys is None else dys[:, hidden:][::-1]
    dxs_f, grads_f, _ = gru_sequence_backward(
        dhs_f, dfinal[:hidden], cache_f, params["fwd"]
    )
    dxs_b, grads_b, _ = gru_sequence_backward(
        dhs_b, dfinal[hidden:], cache_b, params["bwd"]
    )
    return dxs_f + dxs_b[::-1], {"fwd": grads_f, "bwd": grads_b}


# ------------------------------------------------------------- initialization

def xavier_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_linear(rng, d_in, d_out):
    return {"w": xavier_uniform(rng, (d_in, d_out), d_in, d_out),
            "b": np.zeros(d_out)}


def init_conv1d(rng, k, c_in, c_out):
    return {"w": xavier_uniform(rng, (k, c_in, c_out), k * c_in, k * c_out),
            "b": np.zeros(c_out)}


def init_attention(rng, d):
    p = {}
    for name in ("wq", "wk", "wv", "wo"):
        p[name] = xavier_uniform(rng, (d, d), d, d)
        p["b" + name[1]] = np.zeros(d)
    return p


def init_gru(rng, d_in, hidden):
    p = {}
    for gate in "zrn":
        p["w" + gate] = xavier_uniform(rng, (d_in, hidden), d_in, hidden)
        p["u" + gate] = xavier_uniform(rng, (hidden, hidden), hidden, hidden)
        p["b" + gate] = np.zeros(hidden)
    return p


def init_bigru(rng, d_in, hidden):
    return {"fwd": init_gru(rng, d_in, hidden), "bwd": init_gru(rng, d_in, hidden)}


def init_depthwise_conv1d(rng, k, c):
    return {"w": xavier_uniform(rng, (k, c), k, k), "b": np.zeros(c)}


def init_depthwise_separable(rng, k, c, c_out):
    return {
        "dw_kernel": xavier_uniform(rng, (k, k, c), k * k, k * k),
        "pw_weight": xavier_uniform(rng, (c, c_out), c, c_out),
        "pw_bias": np.zeros(c_out),
    }


def init_layer_norm(d):
    return {"gain": np.ones(d), "bias": np.zeros(d)}


# ----------------------------------------------------------- gradient checker

def grad_check(loss_fn, arrays, analytic, step=1e-4, max_entries=None, rng=None):
    """Max relative error of analytic grads vs central finite differences.

    `loss_fn` is a zero-argument callable closing over `arrays`; entries are
    perturbed in place and restored. With `max_entries`, that many entries per
    array are sampled (seeded `rng` required) instead of sweeping all of them.
    """
    worst = 0.0
    for name, arr in arrays.items():
        g = analytic[name]
        if not np.all(np.isfinite(g)):
            raise DataError(f"non-finite analytic gradient for {name!r}")
        n = arr.size
        if max_entries is not None and n > max_entries:
            entries = rng.choice(n, size=max_entries, replace=False)
        else:
            entries = range(n)
        for idx in entries:
            orig = arr.flat[idx]
            arr.flat[idx] = orig + step
            up = loss_fn()
            arr.flat[idx] = orig - step
            down = loss_fn()
            arr.flat[idx] = orig
            numeric = (up - down) / (2.0 * step)
            # Floor guards exact-zero gradients (e.g. attention key bias)
            # against central-difference roundoff blowing up the ratio.
            denom = max(1e-6, abs(g.flat[idx]) + abs(numeric))
            worst = max(worst, abs(g.flat[idx] - numeric) / denom)
    return worst


# -------------------------------------------------------------- serialization

def flatten_params(params, prefix=""):
    """Nested dicts of arrays -> flat dict with dot-joined keys."""
    flat = {}
    for key, value in params.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten_params(value, name + "."))
        else:
            flat[name] = np.asarray(value)
    return flat


def unflatten_params(flat):
    nested: dict = {}
    for name, value in flat.items():
        parts = name.split(".")
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return nested


def save_params(path, params):
    """Single binary file: magic, u32 version, then little-endian records of
    (u32 name length, utf-8 name, u8 dtype tag, u8 rank, u32 dims, payload)."""
    flat = flatten_params(params)
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<I", PARAMS_VERSION))
        for name in sorted(flat):
            arr = flat[name]
            tag = _DTYPE_TO_TAG.get(arr.dtype, 1)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", tag, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=_TAG_TO_DTYPE[tag]).tobytes())


def load_params(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != PARAMS_MAGIC:
        raise FormatError("bad parameter-file magic", offset=0)
    if len(blob) < 8:
        raise FormatError("truncated header", offset=4)
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != PARAMS_VERSION:
        raise FormatError(f"unsupported format version {version}", offset=4)

    flat = {}
    pos = 8
    while pos < len(blob):
        start = pos
        try:
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            tag, rank = struct.unpack_from("<BB", blob, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            if tag not in _TAG_TO_DTYPE:
                raise FormatError(f"unknown dtype tag {tag}", offset=start)
            dtype = np.dtype(_TAG_TO_DTYPE[tag])
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            nbytes = count * dtype.itemsize
            if pos + nbytes > len(blob):
                raise FormatError("record payload truncated", offset=start)
            arr = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
            pos += nbytes
        except struct.error as exc:
            raise FormatError(f"malformed record: {exc}", offset=start) from None
        flat[name] = arr.reshape(dims).astype(np.float64)
    return unflatten_params(flat)
