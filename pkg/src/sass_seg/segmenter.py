"""Micro U-Net with hand-written forward and backward passes.

Topology (channels-last, float64 throughout)::

    x ─ conv3x3(1→8)+ReLU ─┬─ maxpool2 ─ conv3x3(8→16)+ReLU ─ upsample2 ─┐
                           └───────────────── skip (8) ──────────────────┴─ concat(24)
      ─ conv3x3(24→8)+ReLU ─ conv1x1(8→1) ─ sigmoid

All parameters live in one flat vector; layer weights and biases are views
into it, so the flat view and the structured view never drift apart.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import bilinear_matrix

# (name, out_channels, in_channels, kernel)
LAYERS = (
    ("conv1", 8, 1, 3),
    ("conv2", 16, 8, 3),
    ("conv3", 8, 24, 3),
    ("conv4", 1, 8, 1),
)
LOGIT_CLIP = 30.0


def _layout():
    slices = {}
    offset = 0
    for name, o, i, k in LAYERS:
        n = o * i * k * k
        slices[name + "_w"] = (slice(offset, offset + n), (o, i, k, k))
        offset += n
        slices[name + "_b"] = (slice(offset, offset + o), (o,))
        offset += o
    return slices, offset


_SLICES, N_PARAMS = _layout()


class SegmenterParams:
    """Weights of the micro U-Net backed by a flat float64 vector."""

    def __init__(self, flat=None):
        if flat is None:
            flat = np.zeros(N_PARAMS)
        flat = np.array(flat, dtype=np.float64)
        if flat.shape != (N_PARAMS,):
            raise ValueError(f"expected {N_PARAMS} parameters, got shape {flat.shape}")
        self.flat = flat

    def __getitem__(self, name: str) -> np.ndarray:
        sl, shape = _SLICES[name]
        return self.flat[sl].reshape(shape)

    def __getattr__(self, name):
        if name in _SLICES:
            return self[name]
        raise AttributeError(name)

    def copy(self) -> "SegmenterParams":
        return SegmenterParams(self.flat.copy())

    def __eq__(self, other):
        return isinstance(other, SegmenterParams) and np.array_equal(self.flat, other.flat)

    def __len__(self):
        return N_PARAMS


def init_params(seed: int) -> SegmenterParams:
    """He-normal weights N(0, 2/fan_in) drawn in layer order from numpy's PCG64; zero biases."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = SegmenterParams()
    for name, o, i, k in LAYERS:
        w = params[name + "_w"]
        w[...] = rng.standard_normal(w.shape) * np.sqrt(2.0 / (i * k * k))
    return params


# --------------------------------------------------------------- primitives

def _im2col(x, k):
    """(B, H, W, C) -> (B*H*W, k*k*C) with zero 'same' padding, column order (ky, kx, c)."""
    b, h, w, c = x.shape
    if k == 1:
        return x.reshape(b * h * w, c)
    r = k // 2
    xp = np.pad(x, ((0, 0), (r, r), (r, r), (0, 0)))
    cols = np.empty((b, h, w, k, k, c))
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i:i + h, j:j + w, :]
    return cols.reshape(b * h * w, k * k * c)


def _wmat(w):
    # (O, C, k, k) -> (O, k*k*C) matching the im2col column order
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def _conv_forward(x, w, bias):
    """'Same' convolution. Returns the output and what the backward pass needs.

    Narrow layers (out_channels < in_channels) apply the per-offset weights to
    the padded input first and shift-add the small results; others use im2col.
    """
    b, h, wd, c = x.shape
    o, _, k, _ = w.shape
    if k > 1 and o < c:
        r = k // 2
        xp = np.pad(x, ((0, 0), (r, r), (r, r), (0, 0)))
        y = xp.reshape(-1, c) @ w.transpose(1, 2, 3, 0).reshape(c, -1)
        y = y.reshape(b, h + 2 * r, wd + 2 * r, k, k, o)
        out = np.zeros((b, h, wd, o))
        for i in range(k):
            for j in range(k):
                out += y[:, i:i + h, j:j + wd, i, j, :]
        return out + bias, xp
    cols = _im2col(x, k)
    out = cols @ _wmat(w).T + bias
    return out.reshape(b, h, wd, o), cols


def _conv_backward(dout, saved, w, x_shape, need_dx=True):
    o, c, k, _ = w.shape
    b, h, wd, _ = x_shape
    db = dout.reshape(-1, o).sum(axis=0)
    if k > 1 and o < c:
        # saved is the padded input; scatter dout into padded coordinates per offset
        r = k // 2
        hp, wp = h + 2 * r, wd + 2 * r
        dst = np.zeros((b, hp, wp, k, k, o))
        for i in range(k):
            for j in range(k):
                dst[:, i:i + h, j:j + wd, i, j, :] = dout
        dst = dst.reshape(-1, k * k * o)
        dw = (dst.T @ saved.reshape(-1, c)).reshape(k, k, o, c).transpose(2, 3, 0, 1)
        if not need_dx:
            return None, dw, db
        dxp = (dst @ w.transpose(2, 3, 0, 1).reshape(k * k * o, c)).reshape(b, hp, wp, c)
        return dxp[:, r:r + h, r:r + wd, :], dw, db
    d2 = dout.reshape(-1, o)
    dw = (d2.T @ saved).reshape(o, k, k, c).transpose(0, 3, 1, 2)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ _wmat(w)).reshape(b, h, wd, k, k, c)
    if k == 1:
        return dcols.reshape(b, h, wd, c), dw, db
    r = k // 2
    dxp = np.zeros((b, h + 2 * r, wd + 2 * r, c))
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + h, j:j + wd, :] += dcols[:, :, :, i, j, :]
    return dxp[:, r:r + h, r:r + wd, :], dw, db


def _pool_forward(x):
    b, h, w, c = x.shape
    blocks = x.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, h // 2, w // 2, c, 4)
    idx = np.argmax(blocks, axis=-1)  # first maximum wins ties
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout, idx, x_shape):
    b, h, w, c = x_shape
    blocks = np.zeros(idx.shape + (4,))
    np.put_along_axis(blocks, idx[..., None], dout[..., None], axis=-1)
    return blocks.reshape(b, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(x_shape)


def _upsample(x, mh, mw):
    # out[b, i, j, c] = sum_hw mh[i, h] x[b, h, w, c] mw[j, w]
    t = np.tensordot(mh, x, axes=(1, 1))  # (I, B, W, C)
    t = np.tensordot(mw, t, axes=(1, 2))  # (J, I, B, C)
    return np.ascontiguousarray(t.transpose(2, 1, 0, 3))


def _sigmoid(z):
    z = np.clip(z, -LOGIT_CLIP, LOGIT_CLIP)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ------------------------------------------------------------ forward/back

@dataclass
class ForwardCache:
    x: np.ndarray
    cols1: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    pool_idx: np.ndarray
    cols2: np.ndarray
    z2: np.ndarray
    up_h: np.ndarray
    up_w: np.ndarray
    cols3: np.ndarray
    z3: np.ndarray
    a3: np.ndarray
    z4: np.ndarray
    p: np.ndarray


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"expected (batch, height, width) input, got shape {x.shape}")
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ValueError(f"input height and width must be even, got {x.shape[1]}x{x.shape[2]}")
    return x


def forward(params: SegmenterParams, x):
    """Probabilities (B, H, W) for a batch of images scaled to [0, 1]."""
    x = _as_batch(x)
    _, h, w = x.shape
    x4 = x[..., None]
    z1, cols1 = _conv_forward(x4, params.conv1_w, params.conv1_b)
    a1 = np.maximum(z1, 0.0)
    pooled, pool_idx = _pool_forward(a1)
    z2, cols2 = _conv_forward(pooled, params.conv2_w, params.conv2_b)
    a2 = np.maximum(z2, 0.0)
    up_h = bilinear_matrix(h // 2, h)
    up_w = bilinear_matrix(w // 2, w)
    u = _upsample(a2, up_h, up_w)
    cat = np.concatenate([a1, u], axis=-1)
    z3, cols3 = _conv_forward(cat, params.conv3_w, params.conv3_b)
    a3 = np.maximum(z3, 0.0)
    z4, _ = _conv_forward(a3, params.conv4_w, params.conv4_b)
    z4 = z4[..., 0]
    p = _sigmoid(z4)
    cache = ForwardCache(x, cols1, z1, a1, pool_idx, cols2, z2, up_h, up_w, cols3, z3, a3, z4, p)
    return p, cache


def backward(params: SegmenterParams, cache: ForwardCache, dp) -> np.ndarray:
    """Flat gradient of the loss given dL/dp for every output pixel (summed over the batch)."""
    dp = np.asarray(dp, dtype=np.float64)
    if dp.ndim == 2:
        dp = dp[None]
    if dp.shape != cache.p.shape:
        raise ValueError(f"gradient shape {dp.shape} does not match output {cache.p.shape}")
    grad = SegmenterParams()
    p = cache.p
    dz4 = dp * p * (1.0 - p) * (np.abs(cache.z4) < LOGIT_CLIP)
    dz4 = dz4[..., None]

    da3, grad.conv4_w[...], grad.conv4_b[...] = _conv_backward(dz4, cache.a3.reshape(-1, 8), params.conv4_w, cache.a3.shape)
    dz3 = da3 * (cache.z3 > 0)
    b, h, w, _ = cache.a1.shape
    dcat, grad.conv3_w[...], grad.conv3_b[...] = _conv_backward(dz3, cache.cols3, params.conv3_w, (b, h, w, 24))
    da1_skip = dcat[..., :8]
    du = dcat[..., 8:]
    # transpose of the upsampling operator
    da2 = _upsample(du, cache.up_h.T, cache.up_w.T)
    dz2 = da2 * (cache.z2 > 0)
    dpooled, grad.conv2_w[...], grad.conv2_b[...] = _conv_backward(
        dz2, cache.cols2, params.conv2_w, (b, h // 2, w // 2, 8))
    da1 = da1_skip + _pool_backward(dpooled, cache.pool_idx, cache.a1.shape)
    dz1 = da1 * (cache.z1 > 0)
    _, grad.conv1_w[...], grad.conv1_b[...] = _conv_backward(
        dz1, cache.cols1, params.conv1_w, (b, h, w, 1), need_dx=False)
    return grad.flat


def predict(params: SegmenterParams, x, batch_size: int = 32) -> np.ndarray:
    x = _as_batch(x)
    return np.concatenate([forward(params, x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)])


# ----------------------------------------------------------------- optimizer

class Adam:
    """Adam with bias correction over the flat parameter vector."""

    def __init__(self, n_params: int = N_PARAMS, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: SegmenterParams, grad) -> SegmenterParams:
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.m.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match optimizer state {self.m.shape}")
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return SegmenterParams(params.flat - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))


# ---------------------------------------------------------------- checkpoint
#
# Little-endian layout:
#   8 bytes   magic b"SASSSEG\0"
#   uint32    format version (1)
#   uint32    number of layers L
#   L x 4 x uint32   (out_channels, in_channels, kernel_h, kernel_w)
#   uint64    number of parameters N
#   N x float64      flat parameter vector

MAGIC = b"SASSSEG\0"
VERSION = 1


def save_checkpoint(path, params: SegmenterParams, meta: dict | None = None) -> None:
    path = Path(path)
    buf = bytearray(MAGIC)
    buf += struct.pack("<II", VERSION, len(LAYERS))
    for _, o, i, k in LAYERS:
        buf += struct.pack("<IIII", o, i, k, k)
    buf += struct.pack("<Q", N_PARAMS)
    buf += params.flat.astype("<f8").tobytes()
    path.write_bytes(bytes(buf))
    if meta is not None:
        lines = [f"{k} = {v}" for k, v in meta.items()]
        path.with_suffix(path.suffix + ".meta").write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> SegmenterParams:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a segmenter checkpoint")
    version, n_layers = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    dims = [struct.unpack_from("<IIII", data, off + 16 * j) for j in range(n_layers)]
    expected = [(o, i, k, k) for _, o, i, k in LAYERS]
    if dims != expected:
        raise ValueError(f"{path}: layer dimensions {dims} do not match this network")
    off += 16 * n_layers
    (n,) = struct.unpack_from("<Q", data, off)
    off += 8
    if n != N_PARAMS or len(data) != off + 8 * n:
        raise ValueError(f"{path}: truncated or inconsistent parameter block")
    return SegmenterParams(np.frombuffer(data, dtype="<f8", count=n, offset=off))
