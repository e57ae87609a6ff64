"""Convolutional-recurrent frame classifier written directly in numpy.

The network maps a normalised ``(batch, 31, n_bins)`` log-spectrogram patch
to per-frame class posteriors ``(batch, 31, 442)``:

    [conv 3x3 -> max-pool over frequency -> relu] x n_blocks
    -> bidirectional GRU (or LSTM) over the 31 frames
    -> dense -> softmax

Residual conv blocks and LSTM cells are available so the larger CRNN layout
(4 residual blocks + BiLSTM) can be expressed with the same code; the desk
preset is 2 plain blocks + a small BiGRU.
"""

from __future__ import annotations

import copy
import io
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import audio, pitch

N_CLASSES = pitch.N_CLASSES
CONTEXT = audio.CONTEXT

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
INITIAL_LR = 0.003
PLATEAU_FACTOR = 0.7
PLATEAU_PATIENCE = 3


class ShapeError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration / parameters

@dataclass(frozen=True)
class ConvBlock:
    channels: int
    kernel: int = 3
    freq_pool: int = 4
    residual: bool = False


@dataclass(frozen=True)
class ModelConfig:
    conv_blocks: tuple = (ConvBlock(8), ConvBlock(16))
    recurrent_hidden: int = 32
    bidirectional: bool = True
    cell: str = "gru"
    n_bins: int = audio.N_BINS
    output_classes: int = N_CLASSES
    context_frames: int = CONTEXT

    def __post_init__(self):
        blocks = tuple(b if isinstance(b, ConvBlock) else ConvBlock(*b) if not isinstance(b, dict)
                       else ConvBlock(**b) for b in self.conv_blocks)
        object.__setattr__(self, "conv_blocks", blocks)
        if self.output_classes != N_CLASSES:
            raise ValueError("output_classes must be %d" % N_CLASSES)
        if self.context_frames != CONTEXT:
            raise ValueError("context_frames must be %d" % CONTEXT)
        if self.cell not in ("gru", "lstm"):
            raise ValueError("cell must be 'gru' or 'lstm'")
        if self.recurrent_hidden < 1:
            raise ValueError("recurrent_hidden must be positive")
        f = self.n_bins
        for b in blocks:
            if b.kernel % 2 != 1 or b.freq_pool < 1 or b.channels < 1:
                raise ValueError("bad conv block %r" % (b,))
            f //= b.freq_pool
        if f < 1:
            raise ValueError("frequency axis pooled away entirely")

    @property
    def feature_dim(self) -> int:
        f = self.n_bins
        for b in self.conv_blocks:
            f //= b.freq_pool
        return f * self.conv_blocks[-1].channels if self.conv_blocks else f

    @property
    def recurrent_out(self) -> int:
        return self.recurrent_hidden * (2 if self.bidirectional else 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["conv_blocks"] = tuple(ConvBlock(**b) for b in d["conv_blocks"])
        return cls(**d)


def desk_config() -> ModelConfig:
    return ModelConfig()


def full_config() -> ModelConfig:
    """Four residual blocks and a BiLSTM; not used by the desk-scale runs."""
    blocks = tuple(ConvBlock(c, 3, 4, residual=True) for c in (64, 128, 192, 256))
    return ModelConfig(conv_blocks=blocks, recurrent_hidden=256, cell="lstm")


def tiny_config(cell="gru", residual=True, bidirectional=True) -> ModelConfig:
    """Few-parameter network for finite-difference gradient checks."""
    return ModelConfig(conv_blocks=(ConvBlock(2, 3, 2), ConvBlock(3, 3, 2, residual=residual)),
                       recurrent_hidden=3, bidirectional=bidirectional, cell=cell, n_bins=12)


@dataclass
class ModelParams:
    config: ModelConfig
    weights: dict
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None
    tag: str = ""

    @property
    def norm(self):
        if self.norm_mean is None:
            return None
        return self.norm_mean, self.norm_std

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype


def _directions(config):
    return ("fwd", "bwd") if config.bidirectional else ("fwd",)


def param_shapes(config: ModelConfig) -> dict:
    shapes = {}
    c_in = 1
    for i, b in enumerate(config.conv_blocks):
        k = b.kernel
        if b.residual:
            shapes["conv%d.a.w" % i] = (k, k, c_in, b.channels)
            shapes["conv%d.a.b" % i] = (b.channels,)
            shapes["conv%d.b.w" % i] = (k, k, b.channels, b.channels)
            shapes["conv%d.b.b" % i] = (b.channels,)
            shapes["conv%d.skip.w" % i] = (1, 1, c_in, b.channels)
            shapes["conv%d.skip.b" % i] = (b.channels,)
        else:
            shapes["conv%d.w" % i] = (k, k, c_in, b.channels)
            shapes["conv%d.b" % i] = (b.channels,)
        c_in = b.channels
    gates = 3 if config.cell == "gru" else 4
    H = config.recurrent_hidden
    for d in _directions(config):
        shapes["rnn_%s.wx" % d] = (config.feature_dim, gates * H)
        shapes["rnn_%s.wh" % d] = (H, gates * H)
        shapes["rnn_%s.b" % d] = (gates * H,)
    shapes["out.w"] = (config.recurrent_out, config.output_classes)
    shapes["out.b"] = (config.output_classes,)
    return shapes


def init_params(config: ModelConfig, seed: int, dtype=np.float32, norm=None) -> ModelParams:
    """Fan-in scaled uniform init; biases zero.

    Convolutions (followed by ReLU) use U(-sqrt(6/fan_in), sqrt(6/fan_in)),
    recurrent and output matrices U(-sqrt(3/fan_in), sqrt(3/fan_in)).
    """
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            w = np.zeros(shape)
            if name.startswith("rnn_") and config.cell == "lstm":
                H = config.recurrent_hidden
                w[H:2 * H] = 1.0  # forget-gate bias
        else:
            fan_in = int(np.prod(shape[:-1]))
            gain = 6.0 if name.startswith("conv") else 3.0
            w = rng.uniform(-1.0, 1.0, size=shape) * np.sqrt(gain / fan_in)
        weights[name] = w.astype(dtype)
    mean = std = None
    if norm is not None:
        mean = np.asarray(norm[0], dtype=np.float32)
        std = np.asarray(norm[1], dtype=np.float32)
    return ModelParams(config, weights, mean, std)


# ---------------------------------------------------------------------------
# layers

def _conv_forward(x, w, b):
    """'Same' 2-D convolution on channel-first activations ``(B, T, C, F)``.

    ``w`` is stored as ``(k, k, C_in, C_out)``.
    """
    B, T, C, F = x.shape
    k = w.shape[0]
    p = k // 2
    if p:
        xp = np.pad(x, ((0, 0), (p, p), (0, 0), (p, p)))
        cols = np.concatenate([xp[:, i:i + T, :, j:j + F] for i in range(k) for j in range(k)],
                              axis=2)
    else:
        cols = x
    wm = w.reshape(k * k * C, -1).T
    out = np.matmul(wm, cols)
    out += b[:, None]
    return out, cols


def _conv_backward(dout, cols, w, x_shape, need_dx=True):
    B, T, C, F = x_shape
    k = w.shape[0]
    p = k // 2
    dwm = np.matmul(dout, cols.swapaxes(-1, -2)).sum(axis=(0, 1))
    dw = dwm.T.reshape(w.shape)
    db = dout.sum(axis=(0, 1, 3))
    if not need_dx:
        return None, dw, db
    dcols = np.matmul(w.reshape(k * k * C, -1), dout)
    if not p:
        return dcols, dw, db
    dxp = np.zeros((B, T + 2 * p, C, F + 2 * p), dtype=dout.dtype)
    n = 0
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + T, :, j:j + F] += dcols[:, :, n * C:(n + 1) * C, :]
            n += 1
    return dxp[:, p:p + T, :, p:p + F], dw, db


def _pool_forward(x, pool):
    """Max-pool the (last) frequency axis; trailing bins that do not fill a window are dropped."""
    Fp = x.shape[-1] // pool
    out = x[..., 0:Fp * pool:pool].copy()
    for s in range(1, pool):
        np.maximum(out, x[..., s:Fp * pool:pool], out=out)
    return out


def _pool_backward(dout, x, out, pool):
    # route each gradient to the first position attaining the window maximum
    Fp = x.shape[-1] // pool
    dx = np.zeros(x.shape, dtype=dout.dtype)
    taken = np.zeros(out.shape, dtype=bool)
    for s in range(pool):
        hit = x[..., s:Fp * pool:pool] == out
        hit &= ~taken
        taken |= hit
        np.multiply(dout, hit, out=dx[..., s:Fp * pool:pool])
    return dx


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _gru_forward(x, wx, wh, b, reverse=False):
    B, T, _ = x.shape
    H = wh.shape[0]
    xp = (x.reshape(B * T, -1) @ wx + b).reshape(B, T, -1)
    h = np.zeros((B, H), dtype=x.dtype)
    hs = np.empty((B, T, H), dtype=x.dtype)
    cache = []
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        hh = h @ wh
        r = _sigmoid(xp[:, t, :H] + hh[:, :H])
        z = _sigmoid(xp[:, t, H:2 * H] + hh[:, H:2 * H])
        n = np.tanh(xp[:, t, 2 * H:] + r * hh[:, 2 * H:])
        cache.append((t, h, r, z, n, hh[:, 2 * H:]))
        h = (1.0 - z) * n + z * h
        hs[:, t] = h
    return hs, cache


def _gru_backward(dhs, x, wx, wh, cache):
    B, T, _ = dhs.shape
    H = wh.shape[0]
    dxp = np.empty((B, T, 3 * H), dtype=dhs.dtype)
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((B, H), dtype=dhs.dtype)
    for t, h_prev, r, z, n, hn in reversed(cache):
        dh = dhs[:, t] + dh_next
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dan = dn * (1.0 - n * n)
        dar = dan * hn * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dhh = np.concatenate([dar, daz, dan * r], axis=1)
        dxp[:, t] = np.concatenate([dar, daz, dan], axis=1)
        dwh += h_prev.T @ dhh
        dh_next = dh * z + dhh @ wh.T
    d2 = dxp.reshape(B * T, -1)
    dwx = x.reshape(B * T, -1).T @ d2
    db = d2.sum(axis=0)
    dx = (d2 @ wx.T).reshape(x.shape)
    return dx, dwx, dwh, db


def _lstm_forward(x, wx, wh, b, reverse=False):
    B, T, _ = x.shape
    H = wh.shape[0]
    xp = (x.reshape(B * T, -1) @ wx + b).reshape(B, T, -1)
    h = np.zeros((B, H), dtype=x.dtype)
    c = np.zeros((B, H), dtype=x.dtype)
    hs = np.empty((B, T, H), dtype=x.dtype)
    cache = []
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        a = xp[:, t] + h @ wh
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid(a[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        cache.append((t, h, c, i, f, g, o, tc))
        h, c = o * tc, c_new
        hs[:, t] = h
    return hs, cache


def _lstm_backward(dhs, x, wx, wh, cache):
    B, T, _ = dhs.shape
    H = wh.shape[0]
    dxp = np.empty((B, T, 4 * H), dtype=dhs.dtype)
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((B, H), dtype=dhs.dtype)
    dc_next = np.zeros((B, H), dtype=dhs.dtype)
    for t, h_prev, c_prev, i, f, g, o, tc in reversed(cache):
        dh = dhs[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = np.concatenate([dc * g * i * (1.0 - i),
                             dc * c_prev * f * (1.0 - f),
                             dc * i * (1.0 - g * g),
                             do * o * (1.0 - o)], axis=1)
        dxp[:, t] = da
        dwh += h_prev.T @ da
        dh_next = da @ wh.T
        dc_next = dc * f
    d2 = dxp.reshape(B * T, -1)
    dwx = x.reshape(B * T, -1).T @ d2
    db = d2.sum(axis=0)
    dx = (d2 @ wx.T).reshape(x.shape)
    return dx, dwx, dwh, db


_RNN = {"gru": (_gru_forward, _gru_backward), "lstm": (_lstm_forward, _lstm_backward)}


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# network

def _check_input(params, x):
    cfg = params.config
    if x.ndim != 3 or x.shape[1] != cfg.context_frames or x.shape[2] != cfg.n_bins:
        raise ShapeError("expected (batch, %d, %d) patches, got %s"
                         % (cfg.context_frames, cfg.n_bins, x.shape))


def _forward(params, x):
    cfg, W = params.config, params.weights
    x = np.asarray(x, dtype=params.dtype)
    _check_input(params, x)
    caches = []
    h = x[:, :, None, :]
    for i, blk in enumerate(cfg.conv_blocks):
        c = {"x_shape": h.shape}
        if blk.residual:
            a1, c["cols_a"] = _conv_forward(h, W["conv%d.a.w" % i], W["conv%d.a.b" % i])
            c["mask_a"] = a1 > 0
            r1 = a1 * c["mask_a"]
            c["ra_shape"] = r1.shape
            a2, c["cols_b"] = _conv_forward(r1, W["conv%d.b.w" % i], W["conv%d.b.b" % i])
            s, c["cols_s"] = _conv_forward(h, W["conv%d.skip.w" % i], W["conv%d.skip.b" % i])
            pre = a2 + s
        else:
            pre, c["cols"] = _conv_forward(h, W["conv%d.w" % i], W["conv%d.b" % i])
        c["pre"] = pre
        pooled = c["pooled"] = _pool_forward(pre, blk.freq_pool)
        c["mask"] = pooled > 0
        h = pooled * c["mask"]
        caches.append(c)
    B, T = h.shape[:2]
    feat = h.reshape(B, T, -1)
    fwd, _ = _RNN[cfg.cell]
    outs, rnn_caches = [], {}
    for d in _directions(cfg):
        hs, rnn_caches[d] = fwd(feat, W["rnn_%s.wx" % d], W["rnn_%s.wh" % d], W["rnn_%s.b" % d],
                                reverse=(d == "bwd"))
        outs.append(hs)
    rnn_out = np.concatenate(outs, axis=-1) if len(outs) > 1 else outs[0]
    logits = rnn_out @ W["out.w"] + W["out.b"]
    probs = softmax(logits)
    cache = {"conv": caches, "feat_shape": h.shape, "feat": feat, "rnn": rnn_caches,
             "rnn_out": rnn_out}
    return probs, cache


def forward(params: ModelParams, patches) -> np.ndarray:
    """Per-frame posteriors ``(batch, 31, 442)`` for normalised patches."""
    if isinstance(patches, (list, tuple)):
        patches = np.stack([getattr(p, "values", p) for p in patches])
    probs, _ = _forward(params, patches)
    return probs


def _backward(params, cache, dlogits):
    cfg, W = params.config, params.weights
    grads = {}
    B, T, C = dlogits.shape
    rnn_out = cache["rnn_out"]
    d2 = dlogits.reshape(-1, C)
    grads["out.w"] = rnn_out.reshape(B * T, -1).T @ d2
    grads["out.b"] = d2.sum(axis=0)
    drnn = dlogits @ W["out.w"].T
    _, bwd = _RNN[cfg.cell]
    H = cfg.recurrent_hidden
    dfeat = None
    for k, d in enumerate(_directions(cfg)):
        dh = drnn[:, :, k * H:(k + 1) * H]
        dx, dwx, dwh, db = bwd(dh, cache["feat"], W["rnn_%s.wx" % d], W["rnn_%s.wh" % d],
                               cache["rnn"][d])
        grads["rnn_%s.wx" % d], grads["rnn_%s.wh" % d], grads["rnn_%s.b" % d] = dwx, dwh, db
        dfeat = dx if dfeat is None else dfeat + dx
    dh = dfeat.reshape(cache["feat_shape"])
    for i in range(len(cfg.conv_blocks) - 1, -1, -1):
        blk, c = cfg.conv_blocks[i], cache["conv"][i]
        dpooled = dh * c["mask"]
        dpre = _pool_backward(dpooled, c["pre"], c["pooled"], blk.freq_pool)
        need_dx = i > 0
        if blk.residual:
            dr1, grads["conv%d.b.w" % i], grads["conv%d.b.b" % i] = _conv_backward(
                dpre, c["cols_b"], W["conv%d.b.w" % i], c["ra_shape"])
            da1 = dr1 * c["mask_a"]
            dxa, grads["conv%d.a.w" % i], grads["conv%d.a.b" % i] = _conv_backward(
                da1, c["cols_a"], W["conv%d.a.w" % i], c["x_shape"], need_dx)
            dxs, grads["conv%d.skip.w" % i], grads["conv%d.skip.b" % i] = _conv_backward(
                dpre, c["cols_s"], W["conv%d.skip.w" % i], c["x_shape"], need_dx)
            dh = dxa + dxs if need_dx else None
        else:
            dh, grads["conv%d.w" % i], grads["conv%d.b" % i] = _conv_backward(
                dpre, c["cols"], W["conv%d.w" % i], c["x_shape"], need_dx)
    return grads


def _target_terms(probs, targets, weights):
    """Per-frame cross-entropy and d(loss)/d(logits) for the weighted sum of frames."""
    B, T, C = probs.shape
    if targets.ndim == 2:
        flat = targets.reshape(-1)
        p_true = probs.reshape(-1, C)[np.arange(flat.size), flat].reshape(B, T)
        ce = -np.log(p_true + 1e-12)
        grad = probs.copy()
        grad.reshape(-1, C)[np.arange(flat.size), flat] -= 1.0
    else:
        ce = -np.sum(targets * np.log(probs + 1e-12), axis=-1)
        grad = probs - targets
    grad *= weights[..., None]
    return ce, grad


def cross_entropy(targets, probs) -> float:
    """Mean over frames of -sum_c t_c ln(p_c + 1e-12).

    ``targets`` is either integer labels with one dimension fewer than
    ``probs`` or distribution rows of the same shape.
    """
    targets = np.asarray(targets)
    probs = np.asarray(probs)
    C = probs.shape[-1]
    p2 = probs.reshape(-1, C)
    if targets.ndim == probs.ndim - 1:
        flat = targets.reshape(-1).astype(np.int64)
        ce = -np.log(p2[np.arange(flat.size), flat] + 1e-12)
    else:
        ce = -np.sum(targets.reshape(-1, C) * np.log(p2 + 1e-12), axis=-1)
    return float(np.mean(ce))


def loss_and_grads(params: ModelParams, patches, targets, weights=None):
    """Weighted frame cross-entropy and its gradient w.r.t. every weight.

    ``weights`` is a per-frame ``(batch, 31)`` array; by default every frame
    gets ``1 / n_frames`` so the loss is the plain mean.
    """
    probs, cache = _forward(params, patches)
    targets = np.asarray(targets)
    if weights is None:
        weights = np.full(probs.shape[:2], 1.0 / (probs.shape[0] * probs.shape[1]))
    weights = np.asarray(weights, dtype=probs.dtype)
    if targets.ndim == 3:
        targets = targets.astype(probs.dtype, copy=False)
    ce, dlogits = _target_terms(probs, targets, weights)
    grads = _backward(params, cache, dlogits)
    return float(np.sum(ce * weights)), grads


def backward(params: ModelParams, patches, targets, weights=None) -> dict:
    """Gradient of the (mean) cross-entropy w.r.t. every weight."""
    return loss_and_grads(params, patches, targets, weights)[1]


# ---------------------------------------------------------------------------
# optimisation

@dataclass
class OptimizerState:
    lr: float = INITIAL_LR
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    best_val: float = -np.inf
    plateau_counter: int = 0
    flagged_batches: int = 0


def adam_step(params: ModelParams, grads: dict, state: OptimizerState):
    """One Adam update in place. Non-finite gradients skip the step and flag the batch."""
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        state.flagged_batches += 1
        return params, state
    state.step += 1
    t = state.step
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for name, g in grads.items():
        w = params.weights[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        m, v = state.m[name], state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        w -= (state.lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)).astype(w.dtype)
    return params, state


def plateau_update(state: OptimizerState, val_accuracy: float) -> OptimizerState:
    """Multiply lr by 0.7 after 3 consecutive reports without a new best."""
    if not 0.0 <= val_accuracy <= 1.0:
        raise ValueError("validation accuracy must lie in [0, 1]")
    if val_accuracy > state.best_val:
        state.best_val = val_accuracy
        state.plateau_counter = 0
    else:
        state.plateau_counter += 1
        if state.plateau_counter >= PLATEAU_PATIENCE:
            state.lr *= PLATEAU_FACTOR
            state.plateau_counter = 0
    return state


# ---------------------------------------------------------------------------
# inference

def predict_probs(params: ModelParams, values: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Frame posteriors ``(n_frames, 442)`` for a raw log-magnitude matrix.

    Non-overlapping 31-frame windows (stride 31) tile the track.
    """
    n = values.shape[0]
    L = audio.CONTEXT
    # window i covers frames 31*i .. 31*i + 30; the last one is reflect padded
    centers = L // 2 + L * np.arange(-(-n // L))
    rows = audio.patch_rows(centers, n)
    values = audio.normalize(values, params.norm)
    out = np.empty((len(centers) * L, N_CLASSES), dtype=params.dtype)
    for s in range(0, len(centers), batch_size):
        probs = forward(params, values[rows[s:s + batch_size]])
        out[s * L:(s + len(probs)) * L] = probs.reshape(-1, N_CLASSES)
    return out[:n]


def probs_to_contour(probs: np.ndarray) -> np.ndarray:
    return pitch.label_to_freq(np.argmax(probs, axis=-1))


def predict_contour(params: ModelParams, clip: audio.AudioClip) -> np.ndarray:
    """Any-length clip -> f0 contour (Hz, 0 = unvoiced) with ceil(samples/80) frames."""
    spec = audio.stft_logmag(audio.to_mono_8k(clip))
    return probs_to_contour(predict_probs(params, spec.values))


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"MSSLCKPT"
FORMAT_VERSION = 1


def _write_array(buf, a):
    a = np.asarray(a, dtype="<f4")
    buf.write(struct.pack("<B", a.ndim))
    buf.write(struct.pack("<%dI" % a.ndim, *a.shape))
    buf.write(a.tobytes(order="C"))


def _read_array(buf):
    (ndim,) = struct.unpack("<B", buf.read(1))
    shape = struct.unpack("<%dI" % ndim, buf.read(4 * ndim))
    n = int(np.prod(shape)) if ndim else 1
    data = buf.read(4 * n)
    if len(data) != 4 * n:
        raise CheckpointError("truncated checkpoint")
    return np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)


def checkpoint_bytes(params: ModelParams) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    header = json.dumps({"config": params.config.to_dict(), "tag": params.tag},
                        sort_keys=True).encode()
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    has_norm = params.norm_mean is not None
    buf.write(struct.pack("<B", int(has_norm)))
    if has_norm:
        _write_array(buf, params.norm_mean)
        _write_array(buf, params.norm_std)
    names = list(param_shapes(params.config))
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        _write_array(buf, params.weights[name])
    return buf.getvalue()


def save_checkpoint(path, params: ModelParams) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params))


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


def checkpoint_from_bytes(data: bytes) -> ModelParams:
    buf = io.BytesIO(data)
    if buf.read(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a melodyssl checkpoint")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != FORMAT_VERSION:
        raise CheckpointError("unsupported checkpoint version %d" % version)
    (hlen,) = struct.unpack("<I", buf.read(4))
    header = json.loads(buf.read(hlen).decode())
    config = ModelConfig.from_dict(header["config"])
    (has_norm,) = struct.unpack("<B", buf.read(1))
    mean = std = None
    if has_norm:
        mean, std = _read_array(buf), _read_array(buf)
    (count,) = struct.unpack("<I", buf.read(4))
    weights = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", buf.read(2))
        name = buf.read(nlen).decode()
        weights[name] = _read_array(buf)
    shapes = param_shapes(config)
    if set(weights) != set(shapes) or any(weights[k].shape != tuple(s) for k, s in shapes.items()):
        raise CheckpointError("checkpoint tensors do not match its config")
    return ModelParams(config, weights, mean, std, header.get("tag", ""))
