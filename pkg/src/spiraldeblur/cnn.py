"""Three-layer residual CNN for off-resonance deblurring, in plain numpy.

Architecture (two real channels = real and imaginary parts)::

    conv 9x9, 2 -> 64, ReLU
    conv 5x5, 64 -> 32, ReLU
    conv 1x1, 32 -> 2
    output = input + stack(input)

Convolutions are cross-correlations with zero "same" padding. Gradients are
computed by hand (reverse mode) and checked against finite differences in
the test suite.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import make_rng

__all__ = [
    "ConvSpec",
    "CnnModel",
    "ARCHITECTURE",
    "TrainConfig",
    "TrainLog",
    "init_model",
    "zero_model",
    "conv2d",
    "forward",
    "infer",
    "loss",
    "loss_and_grad_output",
    "backward",
    "Adam",
    "train",
    "to_channels",
    "from_channels",
]

log = logging.getLogger(__name__)

# im2col buffers above this many elements are split over the batch
_MAX_COLS = 2 ** 25


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    relu: bool

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd, got {self.kernel}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")


ARCHITECTURE = (
    ConvSpec(2, 64, 9, True),
    ConvSpec(64, 32, 5, True),
    ConvSpec(32, 2, 1, False),
)


@dataclass
class CnnModel:
    specs: tuple[ConvSpec, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.specs) != len(self.weights) or len(self.specs) != len(self.biases):
            raise ValueError("one weight and bias tensor per layer is required")
        for s, w, b in zip(self.specs, self.weights, self.biases):
            if w.shape != (s.out_channels, s.in_channels, s.kernel, s.kernel):
                raise ValueError(f"weight shape {w.shape} does not match {s}")
            if b.shape != (s.out_channels,):
                raise ValueError(f"bias shape {b.shape} does not match {s}")
        if self.specs[0].in_channels != self.specs[-1].out_channels:
            raise ValueError("residual connection needs matching input/output channels")

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    @property
    def receptive_radius(self) -> int:
        return sum((s.kernel - 1) // 2 for s in self.specs)

    def copy(self, dtype=None) -> "CnnModel":
        dtype = dtype or self.weights[0].dtype
        return CnnModel(self.specs, [w.astype(dtype, copy=True) for w in self.weights],
                        [b.astype(dtype, copy=True) for b in self.biases])


def init_model(seed: int = 0, specs=ARCHITECTURE, zero_last: bool = True) -> CnnModel:
    """He-normal weights scaled by fan-in, zero biases.

    With ``zero_last`` the final (linear) layer starts at zero, so the
    residual network starts as the identity map. Its gradient is still
    nonzero because the hidden activations are not.
    """
    rng = make_rng(seed, 0xC0DE)
    weights, biases = [], []
    for s in specs:
        fan_in = s.in_channels * s.kernel * s.kernel
        weights.append(rng.standard_normal((s.out_channels, s.in_channels, s.kernel, s.kernel))
                       * math.sqrt(2.0 / fan_in))
        biases.append(np.zeros(s.out_channels))
    if zero_last:
        weights[-1][:] = 0.0
    return CnnModel(tuple(specs), weights, biases)


def zero_model(specs=ARCHITECTURE) -> CnnModel:
    return CnnModel(tuple(specs),
                    [np.zeros((s.out_channels, s.in_channels, s.kernel, s.kernel)) for s in specs],
                    [np.zeros(s.out_channels) for s in specs])


def to_channels(img) -> np.ndarray:
    """Complex ``(..., H, W)`` image to real ``(..., 2, H, W)`` (re, im)."""
    img = np.asarray(img)
    return np.stack([img.real, img.imag], axis=-3).astype(np.float64)


def from_channels(x) -> np.ndarray:
    x = np.asarray(x)
    return x[..., 0, :, :] + 1j * x[..., 1, :, :]


def _im2col(x, k):
    """``(C, B, H, W)`` -> ``(C*k*k, B*H*W)`` with zero same-padding."""
    c, b, h, w = x.shape
    if k == 1:
        return x.reshape(c, b * h * w)
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (C, B, H, W, k, k)
    return win.transpose(0, 4, 5, 1, 2, 3).reshape(c * k * k, b * h * w)


def _chunks(x, k):
    c, b, h, w = x.shape
    per = max(1, _MAX_COLS // (c * k * k * h * w))
    return [(s, min(b, s + per)) for s in range(0, b, per)]


def _conv(x, weight, bias, keep_cols=False):
    """Correlation on the internal ``(C, B, H, W)`` layout.

    Returns the output and, when ``keep_cols`` is set and the batch fits in
    one im2col buffer, that buffer for reuse in the backward pass.
    """
    o, c, k, k2 = weight.shape
    if k != k2 or x.shape[0] != c:
        raise ValueError(f"input with {x.shape[0]} channels does not match weight {weight.shape}")
    _, b, h, w = x.shape
    wm = weight.reshape(o, -1)
    chunks = _chunks(x, k)
    if len(chunks) == 1:
        cols = _im2col(x, k)
        out = (wm @ cols).reshape(o, b, h, w)
        out += bias[:, None, None, None]
        return out, (cols if keep_cols else None)
    out = np.empty((o, b, h, w), dtype=np.result_type(x, weight))
    for s, e in chunks:
        out[:, s:e] = (wm @ _im2col(x[:, s:e], k)).reshape(o, e - s, h, w)
    out += bias[:, None, None, None]
    return out, None


def conv2d(x, weight, bias) -> np.ndarray:
    """Same-size 2-D cross-correlation.

    ``out[b, o] = bias[o] + sum_c x[b, c] (*) weight[o, c]`` where ``(*)``
    is cross-correlation with zero padding ``(k - 1) / 2``. ``x`` is
    ``(C, H, W)`` or ``(B, C, H, W)``; inputs smaller than the kernel are
    allowed (the padding supplies the missing taps).
    """
    x = np.asarray(x)
    single = x.ndim == 3
    xi = x[:, None] if single else x.transpose(1, 0, 2, 3)
    out, _ = _conv(xi, np.asarray(weight), np.asarray(bias))
    return out[:, 0] if single else out.transpose(1, 0, 2, 3)


def _conv_backward(x, weight, gout, cols=None, need_input=True):
    """Gradients of ``_conv`` w.r.t. weight, bias and (optionally) input."""
    o, c, k, _ = weight.shape
    g = gout.reshape(o, -1)
    if cols is not None:
        gw = g @ cols.T
    else:
        gw = np.zeros((o, c * k * k), dtype=gout.dtype)
        for s, e in _chunks(x, k):
            gw += gout[:, s:e].reshape(o, -1) @ _im2col(x[:, s:e], k).T
    gb = g.sum(axis=1)
    gx = None
    if need_input:
        # adjoint of same-padded correlation: correlate with the flipped, transposed kernel
        wt = np.ascontiguousarray(weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gx, _ = _conv(gout, wt, np.zeros(c, dtype=gout.dtype))
    return gw.reshape(weight.shape), gb, gx


def _forward_cache(model: CnnModel, x, keep=False):
    """Forward pass on the ``(C, B, H, W)`` layout, optionally caching for backward."""
    k = max(s.kernel for s in model.specs)
    if x.shape[2] < k or x.shape[3] < k:
        raise ValueError(f"spatial size {x.shape[2:]} is smaller than the {k}x{k} network minimum")
    acts, pre, cols = [x], [], []
    h = x
    for s, w, b in zip(model.specs, model.weights, model.biases):
        z, col = _conv(h, w, b, keep_cols=keep)
        cols.append(col)
        if s.relu:
            pre.append(z > 0)
            h = np.maximum(z, 0, out=z)
        else:
            pre.append(None)
            h = z
        acts.append(h)
    return x + h, acts, pre, cols


def forward(model: CnnModel, img):
    """Apply the network.

    ``img`` is a complex ``(H, W)`` image (returns complex) or a real
    ``(2, H, W)`` / ``(B, 2, H, W)`` channel array (returns the same layout).
    """
    img = np.asarray(img)
    if np.iscomplexobj(img):
        x = to_channels(img).astype(model.weights[0].dtype)
        return from_channels(forward(model, x))
    single = img.ndim == 3
    xi = img[:, None] if single else img.transpose(1, 0, 2, 3)
    out = _forward_cache(model, xi)[0]
    return out[:, 0] if single else out.transpose(1, 0, 2, 3)


def infer(model: CnnModel, img):
    """Inference entry point; identical to :func:`forward`."""
    return forward(model, img)


def loss_and_grad_output(pred, target, lam_gdl: float = 1.0):
    """L1 + gradient-difference loss and its gradient w.r.t. ``pred``.

    ``pred`` and ``target`` are real arrays ``(..., C, H, W)``. The L1 term
    is the mean absolute error over every element. The GDL term is the mean
    over all horizontal and vertical neighbour pairs (and channels, and
    batch) of ``| |d pred| - |d target| |`` with forward differences. A
    zero subgradient is used at the kinks of ``|.|``.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    l1 = np.abs(diff).mean()
    grad = np.sign(diff) / diff.size
    total = l1
    if lam_gdl:
        dph = np.diff(pred, axis=-1)
        dth = np.diff(target, axis=-1)
        dpv = np.diff(pred, axis=-2)
        dtv = np.diff(target, axis=-2)
        eh = np.abs(dph) - np.abs(dth)
        ev = np.abs(dpv) - np.abs(dtv)
        n_pairs = eh.size + ev.size
        gdl = (np.abs(eh).sum() + np.abs(ev).sum()) / n_pairs
        total = l1 + lam_gdl * gdl
        gh = np.sign(eh) * np.sign(dph) * (lam_gdl / n_pairs)
        gv = np.sign(ev) * np.sign(dpv) * (lam_gdl / n_pairs)
        grad[..., :, 1:] += gh
        grad[..., :, :-1] -= gh
        grad[..., 1:, :] += gv
        grad[..., :-1, :] -= gv
    return float(total), grad


def loss(pred, target, lam_gdl: float = 1.0) -> float:
    """L1 + ``lam_gdl`` * gradient-difference loss; complex inputs are split into channels."""
    if np.iscomplexobj(pred) or np.iscomplexobj(target):
        pred, target = to_channels(pred), to_channels(target)
    return loss_and_grad_output(pred, target, lam_gdl)[0]


def backward(model: CnnModel, x, target, lam_gdl: float = 1.0):
    """Loss and exact gradients for every parameter.

    Returns
    -------
    value : float
    grads : list of ndarray
        In :attr:`CnnModel.params` order (w1, b1, w2, b2, w3, b3).
    """
    x = np.asarray(x)
    target = np.asarray(target)
    if np.iscomplexobj(x):
        x, target = to_channels(x), to_channels(target)
    if x.ndim == 3:
        x, target = x[None], target[None]
    if x.shape != target.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {target.shape}")
    xi = x.transpose(1, 0, 2, 3)
    out, acts, pre, cols = _forward_cache(model, xi, keep=True)
    value, g = loss_and_grad_output(out, target.transpose(1, 0, 2, 3), lam_gdl)
    grads = [None] * (2 * len(model.specs))
    for i in reversed(range(len(model.specs))):
        if model.specs[i].relu:
            g = g * pre[i]
        gw, gb, g = _conv_backward(acts[i], model.weights[i], g, cols[i], need_input=i > 0)
        grads[2 * i] = gw
        grads[2 * i + 1] = gb
    return value, grads


class Adam:
    """Adam with bias correction (Kingma & Ba 2015)."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            if self.lr:
                p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lam_gdl: float = 1.0
    seed: int = 0
    patience: int = 10
    patch: int | None = 32
    crops_per_frame: int = 1
    eval_frames: int = 64
    dtype: str = "float32"

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 1 or self.lam_gdl < 0:
            raise ValueError(f"invalid training configuration: {self}")
        if self.patch is not None and self.patch < 9:
            raise ValueError("patch must be >= 9 pixels")


@dataclass
class TrainLog:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    initial_train_loss: float = math.nan
    initial_val_loss: float = math.nan
    best_epoch: int = 0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            w.writerow([0, repr(self.initial_train_loss), repr(self.initial_val_loss)])
            for e, tl, vl in zip(self.epochs, self.train_loss, self.val_loss):
                w.writerow([e, repr(tl), repr(vl)])


def _mean_loss(model, inputs, targets, lam_gdl, batch=8):
    total = 0.0
    for s in range(0, len(inputs), batch):
        out = forward(model, inputs[s:s + batch])
        total += loss_and_grad_output(out, targets[s:s + batch], lam_gdl)[0] * len(out)
    return total / len(inputs)


def _crops(rng, inputs, targets, patch, per_frame):
    n, _, h, w = inputs.shape
    idx = np.repeat(np.arange(n), per_frame)
    rng.shuffle(idx)
    if patch is None or (patch >= h and patch >= w):
        return idx, None
    ys = rng.integers(0, h - patch + 1, size=idx.size)
    xs = rng.integers(0, w - patch + 1, size=idx.size)
    return idx, np.stack([ys, xs], axis=1)


def train(model: CnnModel, train_set, val_set=None, cfg: TrainConfig = TrainConfig()):
    """Mini-batch Adam training with early stopping on validation loss.

    Parameters
    ----------
    train_set, val_set : tuple of ndarray
        ``(inputs, targets)`` real arrays of shape ``(N, 2, H, W)``.

    Returns
    -------
    best : CnnModel
        Weights (float64) of the epoch with the lowest validation loss.
    log : TrainLog
    """
    inputs, targets = (np.asarray(a) for a in train_set)
    if inputs.shape[0] == 0:
        raise ValueError("training set is empty")
    if inputs.shape != targets.shape:
        raise ValueError("training inputs and targets differ in shape")
    if val_set is None or len(val_set[0]) == 0:
        val_set = (inputs, targets)
    dtype = np.dtype(cfg.dtype)
    inputs = inputs.astype(dtype)
    targets = targets.astype(dtype)
    v_in, v_tg = (np.asarray(a).astype(dtype) for a in val_set)

    work = model.copy(dtype)
    params = work.params
    opt = Adam(params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps)
    tlog = TrainLog()
    # fixed subset of full training frames for the per-epoch training loss
    pick = np.sort(make_rng(cfg.seed, 0xE7A1).permutation(len(inputs))[:cfg.eval_frames])
    e_in, e_tg = inputs[pick], targets[pick]
    tlog.initial_train_loss = _mean_loss(work, e_in, e_tg, cfg.lam_gdl)
    tlog.initial_val_loss = best_val = _mean_loss(work, v_in, v_tg, cfg.lam_gdl)
    best = work.copy(np.float64)
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        rng = make_rng(cfg.seed, 0x7EA1, epoch)
        idx, corners = _crops(rng, inputs, targets, cfg.patch, cfg.crops_per_frame)
        running, count = 0.0, 0
        for s in range(0, idx.size, cfg.batch_size):
            sel = idx[s:s + cfg.batch_size]
            if corners is None:
                xb, tb = inputs[sel], targets[sel]
            else:
                p = cfg.patch
                xb = np.stack([inputs[i, :, y:y + p, x:x + p] for i, (y, x) in zip(sel, corners[s:s + cfg.batch_size])])
                tb = np.stack([targets[i, :, y:y + p, x:x + p] for i, (y, x) in zip(sel, corners[s:s + cfg.batch_size])])
            value, grads = backward(work, xb, tb, cfg.lam_gdl)
            if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
                raise FloatingPointError(f"non-finite loss or gradient at epoch {epoch} (loss={value})")
            opt.step(params, grads)
            running += value * len(sel)
            count += len(sel)
        train_loss = _mean_loss(work, e_in, e_tg, cfg.lam_gdl)
        val_loss = _mean_loss(work, v_in, v_tg, cfg.lam_gdl)
        tlog.epochs.append(epoch)
        tlog.train_loss.append(train_loss)
        tlog.val_loss.append(val_loss)
        log.info("epoch %d: batch loss %.5f, train %.5f, val %.5f", epoch, running / count,
                 train_loss, val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best = work.copy(np.float64)
            tlog.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    return best, tlog

