"""LeNet-scale CNN on image patches: architecture, parameters, forward/backward.

The network is three convolution-ReLU-pooling blocks followed by two fully
connected layers with a 2-way output (tumor, normal).  Everything is plain
numpy in double precision; convolutions are vectorized through im2col so the
backward pass reuses the cached column matrices and never re-runs the forward
pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, StaleCacheError

# Label codes (shared with the OCTV mask encoding).
NORMAL = 0
TUMOR = 1
# Output column order: first output is the tumor probability.
TUMOR_COL = 0
NORMAL_COL = 1


@dataclass(frozen=True)
class ConvBlock:
    """One convolution-ReLU-pooling block."""

    filters: int
    kernel: int = 5
    stride: int = 1
    pad: int = 2
    pool: str = "max"  # "max" | "average"
    pool_window: int = 2  # 1 disables pooling


@dataclass(frozen=True)
class ArchitectureSpec:
    """Shape contract for the network: 3 conv blocks + 2 fully connected layers."""

    input_shape: tuple[int, int, int] = (32, 32, 3)  # rows, cols, channels
    blocks: tuple[ConvBlock, ...] = (
        ConvBlock(16),
        ConvBlock(32),
        ConvBlock(64),
    )
    fc_widths: tuple[int, int] = (128, 2)

    def __post_init__(self):
        if len(self.blocks) != 3:
            raise ShapeError("architecture", "exactly 3 conv-ReLU-pool blocks required")
        if len(self.fc_widths) != 2:
            raise ShapeError("architecture", "exactly 2 fully connected layers required")
        if self.fc_widths[-1] != 2:
            raise ShapeError("fc2", "output width must be 2 classes")
        for i, blk in enumerate(self.blocks):
            if blk.pool not in ("max", "average"):
                raise ShapeError(f"pool{i + 1}", f"unknown pooling kind {blk.pool!r}")
        self.layer_shapes()  # shape algebra must be closed

    def layer_shapes(self) -> list[tuple[str, tuple]]:
        """Per-layer output shapes (rows, cols, channels), flatten and FC widths."""
        shapes = [("input", self.input_shape)]
        h, w, c = self.input_shape
        for i, blk in enumerate(self.blocks, start=1):
            for dim, name in ((h, "rows"), (w, "cols")):
                if (dim + 2 * blk.pad - blk.kernel) % blk.stride != 0:
                    raise ShapeError(f"conv{i}", f"kernel/stride does not tile {name}={dim}")
            h = (h + 2 * blk.pad - blk.kernel) // blk.stride + 1
            w = (w + 2 * blk.pad - blk.kernel) // blk.stride + 1
            if h <= 0 or w <= 0:
                raise ShapeError(f"conv{i}", "empty output")
            c = blk.filters
            shapes.append((f"conv{i}", (h, w, c)))
            if h % blk.pool_window or w % blk.pool_window:
                raise ShapeError(f"pool{i}", f"window {blk.pool_window} does not divide {h}x{w}")
            h //= blk.pool_window
            w //= blk.pool_window
            shapes.append((f"pool{i}", (h, w, c)))
        flat = h * w * c
        shapes.append(("flatten", (flat,)))
        shapes.append(("fc1", (self.fc_widths[0],)))
        shapes.append(("fc2", (self.fc_widths[1],)))
        return shapes

    @property
    def flat_dim(self) -> int:
        return dict(self.layer_shapes())["flatten"][0]

    @property
    def input_dim(self) -> int:
        h, w, c = self.input_shape
        return h * w * c

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "blocks": [
                {
                    "filters": b.filters,
                    "kernel": b.kernel,
                    "stride": b.stride,
                    "pad": b.pad,
                    "pool": b.pool,
                    "pool_window": b.pool_window,
                }
                for b in self.blocks
            ],
            "fc_widths": list(self.fc_widths),
        }

    @staticmethod
    def from_dict(d: dict) -> "ArchitectureSpec":
        return ArchitectureSpec(
            input_shape=tuple(d["input_shape"]),
            blocks=tuple(ConvBlock(**b) for b in d["blocks"]),
            fc_widths=tuple(d["fc_widths"]),
        )


def default_architecture(pooling: str = "max") -> ArchitectureSpec:
    """The production architecture: conv 5x5x16/32/64, 2x2 pools, FC 128 -> 2."""
    return ArchitectureSpec(
        blocks=tuple(ConvBlock(f, pool=pooling) for f in (16, 32, 64)),
    )


@dataclass
class NetworkParams:
    """All learnable tensors, in declaration order conv1..conv3, fc1, fc2."""

    arch: ArchitectureSpec
    conv_w: list[np.ndarray]  # each (kh, kw, c_in, c_out)
    conv_b: list[np.ndarray]  # each (c_out,)
    fc_w: list[np.ndarray]  # (in, out)
    fc_b: list[np.ndarray]  # (out,)

    def tensors(self):
        """Yield (name, array) for every tensor in declaration order."""
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b), start=1):
            yield f"conv{i}_w", w
            yield f"conv{i}_b", b
        for i, (w, b) in enumerate(zip(self.fc_w, self.fc_b), start=1):
            yield f"fc{i}_w", w
            yield f"fc{i}_b", b

    def weight_names(self):
        """Names of weight tensors only (biases excluded, e.g. for weight decay)."""
        return [n for n, _ in self.tensors() if n.endswith("_w")]

    def get(self, name: str) -> np.ndarray:
        return dict(self.tensors())[name]

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            arch=self.arch,
            conv_w=[w.copy() for w in self.conv_w],
            conv_b=[b.copy() for b in self.conv_b],
            fc_w=[w.copy() for w in self.fc_w],
            fc_b=[b.copy() for b in self.fc_b],
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for _, a in self.tensors())


def zeros_like_params(params: NetworkParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(a) for name, a in params.tensors()}


def init_params(arch: ArchitectureSpec, rng: np.random.Generator) -> NetworkParams:
    """Uniform +/- sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    conv_w, conv_b = [], []
    c_in = arch.input_shape[2]
    for blk in arch.blocks:
        fan_in = blk.kernel * blk.kernel * c_in
        fan_out = blk.kernel * blk.kernel * blk.filters
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        conv_w.append(rng.uniform(-lim, lim, (blk.kernel, blk.kernel, c_in, blk.filters)))
        conv_b.append(np.zeros(blk.filters))
        c_in = blk.filters
    fc_w, fc_b = [], []
    d = arch.flat_dim
    for width in arch.fc_widths:
        lim = np.sqrt(6.0 / (d + width))
        fc_w.append(rng.uniform(-lim, lim, (d, width)))
        fc_b.append(np.zeros(width))
        d = width
    return NetworkParams(arch, conv_w, conv_b, fc_w, fc_b)


def zero_params(arch: ArchitectureSpec) -> NetworkParams:
    """All-zero parameters (useful in tests: the network output is (0, 0))."""
    rng = np.random.default_rng(0)
    p = init_params(arch, rng)
    for _, a in p.tensors():
        a[...] = 0.0
    return p


def apply_dropout(activations: np.ndarray, rate: float, rng: np.random.Generator):
    """Inverted dropout: zero units with probability ``rate``, scale the rest.

    Returns (masked activations, mask).  The mask already carries the
    1/(1-rate) scale so eval mode needs no compensation.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError(f"dropout rate must be in (0,1), got {rate}")
    keep = rng.random(activations.shape) >= rate
    mask = keep / (1.0 - rate)
    return activations * mask, mask


@dataclass
class ForwardCache:
    """Everything backward() needs; built by forward(), tied to its params."""

    params: NetworkParams
    x: np.ndarray
    cols: list[np.ndarray]  # im2col matrices, one per conv block
    conv_z: list[np.ndarray]  # pre-ReLU conv outputs
    pre_pool: list[np.ndarray]  # post-ReLU, pre-pool activations
    pool_idx: list[Optional[np.ndarray]]  # argmax indices for max pools
    pooled: list[np.ndarray]
    flat: np.ndarray
    fc1_z: np.ndarray
    fc1_a: np.ndarray  # post-ReLU, post-dropout
    dropout_mask: Optional[np.ndarray]


def _im2col(x: np.ndarray, kernel: int, stride: int, pad: int) -> np.ndarray:
    """(B,H,W,C) -> (B, Ho, Wo, C*kh*kw) column matrix (window dims flattened)."""
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (kernel, kernel), axis=(1, 2))  # (B,H',W',C,kh,kw)
    win = win[:, ::stride, ::stride]
    b, ho, wo = win.shape[:3]
    return win.reshape(b, ho, wo, -1)  # flattened order: (C, kh, kw)


def _conv_weight_matrix(w: np.ndarray) -> np.ndarray:
    """(kh,kw,cin,cout) -> (cin*kh*kw, cout) matching the im2col column order."""
    kh, kw, cin, cout = w.shape
    return w.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)


def _conv_weight_from_matrix(m: np.ndarray, shape) -> np.ndarray:
    kh, kw, cin, cout = shape
    return m.reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)


def _pool_forward(a: np.ndarray, kind: str, window: int):
    """Non-overlapping pooling.  Returns (pooled, argmax indices or None)."""
    if window == 1:
        return a, None
    b, h, w, c = a.shape
    win = a.reshape(b, h // window, window, w // window, window, c)
    if kind == "average":
        return win.mean(axis=(2, 4)), None
    # flat view (B, Ho, Wo, C, window*window): argmax picks one position per cell
    flat = win.transpose(0, 1, 3, 5, 2, 4).reshape(b, h // window, w // window, c, -1)
    idx = flat.argmax(axis=-1)
    pooled = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return pooled, idx


def _pool_backward(d_pooled, kind, window, idx, in_shape):
    if window == 1:
        return d_pooled
    b, h, w, c = in_shape
    ho, wo = h // window, w // window
    if kind == "average":
        d = np.repeat(np.repeat(d_pooled, window, axis=1), window, axis=2)
        return d / (window * window)
    flat = np.zeros((b, ho, wo, c, window * window))
    np.put_along_axis(flat, idx[..., None], d_pooled[..., None], axis=-1)
    return flat.reshape(b, ho, wo, c, window, window).transpose(0, 1, 4, 2, 5, 3).reshape(
        b, h, w, c
    )


def forward(
    params: NetworkParams,
    x: np.ndarray,
    mode: str = "eval",
    dropout_rate: Optional[float] = None,
    dropout_rng: Optional[np.random.Generator] = None,
):
    """Run the network on a batch (B, rows, cols, channels) of patches.

    Returns (logits (B,2), ForwardCache).  Dropout (applied to the first FC
    layer's activations) is only permitted in train mode.
    """
    arch = params.arch
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if dropout_rate is not None and mode != "train":
        raise ValueError("dropout is only permitted in train mode")
    x = np.asarray(x, dtype=float)
    if x.ndim != 4 or x.shape[1:] != arch.input_shape:
        raise ShapeError("input", f"expected (B, {arch.input_shape}), got {x.shape}")

    cols, conv_z, pre_pool, pool_idx, pooled_list = [], [], [], [], []
    a = x
    for i, blk in enumerate(arch.blocks):
        col = _im2col(a, blk.kernel, blk.stride, blk.pad)
        z = col @ _conv_weight_matrix(params.conv_w[i]) + params.conv_b[i]
        act = np.maximum(z, 0.0)
        pooled, idx = _pool_forward(act, blk.pool, blk.pool_window)
        cols.append(col)
        conv_z.append(z)
        pre_pool.append(act)
        pool_idx.append(idx)
        pooled_list.append(pooled)
        a = pooled

    flat = a.reshape(a.shape[0], -1)
    fc1_z = flat @ params.fc_w[0] + params.fc_b[0]
    fc1_a = np.maximum(fc1_z, 0.0)
    mask = None
    if dropout_rate is not None:
        if dropout_rng is None:
            raise ValueError("dropout requires an rng")
        fc1_a, mask = apply_dropout(fc1_a, dropout_rate, dropout_rng)
    logits = fc1_a @ params.fc_w[1] + params.fc_b[1]

    cache = ForwardCache(
        params=params,
        x=x,
        cols=cols,
        conv_z=conv_z,
        pre_pool=pre_pool,
        pool_idx=pool_idx,
        pooled=pooled_list,
        flat=flat,
        fc1_z=fc1_z,
        fc1_a=fc1_a,
        dropout_mask=mask,
    )
    return logits, cache


def backward(params: NetworkParams, cache: ForwardCache, dlogits: np.ndarray):
    """Exact gradients of sum(dlogits * logits) w.r.t. every tensor.

    Returns a dict name -> gradient with the same shapes as the parameters.
    """
    if cache.params is not params:
        raise StaleCacheError("forward cache was built from different parameters")
    arch = params.arch
    grads: dict[str, np.ndarray] = {}

    grads["fc2_w"] = cache.fc1_a.T @ dlogits
    grads["fc2_b"] = dlogits.sum(axis=0)
    da = dlogits @ params.fc_w[1].T
    if cache.dropout_mask is not None:
        da = da * cache.dropout_mask
    dz1 = da * (cache.fc1_z > 0.0)
    grads["fc1_w"] = cache.flat.T @ dz1
    grads["fc1_b"] = dz1.sum(axis=0)
    dflat = dz1 @ params.fc_w[0].T

    d = dflat.reshape(cache.pooled[-1].shape)
    for i in reversed(range(len(arch.blocks))):
        blk = arch.blocks[i]
        d = _pool_backward(d, blk.pool, blk.pool_window, cache.pool_idx[i], cache.pre_pool[i].shape)
        d = d * (cache.conv_z[i] > 0.0)
        b, ho, wo, cout = d.shape
        d2 = d.reshape(-1, cout)
        col = cache.cols[i].reshape(-1, cache.cols[i].shape[-1])
        grads[f"conv{i + 1}_w"] = _conv_weight_from_matrix(
            col.T @ d2, params.conv_w[i].shape
        )
        grads[f"conv{i + 1}_b"] = d2.sum(axis=0)
        if i > 0:
            dcol = (d2 @ _conv_weight_matrix(params.conv_w[i]).T).reshape(
                b, ho, wo, -1, blk.kernel, blk.kernel
            )
            prev_shape = cache.pooled[i - 1].shape
            d = _col2im(dcol, prev_shape, blk.kernel, blk.stride, blk.pad)
    return grads


def _col2im(dcol, in_shape, kernel, stride, pad):
    """Scatter-add column gradients back to the (B,H,W,C) input layout."""
    b, h, w, c = in_shape
    dxp = np.zeros((b, h + 2 * pad, w + 2 * pad, c))
    ho, wo = dcol.shape[1], dcol.shape[2]
    for i in range(kernel):
        for j in range(kernel):
            dxp[:, i : i + ho * stride : stride, j : j + wo * stride : stride, :] += dcol[
                :, :, :, :, i, j
            ]
    return dxp[:, pad : pad + h, pad : pad + w, :]


def softmax_cross_entropy(logits: np.ndarray, onehot: np.ndarray):
    """Softmax probabilities, per-sample loss and its exact logits gradient.

    Accepts a single sample (1-D) or a batch (2-D).  The row max is
    subtracted before exponentiation so huge logits cannot overflow.
    Returns (probs, loss, probs - onehot); loss is a scalar for 1-D input,
    else a (B,) vector of per-sample losses.
    """
    logits = np.asarray(logits, dtype=float)
    onehot = np.asarray(onehot, dtype=float)
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
        onehot = onehot[None, :]
    if logits.shape != onehot.shape:
        raise ValueError(f"logits {logits.shape} vs indicator {onehot.shape}")
    if not (np.all((onehot == 0) | (onehot == 1)) and np.all(onehot.sum(axis=1) == 1)):
        raise ValueError("indicator rows must be one-hot")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    denom = e.sum(axis=1, keepdims=True)
    probs = e / denom
    # loss via log-sum-exp; never takes log of a rounded-to-zero probability
    loss = np.log(denom[:, 0]) - (shifted * onehot).sum(axis=1)
    grad = probs - onehot
    if single:
        return probs[0], loss[0], grad[0]
    return probs, loss, grad


def labels_to_onehot(labels: np.ndarray) -> np.ndarray:
    """Class labels {1=tumor, 0=normal} -> one-hot rows (tumor, normal)."""
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], 2))
    out[labels == TUMOR, TUMOR_COL] = 1.0
    out[labels == NORMAL, NORMAL_COL] = 1.0
    if not np.all(out.sum(axis=1) == 1):
        raise ValueError("labels must be 0 (normal) or 1 (tumor)")
    return out


def predict_labels(logits: np.ndarray) -> np.ndarray:
    """Hard class per sample: 1=tumor, 0=normal (highest output wins)."""
    return np.where(np.argmax(logits, axis=1) == TUMOR_COL, TUMOR, NORMAL)


def tumor_scores(params: NetworkParams, x: np.ndarray, batch: int = 256) -> np.ndarray:
    """Softmax tumor probability per patch, evaluated in minibatches."""
    out = []
    for i in range(0, len(x), batch):
        logits, _ = forward(params, x[i : i + batch], mode="eval")
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out.append((e / e.sum(axis=1, keepdims=True))[:, TUMOR_COL])
    return np.concatenate(out) if out else np.zeros(0)
