"""The four regularization strategies pluggable into the training step.

Each strategy contributes a penalty value Omega and a parameter-gradient term
that the optimizer adds to the data-term gradient, scaled by lambda:

- "wd":    Omega = ||W||_2^2 over weight tensors (biases excluded).
- "wd_do": same penalty, with dropout active on the first FC layer's
           activations inside the data-term forward/backward.
- "fn_dd": Omega = (1/M) sum ||f_W(x_i)||^2 over a fixed set of unlabeled
           patches, f_W being the unnormalized 2-logit output.
- "fn_ss": same Omega, but the x_i are drawn from a distribution
           proportional to ||f_W(x)||^2 by slice sampling, refreshed once
           per epoch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import slicesampler
from .network import NetworkParams, apply_dropout, backward, forward, softmax_cross_entropy

__all__ = [
    "METHODS",
    "RegularizerConfig",
    "SamplerSettings",
    "weight_decay",
    "fn_penalty",
    "network_logdensity",
    "make_sampler_state",
    "slice_sample",
    "regularized_gradient",
    "momentum_for",
    "apply_dropout",
]

METHODS = ("wd", "wd_do", "fn_dd", "fn_ss")
METHOD_LABELS = {"wd": "WD", "wd_do": "WD+DO", "fn_dd": "FN-DD", "fn_ss": "FN-SS"}


def momentum_for(method: str) -> float:
    """0.95 for the weight-decay methods; 0 for the function-norm methods,
    where momentum destabilizes training."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    return 0.95 if method in ("wd", "wd_do") else 0.0


@dataclass
class SamplerSettings:
    """Slice-sampler schedule for fn_ss, in coordinate-update units.

    ``None`` for burn_in/thin means the sweep-based defaults (100 sweeps of
    burn-in, 2 sweeps of thinning) scaled by the input dimension.
    """

    width: float = 0.25
    max_shrink: int = 32
    burn_in: Optional[int] = None
    thin: Optional[int] = None

    def burn_in_updates(self, dim: int) -> int:
        if self.burn_in is not None:
            return self.burn_in
        return slicesampler.sweeps_to_updates(dim, 100)

    def thin_updates(self, dim: int) -> int:
        if self.thin is not None:
            return self.thin
        return slicesampler.sweeps_to_updates(dim, 2)


@dataclass
class RegularizerConfig:
    """Which penalty is active and its parameters.

    lam >= 0 (0 disables the penalty and reduces the step to the plain data
    gradient); dropout_rate is required exactly for wd_do; reg_set (M
    unlabeled patches) exactly for fn_dd; sample_count and sampler exactly
    for fn_ss.
    """

    method: str
    lam: float
    dropout_rate: Optional[float] = None
    reg_set: Optional[np.ndarray] = None
    sample_count: Optional[int] = None
    sampler: Optional[SamplerSettings] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if (self.dropout_rate is not None) != (self.method == "wd_do"):
            raise ValueError("dropout_rate is required for wd_do and forbidden otherwise")
        if self.dropout_rate is not None and not 0.0 < self.dropout_rate < 1.0:
            raise ValueError("dropout rate must be in (0,1)")
        if (self.reg_set is not None) != (self.method == "fn_dd"):
            raise ValueError("reg_set is required for fn_dd and forbidden otherwise")
        if self.reg_set is not None and len(self.reg_set) == 0:
            raise ValueError("regularization set must be non-empty")
        if self.method == "fn_ss":
            if not self.sample_count or self.sample_count < 1:
                raise ValueError("fn_ss requires a positive sample_count")
            if self.sampler is None:
                self.sampler = SamplerSettings()
        elif self.sample_count is not None or self.sampler is not None:
            raise ValueError("sampler settings are only valid for fn_ss")


def weight_decay(params: NetworkParams):
    """Omega = sum of squares of every weight entry; gradient 2W.

    Bias tensors get zero gradient entries so the result has params' shapes.
    """
    omega = 0.0
    grads = {}
    for name, a in params.tensors():
        if name.endswith("_w"):
            omega += float(np.sum(a * a))
            grads[name] = 2.0 * a
        else:
            grads[name] = np.zeros_like(a)
    return omega, grads


def fn_penalty(params: NetworkParams, reg_batch: np.ndarray):
    """Omega = (1/M) sum_i ||f_W(x_i)||^2 and its parameter gradient.

    The upstream gradient per sample is (2/M) f_W(x_i); labels are never
    consulted.
    """
    reg_batch = np.asarray(reg_batch, dtype=float)
    if len(reg_batch) == 0:
        raise ValueError("regularization batch must be non-empty")
    m = len(reg_batch)
    logits, cache = forward(params, reg_batch, mode="eval")
    omega = float(np.sum(logits * logits)) / m
    grads = backward(params, cache, (2.0 / m) * logits)
    return omega, grads


def network_logdensity(params: NetworkParams, batch: int = 256):
    """log ||f_W(x)||^2 over flattened points in [0,1]^d, batched."""
    shape = params.arch.input_shape

    def logf(points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape((-1,) + shape)
        out = np.empty(len(pts))
        for i in range(0, len(pts), batch):
            logits, _ = forward(params, pts[i : i + batch], mode="eval")
            sq = np.sum(logits * logits, axis=1)
            with np.errstate(divide="ignore"):
                out[i : i + batch] = np.log(sq)
        return out

    return logf


def make_sampler_state(
    params: NetworkParams, config: RegularizerConfig, rng: np.random.Generator
) -> slicesampler.SliceSamplerState:
    """Fresh persistent chains for fn_ss: one chain per regularization sample."""
    dim = params.arch.input_dim
    s = config.sampler
    return slicesampler.init_state(
        network_logdensity(params),
        dim=dim,
        rng=rng,
        chains=config.sample_count,
        width=s.width,
        burn_in=s.burn_in_updates(dim),
        thin=s.thin_updates(dim),
        max_shrink=s.max_shrink,
    )


def slice_sample(
    params: NetworkParams, state: slicesampler.SliceSamplerState, n: int
) -> np.ndarray:
    """Draw n patches (n, rows, cols, channels) ~ ||f_W(x)||^2 from the chains."""
    flat = slicesampler.draw(network_logdensity(params), state, n)
    return flat.reshape((n,) + params.arch.input_shape)


def regularized_gradient(
    config: RegularizerConfig,
    params: NetworkParams,
    batch_x: np.ndarray,
    batch_onehot: np.ndarray,
    reg_batch: Optional[np.ndarray] = None,
    dropout_rng: Optional[np.random.Generator] = None,
):
    """Data-term gradient plus lambda times the active penalty's gradient.

    ``reg_batch`` supplies the FN minibatch (fn_dd: a slice of the
    regularization set; fn_ss: freshly drawn slice samples).  Returns
    (grads, mean data loss, penalty value).
    """
    if config.method == "wd_do":
        logits, cache = forward(
            params, batch_x, mode="train", dropout_rate=config.dropout_rate, dropout_rng=dropout_rng
        )
    else:
        logits, cache = forward(params, batch_x, mode="train")
    _, loss, dlogits = softmax_cross_entropy(logits, batch_onehot)
    b = len(batch_x)
    grads = backward(params, cache, dlogits / b)
    data_loss = float(np.mean(loss))

    if config.lam == 0.0:
        return grads, data_loss, 0.0

    if config.method in ("wd", "wd_do"):
        omega, pgrads = weight_decay(params)
    else:
        if reg_batch is None:
            raise ValueError(f"{config.method} needs a regularization minibatch")
        omega, pgrads = fn_penalty(params, reg_batch)
    for name in grads:
        grads[name] = grads[name] + config.lam * pgrads[name]
    return grads, data_loss, omega
