"""Shared test utilities: small architectures and finite-difference checks."""

import numpy as np

from octmargin.network import (
    ArchitectureSpec,
    ConvBlock,
    backward,
    forward,
    init_params,
    softmax_cross_entropy,
)


def make_arch(input_shape=(8, 8, 1), filters=(2, 3, 4), kernel=3,
              poolings=("max", "max", "max"), fc_hidden=5):
    blocks = tuple(
        ConvBlock(f, kernel=kernel, pad=kernel // 2, pool=p)
        for f, p in zip(filters, poolings)
    )
    return ArchitectureSpec(input_shape=input_shape, blocks=blocks,
                            fc_widths=(fc_hidden, 2))


def batch_loss(params, x, onehot, dropout_rate=None, dropout_seed=None):
    """Total cross-entropy over the batch, with an optionally fixed dropout mask."""
    kw = {}
    if dropout_rate is not None:
        kw = dict(mode="train", dropout_rate=dropout_rate,
                  dropout_rng=np.random.default_rng(dropout_seed))
    logits, cache = forward(params, x, **kw)
    _, loss, grad = softmax_cross_entropy(logits, onehot)
    return float(np.sum(loss)), cache, grad


def analytic_grads(params, x, onehot, dropout_rate=None, dropout_seed=None):
    _, cache, dlogits = batch_loss(params, x, onehot, dropout_rate, dropout_seed)
    return backward(params, cache, dlogits)


def numeric_grad_entries(params, x, onehot, rng, per_tensor=6, h=1e-6,
                         dropout_rate=None, dropout_seed=None):
    """Central differences at a few random coordinates of every tensor.

    Yields (name, flat_index, fd_value).
    """
    for name, arr in params.tensors():
        flat = arr.reshape(-1)
        n = min(per_tensor, flat.size)
        for k in rng.choice(flat.size, size=n, replace=False):
            orig = flat[k]
            flat[k] = orig + h
            lo_hi, _, _ = batch_loss(params, x, onehot, dropout_rate, dropout_seed)
            flat[k] = orig - h
            lo_lo, _, _ = batch_loss(params, x, onehot, dropout_rate, dropout_seed)
            flat[k] = orig
            yield name, int(k), (lo_hi - lo_lo) / (2.0 * h)


def max_grad_rel_error(arch, seed, batch=3, per_tensor=6,
                       dropout_rate=None):
    """Worst relative error between analytic and numeric gradients."""
    rng = np.random.default_rng(seed)
    params = init_params(arch, rng)
    x = rng.random((batch,) + arch.input_shape)
    labels = rng.integers(0, 2, batch)
    onehot = np.zeros((batch, 2))
    onehot[np.arange(batch), labels] = 1.0
    dropout_seed = seed if dropout_rate is not None else None
    grads = analytic_grads(params, x, onehot, dropout_rate, dropout_seed)
    worst = 0.0
    for name, k, fd in numeric_grad_entries(params, x, onehot, rng, per_tensor,
                                            dropout_rate=dropout_rate,
                                            dropout_seed=dropout_seed):
        an = grads[name].reshape(-1)[k]
        if abs(an) < 1e-12 and abs(fd) < 1e-12:
            continue
        worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-8))
    return worst
