import numpy as np
import pytest

from octmargin.errors import ShapeError, StaleCacheError
from octmargin.network import (
    ArchitectureSpec,
    ConvBlock,
    _conv_weight_matrix,
    _im2col,
    _pool_backward,
    _pool_forward,
    backward,
    default_architecture,
    forward,
    init_params,
    labels_to_onehot,
    predict_labels,
    softmax_cross_entropy,
    tumor_scores,
    zero_params,
)
from helpers import analytic_grads, make_arch, max_grad_rel_error


def test_default_architecture_shapes():
    arch = default_architecture()
    assert arch.input_shape == (32, 32, 3)
    assert tuple(b.filters for b in arch.blocks) == (16, 32, 64)
    assert arch.fc_widths == (128, 2)
    assert arch.flat_dim == 4 * 4 * 64  # 32 -> 16 -> 8 -> 4 after three 2x2 pools


def test_architecture_rejects_wrong_block_count():
    with pytest.raises(ShapeError):
        ArchitectureSpec(blocks=(ConvBlock(16), ConvBlock(32)))


def test_architecture_rejects_undividable_pool():
    # 10x10 input: 10 -> 5, then 5 is not divisible by the 2x2 pool
    with pytest.raises(ShapeError):
        ArchitectureSpec(input_shape=(10, 10, 1),
                         blocks=tuple(ConvBlock(4) for _ in range(3)))


def test_roundtrip_through_dict():
    arch = default_architecture(pooling="average")
    again = ArchitectureSpec.from_dict(arch.to_dict())
    assert again == arch


def test_init_params_bounds_and_determinism():
    arch = default_architecture()
    p1 = init_params(arch, np.random.default_rng(3))
    p2 = init_params(arch, np.random.default_rng(3))
    for (name, a), (_, b) in zip(p1.tensors(), p2.tensors()):
        np.testing.assert_array_equal(a, b)
        if name.endswith("_b"):
            assert np.all(a == 0.0)
    # conv1 fan: 5*5*3 in, 5*5*16 out
    lim = np.sqrt(6.0 / (75 + 400))
    w = p1.conv_w[0]
    assert np.abs(w).max() <= lim
    assert np.abs(w).max() > 0.8 * lim  # something close to the bound exists


def test_zero_network_outputs_zero_logits():
    arch = make_arch()
    params = zero_params(arch)
    x = np.random.default_rng(0).random((4,) + arch.input_shape)
    logits, _ = forward(params, x)
    np.testing.assert_array_equal(logits, np.zeros((4, 2)))


def test_forward_rejects_bad_input_shape():
    params = zero_params(make_arch())
    with pytest.raises(ShapeError):
        forward(params, np.zeros((2, 9, 8, 1)))
    with pytest.raises(ShapeError):
        forward(params, np.zeros((8, 8, 1)))  # missing batch axis


def test_forward_duplicate_rows_give_identical_logits():
    arch = make_arch()
    rng = np.random.default_rng(5)
    params = init_params(arch, rng)
    one = rng.random((1,) + arch.input_shape)
    logits, _ = forward(params, np.concatenate([one, one], axis=0))
    np.testing.assert_array_equal(logits[0], logits[1])


def test_im2col_against_naive_convolution():
    """The im2col matmul must equal a brute-force quadruple loop."""
    rng = np.random.default_rng(11)
    x = rng.random((2, 6, 7, 3))
    w = rng.standard_normal((3, 3, 3, 4))
    pad = 1
    col = _im2col(x, kernel=3, stride=1, pad=pad)
    out = col @ _conv_weight_matrix(w)

    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ref = np.zeros_like(out)
    for b in range(2):
        for i in range(6):
            for j in range(7):
                for c in range(4):
                    ref[b, i, j, c] = np.sum(xp[b, i : i + 3, j : j + 3, :] * w[:, :, :, c])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_max_pool_forward_and_routing():
    # single 2x2 cell [[1,2],[3,4]] pools to 4; gradient routes only to the 4
    a = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    pooled, idx = _pool_forward(a, "max", 2)
    assert pooled.reshape(()) == 4.0
    back = _pool_backward(np.full((1, 1, 1, 1), 7.0), "max", 2, idx, a.shape)
    np.testing.assert_array_equal(back.reshape(2, 2), [[0.0, 0.0], [0.0, 7.0]])


def test_average_pool_forward_and_backward():
    a = np.arange(4.0).reshape(1, 2, 2, 1)
    pooled, idx = _pool_forward(a, "average", 2)
    assert idx is None
    assert pooled.reshape(()) == 1.5
    back = _pool_backward(np.full((1, 1, 1, 1), 8.0), "average", 2, None, a.shape)
    np.testing.assert_array_equal(back.reshape(2, 2), np.full((2, 2), 2.0))


def test_max_pool_ties_pick_one_winner():
    a = np.full((1, 2, 2, 1), 3.0)
    pooled, idx = _pool_forward(a, "max", 2)
    back = _pool_backward(np.ones((1, 1, 1, 1)), "max", 2, idx, a.shape)
    assert pooled.reshape(()) == 3.0
    assert back.sum() == 1.0  # gradient goes to exactly one of the tied cells


def test_softmax_closed_forms():
    probs, loss, grad = softmax_cross_entropy(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    np.testing.assert_allclose(probs, [0.5, 0.5])
    np.testing.assert_allclose(loss, np.log(2.0), rtol=1e-15)
    np.testing.assert_allclose(grad, [-0.5, 0.5])

    probs, loss, grad = softmax_cross_entropy(np.array([np.log(3.0), 0.0]),
                                              np.array([1.0, 0.0]))
    np.testing.assert_allclose(probs, [0.75, 0.25], rtol=1e-15)
    np.testing.assert_allclose(loss, np.log(4.0 / 3.0), rtol=1e-12)
    np.testing.assert_allclose(grad, [-0.25, 0.25], rtol=1e-12)


def test_softmax_saturated_is_finite():
    # correct class hugely dominant: loss ~ 0; wrong class dominant: loss ~ gap
    _, loss, _ = softmax_cross_entropy(np.array([1000.0, 0.0]), np.array([1.0, 0.0]))
    assert loss == 0.0
    _, loss, grad = softmax_cross_entropy(np.array([0.0, 1000.0]), np.array([1.0, 0.0]))
    np.testing.assert_allclose(loss, 1000.0)
    assert np.all(np.isfinite(grad))


def test_softmax_batch_matches_single():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((5, 2))
    onehot = labels_to_onehot(rng.integers(0, 2, 5))
    probs, loss, grad = softmax_cross_entropy(logits, onehot)
    for i in range(5):
        p1, l1, g1 = softmax_cross_entropy(logits[i], onehot[i])
        np.testing.assert_allclose(probs[i], p1)
        np.testing.assert_allclose(loss[i], l1)
        np.testing.assert_allclose(grad[i], g1)


def test_softmax_rejects_non_onehot():
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros(2), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros(2), np.array([1.0, 1.0]))


def test_labels_and_predictions():
    onehot = labels_to_onehot(np.array([1, 0, 1]))
    # tumor = 1 maps to column 0
    np.testing.assert_array_equal(onehot, [[1, 0], [0, 1], [1, 0]])
    logits = np.array([[2.0, 1.0], [0.0, 3.0], [1.0, 1.0]])
    np.testing.assert_array_equal(predict_labels(logits), [1, 0, 1])  # tie -> tumor


def test_gradients_match_finite_differences():
    arch = make_arch(poolings=("max", "average", "max"))
    assert max_grad_rel_error(arch, seed=13) < 1e-6


def test_gradients_with_dropout_match_finite_differences():
    arch = make_arch()
    assert max_grad_rel_error(arch, seed=21, dropout_rate=0.4) < 1e-6


def test_backward_rejects_stale_cache():
    arch = make_arch()
    rng = np.random.default_rng(1)
    params = init_params(arch, rng)
    x = rng.random((2,) + arch.input_shape)
    _, cache = forward(params, x)
    with pytest.raises(StaleCacheError):
        backward(params.copy(), cache, np.ones((2, 2)))


def test_gradient_accumulates_over_batch():
    """Batch gradient equals the sum of single-sample gradients."""
    arch = make_arch()
    rng = np.random.default_rng(9)
    params = init_params(arch, rng)
    x = rng.random((3,) + arch.input_shape)
    onehot = labels_to_onehot(np.array([1, 0, 1]))
    whole = analytic_grads(params, x, onehot)
    parts = [analytic_grads(params, x[i : i + 1], onehot[i : i + 1]) for i in range(3)]
    for name in whole:
        np.testing.assert_allclose(whole[name],
                                   sum(p[name] for p in parts), atol=1e-12)


def test_dropout_only_in_train_mode():
    params = zero_params(make_arch())
    x = np.zeros((1,) + params.arch.input_shape)
    with pytest.raises(ValueError):
        forward(params, x, mode="eval", dropout_rate=0.5)
    with pytest.raises(ValueError):
        forward(params, x, mode="train", dropout_rate=0.5)  # rng missing


def test_tumor_scores_batching_and_range():
    arch = make_arch()
    rng = np.random.default_rng(4)
    params = init_params(arch, rng)
    x = rng.random((7,) + arch.input_shape)
    s_all = tumor_scores(params, x, batch=256)
    s_chunked = tumor_scores(params, x, batch=2)
    np.testing.assert_allclose(s_all, s_chunked, atol=1e-15)
    assert np.all((s_all >= 0.0) & (s_all <= 1.0))
    logits, _ = forward(params, x)
    probs, _, _ = softmax_cross_entropy(logits, labels_to_onehot(np.ones(7, dtype=int)))
    np.testing.assert_allclose(s_all, probs[:, 0], atol=1e-12)
