import numpy as np
import pytest

from octmargin.errors import ShapeError
from octmargin.preproc import (
    BScanVolume,
    CARRIED,
    DETECTED,
    HALF_DEPTH,
    SURFACE_SHIFT,
    SurfaceCurve,
    detect_surface,
    downscale,
    extract_patches,
    first_edge_per_column,
    gaussian_filter,
    gaussian_kernel,
    otsu_threshold,
    rolling_ball,
    sobel_edges,
    sobel_magnitude,
    spline_average,
)


def flat_surfaces(cols, nframes, row):
    rows = np.full(cols, row, dtype=int)
    return [
        SurfaceCurve(rows=rows.copy(), pre_shift=rows - SURFACE_SHIFT + 0.0,
                     flags=np.zeros(cols, dtype=np.uint8))
        for _ in range(nframes)
    ]


# ---------------------------------------------------------------- smoothing

def test_gaussian_kernel_normalized_peak_on_anchor():
    k = gaussian_kernel(10, 3.0)
    np.testing.assert_allclose(k.sum(), 1.0, rtol=1e-15)
    assert k.argmax() == 4  # anchor tap of the 10-tap window
    np.testing.assert_allclose(k[4 - 2], k[4 + 2], rtol=1e-12)  # symmetric about it


def test_gaussian_filter_keeps_constant_images():
    img = np.full((12, 17), 3.25)
    np.testing.assert_allclose(gaussian_filter(img), img, rtol=1e-12)


def test_gaussian_filter_matches_naive_correlation():
    rng = np.random.default_rng(31)
    img = rng.random((9, 13))
    size, sigma = 10, 3.0
    k = gaussian_kernel(size, sigma)
    before, after = 4, 5
    padded = np.pad(img, ((before, after), (before, after)), mode="edge")
    ref = np.zeros_like(img)
    for i in range(img.shape[0]):
        for j in range(img.shape[1]):
            win = padded[i : i + size, j : j + size]
            ref[i, j] = k @ win @ k
    np.testing.assert_allclose(gaussian_filter(img, size, sigma), ref, atol=1e-12)


def test_gaussian_filter_rejects_non_2d():
    with pytest.raises(ShapeError):
        gaussian_filter(np.zeros((4, 4, 2)))


# ------------------------------------------------------------------- edges

def test_sobel_zero_on_constant_image():
    np.testing.assert_array_equal(sobel_magnitude(np.full((6, 6), 0.7)), np.zeros((6, 6)))


def test_sobel_vertical_step_magnitude():
    img = np.zeros((5, 8))
    img[:, 4:] = 1.0
    mag = sobel_magnitude(img)
    # both columns adjacent to the step see the full |gx| = 4
    np.testing.assert_allclose(mag[2, 3:5], [4.0, 4.0])
    np.testing.assert_allclose(mag[2, :2], 0.0)


def test_sobel_matches_naive_correlation():
    rng = np.random.default_rng(32)
    img = rng.random((5, 5))
    padded = np.pad(img, 1, mode="edge")
    sx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float)
    ref = np.zeros_like(img)
    for i in range(5):
        for j in range(5):
            win = padded[i : i + 3, j : j + 3]
            ref[i, j] = np.hypot(np.sum(win * sx), np.sum(win * sx.T))
    np.testing.assert_allclose(sobel_magnitude(img), ref, atol=1e-12)


def test_otsu_separates_two_clusters():
    values = np.concatenate([np.full(60, 0.1), np.full(40, 0.9)])
    t = otsu_threshold(values)
    assert 0.1 < t < 0.9


def test_otsu_constant_input_degenerates():
    assert otsu_threshold(np.full(10, 0.4)) == 0.4


def test_sobel_edges_floor_suppresses_noise():
    rng = np.random.default_rng(33)
    img = 0.05 + 0.002 * rng.standard_normal((40, 40))
    assert not sobel_edges(img).any()


# ----------------------------------------------------------- edge -> curve

def test_first_edge_basic_and_carry():
    edges = np.zeros((8, 5), dtype=bool)
    edges[3, 0] = True
    edges[5, 1] = True
    edges[2, 3] = True  # column 2 empty, carried from column 1
    curve, flags = first_edge_per_column(edges)
    np.testing.assert_array_equal(curve, [3, 5, 5, 2, 2])
    np.testing.assert_array_equal(
        flags, [DETECTED, DETECTED, CARRIED, DETECTED, CARRIED])


def test_first_edge_leading_gap_gets_half_depth():
    edges = np.zeros((10, 4), dtype=bool)
    edges[7, 2] = True
    curve, flags = first_edge_per_column(edges)
    np.testing.assert_array_equal(curve, [5, 5, 7, 7])
    np.testing.assert_array_equal(flags, [HALF_DEPTH, HALF_DEPTH, DETECTED, CARRIED])


def test_first_edge_all_empty_is_half_depth_everywhere():
    curve, flags = first_edge_per_column(np.zeros((12, 6), dtype=bool))
    np.testing.assert_array_equal(curve, np.full(6, 6))
    assert np.all(flags == HALF_DEPTH)


def test_first_edge_picks_topmost_row():
    edges = np.zeros((6, 1), dtype=bool)
    edges[[2, 4], 0] = True
    curve, _ = first_edge_per_column(edges)
    assert curve[0] == 2


# ---------------------------------------------------------------- splines

def test_spline_average_reproduces_lines():
    cols = np.arange(40, dtype=float)
    for curve in (np.full(40, 7.0), 3.0 + 0.25 * cols):
        np.testing.assert_allclose(spline_average(curve), curve, atol=1e-9)


def test_spline_average_damps_single_column_outliers():
    curve = np.full(60, 50.0)
    curve[31] += 40.0
    smooth = spline_average(curve)
    # only one of the ten subsets sees the outlier knot
    assert abs(smooth[31] - 50.0) < 0.4 * 40.0
    assert np.max(np.abs(smooth - 50.0)) < 20.0


def test_spline_average_needs_twenty_columns():
    with pytest.raises(ShapeError):
        spline_average(np.zeros(19))


# ----------------------------------------------------------- rolling ball

def test_rolling_ball_flat_curve_unchanged():
    y = np.full(120, 80.0)
    np.testing.assert_allclose(rolling_ball(y, 50.0), y, atol=1e-9)


def test_rolling_ball_fills_narrow_air_spike():
    y = np.full(200, 100.0)
    y[90:93] = 70.0  # narrow excursion toward the air (smaller rows)
    out = rolling_ball(y, 50.0)
    assert np.all(out >= y - 1e-9)  # closing never moves toward the air
    assert out[91] > 99.0  # the spike is gone
    np.testing.assert_allclose(out[:60], 100.0, atol=1e-9)


def test_rolling_ball_preserves_broad_valley():
    y = np.full(300, 100.0)
    y[60:240] = 60.0  # much wider than the ball
    out = rolling_ball(y, 20.0)
    np.testing.assert_allclose(out[130:170], 60.0, atol=1e-9)


def test_rolling_ball_is_idempotent():
    rng = np.random.default_rng(34)
    y = 100.0 + np.cumsum(rng.standard_normal(150))
    once = rolling_ball(y, 30.0)
    twice = rolling_ball(once, 30.0)
    np.testing.assert_allclose(twice, once, atol=1e-9)
    assert np.all(once >= y - 1e-9)


def test_rolling_ball_rejects_bad_radius():
    with pytest.raises(ValueError):
        rolling_ball(np.zeros(10), 0.0)


# ------------------------------------------------------------ full surface

def step_frame(rows, cols, boundary, seed=0, noise=0.003):
    rng = np.random.default_rng(seed)
    img = np.where(np.arange(rows)[:, None] < boundary, 0.03, 0.75)
    return img + noise * rng.standard_normal((rows, cols))


def test_detect_surface_on_sharp_step():
    frame = step_frame(128, 64, boundary=40)
    surf = detect_surface(frame)
    # the first thresholded row sits slightly air-ward of the step midpoint
    assert np.all(np.abs(surf.pre_shift - 40) <= 5)
    np.testing.assert_array_equal(surf.rows, np.rint(surf.pre_shift + 30))
    assert np.all(surf.flags == DETECTED)


def test_detect_surface_translation_tracks_boundary():
    a = detect_surface(step_frame(128, 64, boundary=35, seed=1))
    b = detect_surface(step_frame(128, 64, boundary=55, seed=1))
    shift = np.mean(b.pre_shift - a.pre_shift)
    assert abs(shift - 20) < 1.5


def test_detect_surface_all_air_falls_back_to_half_depth():
    rng = np.random.default_rng(35)
    frame = 0.05 + 0.002 * rng.standard_normal((128, 64))
    surf = detect_surface(frame)
    assert np.all(surf.flags == HALF_DEPTH)
    np.testing.assert_array_equal(surf.rows, np.full(64, 64 + 30))


def test_detect_surface_clamps_at_bottom():
    frame = step_frame(50, 64, boundary=45)  # 45 + 30 exceeds the frame
    surf = detect_surface(frame)
    assert np.all(surf.rows <= 49)


# ---------------------------------------------------------------- patches

def test_downscale_constant_and_checkerboard():
    np.testing.assert_array_equal(downscale(np.full((64, 64, 3), 0.6)),
                                  np.full((32, 32, 3), 0.6))
    checker = np.indices((64, 64)).sum(axis=0) % 2
    block = np.repeat(checker[:, :, None], 3, axis=2).astype(float)
    np.testing.assert_array_equal(downscale(block), np.full((32, 32, 3), 0.5))


def test_downscale_matches_naive_means():
    rng = np.random.default_rng(36)
    block = rng.random((64, 64, 3))
    ref = np.zeros((32, 32, 3))
    for i in range(32):
        for j in range(32):
            ref[i, j] = block[2 * i : 2 * i + 2, 2 * j : 2 * j + 2].mean(axis=(0, 1))
    np.testing.assert_allclose(downscale(block), ref, atol=1e-12)


def test_downscale_rejects_wrong_shape():
    with pytest.raises(ShapeError):
        downscale(np.zeros((64, 64, 2)))


def test_extract_counts_without_surface_constraint():
    rng = np.random.default_rng(37)
    vol = BScanVolume(frames=rng.random((192, 128, 5)))
    got = extract_patches(vol, flat_surfaces(128, 5, row=0), mode="train", label=1)
    # r0 in {0,64,128}, c0 in {0,64}, f0 in {0}
    assert len(got) == 6
    assert np.all(got.labels == 1)
    assert got.patches.shape == (6, 32, 32, 3)
    assert set(map(tuple, got.origins)) == {
        (r, c, 0) for r in (0, 64, 128) for c in (0, 64)
    }


def test_extract_surface_gate_drops_shallow_rows():
    rng = np.random.default_rng(38)
    vol = BScanVolume(frames=rng.random((192, 128, 5)))
    got = extract_patches(vol, flat_surfaces(128, 5, row=70), mode="train")
    assert set(got.origins[:, 0]) == {128}
    assert np.all(got.labels == -1)  # unlabeled by default


def test_extract_test_mode_strides():
    rng = np.random.default_rng(39)
    vol = BScanVolume(frames=rng.random((96, 72, 3)))
    got = extract_patches(vol, flat_surfaces(72, 3, row=0), mode="test")
    # r0 in 0..32 step 8 (5), c0 in {0, 8} (2), f0 in {0}
    assert len(got) == 10


def test_extract_normalizes_to_unit_range():
    rng = np.random.default_rng(40)
    vol = BScanVolume(frames=2.0 + 2.0 * rng.random((64, 64, 3)))
    got = extract_patches(vol, flat_surfaces(64, 3, row=0), mode="train")
    assert got.patches.min() >= 0.0 and got.patches.max() <= 1.0


def test_extract_mask_majority_and_tie():
    frames = np.random.default_rng(41).random((64, 128, 3))
    mask = np.zeros((64, 128, 3), dtype=np.uint8)
    mask[:, 64:, :] = 1  # right block pure tumor
    vol = BScanVolume(frames=frames, mask=mask)
    got = extract_patches(vol, flat_surfaces(128, 3, row=0), mode="train", label=1)
    by_col = {c: lab for (r, c, f), lab in zip(map(tuple, got.origins), got.labels)}
    assert by_col == {0: 0, 64: 1}

    mask[:, :, :] = 0
    mask[:32, :, :] = 1  # exact half/half split inside every block
    vol = BScanVolume(frames=frames, mask=mask)
    got = extract_patches(vol, flat_surfaces(128, 3, row=0), mode="train")
    assert np.all(got.labels == 0)  # ties resolve to normal


def test_extract_validation_errors():
    rng = np.random.default_rng(42)
    vol = BScanVolume(frames=rng.random((64, 64, 3)))
    with pytest.raises(ValueError):
        extract_patches(vol, flat_surfaces(64, 3, row=0), mode="predict")
    with pytest.raises(ShapeError):
        extract_patches(vol, flat_surfaces(64, 2, row=0), mode="train")
    with pytest.raises(ShapeError):
        extract_patches(BScanVolume(frames=rng.random((64, 64, 2))),
                        flat_surfaces(64, 2, row=0), mode="train")


def test_volume_validation():
    with pytest.raises(ShapeError):
        BScanVolume(frames=np.zeros((4, 4)))
    with pytest.raises(ValueError):
        BScanVolume(frames=np.full((4, 4, 3), np.nan))
    with pytest.raises(ShapeError):
        BScanVolume(frames=np.zeros((4, 4, 3)), mask=np.zeros((4, 4, 2), dtype=np.uint8))


def test_surface_curve_validation():
    with pytest.raises(ShapeError):
        SurfaceCurve(rows=np.zeros(4, dtype=int), pre_shift=np.zeros(3),
                     flags=np.zeros(4, dtype=np.uint8))
