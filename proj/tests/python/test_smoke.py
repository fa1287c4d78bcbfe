# SPDX-License-Identifier: Apache-2.0
import numpy as np
import pytest

import attsets


def test_kinds_and_grid():
    kinds = attsets.aggregator_kinds()
    assert {"attsets_fc", "attsets_conv", "attsets_elem", "gru", "mean"} <= set(kinds)
    grid = attsets.threshold_grid()
    assert len(grid) == 13
    assert grid == sorted(grid)


def test_zero_init_attsets_is_mean():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(5, 8))
    out, scores = attsets.aggregate(x, "attsets_fc", attsets.init_weights("attsets_fc", 8))
    np.testing.assert_allclose(out, x.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(scores.sum(axis=0), np.ones(8), atol=1e-12)


def test_fc_matches_numpy_oracle_and_is_permutation_invariant():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 4))
    w = rng.normal(size=(4, 4))
    out, _ = attsets.aggregate(x, "attsets_fc", {"W": w})
    a = x @ w
    s = np.exp(a - a.max(axis=0))
    s /= s.sum(axis=0)
    np.testing.assert_allclose(out, (s * x).sum(axis=0), rtol=1e-12)
    perm = rng.permutation(6)
    out_p, _ = attsets.aggregate(x[perm], "attsets_fc", {"W": w})
    np.testing.assert_allclose(out_p, out, atol=1e-12)


def test_gru_depends_on_order():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 8))
    w = attsets.init_weights("gru", 8, seed=3)
    out, scores = attsets.aggregate(x, "gru", w)
    assert scores is None
    out_rev, _ = attsets.aggregate(x[::-1], "gru", w)
    assert np.abs(out - out_rev).max() > 1e-6


def test_iou_and_threshold_search():
    pred = np.array([0.9, 0.6, 0.1, 0.4])
    gt = np.array([1, 0, 1, 0], dtype=np.uint8)
    assert attsets.iou(pred, gt, 0.5) == pytest.approx(1 / 3)
    preds = np.full((2, 8), 0.5)
    truths = np.zeros((2, 8), dtype=np.uint8)
    threshold, mean = attsets.search_threshold(preds, truths)
    assert threshold == 0.5
    assert mean == 1.0


def test_make_sample_shapes_and_determinism():
    gt, views = attsets.make_sample(3, grid_side=8, image_side=8)
    assert gt.shape == (8, 8, 8)
    assert views.shape == (8, 8, 8)
    assert 0 < gt.mean() < 1
    gt2, views2 = attsets.make_sample(3, grid_side=8, image_side=8)
    assert np.array_equal(gt, gt2) and np.array_equal(views, views2)


def test_errors_map_to_python_exceptions():
    with pytest.raises(ValueError):
        attsets.aggregate(np.zeros((2, 4)), "median")
    with pytest.raises(ValueError):
        attsets.aggregate(np.zeros((2, 4)), "attsets_fc", {"W": np.zeros((3, 3))})
    with pytest.raises(ValueError):
        attsets.iou(np.zeros(3), np.zeros(4, dtype=np.uint8), 0.5)


def test_selftest_passes():
    results = attsets.selftest()
    assert results
    assert all(passed for _, passed, _ in results), results
