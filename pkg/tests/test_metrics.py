from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depthcons.metrics import (AffineAligner, AffineFit, AlignmentError, EmptyOverlapError,
                               SingularFitError, apply_affine, compute_metrics,
                               fit_affine_per_frame, fit_affine_shared, region_split_metrics)
from depthcons.model import DepthVideo, RegionMasks


def exact_fit(x, y):
    """Normal equations solved in exact rational arithmetic."""
    x = [Fraction(float(v)) for v in np.ravel(x)]
    y = [Fraction(float(v)) for v in np.ravel(y)]
    n = len(x)
    sx, sy = sum(x), sum(y)
    sxx = sum(a * a for a in x)
    sxy = sum(a * b for a, b in zip(x, y))
    s = (n * sxy - sx * sy) / (n * sxx - sx * sx)
    return float(s), float((sy - s * sx) / n)


def noisy_pair(seed=2024, shape=(3, 6, 8)):
    r = np.random.default_rng(seed)
    gt = r.uniform(1, 10, shape)
    pred = 0.5 * gt + 0.3 + r.normal(0, 0.2, shape)
    return DepthVideo(pred), DepthVideo(gt)


# -- fitting

def test_fit_identity():
    v = DepthVideo(np.arange(1, 9, dtype=float).reshape(2, 2, 2))
    f = fit_affine_shared(v, v)
    assert f.scale == pytest.approx(1, abs=1e-14) and f.shift == pytest.approx(0, abs=1e-13)


def test_fit_exact_affine_relation():
    p = np.arange(1, 13, dtype=float).reshape(3, 2, 2)
    f = fit_affine_shared(DepthVideo(p), DepthVideo(2 * p + 1))
    assert f.scale == pytest.approx(2, abs=1e-13) and f.shift == pytest.approx(1, abs=1e-12)


def test_fit_matches_exact_oracle():
    pred, gt = noisy_pair()
    f = fit_affine_shared(pred, gt)
    s, t = exact_fit(pred.frames, gt.frames)
    assert abs(f.scale - s) <= 1e-10 * abs(s)
    assert abs(f.shift - t) <= 1e-10 * max(1, abs(t))
    # frozen output of the exact oracle for this draw
    assert f.scale == pytest.approx(1.9527618997456078, rel=1e-12)
    assert f.shift == pytest.approx(-0.49703332337425477, rel=1e-12)
    assert f.valid_pixel_count == 144


def test_fit_ignores_invalid_pixels():
    pred, gt = noisy_pair()
    valid = np.ones(pred.shape, bool)
    valid[1, :3] = False
    p = DepthVideo(np.where(valid, pred.frames, -5.0), valid)
    f = fit_affine_shared(p, gt)
    s, t = exact_fit(pred.frames[valid], gt.frames[valid])
    assert f.scale == pytest.approx(s, rel=1e-10) and f.valid_pixel_count == valid.sum()


def test_fit_constant_prediction_is_singular():
    with pytest.raises(SingularFitError):
        fit_affine_shared(DepthVideo(np.full((2, 3, 3), 4.0)), DepthVideo(np.ones((2, 3, 3))))


def test_fit_without_overlap():
    a = DepthVideo(np.ones((1, 1, 2)), np.array([[[True, False]]]))
    b = DepthVideo(np.ones((1, 1, 2)), np.array([[[False, True]]]))
    with pytest.raises(EmptyOverlapError):
        fit_affine_shared(a, b)
    assert issubclass(EmptyOverlapError, AlignmentError)


def test_per_frame_identical_frames_equal_shared():
    r = np.random.default_rng(1)
    f0 = r.uniform(1, 3, (4, 5))
    pred = DepthVideo(np.stack([f0] * 3))
    gt = DepthVideo(np.stack([2 * f0 + 0.1 + 0.01 * r.normal(size=f0.shape)] * 3))
    shared = fit_affine_shared(pred, gt)
    for f in fit_affine_per_frame(pred, gt):
        assert f.scale == pytest.approx(shared.scale, rel=1e-12)
        assert f.shift == pytest.approx(shared.shift, rel=1e-10)


def test_per_frame_scaled_frames_match_per_frame_oracle():
    r = np.random.default_rng(7)
    gt = r.uniform(1, 4, (4, 5, 6))
    pred = gt * np.arange(1, 5)[:, None, None] + 0.02 * r.normal(size=gt.shape)
    fits = fit_affine_per_frame(DepthVideo(pred), DepthVideo(gt))
    for k, f in enumerate(fits):
        s, t = exact_fit(pred[k], gt[k])
        assert f.scale == pytest.approx(s, rel=1e-10)
        assert f.shift == pytest.approx(t, rel=1e-9, abs=1e-12)
        assert f.scale == pytest.approx(1 / (k + 1), rel=0.05)


def test_per_frame_single_frame_equals_shared():
    pred, gt = noisy_pair(shape=(1, 4, 4))
    assert fit_affine_per_frame(pred, gt)[0] == fit_affine_shared(pred, gt)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_shared_fit_beats_random_probes(seed):
    pred, gt = noisy_pair(seed)
    f = fit_affine_shared(pred, gt)
    x, y = pred.frames.ravel(), gt.frames.ravel()
    best = f.objective(x, y)
    r = np.random.default_rng(seed + 1)
    for s, t in zip(f.scale + r.normal(0, 0.5, 100), f.shift + r.normal(0, 2, 100)):
        assert best <= AffineFit(s, t, 0).objective(x, y) * (1 + 1e-12)
    per = fit_affine_per_frame(pred, gt)
    total = sum(p.objective(pred.frames[k], gt.frames[k]) for k, p in enumerate(per))
    assert total <= best * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100), st.floats(-5, 5), st.integers(0, 2**31))
def test_apply_fit_reproduces_gt(a, b, seed):
    gt = np.random.default_rng(seed).uniform(1, 10, (2, 3, 4))
    pred = DepthVideo(a * gt + b + 100 if b < 0 else a * gt + b)
    g = DepthVideo(gt)
    out = apply_affine(pred, fit_affine_shared(pred, g))
    np.testing.assert_allclose(out.frames, gt, rtol=1e-9)


# -- apply

def test_apply_identity_and_arithmetic():
    v = DepthVideo(np.array([[[3.0]]]))
    assert apply_affine(v, AffineFit(1, 0, 1)).frames[0, 0, 0] == 3.0
    assert apply_affine(v, AffineFit(2, 1, 1)).frames[0, 0, 0] == 7.0


def test_apply_invalidates_nonpositive():
    out, n = apply_affine(DepthVideo(np.array([[[3.0, 20.0]]])), AffineFit(1, -10, 2), return_count=True)
    assert n == 1
    assert out.valid.tolist() == [[[False, True]]]


# -- metrics

def test_metrics_perfect_prediction():
    v = DepthVideo(np.random.default_rng(0).uniform(1, 2, (3, 4, 4)))
    m = compute_metrics(v, v)
    assert (m.absrel, m.rmse, m.delta1, m.delta2) == (0, 0, 1, 1)


def test_absrel_denominator_conventions():
    gt = DepthVideo(np.array([[[2.0, 4.0]]]))
    pred = DepthVideo(np.array([[[1.0, 5.0]]]))
    assert compute_metrics(pred, gt).absrel == pytest.approx(0.375, abs=1e-15)
    assert compute_metrics(pred, gt, absrel_denominator="pred").absrel == pytest.approx(0.6, abs=1e-15)


def test_delta1_threshold_is_strict():
    m = compute_metrics(DepthVideo(np.array([[[1.0, 1.0]]])), DepthVideo(np.array([[[1.0, 1.3]]])))
    assert m.delta1 == 0.5
    m = compute_metrics(DepthVideo(np.array([[[1.0]]])), DepthVideo(np.array([[[1.25]]])))
    assert m.delta1 == 0.0 and m.delta2 == 1.0


def test_rmse_variants():
    gt = DepthVideo(np.array([[[1.0, 1.0, 1.0, 1.0]]]))
    pred = DepthVideo(np.array([[[2.0, 2.0, 2.0, 2.0]]]))
    assert compute_metrics(pred, gt).rmse == 1.0
    assert compute_metrics(pred, gt, rmse_paper_literal=True).rmse == 0.5


def test_aggregate_is_mean_of_frames():
    pred, gt = noisy_pair()
    m = compute_metrics(pred, gt)
    np.testing.assert_allclose([m.absrel, m.rmse, m.delta1, m.delta2], m.per_frame.mean(axis=0), rtol=1e-15)


def test_empty_frame_excluded_not_nan():
    gt = DepthVideo(np.ones((2, 1, 2)))
    valid = np.array([[[True, True]], [[False, False]]])
    pred = DepthVideo(np.where(valid, 2.0, 0.0), valid)
    with pytest.warns(RuntimeWarning):
        m = compute_metrics(pred, gt)
    assert m.excluded_frames == 1
    assert m.absrel == 1.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_region_split_all_static_equals_overall():
    pred, gt = noisy_pair()
    dyn, sta, ov = region_split_metrics(pred, gt, RegionMasks(np.zeros(pred.shape, bool)))
    assert sta.absrel == ov.absrel and sta.rmse == ov.rmse
    assert dyn.excluded_frames == pred.frame_count


def test_region_split_error_only_in_dynamic():
    gt = np.ones((1, 2, 2))
    pred = gt.copy()
    pred[0, 0, 0] = 1.5
    masks = RegionMasks(np.array([[[True, False], [False, False]]]))
    dyn, sta, ov = region_split_metrics(DepthVideo(pred), DepthVideo(gt), masks)
    assert sta.absrel == 0 and dyn.absrel == 0.5
    assert sta.absrel < ov.absrel < dyn.absrel


def test_region_split_partition_identity(rng):
    pred, gt = noisy_pair(99)
    masks = RegionMasks(rng.random(pred.shape) < 0.3)
    dyn, sta, ov = region_split_metrics(pred, gt, masks)
    w = dyn.counts / ov.counts
    mixed = w * dyn.per_frame[:, 0] + (1 - w) * sta.per_frame[:, 0]
    np.testing.assert_allclose(mixed, ov.per_frame[:, 0], rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_metrics_properties(seed):
    r = np.random.default_rng(seed)
    gt = r.uniform(1, 5, (1, 4, 6))
    pred = gt * r.uniform(0.5, 2.0, gt.shape)
    m = compute_metrics(DepthVideo(pred), DepthVideo(gt))
    assert m.delta2 >= m.delta1
    perm = r.permutation(24)
    mp = compute_metrics(DepthVideo(pred.reshape(1, 1, -1)[..., perm]),
                         DepthVideo(gt.reshape(1, 1, -1)[..., perm]))
    assert mp.absrel == pytest.approx(m.absrel, rel=1e-12)
    assert mp.delta1 == m.delta1


# -- estimator

def test_aligner_estimator_api():
    pred, gt = noisy_pair()
    est = AffineAligner()
    assert est.get_params() == {"absrel_denominator": "gt", "per_frame": False,
                                "rmse_paper_literal": False}
    out = est.fit(pred, gt).transform(pred)
    f = fit_affine_shared(pred, gt)
    assert est.scale_ == f.scale and est.shift_ == f.shift
    np.testing.assert_allclose(out.frames, f.scale * pred.frames + f.shift)
    assert est.score(pred, gt) == pytest.approx(-compute_metrics(out, gt).absrel)
