import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depthcons.fusion import (DenoiserConfig, SpectralDenoiser, TwoStageEstimator, WindowPlan,
                              WindowTooShortError, blend_windows, denoise_video, jump_breaks,
                              plan_windows, run_two_stage, spectral_denoise_window,
                              temporal_shrink)
from depthcons.metrics import AffineAligner, compute_metrics
from depthcons.model import DepthVideo, StructuralError
from depthcons.spectral import band_energies, band_table, make_band_partition
from depthcons.synth import EstimatorSurrogateSpec, corrupt, make_pairwise

IDENTITY = DenoiserConfig(alpha=1.0, null_noise=True)


def smooth_video(T=110, H=6, W=8, seed=0):
    """Depth whose per-pixel trajectories hold only a few low temporal bins."""
    r = np.random.default_rng(seed)
    t = np.arange(T)[:, None, None]
    base = r.uniform(2, 6, (1, H, W))
    wobble = 0.3 * np.sin(2 * np.pi * t / T + r.uniform(0, 6, (1, H, W)))
    return DepthVideo(base + wobble)


def error_sequence(pred, gt):
    return compute_metrics(AffineAligner().fit(pred, gt).transform(pred), gt).sequence("absrel")


# -- windows

def test_plan_windows_examples():
    assert plan_windows(110).windows == ((0, 109),)
    assert plan_windows(195).windows == ((0, 109), (85, 194))
    assert plan_windows(300).windows == ((0, 109), (85, 194), (170, 279), (190, 299))
    assert plan_windows(220).windows == ((0, 109), (85, 194), (110, 219))
    assert plan_windows(40).windows == ((0, 39),)
    with pytest.raises(ValueError):
        plan_windows(300, 25, 25)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 1000), st.integers(1, 200), st.integers(0, 199))
def test_plan_windows_cover(T, L, overlap):
    if overlap >= L:
        return
    plan = plan_windows(T, L, overlap)
    covered = np.zeros(T, bool)
    for a, e in plan.windows:
        assert 0 <= a <= e < T
        covered[a:e + 1] = True
    assert covered.all()
    for (a0, e0), (a1, e1) in zip(plan.windows[:-2], plan.windows[1:-1]):
        assert e0 - a1 + 1 == overlap
    assert plan.windows[-1][1] == T - 1


# -- single-window denoiser

def test_identity_configuration_returns_input():
    v = smooth_video()
    assert spectral_denoise_window(v, IDENTITY, seed=3) is v


def test_window_too_short():
    with pytest.raises(WindowTooShortError):
        spectral_denoise_window(DepthVideo(np.ones((3, 2, 2))), DenoiserConfig(), 0)


@pytest.mark.parametrize("alpha", [0.02, 0.5, 1.0])
def test_constant_trajectories_preserved(alpha):
    frames = np.tile(np.random.default_rng(1).uniform(1, 5, (1, 4, 5)), (30, 1, 1))
    out = spectral_denoise_window(DepthVideo(frames), DenoiserConfig(alpha=alpha), seed=2)
    np.testing.assert_allclose(out.frames, frames, rtol=1e-9)


def test_high_band_jitter_removed_low_band_kept():
    gt = smooth_video()
    spec = EstimatorSurrogateSpec("stereo_jitter", jitter_amplitude=0.05, jitter_band=(0.3, 0.5), seed=5)
    noisy = corrupt(gt, None, spec)
    out = spectral_denoise_window(noisy, DenoiserConfig(), seed=1)
    P = make_band_partition(gt.frame_count, 11)
    e_in = band_energies(error_sequence(noisy, gt), P)
    e_out = band_energies(error_sequence(out, gt), P)
    high, low = slice(7, 11), slice(0, 3)
    assert e_out[high].sum() <= 0.3 * e_in[high].sum()
    assert e_out[low].sum() <= 1.1 * e_in[low].sum()


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 120), st.floats(0.01, 1.0), st.floats(0.01, 0.5), st.integers(0, 2**31))
def test_shrink_keeps_mean_and_lowers_energy(L, alpha, cutoff, seed):
    x = np.random.default_rng(seed).uniform(0, 1, (L, 3))
    y = temporal_shrink(x, cutoff, alpha)
    np.testing.assert_allclose(y.mean(axis=0), x.mean(axis=0), atol=1e-9)
    dx = x - x.mean(axis=0)
    dy = y - y.mean(axis=0)
    assert np.all((dy ** 2).sum(axis=0) <= (dx ** 2).sum(axis=0) * (1 + 1e-12))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 1.0))
def test_null_noise_window_keeps_disparity_mean(seed, alpha):
    v = smooth_video(T=40, seed=seed % 1000)
    out = spectral_denoise_window(v, DenoiserConfig(alpha=alpha, null_noise=True), seed)
    np.testing.assert_allclose((1 / out.frames).mean(axis=0), (1 / v.frames).mean(axis=0), rtol=1e-9)


def test_jump_breaks_split_segments():
    x = np.r_[np.ones(10), 2 * np.ones(10)][:, None]
    b = jump_breaks(x, 0.3)
    assert b[:, 0].tolist() == [i == 9 for i in range(19)]
    y = temporal_shrink(x, 0.05, 0.02, b)
    np.testing.assert_allclose(y, x, atol=1e-12)


def test_denoiser_is_seed_deterministic():
    v = smooth_video()
    a = spectral_denoise_window(v, DenoiserConfig(), seed=7)
    b = spectral_denoise_window(v, DenoiserConfig(), seed=7)
    assert np.array_equal(a.frames, b.frames)


# -- blending

def test_blend_single_window_identity():
    v = smooth_video(T=20)
    plan = plan_windows(20, 30, 5)
    assert np.array_equal(blend_windows([v], plan).frames, v.frames)


def test_blend_identical_overlap_unchanged():
    v = smooth_video(T=195)
    plan = plan_windows(195)
    slices = [v.slice(a, e + 1) for a, e in plan.windows]
    assert np.array_equal(blend_windows(slices, plan).frames, v.frames)


def test_blend_constant_offset_ramps_linearly():
    plan = plan_windows(195)
    a = DepthVideo(np.full((110, 1, 1), 1.0))
    b = DepthVideo(np.full((110, 1, 1), 2.0))
    out = blend_windows([a, b], plan).frames[:, 0, 0]
    ramp = 1.0 + (np.arange(25) + 0.5) / 25
    np.testing.assert_allclose(out[85:110], ramp, rtol=1e-15)
    assert np.all(out[:85] == 1.0) and np.all(out[110:] == 2.0)
    hard = blend_windows([a, b], plan, blend=False).frames[:, 0, 0]
    assert np.all(hard[:97] == 1.0) and np.all(hard[97:] == 2.0)


def test_blend_rejects_mismatch():
    plan = plan_windows(195)
    with pytest.raises(StructuralError):
        blend_windows([smooth_video(T=110)], plan)


# -- two stages

def test_two_stage_identity_config(small_gt):
    gt = small_gt
    graph = make_pairwise(gt.depth, gt.track, gt.masks, n=2)
    cfg = DenoiserConfig(alpha=1.0, null_noise=True, window_length=10, overlap=3)
    res = run_two_stage(graph, cfg, seed=0)
    assert np.array_equal(res.fused.frames, res.stage1.frames)
    assert res.plan.windows[0] == (0, 9)


def test_two_stage_improves_jittered_stage1(small_gt):
    gt = small_gt
    spec = EstimatorSurrogateSpec("stereo_jitter", jitter_amplitude=0.03, seed=1)
    graph = make_pairwise(gt.depth, gt.track, gt.masks, n=2, noise=spec, pair_scale_jitter=0.05, seed=1)
    res = run_two_stage(graph, DenoiserConfig(window_length=12, overlap=4), seed=1)

    def absrel(v):
        return compute_metrics(AffineAligner().fit(v, gt.depth).transform(v), gt.depth).absrel

    assert absrel(res.fused) <= absrel(res.stage1)


def test_two_stage_thread_independent(small_gt):
    gt = small_gt
    spec = EstimatorSurrogateSpec("stereo_jitter", jitter_amplitude=0.03, seed=1)
    graph = make_pairwise(gt.depth, gt.track, gt.masks, n=2, noise=spec, seed=1)
    cfg = DenoiserConfig(window_length=8, overlap=3)
    a = run_two_stage(graph, cfg, seed=4, threads=1).fused.frames
    b = run_two_stage(graph, cfg, seed=4, threads=8).fused.frames
    assert a.tobytes() == b.tobytes()


def test_drift_negative_control():
    """Stage 2 alone leaves a window-level offset where it was."""
    gt = smooth_video(T=220, seed=3)
    spec = EstimatorSurrogateSpec("window_drift", drift_amplitude=0.05, seed=2)
    drifted = corrupt(gt, None, spec)
    out, _ = denoise_video(drifted, DenoiserConfig(), seed=2)
    P = make_band_partition(220, 11)
    low_in = band_table(error_sequence(drifted, gt), P)[:3].sum()
    low_out = band_table(error_sequence(out, gt), P)[:3].sum()
    assert low_out == pytest.approx(low_in, rel=0.05)


# -- estimators

def test_spectral_denoiser_estimator():
    v = smooth_video()
    est = SpectralDenoiser(alpha=0.5, seed=3)
    assert est.get_params()["alpha"] == 0.5
    out = est.fit().transform(v)
    ref, _ = denoise_video(v, DenoiserConfig(alpha=0.5), seed=3)
    assert np.array_equal(out.frames, ref.frames)
    assert isinstance(est.plan_, WindowPlan)


def test_two_stage_estimator(small_gt):
    gt = small_gt
    graph = make_pairwise(gt.depth, gt.track, gt.masks, n=1)
    est = TwoStageEstimator(window_length=10, overlap=2, seed=5)
    fused = est.predict(graph)
    ref = run_two_stage(graph, DenoiserConfig(window_length=10, overlap=2), seed=5)
    assert np.array_equal(fused.frames, ref.fused.frames)
    assert np.array_equal(est.stage1_.frames, ref.stage1.frames)


def test_config_validation():
    with pytest.raises(ValueError):
        DenoiserConfig(cutoff_hz=0.6)
    with pytest.raises(ValueError):
        DenoiserConfig(alpha=0.0)
    with pytest.raises(ValueError):
        DenoiserConfig(inject_step_index=4)
    assert DenoiserConfig().inject_timestep == 500
