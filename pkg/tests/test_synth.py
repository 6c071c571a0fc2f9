import copy

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depthcons.model import DepthVideo, RegionMasks
from depthcons.spectral import band_energies, make_band_partition
from depthcons.synth import (CORR_DTYPE, EstimatorSurrogateSpec, SceneError, SceneSpec,
                             band_limited_signal, bilinear, corrupt, correspondence_pairs,
                             make_pairwise, read_correspondences, render_gt, write_correspondences)

from conftest import small_scene_dict


def plane_scene(frames=5, velocity=(0, 0, 0)):
    return SceneSpec.from_dict({
        "width": 8, "height": 6, "frame_count": frames,
        "intrinsics": {"fx": 10.0, "fy": 10.0, "cx": 3.5, "cy": 2.5},
        "camera": {"position": [0, 0, 0], "velocity": list(velocity)},
        "static": [{"type": "plane", "point": [0, 0, 2], "normal": [0, 0, -1]}],
    })


def test_static_plane_constant_depth():
    gt = render_gt(plane_scene())
    np.testing.assert_allclose(gt.depth.frames, 2.0, rtol=1e-15)
    assert not gt.masks.dynamic.any()


def test_camera_moving_toward_plane():
    gt = render_gt(plane_scene(velocity=(0, 0, 0.1)))
    expected = 2.0 - 0.1 * np.arange(5)
    np.testing.assert_allclose(gt.depth.frames, expected[:, None, None] * np.ones((1, 6, 8)), rtol=1e-12)


def test_sphere_mask_matches_projected_ellipse():
    W, H, f = 320, 240, 260.0
    spec = SceneSpec.from_dict({
        "width": W, "height": H, "frame_count": 6,
        "intrinsics": {"fx": f, "fy": f, "cx": (W - 1) / 2, "cy": (H - 1) / 2},
        "static": [{"type": "plane", "point": [0, 0, 9], "normal": [0, 0, -1]}],
        "dynamic": [{"type": "sphere", "radius": 0.6,
                     "motion": {"start": [-0.8, 0.2, 4.0], "velocity": [0.3, -0.05, 0.1]}}],
    })
    gt = render_gt(spec, delta=100)
    r = 0.6
    for t in range(6):
        C = np.array([-0.8 + 0.3 * t, 0.2 - 0.05 * t, 4.0 + 0.1 * t])
        d2 = C @ C
        # area of the conic silhouette of a sphere under a pinhole camera
        area = np.pi * f * f * r * r * np.sqrt(d2 - r * r) / (C[2] ** 2 - r * r) ** 1.5
        assert gt.masks.dynamic[t].sum() == pytest.approx(area, rel=0.02)


def test_render_is_reproducible(small_spec):
    a, b = render_gt(small_spec, 4), render_gt(small_spec, 4)
    assert a.depth.frames.tobytes() == b.depth.frames.tobytes()
    assert a.correspondences.tobytes() == b.correspondences.tobytes()


def test_correspondences_round_trip_geometry(small_gt):
    gt = small_gt
    c = gt.correspondences
    assert c.size > 0
    assert set(zip(c["i"].tolist(), c["j"].tolist())) <= set(correspondence_pairs(24, 4))
    for i, j in correspondence_pairs(24, 4):
        rows = c[(c["i"] == i) & (c["j"] == j)]
        if rows.size == 0:
            continue
        fx, fy, cx, cy = gt.track.intrinsics[i]
        d = gt.depth.frames[i][rows["row"], rows["col"]]
        X = np.stack([(rows["col"] - cx) / fx * d, (rows["row"] - cy) / fy * d, d], -1)
        Pi, Pj = gt.track.poses[i], gt.track.poses[j]
        cam = (X @ Pi[:3, :3].T + Pi[:3, 3] - Pj[:3, 3]) @ Pj[:3, :3]
        u = fx * cam[:, 0] / cam[:, 2] + cx
        v = fy * cam[:, 1] / cam[:, 2] + cy
        assert np.max(np.abs(u - rows["u"])) < 1e-6
        assert np.max(np.abs(v - rows["v"])) < 1e-6
        # depth sampled in frame j agrees with the transported point
        zj = 1.0 / bilinear(1.0 / gt.depth.frames[j], rows["u"], rows["v"])
        np.testing.assert_allclose(zj, cam[:, 2], rtol=1e-6)
        assert not gt.masks.dynamic[i][rows["row"], rows["col"]].any()


def test_correspondence_file_round_trip(tmp_path, small_gt):
    p = tmp_path / "corr.bin"
    write_correspondences(small_gt.correspondences, p)
    assert p.stat().st_size == small_gt.correspondences.size * 32
    assert CORR_DTYPE.itemsize == 32
    assert read_correspondences(p).tobytes() == small_gt.correspondences.tobytes()


def test_scene_validation():
    d = small_scene_dict()
    d["frame_count"] = 0
    with pytest.raises(SceneError):
        SceneSpec.from_dict(d)
    d = small_scene_dict()
    d["dynamic"][0]["motion"]["start"] = [0, 0, -5]
    d["dynamic"][0]["motion"]["amplitude"] = [0, 0, 0]
    with pytest.raises(SceneError, match="front of the camera"):
        render_gt(SceneSpec.from_dict(d))
    d = small_scene_dict()
    d["static"][0]["type"] = "cone"
    with pytest.raises(SceneError):
        SceneSpec.from_dict(d)


# -- surrogates

def test_zero_amplitude_is_identity(small_gt):
    for kind in ("stereo_jitter", "window_drift", "gaussian_pixel"):
        out = corrupt(small_gt.depth, small_gt.masks, EstimatorSurrogateSpec(kind))
        assert np.array_equal(out.frames, small_gt.depth.frames)


def test_window_drift_two_levels():
    T, H, W = 220, 3, 4
    gt = DepthVideo(np.random.default_rng(0).uniform(1, 3, (T, H, W)))
    out = corrupt(gt, None, EstimatorSurrogateSpec("window_drift", drift_amplitude=0.05, seed=1))
    ratio = out.frames / gt.frames
    levels = np.unique(np.round(ratio, 12))
    assert len(levels) == 2
    np.testing.assert_allclose(ratio[:110], ratio[0, 0, 0], rtol=1e-14)
    np.testing.assert_allclose(ratio[110:], ratio[110, 0, 0], rtol=1e-14)
    assert 0.025 <= abs(ratio[0, 0, 0] - 1) <= 0.05


def test_window_drift_energy_in_lowest_bands():
    gt = DepthVideo(np.random.default_rng(1).uniform(1, 3, (220, 4, 5)))
    out = corrupt(gt, None, EstimatorSurrogateSpec("window_drift", drift_amplitude=0.05, seed=3))
    err = np.abs(out.frames - gt.frames).mean(axis=(1, 2))
    e = band_energies(err, make_band_partition(220, 11))
    assert e[:3].sum() >= 0.9 * e.sum()


def test_high_band_jitter_energy_above_midpoint():
    T = 220
    gt = DepthVideo(np.random.default_rng(2).uniform(1, 3, (T, 4, 5)))
    spec = EstimatorSurrogateSpec("stereo_jitter", jitter_amplitude=0.05, jitter_band=(0.3, 0.5), seed=4)
    out = corrupt(gt, None, spec)
    signed = ((out.frames - gt.frames) / gt.frames).mean(axis=(1, 2))
    power = np.abs(np.fft.rfft(signed)) ** 2
    assert power[T // 4 + 1:].sum() >= 0.8 * power.sum()


def test_band_limited_signal_support():
    x = band_limited_signal(128, (0.1, 0.2), np.random.default_rng(0))
    assert x.std() == pytest.approx(1.0) and abs(x.mean()) < 1e-12
    k = np.flatnonzero(np.abs(np.fft.rfft(x)) > 1e-9)
    assert k.min() >= 0.1 * 128 and k.max() <= 0.2 * 128


def test_jitter_doubled_on_dynamic_pixels():
    gt = DepthVideo(np.full((64, 1, 2), 2.0))
    masks = RegionMasks(np.array([[[True, False]]] * 64))
    out = corrupt(gt, masks, EstimatorSurrogateSpec("stereo_jitter", jitter_amplitude=0.01, seed=1))
    dev = out.frames / 2.0 - 1
    np.testing.assert_allclose(dev[:, 0, 0], 2 * dev[:, 0, 1], rtol=0, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["stereo_jitter", "window_drift", "gaussian_pixel"]), st.floats(0, 3),
       st.integers(0, 2**31))
def test_corrupt_keeps_validity_and_positivity(kind, amp, seed):
    r = np.random.default_rng(seed)
    frames = r.uniform(0.5, 4, (16, 3, 3))
    valid = r.random(frames.shape) < 0.8
    gt = DepthVideo(np.where(valid, frames, 0.0), valid)
    spec = EstimatorSurrogateSpec(kind, seed=seed).with_amplitude(amp)
    out = corrupt(gt, RegionMasks(r.random(frames.shape) < 0.3), spec)
    assert np.array_equal(out.valid, gt.valid)
    assert np.all(out.frames[out.valid] > 0)


def test_gaussian_pixel_is_per_frame_deterministic():
    gt = DepthVideo(np.ones((4, 3, 3)))
    spec = EstimatorSurrogateSpec("gaussian_pixel", noise_sigma=0.1, seed=5)
    a = corrupt(gt, None, spec).frames
    b = corrupt(DepthVideo(np.ones((2, 3, 3))), None, spec).frames
    assert np.array_equal(a[:2], b)


def test_surrogate_spec_round_trip():
    spec = EstimatorSurrogateSpec("stereo_jitter", jitter_amplitude=0.2, jitter_band=(0.2, 0.4), seed=3)
    assert EstimatorSurrogateSpec.from_dict(spec.as_dict()) == spec
    with pytest.raises(ValueError):
        EstimatorSurrogateSpec("stereo_jitter", jitter_band=(0.2, 0.6))
    with pytest.raises(ValueError):
        EstimatorSurrogateSpec("window_drift", drift_amplitude=-1)


# -- pairwise pointmaps

def test_pairwise_edge_count(small_gt):
    gt = small_gt
    d = gt.depth.slice(0, 5)
    track = type(gt.track)(gt.track.intrinsics[:5], gt.track.poses[:5])
    graph = make_pairwise(d, track, RegionMasks(gt.masks.dynamic[:5]), n=2)
    assert len(graph.pairs) == 7


def test_pairwise_confidence_rules(small_gt):
    gt = small_gt
    graph = make_pairwise(gt.depth, gt.track, gt.masks, n=1, seed=3)
    p = graph.pairs[0]
    dyn_i = gt.masks.dynamic[0]
    assert np.all(p.confidence_i[dyn_i] == 0)
    c = p.confidence_i[~dyn_i]
    assert np.all((c > 0.5) & (c <= 1.0))


def test_pairwise_views_share_geometry(small_gt):
    gt = small_gt
    graph = make_pairwise(gt.depth, gt.track, gt.masks, n=1)
    p = graph.pairs[3]
    i, j = p.edge
    np.testing.assert_allclose(p.forward.points_i[..., 2], gt.depth.frames[i], rtol=1e-12)
    np.testing.assert_allclose(p.backward.points_j[..., 2], gt.depth.frames[j], rtol=1e-12)


def test_pairwise_is_seed_deterministic(small_gt):
    gt = small_gt
    spec = EstimatorSurrogateSpec("stereo_jitter", jitter_amplitude=0.03, seed=1)
    a = make_pairwise(gt.depth, gt.track, gt.masks, 1, spec, 0.05, seed=2)
    b = make_pairwise(gt.depth, gt.track, gt.masks, 1, copy.deepcopy(spec), 0.05, seed=2)
    for p, q in zip(a.pairs, b.pairs):
        assert np.array_equal(p.forward.points_j, q.forward.points_j)
        assert np.array_equal(p.backward.confidence_j, q.backward.confidence_j)
