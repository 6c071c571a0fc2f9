"""Stage 2 and the two-stage pipeline.

The stage-2 surrogate works on disparity, window by window.  Each window is
normalized to roughly [0, 1], forward-noised at one diffusion timestep, and
then denoised in a single step by an ideal noise predictor whose clean-signal
estimate is a per-pixel temporal low-pass of the input: bins above the cutoff
are scaled by ``alpha`` while DC and low bins pass unchanged.  Because the
synthetic ground truth is band-limited in time, low-passing the signal is the
same as low-passing its error.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_int, check_video
from .model import CameraTrack, DepthVideo, StructuralError
from .registration import GlobalAlignment, PairGraph, align_global
from .rng import stream
from .schedule import ScheduleTable, TimestepSpacing, build_schedule, make_spacing, q_sample

WINDOW_LENGTH = 110
OVERLAP = 25
PERCENTILES = (1.0, 99.0)


class WindowTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class WindowPlan:
    frame_count: int
    window_length: int
    overlap: int
    windows: tuple[tuple[int, int], ...]

    def as_dict(self) -> dict:
        return {"frame_count": self.frame_count, "window_length": self.window_length,
                "overlap": self.overlap, "windows": [list(w) for w in self.windows]}


def plan_windows(T: int, window_length: int = WINDOW_LENGTH, overlap: int = OVERLAP) -> WindowPlan:
    """Inclusive ``(start, end)`` windows with stride ``window_length - overlap``.

    The last window is shifted left to end exactly at ``T - 1``, so it may
    overlap its predecessor by more than ``overlap`` frames.
    """
    T = check_int(T, "T", 1)
    window_length = check_int(window_length, "window_length", 1)
    overlap = check_int(overlap, "overlap", 0)
    if overlap >= window_length:
        raise ValueError(f"overlap ({overlap}) must be smaller than window_length ({window_length})")
    if window_length >= T:
        return WindowPlan(T, window_length, overlap, ((0, T - 1),))
    stride = window_length - overlap
    windows = []
    start = 0
    while True:
        end = start + window_length - 1
        if end >= T - 1:
            windows.append((T - window_length, T - 1))
            break
        windows.append((start, end))
        start += stride
    return WindowPlan(T, window_length, overlap, tuple(windows))


def _default_spacing() -> TimestepSpacing:
    return make_spacing(1000, 4, "trailing")


@dataclass(frozen=True, eq=False)
class DenoiserConfig:
    """Stage-2 settings.

    ``cutoff_hz`` is in cycles per frame.  ``null_noise`` replaces the injected
    Gaussian field with zeros (a test hook for the identity configuration).
    """

    cutoff_hz: float = 0.05
    alpha: float = 0.02
    spacing: TimestepSpacing = field(default_factory=_default_spacing)
    inject_step_index: int = 2
    schedule: ScheduleTable = field(default_factory=build_schedule)
    window_length: int = WINDOW_LENGTH
    overlap: int = OVERLAP
    blend: bool = True
    null_noise: bool = False
    jump_threshold: float | None = None

    def __post_init__(self):
        if not 0 < self.cutoff_hz <= 0.5:
            raise ValueError(f"cutoff_hz must lie in (0, 0.5], got {self.cutoff_hz}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        check_int(self.inject_step_index, "inject_step_index", 0, self.spacing.inference_steps - 1)
        if self.spacing.train_steps != self.schedule.train_steps:
            raise ValueError("spacing and schedule disagree on the number of train steps")
        if self.overlap >= self.window_length:
            raise ValueError("overlap must be smaller than window_length")
        if self.jump_threshold is not None and not self.jump_threshold > 0:
            raise ValueError(f"jump_threshold must be positive, got {self.jump_threshold}")

    @property
    def inject_timestep(self) -> int:
        return self.spacing.timesteps[self.inject_step_index]

    def as_dict(self) -> dict:
        return {
            "cutoff_hz": self.cutoff_hz, "alpha": self.alpha,
            "spacing_mode": self.spacing.mode, "inference_steps": self.spacing.inference_steps,
            "inject_step_index": self.inject_step_index, "inject_timestep": self.inject_timestep,
            "schedule": self.schedule.kind, "train_steps": self.schedule.train_steps,
            "window_length": self.window_length, "overlap": self.overlap,
            "blend": self.blend, "null_noise": self.null_noise,
            "jump_threshold": self.jump_threshold,
        }


def _shrink_block(x: np.ndarray, cutoff_hz: float, alpha: float) -> np.ndarray:
    L = x.shape[0]
    ext = np.concatenate([x, x[::-1]], axis=0)
    spec = np.fft.rfft(ext, axis=0)
    freqs = np.arange(spec.shape[0]) / (2 * L)
    spec[freqs > cutoff_hz] *= alpha
    return np.fft.irfft(spec, n=2 * L, axis=0)[:L]


def temporal_shrink(x: np.ndarray, cutoff_hz: float, alpha: float,
                    breaks: np.ndarray | None = None) -> np.ndarray:
    """Scale temporal frequencies above ``cutoff_hz`` by ``alpha`` along axis 0.

    The window is mirrored before the transform so its two ends do not wrap
    into each other; the mirrored signal is symmetric, so the window mean is
    kept exactly and the fluctuation energy can only shrink.

    ``breaks`` (shape ``(L-1, ...)``) marks a discontinuity between frames
    ``t`` and ``t+1``; each trajectory is then filtered piece by piece, and
    every piece keeps its own mean.
    """
    out = _shrink_block(x, cutoff_hz, alpha)
    if breaks is None:
        return out
    flat_x = x.reshape(x.shape[0], -1)
    flat_out = out.reshape(x.shape[0], -1)
    flat_b = np.asarray(breaks, dtype=bool).reshape(x.shape[0] - 1, -1)
    for p in np.nonzero(flat_b.any(axis=0))[0]:
        cuts = np.concatenate([[0], np.nonzero(flat_b[:, p])[0] + 1, [x.shape[0]]])
        for a, b in zip(cuts[:-1], cuts[1:]):
            flat_out[a:b, p] = _shrink_block(flat_x[a:b, p], cutoff_hz, alpha)
    return flat_out.reshape(x.shape)


def jump_breaks(disparity: np.ndarray, threshold: float) -> np.ndarray:
    """Frame-to-frame relative disparity changes larger than ``threshold``."""
    a, b = disparity[:-1], disparity[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(b - a) / np.minimum(np.abs(a), np.abs(b))
    return ~(rel <= threshold)


def _fill_invalid(x: np.ndarray, valid: np.ndarray) -> np.ndarray:
    # invalid samples take their pixel's temporal mean so they add no fluctuation
    cnt = valid.sum(axis=0)
    mean = np.where(cnt > 0, np.where(valid, x, 0).sum(axis=0) / np.maximum(cnt, 1), 0.0)
    return np.where(valid, x, mean[None])


def _normalization(values: np.ndarray) -> tuple[float, float]:
    lo, hi = np.percentile(values, PERCENTILES)
    if not hi > lo:
        lo, hi = values.min(), values.max()
    return float(lo), float(hi)


def spectral_denoise_window(window: DepthVideo, cfg: DenoiserConfig, seed: int,
                            window_index: int = 0) -> DepthVideo:
    """One-step denoise of a window; depth in, depth out (disparity stays disparity)."""
    window = check_video(window, "window")
    L = window.frame_count
    if L < 4:
        raise WindowTooShortError(f"window has {L} frames, need at least 4")
    if cfg.alpha == 1.0 and cfg.null_noise:
        return window
    is_depth = window.value_kind == "depth"
    disp = window.reciprocal() if is_depth else window
    valid = disp.valid
    if not valid.any():
        return window
    x = np.array(disp.frames, dtype=np.float64)
    lo, hi = _normalization(x[valid])
    if not hi > lo:
        return window  # constant window: only DC present
    breaks = None
    if cfg.jump_threshold is not None:
        breaks = jump_breaks(_fill_invalid(x, valid), cfg.jump_threshold)
    x = _fill_invalid((x - lo) / (hi - lo), valid)

    t = cfg.inject_timestep
    a, b = cfg.schedule.coefficients(t)
    noise = (np.zeros_like(x) if cfg.null_noise
             else stream(seed, "stage2", window_index).standard_normal(x.shape))
    x_t = q_sample(x, cfg.schedule, t, noise=noise)
    # ideal predictor: the noise that explains x_t given the low-passed clean signal
    eps_hat = (x_t - a * temporal_shrink(x, cfg.cutoff_hz, cfg.alpha, breaks)) / b
    x0_hat = (x_t - b * eps_hat) / a

    out = x0_hat * (hi - lo) + lo
    with np.errstate(invalid="ignore"):
        keep = valid & np.isfinite(out) & (out > 0)
    out = np.where(keep, out, 1.0)
    result = DepthVideo(out, keep, "disparity", disp.unit)
    return result.reciprocal() if is_depth else result


def blend_windows(slices, plan: WindowPlan, blend: bool = True) -> DepthVideo:
    """Join processed windows into one video.

    Within an overlap of ``n`` frames starting at ``a`` the incoming window has
    weight ``(t - a + 0.5) / n``.  With ``blend=False`` the overlap is cut hard
    at its midpoint instead.  A pixel valid in only one contributor takes that
    contributor's value.
    """
    slices = list(slices)
    if len(slices) != len(plan.windows):
        raise StructuralError(f"{len(slices)} slices for {len(plan.windows)} windows")
    for s, (a, e) in zip(slices, plan.windows):
        if s.frame_count != e - a + 1:
            raise StructuralError(f"slice of {s.frame_count} frames for window ({a}, {e})")
    first = slices[0]
    shape = (plan.frame_count, first.height, first.width)
    out = np.zeros(shape)
    valid = np.zeros(shape, dtype=bool)
    covered = -1
    for s, (a, e) in zip(slices, plan.windows):
        vals = np.asarray(s.frames, dtype=np.float64)
        v = s.valid
        n = covered - a + 1
        for t in range(a, e + 1):
            k = t - a
            if t > covered:
                out[t], valid[t] = vals[k], v[k]
                continue
            r = (t - a + 0.5) / n if blend else float(t - a >= n // 2)
            both = valid[t] & v[k]
            # equal contributors pass through untouched, keeping the blend exact
            mixed = np.where(out[t] == vals[k], out[t], (1.0 - r) * out[t] + r * vals[k])
            out[t] = np.where(both, mixed, np.where(v[k], vals[k], out[t]))
            valid[t] |= v[k]
        covered = e
    out = np.where(valid, out, 1.0)
    return DepthVideo(out, valid, first.value_kind, first.unit)


def _run_windows(video: DepthVideo, cfg: DenoiserConfig, seed: int, plan: WindowPlan,
                 threads: int) -> list[DepthVideo]:
    def job(idx):
        a, e = plan.windows[idx]
        return spectral_denoise_window(video.slice(a, e + 1), cfg, seed, idx)

    idx = range(len(plan.windows))
    if threads <= 1 or len(plan.windows) == 1:
        return [job(i) for i in idx]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, idx))


def denoise_video(video, cfg: DenoiserConfig | None = None, seed: int = 0,
                  threads: int = 1) -> tuple[DepthVideo, WindowPlan]:
    """Stage 2 alone: window, denoise, blend."""
    video = check_video(video)
    cfg = cfg or DenoiserConfig()
    plan = plan_windows(video.frame_count, cfg.window_length, cfg.overlap)
    slices = _run_windows(video, cfg, seed, plan, threads)
    return blend_windows(slices, plan, cfg.blend), plan


@dataclass
class TwoStageResult:
    stage1: DepthVideo
    fused: DepthVideo
    track: CameraTrack
    plan: WindowPlan
    alignment: GlobalAlignment
    timings: dict = field(default_factory=dict)

    def manifest(self, cfg: DenoiserConfig, seed: int) -> dict:
        return {"seed": seed, "config": cfg.as_dict(), "window_plan": self.plan.as_dict(),
                "tree": [list(e) for e in self.alignment.tree], "root": self.alignment.root}

    def manifest_json(self, cfg: DenoiserConfig, seed: int) -> str:
        return json.dumps(self.manifest(cfg, seed), indent=2, sort_keys=True) + "\n"


def run_two_stage(pairs: PairGraph, cfg: DenoiserConfig | None = None, seed: int = 0,
                  threads: int = 1, tau: float = 0.0) -> TwoStageResult:
    cfg = cfg or DenoiserConfig()
    t0 = time.perf_counter()
    alignment = align_global(pairs, tau)
    t1 = time.perf_counter()
    fused, plan = denoise_video(alignment.video, cfg, seed, threads)
    t2 = time.perf_counter()
    return TwoStageResult(alignment.video, fused, alignment.track, plan, alignment,
                          {"stage1_s": t1 - t0, "stage2_s": t2 - t1})


# --------------------------------------------------------------------------
# estimators

def _config_from(est) -> DenoiserConfig:
    return DenoiserConfig(cutoff_hz=est.cutoff_hz, alpha=est.alpha,
                          spacing=make_spacing(1000, est.inference_steps, est.spacing_mode),
                          inject_step_index=est.inject_step_index,
                          window_length=est.window_length, overlap=est.overlap, blend=est.blend,
                          jump_threshold=est.jump_threshold)


class SpectralDenoiser(TransformerMixin, BaseEstimator):
    """Stage 2 as a transformer on depth videos (stateless apart from ``seed``)."""

    def __init__(self, cutoff_hz: float = 0.05, alpha: float = 0.02,
                 window_length: int = WINDOW_LENGTH, overlap: int = OVERLAP, blend: bool = True,
                 inference_steps: int = 4, spacing_mode: str = "trailing",
                 inject_step_index: int = 2, jump_threshold: float | None = None,
                 seed: int = 0, threads: int = 1):
        self.cutoff_hz = cutoff_hz
        self.alpha = alpha
        self.window_length = window_length
        self.overlap = overlap
        self.blend = blend
        self.inference_steps = inference_steps
        self.spacing_mode = spacing_mode
        self.inject_step_index = inject_step_index
        self.jump_threshold = jump_threshold
        self.seed = seed
        self.threads = threads

    def fit(self, X=None, y=None):
        self.config_ = _config_from(self)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        out, self.plan_ = denoise_video(X, self.config_, self.seed, self.threads)
        return out


class TwoStageEstimator(BaseEstimator):
    """Global alignment followed by spectral denoising.

    ``fit(graph)`` keeps ``stage1_``, ``fused_``, ``track_`` and ``plan_``;
    ``predict(graph)`` returns the fused video.
    """

    def __init__(self, cutoff_hz: float = 0.05, alpha: float = 0.02,
                 window_length: int = WINDOW_LENGTH, overlap: int = OVERLAP, blend: bool = True,
                 inference_steps: int = 4, spacing_mode: str = "trailing",
                 inject_step_index: int = 2, jump_threshold: float | None = None,
                 tau: float = 0.0, seed: int = 0, threads: int = 1):
        self.cutoff_hz = cutoff_hz
        self.alpha = alpha
        self.window_length = window_length
        self.overlap = overlap
        self.blend = blend
        self.inference_steps = inference_steps
        self.spacing_mode = spacing_mode
        self.inject_step_index = inject_step_index
        self.jump_threshold = jump_threshold
        self.tau = tau
        self.seed = seed
        self.threads = threads

    def fit(self, graph: PairGraph, y=None):
        result = run_two_stage(graph, _config_from(self), self.seed, self.threads, self.tau)
        self.result_ = result
        self.stage1_ = result.stage1
        self.fused_ = result.fused
        self.track_ = result.track
        self.plan_ = result.plan
        return self

    def predict(self, graph: PairGraph) -> DepthVideo:
        return self.fit(graph).fused_
