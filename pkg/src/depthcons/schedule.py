"""Discrete diffusion schedule arithmetic.

Timesteps are 1-based (``t = 1 .. train_steps``) to match the usual
``alpha_bar_t = prod_{s <= t} (1 - beta_s)`` notation.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from ._validation import check_choice, check_int
from .model import DepthVideo
from .rng import stream

SCHEDULE_KINDS = ("linear", "scaled_linear")
SPACING_MODES = ("leading", "trailing")

# Stable-Video-Diffusion style defaults
BETA_START = 0.00085
BETA_END = 0.012
TRAIN_STEPS = 1000


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScheduleTable:
    beta: np.ndarray
    kind: str = "linear"

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        if b.size < 1 or np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("every beta must lie strictly between 0 and 1")
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)
        alpha = 1.0 - b
        alpha_bar = np.cumprod(alpha)
        for name, arr in (("alpha", alpha), ("alpha_bar", alpha_bar),
                          ("snr_values", alpha_bar / (1.0 - alpha_bar))):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def train_steps(self) -> int:
        return self.beta.size

    def _index(self, t: int) -> int:
        return check_int(t, "t", 1, self.train_steps) - 1

    def alpha_bar_at(self, t: int) -> float:
        return float(self.alpha_bar[self._index(t)])

    def coefficients(self, t: int) -> tuple[float, float]:
        """``(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t))``."""
        ab = self.alpha_bar_at(t)
        return float(np.sqrt(ab)), float(np.sqrt(1.0 - ab))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "beta", "alpha_bar", "snr"])
        for i in range(self.train_steps):
            w.writerow([i + 1, repr(float(self.beta[i])), repr(float(self.alpha_bar[i])),
                        repr(float(self.snr_values[i]))])
        return buf.getvalue()


def build_schedule(kind: str = "linear", beta_start: float = BETA_START,
                   beta_end: float = BETA_END, train_steps: int = TRAIN_STEPS) -> ScheduleTable:
    """linear interpolates beta; scaled_linear interpolates sqrt(beta)."""
    check_choice(kind, "kind", SCHEDULE_KINDS)
    train_steps = check_int(train_steps, "train_steps", 1)
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if kind == "linear":
        beta = np.linspace(beta_start, beta_end, train_steps)
    else:
        beta = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), train_steps) ** 2
    return ScheduleTable(beta, kind)


def snr(table: ScheduleTable, t: int) -> float:
    return float(table.snr_values[table._index(t)])


@dataclass(frozen=True)
class TimestepSpacing:
    train_steps: int
    mode: str
    timesteps: tuple[int, ...]

    @property
    def inference_steps(self) -> int:
        return len(self.timesteps)

    def to_json(self) -> str:
        return json.dumps({"train_steps": self.train_steps, "mode": self.mode,
                           "timesteps": list(self.timesteps)}, indent=2, sort_keys=True) + "\n"


def make_spacing(train_steps: int, n: int, mode: str = "trailing") -> TimestepSpacing:
    """Inference timesteps, largest first.

    trailing: ``T - i * (T // N)``, so the first step is ``T`` itself.
    leading:  ``(N - 1 - i) * (T // N) + 1``, ending at 1 and never reaching
    ``T`` when ``N < T``.
    """
    train_steps = check_int(train_steps, "train_steps", 1)
    n = check_int(n, "n", 1, train_steps)
    check_choice(mode, "mode", SPACING_MODES)
    step = train_steps // n
    if mode == "trailing":
        ts = [train_steps - i * step for i in range(n)]
    else:
        ts = [(n - 1 - i) * step + 1 for i in range(n)]
    return TimestepSpacing(train_steps, mode, tuple(ts))


def q_sample(x0, table: ScheduleTable, t: int, noise=None, seed: int | None = None,
             stream_ids=()) -> np.ndarray:
    """``sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise``.

    ``noise`` defaults to a standard normal field drawn from ``stream(seed, ...)``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    a, b = table.coefficients(t)
    if noise is None:
        if seed is None:
            raise ValueError("pass either noise or seed")
        noise = stream(seed, "q_sample", *stream_ids).standard_normal(x0.shape)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {noise.shape} does not match signal {x0.shape}")
    return a * x0 + b * noise


def _minmax(video: DepthVideo) -> np.ndarray:
    v = video.frames[video.valid].astype(np.float64)
    lo, hi = v.min(), v.max()
    if not hi > lo:
        raise NormalizationError("video is constant; cannot normalize to [0, 1]")
    return (video.frames.astype(np.float64) - lo) / (hi - lo)


def mean_shift_diagnostic(pred: DepthVideo, gt: DepthVideo) -> np.ndarray:
    """Per-frame mean of each video after whole-video min-max normalization.

    Returns a ``(T, 2)`` array of ``(pred_mean, gt_mean)``.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    out = np.empty((pred.frame_count, 2))
    for col, video in enumerate((pred, gt)):
        norm = _minmax(video)
        for t in range(video.frame_count):
            out[t, col] = norm[t][video.valid[t]].mean()
    return out
