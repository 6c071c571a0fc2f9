"""Affine-invariant alignment and the AbsRel / RMSE / delta metrics.

Alignment fits one scale and one shift for the whole video by least squares
over every jointly valid pixel (the standard video-depth protocol).  A
per-frame variant is kept for diagnostics.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_choice, check_mask, check_same_shape, check_video
from .model import DepthVideo, RegionMasks

DELTA_BASE = 1.25
METRIC_NAMES = ("absrel", "rmse", "delta1", "delta2")


class AlignmentError(ValueError):
    pass


class SingularFitError(AlignmentError):
    """The prediction is constant over the fitted pixels."""


class EmptyOverlapError(AlignmentError):
    """Prediction and ground truth share no valid pixel."""


@dataclass(frozen=True)
class AffineFit:
    scale: float
    shift: float
    valid_pixel_count: int

    def objective(self, x: np.ndarray, y: np.ndarray) -> float:
        r = self.scale * np.ravel(x).astype(np.float64) + self.shift - np.ravel(y).astype(np.float64)
        return float(np.dot(r, r))


def _solve_affine(x: np.ndarray, y: np.ndarray) -> AffineFit:
    n = x.size
    if n == 0:
        raise EmptyOverlapError("no jointly valid pixels")
    x = x.astype(np.longdouble)
    y = y.astype(np.longdouble)
    xm = np.sum(x) / n
    ym = np.sum(y) / n
    dx = x - xm
    sxx = np.sum(dx * dx)
    scale_ref = np.max(np.abs(x)) if n else 0.0
    if n < 2 or sxx <= n * (1e-15 * scale_ref) ** 2:
        raise SingularFitError("prediction is constant over the jointly valid pixels")
    sxy = np.sum(dx * (y - ym))
    s = sxy / sxx
    t = ym - s * xm
    return AffineFit(float(s), float(t), int(n))


def _joint(pred: DepthVideo, gt: DepthVideo, mask=None) -> np.ndarray:
    sel = pred.valid & gt.valid
    if mask is not None:
        sel = sel & mask
    return sel


def fit_affine_shared(pred, gt, mask=None) -> AffineFit:
    """Least-squares ``(s, t)`` minimizing ``sum (s*pred + t - gt)^2`` over all frames."""
    pred, gt = check_video(pred, "pred"), check_video(gt, "gt")
    check_same_shape(pred, gt)
    sel = _joint(pred, gt, check_mask(mask, pred))
    return _solve_affine(pred.frames[sel], gt.frames[sel])


def fit_affine_per_frame(pred, gt, mask=None) -> list[AffineFit]:
    pred, gt = check_video(pred, "pred"), check_video(gt, "gt")
    check_same_shape(pred, gt)
    sel = _joint(pred, gt, check_mask(mask, pred))
    return [_solve_affine(pred.frames[t][sel[t]], gt.frames[t][sel[t]])
            for t in range(pred.frame_count)]


def apply_affine(video: DepthVideo, fit, return_count: bool = False):
    """Map each valid value ``v`` to ``s*v + t``.

    ``fit`` is one AffineFit or a per-frame sequence of them.  Values driven
    to zero or below become invalid; pass ``return_count`` to get how many.
    """
    video = check_video(video)
    fits = [fit] * video.frame_count if isinstance(fit, AffineFit) else list(fit)
    if len(fits) != video.frame_count:
        raise ValueError(f"got {len(fits)} fits for {video.frame_count} frames")
    out = np.array(video.frames, dtype=np.float64)
    valid = video.valid.copy()
    for t, f in enumerate(fits):
        if f.scale == 1.0 and f.shift == 0.0:
            continue
        v = valid[t]
        out[t][v] = f.scale * out[t][v] + f.shift
    with np.errstate(invalid="ignore"):
        dropped = valid & ~(np.isfinite(out) & (out > 0))
    valid &= ~dropped
    aligned = DepthVideo(out.astype(video.frames.dtype, copy=False), valid, video.value_kind, video.unit)
    if return_count:
        return aligned, int(dropped.sum())
    return aligned


# --------------------------------------------------------------------------
# metrics

@dataclass
class MetricReport:
    """Aggregate metrics plus one row per frame.

    ``per_frame`` has shape ``(T, 4)`` with columns absrel, rmse, delta1,
    delta2; rows for frames with no selected pixel are NaN and those frames
    are left out of the aggregate (``excluded_frames`` counts them).
    """

    absrel: float
    rmse: float
    delta1: float
    delta2: float
    per_frame: np.ndarray
    counts: np.ndarray
    excluded_frames: int = 0
    settings: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        rows = []
        for t, row in enumerate(self.per_frame):
            if self.counts[t] == 0:
                rows.append({"frame": t, "count": 0})
            else:
                rows.append({"frame": t, "count": int(self.counts[t]),
                             **{k: float(v) for k, v in zip(METRIC_NAMES, row)}})
        return {
            "absrel": self.absrel, "rmse": self.rmse,
            "delta1": self.delta1, "delta2": self.delta2,
            "excluded_frames": self.excluded_frames,
            "settings": dict(self.settings),
            "per_frame": rows,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "count", *METRIC_NAMES])
        for t, row in enumerate(self.per_frame):
            if self.counts[t] == 0:
                w.writerow([t, 0, "", "", "", ""])
            else:
                w.writerow([t, int(self.counts[t]), *[repr(float(v)) for v in row]])
        w.writerow(["mean", int(self.counts.sum()),
                    *[repr(float(getattr(self, k))) for k in METRIC_NAMES]])
        return buf.getvalue()

    def sequence(self, metric: str) -> np.ndarray:
        """Per-frame values of one metric (``one_minus_delta1`` allowed)."""
        if metric == "one_minus_delta1":
            return 1.0 - self.per_frame[:, 2]
        return self.per_frame[:, METRIC_NAMES.index(metric)].copy()


def compute_metrics(pred_aligned, gt, mask=None, absrel_denominator: str = "gt",
                    rmse_paper_literal: bool = False) -> MetricReport:
    """Per-frame AbsRel, RMSE, delta1 and delta2 and their means over frames.

    ``absrel_denominator="pred"`` divides by the prediction instead of the
    ground truth.  ``rmse_paper_literal`` computes ``sqrt(sum d^2) / N``
    instead of the usual ``sqrt(mean d^2)``.
    """
    pred, gt = check_video(pred_aligned, "pred"), check_video(gt, "gt")
    check_same_shape(pred, gt)
    check_choice(absrel_denominator, "absrel_denominator", ("gt", "pred"))
    sel = _joint(pred, gt, check_mask(mask, pred))

    T = pred.frame_count
    per = np.full((T, 4), np.nan)
    counts = sel.reshape(T, -1).sum(axis=1)
    for t in range(T):
        n = counts[t]
        if n == 0:
            continue
        p = pred.frames[t][sel[t]].astype(np.float64)
        g = gt.frames[t][sel[t]].astype(np.float64)
        diff = g - p
        denom = g if absrel_denominator == "gt" else p
        absrel = np.mean(np.abs(diff) / denom)
        sq = np.sum(diff * diff)
        rmse = np.sqrt(sq) / n if rmse_paper_literal else np.sqrt(sq / n)
        ratio = np.maximum(g / p, p / g)
        per[t] = (absrel, rmse, np.mean(ratio < DELTA_BASE), np.mean(ratio < DELTA_BASE ** 2))

    used = counts > 0
    excluded = int(T - used.sum())
    if excluded:
        warnings.warn(f"{excluded} frame(s) had no selected pixel and were excluded", RuntimeWarning)
    agg = per[used].mean(axis=0) if used.any() else np.full(4, np.nan)
    return MetricReport(*[float(v) for v in agg], per_frame=per, counts=counts,
                        excluded_frames=excluded,
                        settings={"absrel_denominator": absrel_denominator,
                                  "rmse_paper_literal": bool(rmse_paper_literal)})


def region_split_metrics(pred_aligned, gt, masks: RegionMasks, **kw):
    """Reports for the dynamic region, its complement, and the whole frame.

    No re-fit happens per region; ``pred_aligned`` carries the one shared fit.
    """
    pred, gt = check_video(pred_aligned, "pred"), check_video(gt, "gt")
    dyn = check_mask(masks, pred, "masks")
    return (compute_metrics(pred, gt, dyn, **kw),
            compute_metrics(pred, gt, ~dyn, **kw),
            compute_metrics(pred, gt, None, **kw))


class AffineAligner(TransformerMixin, BaseEstimator):
    """Scale-and-shift alignment of a predicted video to ground truth.

    >>> aligner = AffineAligner().fit(pred, gt)
    >>> aligned = aligner.transform(pred)

    With ``per_frame=True`` every frame gets its own fit, and ``transform``
    requires a video with the fitted frame count.
    """

    def __init__(self, per_frame: bool = False, absrel_denominator: str = "gt",
                 rmse_paper_literal: bool = False):
        self.per_frame = per_frame
        self.absrel_denominator = absrel_denominator
        self.rmse_paper_literal = rmse_paper_literal

    def fit(self, X, y):
        X, y = check_video(X, "X"), check_video(y, "y")
        if self.per_frame:
            self.fits_ = fit_affine_per_frame(X, y)
        else:
            self.fits_ = [fit_affine_shared(X, y)]
        self.n_frames_ = X.frame_count
        return self

    @property
    def scale_(self):
        check_is_fitted(self, "fits_")
        return np.array([f.scale for f in self.fits_]) if self.per_frame else self.fits_[0].scale

    @property
    def shift_(self):
        check_is_fitted(self, "fits_")
        return np.array([f.shift for f in self.fits_]) if self.per_frame else self.fits_[0].shift

    def transform(self, X):
        check_is_fitted(self, "fits_")
        X = check_video(X, "X")
        if self.per_frame:
            if X.frame_count != self.n_frames_:
                raise ValueError(f"fitted on {self.n_frames_} frames, got {X.frame_count}")
            return apply_affine(X, self.fits_)
        return apply_affine(X, self.fits_[0])

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).transform(X)

    def report(self, X, y, mask=None) -> MetricReport:
        check_is_fitted(self, "fits_")
        return compute_metrics(self.transform(X), y, mask, self.absrel_denominator,
                               self.rmse_paper_literal)

    def score(self, X, y):
        """Negative AbsRel after alignment (higher is better)."""
        return -self.report(X, y).absrel
