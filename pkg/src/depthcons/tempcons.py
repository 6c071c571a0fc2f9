"""Temporal consistency of a depth video under known camera motion.

Static points are lifted from frame ``i`` and from its match in frame
``i + delta`` with the ground-truth intrinsics, moved to world coordinates
with the ground-truth poses, and compared by Euclidean distance.  A perfectly
consistent prediction puts both lifts on the same world point.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_int, check_mask, check_video
from .model import CameraTrack
from .synth import bilinear, correspondence_pairs


class NoPairsError(ValueError):
    pass


@dataclass
class TempConsReport:
    """``per_pair`` rows are ``(i, j, mean distance, count)``; skipped pairs have count 0."""

    mean_distance: float
    per_pair: list[tuple[int, int, float, int]]
    delta: int
    skipped_pairs: int = 0
    settings: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "mean_distance": self.mean_distance,
            "delta": self.delta,
            "skipped_pairs": self.skipped_pairs,
            "settings": dict(self.settings),
            "per_pair": [{"i": i, "j": j, "count": c, **({"distance": d} if c else {})}
                         for i, j, d, c in self.per_pair],
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "j", "count", "distance"])
        for i, j, d, c in self.per_pair:
            w.writerow([i, j, c, repr(float(d)) if c else ""])
        w.writerow(["mean", "", sum(c for *_, c in self.per_pair), repr(float(self.mean_distance))])
        return buf.getvalue()


def _lift(depth, u, v, intrinsics, pose):
    fx, fy, cx, cy = intrinsics
    cam = np.stack([(u - cx) / fx * depth, (v - cy) / fy * depth, depth], axis=-1)
    return cam @ pose[:3, :3].T + pose[:3, 3]


def pair_distances(pred, track: CameraTrack, table: np.ndarray) -> np.ndarray:
    """Per-correspondence world distance for rows of one ``(i, j)`` pair.

    Frame ``j`` is sampled by bilinear interpolation of disparity; rows whose
    source pixel or any of the four target pixels is invalid are dropped.
    """
    if table.size == 0:
        return np.empty(0)
    i, j = int(table["i"][0]), int(table["j"][0])
    rows, cols = table["row"], table["col"]
    u, v = table["u"], table["v"]
    H, W = pred.height, pred.width
    ok = pred.valid[i][rows, cols]
    c0 = np.clip(np.floor(u).astype(int), 0, max(W - 2, 0))
    r0 = np.clip(np.floor(v).astype(int), 0, max(H - 2, 0))
    vj = pred.valid[j]
    ok &= (vj[r0, c0] & vj[r0, np.minimum(c0 + 1, W - 1)]
           & vj[np.minimum(r0 + 1, H - 1), c0] & vj[np.minimum(r0 + 1, H - 1), np.minimum(c0 + 1, W - 1)])
    disp_j = np.where(vj, 1.0 / np.where(vj, pred.frames[j], 1.0), 0.0)
    d_i = pred.frames[i][rows, cols].astype(np.float64)
    d_j = 1.0 / bilinear(disp_j, u, v)
    cols_f = cols.astype(np.float64)
    rows_f = rows.astype(np.float64)
    Xi = _lift(d_i[ok], cols_f[ok], rows_f[ok], track.intrinsics[i], track.poses[i])
    Xj = _lift(d_j[ok], u[ok], v[ok], track.intrinsics[j], track.poses[j])
    return np.linalg.norm(Xi - Xj, axis=1)


def temporal_consistency(pred, track: CameraTrack, correspondences: np.ndarray,
                         static_only: bool = True, delta: int = 10, masks=None) -> TempConsReport:
    """Mean world-space distance between matched static points ``delta`` frames apart.

    ``pred`` should already be affine-aligned to ground truth.  With
    ``static_only`` and ``masks`` given, matches whose source pixel is marked
    dynamic are dropped as well.
    """
    pred = check_video(pred, "pred")
    track.check_bound(pred)
    T = pred.frame_count
    delta = check_int(delta, "delta", 1)
    if delta >= T:
        raise NoPairsError(f"delta={delta} leaves no frame pairs in a {T}-frame video")
    dyn = check_mask(masks, pred, "masks")
    corr = np.asarray(correspondences)

    per_pair = []
    total, count, skipped = 0.0, 0, 0
    for i, j in correspondence_pairs(T, delta):
        rows = corr[(corr["i"] == i) & (corr["j"] == j)]
        if static_only and dyn is not None and rows.size:
            rows = rows[~dyn[i][rows["row"], rows["col"]]]
        d = pair_distances(pred, track, rows)
        if d.size == 0:
            skipped += 1
            per_pair.append((i, j, float("nan"), 0))
            continue
        per_pair.append((i, j, float(d.mean()), int(d.size)))
        total += float(d.sum())
        count += int(d.size)
    if count == 0:
        raise NoPairsError("no usable correspondence in any frame pair")
    return TempConsReport(total / count, per_pair, delta, skipped,
                          {"static_only": bool(static_only)})


__all__ = ["TempConsReport", "NoPairsError", "temporal_consistency", "pair_distances"]
