"""Synthetic scenes, ground-truth rendering and surrogate estimators.

Scenes are planes, spheres and boxes, traced analytically at pixel centers.
Camera and object motion are smooth closed-form functions of the frame index
(constant velocity plus a sinusoid), so ground-truth trajectories are
band-limited apart from occlusion edges.

Rays use the camera-frame direction ``K^-1 (u, v, 1)``, whose z component is
1, so the ray parameter at a hit is the depth itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_choice, check_int, check_mask, check_video
from .model import CameraTrack, DepthVideo, RegionMasks
from .registration import PairGraph, PairView, PairwisePrediction, enumerate_pairs
from .rng import stream

SURROGATE_KINDS = ("stereo_jitter", "window_drift", "gaussian_pixel")
VISIBILITY_FRACTION = 0.95
CORR_DTYPE = np.dtype([("i", "<i4"), ("j", "<i4"), ("row", "<i4"), ("col", "<i4"),
                       ("u", "<f8"), ("v", "<f8")])
_NO_HIT = -1


class SceneError(ValueError):
    """The scene description is invalid or violates the visibility rule."""


def euler_rotation(deg) -> np.ndarray:
    """``Rz @ Ry @ Rx`` from ``(x, y, z)`` angles in degrees."""
    ax, ay, az = np.radians(np.asarray(deg, dtype=np.float64))
    cx, sx, cy, sy, cz, sz = np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay), np.cos(az), np.sin(az)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def look_at(position, target) -> np.ndarray:
    """Camera-to-world rotation with +z toward ``target`` and +y toward world +y."""
    z = np.asarray(target, np.float64) - np.asarray(position, np.float64)
    z /= np.linalg.norm(z)
    x = np.cross([0.0, 1.0, 0.0], z)
    n = np.linalg.norm(x)
    if n < 1e-9:
        raise SceneError("look_at direction is parallel to the vertical axis")
    x /= n
    return np.stack([x, np.cross(z, x), z], axis=1)


def _vec(v, name, n=3) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if a.size != n or not np.all(np.isfinite(a)):
        raise SceneError(f"{name} must be {n} finite numbers, got {v!r}")
    return a


@dataclass(frozen=True, eq=False)
class Motion:
    """``p(t) = start + velocity * t + amplitude * sin(2 pi t / period + phase)``."""

    start: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    amplitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    period: float = 1.0
    phase: float = 0.0

    def __call__(self, t: float) -> np.ndarray:
        return (self.start + self.velocity * t
                + self.amplitude * np.sin(2 * np.pi * t / self.period + self.phase))

    @classmethod
    def from_dict(cls, d: dict, key: str) -> "Motion":
        if isinstance(d, (list, tuple)):
            return cls(_vec(d, key))
        period = float(d.get("period", 1.0))
        if not period > 0:
            raise SceneError(f"{key}.period must be positive")
        return cls(_vec(d.get("start", d.get("position", [0, 0, 0])), f"{key}.start"),
                   _vec(d.get("velocity", [0, 0, 0]), f"{key}.velocity"),
                   _vec(d.get("amplitude", [0, 0, 0]), f"{key}.amplitude"),
                   period, float(d.get("phase", 0.0)))


@dataclass(frozen=True, eq=False)
class Primitive:
    """A plane (``point``, ``normal``), sphere (``radius``) or box (``half_extents``).

    ``center`` is a Motion; static primitives simply have zero velocity and
    amplitude.  Boxes rotate as ``rotation_deg + angular_velocity_deg * t``.
    """

    kind: str
    center: Motion
    radius: float = 0.0
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -1.0]))
    half_extents: np.ndarray = field(default_factory=lambda: np.ones(3))
    rotation_deg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity_deg: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def from_dict(cls, d: dict, where: str) -> "Primitive":
        kind = d.get("type")
        if kind not in ("plane", "sphere", "box"):
            raise SceneError(f"{where}.type must be plane, sphere or box, got {kind!r}")
        key = "point" if kind == "plane" else "center"
        if key not in d and "motion" not in d:
            raise SceneError(f"{where} needs '{key}'")
        center = Motion.from_dict(d.get("motion", d.get(key)), f"{where}.{key}")
        kw = {}
        if kind == "plane":
            n = _vec(d.get("normal", [0, 0, -1]), f"{where}.normal")
            if np.linalg.norm(n) == 0:
                raise SceneError(f"{where}.normal must be non-zero")
            kw["normal"] = n / np.linalg.norm(n)
        elif kind == "sphere":
            r = float(d.get("radius", 0))
            if not r > 0:
                raise SceneError(f"{where}.radius must be positive")
            kw["radius"] = r
        else:
            he = _vec(d.get("half_extents", [0.5, 0.5, 0.5]), f"{where}.half_extents")
            if np.any(he <= 0):
                raise SceneError(f"{where}.half_extents must be positive")
            kw["half_extents"] = he
            kw["rotation_deg"] = _vec(d.get("rotation_deg", [0, 0, 0]), f"{where}.rotation_deg")
            kw["angular_velocity_deg"] = _vec(d.get("angular_velocity_deg", [0, 0, 0]),
                                              f"{where}.angular_velocity_deg")
        return cls(kind, center, **kw)

    def intersect(self, origin: np.ndarray, dirs: np.ndarray, t: float) -> np.ndarray:
        """Ray parameter of the nearest forward hit per ray, ``inf`` if none."""
        c = self.center(t)
        s = np.full(dirs.shape[0], np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "plane":
                denom = dirs @ self.normal
                hit = (c - origin) @ self.normal / denom
                ok = (np.abs(denom) > 1e-12) & (hit > 0)
                s[ok] = hit[ok]
            elif self.kind == "sphere":
                oc = origin - c
                A = np.sum(dirs * dirs, axis=1)
                B = 2.0 * dirs @ oc
                C = oc @ oc - self.radius ** 2
                disc = B * B - 4 * A * C
                root = np.sqrt(np.maximum(disc, 0.0))
                near = (-B - root) / (2 * A)
                far = (-B + root) / (2 * A)
                pick = np.where(near > 0, near, far)
                ok = (disc >= 0) & (pick > 0)
                s[ok] = pick[ok]
            else:
                R = euler_rotation(self.rotation_deg + self.angular_velocity_deg * t)
                o = R.T @ (origin - c)
                d = dirs @ R
                t1 = (-self.half_extents - o) / d
                t2 = (self.half_extents - o) / d
                t_near = np.max(np.minimum(t1, t2), axis=1)
                t_far = np.min(np.maximum(t1, t2), axis=1)
                pick = np.where(t_near > 0, t_near, t_far)
                ok = (t_near <= t_far) & (pick > 0) & np.isfinite(pick)
                s[ok] = pick[ok]
        return s


@dataclass(frozen=True, eq=False)
class CameraPath:
    motion: Motion
    rotation_deg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity_deg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    look_at: np.ndarray | None = None

    def pose(self, t: float) -> np.ndarray:
        c = self.motion(t)
        if self.look_at is not None:
            R = look_at(c, self.look_at)
        else:
            R = euler_rotation(self.rotation_deg + self.angular_velocity_deg * t)
        P = np.eye(4)
        P[:3, :3] = R
        P[:3, 3] = c
        return P

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPath":
        motion = Motion.from_dict({"start": d.get("position", [0, 0, 0]),
                                   "velocity": d.get("velocity", [0, 0, 0]),
                                   "amplitude": d.get("wobble", {}).get("amplitude", [0, 0, 0]),
                                   "period": d.get("wobble", {}).get("period", 1.0),
                                   "phase": d.get("wobble", {}).get("phase", 0.0)}, "camera")
        target = d.get("look_at")
        return cls(motion, _vec(d.get("rotation_deg", [0, 0, 0]), "camera.rotation_deg"),
                   _vec(d.get("angular_velocity_deg", [0, 0, 0]), "camera.angular_velocity_deg"),
                   None if target is None else _vec(target, "camera.look_at"))


@dataclass(frozen=True, eq=False)
class SceneSpec:
    width: int
    height: int
    frame_count: int
    intrinsics: tuple[float, float, float, float]
    camera: CameraPath
    static: tuple[Primitive, ...] = ()
    dynamic: tuple[Primitive, ...] = ()
    fps: float = 30.0
    seed: int = 0
    corr_delta: int = 10

    def __post_init__(self):
        for name in ("width", "height", "frame_count"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise SceneError(f"{name} must be a positive integer, got {v!r}")
        fx, fy, cx, cy = self.intrinsics
        if not (fx > 0 and fy > 0 and 0 <= cx < self.width and 0 <= cy < self.height):
            raise SceneError(f"invalid intrinsics {self.intrinsics}")
        if not self.fps > 0:
            raise SceneError("fps must be positive")
        if not self.static and not self.dynamic:
            raise SceneError("scene has no primitives")
        if not isinstance(self.corr_delta, int) or self.corr_delta < 1:
            raise SceneError("corr_delta must be a positive integer")

    @property
    def primitives(self) -> tuple[Primitive, ...]:
        return tuple(self.static) + tuple(self.dynamic)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        try:
            W, H = d["width"], d["height"]
            T = d["frame_count"]
        except KeyError as exc:
            raise SceneError(f"scene is missing field {exc.args[0]!r}") from None
        intr = d.get("intrinsics", {})
        f = float(intr.get("fx", 0.9 * W)) if isinstance(W, int) else 1.0
        K = (f, float(intr.get("fy", f)),
             float(intr.get("cx", (W - 1) / 2 if isinstance(W, int) else 0)),
             float(intr.get("cy", (H - 1) / 2 if isinstance(H, int) else 0)))
        static = tuple(Primitive.from_dict(p, f"static[{k}]") for k, p in enumerate(d.get("static", [])))
        dynamic = tuple(Primitive.from_dict(p, f"dynamic[{k}]") for k, p in enumerate(d.get("dynamic", [])))
        return cls(W, H, T, K, CameraPath.from_dict(d.get("camera", {})), static, dynamic,
                   float(d.get("fps", 30.0)), int(d.get("seed", 0)), d.get("corr_delta", 10))

    @classmethod
    def load(cls, path) -> "SceneSpec":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SceneError(f"{path}: malformed JSON ({exc})") from None
        return cls.from_dict(doc.get("scene", doc))

    def track(self) -> CameraTrack:
        poses = np.stack([self.camera.pose(t) for t in range(self.frame_count)])
        return CameraTrack(np.tile(np.asarray(self.intrinsics, np.float64), (self.frame_count, 1)), poses)


def camera_rays(intrinsics, width: int, height: int) -> np.ndarray:
    """``(H*W, 3)`` camera-frame ray directions with unit z, row-major."""
    fx, fy, cx, cy = intrinsics
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([(u - cx) / fx, (v - cy) / fy, np.ones_like(u)], axis=-1).reshape(-1, 3)


def _check_visibility(spec: SceneSpec, track: CameraTrack):
    T = spec.frame_count
    for k, prim in enumerate(spec.primitives):
        front = 0
        for t in range(T):
            P = track.poses[t]
            z = (P[:3, :3].T @ (prim.center(t) - P[:3, 3]))[2]
            front += z > 0
        if front < VISIBILITY_FRACTION * T:
            raise SceneError(f"primitive {k} ({prim.kind}) is in front of the camera in only "
                             f"{front} of {T} frames")


@dataclass
class GroundTruth:
    depth: DepthVideo
    track: CameraTrack
    masks: RegionMasks
    correspondences: np.ndarray
    hit_ids: np.ndarray

    def __iter__(self):
        # unpacks as (depth, track, masks, correspondences)
        return iter((self.depth, self.track, self.masks, self.correspondences))


def render_frame(spec: SceneSpec, track: CameraTrack, t: int):
    """Depth and primitive id (``-1`` = no hit) for one frame."""
    P = track.poses[t]
    dirs_cam = camera_rays(track.intrinsics[t], spec.width, spec.height)
    dirs = dirs_cam @ P[:3, :3].T
    origin = P[:3, 3]
    best = np.full(dirs.shape[0], np.inf)
    ids = np.full(dirs.shape[0], _NO_HIT, dtype=np.int32)
    for k, prim in enumerate(spec.primitives):
        s = prim.intersect(origin, dirs, t)
        closer = s < best
        best[closer] = s[closer]
        ids[closer] = k
    shape = (spec.height, spec.width)
    return best.reshape(shape), ids.reshape(shape)


def bilinear(grid: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear sample of ``grid[row, col]`` at ``(u = col, v = row)``.

    Callers keep ``0 <= u <= W-1`` and ``0 <= v <= H-1``.
    """
    H, W = grid.shape
    c0 = np.clip(np.floor(u).astype(int), 0, max(W - 2, 0))
    r0 = np.clip(np.floor(v).astype(int), 0, max(H - 2, 0))
    c1 = np.minimum(c0 + 1, W - 1)
    r1 = np.minimum(r0 + 1, H - 1)
    fu, fv = u - c0, v - r0
    return ((1 - fv) * ((1 - fu) * grid[r0, c0] + fu * grid[r0, c1])
            + fv * ((1 - fu) * grid[r1, c0] + fu * grid[r1, c1]))


def _neighbors_ok(ok: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    H, W = ok.shape
    c0 = np.clip(np.floor(u).astype(int), 0, max(W - 2, 0))
    r0 = np.clip(np.floor(v).astype(int), 0, max(H - 2, 0))
    c1 = np.minimum(c0 + 1, W - 1)
    r1 = np.minimum(r0 + 1, H - 1)
    return ok[r0, c0] & ok[r0, c1] & ok[r1, c0] & ok[r1, c1]


def correspondence_pairs(T: int, delta: int) -> list[tuple[int, int]]:
    """``(i, i + delta)`` for ``i = 0, delta, 2 delta, ...``."""
    delta = check_int(delta, "delta", 1)
    return [(i, i + delta) for i in range(0, T - delta, delta)]


def static_correspondences(depth: np.ndarray, ids: np.ndarray, dynamic_ids: set,
                           track: CameraTrack, i: int, j: int) -> np.ndarray:
    """Static pixels of frame ``i`` that are visible in frame ``j``.

    A match is kept only when the four pixels around its subpixel position in
    frame ``j`` all see the same static primitive and bilinear interpolation
    of disparity there reproduces the projected point's disparity to 1e-6
    relative, which rejects occluded points and curved neighborhoods.
    """
    H, W = depth.shape[1:]
    Ki, Kj = track.intrinsics[i], track.intrinsics[j]
    rays = camera_rays(Ki, W, H).reshape(H, W, 3)
    static_i = (ids[i] != _NO_HIT) & ~np.isin(ids[i], list(dynamic_ids)) & np.isfinite(depth[i])
    rows, cols = np.nonzero(static_i)
    X = rays[rows, cols] * depth[i][rows, cols][:, None]
    Pi, Pj = track.poses[i], track.poses[j]
    world = X @ Pi[:3, :3].T + Pi[:3, 3]
    cam = (world - Pj[:3, 3]) @ Pj[:3, :3]
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = Kj[0] * cam[:, 0] / z + Kj[2]
        v = Kj[1] * cam[:, 1] / z + Kj[3]
    inside = (z > 0) & (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    rows, cols, u, v, z = rows[inside], cols[inside], u[inside], v[inside], z[inside]
    src_id = ids[i][rows, cols]
    keep = np.ones(rows.size, dtype=bool)
    for pid in np.unique(src_id):
        sel = src_id == pid
        same = ids[j] == pid
        keep[sel] &= _neighbors_ok(same, u[sel], v[sel])
    with np.errstate(divide="ignore"):
        disp_j = np.where(np.isfinite(depth[j]), 1.0 / depth[j], 0.0)
    sampled = bilinear(disp_j, u, v)
    keep &= np.abs(sampled * z - 1.0) <= 1e-6
    out = np.empty(int(keep.sum()), dtype=CORR_DTYPE)
    out["i"], out["j"] = i, j
    out["row"], out["col"] = rows[keep], cols[keep]
    out["u"], out["v"] = u[keep], v[keep]
    return out


def render_gt(spec: SceneSpec, delta: int | None = None) -> GroundTruth:
    """Ground-truth depth, camera track, dynamic masks and static correspondences."""
    track = spec.track()
    _check_visibility(spec, track)
    T = spec.frame_count
    depth = np.empty((T, spec.height, spec.width))
    ids = np.empty((T, spec.height, spec.width), dtype=np.int32)
    for t in range(T):
        depth[t], ids[t] = render_frame(spec, track, t)
    n_static = len(spec.static)
    dynamic_ids = set(range(n_static, n_static + len(spec.dynamic)))
    dyn = np.isin(ids, list(dynamic_ids))
    valid = ids != _NO_HIT
    video = DepthVideo(np.where(valid, depth, 1.0), valid)
    delta = spec.corr_delta if delta is None else delta
    tables = [static_correspondences(depth, ids, dynamic_ids, track, i, j)
              for i, j in correspondence_pairs(T, delta)] if delta < T else []
    corr = np.concatenate(tables) if tables else np.empty(0, dtype=CORR_DTYPE)
    return GroundTruth(video, track, RegionMasks(dyn), corr, ids)


# --------------------------------------------------------------------------
# correspondence table I/O

def write_correspondences(table: np.ndarray, path) -> None:
    """Fixed 32-byte little-endian records ``i, j, row, col (int32), u, v (float64)``."""
    Path(path).write_bytes(np.ascontiguousarray(table, dtype=CORR_DTYPE).tobytes())


def read_correspondences(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % CORR_DTYPE.itemsize:
        raise ValueError(f"{path}: size {len(raw)} is not a multiple of {CORR_DTYPE.itemsize}")
    return np.frombuffer(raw, dtype=CORR_DTYPE).copy()


# --------------------------------------------------------------------------
# surrogate estimators

@dataclass(frozen=True)
class EstimatorSurrogateSpec:
    """Controlled corruption of ground truth.

    stereo_jitter multiplies every frame by ``1 + a * g * j(t)`` where ``j`` is
    a unit-variance random signal with energy only in ``jitter_band`` (cycles
    per frame) and ``g`` is ``dynamic_gain`` on moving objects, 1 elsewhere.
    window_drift multiplies each block of ``drift_window`` frames by
    ``1 + o_w`` with ``|o_w|`` in ``[a/2, a]`` and alternating sign.
    gaussian_pixel multiplies each pixel by ``1 + sigma * N(0, 1)``.
    """

    kind: str = "stereo_jitter"
    jitter_amplitude: float = 0.0
    jitter_band: tuple[float, float] = (0.1, 0.5)
    drift_amplitude: float = 0.0
    drift_window: int = 110
    noise_sigma: float = 0.0
    dynamic_gain: float = 2.0
    seed: int = 0

    def __post_init__(self):
        check_choice(self.kind, "kind", SURROGATE_KINDS)
        for name in ("jitter_amplitude", "drift_amplitude", "noise_sigma", "dynamic_gain"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")
        lo, hi = self.jitter_band
        if not 0 < lo <= hi <= 0.5:
            raise ValueError(f"jitter_band must satisfy 0 < low <= high <= 0.5, got {self.jitter_band}")
        object.__setattr__(self, "jitter_band", (float(lo), float(hi)))
        check_int(self.drift_window, "drift_window", 1)

    @property
    def amplitude(self) -> float:
        return {"stereo_jitter": self.jitter_amplitude, "window_drift": self.drift_amplitude,
                "gaussian_pixel": self.noise_sigma}[self.kind]

    def with_amplitude(self, a: float) -> "EstimatorSurrogateSpec":
        key = {"stereo_jitter": "jitter_amplitude", "window_drift": "drift_amplitude",
               "gaussian_pixel": "noise_sigma"}[self.kind]
        return EstimatorSurrogateSpec(**{**self.as_dict(), key: float(a)})

    def as_dict(self) -> dict:
        return {"kind": self.kind, "jitter_amplitude": self.jitter_amplitude,
                "jitter_band": list(self.jitter_band), "drift_amplitude": self.drift_amplitude,
                "drift_window": self.drift_window, "noise_sigma": self.noise_sigma,
                "dynamic_gain": self.dynamic_gain, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorSurrogateSpec":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        if "jitter_band" in known:
            known["jitter_band"] = tuple(known["jitter_band"])
        return cls(**known)


def band_limited_signal(T: int, band: tuple[float, float], rng: np.random.Generator) -> np.ndarray:
    """Zero-mean, unit-std random signal whose spectrum lies inside ``band``."""
    k = np.arange(T // 2 + 1)
    f = k / T
    inside = (f >= band[0]) & (f <= band[1]) & (k > 0)
    if not inside.any():
        raise ValueError(f"no frequency bin of a {T}-frame signal falls in {band}")
    coef = np.zeros(k.size, dtype=np.complex128)
    n = int(inside.sum())
    coef[inside] = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    if T % 2 == 0:
        coef[-1] = coef[-1].real
    x = np.fft.irfft(coef, n=T)
    return x / x.std()


def drift_offsets(T: int, window: int, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    """Per-frame relative offset, constant within each block of ``window`` frames."""
    n_windows = -(-T // window)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    mags = rng.uniform(0.5, 1.0, n_windows)
    offsets = amplitude * mags * sign * (-1.0) ** np.arange(n_windows)
    return np.repeat(offsets, window)[:T]


def corruption_factors(shape, dynamic: np.ndarray | None, spec: EstimatorSurrogateSpec) -> np.ndarray:
    """Multiplicative factors (all > 0) that ``corrupt`` applies."""
    T = shape[0]
    if spec.kind == "stereo_jitter":
        j = band_limited_signal(T, spec.jitter_band, stream(spec.seed, "stereo_jitter"))
        gain = np.ones(shape) if dynamic is None else np.where(dynamic, spec.dynamic_gain, 1.0)
        f = 1.0 + spec.jitter_amplitude * gain * j[:, None, None]
    elif spec.kind == "window_drift":
        o = drift_offsets(T, spec.drift_window, spec.drift_amplitude, stream(spec.seed, "window_drift"))
        f = np.broadcast_to(1.0 + o[:, None, None], shape).copy()
    else:
        f = np.empty(shape)
        for t in range(T):
            f[t] = 1.0 + spec.noise_sigma * stream(spec.seed, "gaussian_pixel", t).standard_normal(shape[1:])
    return np.maximum(f, 1e-3)


def corrupt(gt, masks, spec: EstimatorSurrogateSpec) -> DepthVideo:
    """Surrogate estimator output: ground truth times a positive factor field."""
    gt = check_video(gt, "gt")
    dyn = check_mask(masks, gt, "masks")
    if spec.amplitude == 0:
        return gt
    f = corruption_factors(gt.shape, dyn, spec)
    out = np.where(gt.valid, gt.frames * f, gt.frames)
    return DepthVideo(out, gt.valid, gt.value_kind, gt.unit)


# --------------------------------------------------------------------------
# pairwise pointmaps

def backproject(depth: np.ndarray, valid: np.ndarray, intrinsics) -> np.ndarray:
    """``(H, W, 3)`` camera-frame points; invalid pixels are NaN."""
    H, W = depth.shape
    pts = camera_rays(intrinsics, W, H).reshape(H, W, 3) * np.asarray(depth, np.float64)[..., None]
    pts[~valid] = np.nan
    return pts


def make_pairwise(gt, track: CameraTrack, masks, n: int = 2,
                  noise: EstimatorSurrogateSpec | None = None, pair_scale_jitter: float = 0.0,
                  seed: int = 0, symmetric: bool = True, dtype=np.float64,
                  edge_weight: str = "mean") -> PairGraph:
    """Pairwise pointmap graph from ground truth.

    Frames are corrupted once by ``noise`` (so every pair sees the same
    corrupted frame), lifted with the ground-truth intrinsics and moved into
    the reference camera with the ground-truth relative pose.  Each view is
    then scaled by its own factor drawn from ``U(1 - r, 1 + r)``,
    ``r = pair_scale_jitter``.  Confidence is zero on dynamic or invalid
    pixels and uniform in ``(0.5, 1]`` elsewhere.
    """
    gt = check_video(gt, "gt")
    dyn = check_mask(masks, gt, "masks")
    if dyn is None:
        dyn = np.zeros(gt.shape, dtype=bool)
    track.check_bound(gt)
    if not 0 <= pair_scale_jitter < 1:
        raise ValueError("pair_scale_jitter must lie in [0, 1)")
    pred = corrupt(gt, dyn, noise) if noise is not None else gt
    T = gt.frame_count
    lifted = [backproject(pred.frames[t], pred.valid[t], track.intrinsics[t]) for t in range(T)]
    P = track.poses

    def in_camera(f, ref):
        R = P[ref, :3, :3].T @ P[f, :3, :3]
        c = P[ref, :3, :3].T @ (P[f, :3, 3] - P[ref, :3, 3])
        return lifted[f] @ R.T + c

    def confidence(f, i, j, view):
        u = stream(seed, "confidence", i, j, view, f).random(gt.shape[1:])
        c = 1.0 - 0.5 * u
        return np.where(dyn[f] | ~pred.valid[f], 0.0, c)

    pairs = []
    for i, j in enumerate_pairs(T, n):
        views = []
        for view, ref in enumerate((i, j) if symmetric else (i,)):
            s = 1.0
            if pair_scale_jitter > 0:
                s = stream(seed, "pair_scale", i, j, view).uniform(1 - pair_scale_jitter,
                                                                    1 + pair_scale_jitter)
            views.append(PairView(ref, (s * in_camera(i, ref)).astype(dtype),
                                  (s * in_camera(j, ref)).astype(dtype),
                                  confidence(i, i, j, view).astype(dtype),
                                  confidence(j, i, j, view).astype(dtype)))
        pairs.append(PairwisePrediction(i, j, views[0], views[1] if symmetric else None))
    cx, cy = track.intrinsics[0, 2:]
    return PairGraph(T, gt.width, gt.height, pairs, (float(cx), float(cy)), edge_weight)


def data_path(name: str) -> Path:
    """Path of a bundled data file such as ``scenes/plane_orbit.json``."""
    return Path(__file__).parent / "data" / name


def resolve_spec_path(name) -> Path:
    p = Path(name)
    if p.exists():
        return p
    for cand in (data_path(str(name)), data_path(str(name) + ".json")):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"no such spec file: {name}")


__all__ = [
    "SceneSpec", "SceneError", "Primitive", "Motion", "CameraPath", "EstimatorSurrogateSpec",
    "GroundTruth", "render_gt", "render_frame", "corrupt", "corruption_factors", "make_pairwise",
    "band_limited_signal", "drift_offsets", "static_correspondences", "correspondence_pairs",
    "write_correspondences", "read_correspondences", "bilinear", "backproject", "camera_rays",
    "euler_rotation", "look_at", "CORR_DTYPE", "data_path", "resolve_spec_path",
]
