"""Depth videos, camera tracks, region masks and the VDC on-disk container.

A VDC container is a directory::

    manifest.json          UTF-8 JSON record (see ``write_container``)
    depth_000000.f32       little-endian float32, row-major, top-left origin
    valid_000000.u8        validity grid, 0 / 255      (when has_validity)
    mask_000000.u8         dynamic-region grid, 0 / 255 (when has_masks)
    conf_000000.f32        per-pixel confidence        (when has_confidence)

Camera poses are camera-to-world, right-handed, +x right, +y down, +z
forward, serialized as 16 row-major doubles.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_NAME = "vdc"
FORMAT_VERSION = "1.0"
VALUE_KINDS = ("depth", "disparity")

_ORTHO_TOL = 1e-9


class DepthModelError(ValueError):
    """Base class for structural problems with depth data."""


class StructuralError(DepthModelError):
    """Components of a video do not fit together."""


class LoadError(DepthModelError):
    """A container on disk could not be loaded."""

    def __init__(self, message: str, frame: int | None = None):
        super().__init__(message)
        self.frame = frame


class VersionError(LoadError):
    """The container was written by an incompatible format version."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DepthVideo:
    """A ``(T, H, W)`` stack of depth (or disparity) frames with validity.

    If ``valid`` is omitted, every finite strictly positive value is valid.
    Values at invalid pixels are kept verbatim but never read by any metric.
    """

    frames: np.ndarray
    valid: np.ndarray | None = None
    value_kind: str = "depth"
    unit: str = "m"

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim == 2:
            frames = frames[None]
        if frames.ndim != 3 or min(frames.shape) < 1:
            raise StructuralError(f"frames must have shape (T, H, W), got {frames.shape}")
        if not np.issubdtype(frames.dtype, np.floating):
            frames = frames.astype(np.float64)
        if self.valid is None:
            with np.errstate(invalid="ignore"):
                valid = np.isfinite(frames) & (frames > 0)
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.ndim == 2:
                valid = valid[None]
            if valid.shape != frames.shape:
                raise StructuralError(
                    f"validity shape {valid.shape} does not match frames {frames.shape}")
            vals = frames[valid]
            if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
                bad = np.argwhere(valid & ~(np.isfinite(frames) & (frames > 0)))[0]
                raise StructuralError(
                    f"valid pixel at frame {bad[0]} ({bad[1]}, {bad[2]}) is not finite and positive")
        if self.value_kind not in VALUE_KINDS:
            raise StructuralError(f"value_kind must be one of {VALUE_KINDS}")
        object.__setattr__(self, "frames", _frozen(frames))
        object.__setattr__(self, "valid", _frozen(valid))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames.shape

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def __len__(self):
        return self.frame_count

    def replace(self, frames=None, valid=None, **kw) -> "DepthVideo":
        return DepthVideo(
            self.frames if frames is None else frames,
            self.valid if valid is None else valid,
            kw.get("value_kind", self.value_kind),
            kw.get("unit", self.unit),
        )

    def slice(self, start: int, stop: int) -> "DepthVideo":
        """Frames ``start`` (inclusive) to ``stop`` (exclusive)."""
        return DepthVideo(self.frames[start:stop], self.valid[start:stop],
                          self.value_kind, self.unit)

    def reciprocal(self) -> "DepthVideo":
        """Depth <-> disparity on valid pixels; invalid values untouched."""
        out = np.array(self.frames, dtype=np.float64)
        out[self.valid] = 1.0 / out[self.valid]
        kind = "disparity" if self.value_kind == "depth" else "depth"
        unit = "1/" + self.unit if not self.unit.startswith("1/") else self.unit[2:]
        return DepthVideo(out.astype(self.frames.dtype), self.valid, kind, unit)

    def masked(self, keep: np.ndarray) -> "DepthVideo":
        """Same values with validity restricted to ``keep``."""
        return self.replace(valid=self.valid & np.broadcast_to(keep, self.shape))


def _check_rotation(R: np.ndarray, where: str):
    if not np.allclose(R.T @ R, np.eye(3), atol=_ORTHO_TOL, rtol=0):
        raise StructuralError(f"{where}: rotation block is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
        raise StructuralError(f"{where}: rotation determinant is not +1")


@dataclass(frozen=True, eq=False)
class CameraTrack:
    """Per-frame pinhole intrinsics ``(fx, fy, cx, cy)`` and camera-to-world poses."""

    intrinsics: np.ndarray
    poses: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64)
        P = np.asarray(self.poses, dtype=np.float64)
        if K.ndim == 1:
            K = np.broadcast_to(K, (P.shape[0], 4)) if P.ndim == 3 else K[None]
        if K.ndim != 2 or K.shape[1] != 4:
            raise StructuralError(f"intrinsics must be (T, 4), got {K.shape}")
        if P.ndim != 3 or P.shape[1:] != (4, 4):
            raise StructuralError(f"poses must be (T, 4, 4), got {P.shape}")
        if K.shape[0] != P.shape[0] or K.shape[0] < 1:
            raise StructuralError("intrinsics and poses disagree on frame count")
        if np.any(K[:, :2] <= 0) or not np.all(np.isfinite(K)):
            raise StructuralError("focal lengths must be finite and positive")
        for t in range(P.shape[0]):
            _check_rotation(P[t, :3, :3], f"pose {t}")
            if not np.allclose(P[t, 3], [0, 0, 0, 1], atol=0):
                raise StructuralError(f"pose {t}: last row must be [0, 0, 0, 1]")
        object.__setattr__(self, "intrinsics", _frozen(K))
        object.__setattr__(self, "poses", _frozen(P))

    @property
    def frame_count(self) -> int:
        return self.poses.shape[0]

    def K(self, t: int) -> np.ndarray:
        fx, fy, cx, cy = self.intrinsics[t]
        return np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1.0]])

    def world_from_camera(self, t: int) -> np.ndarray:
        return self.poses[t]

    def camera_from_world(self, t: int) -> np.ndarray:
        return invert_pose(self.poses[t])

    def check_bound(self, video: DepthVideo):
        if self.frame_count != video.frame_count:
            raise StructuralError(
                f"track has {self.frame_count} frames, video has {video.frame_count}")
        cx, cy = self.intrinsics[:, 2], self.intrinsics[:, 3]
        if np.any(cx < 0) or np.any(cx >= video.width) or np.any(cy < 0) or np.any(cy >= video.height):
            raise StructuralError("principal point lies outside the image")


def invert_pose(P: np.ndarray) -> np.ndarray:
    R, t = P[:3, :3], P[:3, 3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ t
    return out


@dataclass(frozen=True, eq=False)
class RegionMasks:
    """Dynamic-object mask per frame; static is its complement on valid pixels."""

    dynamic: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.dynamic, dtype=bool)
        if d.ndim == 2:
            d = d[None]
        if d.ndim != 3:
            raise StructuralError(f"dynamic mask must be (T, H, W), got {d.shape}")
        object.__setattr__(self, "dynamic", _frozen(d))

    @property
    def shape(self):
        return self.dynamic.shape

    def static(self, video: DepthVideo | None = None) -> np.ndarray:
        s = ~self.dynamic
        if video is not None:
            self.check_bound(video)
            s = s & video.valid
        return s

    def check_bound(self, video: DepthVideo):
        if self.dynamic.shape != video.shape:
            raise StructuralError(
                f"mask shape {self.dynamic.shape} does not match video {video.shape}")


# --------------------------------------------------------------------------
# container

def _frame_name(prefix: str, t: int, ext: str) -> str:
    return f"{prefix}_{t:06d}.{ext}"


def _write_bytes(path: Path, data: bytes):
    with open(path, "wb") as fh:
        fh.write(data)


def write_container(video: DepthVideo, path, track: CameraTrack | None = None,
                    masks: RegionMasks | None = None,
                    confidence: np.ndarray | None = None) -> None:
    """Write ``video`` (plus optional track, masks, confidence) as a VDC directory.

    Frames are stored as float32; a float32 video round-trips bit-exactly.
    """
    path = Path(path)
    if track is not None:
        track.check_bound(video)
    if masks is not None:
        masks.check_bound(video)
    if confidence is not None:
        confidence = np.asarray(confidence, dtype="<f4")
        if confidence.shape != video.shape:
            raise StructuralError(
                f"confidence shape {confidence.shape} does not match video {video.shape}")
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"container directory {path} is not writable")

    has_validity = not bool(np.all(video.valid))
    manifest = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "width": video.width,
        "height": video.height,
        "frame_count": video.frame_count,
        "value_kind": video.value_kind,
        "depth_unit": video.unit,
        "intrinsics": None if track is None else [[float(v) for v in row] for row in track.intrinsics],
        "poses": None if track is None else [[float(v) for v in P.reshape(-1)] for P in track.poses],
        "has_validity": has_validity,
        "has_masks": masks is not None,
        "has_confidence": confidence is not None,
    }
    frames = np.asarray(video.frames, dtype="<f4")
    for t in range(video.frame_count):
        _write_bytes(path / _frame_name("depth", t, "f32"), np.ascontiguousarray(frames[t]).tobytes())
        if has_validity:
            _write_bytes(path / _frame_name("valid", t, "u8"),
                         (video.valid[t].astype(np.uint8) * 255).tobytes())
        if masks is not None:
            _write_bytes(path / _frame_name("mask", t, "u8"),
                         (masks.dynamic[t].astype(np.uint8) * 255).tobytes())
        if confidence is not None:
            _write_bytes(path / _frame_name("conf", t, "f32"), np.ascontiguousarray(confidence[t]).tobytes())
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_manifest(path: Path) -> dict:
    try:
        with open(path / "manifest.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise LoadError(f"{path}: no manifest.json") from None
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: malformed manifest ({exc})") from None
    if not isinstance(manifest, dict):
        raise LoadError(f"{path}: manifest must be a JSON object")
    version = str(manifest.get("format_version", ""))
    major = version.split(".")[0]
    if major != FORMAT_VERSION.split(".")[0]:
        raise VersionError(f"{path}: unsupported format_version {version!r} "
                           f"(this reader handles {FORMAT_VERSION.split('.')[0]}.x)")
    for key in ("width", "height", "frame_count"):
        v = manifest.get(key)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise LoadError(f"{path}: manifest field {key!r} must be a positive integer")
    return manifest


def _count_payloads(path: Path, prefix: str, ext: str) -> int:
    return sum(1 for p in path.glob(f"{prefix}_*.{ext}"))


def _read_grid(path: Path, prefix: str, ext: str, t: int, shape, dtype, itemsize) -> np.ndarray:
    f = path / _frame_name(prefix, t, ext)
    try:
        raw = f.read_bytes()
    except FileNotFoundError:
        raise LoadError(f"{path}: missing payload {f.name} for frame {t}", frame=t) from None
    expected = shape[0] * shape[1] * itemsize
    if len(raw) != expected:
        raise LoadError(
            f"{path}: payload {f.name} for frame {t} has {len(raw)} bytes, expected {expected}",
            frame=t)
    return np.frombuffer(raw, dtype=dtype).reshape(shape)


def read_container(path) -> tuple[DepthVideo, CameraTrack | None, RegionMasks | None]:
    """Load a VDC directory written by :func:`write_container`."""
    path = Path(path)
    m = _read_manifest(path)
    T, H, W = m["frame_count"], m["height"], m["width"]
    kinds = [("depth", "f32", True), ("valid", "u8", m.get("has_validity", False)),
             ("mask", "u8", m.get("has_masks", False)),
             ("conf", "f32", m.get("has_confidence", False))]
    for prefix, ext, present in kinds:
        if present:
            n = _count_payloads(path, prefix, ext)
            if n != T:
                raise LoadError(f"{path}: manifest declares {T} frames but found {n} {prefix} payloads")

    frames = np.empty((T, H, W), dtype=np.float32)
    valid = np.ones((T, H, W), dtype=bool)
    for t in range(T):
        frames[t] = _read_grid(path, "depth", "f32", t, (H, W), "<f4", 4)
        if m.get("has_validity", False):
            valid[t] = _read_grid(path, "valid", "u8", t, (H, W), np.uint8, 1) > 0
        vals = frames[t][valid[t]]
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise LoadError(f"{path}: frame {t} holds non-finite or non-positive valid values", frame=t)
    kind = m.get("value_kind", "depth")
    if kind not in VALUE_KINDS:
        raise LoadError(f"{path}: unknown value_kind {kind!r}")
    video = DepthVideo(frames, valid, kind, m.get("depth_unit", "m"))

    track = None
    if m.get("poses") is not None:
        try:
            poses = np.asarray(m["poses"], dtype=np.float64).reshape(T, 4, 4)
            track = CameraTrack(np.asarray(m["intrinsics"], dtype=np.float64), poses)
        except (ValueError, TypeError) as exc:
            raise LoadError(f"{path}: bad camera track ({exc})") from None
    masks = None
    if m.get("has_masks", False):
        dyn = np.stack([_read_grid(path, "mask", "u8", t, (H, W), np.uint8, 1) > 0 for t in range(T)])
        masks = RegionMasks(dyn)
    return video, track, masks


def read_confidence(path) -> np.ndarray | None:
    path = Path(path)
    m = _read_manifest(path)
    if not m.get("has_confidence", False):
        return None
    T, H, W = m["frame_count"], m["height"], m["width"]
    return np.stack([_read_grid(path, "conf", "f32", t, (H, W), "<f4", 4) for t in range(T)])


# --------------------------------------------------------------------------
# resampling

def nearest_indices(src: int, dst: int) -> np.ndarray:
    """Source index for each destination index, center-aligned and floored."""
    idx = np.floor((np.arange(dst) + 0.5) * (src / dst)).astype(np.int64)
    return np.clip(idx, 0, src - 1)


def resize_nearest(video: DepthVideo, new_width: int, new_height: int) -> DepthVideo:
    if new_width < 1 or new_height < 1:
        raise ValueError("target size must be positive")
    if (new_width, new_height) == (video.width, video.height):
        return video
    rows = nearest_indices(video.height, new_height)
    cols = nearest_indices(video.width, new_width)
    frames = video.frames[:, rows][:, :, cols]
    valid = video.valid[:, rows][:, :, cols]
    return DepthVideo(frames, valid, video.value_kind, video.unit)
