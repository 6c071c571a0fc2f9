"""Input checking shared by the estimators and the functional API."""

from __future__ import annotations

import numbers

import numpy as np

from .model import DepthVideo, RegionMasks, StructuralError


def check_video(obj, name: str = "video") -> DepthVideo:
    """Accept a DepthVideo or a ``(T, H, W)`` / ``(H, W)`` array."""
    if isinstance(obj, DepthVideo):
        return obj
    arr = np.asarray(obj)
    if arr.dtype == object or arr.ndim not in (2, 3):
        raise TypeError(f"{name} must be a DepthVideo or a (T, H, W) array, got shape {arr.shape}")
    return DepthVideo(arr)


def check_same_shape(a: DepthVideo, b: DepthVideo, names=("pred", "gt")):
    if a.shape != b.shape:
        raise StructuralError(f"{names[0]} shape {a.shape} does not match {names[1]} shape {b.shape}")


def check_mask(mask, video: DepthVideo, name: str = "mask") -> np.ndarray | None:
    if mask is None:
        return None
    if isinstance(mask, RegionMasks):
        mask = mask.dynamic
    m = np.asarray(mask, dtype=bool)
    if m.shape == video.shape[1:]:
        m = np.broadcast_to(m, video.shape)
    if m.shape != video.shape:
        raise StructuralError(f"{name} shape {m.shape} does not match video {video.shape}")
    return m


def check_int(value, name: str, low: int | None = None, high: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if low is not None and value < low:
        raise ValueError(f"{name} must be >= {low}, got {value}")
    if high is not None and value > high:
        raise ValueError(f"{name} must be <= {high}, got {value}")
    return value


def check_choice(value, name: str, choices) -> str:
    if value not in choices:
        raise ValueError(f"{name} must be one of {tuple(choices)}, got {value!r}")
    return value
