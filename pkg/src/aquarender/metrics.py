"""Color accuracy, color consistency, RMSE validation, and reference baselines.

Color comparisons work on intensity-normalized colors so only chromatic
error is measured.  "Intensity-normalized" means division by the Euclidean
norm (a chromaticity/sum normalization is available behind ``mode="sum"``
for sensitivity analysis; the default is used by all reports).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .exceptions import ContractViolationError, NormalizationError
from .validation import as_depth, as_image, check_paired

__all__ = [
    "ColorPatchSet",
    "TrackSet",
    "intensity_normalize",
    "color_accuracy",
    "color_consistency",
    "rmse_rgb",
    "rmse_depth_norm",
    "baseline_histeq",
    "baseline_grayworld",
]

PATCH_NAMES = ("blue", "red", "magenta", "green", "cyan", "yellow")


@dataclass
class ColorPatchSet:
    """Sampled pixel colors per named patch plus a reference color each."""

    patches: Dict[str, np.ndarray] = field(default_factory=dict)
    references: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.patches:
            raise ContractViolationError("patch set must not be empty")
        for name, px in self.patches.items():
            arr = np.asarray(px, dtype=np.float64).reshape(-1, 3)
            if arr.shape[0] == 0:
                raise ContractViolationError(f"patch '{name}' is empty")
            self.patches[name] = arr
            if name not in self.references:
                raise ContractViolationError(f"patch '{name}' has no reference color")
            self.references[name] = np.asarray(self.references[name],
                                               dtype=np.float64).reshape(3)


@dataclass
class TrackSet:
    """Color observations of single scene points across images."""

    tracks: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.tracks:
            raise ContractViolationError("track set must not be empty")
        clean = []
        for i, t in enumerate(self.tracks):
            arr = np.asarray(t, dtype=np.float64).reshape(-1, 3)
            if arr.shape[0] < 2:
                raise ContractViolationError(
                    f"track {i} has {arr.shape[0]} observations; at least 2 required"
                )
            clean.append(arr)
        self.tracks = clean


def intensity_normalize(color, mode: str = "euclidean") -> np.ndarray:
    """Map colors to their direction, discarding brightness.

    Works on a single color or any ``(..., 3)`` array.  Scale-invariant:
    ``v`` and ``2 v`` normalize identically.  A zero vector has no
    direction and raises :class:`NormalizationError`.
    """
    v = np.asarray(color, dtype=np.float64)
    if v.shape[-1] != 3:
        raise ContractViolationError(f"colors must have 3 channels, got shape {v.shape}")
    if mode == "euclidean":
        n = np.linalg.norm(v, axis=-1)
    elif mode == "sum":
        n = np.sum(v, axis=-1)
    else:
        raise ContractViolationError(f"unknown normalization mode '{mode}'")
    if np.any(n == 0.0):
        raise NormalizationError("cannot intensity-normalize a zero color")
    return v / n[..., None]


def color_accuracy(patches: ColorPatchSet, mode: str = "euclidean") -> Dict[str, float]:
    """Distance between normalized mean patch color and normalized reference."""
    out: Dict[str, float] = {}
    for name, px in patches.patches.items():
        mean = intensity_normalize(px.mean(axis=0), mode)
        ref = intensity_normalize(patches.references[name], mode)
        out[name] = float(np.linalg.norm(mean - ref))
    return out


def color_consistency(tracks: TrackSet, mode: str = "euclidean") -> np.ndarray:
    """Mean per-channel variance of normalized colors over all tracks.

    Population variance; tracks may be short.  Invariant to per-observation
    brightness changes.
    """
    variances = np.stack([
        intensity_normalize(t, mode).var(axis=0) for t in tracks.tracks
    ])
    return variances.mean(axis=0)


def rmse_rgb(a, b) -> np.ndarray:
    """Per-channel root-mean-square difference between two images."""
    a = as_image(a, "first image")
    b = as_image(b, "second image")
    check_paired(a, b, "first image", "second image")
    return np.sqrt(np.mean((a - b) ** 2, axis=(0, 1)))


def rmse_depth_norm(a, b, mask=None) -> float:
    """RMSE between two depth maps over valid pixels.

    ``mask`` selects the pixels to compare; by default pixels missing in
    either map are ignored.
    """
    a = as_depth(a, "first depth")
    b = as_depth(b, "second depth")
    check_paired(a, b, "first depth", "second depth")
    if mask is None:
        mask = (a > 0.0) & (b > 0.0)
    else:
        mask = np.asarray(mask, dtype=bool)
        check_paired(a, mask, "depth", "mask")
    if not mask.any():
        raise ContractViolationError("mask selects no pixels")
    return float(np.sqrt(np.mean((a[mask] - b[mask]) ** 2)))


def baseline_histeq(img) -> np.ndarray:
    """Per-channel histogram equalization over 256 bins.

    Each value maps to the cumulative mass of its bin, a monotone
    non-decreasing map per channel; a constant channel therefore maps to
    its single bin's cumulative mass, 1.0.
    """
    img = as_image(img)
    out = np.empty_like(img)
    n = img.shape[0] * img.shape[1]
    for ch in range(3):
        bins = np.round(img[:, :, ch] * 255.0).astype(np.int64)
        hist = np.bincount(bins.ravel(), minlength=256)
        cdf = np.cumsum(hist) / n
        out[:, :, ch] = cdf[bins]
    return out


def baseline_grayworld(img) -> np.ndarray:
    """Scale each channel so all channel means match the global mean.

    Linear per channel (pre-clamp pixel ratios preserved); channels with
    zero mean carry no usable scale.
    """
    img = as_image(img)
    means = img.mean(axis=(0, 1))
    if np.any(means == 0.0):
        raise ContractViolationError("gray-world gains undefined for a zero-mean channel")
    gains = means.mean() / means
    return np.clip(img * gains[None, None, :], 0.0, 1.0)
