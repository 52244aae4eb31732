"""Input validation helpers.

All public operations work on plain numpy arrays:

* color images are ``H x W x 3`` arrays of linear radiance in ``[0, 1]``,
  channel order R, G, B;
* depth maps are ``H x W`` arrays of camera-to-scene range in meters,
  where the value ``0`` encodes a missing sample.

The helpers below coerce to float64 and raise
:class:`~aquarender.exceptions.ContractViolationError` on violations.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ContractViolationError

# Slack for values that drift past a bound by floating-point round-off only.
_RANGE_TOL = 1e-12


def as_image(arr, name: str = "image") -> np.ndarray:
    """Validate and return ``arr`` as an H x W x 3 float64 image in [0, 1]."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ContractViolationError(
            f"{name} must have shape (H, W, 3), got {a.shape}"
        )
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ContractViolationError(f"{name} must be at least 1x1, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolationError(f"{name} contains non-finite values")
    lo, hi = a.min(), a.max()
    if lo < -_RANGE_TOL or hi > 1.0 + _RANGE_TOL:
        raise ContractViolationError(
            f"{name} values must lie in [0, 1], got range [{lo}, {hi}]"
        )
    if lo < 0.0 or hi > 1.0:
        a = np.clip(a, 0.0, 1.0)
    return a


def as_depth(arr, name: str = "depth") -> np.ndarray:
    """Validate and return ``arr`` as an H x W float64 depth map in meters."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 2:
        raise ContractViolationError(f"{name} must have shape (H, W), got {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ContractViolationError(f"{name} must be at least 1x1, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolationError(f"{name} contains non-finite values")
    if a.min() < 0.0:
        raise ContractViolationError(f"{name} contains negative ranges")
    return a


def as_vignette(arr, name: str = "vignette mask") -> np.ndarray:
    """Validate a single-channel vignetting mask (H x W, everywhere >= 1)."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 2:
        raise ContractViolationError(f"{name} must have shape (H, W), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolationError(f"{name} contains non-finite values")
    if a.min() < 1.0 - _RANGE_TOL:
        raise ContractViolationError(f"{name} must be >= 1 everywhere, min {a.min()}")
    return a


def check_paired(a: np.ndarray, b: np.ndarray, name_a: str = "image",
                 name_b: str = "depth") -> None:
    """Require matching H x W grids between two arrays."""
    if a.shape[:2] != b.shape[:2]:
        raise ContractViolationError(
            f"{name_a} grid {a.shape[:2]} does not match {name_b} grid {b.shape[:2]}"
        )
