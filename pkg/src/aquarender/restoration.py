"""Inverting the image-formation model.

With known range the forward model inverts in closed form.  For a single
monocular image the range is recovered per pixel first: under a gray-world
per-pixel prior (unknown achromatic albedo ``alpha``), the best
``(alpha, r)`` is found by minimizing the squared mismatch between the
de-vignetted, de-gained observation and ``alpha * exp(-eta_c r) +
beta_c (1 - exp(-eta_c r))`` over the three channels.  ``alpha`` has a
closed-form optimum for each candidate range; the range itself comes from
a coarse grid over ``[0, max_altitude]`` refined by golden-section search,
followed by a single 3x3 median pass that also heals isolated saturated
pixels.  Requires channel-distinct attenuation, otherwise color carries no
range information.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from .exceptions import AmbiguityError, InvalidParameterError
from .physics import RenderModel, normalize_depth, vignette_mask
from .validation import as_depth, as_image, check_paired

__all__ = [
    "RestorationResult",
    "saturation_mask",
    "invert_render",
    "estimate_depth",
    "restore_monocular",
    "baseline_attenuation_only",
]

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class RestorationResult:
    """Restored image, relative depth, and per-pixel diagnostics."""

    restored: np.ndarray        # H x W x 3 in [0, 1]
    depth_rel: np.ndarray       # H x W in [0, 1]
    saturation_mask: np.ndarray  # H x W bool, clamped/unrecoverable pixels
    residual: np.ndarray        # H x W model-fit residual at the solution


def saturation_mask(img) -> np.ndarray:
    """Pixels with any channel at a clamp bound (0 or 1)."""
    img = as_image(img)
    return np.any((img <= 0.0) | (img >= 1.0), axis=2)


def invert_render(uw, depth, model: RenderModel,
                  zero_is_missing: bool = False) -> np.ndarray:
    """Closed-form inverse of the forward model at known range.

    ``I = clamp(((uw / k) * V - beta_c (1 - e^{-eta_c r})) * e^{+eta_c r}, 0, 1)``.
    Exact wherever no forward clamp was active.  With ``zero_is_missing``
    set, missing-depth pixels are left unrestored (passed through).
    """
    uw = as_image(uw, "underwater image")
    depth = as_depth(depth)
    check_paired(uw, depth)
    eta = model.water.eta[None, None, :]
    beta = model.water.beta[None, None, :]
    h, w = uw.shape[:2]
    vmask = vignette_mask(w, h, model.camera)[:, :, None]
    decay = np.exp(-depth[:, :, None] * eta)
    restored = ((uw / model.camera.k) * vmask - beta * (1.0 - decay)) / decay
    restored = np.clip(restored, 0.0, 1.0)
    if zero_is_missing:
        missing = depth == 0.0
        restored[missing] = uw[missing]
    return restored


def _degain(uw: np.ndarray, model: RenderModel) -> np.ndarray:
    h, w = uw.shape[:2]
    vmask = vignette_mask(w, h, model.camera)[:, :, None]
    return (uw / model.camera.k) * vmask


def _check_eta_distinct(model: RenderModel) -> None:
    eta = model.water.eta
    if float(eta.max() - eta.min()) < 1e-9:
        raise AmbiguityError(
            "attenuation coefficients are equal across channels; "
            "range cannot be recovered from color alone"
        )


def _score(g2: np.ndarray, model: RenderModel,
           r: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Best gray albedo and residual at per-pixel candidate ranges.

    For fixed r the model is linear in alpha, so
    ``alpha* = sum_c e_c (g2_c - B_c) / sum_c e_c^2`` with
    ``e_c = exp(-eta_c r)`` and ``B_c = beta_c (1 - e_c)``.
    """
    eta = model.water.eta[None, None, :]
    beta = model.water.beta[None, None, :]
    e = np.exp(-r[:, :, None] * eta)
    b = beta * (1.0 - e)
    alpha = np.sum(e * (g2 - b), axis=2) / np.sum(e * e, axis=2)
    resid = np.sum((g2 - alpha[:, :, None] * e - b) ** 2, axis=2)
    return alpha, resid


def _solve_range(uw: np.ndarray, model: RenderModel, grid_size: int,
                 refine_tol: float) -> np.ndarray:
    """Per-pixel range minimizing the gray-prior residual, in meters."""
    g2 = _degain(uw, model)
    h, w = uw.shape[:2]
    alt = model.max_altitude

    grid = np.linspace(0.0, alt, grid_size)
    best_r = np.zeros((h, w))
    best_f = np.full((h, w), np.inf)
    for r0 in grid:
        _, f = _score(g2, model, np.full((h, w), r0))
        better = f < best_f
        best_r[better] = r0
        best_f[better] = f[better]

    # Golden-section refinement inside one grid step either side.
    step = alt / (grid_size - 1) if grid_size > 1 else alt
    lo = np.clip(best_r - step, 0.0, alt)
    hi = np.clip(best_r + step, 0.0, alt)
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1 = _score(g2, model, x1)[1]
    f2 = _score(g2, model, x2)[1]
    tol = refine_tol * alt
    width = 2.0 * step
    n_iter = 0
    while width * _GOLDEN ** n_iter > tol and n_iter < 200:
        n_iter += 1
    for _ in range(n_iter):
        shrink_hi = f1 < f2
        hi = np.where(shrink_hi, x2, hi)
        lo = np.where(shrink_hi, lo, x1)
        new_x1 = hi - _GOLDEN * (hi - lo)
        new_x2 = lo + _GOLDEN * (hi - lo)
        probe = np.where(shrink_hi, new_x1, new_x2)
        f_probe = _score(g2, model, probe)[1]
        x1, f1, x2, f2 = (
            np.where(shrink_hi, new_x1, x2),
            np.where(shrink_hi, f_probe, f2),
            np.where(shrink_hi, x1, new_x2),
            np.where(shrink_hi, f1, f_probe),
        )
    return 0.5 * (lo + hi)


def estimate_depth(uw, model: RenderModel, grid_size: int = 64,
                   refine_tol: float = 1e-4,
                   median_pass: bool = True) -> np.ndarray:
    """Relative depth of a single underwater image, in [0, 1].

    Saturated pixels are estimated like any other and rely on the median
    pass to inherit neighboring values.
    """
    uw = as_image(uw, "underwater image")
    _check_eta_distinct(model)
    if grid_size < 2:
        raise InvalidParameterError(f"grid_size must be >= 2, got {grid_size}")
    r = _solve_range(uw, model, grid_size, refine_tol)
    if median_pass:
        r = ndimage.median_filter(r, size=3, mode="nearest")
    return normalize_depth(r, model.max_altitude)


def restore_monocular(uw, model: RenderModel, grid_size: int = 64,
                      refine_tol: float = 1e-4,
                      median_pass: bool = True) -> RestorationResult:
    """Estimate range, then invert the model with the estimated range."""
    uw = as_image(uw, "underwater image")
    _check_eta_distinct(model)
    if grid_size < 2:
        raise InvalidParameterError(f"grid_size must be >= 2, got {grid_size}")
    r = _solve_range(uw, model, grid_size, refine_tol)
    if median_pass:
        r = ndimage.median_filter(r, size=3, mode="nearest")
    _, residual = _score(_degain(uw, model), model, r)
    return RestorationResult(
        restored=invert_render(uw, r, model),
        depth_rel=normalize_depth(r, model.max_altitude),
        saturation_mask=saturation_mask(uw),
        residual=residual,
    )


def baseline_attenuation_only(uw, depth, eta) -> np.ndarray:
    """Range-dependent correction with attenuation only (no haze/vignette).

    ``clamp(uw * e^{+eta_c r}, 0, 1)``; differs from the full inverse
    whenever backscatter is non-zero.
    """
    uw = as_image(uw, "underwater image")
    depth = as_depth(depth)
    check_paired(uw, depth)
    eta = np.atleast_1d(np.asarray(eta, dtype=np.float64))
    if eta.shape != (3,):
        raise InvalidParameterError(f"eta must have 3 channels, got {eta.shape}")
    if np.any(eta <= 0.0) or not np.all(np.isfinite(eta)):
        raise InvalidParameterError(f"eta must be finite and > 0, got {eta}")
    gain = np.exp(depth[:, :, None] * eta[None, None, :])
    return np.clip(uw * gain, 0.0, 1.0)
