"""Forward underwater image formation and its closed-form derivatives.

A linear in-air radiance image propagates through four stages, each a pure
per-pixel map:

1. attenuation:   ``I * exp(-eta_c * r)`` with per-channel decay ``eta``
   (1/m) over camera-to-scene range ``r`` (m);
2. backscatter:   additive haze ``beta_c * (1 - exp(-eta_c * r))`` that
   saturates toward the asymptote ``beta``;
3. vignetting:    division by ``V = 1 + a rn^2 + b rn^4 + c rn^6`` where
   ``rn`` is the radius from the image center normalized so ``rn = 1`` at
   the corners;
4. sensor gain:   multiplication by ``k``.

Every stage output is clamped to ``[0, 1]``; derivatives treat clamped
pixels as saturated (gradient zero).  Images are linear radiance: 8-bit
files map to ``[0, 1]`` by ``value / 255`` and gamma handling is out of
scope.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict

import numpy as np
from scipy import ndimage

from .exceptions import InvalidParameterError
from .validation import as_depth, as_image, as_vignette, check_paired

__all__ = [
    "WaterParams",
    "CameraParams",
    "RenderModel",
    "PARAM_NAMES",
    "attenuate",
    "backscatter_mask",
    "compose_scatter",
    "vignette_mask",
    "apply_vignette",
    "sensor_gain",
    "render",
    "render_gradients",
    "normalize_depth",
    "missing_depth_mask",
    "fill_missing_depth",
]

#: Natural-domain parameter order used by vectors, gradients, and reports.
PARAM_NAMES = ("eta_r", "eta_g", "eta_b", "beta_r", "beta_g", "beta_b",
               "a", "b", "c", "k")


@dataclass(frozen=True)
class WaterParams:
    """Per-channel water column coefficients.

    ``eta``: attenuation coefficients (1/m), strictly positive.
    ``beta``: backscatter asymptotes, dimensionless in [0, 1].
    """

    eta: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        eta = np.atleast_1d(np.asarray(self.eta, dtype=np.float64))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        if eta.shape != (3,) or beta.shape != (3,):
            raise InvalidParameterError(
                f"eta and beta must each have 3 channels, got {eta.shape} and {beta.shape}"
            )
        if not np.all(np.isfinite(eta)) or not np.all(np.isfinite(beta)):
            raise InvalidParameterError("water parameters must be finite")
        if np.any(eta <= 0.0):
            raise InvalidParameterError(f"eta must be > 0 per channel, got {eta}")
        if np.any(beta < 0.0) or np.any(beta > 1.0):
            raise InvalidParameterError(f"beta must lie in [0, 1], got {beta}")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "beta", beta)


@dataclass(frozen=True)
class CameraParams:
    """Vignetting polynomial coefficients and linear sensor gain.

    The polynomial ``V = 1 + a r^2 + b r^4 + c r^6`` must be strictly
    increasing on [0, 1], which holds when ``a > 0``, ``c >= 0`` and
    ``4 b^2 - 12 a c < 0`` (the derivative then has no real root).
    """

    a: float
    b: float
    c: float
    k: float

    def __post_init__(self):
        for name in ("a", "b", "c", "k"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise InvalidParameterError(f"camera parameter {name} must be finite")
            object.__setattr__(self, name, v)
        if self.a <= 0.0:
            raise InvalidParameterError(f"a must be > 0, got a={self.a}")
        if self.c < 0.0:
            raise InvalidParameterError(f"c must be >= 0, got c={self.c}")
        disc = 4.0 * self.b * self.b - 12.0 * self.a * self.c
        if disc >= 0.0:
            raise InvalidParameterError(
                f"4b^2 - 12ac must be < 0, got 4*{self.b}^2 - 12*{self.a}*{self.c} = {disc}"
            )
        if self.k <= 0.0:
            raise InvalidParameterError(f"k must be > 0, got k={self.k}")


@dataclass(frozen=True)
class RenderModel:
    """Complete parameter set of the image-formation model.

    ``noise_sigma`` is the amplitude of optional zero-mean Gaussian
    backscatter noise; ``max_altitude`` (m) is the reference used to
    normalize depth maps and to bound monocular range search.
    """

    water: WaterParams
    camera: CameraParams
    noise_sigma: float = 0.0
    max_altitude: float = 2.0

    def __post_init__(self):
        sigma = float(self.noise_sigma)
        alt = float(self.max_altitude)
        if not np.isfinite(sigma) or sigma < 0.0:
            raise InvalidParameterError(f"noise_sigma must be >= 0, got {sigma}")
        if not np.isfinite(alt) or alt <= 0.0:
            raise InvalidParameterError(f"max_altitude must be > 0, got {alt}")
        object.__setattr__(self, "noise_sigma", sigma)
        object.__setattr__(self, "max_altitude", alt)

    def param_vector(self) -> np.ndarray:
        """Natural-domain parameters ordered as :data:`PARAM_NAMES`."""
        return np.concatenate([
            self.water.eta, self.water.beta,
            [self.camera.a, self.camera.b, self.camera.c, self.camera.k],
        ])

    @classmethod
    def from_param_vector(cls, vec, noise_sigma: float = 0.0,
                          max_altitude: float = 2.0) -> "RenderModel":
        v = np.asarray(vec, dtype=np.float64)
        if v.shape != (len(PARAM_NAMES),):
            raise InvalidParameterError(
                f"parameter vector must have shape ({len(PARAM_NAMES)},), got {v.shape}"
            )
        return cls(
            water=WaterParams(eta=v[0:3], beta=v[3:6]),
            camera=CameraParams(a=v[6], b=v[7], c=v[8], k=v[9]),
            noise_sigma=noise_sigma,
            max_altitude=max_altitude,
        )

    def without_noise(self) -> "RenderModel":
        return replace(self, noise_sigma=0.0) if self.noise_sigma else self


def attenuate(img, depth, water: WaterParams) -> np.ndarray:
    """Range-dependent exponential decay of radiance, per channel.

    ``out(p, c) = img(p, c) * exp(-eta_c * depth(p))``.  Never brightens.
    Pixels with missing depth (value 0) pass through unchanged, which
    coincides with the zero-range limit.
    """
    img = as_image(img)
    depth = as_depth(depth)
    check_paired(img, depth)
    t = np.exp(-depth[:, :, None] * water.eta[None, None, :])
    return img * t


def backscatter_mask(depth, water: WaterParams) -> np.ndarray:
    """Additive haze ``beta_c * (1 - exp(-eta_c * depth))``, in [0, beta_c)."""
    depth = as_depth(depth)
    t = np.exp(-depth[:, :, None] * water.eta[None, None, :])
    return water.beta[None, None, :] * (1.0 - t)


def compose_scatter(g1, mask, noise_sigma: float = 0.0, seed: int = 0) -> np.ndarray:
    """Add the backscatter mask (and optional seeded Gaussian noise), clamp.

    With ``noise_sigma == 0`` this is exact clamped addition; otherwise a
    zero-mean per-pixel Gaussian perturbation with the given standard
    deviation is drawn from ``numpy.random.default_rng(seed)``, so equal
    seeds give bit-identical outputs.
    """
    g1 = as_image(g1, "attenuated image")
    mask = as_image(mask, "backscatter mask")
    check_paired(g1, mask, "attenuated image", "backscatter mask")
    if not np.isfinite(noise_sigma) or noise_sigma < 0.0:
        raise InvalidParameterError(f"noise_sigma must be >= 0, got {noise_sigma}")
    out = g1 + mask
    if noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def _radius_sq(width: int, height: int) -> np.ndarray:
    """Squared radius from image center, corner-normalized (H x W).

    Normalization uses the center-to-corner distance so the squared radius
    is exactly 1 at the corners and <= 1 everywhere.  A 1x1 image has a
    single center pixel at radius 0.
    """
    xc = (width - 1) / 2.0
    yc = (height - 1) / 2.0
    r0_sq = xc * xc + yc * yc
    x = np.arange(width, dtype=np.float64) - xc
    y = np.arange(height, dtype=np.float64) - yc
    r_sq = y[:, None] ** 2 + x[None, :] ** 2
    if r0_sq == 0.0:
        return np.zeros((height, width))
    return r_sq / r0_sq


def vignette_mask(width: int, height: int, cam: CameraParams) -> np.ndarray:
    """Radial falloff polynomial ``V = 1 + a rn^2 + b rn^4 + c rn^6`` (H x W).

    ``V`` is 1 at the center and strictly increasing in radius for any
    valid :class:`CameraParams`, so dividing by it darkens borders.
    """
    if width < 1 or height < 1:
        raise InvalidParameterError(f"mask size must be >= 1x1, got {height}x{width}")
    rn2 = _radius_sq(width, height)
    return 1.0 + cam.a * rn2 + cam.b * rn2 ** 2 + cam.c * rn2 ** 3


def apply_vignette(g2, vmask) -> np.ndarray:
    """Divide each channel by the vignetting polynomial (mask >= 1)."""
    g2 = as_image(g2, "scattered image")
    vmask = as_vignette(vmask)
    check_paired(g2, vmask, "scattered image", "vignette mask")
    return g2 / vmask[:, :, None]


def sensor_gain(g3, k: float) -> np.ndarray:
    """Linear sensor response ``clamp(k * g3, 0, 1)``."""
    if not np.isfinite(k) or k <= 0.0:
        raise InvalidParameterError(f"k must be > 0, got {k}")
    g3 = as_image(g3, "vignetted image")
    return np.clip(k * g3, 0.0, 1.0)


def missing_depth_mask(depth) -> np.ndarray:
    """Boolean H x W mask of missing (zero) depth samples."""
    return as_depth(depth) == 0.0


def fill_missing_depth(depth) -> np.ndarray:
    """Replace missing (zero) samples with their nearest valid neighbor.

    A map with no valid samples is returned unchanged.
    """
    depth = as_depth(depth)
    missing = depth == 0.0
    if not missing.any() or missing.all():
        return depth.copy()
    idx = ndimage.distance_transform_edt(
        missing, return_distances=False, return_indices=True
    )
    return depth[tuple(idx)]


def render(scene_img, scene_depth, model: RenderModel, seed: int = 0,
           zero_is_missing: bool = False) -> np.ndarray:
    """Full forward model: attenuate, scatter, vignette, sensor gain.

    Equals the manual chain of the stage operations pixel for pixel.
    ``zero_is_missing`` selects the sensor-data interpretation of zero
    depth: holes are filled by nearest-neighbor before rendering.  With
    the flag off, zero depth means zero range.
    """
    img = as_image(scene_img)
    depth = as_depth(scene_depth)
    check_paired(img, depth)
    if zero_is_missing:
        depth = fill_missing_depth(depth)
    g1 = attenuate(img, depth, model.water)
    bmask = backscatter_mask(depth, model.water)
    g2 = compose_scatter(g1, bmask, model.noise_sigma, seed)
    h, w = img.shape[:2]
    vmask = vignette_mask(w, h, model.camera)
    g3 = apply_vignette(g2, vmask)
    return sensor_gain(g3, model.camera.k)


def render_gradients(scene_img, scene_depth, model: RenderModel,
                     zero_is_missing: bool = False) -> Dict[str, np.ndarray]:
    """Closed-form derivative images of the rendered output.

    Returns one H x W x 3 array per natural-domain parameter (keys from
    :data:`PARAM_NAMES`).  Noise is treated as zero for differentiation and
    pixels clamped by either the scatter or the gain stage carry gradient
    zero.  ``eta_c`` and ``beta_c`` only influence their own channel, so
    their derivative images are zero on the other two channels.
    """
    img = as_image(scene_img)
    depth = as_depth(scene_depth)
    check_paired(img, depth)
    if zero_is_missing:
        depth = fill_missing_depth(depth)

    eta = model.water.eta[None, None, :]
    beta = model.water.beta[None, None, :]
    cam = model.camera
    h, w = img.shape[:2]

    r = depth[:, :, None]
    decay = np.exp(-r * eta)
    pre_clamp = img * decay + beta * (1.0 - decay)
    vmask = vignette_mask(w, h, cam)[:, :, None]
    out_lin = cam.k * pre_clamp / vmask
    unclamped = (pre_clamp > 0.0) & (pre_clamp < 1.0) & (out_lin > 0.0) & (out_lin < 1.0)

    gain_over_v = np.where(unclamped, cam.k / vmask, 0.0)
    d_eta = gain_over_v * r * decay * (beta - img)
    d_beta = gain_over_v * (1.0 - decay)
    # d(1/V)/d{a,b,c} = -rn^{2,4,6} / V^2
    rn2 = _radius_sq(w, h)[:, :, None]
    neg_out_over_v = np.where(unclamped, -cam.k * pre_clamp / vmask ** 2, 0.0)

    grads: Dict[str, np.ndarray] = {}
    for ci, name in enumerate(PARAM_NAMES[0:3]):
        g = np.zeros_like(img)
        g[:, :, ci] = d_eta[:, :, ci]
        grads[name] = g
    for ci, name in enumerate(PARAM_NAMES[3:6]):
        g = np.zeros_like(img)
        g[:, :, ci] = d_beta[:, :, ci]
        grads[name] = g
    grads["a"] = neg_out_over_v * rn2
    grads["b"] = neg_out_over_v * rn2 ** 2
    grads["c"] = neg_out_over_v * rn2 ** 3
    grads["k"] = np.where(unclamped, pre_clamp / vmask, 0.0)
    return grads


def normalize_depth(depth, max_altitude: float) -> np.ndarray:
    """Scale ranges by the maximum survey altitude, saturating at 1.

    Missing samples (value 0) stay 0.
    """
    if not np.isfinite(max_altitude) or max_altitude <= 0.0:
        raise InvalidParameterError(f"max_altitude must be > 0, got {max_altitude}")
    depth = as_depth(depth)
    return np.minimum(depth / max_altitude, 1.0)
