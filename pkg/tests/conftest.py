import numpy as np
import pytest

from aquarender.physics import CameraParams, RenderModel, WaterParams


def random_model(rng, noise_sigma=0.0, max_altitude=2.0):
    """A random valid model with moderate, well-conditioned parameters."""
    eta = np.sort(rng.uniform(0.05, 0.7, 3))[::-1].copy()
    beta = rng.uniform(0.02, 0.25, 3)
    a = rng.uniform(0.02, 0.3)
    c = rng.uniform(1e-4, 0.05)
    b_bound = np.sqrt(3.0 * a * c)
    b = rng.uniform(-0.9, 0.9) * b_bound
    k = rng.uniform(0.7, 1.3)
    return RenderModel(
        water=WaterParams(eta=eta, beta=beta),
        camera=CameraParams(a=a, b=b, c=c, k=k),
        noise_sigma=noise_sigma,
        max_altitude=max_altitude,
    )


def random_scene(rng, height=12, width=16, depth_range=(0.2, 1.8)):
    """A random in-air image plus a smooth depth map, clamp-free by margin."""
    img = rng.uniform(0.05, 0.85, (height, width, 3))
    lo, hi = depth_range
    ramp = np.linspace(lo, hi, height)[:, None]
    depth = np.broadcast_to(ramp, (height, width)).copy()
    depth += rng.uniform(0.0, 0.05, (height, width))
    return img, depth


def smooth_scene(rng, height=48, width=64, chroma=0.15):
    """Banded texture with mild chroma and a random depth ramp, 48x64."""
    xg, yg = np.meshgrid(np.linspace(0, 2 * np.pi, width),
                         np.linspace(0, 2 * np.pi, height))
    fx, fy = rng.uniform(0.5, 3.0, 2)
    phase = rng.uniform(0, 2 * np.pi, 3)
    base = 0.45 + 0.25 * np.sin(fx * xg + phase[0]) * np.cos(fy * yg + phase[1])
    img = np.stack([
        np.clip(base * (1 + chroma * np.sin(2 * fx * xg + phase[ch])), 0.03, 0.97)
        for ch in range(3)
    ], axis=2)
    lo, hi = sorted(rng.uniform(0.3, 2.0, 2))
    angle = rng.uniform(0, 2 * np.pi)
    t = (np.cos(angle) * xg / xg.max() + np.sin(angle) * yg / yg.max() + 1) / 2
    depth = lo + (hi - lo) * t
    return img, depth


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
