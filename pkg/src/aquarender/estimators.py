"""Scikit-learn style wrappers around the functional core.

Samples are plain numpy arrays rather than a feature matrix: ``X`` is a
sequence of images or of (image, depth) / (image, depth, underwater)
tuples depending on the estimator.  All estimators follow the sklearn
contract (`get_params`/`set_params`, fitted attributes with trailing
underscores, `check_is_fitted`), so they clone and compose with the wider
ecosystem.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .fitting import TrainConfig, fit_direct, train
from .physics import CameraParams, RenderModel, WaterParams, render
from .restoration import RestorationResult, estimate_depth, restore_monocular

__all__ = [
    "WaterColumnSimulator",
    "AdversarialWaterModel",
    "DirectFitWaterModel",
    "MonocularRestorer",
]


def _build_model(eta, beta, a, b, c, k, noise_sigma, max_altitude) -> RenderModel:
    return RenderModel(
        water=WaterParams(eta=np.asarray(eta, dtype=np.float64),
                          beta=np.asarray(beta, dtype=np.float64)),
        camera=CameraParams(a=a, b=b, c=c, k=k),
        noise_sigma=noise_sigma,
        max_altitude=max_altitude,
    )


class WaterColumnSimulator(TransformerMixin, BaseEstimator):
    """Render in-air RGB-D scenes through a fixed water-column model.

    ``transform`` maps a sequence of (image, depth) pairs to underwater
    images, seeding per-sample noise deterministically.
    """

    def __init__(self, eta=(0.35, 0.2, 0.1), beta=(0.05, 0.1, 0.15),
                 a=0.1, b=0.01, c=0.001, k=1.0, noise_sigma=0.0,
                 max_altitude=2.0, seed=0, zero_is_missing=False):
        self.eta = eta
        self.beta = beta
        self.a = a
        self.b = b
        self.c = c
        self.k = k
        self.noise_sigma = noise_sigma
        self.max_altitude = max_altitude
        self.seed = seed
        self.zero_is_missing = zero_is_missing

    def fit(self, X=None, y=None):
        self.model_ = _build_model(self.eta, self.beta, self.a, self.b, self.c,
                                   self.k, self.noise_sigma, self.max_altitude)
        return self

    def transform(self, X: Sequence[Tuple[np.ndarray, np.ndarray]]) -> List[np.ndarray]:
        check_is_fitted(self, "model_")
        return [
            render(img, depth, self.model_, seed=self.seed + i,
                   zero_is_missing=self.zero_is_missing)
            for i, (img, depth) in enumerate(X)
        ]


class AdversarialWaterModel(BaseEstimator):
    """Fit the water-column model adversarially against real images.

    ``fit(X, y)`` takes in-air scenes ``X`` (sequence of (image, depth)
    pairs at the 48 x 64 fit resolution) and an unlabeled real underwater
    image set ``y``.  Fitted attributes: ``model_``, ``discriminator_``,
    ``report_``.
    """

    def __init__(self, batch_size=64, learning_rate=0.0002, epochs=10,
                 seed=0, beta1=0.9, beta2=0.999, holdout_fraction=0.1,
                 noise_sigma=0.0, max_altitude=2.0, zero_is_missing=False):
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed
        self.beta1 = beta1
        self.beta2 = beta2
        self.holdout_fraction = holdout_fraction
        self.noise_sigma = noise_sigma
        self.max_altitude = max_altitude
        self.zero_is_missing = zero_is_missing

    def fit(self, X: Sequence[Tuple[np.ndarray, np.ndarray]],
            y: Sequence[np.ndarray]):
        cfg = TrainConfig(batch_size=self.batch_size,
                          learning_rate=self.learning_rate,
                          epochs=self.epochs, seed=self.seed,
                          beta1=self.beta1, beta2=self.beta2,
                          holdout_fraction=self.holdout_fraction)
        self.model_, self.discriminator_, self.report_ = train(
            cfg, y, X, max_altitude=self.max_altitude,
            noise_sigma=self.noise_sigma, zero_is_missing=self.zero_is_missing,
        )
        return self

    def transform(self, X: Sequence[Tuple[np.ndarray, np.ndarray]]) -> List[np.ndarray]:
        check_is_fitted(self, "model_")
        return [
            render(img, depth, self.model_, seed=self.seed + i,
                   zero_is_missing=self.zero_is_missing)
            for i, (img, depth) in enumerate(X)
        ]


class DirectFitWaterModel(BaseEstimator):
    """Least-squares fit of the model on paired (in-air, depth, underwater) data.

    Fitted attributes: ``model_``, ``residual_rms_``, ``n_residuals_``.
    """

    def __init__(self, noise_sigma=0.0, max_altitude=2.0, zero_is_missing=False):
        self.noise_sigma = noise_sigma
        self.max_altitude = max_altitude
        self.zero_is_missing = zero_is_missing

    def fit(self, X: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]], y=None):
        result = fit_direct(X, noise_sigma=self.noise_sigma,
                            max_altitude=self.max_altitude,
                            zero_is_missing=self.zero_is_missing)
        self.model_ = result.model
        self.residual_rms_ = result.residual_rms
        self.n_residuals_ = result.n_residuals
        return self

    def transform(self, X: Sequence[Tuple[np.ndarray, np.ndarray]]) -> List[np.ndarray]:
        check_is_fitted(self, "model_")
        return [
            render(img, depth, self.model_, seed=i,
                   zero_is_missing=self.zero_is_missing)
            for i, (img, depth) in enumerate(X)
        ]


class MonocularRestorer(TransformerMixin, BaseEstimator):
    """Restore underwater images and estimate relative depth from one view.

    ``model`` may be a :class:`RenderModel` or ``None`` combined with an
    estimator exposing ``model_`` passed to :meth:`fit`.
    """

    def __init__(self, model: Optional[RenderModel] = None, grid_size=64,
                 refine_tol=1e-4, median_pass=True):
        self.model = model
        self.grid_size = grid_size
        self.refine_tol = refine_tol
        self.median_pass = median_pass

    def fit(self, X=None, y=None, source=None):
        if self.model is not None:
            self.model_ = self.model
        elif source is not None and hasattr(source, "model_"):
            self.model_ = source.model_
        else:
            raise ValueError("MonocularRestorer needs a model or a fitted source")
        return self

    def restore(self, uw: np.ndarray) -> RestorationResult:
        check_is_fitted(self, "model_")
        return restore_monocular(uw, self.model_, grid_size=self.grid_size,
                                 refine_tol=self.refine_tol,
                                 median_pass=self.median_pass)

    def transform(self, X: Sequence[np.ndarray]) -> List[np.ndarray]:
        return [self.restore(uw).restored for uw in X]

    def predict(self, X: Sequence[np.ndarray]) -> List[np.ndarray]:
        """Relative depth maps for a sequence of underwater images."""
        check_is_fitted(self, "model_")
        return [
            estimate_depth(uw, self.model_, grid_size=self.grid_size,
                           refine_tol=self.refine_tol,
                           median_pass=self.median_pass)
            for uw in X
        ]
