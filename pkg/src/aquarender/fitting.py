"""Estimating model parameters from images.

Two routes are provided:

* :func:`train` fits the ten natural-domain parameters (eta x3, beta x3,
  a, b, c, k) adversarially against an unlabeled set of real underwater
  images, alternating discriminator and generator updates per batch;
* :func:`fit_direct` solves the same parameters by nonlinear least squares
  when paired (in-air, depth, underwater) data is available, serving as a
  supervised oracle.

Both work in a reparameterized domain where every parameter constraint
holds by construction:

    eta = exp(t_eta)            beta = logistic(t_beta)
    a = exp(t_a)                c = exp(t_c)
    k = exp(t_k)                b = (1 - eps) * tanh(t_b) * sqrt(3 a c)

so ``eta > 0``, ``beta in (0, 1)``, ``a > 0``, ``c > 0``, ``k > 0`` and
``4 b^2 - 12 a c < 0`` after every optimizer step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize
from scipy.special import expit, logit

from .discriminator import INPUT_HEIGHT, INPUT_WIDTH, Discriminator
from .exceptions import (
    ContractViolationError,
    InvalidParameterError,
    TrainingDivergenceError,
    UnderConstrainedError,
)
from .physics import PARAM_NAMES, RenderModel, render, render_gradients
from .validation import as_depth, as_image, check_paired

__all__ = [
    "TrainConfig",
    "EpochStats",
    "TrainReport",
    "AdamState",
    "model_to_theta",
    "theta_to_model",
    "natural_grad_to_theta_grad",
    "default_model",
    "disc_update",
    "gen_update",
    "train",
    "DirectFitResult",
    "fit_direct",
]

# Margin keeping |b| strictly below sqrt(3ac) in the reparameterization.
_B_MARGIN = 1e-3


@dataclass
class TrainConfig:
    """Adversarial training hyperparameters.

    ``learning_rate`` drives the discriminator (and the generator too when
    ``gen_learning_rate`` is left unset).  The generator has only ten
    physical parameters, so short desk-scale runs typically raise its rate
    to cover the same parameter distance the default rate covers over
    full-size datasets.
    """

    batch_size: int = 64
    learning_rate: float = 0.0002
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    holdout_fraction: float = 0.1
    gen_learning_rate: Optional[float] = None
    gen_rate_decay: float = 0.1
    tail_average: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0.0:
            raise InvalidParameterError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise InvalidParameterError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise InvalidParameterError(
                f"holdout_fraction must lie in [0, 1), got {self.holdout_fraction}"
            )
        if self.gen_learning_rate is not None and self.gen_learning_rate < 0.0:
            raise InvalidParameterError(
                f"gen_learning_rate must be >= 0, got {self.gen_learning_rate}"
            )
        if not 0.0 < self.gen_rate_decay <= 1.0:
            raise InvalidParameterError(
                f"gen_rate_decay must lie in (0, 1], got {self.gen_rate_decay}"
            )
        if not 0.0 <= self.tail_average <= 1.0:
            raise InvalidParameterError(
                f"tail_average must lie in [0, 1], got {self.tail_average}"
            )

    @property
    def effective_gen_rate(self) -> float:
        return self.learning_rate if self.gen_learning_rate is None else self.gen_learning_rate


@dataclass
class EpochStats:
    epoch: int
    disc_loss: float
    gen_loss: float
    disc_accuracy: float
    params: np.ndarray  # natural-domain snapshot, ordered as PARAM_NAMES


@dataclass
class TrainReport:
    """Per-epoch losses, held-out discriminator accuracy, and parameter trajectory."""

    epochs: List[EpochStats] = field(default_factory=list)

    def rows(self) -> List[List[object]]:
        header = ["epoch", "disc_loss", "gen_loss", "disc_accuracy", *PARAM_NAMES]
        out: List[List[object]] = [header]
        for e in self.epochs:
            out.append([e.epoch, repr(e.disc_loss), repr(e.gen_loss),
                        repr(e.disc_accuracy), *[repr(v) for v in e.params]])
        return out


# ---------------------------------------------------------------------------
# Constraint reparameterization
# ---------------------------------------------------------------------------

def model_to_theta(model: RenderModel) -> np.ndarray:
    """Map natural parameters to the unconstrained domain.

    Values of ``b`` within a hair of the ``sqrt(3ac)`` bound are nudged
    inside the representable band ``|b| <= (1 - eps) sqrt(3ac)``.
    """
    nat = model.param_vector()
    theta = np.empty_like(nat)
    theta[0:3] = np.log(nat[0:3])
    theta[3:6] = logit(np.clip(nat[3:6], 1e-12, 1.0 - 1e-12))
    a, b, c, k = nat[6:10]
    theta[6] = np.log(a)
    theta[8] = np.log(c) if c > 0.0 else np.log(1e-300)
    ratio = b / ((1.0 - _B_MARGIN) * np.sqrt(3.0 * a * c)) if c > 0.0 else 0.0
    theta[7] = np.arctanh(np.clip(ratio, -1.0 + 1e-12, 1.0 - 1e-12))
    theta[9] = np.log(k)
    return theta


def _theta_to_natural(theta: np.ndarray) -> np.ndarray:
    nat = np.empty_like(theta)
    nat[0:3] = np.exp(theta[0:3])
    nat[3:6] = expit(theta[3:6])
    a = np.exp(theta[6])
    c = np.exp(theta[8])
    nat[6] = a
    nat[7] = (1.0 - _B_MARGIN) * np.tanh(theta[7]) * np.sqrt(3.0 * a * c)
    nat[8] = c
    nat[9] = np.exp(theta[9])
    return nat


def theta_to_model(theta, noise_sigma: float = 0.0,
                   max_altitude: float = 2.0) -> RenderModel:
    """Build a (necessarily valid) model from unconstrained parameters."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (len(PARAM_NAMES),):
        raise InvalidParameterError(
            f"theta must have shape ({len(PARAM_NAMES)},), got {theta.shape}"
        )
    return RenderModel.from_param_vector(
        _theta_to_natural(theta), noise_sigma=noise_sigma, max_altitude=max_altitude
    )


def _reparam_jacobian(theta: np.ndarray) -> np.ndarray:
    """d(natural) / d(theta) as a 10 x 10 matrix (rows natural, cols theta)."""
    nat = _theta_to_natural(theta)
    jac = np.zeros((len(PARAM_NAMES), len(PARAM_NAMES)))
    for i in range(3):
        jac[i, i] = nat[i]                      # d eta / d t_eta
        jac[3 + i, 3 + i] = nat[3 + i] * (1.0 - nat[3 + i])  # d beta / d t_beta
    a, b, c, k = nat[6:10]
    jac[6, 6] = a
    jac[7, 6] = 0.5 * b                          # b tracks sqrt(a)
    jac[7, 7] = (1.0 - _B_MARGIN) * np.sqrt(3.0 * a * c) / np.cosh(theta[7]) ** 2
    jac[7, 8] = 0.5 * b                          # b tracks sqrt(c)
    jac[8, 8] = c
    jac[9, 9] = k
    return jac


def natural_grad_to_theta_grad(theta, natural_grad) -> np.ndarray:
    """Chain a gradient in natural parameters into the unconstrained domain."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(natural_grad, dtype=np.float64)
    return _reparam_jacobian(theta).T @ g


def default_model(noise_sigma: float = 0.0, max_altitude: float = 2.0) -> RenderModel:
    """Neutral starting point for either fitting route."""
    return RenderModel.from_param_vector(
        np.array([0.40, 0.25, 0.15, 0.10, 0.10, 0.10, 0.10, 0.0, 0.01, 1.0]),
        noise_sigma=noise_sigma,
        max_altitude=max_altitude,
    )


@dataclass
class AdamState:
    """Adaptive-moment accumulators for the generator's ten parameters."""

    m: np.ndarray = field(default_factory=lambda: np.zeros(len(PARAM_NAMES)))
    v: np.ndarray = field(default_factory=lambda: np.zeros(len(PARAM_NAMES)))
    t: int = 0

    def step(self, x: np.ndarray, grad: np.ndarray, learning_rate: float,
             beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
        self.t += 1
        self.m = beta1 * self.m + (1.0 - beta1) * grad
        self.v = beta2 * self.v + (1.0 - beta2) * grad * grad
        m_hat = self.m / (1.0 - beta1 ** self.t)
        v_hat = self.v / (1.0 - beta2 ** self.t)
        return x - learning_rate * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# Adversarial updates
# ---------------------------------------------------------------------------

def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _as_batch(images, name: str) -> np.ndarray:
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[0] < 1:
        raise ContractViolationError(f"{name} must be a non-empty batch of images")
    if arr.shape[1:] != (INPUT_HEIGHT, INPUT_WIDTH, 3):
        raise ContractViolationError(
            f"{name} must be {INPUT_HEIGHT}x{INPUT_WIDTH}x3, got {arr.shape[1:]}"
        )
    return arr


def disc_update(reals, fakes, disc: Discriminator, cfg: TrainConfig) -> float:
    """One optimizer step on the classification value function.

    Minimizes ``-[mean log D(real) + mean log(1 - D(fake))]`` and returns
    the pre-step loss.  Losses and logit gradients use softplus forms so
    extreme logits stay finite.
    """
    reals = _as_batch(reals, "real batch")
    fakes = _as_batch(fakes, "fake batch")
    n_r, n_f = reals.shape[0], fakes.shape[0]
    x = np.concatenate([reals, fakes], axis=0)
    logits, cache = disc.forward_logits(x, keep_cache=True)
    z_r, z_f = logits[:n_r], logits[n_r:]
    loss = float(_softplus(-z_r).mean() + _softplus(z_f).mean())
    if not np.isfinite(loss):
        raise TrainingDivergenceError(
            "discriminator loss is not finite",
            state={"loss": loss, "logits_real": z_r, "logits_fake": z_f,
                   "adam_t": disc.adam_t},
        )
    dlogits = np.concatenate([(expit(z_r) - 1.0) / n_r, expit(z_f) / n_f])
    grads, _ = disc.backward(cache, dlogits, want_params=True)
    disc.adam_step(grads, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    disc.check_finite("discriminator update")
    return loss


def gen_update(model: RenderModel, scenes: Sequence[Tuple[np.ndarray, np.ndarray]],
               disc: Discriminator, cfg: TrainConfig,
               opt: Optional[AdamState] = None,
               zero_is_missing: bool = False,
               learning_rate: Optional[float] = None) -> Tuple[RenderModel, float]:
    """One ascent step of ``mean log D(render(scene, model))`` over theta.

    The discriminator's input-image gradient (reverse mode) is contracted
    with the closed-form render derivatives, chained through the
    reparameterization, and applied with an adaptive-moment step, so all
    parameter constraints hold after the update.  Probe renders use zero
    noise, matching the differentiation convention.  Returns the updated
    model and the pre-step generator loss ``-mean log D``.
    """
    if not scenes:
        raise ContractViolationError("scene batch must be non-empty")
    probe = model.without_noise()
    fakes = np.stack([
        render(img, depth, probe, seed=0, zero_is_missing=zero_is_missing)
        for img, depth in scenes
    ])
    fakes = _as_batch(fakes, "rendered batch")
    n = fakes.shape[0]
    logits, cache = disc.forward_logits(fakes, keep_cache=True)
    loss = float(_softplus(-logits).mean())
    if not np.isfinite(loss):
        raise TrainingDivergenceError(
            "generator loss is not finite",
            state={"loss": loss, "logits": logits, "params": model.param_vector()},
        )
    # d(-mean log D)/d logit = (sigmoid - 1) / n
    dlogits = (expit(logits) - 1.0) / n
    _, dinput = disc.backward(cache, dlogits, want_params=False, want_input=True)
    nat_grad = np.zeros(len(PARAM_NAMES))
    for i, (img, depth) in enumerate(scenes):
        grads = render_gradients(img, depth, probe, zero_is_missing=zero_is_missing)
        for j, name in enumerate(PARAM_NAMES):
            nat_grad[j] += float(np.sum(dinput[i] * grads[name]))
    theta = model_to_theta(model)
    theta_grad = natural_grad_to_theta_grad(theta, nat_grad)
    if opt is None:
        opt = AdamState()
    rate = cfg.effective_gen_rate if learning_rate is None else learning_rate
    new_theta = opt.step(theta, theta_grad, rate,
                         cfg.beta1, cfg.beta2, cfg.adam_eps)
    if not np.all(np.isfinite(new_theta)):
        raise TrainingDivergenceError(
            "generator parameters diverged",
            state={"theta": new_theta, "grad": theta_grad},
        )
    if np.array_equal(new_theta, theta):
        return model, loss
    return theta_to_model(new_theta, model.noise_sigma, model.max_altitude), loss


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _holdout_split(n: int, cfg: TrainConfig, what: str) -> int:
    n_hold = max(1, int(cfg.holdout_fraction * n)) if cfg.holdout_fraction > 0 else 0
    if n - n_hold < cfg.batch_size:
        raise InvalidParameterError(
            f"{what}: {n} items leave fewer than one batch of {cfg.batch_size} "
            f"after holding out {n_hold}"
        )
    return n_hold


def train(cfg: TrainConfig, real_imgs: Sequence[np.ndarray],
          scenes: Sequence[Tuple[np.ndarray, np.ndarray]],
          init_model: Optional[RenderModel] = None,
          max_altitude: Optional[float] = None,
          noise_sigma: float = 0.0,
          zero_is_missing: bool = False,
          ) -> Tuple[RenderModel, Discriminator, TrainReport]:
    """Alternate discriminator and generator updates over seeded batches.

    ``real_imgs`` is an unlabeled set of underwater images and ``scenes``
    a set of in-air (image, depth) pairs, all already at the 48 x 64 fit
    resolution.  Each epoch shuffles both sets without replacement and
    runs ``min(N_real, N_scene) // batch_size`` update pairs; fakes shown
    to the discriminator are rendered with the model's configured noise.
    Deterministic given the config seed and dataset order.
    """
    if len(real_imgs) == 0 or len(scenes) == 0:
        raise ContractViolationError("both datasets must be non-empty")
    reals = _as_batch(np.stack([as_image(im) for im in real_imgs]), "real dataset")
    scene_list = []
    for img, depth in scenes:
        img = as_image(img)
        depth = as_depth(depth)
        check_paired(img, depth)
        if img.shape[:2] != (INPUT_HEIGHT, INPUT_WIDTH):
            raise ContractViolationError(
                f"scenes must be {INPUT_HEIGHT}x{INPUT_WIDTH}, got {img.shape[:2]}"
            )
        scene_list.append((img, depth))

    if init_model is None:
        model = default_model(noise_sigma=noise_sigma,
                              max_altitude=2.0 if max_altitude is None else max_altitude)
    else:
        model = init_model

    rng = np.random.default_rng(cfg.seed)
    disc = Discriminator(seed=int(rng.integers(2 ** 31)))
    gen_opt = AdamState()

    n_hold_r = _holdout_split(reals.shape[0], cfg, "real dataset")
    n_hold_s = _holdout_split(len(scene_list), cfg, "scene dataset")
    perm_r = rng.permutation(reals.shape[0])
    perm_s = rng.permutation(len(scene_list))
    hold_r = reals[perm_r[:n_hold_r]]
    hold_s = [scene_list[i] for i in perm_s[:n_hold_s]]
    train_r = reals[perm_r[n_hold_r:]]
    train_s = [scene_list[i] for i in perm_s[n_hold_s:]]

    n_batches = min(train_r.shape[0], len(train_s)) // cfg.batch_size
    report = TrainReport()
    for epoch in range(1, cfg.epochs + 1):
        order_r = rng.permutation(train_r.shape[0])
        order_s = rng.permutation(len(train_s))
        d_losses = []
        g_losses = []
        for b in range(n_batches):
            sel_r = order_r[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            sel_s = order_s[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch_scenes = [train_s[i] for i in sel_s]
            noise_seed = int(rng.integers(2 ** 31))
            fakes = np.stack([
                render(img, depth, model, seed=noise_seed + i,
                       zero_is_missing=zero_is_missing)
                for i, (img, depth) in enumerate(batch_scenes)
            ])
            d_losses.append(disc_update(train_r[sel_r], fakes, disc, cfg))
            model, g_loss = gen_update(model, batch_scenes, disc, cfg,
                                       opt=gen_opt, zero_is_missing=zero_is_missing)
            g_losses.append(g_loss)
        acc = _holdout_accuracy(disc, hold_r, hold_s, model, zero_is_missing)
        report.epochs.append(EpochStats(
            epoch=epoch,
            disc_loss=float(np.mean(d_losses)) if d_losses else float("nan"),
            gen_loss=float(np.mean(g_losses)) if g_losses else float("nan"),
            disc_accuracy=acc,
            params=model.param_vector(),
        ))
    return model, disc, report


def _holdout_accuracy(disc: Discriminator, hold_r: np.ndarray,
                      hold_s: Sequence[Tuple[np.ndarray, np.ndarray]],
                      model: RenderModel, zero_is_missing: bool) -> float:
    if hold_r.shape[0] == 0 or len(hold_s) == 0:
        return float("nan")
    probe = model.without_noise()
    fakes = np.stack([
        render(img, depth, probe, seed=0, zero_is_missing=zero_is_missing)
        for img, depth in hold_s
    ])
    p_r = disc.forward(hold_r)
    p_f = disc.forward(fakes)
    correct = float(np.count_nonzero(p_r > 0.5) + np.count_nonzero(p_f < 0.5))
    return correct / (hold_r.shape[0] + fakes.shape[0])


# ---------------------------------------------------------------------------
# Direct least-squares oracle
# ---------------------------------------------------------------------------

@dataclass
class DirectFitResult:
    """Fitted model plus the residual actually achieved."""

    model: RenderModel
    residual_rms: float
    n_residuals: int


def fit_direct(pairs: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]],
               noise_sigma: float = 0.0,
               max_altitude: float = 2.0,
               init_model: Optional[RenderModel] = None,
               zero_is_missing: bool = False,
               min_entries: int = 30) -> DirectFitResult:
    """Nonlinear least squares on paired (in-air, depth, underwater) data.

    Minimizes the squared residual between renders and the observed
    underwater images over the ten parameters, using the analytic render
    derivatives chained through the reparameterization.  Residuals only
    cover channel samples where the observation is strictly inside (0, 1)
    (saturated samples carry no usable constraint) and, with
    ``zero_is_missing``, where depth is known.
    """
    if len(pairs) == 0:
        raise ContractViolationError("at least one pair is required")
    prepared = []
    for air, depth, uw in pairs:
        air = as_image(air, "in-air image")
        depth = as_depth(depth)
        uw = as_image(uw, "underwater image")
        check_paired(air, depth)
        check_paired(air, uw, "in-air image", "underwater image")
        mask = (uw > 0.0) & (uw < 1.0)
        if zero_is_missing:
            mask &= (depth > 0.0)[:, :, None]
        prepared.append((air, depth, uw, mask))

    n_entries = int(sum(m.sum() for *_, m in prepared))
    if n_entries < max(min_entries, len(PARAM_NAMES)):
        raise UnderConstrainedError(
            f"only {n_entries} unsaturated samples available; the fit needs "
            f"at least {max(min_entries, len(PARAM_NAMES))}"
        )
    if not any(np.any((depth > 0.0)[:, :, None] & m) for _, depth, _, m in prepared):
        raise UnderConstrainedError(
            "attenuation is unobservable: every usable sample has zero range"
        )

    if init_model is None:
        init_model = default_model(noise_sigma=noise_sigma, max_altitude=max_altitude)
    theta0 = model_to_theta(init_model)

    def residuals(theta: np.ndarray) -> np.ndarray:
        model = theta_to_model(theta, 0.0, max_altitude)
        parts = []
        for air, depth, uw, mask in prepared:
            pred = render(air, depth, model, seed=0, zero_is_missing=zero_is_missing)
            parts.append((pred - uw)[mask])
        return np.concatenate(parts)

    def jacobian(theta: np.ndarray) -> np.ndarray:
        model = theta_to_model(theta, 0.0, max_altitude)
        rows = []
        for air, depth, _, mask in prepared:
            grads = render_gradients(air, depth, model, zero_is_missing=zero_is_missing)
            rows.append(np.stack([grads[name][mask] for name in PARAM_NAMES], axis=1))
        return np.concatenate(rows, axis=0) @ _reparam_jacobian(theta)

    sol = optimize.least_squares(residuals, theta0, jac=jacobian, method="trf",
                                 max_nfev=300)
    final = residuals(sol.x)
    return DirectFitResult(
        model=theta_to_model(sol.x, noise_sigma, max_altitude),
        residual_rms=float(np.sqrt(np.mean(final ** 2))),
        n_residuals=n_entries,
    )
