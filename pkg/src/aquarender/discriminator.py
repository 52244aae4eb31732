"""Fixed convolutional real-vs-synthetic classifier, implemented in numpy.

Architecture (input 48 x 64 x 3, values in [0, 1]): four 5x5 stride-2
convolutions widening the channels 8 -> 16 -> 32 -> 64, each followed by a
leaky ReLU with leak 0.2, then a single affine layer to one logit and a
sigmoid.  Real images carry label 1, synthetic images label 0.

Forward and reverse passes are explicit so gradients with respect to both
the weights and the input image are available without an autodiff
framework.  All arrays are float64 and updates use a first-order
adaptive-moment optimizer whose accumulators live on the instance.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from .exceptions import ContractViolationError, TrainingDivergenceError

INPUT_HEIGHT = 48
INPUT_WIDTH = 64
INPUT_CHANNELS = 3
CHANNELS = (8, 16, 32, 64)
KERNEL = 5
STRIDE = 2
PAD = 2
LEAK = 0.2


def _im2col(x: np.ndarray) -> np.ndarray:
    """Unfold 5x5 stride-2 windows of an NHWC batch into a 2D matrix.

    Output shape is ``(B * OH * OW, KERNEL * KERNEL * C)`` with
    ``OH = H // 2`` and ``OW = W // 2`` (even H, W assumed; the fixed
    48 x 64 input halves cleanly through all four layers).
    """
    b, h, w, c = x.shape
    oh, ow = (h + 2 * PAD - KERNEL) // STRIDE + 1, (w + 2 * PAD - KERNEL) // STRIDE + 1
    xp = np.pad(x, ((0, 0), (PAD, PAD), (PAD, PAD), (0, 0)))
    s = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, oh, ow, KERNEL, KERNEL, c),
        strides=(s[0], s[1] * STRIDE, s[2] * STRIDE, s[1], s[2], s[3]),
    )
    return windows.reshape(b * oh * ow, KERNEL * KERNEL * c)


def _col2im(dcols: np.ndarray, x_shape: Tuple[int, int, int, int]) -> np.ndarray:
    """Scatter-add column gradients back onto the (unpadded) input grid."""
    b, h, w, c = x_shape
    oh, ow = (h + 2 * PAD - KERNEL) // STRIDE + 1, (w + 2 * PAD - KERNEL) // STRIDE + 1
    d6 = dcols.reshape(b, oh, ow, KERNEL, KERNEL, c)
    dxp = np.zeros((b, h + 2 * PAD, w + 2 * PAD, c))
    for i in range(KERNEL):
        for j in range(KERNEL):
            dxp[:, i:i + STRIDE * oh:STRIDE, j:j + STRIDE * ow:STRIDE, :] += d6[:, :, :, i, j, :]
    return dxp[:, PAD:PAD + h, PAD:PAD + w, :]


class Discriminator:
    """Small convolutional classifier with explicit reverse-mode gradients."""

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.conv_w: List[np.ndarray] = []
        self.conv_b: List[np.ndarray] = []
        c_in = INPUT_CHANNELS
        h, w = INPUT_HEIGHT, INPUT_WIDTH
        for c_out in CHANNELS:
            bound = np.sqrt(1.0 / (KERNEL * KERNEL * c_in))
            self.conv_w.append(rng.uniform(-bound, bound, (KERNEL, KERNEL, c_in, c_out)))
            self.conv_b.append(np.zeros(c_out))
            c_in = c_out
            h //= 2
            w //= 2
        self._feat_dim = h * w * CHANNELS[-1]
        bound = np.sqrt(1.0 / self._feat_dim)
        self.fc_w = rng.uniform(-bound, bound, (self._feat_dim, 1))
        self.fc_b = np.zeros(1)
        self.adam_m = [np.zeros_like(p) for p in self.parameters()]
        self.adam_v = [np.zeros_like(p) for p in self.parameters()]
        self.adam_t = 0

    # -- parameter bookkeeping -------------------------------------------

    def parameters(self) -> List[np.ndarray]:
        """Trainable arrays in a fixed order (conv weights/biases, affine)."""
        params: List[np.ndarray] = []
        for w, b in zip(self.conv_w, self.conv_b):
            params.extend((w, b))
        params.extend((self.fc_w, self.fc_b))
        return params

    def parameter_names(self) -> List[str]:
        names: List[str] = []
        for i in range(len(self.conv_w)):
            names.extend((f"conv{i + 1}_w", f"conv{i + 1}_b"))
        names.extend(("fc_w", "fc_b"))
        return names

    def state_arrays(self) -> List[Tuple[str, np.ndarray]]:
        """Weights plus optimizer moments, for serialization."""
        out = list(zip(self.parameter_names(), self.parameters()))
        out += [(f"m_{n}", m) for n, m in zip(self.parameter_names(), self.adam_m)]
        out += [(f"v_{n}", v) for n, v in zip(self.parameter_names(), self.adam_v)]
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray], adam_t: int = 0) -> None:
        params = self.parameters()
        for i, name in enumerate(self.parameter_names()):
            for prefix, dest in (("", params[i]), ("m_", self.adam_m[i]), ("v_", self.adam_v[i])):
                key = prefix + name
                if key not in arrays:
                    raise ContractViolationError(f"missing array '{key}' in state")
                src = np.asarray(arrays[key], dtype=np.float64)
                if src.shape != dest.shape:
                    raise ContractViolationError(
                        f"array '{key}' has shape {src.shape}, expected {dest.shape}"
                    )
                dest[...] = src
        self.adam_t = int(adam_t)

    # -- forward / backward ----------------------------------------------

    def _check_batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != (INPUT_HEIGHT, INPUT_WIDTH, INPUT_CHANNELS):
            raise ContractViolationError(
                f"input must be (B, {INPUT_HEIGHT}, {INPUT_WIDTH}, {INPUT_CHANNELS}), got {x.shape}"
            )
        return x

    def forward_logits(self, x, keep_cache: bool = False):
        """Logits for a batch; optionally keep activations for a reverse pass."""
        x = self._check_batch(x)
        acts = [x]
        pre: List[np.ndarray] = []
        cols: List[np.ndarray] = []
        h = x
        for w, b in zip(self.conv_w, self.conv_b):
            c = _im2col(h)
            oh, ow = h.shape[1] // 2, h.shape[2] // 2
            z = (c @ w.reshape(-1, w.shape[3]) + b).reshape(h.shape[0], oh, ow, w.shape[3])
            h = np.where(z > 0.0, z, LEAK * z)
            if keep_cache:
                cols.append(c)
                pre.append(z)
                acts.append(h)
        flat = h.reshape(h.shape[0], -1)
        logits = (flat @ self.fc_w + self.fc_b)[:, 0]
        if keep_cache:
            return logits, (acts, pre, cols, flat)
        return logits

    def forward(self, x) -> np.ndarray:
        """Probability of "real" per image; scalar for a single image.

        Deterministic; output lies strictly in (0, 1).
        """
        single = np.asarray(x).ndim == 3
        probs = expit(self.forward_logits(x))
        return probs[0] if single else probs

    def backward(self, cache, dlogits, want_params: bool = True,
                 want_input: bool = False):
        """Reverse-mode pass from logit gradients.

        Returns ``(param_grads, input_grad)`` where either entry is ``None``
        if not requested.  ``param_grads`` is ordered like
        :meth:`parameters`.
        """
        acts, pre, cols, flat = cache
        dlogits = np.asarray(dlogits, dtype=np.float64).reshape(-1)
        grads: Optional[List[np.ndarray]] = [None] * (2 * len(self.conv_w) + 2) if want_params else None
        if want_params:
            grads[-2] = flat.T @ dlogits[:, None]
            grads[-1] = np.array([dlogits.sum()])
        dh = (dlogits[:, None] @ self.fc_w.T).reshape(acts[-1].shape)
        for layer in reversed(range(len(self.conv_w))):
            dz = dh * np.where(pre[layer] > 0.0, 1.0, LEAK)
            w = self.conv_w[layer]
            dz2 = dz.reshape(-1, w.shape[3])
            if want_params:
                grads[2 * layer] = (cols[layer].T @ dz2).reshape(w.shape)
                grads[2 * layer + 1] = dz2.sum(axis=0)
            if layer == 0 and not want_input:
                dh = None
                break
            dcols = dz2 @ w.reshape(-1, w.shape[3]).T
            dh = _col2im(dcols, acts[layer].shape)
        return grads, (dh if want_input else None)

    # -- optimization -------------------------------------------------------

    def adam_step(self, grads: List[np.ndarray], learning_rate: float,
                  beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-8) -> None:
        """One adaptive-moment update of all weights in place."""
        self.adam_t += 1
        t = self.adam_t
        for p, g, m, v in zip(self.parameters(), grads, self.adam_m, self.adam_v):
            m[...] = beta1 * m + (1.0 - beta1) * g
            v[...] = beta2 * v + (1.0 - beta2) * g * g
            m_hat = m / (1.0 - beta1 ** t)
            v_hat = v / (1.0 - beta2 ** t)
            p -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)

    def check_finite(self, context: str = "update") -> None:
        for name, p in zip(self.parameter_names(), self.parameters()):
            if not np.all(np.isfinite(p)):
                raise TrainingDivergenceError(
                    f"non-finite discriminator weights in '{name}' after {context}",
                    state={"array": name, "adam_t": self.adam_t},
                )
