import numpy as np
import pytest
from scipy.special import expit

from aquarender.discriminator import (
    CHANNELS,
    INPUT_HEIGHT,
    INPUT_WIDTH,
    KERNEL,
    LEAK,
    Discriminator,
)
from aquarender.exceptions import ContractViolationError
from aquarender.fitting import TrainConfig, disc_update


def disc_loss(disc, reals, fakes):
    z_r = disc.forward_logits(reals)
    z_f = disc.forward_logits(fakes)
    return float(np.logaddexp(0, -z_r).mean() + np.logaddexp(0, z_f).mean())


class TestForward:
    def test_zero_weights_give_half(self, rng):
        d = Discriminator(seed=0)
        for p in d.parameters():
            p[...] = 0.0
        x = rng.uniform(0, 1, (INPUT_HEIGHT, INPUT_WIDTH, 3))
        assert d.forward(x) == 0.5

    def test_output_strictly_inside_unit_interval(self, rng):
        d = Discriminator(seed=1)
        probs = d.forward(rng.uniform(0, 1, (8, INPUT_HEIGHT, INPUT_WIDTH, 3)))
        assert np.all(probs > 0.0) and np.all(probs < 1.0)

    def test_deterministic(self, rng):
        d = Discriminator(seed=2)
        x = rng.uniform(0, 1, (INPUT_HEIGHT, INPUT_WIDTH, 3))
        assert d.forward(x) == d.forward(x)

    def test_wrong_shape_rejected(self, rng):
        d = Discriminator(seed=0)
        with pytest.raises(ContractViolationError):
            d.forward(rng.uniform(0, 1, (32, 32, 3)))

    def test_seeded_init_reproducible(self):
        a, b = Discriminator(seed=7), Discriminator(seed=7)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa, pb)

    def test_reduced_scalar_chain_matches_hand_computation(self):
        # Center-tap kernels routing one channel turn the network into a
        # scalar recurrence a hand calculation can follow exactly.
        d = Discriminator(seed=0)
        gains = (0.8, 1.3, -0.7, 0.9)
        for layer, (w, b, gain) in enumerate(zip(d.conv_w, d.conv_b, gains)):
            w[...] = 0.0
            b[...] = 0.0
            w[KERNEL // 2, KERNEL // 2, 0, 0] = gain
        d.fc_w[...] = 0.0
        feat_h, feat_w = INPUT_HEIGHT // 16, INPUT_WIDTH // 16
        # channel 0 of the final feature plane occupies every CHANNELS[-1]-th slot
        d.fc_w[0::CHANNELS[-1], 0] = 0.05
        d.fc_b[...] = 0.1

        value = 0.6
        x = np.full((INPUT_HEIGHT, INPUT_WIDTH, 3), value)
        signal = value
        for gain in gains:
            pre = gain * signal
            signal = pre if pre > 0 else LEAK * pre
        logit = 0.05 * signal * (feat_h * feat_w) + 0.1
        assert d.forward_logits(x)[0] == pytest.approx(logit, abs=1e-6)
        assert d.forward(x) == pytest.approx(expit(logit), abs=1e-6)


class TestGradients:
    def test_param_gradients_match_finite_differences(self, rng):
        d = Discriminator(seed=3)
        reals = rng.uniform(0, 1, (2, INPUT_HEIGHT, INPUT_WIDTH, 3))
        fakes = rng.uniform(0, 1, (2, INPUT_HEIGHT, INPUT_WIDTH, 3))
        logits, cache = d.forward_logits(np.concatenate([reals, fakes]),
                                         keep_cache=True)
        z_r, z_f = logits[:2], logits[2:]
        dlogits = np.concatenate([(expit(z_r) - 1) / 2, expit(z_f) / 2])
        grads, _ = d.backward(cache, dlogits, want_params=True)
        eps = 1e-6
        coord_rng = np.random.default_rng(0)
        for arr, g in zip(d.parameters(), grads):
            flat, gflat = arr.reshape(-1), g.reshape(-1)
            for j in coord_rng.choice(flat.size, size=min(8, flat.size), replace=False):
                orig = flat[j]
                flat[j] = orig + eps
                lp = disc_loss(d, reals, fakes)
                flat[j] = orig - eps
                lm = disc_loss(d, reals, fakes)
                flat[j] = orig
                fd = (lp - lm) / (2 * eps)
                assert gflat[j] == pytest.approx(fd, rel=1e-3, abs=1e-8)

    def test_input_gradient_matches_finite_differences(self, rng):
        d = Discriminator(seed=4)
        x = rng.uniform(0.1, 0.9, (1, INPUT_HEIGHT, INPUT_WIDTH, 3))
        logits, cache = d.forward_logits(x, keep_cache=True)
        _, dinput = d.backward(cache, np.ones(1), want_params=False, want_input=True)
        eps = 1e-6
        coord_rng = np.random.default_rng(1)
        for _ in range(12):
            i = coord_rng.integers(0, INPUT_HEIGHT)
            j = coord_rng.integers(0, INPUT_WIDTH)
            ch = coord_rng.integers(0, 3)
            orig = x[0, i, j, ch]
            x[0, i, j, ch] = orig + eps
            lp = d.forward_logits(x)[0]
            x[0, i, j, ch] = orig - eps
            lm = d.forward_logits(x)[0]
            x[0, i, j, ch] = orig
            fd = (lp - lm) / (2 * eps)
            assert dinput[0, i, j, ch] == pytest.approx(fd, rel=1e-3, abs=1e-8)


class TestUpdate:
    def test_identical_batches_loss_bound(self, rng):
        # with reals == fakes the optimum sits at D == 0.5: loss >= 2 log 2
        d = Discriminator(seed=5)
        batch = rng.uniform(0, 1, (4, INPUT_HEIGHT, INPUT_WIDTH, 3))
        cfg = TrainConfig(batch_size=4, learning_rate=0.0)
        loss = disc_update(batch, batch, d, cfg)
        assert loss >= 2 * np.log(2) - 1e-12

    def test_zero_learning_rate_keeps_weights(self, rng):
        d = Discriminator(seed=6)
        before = [p.copy() for p in d.parameters()]
        reals = rng.uniform(0, 1, (2, INPUT_HEIGHT, INPUT_WIDTH, 3))
        fakes = rng.uniform(0, 1, (2, INPUT_HEIGHT, INPUT_WIDTH, 3))
        disc_update(reals, fakes, d, TrainConfig(batch_size=2, learning_rate=0.0))
        for b, p in zip(before, d.parameters()):
            np.testing.assert_array_equal(b, p)

    def test_update_reduces_loss_on_fixed_batch(self, rng):
        d = Discriminator(seed=7)
        reals = np.clip(rng.uniform(0.5, 1.0, (8, INPUT_HEIGHT, INPUT_WIDTH, 3)), 0, 1)
        fakes = np.clip(rng.uniform(0.0, 0.5, (8, INPUT_HEIGHT, INPUT_WIDTH, 3)), 0, 1)
        cfg = TrainConfig(batch_size=8, learning_rate=1e-3)
        first = disc_loss(d, reals, fakes)
        for _ in range(20):
            disc_update(reals, fakes, d, cfg)
        assert disc_loss(d, reals, fakes) < first

    def test_empty_batch_rejected(self, rng):
        d = Discriminator(seed=0)
        good = rng.uniform(0, 1, (2, INPUT_HEIGHT, INPUT_WIDTH, 3))
        with pytest.raises(ContractViolationError):
            disc_update(np.zeros((0, INPUT_HEIGHT, INPUT_WIDTH, 3)), good, d,
                        TrainConfig(batch_size=1))

    def test_weights_finite_after_updates(self, rng):
        d = Discriminator(seed=8)
        cfg = TrainConfig(batch_size=2, learning_rate=0.01)
        for i in range(5):
            reals = rng.uniform(0, 1, (2, INPUT_HEIGHT, INPUT_WIDTH, 3))
            fakes = rng.uniform(0, 1, (2, INPUT_HEIGHT, INPUT_WIDTH, 3))
            disc_update(reals, fakes, d, cfg)
        d.check_finite()
