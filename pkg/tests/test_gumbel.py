"""Generator oracles: noise moments, Monte Carlo edge frequencies, and
finite-difference gradients through frozen-noise soft samples.
"""

from __future__ import annotations

import numpy as np
import pytest

from netinfer import autodiff as ad
from netinfer import gumbel

EULER_MASCHERONI = 0.5772156649


class FixedUniform:
    """Stand-in rng whose random() returns a preset array."""

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)

    def random(self, shape=()):
        return np.broadcast_to(self.value, shape).copy()


class TestGumbelNoise:
    def test_moments_match_standard_gumbel(self):
        draws = gumbel.gumbel_noise(np.random.default_rng(0), (1_000_000,))
        assert draws.mean() == pytest.approx(EULER_MASCHERONI, abs=0.01)
        assert draws.var() == pytest.approx(np.pi ** 2 / 6, abs=0.02)

    def test_quantile_formula(self):
        # u = 1/e gives -log(-log(1/e)) = 0 exactly.
        noise = gumbel.gumbel_noise(FixedUniform(1.0 / np.e), (3,))
        assert np.allclose(noise, 0.0, atol=1e-12)

    def test_extreme_uniforms_stay_finite(self):
        for u in (0.0, 1.0):
            noise = gumbel.gumbel_noise(FixedUniform(u), (5,))
            assert np.isfinite(noise).all()


class TestAnneal:
    def test_endpoints_and_midpoint(self):
        assert gumbel.anneal(5.0, 0.5, 0, 40) == pytest.approx(5.0)
        assert gumbel.anneal(5.0, 0.5, 40, 40) == pytest.approx(0.5)
        # Geometric interpolation: the midpoint is sqrt(5.0 * 0.5).
        assert gumbel.anneal(5.0, 0.5, 1, 2) == pytest.approx(np.sqrt(2.5))

    def test_monotone_decreasing(self):
        values = [gumbel.anneal(5.0, 0.5, e, 10) for e in range(11)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_degenerate_total_returns_start(self):
        assert gumbel.anneal(2.0, 1.0, 0, 0) == 2.0

    def test_validation(self):
        with pytest.raises(ValueError, match="tau_start >= tau_end"):
            gumbel.anneal(0.5, 5.0, 0, 10)
        with pytest.raises(ValueError, match="outside"):
            gumbel.anneal(5.0, 0.5, 11, 10)


class TestGeneratorConstruction:
    def test_slot_counts(self):
        rng = np.random.default_rng(0)
        assert len(gumbel.GumbelGenerator(6, "full_matrix", rng).slots) == 30
        assert len(gumbel.GumbelGenerator(6, "upper_triangle_symmetric", rng).slots) == 15
        gen = gumbel.GumbelGenerator(10, "completion_blocks", rng,
                                     observed_count=9,
                                     observed_block=np.zeros((9, 9)))
        assert len(gen.slots) == 9
        gen = gumbel.GumbelGenerator(10, "completion_blocks", rng,
                                     observed_count=8,
                                     observed_block=np.zeros((8, 8)))
        assert len(gen.slots) == 45 - 28

    def test_invalid_arguments(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="unknown layout"):
            gumbel.GumbelGenerator(5, "diagonal", rng)
        with pytest.raises(ValueError, match="tau must be positive"):
            gumbel.GumbelGenerator(5, "full_matrix", rng, tau=0.0)
        with pytest.raises(ValueError, match="needs observed_count"):
            gumbel.GumbelGenerator(5, "completion_blocks", rng)
        with pytest.raises(ValueError, match="observed_block shape"):
            gumbel.GumbelGenerator(5, "completion_blocks", rng,
                                   observed_count=3,
                                   observed_block=np.zeros((2, 2)))

    def test_logits_standard_normal_init(self):
        gen = gumbel.GumbelGenerator(40, "full_matrix", np.random.default_rng(1))
        flat = gen.logits.value.reshape(-1)
        assert flat.mean() == pytest.approx(0.0, abs=0.05)
        assert flat.std() == pytest.approx(1.0, abs=0.05)


class TestSoftSamples:
    def test_shape_symmetry_and_range(self):
        gen = gumbel.GumbelGenerator(7, "upper_triangle_symmetric",
                                     np.random.default_rng(2))
        soft = gen.sample_soft(np.random.default_rng(3)).value
        assert soft.shape == (7, 7)
        assert np.array_equal(soft, soft.T)
        assert np.array_equal(np.diag(soft), np.zeros(7))
        off = soft[~np.eye(7, dtype=bool)]
        assert (off > 0.0).all() and (off < 1.0).all()

    def test_full_matrix_slots_are_independent(self):
        gen = gumbel.GumbelGenerator(5, "full_matrix", np.random.default_rng(4))
        soft = gen.sample_soft(np.random.default_rng(5)).value
        assert not np.array_equal(soft, soft.T)

    def test_same_noise_reproduces_sample(self):
        gen = gumbel.GumbelGenerator(6, "upper_triangle_symmetric",
                                     np.random.default_rng(6))
        noise = gumbel.gumbel_noise(np.random.default_rng(7), gen.logits.shape)
        a = gen.sample_soft(noise=noise).value
        b = gen.sample_soft(noise=noise).value
        assert np.array_equal(a, b)

    def test_needs_rng_or_noise(self):
        gen = gumbel.GumbelGenerator(4, "upper_triangle_symmetric",
                                     np.random.default_rng(8))
        with pytest.raises(ValueError, match="need an rng"):
            gen.sample_soft()
        with pytest.raises(ValueError, match="tau must be positive"):
            gen.sample_soft(np.random.default_rng(0), tau=-1.0)

    def test_frozen_noise_gradient_matches_finite_differences(self):
        gen = gumbel.GumbelGenerator(5, "upper_triangle_symmetric",
                                     np.random.default_rng(9), tau=0.7)
        noise = gumbel.gumbel_noise(np.random.default_rng(10), gen.logits.shape)
        weights = np.random.default_rng(11).normal(size=(5, 5))

        def loss_value() -> float:
            soft = gen.sample_soft(noise=noise)
            return float(ad.tensor_sum(ad.mul(soft, ad.Tensor(weights))).value)

        loss = ad.tensor_sum(ad.mul(gen.sample_soft(noise=noise),
                                    ad.Tensor(weights)))
        ad.zero_grads([gen.logits])
        ad.backward(loss)
        grad = gen.logits.grad.copy()

        h = 1e-4
        flat = gen.logits.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            down = loss_value()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            scale = max(abs(fd), abs(grad.reshape(-1)[i]), 1.0)
            assert abs(fd - grad.reshape(-1)[i]) / scale < 1e-5

    def test_low_temperature_mean_matches_edge_probabilities(self):
        gen = gumbel.GumbelGenerator(4, "upper_triangle_symmetric",
                                     np.random.default_rng(12))
        gen.logits.value[:, 0] = np.linspace(-1.5, 1.5, 6)
        gen.logits.value[:, 1] = 0.0
        rng = np.random.default_rng(13)
        total = np.zeros((4, 4))
        draws = 20000
        for _ in range(draws):
            total += gen.sample_soft(rng, tau=0.05).value
        assert np.abs(total / draws - gen.edge_probabilities()).max() < 0.02


class TestHardSamples:
    def test_binary_symmetric_zero_diagonal(self):
        gen = gumbel.GumbelGenerator(6, "upper_triangle_symmetric",
                                     np.random.default_rng(14))
        hard = gen.sample_hard(np.random.default_rng(15))
        assert np.isin(hard, (0.0, 1.0)).all()
        assert np.array_equal(hard, hard.T)
        assert np.array_equal(np.diag(hard), np.zeros(6))

    def test_strong_logits_pin_edges(self):
        gen = gumbel.GumbelGenerator(5, "upper_triangle_symmetric",
                                     np.random.default_rng(16))
        gen.logits.value[:, 0] = 10.0
        gen.logits.value[:, 1] = 0.0
        rng = np.random.default_rng(17)
        freq = np.mean([gen.sample_hard(rng)[~np.eye(5, dtype=bool)].mean()
                        for _ in range(200)])
        assert freq > 0.995

    def test_neutral_logits_are_fair_coins(self):
        gen = gumbel.GumbelGenerator(5, "upper_triangle_symmetric",
                                     np.random.default_rng(18))
        gen.logits.value[:] = 0.0
        rng = np.random.default_rng(19)
        freq = np.mean([gen.sample_hard(rng)[~np.eye(5, dtype=bool)].mean()
                        for _ in range(2000)])
        assert freq == pytest.approx(0.5, abs=0.02)


class TestEdgeProbabilities:
    def test_sigmoid_of_gap(self):
        gen = gumbel.GumbelGenerator(3, "upper_triangle_symmetric",
                                     np.random.default_rng(20))
        gen.logits.value[:] = [[0.0, 0.0], [2.0, 1.0], [-25.0, 25.0]]
        probs = gen.edge_probabilities()
        # Slot order is (0,1), (0,2), (1,2).
        assert probs[0, 1] == pytest.approx(0.5, abs=1e-12)
        assert probs[0, 2] == pytest.approx(1.0 / (1.0 + np.exp(-1.0)), abs=1e-12)
        assert probs[1, 2] == pytest.approx(0.0, abs=1e-10)
        assert np.array_equal(probs, probs.T)

    def test_saturated_gap_reaches_one(self):
        gen = gumbel.GumbelGenerator(3, "upper_triangle_symmetric",
                                     np.random.default_rng(21))
        gen.logits.value[:, 0] = 50.0
        gen.logits.value[:, 1] = 0.0
        off = ~np.eye(3, dtype=bool)
        assert np.allclose(gen.edge_probabilities()[off], 1.0, atol=1e-12)


class TestCompletionBlocks:
    def make_generator(self) -> gumbel.GumbelGenerator:
        observed = (np.random.default_rng(22).random((6, 6)) < 0.4).astype(float)
        observed = np.triu(observed, 1)
        observed = observed + observed.T
        return gumbel.GumbelGenerator(8, "completion_blocks",
                                      np.random.default_rng(23),
                                      observed_count=6, observed_block=observed)

    def test_observed_block_is_constant_across_samples(self):
        gen = self.make_generator()
        rng = np.random.default_rng(24)
        expected = gen._base[:6, :6]
        for _ in range(20):
            soft = gen.sample_soft(rng).value
            assert np.array_equal(soft[:6, :6], expected)
        hard = gen.sample_hard(rng)
        assert np.array_equal(hard[:6, :6], expected)
        assert np.array_equal(gen.edge_probabilities()[:6, :6], expected)

    def test_missing_slots_vary_and_mirror(self):
        gen = self.make_generator()
        rng = np.random.default_rng(25)
        a = gen.sample_soft(rng).value
        b = gen.sample_soft(rng).value
        assert not np.array_equal(a[:, 6:], b[:, 6:])
        assert np.array_equal(a, a.T)
        assert np.array_equal(np.diag(a), np.zeros(8))
