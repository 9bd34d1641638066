import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq

from ehlink.channel import (ChannelModel, mean_power_gain, partition_rayleigh,
                            slow_fading_matrix, steady_state)
from ehlink.exceptions import AmbiguousChainError
from ehlink.rng import SplitMix64


def exp_cdf(x, mean):
    return 1.0 - math.exp(-x / mean)


class TestPartition:
    def test_single_state_covers_everything(self):
        assert partition_rayleigh(1, 1.0) == [0.0, math.inf]

    def test_three_state_unit_mean_matches_root_finding(self):
        bounds = partition_rayleigh(3, 1.0)
        # independent oracle: invert the CDF numerically
        for k in (1, 2):
            root = brentq(lambda x: exp_cdf(x, 1.0) - k / 3, 0, 50,
                          xtol=1e-14)
            assert bounds[k] == pytest.approx(root, abs=1e-12)
        assert bounds[1] == pytest.approx(0.405465108108, abs=1e-9)
        assert bounds[2] == pytest.approx(1.098612288668, abs=1e-9)

    def test_two_state_mean_two(self):
        bounds = partition_rayleigh(2, 2.0)
        assert bounds[1] == pytest.approx(2 * math.log(2), abs=1e-12)

    @pytest.mark.parametrize("n,mean", [(2, 1.0), (3, 0.5), (8, 2.5)])
    def test_intervals_carry_equal_mass(self, n, mean):
        bounds = partition_rayleigh(n, mean)
        for lo, hi in zip(bounds, bounds[1:]):
            hi_cdf = 1.0 if math.isinf(hi) else exp_cdf(hi, mean)
            assert hi_cdf - exp_cdf(lo, mean) == pytest.approx(
                1.0 / n, abs=1e-12)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            partition_rayleigh(0, 1.0)
        with pytest.raises(ValueError):
            partition_rayleigh(3, -1.0)


class TestMeanPowerGain:
    def test_whole_support_equals_mean(self):
        assert mean_power_gain([0.0, math.inf], 0, 1.0) == pytest.approx(1.0)
        assert mean_power_gain([0.0, math.inf], 0, 2.0) == pytest.approx(2.0)

    def test_memorylessness_on_tail(self):
        assert mean_power_gain([0.0, 1.0, math.inf], 1, 1.0) \
            == pytest.approx(2.0, abs=1e-12)

    @pytest.mark.parametrize("lo,hi,mean", [(0.0, 0.7, 1.0), (0.4, 1.3, 2.0),
                                            (1.0, 4.0, 0.7)])
    def test_matches_numerical_integration(self, lo, hi, mean):
        pdf = lambda x: math.exp(-x / mean) / mean
        num = quad(lambda x: x * pdf(x), lo, hi)[0]
        den = quad(pdf, lo, hi)[0]
        assert mean_power_gain([lo, hi], 0, mean) \
            == pytest.approx(num / den, rel=1e-9)

    def test_empty_interval_rejected(self):
        with pytest.raises(ValueError):
            mean_power_gain([1.0, 1.0], 0, 1.0)
        with pytest.raises(ValueError):
            mean_power_gain([0.0, math.inf], 2, 1.0)


class TestSteadyState:
    def test_doubly_stochastic(self):
        pi = steady_state([[0.5, 0.5], [0.5, 0.5]])
        assert pi == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_identity_is_ambiguous(self):
        with pytest.raises(AmbiguousChainError):
            steady_state(np.eye(2))

    def test_two_state_balance(self):
        pi = steady_state([[0.9, 0.1], [0.2, 0.8]])
        assert pi == pytest.approx([2 / 3, 1 / 3], abs=1e-12)

    def test_residual_tolerance(self):
        rng = np.random.default_rng(0)
        P = rng.random((5, 5)) + 0.01
        P /= P.sum(axis=1, keepdims=True)
        pi = steady_state(P)
        assert np.max(np.abs(pi @ P - pi)) < 1e-10
        assert pi.sum() == pytest.approx(1.0, abs=1e-12)

    def test_rejects_non_stochastic(self):
        with pytest.raises(ValueError):
            steady_state([[0.5, 0.6], [0.5, 0.5]])


class TestStep:
    def test_absorbing_rows(self):
        model = ChannelModel.rayleigh(2, 1.0,
                                      transition_matrix=[[1.0, 0.0],
                                                         [1.0, 0.0]])
        rng = SplitMix64(1)
        assert all(model.step(0, rng) == 0 for _ in range(50))
        assert all(model.step(1, rng) == 0 for _ in range(50))

    def test_deterministic_jump_row(self):
        model = ChannelModel.rayleigh(2, 1.0,
                                      transition_matrix=[[0.0, 1.0],
                                                         [1.0, 0.0]])
        rng = SplitMix64(2)
        assert all(model.step(0, rng) == 1 for _ in range(50))

    def test_empirical_row_frequency(self):
        model = ChannelModel.rayleigh(2, 1.0,
                                      transition_matrix=[[0.5, 0.5],
                                                         [0.5, 0.5]])
        rng = SplitMix64(7)
        n = 10 ** 6
        hits = sum(model.step(0, rng) == 0 for _ in range(n))
        assert 0.498 <= hits / n <= 0.502

    def test_occupancy_matches_steady_state(self):
        model = ChannelModel.rayleigh(3, 1.0, doppler_slot=0.05)
        rng = SplitMix64(11)
        counts = np.zeros(3)
        g = model.draw_stationary(rng)
        n = 10 ** 6
        for _ in range(n):
            g = model.step(g, rng)
            counts[g] += 1
        assert np.max(np.abs(counts / n - model.steady_state)) < 0.005


class TestSlowFadingMatrix:
    def test_rows_stochastic_and_stationary_uniform(self):
        bounds = partition_rayleigh(3, 1.0)
        P = slow_fading_matrix(bounds, 1.0, 0.05)
        assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
        pi = steady_state(P)
        assert pi == pytest.approx([1 / 3] * 3, abs=1e-10)

    def test_too_fast_fading_rejected(self):
        bounds = partition_rayleigh(3, 1.0)
        with pytest.raises(ValueError):
            slow_fading_matrix(bounds, 1.0, 0.49)


class TestChannelModel:
    def test_mean_gains_inside_intervals(self):
        m = ChannelModel.rayleigh(4, 2.0)
        for i, g in enumerate(m.mean_gains):
            assert m.boundaries[i] < g
            assert math.isinf(m.boundaries[i + 1]) or g < m.boundaries[i + 1]

    def test_row_stochasticity_asserted(self):
        with pytest.raises(ValueError):
            ChannelModel.rayleigh(2, 1.0, transition_matrix=[[0.7, 0.7],
                                                             [0.3, 0.7]])

    def test_immutable(self):
        m = ChannelModel.rayleigh(2, 1.0)
        with pytest.raises(AttributeError):
            m.num_states = 5
