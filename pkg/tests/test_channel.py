import numpy as np
import pytest

from codedqueue.channel import (
    BAD,
    GOOD,
    ChannelModel,
    conditional_state_errors,
    from_fading,
    joint_error_distribution,
    occupancy_distribution,
    polynomial_matrix_power,
)
from codedqueue.errors import ParameterError, UnsupportedOperationError
from conftest import random_ge_channels
from oracles import enumerate_joint_errors, enumerate_joint_errors_full, enumerate_occupancy
from scipy import stats


class TestChannelModel:
    def test_stationary_law(self):
        ch = ChannelModel.gilbert_elliott(0.3, 0.1, 0.01, 0.2)
        pi = ch.stationary
        assert pi == pytest.approx([0.1 / 0.4, 0.3 / 0.4])
        assert pi @ ch.transition_matrix == pytest.approx(pi, abs=1e-15)

    def test_bsc_is_single_state(self):
        ch = ChannelModel.bsc(0.1)
        assert ch.n_states == 1
        assert ch.transition_matrix.shape == (1, 1)

    @pytest.mark.parametrize("bad", [-0.1, 1.5, float("nan")])
    def test_rejects_out_of_range(self, bad):
        with pytest.raises(ParameterError):
            ChannelModel.gilbert_elliott(bad, 0.1, 0.01, 0.2)

    def test_frozen_alpha_beta_zero_has_no_stationary(self):
        with pytest.raises(ParameterError):
            ChannelModel.gilbert_elliott(0.0, 0.0, 0.1, 0.2).stationary

    def test_bsc_has_no_occupancy(self):
        with pytest.raises(UnsupportedOperationError):
            occupancy_distribution(ChannelModel.bsc(0.1), 5)


class TestJointErrorDistribution:
    @pytest.mark.parametrize("N", [1, 2, 5, 8, 12])
    def test_matches_path_enumeration(self, N):
        for ch in random_ge_channels(5, seed=N):
            got = joint_error_distribution(ch, N).table
            assert np.max(np.abs(got - enumerate_joint_errors(ch, N))) < 1e-10

    @pytest.mark.parametrize("N", [1, 3, 6])
    def test_matches_pattern_enumeration(self, N):
        ch = random_ge_channels(1, seed=100 + N)[0]
        got = joint_error_distribution(ch, N).table
        assert np.max(np.abs(got - enumerate_joint_errors_full(ch, N))) < 1e-12

    def test_bsc_reduces_to_binomial(self):
        got = joint_error_distribution(ChannelModel.bsc(0.13), 40).table[0, 0]
        assert got == pytest.approx(stats.binom.pmf(np.arange(41), 40, 0.13), abs=1e-14)

    def test_marginal_over_errors_is_transition_power(self):
        ch = random_ge_channels(1, seed=7)[0]
        jd = joint_error_distribution(ch, 30)
        assert jd.transition() == pytest.approx(np.linalg.matrix_power(ch.transition_matrix, 30), abs=1e-13)

    def test_equal_crossovers_give_binomial_errors(self):
        ch = ChannelModel.gilbert_elliott(0.2, 0.05, 0.07, 0.07)
        pmf = joint_error_distribution(ch, 25).error_pmf(ch.stationary)
        assert pmf == pytest.approx(stats.binom.pmf(np.arange(26), 25, 0.07), abs=1e-13)

    def test_rejects_bad_length(self):
        with pytest.raises(ParameterError):
            joint_error_distribution(ChannelModel.bsc(0.1), 0)


class TestOccupancy:
    @pytest.mark.parametrize("N", [1, 4, 9, 12])
    def test_matches_path_enumeration(self, N):
        for ch in random_ge_channels(4, seed=50 + N):
            got = occupancy_distribution(ch, N).table
            assert np.max(np.abs(got - enumerate_occupancy(ch, N))) < 1e-10

    def test_first_use_counts_start_state(self):
        ch = ChannelModel.gilbert_elliott(0.3, 0.2, 0.01, 0.3)
        t = occupancy_distribution(ch, 1).table
        # one use, spent in the start state
        assert t[GOOD, :, 1].sum() == pytest.approx(1.0)
        assert t[BAD, :, 0].sum() == pytest.approx(1.0)

    def test_polynomial_power_degree_zero(self):
        step = np.random.default_rng(0).random((2, 2, 2))
        res = polynomial_matrix_power(step, 0)
        assert res.shape == (2, 2, 1)
        assert res[..., 0] == pytest.approx(np.eye(2))


class TestConditionalErrors:
    def test_product_of_binomials(self):
        ch = ChannelModel.gilbert_elliott(0.3, 0.1, 0.02, 0.3)
        v = conditional_state_errors(5, 3, 1, 2, ch)
        assert v == pytest.approx(stats.binom.pmf(1, 5, 0.02) * stats.binom.pmf(2, 3, 0.3))

    def test_sums_to_one(self):
        ch = ChannelModel.gilbert_elliott(0.3, 0.1, 0.02, 0.3)
        total = sum(conditional_state_errors(4, 3, a, b, ch) for a in range(5) for b in range(4))
        assert total == pytest.approx(1.0)

    def test_rejects_excess_errors(self):
        ch = ChannelModel.gilbert_elliott(0.3, 0.1, 0.02, 0.3)
        with pytest.raises(ParameterError):
            conditional_state_errors(2, 2, 3, 0, ch)


class TestFading:
    def test_crossovers_near_published(self):
        ch = from_fading(0.00082, 2.0, 15.0)
        assert ch.eps_g == pytest.approx(0.0097, rel=0.01)
        assert ch.eps_b == pytest.approx(0.3713, rel=0.01)

    def test_transition_ratio_matches_level_crossing(self):
        # alpha / beta depends only on the threshold-to-mean ratio
        ch = from_fading(0.00082, 2.0, 15.0)
        r2 = 10 ** ((2.0 - 15.0) / 10)
        assert ch.alpha / ch.beta == pytest.approx(1 / np.expm1(r2), rel=1e-12)

    def test_doppler_scales_transitions(self):
        a = from_fading(0.0005, 2.0, 15.0)
        b = from_fading(0.001, 2.0, 15.0)
        assert b.alpha == pytest.approx(2 * a.alpha)
        assert b.eps_b == pytest.approx(a.eps_b)

    def test_rejects_nonpositive_doppler(self):
        with pytest.raises(ParameterError):
            from_fading(0.0, 2.0, 15.0)
