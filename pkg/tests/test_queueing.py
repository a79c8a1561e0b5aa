import numpy as np
import pytest

from codedqueue.channel import ChannelModel
from codedqueue.coding import CodeSpec, FailureProfile, failure_profile
from codedqueue.errors import InstabilityError, PrecisionError
from codedqueue.queueing import (
    QueueChain,
    build_chain,
    ccdf,
    drift_ratio,
    fixed_point_residual,
    service_rate,
    solve_g,
    solve_stationary,
    tail_probability,
)
from codedqueue.traffic import MMPP, TrafficModel
from oracles import dense_stationary, random_chain, scalar_g_bisection


@pytest.fixture(scope="module")
def ge_chain(voip_ge, traffic):
    code = CodeSpec("bch", 63, 36, 1)
    return build_chain(voip_ge, code, traffic, failure_profile(voip_ge, code))


class TestBuildChain:
    def test_rows_stochastic(self, ge_chain):
        for rows in ge_chain.row_sums():
            assert np.max(np.abs(rows - 1)) < 1e-10
        assert ge_chain.B.min() >= 0

    def test_mmpp_blocks(self, voip_ge):
        tr = TrafficModel(0.0, 1 / 88.55, 2, MMPP(0.004, 0.0005, ((0.99, 0.01), (0.02, 0.98))))
        code = CodeSpec("bch", 31, 16, 1)
        chain = build_chain(voip_ge, code, tr, failure_profile(voip_ge, code))
        assert chain.block_dim == 4
        for rows in chain.row_sums():
            assert np.max(np.abs(rows - 1)) < 1e-10

    def test_useless_code_has_no_departures(self, voip_bsc, traffic):
        code = CodeSpec("random-ml", 20, 10)
        prof = FailureProfile(20, np.ones((1, 1)), np.zeros((1, 1)), np.ones((1, 1)), np.ones(1))
        chain = build_chain(voip_bsc, code, traffic, prof)
        assert np.all(chain.B == 0)
        assert not chain.is_stable

    def test_stability_factor(self, voip_ge, traffic):
        code = CodeSpec("bch", 63, 36, 1)
        prof = failure_profile(voip_ge, code)
        sr = service_rate(prof, traffic, code)
        rr = 1 - (1 - 1 / 88.55) ** 34
        assert sr.mu_N == pytest.approx(rr * (1 - prof.avg_failure))
        assert sr.stability_factor == pytest.approx(traffic.lam * 63 / sr.mu_N)

    def test_perfect_code_unit_rate(self):
        prof = FailureProfile(10, np.zeros((1, 1)), np.zeros((1, 1)), np.ones((1, 1)), np.ones(1))
        # rho so small that one segment always completes: rho_r = 1 - (1 - rho)**(K - h)
        tr = TrafficModel(0.001, 1 - 1e-12)
        assert service_rate(prof, tr, CodeSpec("random-ml", 10, 5)).mu_N == pytest.approx(1.0)

    def test_drift_boundary_agrees(self, ge_chain):
        # drift ratio and offered load cross one together
        assert (drift_ratio(ge_chain) < 1) == (ge_chain.stability_factor < 1)


class TestGMatrix:
    def test_fixed_point_and_rows(self, ge_chain):
        g = solve_g(ge_chain)
        assert fixed_point_residual(ge_chain, g.matrix) < 1e-12
        assert np.max(np.abs(g.matrix.sum(axis=1) - 1)) < 1e-8

    def test_scalar_bisection(self, voip_bsc, traffic):
        code = CodeSpec("random-ml", 150, 51, 4)
        chain = build_chain(voip_bsc, code, traffic, failure_profile(voip_bsc, code))
        g = solve_g(chain).matrix[0, 0]
        ref = scalar_g_bisection(chain.B[0, 0], chain.A[0, 0], chain.F[:, 0, 0])
        assert g == pytest.approx(ref, abs=1e-10)

    def test_no_backward_moves(self):
        d = 2
        A = np.full((d, d), 0.25)
        F = np.full((1, d, d), 0.25)
        chain = QueueChain(A, F, np.zeros((d, d)), A, F, stability_factor=0.5)
        assert np.all(solve_g(chain).matrix == 0)

    def test_refuses_unstable(self):
        chain = QueueChain(np.eye(1) * 0.5, np.full((1, 1, 1), 0.5), np.eye(1) * 0.2, np.eye(1) * 0.2,
                           np.full((1, 1, 1), 0.6))
        with pytest.raises(InstabilityError):
            solve_g(chain)
        g = solve_g(chain, force=True)
        assert g.matrix[0, 0] < 1


class TestStationary:
    @pytest.mark.parametrize("seed", range(8))
    def test_dense_power_iteration(self, seed):
        rng = np.random.default_rng(seed)
        chain = random_chain(rng, d=int(rng.integers(1, 5)), T=int(rng.integers(1, 6)), max_load=0.5, levels=60)
        dist = solve_stationary(chain, horizon_eps=1e-14)
        levels = 60
        ref = dense_stationary(chain, levels)
        n = min(levels, dist.horizon)
        assert np.max(np.abs(dist.levels[:n] - ref[:n])) < 1e-8

    def test_reference_chain_against_dense(self, ge_chain):
        dist = solve_stationary(ge_chain, horizon_eps=1e-14)
        ref = dense_stationary(ge_chain, 60)
        assert np.max(np.abs(dist.levels[: dist.horizon] - ref[: dist.horizon])) < 1e-8

    def test_balance_and_marginal(self, ge_chain, voip_ge):
        dist = solve_stationary(ge_chain)
        M = ge_chain.dense(dist.horizon + 40)
        v = np.zeros(M.shape[0])
        v[: dist.levels.size] = dist.levels.ravel()
        assert np.max(np.abs(v @ M - v)) < 1e-8
        assert dist.phase_marginal() == pytest.approx(voip_ge.stationary, abs=1e-6)
        assert dist.levels.sum() + dist.residual_mass == pytest.approx(1.0, abs=1e-8)

    def test_light_load_concentrates_at_zero(self, voip_ge):
        code = CodeSpec("bch", 63, 45, 0)
        tr = TrafficModel(1e-9, 1 / 88.55, 2)
        dist = solve_stationary(build_chain(voip_ge, code, tr, failure_profile(voip_ge, code)))
        assert dist.level_mass[0] > 1 - 1e-6

    def test_bsc_matrix_path_equals_dense_solve(self, voip_bsc, traffic):
        code = CodeSpec("random-ml", 100, 35, 3)
        chain = build_chain(voip_bsc, code, traffic, failure_profile(voip_bsc, code))
        dist = solve_stationary(chain, horizon_eps=1e-14)
        M = chain.dense(80)
        lhs = np.vstack([(M.T - np.eye(80))[:-1], np.ones(80)])
        rhs = np.zeros(80)
        rhs[-1] = 1
        ref = np.linalg.solve(lhs, rhs)
        n = min(80, dist.horizon)
        assert np.max(np.abs(dist.levels[:n, 0] - ref[:n])) < 1e-10


class TestTail:
    def test_zero_threshold(self, ge_chain):
        dist = solve_stationary(ge_chain, min_levels=10)
        assert tail_probability(dist, 0) == pytest.approx(1 - dist.level_mass[0], abs=1e-12)

    def test_monotone(self, ge_chain):
        dist = solve_stationary(ge_chain, min_levels=30)
        c = ccdf(dist, range(25))
        assert np.all(np.diff(c) <= 1e-15)

    def test_short_horizon(self, ge_chain):
        dist = solve_stationary(ge_chain, horizon_eps=1e-3)
        with pytest.raises(PrecisionError):
            tail_probability(dist, dist.horizon + 5)
