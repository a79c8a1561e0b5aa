"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Tolerances are the stated ones; nothing here is loosened to make a
criterion pass. Reference numbers tagged as published come from the
source results, derived ones from the oracles in ``oracles.py``.
"""

import time

import numpy as np
import pytest

from codedqueue.channel import (
    VOIP_GE_PARAMETERS,
    ChannelModel,
    from_fading,
    joint_error_distribution,
    occupancy_distribution,
)
from codedqueue.coding import CodeSpec, failure_profile, gec_ball_volume, log_cumulative_binom
from codedqueue.optimizer import evaluate_point, find_min_nu, preset, run_sweep, voip_traffic
from codedqueue.queueing import build_chain, solve_g, solve_stationary
from codedqueue.simulator import SimConfig, first_passage_check, simulate
from conftest import random_ge_channels
from oracles import dense_stationary, enumerate_joint_errors_full, enumerate_occupancy, random_chain


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def rel_err(got, want):
    return abs(got - want) / abs(want)


@pytest.fixture(scope="module")
def ge():
    return ChannelModel.gilbert_elliott(**VOIP_GE_PARAMETERS)


@pytest.fixture(scope="module")
def gec_sweep():
    t0 = time.perf_counter()
    res = run_sweep(preset("voip-gec"))
    return res, time.perf_counter() - t0


class TestFadingDerivation:
    def test_criterion_1(self, capsys):
        t0 = time.perf_counter()
        ch = from_fading(0.00082, 2.0, 15.0)
        elapsed = time.perf_counter() - t0
        got = dict(alpha=ch.alpha, beta=ch.beta, eps_g=ch.eps_g, eps_b=ch.eps_b)
        errs = {k: rel_err(v, VOIP_GE_PARAMETERS[k]) for k, v in got.items()}
        ok = all(e <= 0.01 for e in errs.values()) and elapsed < 1.0
        detail = ", ".join(f"{k}={got[k]:.4g} (ref {VOIP_GE_PARAMETERS[k]}, rel {errs[k]:.2%})" for k in got)
        report(capsys, 1, ok, f"{detail}; {elapsed:.3f}s")


class TestBchUndetected:
    @pytest.mark.parametrize("N,K,nu,ref,tol", [(63, 36, 1, 8.78e-6, 0.02), (127, 71, 0, 3.80e-8, 0.05)])
    def test_criterion_2(self, capsys, ge, N, K, nu, ref, tol):
        t0 = time.perf_counter()
        p_ue = failure_profile(ge, CodeSpec("bch", N, K, nu)).avg_undetected
        elapsed = time.perf_counter() - t0
        ok = rel_err(p_ue, ref) <= tol and elapsed < 10
        report(capsys, 2, ok, f"({N},{K},nu={nu}) P_ue={p_ue:.4e} ref {ref:.2e} rel {rel_err(p_ue, ref):.2%}; {elapsed:.2f}s")


class TestBscOptimum:
    def test_criterion_3_margin(self, capsys):
        choice = find_min_nu(ChannelModel.bsc(0.1), CodeSpec("random-ml", 150, 51), 5e-5)
        p_ue = choice.profile.avg_undetected
        ok = choice.nu == 4 and rel_err(p_ue, 3.67e-5) <= 0.02
        report(capsys, 3, ok, f"(150,51) stage 1: nu={choice.nu}, P_ue={p_ue:.4e} ref 3.67e-5")

    def test_criterion_3_argmin(self, capsys):
        spec = preset("voip-bsc")
        assert 150 in spec.candidate_N
        assert min(k / 150 for k in spec.candidate_K[150]) <= 0.2 + 1 / 150
        t0 = time.perf_counter()
        res = run_sweep(spec)
        elapsed = time.perf_counter() - t0
        best = res.best_row
        ranked = sorted((r for r in res.rows if r.status == "ok"), key=lambda r: r.tail)
        at_ref = next(r for r in res.rows if (r.N, r.K) == (150, 51))
        ok = (best.N, best.K) == (150, 51) and elapsed < 1800
        report(capsys, 3, ok,
               f"argmin ({best.N},{best.K},nu={best.nu}) tail={best.tail:.4e}; "
               f"(150,51) tail={at_ref.tail:.4e} rank {ranked.index(at_ref) + 1}/{len(ranked)}; {elapsed:.1f}s")


class TestGecOptimum:
    def test_criterion_4(self, capsys, gec_sweep):
        res, elapsed = gec_sweep
        best = res.best_row
        assert set(res.spec.candidate_N) == {15, 31, 63, 127}
        ok = (best.N, best.K, best.nu) == (63, 36, 1) and elapsed < 600
        report(capsys, 4, ok, f"argmin ({best.N},{best.K},nu={best.nu}) tail={best.tail:.4e}; {elapsed:.2f}s")


class TestMatrixGeometric:
    def test_criterion_5_dense(self, capsys):
        rng = np.random.default_rng(20240501)
        worst = 0.0
        for _ in range(50):
            d, T = int(rng.integers(1, 5)), int(rng.integers(1, 6))
            chain = random_chain(rng, d, T, max_load=0.6, levels=60)
            dist = solve_stationary(chain, horizon_eps=1e-14)
            ref = dense_stationary(chain, 60)
            got = np.zeros_like(ref)
            n = min(60, dist.horizon)
            got[:n] = dist.levels[:n]
            worst = max(worst, float(np.max(np.abs(got - ref))))
        report(capsys, 5, worst < 1e-8, f"50 random chains, max |pi - dense| = {worst:.2e} (tol 1e-8)")

    def test_criterion_5_first_passage(self, capsys, ge):
        traffic = voip_traffic()
        code = CodeSpec("bch", 63, 36, 1)
        chains = [("GE/BCH(63,36,1)", build_chain(ge, code, traffic, failure_profile(ge, code)))]
        rng = np.random.default_rng(7)
        for i in range(2):
            chains.append((f"random#{i}", random_chain(rng, int(rng.integers(2, 5)), int(rng.integers(1, 6)), 0.6)))
        trials = 1_000_000
        worst, lines = 0.0, []
        for label, chain in chains:
            g = solve_g(chain).matrix
            est = first_passage_check(chain, trials=trials, seed=11)
            sigma = np.sqrt(g * (1 - g) / trials)
            z = np.where(sigma > 0, np.abs(est.matrix - g) / np.where(sigma > 0, sigma, 1), np.abs(est.matrix - g) * np.inf)
            z = np.nan_to_num(z, nan=0.0)
            worst = max(worst, float(z.max()))
            lines.append(f"{label} max z={z.max():.2f} censored={int(est.censored.sum())}")
        report(capsys, 5, worst <= 3.0, f"G vs first passage, 1e6 trials: {'; '.join(lines)}")


class TestDistributionOracles:
    def test_criterion_6(self, capsys):
        worst = 0.0
        for ch in random_ge_channels(20, seed=606):
            for N in range(1, 13):
                j = joint_error_distribution(ch, N).table
                o = occupancy_distribution(ch, N).table
                worst = max(worst, float(np.max(np.abs(j - enumerate_joint_errors_full(ch, N)))))
                worst = max(worst, float(np.max(np.abs(o - enumerate_occupancy(ch, N)))))
        report(capsys, 6, worst < 1e-10, f"20 channels, N=1..12, max deviation {worst:.2e} (tol 1e-10)")


class TestReductions:
    def test_criterion_7_md_equals_bsc(self, capsys):
        p = 0.08
        ge = ChannelModel.gilbert_elliott(0.27, 0.06, p, p)
        bsc = ChannelModel.bsc(p)
        tr = voip_traffic()
        worst = 0.0
        for N, K, nu in [(30, 8, 0), (40, 15, 2), (60, 20, 1), (25, 10, 3)]:
            a = failure_profile(ge, CodeSpec("random-md", N, K, nu))
            b = failure_profile(bsc, CodeSpec("random-md", N, K, nu))
            worst = max(worst, abs(a.avg_failure - b.avg_failure), abs(a.avg_undetected - b.avg_undetected))
            ra, _ = evaluate_point(ge, CodeSpec("random-md", N, K, nu), tr, 5, a)
            rb, _ = evaluate_point(bsc, CodeSpec("random-md", N, K, nu), tr, 5, b)
            worst = max(worst, abs(ra.tail - rb.tail), abs(ra.mu_N - rb.mu_N))
        report(capsys, 7, worst < 1e-10, f"MD on GE with equal crossovers vs BSC: max diff {worst:.2e}")

    def test_criterion_7_vandermonde(self, capsys):
        worst = 0.0
        for n_g, n_b in [(0, 20), (10, 30), (40, 23), (100, 50), (150, 150)]:
            N = n_g + n_b
            ref = log_cumulative_binom(N)
            for d in range(N + 1):
                worst = max(worst, abs(gec_ball_volume(n_g, n_b, d, 1.0) - ref[d]))
        report(capsys, 7, worst < 1e-10, f"unit-weight ball volume vs cumulative binomial, log max diff {worst:.2e}")

    def test_criterion_7_margin_monotone(self, capsys, ge):
        rng = np.random.default_rng(77)
        # BCH codes need t >= 5 so that every margin is admissible
        codes = [("bch", 31, 11), ("bch", 63, 30), ("bch", 127, 50), ("bch", 63, 36)]
        while len(codes) < 10:
            N = int(rng.integers(20, 70))
            codes.append((("random-ml", "random-md")[len(codes) % 2], N, int(rng.integers(3, N // 2))))
        violations = []
        for scheme, N, K in codes:
            profs = [failure_profile(ge, CodeSpec(scheme, N, K, nu)) for nu in range(6)]
            pf = [p.avg_failure for p in profs]
            pu = [p.avg_undetected for p in profs]
            if any(b < a - 1e-15 for a, b in zip(pf, pf[1:])) or any(b > a + 1e-15 for a, b in zip(pu, pu[1:])):
                violations.append((scheme, N, K))
        report(capsys, 7, not violations, f"nu=0..5 on 10 codes, violations: {violations or 'none'}")


class TestSimulationAgreement:
    def test_criterion_8(self, capsys, ge):
        traffic = voip_traffic()
        slots, tau = 10_000_000, 5
        t0 = time.perf_counter()
        lines, ok = [], True
        for K in (30, 36, 39, 45):
            code = CodeSpec("bch", 63, K, find_min_nu(ge, CodeSpec("bch", 63, K), 1e-5).nu)
            row, _ = evaluate_point(ge, code, traffic, tau)
            geo = simulate(ge, code, traffic, SimConfig(slots, seed=8, warmup=10_000, taus=(tau,)))
            const = simulate(ge, code, traffic, SimConfig(slots, seed=8, warmup=10_000, taus=(tau,),
                                                           packet_length_mode="constant", constant_length=90))
            est, hw = geo.ccdf[tau]
            inside = abs(est - row.tail) <= hw
            better = const.ccdf[tau][0] <= est
            ok &= inside and better
            lines.append(f"K={K}: analytic {row.tail:.4e}, sim {est:.4e}+-{hw:.1e} "
                         f"({'in' if inside else 'OUT'}), L=90 {const.ccdf[tau][0]:.3e}")
        elapsed = time.perf_counter() - t0
        ok &= elapsed < 900
        report(capsys, 8, ok, "; ".join(lines) + f"; {elapsed:.0f}s")


class TestStabilityBoundary:
    def test_criterion_9(self, capsys, ge, gec_sweep):
        res, _ = gec_sweep
        traffic = voip_traffic()
        bad = []
        for r in res.rows:
            if r.status == "infeasible":
                continue
            if (r.stability < 1) != (r.tail < 1) or (r.stability >= 1) != (r.status == "unstable"):
                bad.append((r.N, r.K))
        # every grid code at every margin, not only the chosen ones
        spec = res.spec
        checked = 0
        for N, K in spec.points():
            for nu in range(min(3, CodeSpec("bch", N, K).t + 1)):
                code = CodeSpec("bch", N, K, nu)
                row, dist = evaluate_point(ge, code, traffic, spec.tau)
                checked += 1
                solvable = dist is not None and row.tail < 1
                if solvable != (row.stability < 1) or (row.status == "unstable") != (row.stability >= 1):
                    bad.append((N, K, nu))
        report(capsys, 9, not bad, f"{len(res.rows)} sweep rows and {checked} grid points, mismatches: {bad or 'none'}")
