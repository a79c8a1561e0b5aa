"""Two-stage selection of block length, code dimension and safety margin.

Stage one picks, for each ``(N, K)``, the smallest safety margin whose
undetected-error probability meets the constraint.  Stage two solves the
queue for every admissible point and keeps the smallest tail probability.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .channel import VOIP_GE_PARAMETERS, ChannelModel, from_fading, joint_error_distribution, occupancy_distribution
from .coding import BCH_TABLE, CodeSpec, FailureProfile, Scheme, failure_profile
from .errors import CodedQueueError, ConfigurationError, ParameterError
from .queueing import build_chain, service_rate, solve_g, solve_stationary, tail_probability
from .traffic import DEFAULT_TAIL_EPS, TrafficModel

log = logging.getLogger(__name__)

# VoIP reference traffic: 28.75 kb/s per user, one voice packet per 20 ms
VOIP_BIT_RATE = 28_750.0
VOIP_PACKETS_PER_SECOND = 50.0
VOIP_MEAN_PACKET_BITS = 88.55
VOIP_HEADER_BITS = 2
EVRC_FRAME_BITS = (171, 80, 40, 16)
VOIP_PACKET_OVERHEAD_BITS = 32


class ProfileCache:
    """Memo of channel tables and failure profiles keyed by channel and code."""

    def __init__(self, weights=None, weight_mode="approx"):
        self.weights = weights
        self.weight_mode = weight_mode
        self._tables = {}
        self._profiles = {}

    def _table(self, model, N, kind):
        key = (model, N, kind)
        if key not in self._tables:
            fn = joint_error_distribution if kind == "joint" else occupancy_distribution
            self._tables[key] = fn(model, N)
        return self._tables[key]

    def profile(self, model: ChannelModel, code: CodeSpec) -> FailureProfile:
        key = (model, code)
        if key not in self._profiles:
            kw = {}
            if code.scheme is Scheme.BCH:
                kw["joint"] = self._table(model, code.N, "joint")
                kw["weights"] = self.weights
                kw["weight_mode"] = self.weight_mode
            elif not model.is_bsc:
                kw["occupancy"] = self._table(model, code.N, "occupancy")
            self._profiles[key] = failure_profile(model, code, **kw)
        return self._profiles[key]


_DEFAULT_CACHE = ProfileCache()


@dataclass(frozen=True)
class MarginChoice:
    nu: Optional[int]
    profile: FailureProfile

    @property
    def feasible(self):
        return self.nu is not None


def max_safety_margin(code: CodeSpec) -> int:
    return code.t if code.scheme is Scheme.BCH else code.N


def find_min_nu(model: ChannelModel, code: CodeSpec, ue_threshold: float, cache: ProfileCache = None) -> MarginChoice:
    """Smallest ``nu >= 0`` with ``avg_undetected <= ue_threshold``.

    Linear search from zero.  When no margin works ``nu`` is ``None`` and
    the profile of the largest margin tried is returned.
    """
    if not 0.0 < ue_threshold <= 1.0:
        raise ParameterError(f"undetected-error threshold must lie in (0, 1], got {ue_threshold!r}")
    cache = cache or _DEFAULT_CACHE
    profile = None
    for nu in range(max_safety_margin(code) + 1):
        profile = cache.profile(model, code.with_nu(nu))
        if profile.avg_undetected <= ue_threshold:
            return MarginChoice(nu, profile)
    return MarginChoice(None, profile)


@dataclass(frozen=True)
class SweepSpec:
    scheme: Scheme
    candidate_N: tuple
    candidate_K: dict
    ue_threshold: float
    tau: int
    channel: ChannelModel
    traffic: TrafficModel
    name: str = "sweep"
    tail_eps: float = DEFAULT_TAIL_EPS
    horizon_eps: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not 0.0 < self.ue_threshold <= 1.0:
            raise ParameterError(f"ue_threshold must lie in (0, 1], got {self.ue_threshold!r}")
        if int(self.tau) != self.tau or self.tau < 0:
            raise ParameterError(f"tau must be a nonnegative integer, got {self.tau!r}")
        if not self.candidate_N:
            raise ParameterError("candidate_N is empty")
        ks = {int(n): tuple(int(k) for k in self.candidate_K.get(n, ())) for n in self.candidate_N}
        if not any(ks.values()):
            raise ParameterError("candidate_K is empty for every block length")
        object.__setattr__(self, "candidate_N", tuple(int(n) for n in self.candidate_N))
        object.__setattr__(self, "candidate_K", ks)

    def points(self):
        return [(n, k) for n in sorted(self.candidate_N) for k in sorted(self.candidate_K[n])]


def bch_grid(lengths, min_K=1):
    """All tabulated BCH dimensions for the given lengths, excluding ``K < min_K``."""
    out = {}
    for n in lengths:
        if n not in BCH_TABLE:
            raise ConfigurationError(f"no BCH codes tabulated for N={n}")
        out[n] = tuple(sorted(k for k in BCH_TABLE[n] if k >= min_K))
    return out


def rate_grid(lengths, rate_min, rate_max):
    """Every integer ``K`` with ``rate_min <= K/N <= rate_max``."""
    out = {}
    for n in lengths:
        lo = max(1, math.ceil(rate_min * n - 1e-9))
        hi = min(n - 1, math.floor(rate_max * n + 1e-9))
        out[n] = tuple(range(lo, hi + 1))
    return out


FIELDS = ("N", "K", "nu", "P_ue", "P_f", "mu_N", "stability", "tail", "status")


@dataclass(frozen=True)
class SweepRow:
    N: int
    K: int
    nu: Optional[int]
    P_ue: float
    P_f: float
    mu_N: float
    stability: float
    tail: float
    status: str

    def as_tuple(self):
        return tuple(getattr(self, f) for f in FIELDS)


@dataclass
class SweepResult:
    rows: list
    best: Optional[int]
    spec: Optional[SweepSpec] = field(default=None, repr=False)

    @property
    def best_row(self):
        return None if self.best is None else self.rows[self.best]


def evaluate_point(model, code: CodeSpec, traffic: TrafficModel, tau: int, profile: FailureProfile = None,
                   tail_eps=DEFAULT_TAIL_EPS, horizon_eps=1e-10, force=False, cache=None):
    """Queue statistics for one fully specified code; returns ``(row, dist)``."""
    if profile is None:
        profile = (cache or _DEFAULT_CACHE).profile(model, code)
    sr = service_rate(profile, traffic, code)
    base = dict(N=code.N, K=code.K, nu=code.nu, P_ue=profile.avg_undetected, P_f=profile.avg_failure,
                mu_N=sr.mu_N, stability=sr.stability_factor)
    if sr.stability_factor >= 1.0 and not force:
        return SweepRow(**base, tail=1.0, status="unstable"), None
    chain = build_chain(model, code, traffic, profile, tail_eps)
    g = solve_g(chain, force=force)
    dist = solve_stationary(chain, g, horizon_eps, force=force, min_levels=tau + 2)
    status = "ok" if sr.stability_factor < 1.0 else "unstable"
    return SweepRow(**base, tail=tail_probability(dist, tau), status=status), dist


def _evaluate_candidate(spec: SweepSpec, N: int, K: int, cache: ProfileCache) -> SweepRow:
    nan = float("nan")
    try:
        code = CodeSpec(spec.scheme, N, K, 0)
        choice = find_min_nu(spec.channel, code, spec.ue_threshold, cache)
        if not choice.feasible:
            p = choice.profile
            return SweepRow(N, K, None, p.avg_undetected, p.avg_failure, nan, nan, nan, "infeasible")
        row, _ = evaluate_point(spec.channel, code.with_nu(choice.nu), spec.traffic, spec.tau, choice.profile,
                                spec.tail_eps, spec.horizon_eps)
        return row
    except CodedQueueError as exc:
        log.warning("sweep point (%d, %d) failed: %s", N, K, exc)
        return SweepRow(N, K, None, nan, nan, nan, nan, nan, f"error: {type(exc).__name__}: {exc}")


def _evaluate_block(args):
    spec, points = args
    cache = ProfileCache()
    return [_evaluate_candidate(spec, n, k, cache) for n, k in points]


def select_best(rows, ue_threshold):
    """Index of the admissible row with the smallest tail (ties: smaller N, then larger K)."""
    best, key = None, None
    for i, r in enumerate(rows):
        if r.status != "ok" or not r.stability < 1.0 or not r.P_ue <= ue_threshold:
            continue
        k = (r.tail, r.N, -r.K)
        if key is None or k < key:
            best, key = i, k
    return best


def run_sweep(spec: SweepSpec, workers: int = 1, cache: ProfileCache = None) -> SweepResult:
    """Evaluate every grid point; individual failures are recorded in the row status."""
    points = spec.points()
    if workers > 1:
        by_n = {}
        for n, k in points:
            by_n.setdefault(n, []).append((n, k))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = [r for block in pool.map(_evaluate_block, [(spec, p) for p in by_n.values()]) for r in block]
    else:
        cache = cache or ProfileCache()
        rows = [_evaluate_candidate(spec, n, k, cache) for n, k in points]
    rows.sort(key=lambda r: (r.N, r.K))
    return SweepResult(rows, select_best(rows, spec.ue_threshold), spec)


# --- presets ----------------------------------------------------------------


def voip_traffic(mean_packet_bits=VOIP_MEAN_PACKET_BITS, header_bits=VOIP_HEADER_BITS) -> TrafficModel:
    """Poisson voice packets at 50 per second over a 28.75 kb/s link."""
    return TrafficModel(VOIP_PACKETS_PER_SECOND / VOIP_BIT_RATE, 1.0 / mean_packet_bits, header_bits)


def scenario_presets() -> dict:
    """Named reference scenarios, ready to pass to :func:`run_sweep`."""
    traffic = voip_traffic()
    bsc_lengths = tuple(range(50, 301, 50))
    bch_lengths = (15, 31, 63, 127)
    min_K = VOIP_HEADER_BITS + 1
    return {
        "voip-bsc": SweepSpec(Scheme.RANDOM_ML, bsc_lengths, rate_grid(bsc_lengths, 0.2, 0.6), 5e-5, 10,
                              ChannelModel.bsc(0.1), traffic, name="voip-bsc"),
        "voip-gec": SweepSpec(Scheme.BCH, bch_lengths, bch_grid(bch_lengths, min_K), 1e-5, 5,
                              ChannelModel.gilbert_elliott(**VOIP_GE_PARAMETERS), traffic, name="voip-gec"),
        "voip-gec-fading": SweepSpec(Scheme.BCH, bch_lengths, bch_grid(bch_lengths, min_K), 1e-5, 5,
                                     from_fading(0.00082, 2.0, 15.0), traffic, name="voip-gec-fading"),
    }


def preset(name: str) -> SweepSpec:
    presets = scenario_presets()
    if name not in presets:
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(sorted(presets))}")
    return presets[name]
