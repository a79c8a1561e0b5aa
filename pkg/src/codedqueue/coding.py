"""Decoding failure and undetected-error probabilities.

Two code families are covered:

* random codes (``M = 2**K`` uniform codewords) with maximum-likelihood or
  minimum-distance decoding and a safety margin ``nu``;
* primitive narrow-sense binary BCH codes with bounded-distance decoding,
  correction radius ``t - nu`` and detection radius ``t + nu``.

Every ``1 - (1 - q)**(M - 1)`` is evaluated from ``log q`` so that neither
tiny ball volumes nor astronomically large codebooks lose precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy import special, stats

from .channel import ChannelModel, JointErrorDistribution, OccupancyDistribution, joint_error_distribution, occupancy_distribution
from .errors import ConfigurationError, ParameterError

LN2 = math.log(2.0)
UNION_BOUND_Q = 2.0**-60
#: Relative slack when testing membership ``gamma*e_g + e_b <= d``.
RADIUS_SLACK = 1e-12
RADIUS_BUCKET = 1e-9


class Scheme(str, Enum):
    RANDOM_ML = "random-ml"
    RANDOM_MD = "random-md"
    BCH = "bch"

    @property
    def is_random(self):
        return self is not Scheme.BCH


# Primitive narrow-sense binary BCH codes: N -> {K: t}.
BCH_TABLE = {
    7: {4: 1},
    15: {11: 1, 7: 2, 5: 3},
    31: {26: 1, 21: 2, 16: 3, 11: 5, 6: 7},
    63: {57: 1, 51: 2, 45: 3, 39: 4, 36: 5, 30: 6, 24: 7, 18: 10, 16: 11, 10: 13, 7: 15},
    127: {120: 1, 113: 2, 106: 3, 99: 4, 92: 5, 85: 6, 78: 7, 71: 9, 64: 10, 57: 11, 50: 13,
          43: 14, 36: 15, 29: 21, 22: 23, 15: 27, 8: 31},
    255: {247: 1, 239: 2, 231: 3, 223: 4, 215: 5, 207: 6, 199: 7, 191: 8, 187: 9, 179: 10,
          171: 11, 163: 12, 155: 13, 147: 14, 139: 15, 131: 18, 123: 19, 115: 21, 107: 22,
          99: 23, 91: 25, 87: 26, 79: 27, 71: 29, 63: 30, 55: 31, 47: 42, 45: 43, 37: 45,
          29: 47, 21: 55, 13: 59, 9: 63},
}


def bch_codes(N):
    """Sorted ``(K, t)`` pairs of the tabulated BCH codes of length ``N``."""
    if N not in BCH_TABLE:
        raise ConfigurationError(f"no primitive BCH codes tabulated for N={N}; choose from {sorted(BCH_TABLE)}")
    return sorted(BCH_TABLE[N].items())


@dataclass(frozen=True)
class CodeSpec:
    scheme: Scheme
    N: int
    K: int
    nu: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        for name in ("N", "K", "nu"):
            v = getattr(self, name)
            if int(v) != v:
                raise ParameterError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not 1 <= self.K < self.N:
            raise ParameterError(f"need 1 <= K < N, got N={self.N}, K={self.K}")
        if self.nu < 0:
            raise ParameterError(f"safety margin must be nonnegative, got {self.nu}")
        if self.scheme is Scheme.BCH:
            if self.N not in BCH_TABLE or self.K not in BCH_TABLE[self.N]:
                raise ConfigurationError(f"({self.N}, {self.K}) is not a tabulated primitive BCH code")
            if self.nu > self.t:
                raise ParameterError(f"safety margin nu={self.nu} exceeds correction radius t={self.t}")

    @property
    def rate(self):
        return self.K / self.N

    @property
    def log2_codebook(self):
        return self.K

    @property
    def m(self):
        m = (self.N + 1).bit_length() - 1
        return m if (1 << m) == self.N + 1 else None

    @property
    def t(self):
        return BCH_TABLE[self.N][self.K] if self.scheme is Scheme.BCH else None

    @property
    def d_min(self):
        return 2 * self.t + 1 if self.scheme is Scheme.BCH else None

    def with_nu(self, nu):
        return CodeSpec(self.scheme, self.N, self.K, nu)


@dataclass(frozen=True)
class FailureProfile:
    """Block-level decoding statistics jointly with the end channel state.

    ``cond_failure[c, d]`` is the probability of a (detected or undetected)
    failure and ``C_{N+1} = d`` given ``C_1 = c``; ``cond_undetected`` is an
    upper bound on the undetected part; ``transition`` is ``P^N``.
    """

    block_length: int
    cond_failure: np.ndarray
    cond_undetected: np.ndarray
    transition: np.ndarray
    start_weights: np.ndarray

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def cond_success(self):
        return self.transition - self.cond_failure

    @property
    def avg_failure(self):
        return float(np.clip(self.start_weights @ self.cond_failure.sum(axis=1), 0.0, 1.0))

    @property
    def avg_undetected(self):
        return float(np.clip(self.start_weights @ self.cond_undetected.sum(axis=1), 0.0, 1.0))

    @property
    def avg_success(self):
        return 1.0 - self.avg_failure


# --- log-domain combinatorics ------------------------------------------------


def log_binom(n, k):
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    return special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)


@lru_cache(maxsize=None)
def _log_cumulative_binom(n):
    out = np.logaddexp.accumulate(log_binom(n, np.arange(n + 1)))
    out.setflags(write=False)
    return out


def log_cumulative_binom(n):
    """``out[k] = log(sum_{j<=k} C(n, j))`` for ``k = 0..n``."""
    return _log_cumulative_binom(int(n))


def failure_from_log_q(log_q, K):
    """``1 - (1 - q)**(2**K - 1)`` from ``log q``, elementwise.

    Below ``q = 2**-60`` the first-order form ``(M - 1) q`` is used inside
    the exponent, which is exact to double precision there.
    """
    log_q = np.asarray(log_q, dtype=float)
    if K == 0:
        return np.zeros_like(log_q)
    log_m1 = K * LN2 + math.log1p(-(2.0 ** -K))
    q = np.exp(np.minimum(log_q, 0.0))
    with np.errstate(divide="ignore", over="ignore"):
        small = q < UNION_BOUND_Q
        x = np.where(small, -np.exp(log_m1 + log_q), np.exp(log_m1) * np.log1p(-np.where(small, 0.0, q)))
        out = -np.expm1(x)
    out = np.where(log_q >= 0.0, 1.0, out)
    out = np.where(np.isneginf(log_q), 0.0, out)
    return np.clip(out, 0.0, 1.0)


# --- random codes over the BSC ----------------------------------------------


def _check_error_count(code, e):
    if int(e) != e or not 0 <= e <= code.N:
        raise ParameterError(f"error count must be an integer in [0, {code.N}], got {e!r}")
    return int(e)


def bsc_random_failure(code: CodeSpec, e: int) -> float:
    """P(failure | E = e): another codeword lies within distance ``e + nu``."""
    e = _check_error_count(code, e)
    radius = min(e + code.nu, code.N)
    return float(failure_from_log_q(log_cumulative_binom(code.N)[radius] - code.N * LN2, code.K))


def bsc_random_undetected(code: CodeSpec, e: int) -> float:
    """Upper-bound term for an undetected failure: a competitor strictly inside ``e - nu``."""
    e = _check_error_count(code, e)
    radius = e - code.nu - 1
    if radius < 0:
        return 0.0
    return float(failure_from_log_q(log_cumulative_binom(code.N)[radius] - code.N * LN2, code.K))


def bsc_random_terms(code: CodeSpec):
    """Vectors ``(P_f|E(e), P_ue|E(e))`` for ``e = 0..N``."""
    N = code.N
    lc = log_cumulative_binom(N)
    e = np.arange(N + 1)
    pf = failure_from_log_q(lc[np.minimum(e + code.nu, N)] - N * LN2, code.K)
    r = e - code.nu - 1
    log_q_u = np.where(r >= 0, lc[np.clip(r, 0, N)] - N * LN2, -np.inf)
    pu = failure_from_log_q(log_q_u, code.K)
    return pf, pu


def bsc_random_profile(model: ChannelModel, code: CodeSpec) -> FailureProfile:
    if not model.is_bsc:
        raise ConfigurationError("bsc_random_profile requires a BSC channel")
    pmf = stats.binom.pmf(np.arange(code.N + 1), code.N, model.p)
    pf, pu = bsc_random_terms(code)
    one = np.ones((1, 1))
    return FailureProfile(code.N, one * float(pmf @ pf), one * float(pmf @ pu), one, np.ones(1))


# --- random codes over the Gilbert-Elliott channel --------------------------


def gec_weight_gamma(model: ChannelModel, scheme=Scheme.RANDOM_ML) -> float:
    """Relative cost of a good-state error in the weighted decoding metric."""
    if Scheme(scheme) is Scheme.RANDOM_MD:
        return 1.0
    eg, eb = model.eps_g, model.eps_b
    if model.is_bsc or eg == eb:
        return 1.0
    if not (0.0 < eg < 1.0 and 0.0 < eb < 1.0):
        raise ParameterError(
            "ML weighting needs 0 < eps < 1 in both states (log diverges); "
            f"clamp eps_g={eg}, eps_b={eb} away from 0 and 1"
        )
    num = math.log(eg) - math.log1p(-eg)
    den = math.log(eb) - math.log1p(-eb)
    if den == 0.0 or num / den <= 0.0:
        raise ParameterError(f"ML weight undefined or nonpositive for eps_g={eg}, eps_b={eb}")
    return num / den


def _max_count(radius, gamma, eg_tilde, limit, strict):
    """Largest e_b with ``gamma*eg_tilde + e_b <= radius`` (``<`` if strict); -1 if none."""
    rem = np.asarray(radius, dtype=float)[..., None] - gamma * eg_tilde
    slack = RADIUS_SLACK * np.maximum(1.0, np.abs(np.asarray(radius, dtype=float)))[..., None]
    if strict:
        k = np.ceil(rem - slack) - 1
    else:
        k = np.floor(rem + slack)
    return np.clip(k, -1, limit).astype(np.int64)


def _log_volume(n_g, n_b, radii, gamma, strict=False):
    """log of sum over {gamma*a + b <= r} of C(n_g, a) C(n_b, b), vectorized over ``radii``."""
    radii = np.asarray(radii, dtype=float)
    a = np.arange(n_g + 1)
    lcb = np.concatenate([[-np.inf], log_cumulative_binom(n_b)])
    kmax = _max_count(radii, gamma, a, n_b, strict)
    terms = log_binom(n_g, a) + lcb[kmax + 1]
    with np.errstate(divide="ignore"):
        return special.logsumexp(terms, axis=-1)


def gec_ball_volume(n_g: int, n_b: int, d: float, gamma: float, strict: bool = False) -> float:
    """Log of the number of words within weighted distance ``d`` of the received word.

    Counts pairs ``(a, b)`` of good/bad-state disagreements with
    ``gamma*a + b <= d`` (``< d`` when ``strict``), weighted by
    ``C(n_g, a) C(n_b, b)``.  Returns ``-inf`` for an empty set.
    """
    if n_g < 0 or n_b < 0:
        raise ParameterError("state visit counts must be nonnegative")
    if gamma <= 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    return float(_log_volume(int(n_g), int(n_b), np.array(d, dtype=float), gamma, strict))


def _gec_conditional_terms(n_g, N, gamma, code):
    """Failure and undetected terms on the ``(e_g, e_b)`` grid for one channel type."""
    n_b = N - n_g
    eg = np.arange(n_g + 1)[:, None]
    eb = np.arange(n_b + 1)[None, :]
    base = gamma * eg + eb
    out = []
    for radii, strict in ((base + code.nu, False), (base - code.nu, True)):
        keys = np.round(radii / RADIUS_BUCKET).astype(np.int64)
        uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
        # memoized on (n_g, quantized radius)
        log_v = _log_volume(n_g, n_b, radii.ravel()[first], gamma, strict)
        out.append(failure_from_log_q(log_v - N * LN2, code.K)[inverse.reshape(radii.shape)])
    return out[0], out[1]


def gec_conditional_tables(model: ChannelModel, code: CodeSpec):
    """Arrays ``pf[n_g, e_g, e_b]`` and ``pu[n_g, e_g, e_b]`` (zero-padded)."""
    N = code.N
    gamma = gec_weight_gamma(model, code.scheme)
    pf = np.zeros((N + 1, N + 1, N + 1))
    pu = np.zeros_like(pf)
    for n_g in range(N + 1):
        f, u = _gec_conditional_terms(n_g, N, gamma, code)
        pf[n_g, : n_g + 1, : N - n_g + 1] = f
        pu[n_g, : n_g + 1, : N - n_g + 1] = u
    return pf, pu


def gec_random_profile(model: ChannelModel, code: CodeSpec, occupancy: OccupancyDistribution = None) -> FailureProfile:
    if not code.scheme.is_random:
        raise ConfigurationError("gec_random_profile needs a random-coding scheme")
    if model.is_bsc:
        raise ConfigurationError("gec_random_profile needs a Gilbert-Elliott channel")
    N = code.N
    if occupancy is None:
        occupancy = occupancy_distribution(model, N)
    if occupancy.block_length != N:
        raise ConfigurationError(f"occupancy block length {occupancy.block_length} != N={N}")
    gamma = gec_weight_gamma(model, code.scheme)
    fail = np.empty(N + 1)
    undet = np.empty(N + 1)
    for n_g in range(N + 1):
        wg = stats.binom.pmf(np.arange(n_g + 1), n_g, model.eps_g)
        wb = stats.binom.pmf(np.arange(N - n_g + 1), N - n_g, model.eps_b)
        f, u = _gec_conditional_terms(n_g, N, gamma, code)
        fail[n_g] = wg @ f @ wb
        undet[n_g] = wg @ u @ wb
    table = occupancy.table
    return FailureProfile(
        N,
        table @ fail,
        table @ undet,
        table.sum(axis=2),
        model.stationary,
    )


# --- BCH codes ---------------------------------------------------------------


def bch_failure(code: CodeSpec, e: int) -> float:
    """Bounded-distance decoding fails when more than ``t - nu`` errors occur."""
    if code.scheme is not Scheme.BCH:
        raise ConfigurationError("bch_failure needs a BCH code")
    return 1.0 if e > code.t - code.nu else 0.0


def binomial_like_weights(code: CodeSpec):
    """Approximate BCH weight distribution ``A_l`` (error term set to zero)."""
    N, t, m = code.N, code.t, code.m
    A = np.zeros(N + 1)
    A[0] = 1.0
    half = N // 2
    ls = np.arange(code.d_min, half + 1)
    A[ls] = np.exp(log_binom(N, ls) - m * t * LN2)
    for l in range(half + 1, N + 1):
        A[l] = A[N - l]
    return A


def load_weight_enumerator(path, N=None):
    """Read a weight enumerator file with lines ``l A_l`` (``#`` starts a comment)."""
    entries = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ConfigurationError(f"{path}:{lineno}: expected 'l A_l', got {raw.strip()!r}")
            try:
                l, a = int(parts[0]), float(parts[1])
            except ValueError:
                raise ConfigurationError(f"{path}:{lineno}: cannot parse {raw.strip()!r}") from None
            if l < 0 or a < 0:
                raise ConfigurationError(f"{path}:{lineno}: negative weight or count")
            entries[l] = a
    size = (N if N is not None else max(entries, default=0)) + 1
    if entries and max(entries) >= size:
        raise ConfigurationError(f"{path}: weight {max(entries)} exceeds block length {size - 1}")
    A = np.zeros(size)
    for l, a in entries.items():
        A[l] = a
    return A


def _resolve_weights(code, weights):
    if isinstance(weights, str):
        if weights != "binomial-like":
            raise ConfigurationError(f"unknown weight source {weights!r}")
        return binomial_like_weights(code)
    A = np.asarray(weights, dtype=float)
    if A.shape[0] > code.N + 1:
        raise ConfigurationError("weight table longer than N + 1")
    return np.pad(A, (0, code.N + 1 - A.shape[0]))


def bch_undetected_weights(code: CodeSpec, weights=None, mode="approx"):
    """``W(e)`` for ``e = 0..N``; zero inside the detection radius ``t + nu``.

    ``mode="approx"`` uses the constant ``2**(-m t) sum_{j<=t-nu} C(N, j)``.
    ``mode="exact"`` counts weight-``e`` words in the shrunken decoding
    spheres of the codewords given by ``weights`` (an ``A_l`` table or
    ``"binomial-like"``).
    """
    if code.scheme is not Scheme.BCH:
        raise ConfigurationError("BCH undetected-error weights need a BCH code")
    N, t, nu = code.N, code.t, code.nu
    W = np.zeros(N + 1)
    radius = t - nu
    if mode == "approx":
        log_w = log_cumulative_binom(N)[radius] - code.m * t * LN2
        W[t + nu + 1 :] = math.exp(log_w)
        return W
    if mode != "exact":
        raise ConfigurationError(f"unknown mode {mode!r}")
    if weights is None:
        raise ConfigurationError("exact W(e) needs a weight distribution table")
    A = _resolve_weights(code, weights)
    for e in range(t + nu + 1, N + 1):
        total = 0.0
        for j in range(radius + 1):
            for l in range(max(e - j, 0), min(e + j, N) + 1):
                if A[l] == 0.0 or (j + e - l) % 2:
                    continue
                # choose (j+e-l)/2 flips outside and (j-e+l)/2 inside the codeword support
                total += A[l] * math.comb(N - l, (j + e - l) // 2) * math.comb(l, (j - e + l) // 2)
        W[e] = total / math.comb(N, e)
    return W


def bch_undetected_weight(code: CodeSpec, e: int, weights=None, mode="approx") -> float:
    """Conditional undetected-error probability ``W(e)`` given ``e`` channel errors."""
    e = _check_error_count(code, e)
    return float(bch_undetected_weights(code, weights, mode)[e])


def bch_profile(model: ChannelModel, code: CodeSpec, joint_err: JointErrorDistribution = None,
                weights=None, mode="approx") -> FailureProfile:
    if code.scheme is not Scheme.BCH:
        raise ConfigurationError("bch_profile needs a BCH code")
    if joint_err is None:
        joint_err = joint_error_distribution(model, code.N)
    if joint_err.block_length != code.N or joint_err.n_states != model.n_states:
        raise ConfigurationError(
            f"joint error table (N={joint_err.block_length}, states={joint_err.n_states}) "
            f"does not match code N={code.N} / channel states={model.n_states}"
        )
    J = joint_err.table
    fails = np.arange(code.N + 1) > code.t - code.nu
    W = bch_undetected_weights(code, weights, mode)
    return FailureProfile(code.N, J[:, :, fails].sum(axis=2), J @ W, J.sum(axis=2), model.stationary)


def failure_profile(model: ChannelModel, code: CodeSpec, *, joint=None, occupancy=None,
                    weights=None, weight_mode="approx") -> FailureProfile:
    """Dispatch to the profile routine matching the code scheme and channel kind."""
    if code.scheme is Scheme.BCH:
        return bch_profile(model, code, joint, weights, weight_mode)
    if model.is_bsc:
        return bsc_random_profile(model, code)
    return gec_random_profile(model, code, occupancy)
