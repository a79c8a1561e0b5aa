"""Packet arrivals per codeword and segment bookkeeping.

All rates are per channel use.  A codeword occupies ``N`` channel uses, so
Poisson arrivals with rate ``lam`` give ``Poisson(lam * N)`` packets per
codeword.  Packet lengths are geometric with mean ``1 / rho`` bits and every
codeword carries ``K - h`` payload bits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .channel import polynomial_matrix_power, two_state_occupancy_matrix
from .errors import ConfigurationError, ParameterError, UnsupportedOperationError

DEFAULT_TAIL_EPS = 1e-12


@dataclass(frozen=True)
class MMPP:
    """Two-state Markov-modulated Poisson process.

    The modulator moves once per channel use.  State 0 emits at rate
    ``lambda1``, state 1 at rate ``lambda2``.
    """

    lambda1: float
    lambda2: float
    modulator: tuple

    def __post_init__(self):
        P = np.asarray(self.modulator, dtype=float)
        if P.shape != (2, 2) or np.any(P < 0) or np.any(P > 1):
            raise ParameterError(f"modulator must be a 2x2 matrix of probabilities, got {self.modulator!r}")
        if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ParameterError("modulator rows must sum to 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ParameterError("MMPP rates must be nonnegative")
        object.__setattr__(self, "modulator", tuple(map(tuple, P.tolist())))

    @property
    def matrix(self):
        return np.array(self.modulator)

    @property
    def rates(self):
        return np.array([self.lambda1, self.lambda2])

    @property
    def stationary(self):
        P = self.matrix
        a, b = P[0, 1], P[1, 0]
        if a + b == 0:
            return np.array([0.5, 0.5])
        return np.array([b, a]) / (a + b)

    @property
    def mean_rate(self):
        return float(self.stationary @ self.rates)


@dataclass(frozen=True)
class TrafficModel:
    lam: float
    rho: float
    header_bits: int = 0
    mmpp: Optional[MMPP] = None

    def __post_init__(self):
        if self.mmpp is None and not self.lam > 0:
            raise ParameterError(f"arrival rate must be positive, got {self.lam!r}")
        if not 0.0 < self.rho < 1.0:
            raise ParameterError(f"geometric packet parameter must lie in (0, 1), got {self.rho!r}")
        if int(self.header_bits) != self.header_bits or self.header_bits < 0:
            raise ParameterError(f"header bits must be a nonnegative integer, got {self.header_bits!r}")
        object.__setattr__(self, "header_bits", int(self.header_bits))

    @property
    def mean_rate(self):
        """Long-run packets per channel use."""
        return self.mmpp.mean_rate if self.mmpp is not None else self.lam

    @property
    def mean_packet_bits(self):
        return 1.0 / self.rho


@dataclass(frozen=True)
class ArrivalDistribution:
    """Truncated per-codeword arrival law.

    Poisson: ``terms[i]`` for ``i = 0..T``.  MMPP: ``terms[i, m, l]`` is the
    probability of ``i`` arrivals jointly with the modulator ending in ``l``
    given it started in ``m``.  ``truncation_mass`` is the largest residual
    over start states.
    """

    terms: np.ndarray
    truncation_mass: float
    end_law: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def truncation_index(self):
        return self.terms.shape[0] - 1

    @property
    def is_modulated(self):
        return self.terms.ndim == 3

    def folded(self):
        """Terms with the residual added to the last retained term.

        Rows are then exactly stochastic; for MMPP the deficit is added per
        ``(m, l)`` so the modulator's end-state law stays exact.
        """
        out = self.terms.copy()
        if self.is_modulated:
            out[-1] += self.end_law - out.sum(axis=0)
        else:
            out[-1] += 1.0 - out.sum()
        return out


def segment_completion_prob(traffic: TrafficModel, code) -> float:
    """Probability that a decoded codeword finishes the head-of-line packet."""
    K = getattr(code, "K", code)
    payload = int(K) - traffic.header_bits
    if payload < 1:
        raise ConfigurationError(f"payload exhausted by header: K={K}, h={traffic.header_bits}")
    return float(-np.expm1(payload * np.log1p(-traffic.rho)))


def _truncation_index(mean, tail_eps):
    if mean <= 0:
        return 0
    T = int(mean)
    while stats.poisson.sf(T, mean) >= tail_eps:
        T += 1
    return T


def poisson_arrivals(traffic: TrafficModel, N: int, tail_eps: float = DEFAULT_TAIL_EPS) -> ArrivalDistribution:
    if N < 1:
        raise ParameterError(f"block length must be positive, got {N!r}")
    mean = traffic.lam * N
    T = _truncation_index(mean, tail_eps)
    terms = stats.poisson.pmf(np.arange(T + 1), mean) if mean > 0 else np.eye(1)[0]
    return ArrivalDistribution(terms, float(max(0.0, stats.poisson.sf(T, mean))) if mean > 0 else 0.0)


def poisson_given_occupancy(i_max, t, N, lambda1, lambda2):
    """P(K_a = i | T_1 = t) for i = 0..i_max, by convolving both Poisson laws."""
    p1 = stats.poisson.pmf(np.arange(i_max + 1), lambda1 * t)
    p2 = stats.poisson.pmf(np.arange(i_max + 1), lambda2 * (N - t))
    return np.convolve(p1, p2)[: i_max + 1]


def mmpp_arrivals(traffic: TrafficModel, N: int, tail_eps: float = DEFAULT_TAIL_EPS) -> ArrivalDistribution:
    if traffic.mmpp is None:
        raise UnsupportedOperationError("traffic model has no MMPP modulator")
    if N < 1:
        raise ParameterError(f"block length must be positive, got {N!r}")
    mm = traffic.mmpp
    T = _truncation_index(max(mm.lambda1, mm.lambda2) * N, tail_eps)
    # occupancy[m, l, t]: t uses in modulator state 0 (rate lambda1)
    occupancy = polynomial_matrix_power(two_state_occupancy_matrix(mm.matrix, marked_state=0), N)
    given = np.stack([poisson_given_occupancy(T, t, N, mm.lambda1, mm.lambda2) for t in range(N + 1)])
    terms = np.einsum("ti,mlt->iml", given, occupancy)
    end_law = occupancy.sum(axis=2)
    residual = float(np.max(end_law.sum(axis=1) - terms.sum(axis=(0, 2))))
    return ArrivalDistribution(terms, max(residual, 0.0), end_law)


def arrivals(traffic: TrafficModel, N: int, tail_eps: float = DEFAULT_TAIL_EPS) -> ArrivalDistribution:
    """Poisson or MMPP arrivals depending on the traffic model."""
    if traffic.mmpp is not None:
        return mmpp_arrivals(traffic, N, tail_eps)
    return poisson_arrivals(traffic, N, tail_eps)
