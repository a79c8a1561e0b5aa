"""Binary symmetric and Gilbert-Elliott channels.

States are always ordered ``(bad, good)``, i.e. index 0 is the bad state and
index 1 the good state.  A block of ``N`` channel uses starts in state
``C_1`` (the state during the first use) and ends in ``C_{N+1}`` (the state
during the first use of the next block).

The joint law of the error count and the boundary states is obtained from
the ``N``-th power of a 2x2 matrix of first-degree polynomials, where the
polynomial variable marks the event being counted.  The same kernel is used
for error counts, good-state occupancy and MMPP modulator occupancy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import integrate, special

from .errors import NumericalError, ParameterError, UnsupportedOperationError

BAD, GOOD = 0, 1


class ChannelKind(str, Enum):
    BSC = "bsc"
    GILBERT_ELLIOTT = "gilbert-elliott"


def _check_prob(name, value):
    if not (isinstance(value, (int, float, np.floating)) and 0.0 <= float(value) <= 1.0):
        raise ParameterError(f"{name} must be a probability in [0, 1], got {value!r}")
    return float(value)


@dataclass(frozen=True)
class ChannelModel:
    """A BSC(p) or a two-state Gilbert-Elliott channel.

    ``alpha`` is the bad->good transition probability, ``beta`` the
    good->bad one.  For the BSC only ``p`` is meaningful.
    """

    kind: ChannelKind
    p: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    eps_g: float = 0.0
    eps_b: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ChannelKind(self.kind))
        for name in ("p", "alpha", "beta", "eps_g", "eps_b"):
            object.__setattr__(self, name, _check_prob(name, getattr(self, name)))

    @classmethod
    def bsc(cls, p):
        return cls(ChannelKind.BSC, p=p)

    @classmethod
    def gilbert_elliott(cls, alpha, beta, eps_g, eps_b):
        return cls(ChannelKind.GILBERT_ELLIOTT, alpha=alpha, beta=beta, eps_g=eps_g, eps_b=eps_b)

    @property
    def is_bsc(self):
        return self.kind is ChannelKind.BSC

    @property
    def n_states(self):
        return 1 if self.is_bsc else 2

    @property
    def transition_matrix(self):
        if self.is_bsc:
            return np.ones((1, 1))
        a, b = self.alpha, self.beta
        return np.array([[1.0 - a, a], [b, 1.0 - b]])

    @property
    def crossover(self):
        """Per-state crossover probabilities in state order."""
        if self.is_bsc:
            return np.array([self.p])
        return np.array([self.eps_b, self.eps_g])

    @property
    def stationary(self):
        """Steady-state distribution of the channel state, ``(bad, good)``."""
        if self.is_bsc:
            return np.ones(1)
        total = self.alpha + self.beta
        if total == 0.0:
            raise ParameterError("alpha = beta = 0: the state chain has no unique stationary law")
        return np.array([self.beta / total, self.alpha / total])

    def as_gilbert_elliott(self, alpha=0.5, beta=0.5):
        """Embed a BSC into a GE channel with equal crossover in both states."""
        if not self.is_bsc:
            return self
        return ChannelModel.gilbert_elliott(alpha, beta, self.p, self.p)

    def error_polynomial_matrix(self):
        """Coefficients of P_x as an ``(S, S, 2)`` array (constant, linear)."""
        eps = self.crossover
        P = self.transition_matrix
        out = np.empty(P.shape + (2,))
        out[..., 0] = P * (1.0 - eps)[:, None]
        out[..., 1] = P * eps[:, None]
        return out

    def occupancy_polynomial_matrix(self):
        """Generating matrix whose variable marks a channel use in the good state."""
        if self.is_bsc:
            raise UnsupportedOperationError("occupancy is degenerate for a BSC")
        return two_state_occupancy_matrix(self.transition_matrix, marked_state=GOOD)


def two_state_occupancy_matrix(P, marked_state):
    """Linear polynomial matrix marking uses spent in ``marked_state``.

    Row ``c`` is multiplied by ``x`` when ``c == marked_state`` because the
    row index is the state occupied during the use.
    """
    P = np.asarray(P, dtype=float)
    out = np.zeros(P.shape + (2,))
    for c in range(P.shape[0]):
        out[c, :, 1 if c == marked_state else 0] = P[c]
    return out


def polynomial_matrix_power(step, n):
    """Return the coefficients of ``M(x)**n`` for a first-degree matrix ``M``.

    ``step`` has shape ``(S, S, 2)``; the result has shape ``(S, S, n + 1)``
    with ``[c, d, k]`` the coefficient of ``x**k`` in entry ``(c, d)``.
    Exact convolution, O(n**2 S**3).
    """
    step = np.asarray(step, dtype=float)
    S = step.shape[0]
    res = np.zeros((S, S, n + 1))
    res[:, :, 0] = np.eye(S)
    m0, m1 = step[..., 0], step[..., 1]
    for k in range(n):
        # only degrees 0..k are populated before this step
        cur = res[:, :, : k + 1]
        nxt = np.zeros_like(res[:, :, : k + 2])
        nxt[:, :, : k + 1] = np.einsum("cjk,jd->cdk", cur, m0)
        nxt[:, :, 1 : k + 2] += np.einsum("cjk,jd->cdk", cur, m1)
        res[:, :, : k + 2] = nxt
    return res


@dataclass(frozen=True)
class JointErrorDistribution:
    """``table[c, d, e] = P(E = e, C_{N+1} = d | C_1 = c)``."""

    block_length: int
    table: np.ndarray

    @property
    def n_states(self):
        return self.table.shape[0]

    def transition(self):
        """N-step state transition matrix ``P^N``."""
        return self.table.sum(axis=2)

    def error_pmf(self, start_weights=None):
        """Marginal law of the error count, averaged over start states."""
        if start_weights is None:
            start_weights = np.full(self.n_states, 1.0 / self.n_states)
        return np.einsum("c,cde->e", np.asarray(start_weights, float), self.table)


@dataclass(frozen=True)
class OccupancyDistribution:
    """``table[c, d, n] = P(N_g = n, C_{N+1} = d | C_1 = c)``."""

    block_length: int
    table: np.ndarray


def joint_error_distribution(model: ChannelModel, N: int) -> JointErrorDistribution:
    if int(N) != N or N < 1:
        raise ParameterError(f"block length must be a positive integer, got {N!r}")
    N = int(N)
    table = polynomial_matrix_power(model.error_polynomial_matrix(), N)
    np.clip(table, 0.0, None, out=table)
    return JointErrorDistribution(N, table)


def occupancy_distribution(model: ChannelModel, N: int) -> OccupancyDistribution:
    if model.is_bsc:
        raise UnsupportedOperationError("occupancy distribution requires a Gilbert-Elliott channel")
    if int(N) != N or N < 1:
        raise ParameterError(f"block length must be a positive integer, got {N!r}")
    N = int(N)
    table = polynomial_matrix_power(model.occupancy_polynomial_matrix(), N)
    np.clip(table, 0.0, None, out=table)
    return OccupancyDistribution(N, table)


def _binom_pmf(k, n, p):
    if p == 0.0:
        return 1.0 if k == 0 else 0.0
    if p == 1.0:
        return 1.0 if k == n else 0.0
    return math.comb(n, k) * p**k * (1.0 - p) ** (n - k)


def conditional_state_errors(n_g, n_b, e_g, e_b, model: ChannelModel) -> float:
    """P(E_g = e_g, E_b = e_b | N_g = n_g, N_b = n_b).

    Given the channel type the two error counts are independent binomials.
    """
    for name, v in (("n_g", n_g), ("n_b", n_b), ("e_g", e_g), ("e_b", e_b)):
        if int(v) != v or v < 0:
            raise ParameterError(f"{name} must be a nonnegative integer, got {v!r}")
    if e_g > n_g or e_b > n_b:
        raise ParameterError(f"error counts exceed visits: e_g={e_g} > n_g={n_g} or e_b={e_b} > n_b={n_b}")
    return _binom_pmf(int(e_g), int(n_g), model.eps_g) * _binom_pmf(int(e_b), int(n_b), model.eps_b)


# --- fading -> Gilbert-Elliott mapping ------------------------------------


def q_function(x):
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def qpsk_symbol_error(snr):
    """QPSK symbol error probability at linear SNR ``snr``."""
    return 1.0 - (1.0 - q_function(np.sqrt(snr))) ** 2


def rayleigh_snr_pdf(snr, mean_snr):
    return np.exp(-np.asarray(snr, dtype=float) / mean_snr) / mean_snr


def _quad(f, lo, hi, what):
    value, abserr, info = integrate.quad(f, lo, hi, epsabs=1e-10, epsrel=1e-10, limit=200, full_output=1)[:3]
    if not np.isfinite(value) or abserr > 1e-8:
        raise NumericalError(
            f"quadrature for {what} on [{lo}, {hi}] did not converge: "
            f"value={value!r}, abserr={abserr!r}, evaluations={info.get('neval')}"
        )
    return value


def from_fading(doppler_symbol_product, snr_threshold_db, mean_snr_db) -> ChannelModel:
    """Map a Rayleigh-fading QPSK link onto a Gilbert-Elliott channel.

    The channel is bad while the instantaneous SNR is below the threshold.
    Transition rates follow from the level-crossing rate of the Rayleigh
    envelope; per-state crossover probabilities average the QPSK symbol
    error rate over the SNR density restricted to each region.
    """
    fdts = float(doppler_symbol_product)
    if not fdts > 0.0:
        raise ParameterError(f"normalized Doppler f_D*T_s must be positive, got {doppler_symbol_product!r}")
    mean_snr = 10.0 ** (float(mean_snr_db) / 10.0)
    threshold = 10.0 ** (float(snr_threshold_db) / 10.0)
    snr_ratio = 10.0 ** ((float(snr_threshold_db) - float(mean_snr_db)) / 20.0)

    beta = snr_ratio * fdts * math.sqrt(2.0 * math.pi)
    alpha = beta / math.expm1(snr_ratio**2)
    if not (0.0 < alpha <= 1.0 and 0.0 < beta <= 1.0):
        raise ParameterError(
            f"fading parameters give transition probabilities outside (0, 1]: alpha={alpha}, beta={beta}"
        )

    def integrand(g):
        return rayleigh_snr_pdf(g, mean_snr) * qpsk_symbol_error(g)

    upper = 10.0 * mean_snr
    good_mass = _quad(integrand, threshold, max(upper, threshold), "good-state error rate") if upper > threshold else 0.0
    bad_mass = _quad(integrand, 0.0, threshold, "bad-state error rate")
    eps_g = (alpha + beta) / alpha * good_mass
    eps_b = (alpha + beta) / beta * bad_mass
    return ChannelModel.gilbert_elliott(alpha, beta, min(eps_g, 1.0), min(eps_b, 1.0))


#: Gilbert-Elliott parameters reported for the VoIP fading scenario
#: (20 mph, 2.1 GHz, QPSK, 2 dB threshold, 15 dB mean SNR).
VOIP_GE_PARAMETERS = dict(alpha=0.3938, beta=0.0202, eps_g=0.0097, eps_b=0.3713)
