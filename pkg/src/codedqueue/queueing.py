"""Queue-length Markov chain of a coded link and its matrix-geometric solution.

The chain is indexed by level (queue length in packets) and phase (channel
state, optionally paired with the MMPP modulator state, phase index
``c * n_mod + m``).  It is skip-free to the left: a codeword slot removes at
most one packet but may bring any number of arrivals.

Block layout, all ``d x d``::

    level 0   -> 0: A_hat     -> i: F_hat[i-1]
    level q>0 -> q-1: B       -> q: A       -> q+i: F[i-1]
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .coding import CodeSpec, FailureProfile
from .errors import InstabilityError, NumericalError, PrecisionError, SolverError
from .traffic import DEFAULT_TAIL_EPS, TrafficModel, arrivals, segment_completion_prob

log = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-10


@dataclass(frozen=True)
class QueueChain:
    """Block description of an M/G/1-type chain.

    ``F[i-1]`` is the jump of ``i`` levels from a nonempty level and
    ``F_hat[i-1]`` the same from level 0.  ``stability_factor`` is the ratio
    of mean arrivals to mean departures per slot; when not given it is
    derived from the mean drift of the level process.
    """

    A_hat: np.ndarray
    F_hat: np.ndarray
    B: np.ndarray
    A: np.ndarray
    F: np.ndarray
    truncation_mass: float = 0.0
    stability_factor: Optional[float] = None

    def __post_init__(self):
        d = self.B.shape[0]
        for name in ("A_hat", "B", "A"):
            if getattr(self, name).shape != (d, d):
                raise ValueError(f"{name} must be {d}x{d}")
        for name in ("F", "F_hat"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1, d, d)
            object.__setattr__(self, name, arr)
        if self.stability_factor is None:
            object.__setattr__(self, "stability_factor", drift_ratio(self))

    @property
    def block_dim(self):
        return self.B.shape[0]

    @property
    def max_jump(self):
        return max(self.F.shape[0], self.F_hat.shape[0])

    @property
    def is_stable(self):
        return self.stability_factor < 1.0

    def row_sums(self):
        """Row sums of the boundary and of a repeating level."""
        boundary = self.A_hat.sum(axis=1) + self.F_hat.sum(axis=(0, 2))
        interior = self.B.sum(axis=1) + self.A.sum(axis=1) + self.F.sum(axis=(0, 2))
        return boundary, interior

    def dense(self, levels):
        """Finite truncation with ``levels`` levels; overflow is kept at the top level."""
        d = self.block_dim
        T = np.zeros((levels * d, levels * d))
        for q in range(levels):
            rows = slice(q * d, (q + 1) * d)
            if q == 0:
                blocks = [(0, self.A_hat)] + [(i + 1, Fi) for i, Fi in enumerate(self.F_hat)]
            else:
                blocks = [(q - 1, self.B), (q, self.A)] + [(q + i + 1, Fi) for i, Fi in enumerate(self.F)]
            for target, blk in blocks:
                target = min(target, levels - 1)
                T[rows, target * d : (target + 1) * d] += blk
        return T


def drift_ratio(chain: QueueChain) -> float:
    """Mean upward over mean downward level drift under the phase law of the generator."""
    M = chain.B + chain.A + chain.F.sum(axis=0)
    theta = _stationary_vector(M)
    down = float(theta @ chain.B.sum(axis=1))
    jumps = np.arange(1, chain.F.shape[0] + 1)
    up = float(theta @ np.einsum("i,iab->a", jumps, chain.F)) if chain.F.size else 0.0
    if down <= 0.0:
        return math.inf if up > 0.0 else 0.0
    return up / down


def _stationary_vector(M):
    d = M.shape[0]
    if d == 1:
        return np.ones(1)
    lhs = np.vstack([(M.T - np.eye(d))[:-1], np.ones(d)])
    rhs = np.zeros(d)
    rhs[-1] = 1.0
    return linalg.solve(lhs, rhs)


@dataclass(frozen=True)
class ServiceRate:
    mu_N: float
    stability_factor: float
    completion_prob: float


def service_rate(profile: FailureProfile, traffic: TrafficModel, code) -> ServiceRate:
    """Packets served per codeword and the offered-load ratio ``lambda N / mu_N``."""
    rr = segment_completion_prob(traffic, code)
    mu = rr * profile.avg_success
    offered = traffic.mean_rate * profile.block_length
    factor = offered / mu if mu > 0 else math.inf
    return ServiceRate(mu, factor, rr)


def build_chain(model, code: CodeSpec, traffic: TrafficModel, profile: FailureProfile,
                tail_eps: float = DEFAULT_TAIL_EPS) -> QueueChain:
    """Assemble the level blocks for a coded link with Poisson or MMPP arrivals."""
    if profile.block_length != code.N:
        raise ValueError(f"profile block length {profile.block_length} != code N={code.N}")
    if profile.n_states != model.n_states:
        raise ValueError("profile and channel disagree on the number of channel states")
    rr = segment_completion_prob(traffic, code)
    PN = profile.transition
    Pf = profile.cond_failure
    S = PN - Pf
    np.clip(S, 0.0, None, out=S)
    served = rr * S
    kept = Pf + (1.0 - rr) * S

    arr = arrivals(traffic, code.N, tail_eps)
    a = arr.folded()
    T = arr.truncation_index
    # a_{T+1} = 0 beyond the truncation
    a_next = np.concatenate([a[1:], np.zeros_like(a[:1])])

    if arr.is_modulated:
        def comp(ch, ar):
            return np.kron(ch, ar)
    else:
        def comp(ch, ar):
            return ch * ar

    B = comp(served, a[0])
    A = comp(served, a[1] if T >= 1 else np.zeros_like(a[0])) + comp(kept, a[0])
    F = np.stack([comp(served, a_next[i]) + comp(kept, a[i]) for i in range(1, T + 1)]) if T else None
    A_hat = comp(PN, a[0])
    F_hat = np.stack([comp(PN, a[i]) for i in range(1, T + 1)]) if T else None
    d = B.shape[0]
    if F is None:
        F = np.zeros((0, d, d))
        F_hat = np.zeros((0, d, d))
    factor = service_rate(profile, traffic, code).stability_factor
    return QueueChain(A_hat, F_hat, B, A, F, arr.truncation_mass, factor)


# --- G matrix -------------------------------------------------------------


@dataclass(frozen=True)
class GMatrix:
    matrix: np.ndarray
    iterations: int
    residual: float


def _forward_series(F, G):
    """``sum_j F[j-1] G^(j+1)`` by Horner's rule."""
    if F.shape[0] == 0:
        return np.zeros_like(G)
    H = F[-1]
    for Fj in F[-2::-1]:
        H = Fj + H @ G
    return H @ G @ G


def fixed_point_residual(chain: QueueChain, G) -> float:
    lhs = chain.A @ G + chain.B + _forward_series(chain.F, G) - G
    return float(np.max(np.abs(lhs)))


def solve_g(chain: QueueChain, tol: float = 1e-12, max_iter: int = 100_000, force: bool = False) -> GMatrix:
    """Minimal nonnegative solution of ``G = B + A G + sum_j F_j G^(j+1)``.

    Natural fixed-point iteration from ``G = 0``.  Refuses unstable chains
    unless ``force`` is set, since then ``G`` is substochastic and the
    stationary law does not exist.
    """
    if not chain.is_stable and not force:
        raise InstabilityError(
            f"stability factor {chain.stability_factor:.6g} >= 1; the queue has no stationary law "
            "(pass force=True to iterate anyway)"
        )
    d = chain.block_dim
    L = chain.A - np.eye(d)
    try:
        lu = linalg.lu_factor(L, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"A - I is singular: {exc}") from exc
    if np.min(np.abs(np.diag(lu[0]))) < 1e-300:
        raise NumericalError("A - I is singular")
    G = np.zeros((d, d))
    change = math.inf
    for it in range(1, max_iter + 1):
        G_new = -linalg.lu_solve(lu, chain.B + _forward_series(chain.F, G))
        change = float(np.max(np.abs(G_new - G)))
        G = G_new
        if change < tol:
            np.clip(G, 0.0, 1.0, out=G)
            return GMatrix(G, it, fixed_point_residual(chain, G))
    raise SolverError(f"G iteration did not converge in {max_iter} steps", residual=change, iterations=max_iter)


# --- stationary distribution ---------------------------------------------


@dataclass(frozen=True)
class StationaryDistribution:
    levels: np.ndarray
    residual_mass: float
    block_dim: int
    normalizable: bool = True

    @property
    def level_mass(self):
        return self.levels.sum(axis=1)

    @property
    def horizon(self):
        return self.levels.shape[0]

    def phase_marginal(self):
        return self.levels.sum(axis=0)


def _backward_sums(F, G, first=None):
    """``S[j] = sum_{l>=j} F_l G^(l-j)`` for ``j = 1..T``; optional ``S[0]`` from ``first``."""
    T, d = F.shape[0], G.shape[0]
    out = np.zeros((T + 1, d, d))
    acc = np.zeros((d, d))
    for j in range(T, 0, -1):
        acc = F[j - 1] + acc @ G
        out[j] = acc
    if first is not None:
        out[0] = first + acc @ G
    return out


def solve_stationary(chain: QueueChain, g: GMatrix = None, horizon_eps: float = 1e-10,
                     max_levels: int = 10_000_000, force: bool = False,
                     min_levels: int = 1) -> StationaryDistribution:
    """Level-by-level stationary vector from the boundary equation and the forward recursion.

    Levels are produced until the accumulated mass reaches
    ``1 - horizon_eps`` and at least ``min_levels`` are available; storage
    doubles on demand.
    """
    if g is None:
        g = solve_g(chain, force=force)
    G = g.matrix
    d = chain.block_dim
    eye = np.eye(d)
    L = chain.A - eye
    L_hat = chain.A_hat - eye
    T = chain.max_jump
    F = np.concatenate([chain.F, np.zeros((T - chain.F.shape[0], d, d))])
    F_hat = np.concatenate([chain.F_hat, np.zeros((T - chain.F_hat.shape[0], d, d))])
    S = _backward_sums(F, G, first=L)
    S_hat = _backward_sums(F_hat, G)

    try:
        S0_lu = linalg.lu_factor(S[0])
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"S(0) is singular: {exc}") from exc
    if np.min(np.abs(np.diag(S0_lu[0]))) < 1e-300:
        raise NumericalError("S(0) is singular")

    def right_solve(X):
        # X @ inv(S0)
        return linalg.lu_solve(S0_lu, X.T, trans=1).T

    boundary = L_hat - S_hat[1] @ linalg.lu_solve(S0_lu, chain.B) if T else L_hat
    try:
        H = S_hat[1:].sum(axis=0) @ linalg.inv(S.sum(axis=0)) if T else np.zeros((d, d))
    except linalg.LinAlgError as exc:
        raise NumericalError(f"sum of S blocks is singular: {exc}") from exc
    norm_col = 1.0 - H.sum(axis=1)
    system = np.column_stack([boundary[:, :-1], norm_col])
    rhs = np.zeros(d)
    rhs[-1] = 1.0
    try:
        pi0 = linalg.solve(system.T, rhs)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"boundary system is singular: {exc}") from exc

    # precompute S(j) inv(S0) and S_hat(j) inv(S0)
    R = np.stack([right_solve(S[j]) for j in range(1, T + 1)]) if T else np.zeros((0, d, d))
    R_hat = np.stack([right_solve(S_hat[j]) for j in range(1, T + 1)]) if T else np.zeros((0, d, d))

    cap = 64
    levels = np.zeros((cap, d))
    levels[0] = pi0
    mass = float(pi0.sum())
    n = 1
    while mass < 1.0 - horizon_eps or n < min_levels:
        if n >= max_levels:
            raise PrecisionError(f"mass {mass:.12g} after {n} levels; horizon limit reached")
        if n >= cap:
            cap *= 2
            levels = np.concatenate([levels, np.zeros((cap - levels.shape[0], d))])
        acc = pi0 @ R_hat[n - 1] if n <= T else np.zeros(d)
        for k in range(max(1, n - T), n):
            acc = acc + levels[k] @ R[n - k - 1]
        levels[n] = -acc
        mass += float(levels[n].sum())
        n += 1
    levels = levels[:n]
    if np.min(levels) < -1e-12:
        raise SolverError("stationary vector has negative entries", residual=float(np.min(levels)), iterations=n)
    np.clip(levels, 0.0, None, out=levels)
    residual = max(0.0, 1.0 - float(levels.sum()))
    return StationaryDistribution(levels, residual, d, normalizable=chain.is_stable)


def tail_probability(dist: StationaryDistribution, tau: int) -> float:
    """``P(Q > tau)`` with the unresolved mass beyond the horizon counted in full."""
    if int(tau) != tau or tau < 0:
        raise ValueError(f"tau must be a nonnegative integer, got {tau!r}")
    tau = int(tau)
    if tau + 1 >= dist.horizon and dist.residual_mass > 0.0:
        raise PrecisionError(
            f"horizon of {dist.horizon} levels is too short for tau={tau}; "
            f"unresolved mass {dist.residual_mass:.3g}; lower horizon_eps"
        )
    return float(min(1.0, dist.level_mass[tau + 1 :].sum() + dist.residual_mass))


def ccdf(dist: StationaryDistribution, taus) -> np.ndarray:
    return np.array([tail_probability(dist, t) for t in taus])


def analyze_point(model, code: CodeSpec, traffic: TrafficModel, profile: FailureProfile, tau: int,
                  tail_eps: float = DEFAULT_TAIL_EPS, horizon_eps: float = 1e-10):
    """Build, solve and read off the tail at ``tau``; returns ``(chain, g, dist, tail)``."""
    chain = build_chain(model, code, traffic, profile, tail_eps)
    g = solve_g(chain)
    dist = solve_stationary(chain, g, horizon_eps, min_levels=tau + 2)
    return chain, g, dist, tail_probability(dist, tau)
