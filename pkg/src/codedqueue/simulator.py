"""Monte Carlo simulation of the coded queue.

Channel paths are sampled as alternating geometric sojourns, so only state
run boundaries are materialized, not every channel use.  Per block the
simulator draws the good/bad error counts, decides the decoding outcome and
runs the packet queue in a compiled loop.

Random streams (Philox, one per concern, derived from the run seed)::

    0 channel path and errors   1 arrivals   2 packet lengths   3 decoding draws
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
from scipy import stats

from .channel import BAD, GOOD, ChannelModel
from .coding import CodeSpec, Scheme, bch_undetected_weights, bsc_random_terms, gec_conditional_tables
from .errors import InstabilityError, ParameterError
from .queueing import GMatrix, QueueChain
from .traffic import TrafficModel

STREAM_CHANNEL, STREAM_ARRIVALS, STREAM_LENGTHS, STREAM_DECODE = range(4)
SUCCESS, DETECTED, UNDETECTED = 0, 1, 2
CHUNK_USES = 1 << 24


class LengthMode(str, enum.Enum):
    GEOMETRIC = "geometric"
    CONSTANT = "constant"


class UndetectedMode(str, enum.Enum):
    GENIE = "genie"
    CRC_LATE = "crc-late"


@dataclass(frozen=True)
class SimConfig:
    slots: int
    seed: int
    packet_length_mode: LengthMode = LengthMode.GEOMETRIC
    undetected_mode: UndetectedMode = UndetectedMode.GENIE
    warmup: int = 0
    constant_length: Optional[int] = None
    batches: int = 50
    replications: int = 1
    taus: tuple = tuple(range(11))

    def __post_init__(self):
        object.__setattr__(self, "packet_length_mode", LengthMode(self.packet_length_mode))
        object.__setattr__(self, "undetected_mode", UndetectedMode(self.undetected_mode))
        if not 0 <= self.warmup < self.slots:
            raise ParameterError(f"need 0 <= warmup < slots, got warmup={self.warmup}, slots={self.slots}")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")
        if self.packet_length_mode is LengthMode.CONSTANT and (self.constant_length is None or self.constant_length < 1):
            raise ParameterError("constant packet length must be a positive integer")
        if self.batches < 2 or (self.slots - self.warmup) < self.batches:
            raise ParameterError("need at least 2 batches and one slot per batch")
        if self.replications < 1:
            raise ParameterError("replications must be positive")


@dataclass
class SimReport:
    ccdf: dict
    mean_queue: float
    decode_counters: dict
    effective_service_rate: float
    seed: int
    slots: int
    level_histogram: np.ndarray = field(repr=False, default=None)

    def ccdf_rows(self):
        return [(tau, est, hw) for tau, (est, hw) in sorted(self.ccdf.items())]


def stream(seed, key, replication=0):
    """Independent Philox generator for one concern of one replication."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(replication, key))
    return np.random.Generator(np.random.Philox(ss))


# --- state paths -------------------------------------------------------------


def marked_counts(rng, leave_prob, start_state, marked_state, n_blocks, N):
    """Uses spent in ``marked_state`` per block of ``N`` uses for a two-state chain.

    ``leave_prob[s]`` is the per-use probability of leaving state ``s``, so
    sojourns are geometric.  Work proceeds in chunks of whole blocks; since
    sojourns are memoryless each chunk restarts from the state occupied at
    its first use.  Returns the counts and the state after the last block.
    """
    counts = np.empty(n_blocks, dtype=np.int64)
    blocks_per_chunk = max(1, CHUNK_USES // N)
    state = int(start_state)
    done = 0
    while done < n_blocks:
        nb = min(blocks_per_chunk, n_blocks - done)
        need = nb * N
        pieces, covered = [], 0
        while covered < need:
            # alternate sojourns until the chunk is covered
            mean_pair = sum(1.0 / max(p, 1.0 / (need + 1)) for p in leave_prob)
            k = int((need - covered) / mean_pair * 1.1) + 8
            lens = np.empty((k, 2), dtype=np.int64)
            for j, st in enumerate((state, 1 - state)):
                p = leave_prob[st]
                lens[:, j] = rng.geometric(p, k) if p > 0 else need + 1
            pieces.append(lens.ravel())
            covered += int(lens.sum())
        runs = np.concatenate(pieces)
        states = np.empty(len(runs), dtype=np.int64)
        states[0::2] = state
        states[1::2] = 1 - state
        ends = np.cumsum(runs)
        starts = ends - runs
        cum_marked = np.concatenate([[0], np.cumsum(np.where(states == marked_state, runs, 0))])
        b = np.arange(nb + 1, dtype=np.int64) * N
        idx = np.searchsorted(ends, b, side="right")
        inside = np.where(states[idx] == marked_state, b - starts[idx], 0)
        counts[done : done + nb] = np.diff(cum_marked[idx] + inside)
        state = int(states[idx[-1]])
        done += nb
    return counts, state


def sample_block_errors(model: ChannelModel, N: int, n_blocks: int, rng):
    """Per-block ``(n_g, e_g, e_b)`` along one stationary channel path."""
    if model.is_bsc:
        e = rng.binomial(N, model.p, n_blocks)
        return np.zeros(n_blocks, dtype=np.int64), np.zeros(n_blocks, dtype=np.int64), e
    start = BAD if rng.random() < model.stationary[BAD] else GOOD
    leave = np.array([model.alpha, model.beta])
    n_g, _ = marked_counts(rng, leave, start, GOOD, n_blocks, N)
    e_g = rng.binomial(n_g, model.eps_g)
    e_b = rng.binomial(N - n_g, model.eps_b)
    return n_g, e_g, e_b


def decode_outcomes(model: ChannelModel, code: CodeSpec, n_g, e_g, e_b, rng, weights=None, weight_mode="approx"):
    """Success / detected / undetected code per block."""
    u = rng.random(len(e_b))
    if code.scheme is Scheme.BCH:
        e = e_g + e_b
        W = bch_undetected_weights(code, weights, weight_mode)
        out = np.where(e > code.t - code.nu, DETECTED, SUCCESS)
        out[(e > code.t + code.nu) & (u < W[e])] = UNDETECTED
        return out.astype(np.int8)
    if model.is_bsc:
        pf, pu = bsc_random_terms(code)
        pf_b, pu_b = pf[e_b], pu[e_b]
    else:
        pf, pu = gec_conditional_tables(model, code)
        pf_b, pu_b = pf[n_g, e_g, e_b], pu[n_g, e_g, e_b]
    out = np.where(u < pf_b, DETECTED, SUCCESS)
    out[u < pu_b] = UNDETECTED
    return out.astype(np.int8)


def sample_arrivals(traffic: TrafficModel, N: int, n_blocks: int, rng):
    if traffic.mmpp is None:
        return rng.poisson(traffic.lam * N, n_blocks)
    mm = traffic.mmpp
    start = 0 if rng.random() < mm.stationary[0] else 1
    leave = np.array([mm.matrix[0, 1], mm.matrix[1, 0]])
    t, _ = marked_counts(rng, leave, start, 0, n_blocks, N)
    return rng.poisson(mm.lambda1 * t + mm.lambda2 * (N - t))


def packet_segments(traffic: TrafficModel, code: CodeSpec, count: int, rng, mode: LengthMode, constant_length=None):
    payload = code.K - traffic.header_bits
    if payload < 1:
        raise ParameterError("payload exhausted by header")
    mode = LengthMode(mode)
    if mode is LengthMode.CONSTANT:
        return np.full(count, -(-int(constant_length) // payload), dtype=np.int64)
    bits = rng.geometric(traffic.rho, count)
    return -(-bits // payload)


@numba.njit(cache=True)
def _run_queue(outcomes, arrivals, segments, crc_late, warmup):
    """Queue length at the start of every slot and departures after ``warmup``.

    Packets are served FIFO; ``segments[k]`` is the segment count of the
    k-th arriving packet.  With ``crc_late`` an undetected error is accepted
    as progress and the packet restarts from its first segment on completion.
    """
    n = outcomes.shape[0]
    q_hist = np.empty(n, dtype=np.int64)
    head = 0
    tail = 0
    remaining = 0
    corrupted = False
    departures = 0
    for s in range(n):
        q = tail - head
        q_hist[s] = q
        if q > 0:
            if remaining == 0:
                remaining = segments[head]
            o = outcomes[s]
            if o == 0 or (o == 2 and crc_late):
                if o == 2:
                    corrupted = True
                remaining -= 1
                if remaining == 0:
                    if corrupted:
                        remaining = segments[head]
                        corrupted = False
                    else:
                        head += 1
                        if s >= warmup:
                            departures += 1
        tail += arrivals[s]
    return q_hist, departures


def _batch_ccdf(q, taus, batches):
    """Point estimate and 95% batch-means half-width of ``P(Q > tau)``."""
    n = (len(q) // batches) * batches
    qb = q[:n].reshape(batches, -1)
    tq = stats.t.ppf(0.975, batches - 1)
    out = {}
    for tau in taus:
        means = (qb > tau).mean(axis=1)
        est = float((q > tau).mean())
        out[int(tau)] = (est, float(tq * means.std(ddof=1) / math.sqrt(batches)))
    return out


def simulate_replication(model, code, traffic, sim: SimConfig, replication=0, weights=None, weight_mode="approx"):
    """Queue length trajectory, decoding outcomes and departures for one replication."""
    rng_ch = stream(sim.seed, STREAM_CHANNEL, replication)
    rng_arr = stream(sim.seed, STREAM_ARRIVALS, replication)
    rng_len = stream(sim.seed, STREAM_LENGTHS, replication)
    rng_dec = stream(sim.seed, STREAM_DECODE, replication)
    n_g, e_g, e_b = sample_block_errors(model, code.N, sim.slots, rng_ch)
    outcomes = decode_outcomes(model, code, n_g, e_g, e_b, rng_dec, weights, weight_mode)
    arr = sample_arrivals(traffic, code.N, sim.slots, rng_arr).astype(np.int64)
    segs = packet_segments(traffic, code, int(arr.sum()), rng_len, sim.packet_length_mode, sim.constant_length)
    w = sim.warmup
    q, dep = _run_queue(outcomes, arr, segs, sim.undetected_mode is UndetectedMode.CRC_LATE, w)
    return q[w:], outcomes[w:], int(dep)


def simulate(model: ChannelModel, code: CodeSpec, traffic: TrafficModel, sim: SimConfig,
             weights=None, weight_mode="approx") -> SimReport:
    """Estimate the queue-length CCDF by simulation; identical configs give identical reports."""
    qs, outs, deps = [], [], 0
    for r in range(sim.replications):
        q, o, d = simulate_replication(model, code, traffic, sim, r, weights, weight_mode)
        qs.append(q)
        outs.append(o)
        deps += d
    # batches are formed per replication and pooled
    per = sim.batches
    if sim.replications == 1:
        ccdf = _batch_ccdf(qs[0], sim.taus, per)
    else:
        n = min(len(q) for q in qs) // per * per
        stacked = np.concatenate([q[:n] for q in qs])
        ccdf = _batch_ccdf(stacked, sim.taus, per * sim.replications)
    q_all = np.concatenate(qs)
    o_all = np.concatenate(outs)
    counters = {
        "success": int(np.sum(o_all == SUCCESS)),
        "detected_fail": int(np.sum(o_all == DETECTED)),
        "undetected_fail": int(np.sum(o_all == UNDETECTED)),
    }
    hist = np.bincount(q_all)
    return SimReport(ccdf, float(q_all.mean()), counters, deps / max(1, len(q_all)), sim.seed, sim.slots, hist)


# --- first-passage oracle for G ----------------------------------------------


@numba.njit(cache=True)
def _first_passage(cum, d, start_state, trials, max_steps, seed):
    np.random.seed(seed)
    counts = np.zeros(d + 1, dtype=np.int64)
    ncol = cum.shape[1]
    for _ in range(trials):
        level = 1
        state = start_state
        steps = 0
        while True:
            u = np.random.random()
            row = cum[state]
            j = 0
            while j < ncol - 1 and row[j] <= u:
                j += 1
            jump = j // d - 1
            state = j % d
            level += jump
            steps += 1
            if level == 0:
                counts[state] += 1
                break
            if steps >= max_steps:
                counts[d] += 1
                break
    return counts


@dataclass(frozen=True)
class FirstPassageEstimate:
    matrix: np.ndarray
    stderr: np.ndarray
    trials: int
    censored: np.ndarray


def first_passage_check(chain: QueueChain, g: GMatrix = None, trials: int = 100_000, seed: int = 0,
                        max_steps: int = 1_000_000, force: bool = False) -> FirstPassageEstimate:
    """Empirical distribution of the entry phase into the next lower level.

    Starting one level above the target in each phase, trajectories are
    simulated with the repeating blocks until they first drop a level.
    """
    if not chain.is_stable and not force:
        raise InstabilityError("first passage need not terminate on an unstable chain")
    d = chain.block_dim
    blocks = np.concatenate([chain.B[None], chain.A[None], chain.F], axis=0)
    rows = np.transpose(blocks, (1, 0, 2)).reshape(d, -1)
    rows = rows / rows.sum(axis=1, keepdims=True)
    cum = np.cumsum(rows, axis=1)
    cum[:, -1] = 1.0
    est = np.zeros((d, d))
    censored = np.zeros(d, dtype=np.int64)
    ss = np.random.SeedSequence(int(seed))
    seeds = ss.generate_state(d)
    for r in range(d):
        c = _first_passage(cum, d, r, trials, max_steps, int(seeds[r] & 0x7FFFFFFF))
        est[r] = c[:d] / trials
        censored[r] = c[d]
    stderr = np.sqrt(np.maximum(est * (1 - est), 0.0) / trials)
    return FirstPassageEstimate(est, stderr, trials, censored)
