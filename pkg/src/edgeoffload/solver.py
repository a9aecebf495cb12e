"""Offloading objective, weighted delay gap, greedy solvers, baselines and the exhaustive oracle.

All greedy variants share one loop: repeatedly evaluate the marginal delay
gap of every remaining (user, server) pair against the committed assignment,
commit the smallest, and stop either when the candidate set is empty or,
for the stopping variants, once no gap is negative. Ties go to the lowest
user index, then the lowest server index.
"""
from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import radio
from .assignment import Assignment
from .compute import edge_capacity_share, edge_compute_delay, local_delay, realized_delays

INF = float("inf")
DEFAULT_EXHAUSTIVE_BUDGET = 2_000_000


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class Step:
    step: int
    user: int
    server: int
    delta: float
    candidates: int
    phase: str = ""
    fallback: bool = False

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "user": self.user,
            "server": self.server,
            "delta": self.delta,
            "candidates": self.candidates,
            "phase": self.phase,
            "fallback": self.fallback,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Step":
        return cls(int(d["step"]), int(d["user"]), int(d["server"]), float(d["delta"]), int(d["candidates"]),
                   str(d.get("phase", "")), bool(d.get("fallback", False)))


@dataclass(frozen=True)
class SolverReport:
    assignment: Assignment
    objective: float
    offload_count: int
    iterations: int
    wall_time_s: float
    algorithm: str = ""
    steps: tuple[Step, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.offload_count != self.assignment.offload_count:
            raise ValueError("offload_count does not match the assignment")


# Objective ----------------------------------------------------------------


def _weighted_sum(alpha: np.ndarray, delays: np.ndarray) -> np.ndarray:
    # zero weight annihilates even an infinite delay
    with np.errstate(invalid="ignore"):
        return np.where(alpha > 0, alpha * delays, 0.0).sum(axis=-1)


def objective_batch(instance, server_idx: np.ndarray, strict_eq10: bool = False) -> np.ndarray:
    comm, comp = realized_delays(instance, server_idx)
    total = comm + comp
    if strict_eq10:
        # literal double sum: each non-chosen server adds one local-delay term
        t_local = local_delay(instance.w_slm, instance.c_local)[None, :]
        offloaded = np.atleast_2d(server_idx) >= 0
        m = instance.n_servers
        total = np.where(offloaded, total + (m - 1) * t_local, m * t_local)
    return _weighted_sum(instance.alpha[None, :], total)


def objective(instance, assignment: Assignment, strict_eq10: bool = False) -> float:
    """Uncertainty-weighted sum of realized per-user delays."""
    assignment.check(instance.n_users, instance.n_servers)
    return float(objective_batch(instance, assignment.to_array()[None, :], strict_eq10)[0])


# Surrogate ----------------------------------------------------------------


def compute_Q_c(instance, assignment: Optional[Assignment] = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair congestion-free cost Q and per-user local weight c.

    SINR and the noise band use the connected counts of ``assignment``
    (empty if omitted); interference at j excludes user i itself.
    """
    n, m = instance.n_users, instance.n_servers
    if assignment is None:
        assignment = Assignment.local(n)
    assignment.check(n, m)
    s = assignment.to_array()
    g = instance.channel_gain
    p = instance.radio
    counts = np.bincount(s[s >= 0], minlength=m)
    interference = radio.interference_matrix(g, s[None, :], p.tx_power_w)[0]  # (M,)
    # remove user i's own contribution when it sits on a server other than j
    own = np.where((s[:, None] >= 0) & (s[:, None] != np.arange(m)[None, :]), p.tx_power_w * g, 0.0)
    interf = interference[None, :] - own
    noise = radio.noise_power(p.noise_psd_dbm_per_hz, radio.allocate_bandwidth(p.bandwidth_hz, counts))
    snr = p.tx_power_w * g / (interf + noise[None, :])
    r = p.bandwidth_hz * np.log2(1.0 + snr)
    comm = radio.comm_delay(instance.query_bits[:, None], r)
    a = instance.alpha[:, None]
    q = np.where(a > 0, a * (instance.w_llm / instance.c_es[None, :] + comm), 0.0)
    c = instance.alpha * local_delay(instance.w_slm, instance.c_local)
    return q, c


def surrogate_objective(instance, assignment: Assignment) -> float:
    q, c = compute_Q_c(instance, assignment)
    s = assignment.to_array()
    counts = np.bincount(s[s >= 0], minlength=instance.n_servers)
    total = 0.0
    for i, j in enumerate(s):
        if j >= 0:
            total += q[i, j] * counts[j] - c[i]
    return float(total)


# Greedy engine ------------------------------------------------------------


class GreedyState:
    """Committed partial assignment plus the per-server sums the gap needs."""

    def __init__(self, instance, partial: Optional[Assignment] = None):
        self.instance = instance
        n, m = instance.n_users, instance.n_servers
        p = instance.radio
        self.server = np.full(n, -1, dtype=np.int64)
        self.counts = np.zeros(m, dtype=np.int64)
        self.total_rx = np.zeros(m)
        self.own_rx = np.zeros(m)
        self.t_local = local_delay(instance.w_slm, instance.c_local)
        self.rx_power = p.tx_power_w * instance.channel_gain
        self.zero_gain = bool((instance.channel_gain == 0).any())
        if partial is not None:
            partial.check(n, m)
            for i, j in enumerate(partial.server_of):
                if j is not None:
                    self.commit(i, j)

    def commit(self, i: int, j: int) -> None:
        g = self.instance.channel_gain
        self.server[i] = j
        self.counts[j] += 1
        self.total_rx += g[i]
        self.own_rx[j] += g[i, j]

    def interference(self) -> np.ndarray:
        return self.instance.radio.tx_power_w * (self.total_rx - self.own_rx)

    def gaps(self, users: np.ndarray, weights: Optional[np.ndarray]) -> np.ndarray:
        """Gap of each listed user joining each server, shape (len(users), M).

        The joining user counts toward the bandwidth and capacity split;
        interference comes from the committed assignment only.
        """
        inst = self.instance
        p = inst.radio
        n_after = self.counts + 1
        band = radio.allocate_bandwidth(p.bandwidth_hz, n_after)
        denom = self.interference() + radio.noise_power(p.noise_psd_dbm_per_hz, band)
        comp = edge_compute_delay(inst.w_llm, edge_capacity_share(inst.c_es, inst.c_max, n_after))
        with np.errstate(divide="ignore"):
            r = band * np.log2(1.0 + self.rx_power[users] / denom)
            comm = inst.query_bits[users, None] / r
        gap = comm + (comp - self.t_local[users, None])
        if weights is not None:
            gap *= weights[users, None]
        if self.zero_gain:
            gap = np.where(np.isinf(comm), INF, gap)
        return gap

    def assignment(self) -> Assignment:
        return Assignment.from_array(self.server)


def delay_gap(instance, partial: Assignment, i: int, j: int, weighted: bool = True) -> float:
    """Marginal (weighted) delay change of moving unassigned user i onto server j."""
    if partial.server_of[i] is not None:
        raise ValueError(f"user {i} is already assigned")
    if not 0 <= j < instance.n_servers:
        raise ValueError(f"server index {j} out of range")
    state = GreedyState(instance, partial)
    w = instance.alpha if weighted else None
    return float(state.gaps(np.array([i]), w)[0, j])


def _greedy(
    state: GreedyState,
    candidates: Sequence[int],
    weights: Optional[np.ndarray],
    stop_at_nonnegative: bool,
    steps: list,
    phase: str,
) -> None:
    remaining = np.array(sorted(candidates), dtype=np.int64)
    m = state.instance.n_servers
    while remaining.size:
        gap = state.gaps(remaining, weights)
        flat = int(np.argmin(gap))  # first minimum: lowest user, then lowest server
        r, j = divmod(flat, m)
        best = float(gap[r, j])
        fallback = False
        if stop_at_nonnegative and not best < 0:
            break
        if np.isinf(best):
            r = 0
            j = int(np.argmax(state.instance.channel_gain[remaining[r]]))
            fallback = True
            warnings.warn(
                f"user {int(remaining[r])} has no finite-delay server; assigning to max-gain server {j}",
                RuntimeWarning,
                stacklevel=3,
            )
        i = int(remaining[r])
        steps.append(Step(len(steps), i, j, best, int(remaining.size), phase, fallback))
        state.commit(i, j)
        remaining = np.concatenate((remaining[:r], remaining[r + 1 :]))


def _report(instance, name: str, state: GreedyState, steps: list, t0: float) -> SolverReport:
    wall = time.perf_counter() - t0
    a = state.assignment()
    return SolverReport(a, objective(instance, a), a.offload_count, len(steps), wall, name, tuple(steps))


def goa(instance, tau: float) -> SolverReport:
    """Greedy offloading: force users above the uncertainty threshold, then offload while it pays."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    t0 = time.perf_counter()
    state = GreedyState(instance)
    steps: list[Step] = []
    forced = np.flatnonzero(instance.alpha > tau)
    rest = np.flatnonzero(instance.alpha <= tau)
    _greedy(state, forced, instance.alpha, False, steps, "forced")
    _greedy(state, rest, instance.alpha, True, steps, "gap")
    return _report(instance, "goa", state, steps, t0)


def forced_set(instance, tau: float) -> frozenset[int]:
    return frozenset(int(i) for i in np.flatnonzero(instance.alpha > tau))


def dmin(instance) -> SolverReport:
    """Uncertainty-blind greedy delay minimization."""
    t0 = time.perf_counter()
    state = GreedyState(instance)
    steps: list[Step] = []
    _greedy(state, range(instance.n_users), None, True, steps, "gap")
    return _report(instance, "dmin", state, steps, t0)


def edge_all(instance) -> SolverReport:
    t0 = time.perf_counter()
    state = GreedyState(instance)
    steps: list[Step] = []
    _greedy(state, range(instance.n_users), instance.alpha, False, steps, "all")
    return _report(instance, "edge_all", state, steps, t0)


def local_all(instance) -> SolverReport:
    t0 = time.perf_counter()
    state = GreedyState(instance)
    return _report(instance, "local_all", state, [], t0)


def random_k(instance, k: int, seed) -> SolverReport:
    """Offload ``k`` uniformly chosen users, placed by the unweighted greedy gap."""
    if not 0 <= k <= instance.n_users:
        raise ValueError(f"k={k} outside [0, {instance.n_users}]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    t0 = time.perf_counter()
    chosen = rng.choice(instance.n_users, size=k, replace=False)
    state = GreedyState(instance)
    steps: list[Step] = []
    _greedy(state, chosen, None, False, steps, "random")
    return _report(instance, "random", state, steps, t0)


def replay_check(instance, report: SolverReport, weighted: bool, tau: Optional[float] = None) -> bool:
    """Re-run the audit log and confirm each commit had the minimum gap at that moment.

    Each phase draws from its own candidate pool: GOA splits users at ``tau``
    and the random baseline only ever sees the users it drew.
    """
    state = GreedyState(instance)
    w = instance.alpha if weighted else None
    users_all = set(range(instance.n_users))
    pools = {"random": {s.user for s in report.steps}}
    if tau is not None:
        pools["forced"] = set(forced_set(instance, tau))
        pools["gap"] = users_all - pools["forced"]
    remaining = set(users_all)
    for step in report.steps:
        if not step.fallback:
            users = np.array(sorted(remaining & pools.get(step.phase, users_all)))
            gap = state.gaps(users, w)
            here = gap[np.searchsorted(users, step.user), step.server]
            if not here == gap.min() == step.delta:
                return False
        state.commit(step.user, step.server)
        remaining.discard(step.user)
    return state.assignment() == report.assignment


def write_audit_log(report: SolverReport, path) -> Path:
    """One JSON object per committed step; infinite gaps are written as JSON Infinity."""
    path = Path(path)
    with path.open("w") as f:
        for step in report.steps:
            f.write(json.dumps(step.to_json()) + "\n")
    return path


def load_audit_log(path) -> tuple[Step, ...]:
    lines = Path(path).read_text().splitlines()
    return tuple(Step.from_json(json.loads(line)) for line in lines if line.strip())


def replay_audit_log(instance, path, assignment: Assignment, weighted: bool, tau: Optional[float] = None) -> bool:
    steps = load_audit_log(path)
    rep = SolverReport(assignment, 0.0, assignment.offload_count, len(steps), 0.0, "replay", steps)
    return replay_check(instance, rep, weighted, tau)


# Exhaustive oracle --------------------------------------------------------


def _decode(codes: np.ndarray, n: int, base: int) -> np.ndarray:
    """Base-(M+1) digits, most significant digit for user 0; digit 0 means local."""
    digits = np.empty((codes.size, n), dtype=np.int64)
    c = codes.copy()
    for pos in range(n - 1, -1, -1):
        digits[:, pos] = c % base
        c //= base
    return digits - 1


def exhaustive(
    instance,
    budget: int = DEFAULT_EXHAUSTIVE_BUDGET,
    strict_eq10: bool = False,
    chunk: int = 8192,
) -> SolverReport:
    """Minimum objective over all (M+1)^N assignments.

    Ties resolve to the lexicographically smallest vector in which local is
    0 and server j is j + 1.
    """
    n, m = instance.n_users, instance.n_servers
    total = (m + 1) ** n
    if total > budget:
        raise SolverError(f"exhaustive search over {total} assignments exceeds budget {budget}")
    t0 = time.perf_counter()
    values = np.empty(total)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(total, start + chunk), dtype=np.int64)
        values[start : start + codes.size] = objective_batch(instance, _decode(codes, n, m + 1), strict_eq10)
    best = values.min()
    # batched sums may differ from the single-assignment path in the last ulp
    near = np.flatnonzero(values <= best + 1e-12 * max(abs(best), 1e-300))
    exact = [
        objective(instance, Assignment.from_array(_decode(np.array([k]), n, m + 1)[0]), strict_eq10)
        for k in near
    ]
    k = int(near[int(np.argmin(exact))])
    a = Assignment.from_array(_decode(np.array([k]), n, m + 1)[0])
    wall = time.perf_counter() - t0
    return SolverReport(a, min(exact), a.offload_count, total, wall, "exhaustive")


SOLVERS = ("goa", "dmin", "edge_all", "local_all", "random")
