"""Benders cuts and the binary master problem over schedules.

A cut is the primal Lagrangian with powers and multipliers frozen; since
every constraint is affine in W it reduces to ``c0 + sum(coeff * W)``.  The
master maximizes the pointwise minimum of the stored cuts over schedules
with exactly one transmitter per slot, either by exhaustive enumeration or
by best-first branch and bound over slots.
"""

from __future__ import annotations

import bisect
import heapq
import itertools
from dataclasses import dataclass

import numpy as np

from .instance import ProblemInstance
from .primal import PrimalSolution

__all__ = [
    "BendersCut",
    "CutVerificationError",
    "MasterProblem",
    "MasterSolution",
    "assignment_to_schedule",
    "build_cut",
    "build_cut_mrm",
    "build_cut_srm",
    "round_robin",
    "solve_master",
]

DEFAULT_LIMIT = 2**20
DEDUP_TOL = 1e-12
CUT_CHECK_TOL = 1e-6


class CutVerificationError(RuntimeError):
    """The cut does not reproduce the primal value at its own schedule."""


@dataclass(frozen=True)
class BendersCut:
    c0: float
    coeff: np.ndarray
    origin_iter: int = 0

    def evaluate(self, W) -> float:
        return float(self.c0 + np.sum(self.coeff * np.asarray(W, dtype=float)))

    def evaluate_assignment(self, assignment) -> float:
        # same summation order as the master's enumeration
        v = self.c0
        for i, k in enumerate(assignment):
            v += self.coeff[k, i]
        return float(v)


@dataclass(frozen=True)
class MasterSolution:
    W: np.ndarray
    beta: float
    assignment: tuple[int, ...]
    method: str = "enumeration"


def assignment_to_schedule(assignment, K: int) -> np.ndarray:
    a = np.asarray(assignment, dtype=int)
    W = np.zeros((K, a.size), dtype=np.int8)
    W[a, np.arange(a.size)] = 1
    return W


def round_robin(K: int, M: int) -> np.ndarray:
    """Slot i goes to user i mod K."""
    return assignment_to_schedule([i % K for i in range(M)], K)


def build_cut(inst: ProblemInstance, W, sol: PrimalSolution, origin_iter: int = 0) -> BendersCut:
    """Affine-in-W form of the primal Lagrangian at ``sol``.

    Raises
    ------
    CutVerificationError
        If the cut evaluated at ``W`` differs from ``sol.value`` by more than
        ``1e-6`` relative, which signals inconsistent multipliers.
    """
    d = sol.duals
    P = sol.P
    tau = inst.tau
    E0, EH, cap = inst.E0, inst.EH, inst.energy_cap
    K, M = inst.K, inst.M
    rates = tau * np.log2(1.0 + inst.gains * P / inst.noise_power).sum(axis=1)

    if d.delta is None:
        c0 = float(rates.sum())
    else:
        rb = sol.R_bar
        c0 = rb * (1.0 - float(d.delta.sum())) + float(d.delta @ rates)
    c0 -= float(d.lam @ (tau * P[:, 0]))
    coeff = np.zeros((K, M))
    coeff[:, 0] = d.lam * E0
    if M > 1:
        c0 -= float(np.sum(d.gamma * tau * P[:, 1:]))
        spent = tau * np.cumsum(P, axis=1)[:, 1:]
        c0 += float(np.sum(d.theta * (E0[:, None] - spent)))
        theta_suffix = np.cumsum(d.theta[:, ::-1], axis=1)[:, ::-1]
        # every w-free harvest term sum_{j<c} EH_j enters c0; w-terms subtract
        c0 += float(np.sum(EH[:, : M - 1] * theta_suffix))
        coeff[:, : M - 1] -= EH[:, : M - 1] * theta_suffix
        coeff[:, 1:] += d.gamma * cap[:, None]
    cut = BendersCut(c0, coeff, origin_iter)
    at_own = cut.evaluate(W)
    if abs(at_own - sol.value) > CUT_CHECK_TOL * max(abs(sol.value), 1.0):
        raise CutVerificationError(f"cut gives {at_own!r} at its schedule, primal value {sol.value!r}")
    return cut


def build_cut_srm(inst: ProblemInstance, W, sol: PrimalSolution, origin_iter: int = 0) -> BendersCut:
    if sol.duals.delta is not None:
        raise ValueError("expected a sum-rate primal solution")
    return build_cut(inst, W, sol, origin_iter)


def build_cut_mrm(inst: ProblemInstance, W, sol: PrimalSolution, origin_iter: int = 0) -> BendersCut:
    if sol.duals.delta is None:
        raise ValueError("expected a max-min primal solution")
    return build_cut(inst, W, sol, origin_iter)


def _all_assignments(K: int, M: int) -> np.ndarray:
    """Every assignment vector, lexicographic with slot 0 most significant."""
    n = K**M
    idx = np.arange(n, dtype=np.int64)
    A = np.empty((n, M), dtype=np.int64 if K > 127 else np.int8)
    for i in range(M):
        A[:, i] = (idx // K ** (M - 1 - i)) % K
    return A


def _lex_smallest(candidates: np.ndarray, K: int) -> np.ndarray:
    """Candidate whose flattened (row-major) schedule is lexicographically smallest."""
    cand = candidates
    M = cand.shape[1]
    for k in range(K):
        for i in range(M):
            if cand.shape[0] == 1:
                return cand[0]
            zero_bit = cand[:, i] != k
            if zero_bit.any():
                cand = cand[zero_bit]
    return cand[0]


def _schedule_key(assignment, K: int) -> tuple[int, ...]:
    return tuple(int(a == k) for k in range(K) for a in assignment)


class MasterProblem:
    """Append-only cut store with an exact solver.

    When ``K**M <= limit`` the minimum over cuts is cached for every schedule
    and updated as cuts arrive, so each solve is a single pass.
    """

    def __init__(self, K: int, M: int, limit: int = DEFAULT_LIMIT):
        self.K, self.M = K, M
        self.cuts: list[BendersCut] = []
        self._c0_sorted: list[tuple[float, int]] = []
        self.exhaustive = K**M <= limit
        if self.exhaustive:
            self._assign = _all_assignments(K, M)
            self._envelope = np.full(self._assign.shape[0], np.inf)

    def add(self, cut: BendersCut) -> bool:
        """Store ``cut``; returns False if an identical cut is already present."""
        if cut.coeff.shape != (self.K, self.M):
            raise ValueError(f"cut shape {cut.coeff.shape} does not match {self.K}x{self.M}")
        lo = bisect.bisect_left(self._c0_sorted, (cut.c0 - DEDUP_TOL, -1))
        for c0, j in self._c0_sorted[lo:]:
            if c0 > cut.c0 + DEDUP_TOL:
                break
            if np.max(np.abs(self.cuts[j].coeff - cut.coeff)) <= DEDUP_TOL:
                return False
        bisect.insort(self._c0_sorted, (cut.c0, len(self.cuts)))
        self.cuts.append(cut)
        if self.exhaustive:
            np.minimum(self._envelope, self._cut_values(cut), out=self._envelope)
        return True

    def _cut_values(self, cut: BendersCut) -> np.ndarray:
        # grow the table one slot at a time; slot 0 ends up most significant
        # and every entry is summed in slot order
        v = np.array([cut.c0])
        for i in range(self.M):
            v = (v[:, None] + cut.coeff[:, i]).ravel()
        return v

    def solve(self, method: str | None = None) -> MasterSolution:
        if not self.cuts:
            raise ValueError("master problem needs at least one cut")
        method = method or ("enumeration" if self.exhaustive else "branch_and_bound")
        if method == "enumeration":
            if not self.exhaustive:
                raise ValueError("schedule space exceeds the enumeration limit")
            env = self._envelope
            best = env.max()
            a = _lex_smallest(self._assign[env == best], self.K)
        elif method == "branch_and_bound":
            a, best = _branch_and_bound(self.cuts, self.K, self.M)
        else:
            raise ValueError(f"unknown master method {method!r}")
        a = tuple(int(x) for x in a)
        return MasterSolution(
            W=assignment_to_schedule(a, self.K),
            beta=max(float(best), 0.0),
            assignment=a,
            method=method,
        )


def _branch_and_bound(cuts: list[BendersCut], K: int, M: int):
    c0 = np.array([c.c0 for c in cuts])
    coef = np.stack([c.coeff for c in cuts])  # (J, K, M)
    best_per_slot = coef.max(axis=1)  # (J, M)
    tail = np.zeros((len(cuts), M + 1))
    tail[:, :M] = np.cumsum(best_per_slot[:, ::-1], axis=1)[:, ::-1]

    incumbent = -np.inf
    best_assign: tuple[int, ...] | None = None
    counter = itertools.count()
    root_bound = float((c0 + tail[:, 0]).min())
    heap = [(-root_bound, next(counter), (), c0.copy())]
    while heap:
        neg_bound, _, prefix, partial = heapq.heappop(heap)
        slack = 1e-9 * max(1.0, abs(incumbent)) if np.isfinite(incumbent) else 0.0
        if -neg_bound < incumbent - slack:
            break
        i = len(prefix)
        if i == M:
            val = float(partial.min())
            if val > incumbent or (
                val == incumbent and _schedule_key(prefix, K) < _schedule_key(best_assign, K)
            ):
                incumbent, best_assign = val, prefix
            continue
        for k in range(K):
            nxt = partial + coef[:, k, i]
            bound = float((nxt + tail[:, i + 1]).min())
            if bound >= incumbent - slack:
                heapq.heappush(heap, (-bound, next(counter), prefix + (k,), nxt))
    return best_assign, incumbent


def solve_master(
    cuts: list[BendersCut], K: int, M: int, limit: int = DEFAULT_LIMIT
) -> MasterSolution:
    """Maximize min_j cut_j(W) over schedules with one transmitter per slot.

    Ties are broken towards the lexicographically smallest flattened W.
    """
    if not cuts:
        raise ValueError("master problem needs at least one cut")
    master = MasterProblem(K, M, limit)
    for c in cuts:
        master.add(c)
    return master.solve()
