"""Convex primal problems for a fixed schedule W.

For a fixed binary W the power problem separates across transmitters.  Each
transmitter solves a water-filling problem over its own transmit slots
subject to staircase (cumulative) energy budgets.  The solver below finds
the exact optimum with the classical epoch construction: starting from the
first undecided slot, pick the budget constraint whose exhaustion yields the
lowest water level, fill up to it, and repeat.  Water levels are therefore
non-decreasing across epochs, which is what lets the Lagrange multipliers be
read off in closed form.

Multipliers are expressed in bits per joule, so the stationarity condition
for a transmit slot reads ``h / ((noise + h P) ln 2) = stack`` where
``stack`` is the sum of the multipliers of all constraints involving that
slot.  Power is then ``P = [1 / (ln2 * stack) - noise / h]^+``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .instance import ProblemInstance

__all__ = [
    "DualSet",
    "PrimalSolution",
    "SolverError",
    "available_budget",
    "budget_vector",
    "kkt_residuals",
    "lagrangian_value",
    "solve_mrm_primal",
    "solve_primal",
    "solve_srm_primal",
    "solve_user_dual_ascent",
    "solve_user_waterfill",
]

LN2 = math.log(2.0)
DEFAULT_TOL = 1e-7


class SolverError(RuntimeError):
    """A solver failed to reach its tolerance.

    ``best`` holds the best iterate found and ``residual`` its KKT residual.
    """

    def __init__(self, message: str, best=None, residual: float | None = None):
        super().__init__(message)
        self.best = best
        self.residual = residual


@dataclass(frozen=True)
class DualSet:
    """Multipliers of the first-slot, per-slot gate and cumulative constraints.

    ``gamma[k, i-1]`` and ``theta[k, i-1]`` belong to slot ``i`` (0-based,
    ``i >= 1``).  ``delta`` is only set for the max-min problem.
    """

    lam: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    delta: np.ndarray | None = None


@dataclass(frozen=True)
class PrimalSolution:
    P: np.ndarray
    value: float
    duals: DualSet
    kkt_residual: float
    user_values: np.ndarray
    W: np.ndarray
    objective: str = "srm"
    R_bar: float | None = None
    residuals: dict = field(default_factory=dict)


def _check_schedule(inst: ProblemInstance, W) -> np.ndarray:
    W = np.asarray(W)
    if W.shape != (inst.K, inst.M):
        raise ValueError(f"schedule must be {inst.K}x{inst.M}, got {W.shape}")
    if not np.all((W == 0) | (W == 1)):
        raise ValueError("schedule entries must be 0 or 1")
    if np.any(W.sum(axis=0) > 1):
        raise ValueError("at most one transmitter per slot")
    return W.astype(np.int8)


def available_budget(inst: ProblemInstance, W, k: int, i: int) -> float:
    """Energy available to user ``k`` entering slot ``i`` (0-based)."""
    w = np.asarray(W)[k]
    return float(inst.E0[k] + sum((1 - w[j]) * inst.EH[k, j] for j in range(i)))


def budget_vector(E0: float, EH_row, w_row) -> list[float]:
    """Right-hand sides of the cumulative constraints, one per slot.

    Entry 0 is the first-slot constraint ``tau P_0 <= w_0 E0``; entry ``c``
    bounds the energy spent in slots ``0..c``.
    """
    M = len(w_row)
    B = [0.0] * M
    B[0] = E0 if w_row[0] else 0.0
    acc = E0
    for c in range(1, M):
        if not w_row[c - 1]:
            acc += EH_row[c - 1]
        B[c] = acc
    return B


def _water_level(levels: list[float], power: float) -> float:
    """Level nu with sum_j (nu - a_j)^+ = power, for sorted noise levels a."""
    s = 0.0
    n_levels = len(levels)
    for n in range(1, n_levels + 1):
        s += levels[n - 1]
        nu = (power + s) / n
        if n == n_levels or nu <= levels[n]:
            return nu
    raise AssertionError("unreachable")


def solve_user_waterfill(h_row, w_row, E0: float, EH_row, tau: float, noise: float):
    """Exact optimum of one transmitter's power problem.

    Returns
    -------
    P : list of float
        Transmit powers per slot.
    phi : list of float
        Multiplier of each cumulative constraint (``phi[0]`` is the
        first-slot constraint).
    value : float
        Achieved rate in bits.
    """
    M = len(w_row)
    B = budget_vector(E0, EH_row, w_row)
    a = [noise / h_row[i] if (w_row[i] and h_row[i] > 0.0) else math.inf for i in range(M)]
    P = [0.0] * M
    epochs: list[tuple[int, float]] = []
    s = 0
    spent = 0.0
    while s < M:
        best_nu = math.inf
        best_c = -1
        levels: list[float] = []
        for c in range(s, M):
            if a[c] != math.inf:
                bisect.insort(levels, a[c])
            if not levels:
                continue
            nu = _water_level(levels, max(B[c] - spent, 0.0) / tau)
            if nu <= best_nu:
                best_nu, best_c = nu, c
        if best_c < 0:
            break
        for i in range(s, best_c + 1):
            if a[i] != math.inf and best_nu > a[i]:
                P[i] = best_nu - a[i]
        epochs.append((best_c, best_nu))
        spent = max(spent, B[best_c])
        s = best_c + 1

    phi = [0.0] * M
    for m, (c, nu) in enumerate(epochs):
        nxt = 1.0 / (LN2 * epochs[m + 1][1]) if m + 1 < len(epochs) else 0.0
        phi[c] = max(1.0 / (LN2 * nu) - nxt, 0.0)

    value = 0.0
    for i in range(M):
        if P[i] > 0.0:
            value += tau * math.log1p(P[i] / a[i]) / LN2
    return P, phi, value


def solve_user_dual_ascent(
    h_row,
    w_row,
    E0: float,
    EH_row,
    tau: float,
    noise: float,
    step: float = 5.0,
    max_iter: int = 100_000,
    tol: float = 1e-7,
):
    """Projected dual subgradient ascent for one transmitter.

    Slow reference path: minimizes the dual over the cumulative multipliers
    with step ``step / sqrt(t)`` in normalized units (energies divided by
    the user's total energy).  Powers follow the closed-form water-filling
    response to the current multiplier stack, capped by the gate constraint.

    Returns ``(P, phi, value, gap)`` for the best feasible iterate, where
    ``gap`` is the relative duality gap it certifies.
    """
    M = len(w_row)
    scale = E0 + float(np.sum(EH_row))
    if scale <= 0.0:
        return [0.0] * M, [0.0] * M, 0.0, 0.0
    B = np.array(budget_vector(E0, EH_row, w_row)) / scale
    h = np.asarray(h_row, dtype=float)
    usable = np.array([bool(w_row[i]) and h[i] > 0.0 for i in range(M)])
    # rates are measured in units of tau bits, energies in units of scale
    a = np.where(usable, noise / np.where(h > 0, h, 1.0), np.inf) * tau / scale
    cap = 1.0
    phi = np.full(M, 1.0)
    best = None
    best_gap = math.inf
    for t in range(1, max_iter + 1):
        stack = np.cumsum(phi[::-1])[::-1]
        with np.errstate(divide="ignore"):
            level = np.where(stack > 0, 1.0 / (LN2 * stack), np.inf)
        e = np.where(usable, np.clip(level - np.where(usable, a, 0.0), 0.0, cap), 0.0)
        slack = B - np.cumsum(e)
        dual = _norm_rate(e, a, usable) + float(phi @ slack)
        # budgets are non-decreasing, so truncating in slot order restores feasibility
        feas = np.empty(M)
        running = 0.0
        for i in range(M):
            feas[i] = min(e[i], max(B[i] - running, 0.0))
            running += feas[i]
        obj = _norm_rate(feas, a, usable)
        gap = (dual - obj) / max(abs(dual), 1e-12)
        if gap < best_gap:
            best_gap, best = gap, (feas, phi.copy(), obj)
        if gap <= tol:
            break
        phi = np.maximum(phi - step / math.sqrt(t) * slack, 0.0)
    if best is None:
        raise SolverError("dual ascent found no feasible iterate", residual=math.inf)
    e, phi_best, obj = best
    P = (e * scale / tau).tolist()
    return P, (phi_best * tau / scale).tolist(), obj * tau, best_gap


def _norm_rate(e, a, usable) -> float:
    return float(np.sum(np.log1p(e[usable] / a[usable]))) / LN2


def _user_duals(h_row, w_row, phi, noise):
    """Full multiplier set (lam, gamma, theta) for one transmitter."""
    M = len(w_row)
    suffix = [0.0] * (M + 1)
    for c in range(M - 1, -1, -1):
        suffix[c] = suffix[c + 1] + phi[c]
    if w_row[0]:
        lam = phi[0]
    else:
        lam = max(0.0, h_row[0] / (noise * LN2) - suffix[1])
    gamma = [0.0] * (M - 1)
    for i in range(1, M):
        if not w_row[i]:
            gamma[i - 1] = max(0.0, h_row[i] / (noise * LN2) - suffix[i])
    theta = list(phi[1:])
    return lam, gamma, theta


def _solve_users(inst: ProblemInstance, W: np.ndarray):
    K, M = inst.K, inst.M
    h = inst.gains.tolist()
    EH = inst.EH.tolist()
    P = np.zeros((K, M))
    lam = np.zeros(K)
    gamma = np.zeros((K, max(M - 1, 0)))
    theta = np.zeros((K, max(M - 1, 0)))
    values = np.zeros(K)
    for k in range(K):
        w_row = W[k].tolist()
        Pk, phi, vk = solve_user_waterfill(
            h[k], w_row, float(inst.E0[k]), EH[k], inst.tau, inst.noise_power
        )
        lk, gk, tk = _user_duals(h[k], w_row, phi, inst.noise_power)
        P[k] = Pk
        lam[k] = lk
        gamma[k] = gk
        theta[k] = tk
        values[k] = vk
    return P, lam, gamma, theta, values


def solve_srm_primal(inst: ProblemInstance, W, tol: float = DEFAULT_TOL) -> PrimalSolution:
    """Maximize the sum rate over powers for the fixed schedule ``W``."""
    W = _check_schedule(inst, W)
    P, lam, gamma, theta, values = _solve_users(inst, W)
    sol = PrimalSolution(
        P=P,
        value=math.fsum(values),
        duals=DualSet(lam, gamma, theta),
        kkt_residual=0.0,
        user_values=values,
        W=W,
        objective="srm",
    )
    return _certify(inst, sol, tol)


def solve_mrm_primal(inst: ProblemInstance, W, tol: float = DEFAULT_TOL) -> PrimalSolution:
    """Maximize the minimum user rate over powers for the fixed schedule ``W``.

    Every user runs at its own maximum rate; the bottleneck users (within
    ``tol`` of the minimum) share the weight ``delta`` uniformly and carry
    their multipliers scaled by it.  Everyone else has zero multipliers.
    """
    W = _check_schedule(inst, W)
    P, lam, gamma, theta, values = _solve_users(inst, W)
    r_bar = float(values.min())
    bottleneck = values <= r_bar + tol * max(1.0, abs(r_bar))
    delta = bottleneck / bottleneck.sum()
    sol = PrimalSolution(
        P=P,
        value=r_bar,
        duals=DualSet(lam * delta, gamma * delta[:, None], theta * delta[:, None], delta),
        kkt_residual=0.0,
        user_values=values,
        W=W,
        objective="mrm",
        R_bar=r_bar,
    )
    return _certify(inst, sol, tol)


def solve_primal(inst: ProblemInstance, W, objective: str = "srm", tol: float = DEFAULT_TOL):
    if objective == "srm":
        return solve_srm_primal(inst, W, tol)
    if objective == "mrm":
        return solve_mrm_primal(inst, W, tol)
    raise ValueError(f"unknown objective {objective!r}")


def _certify(inst: ProblemInstance, sol: PrimalSolution, tol: float) -> PrimalSolution:
    res = kkt_residuals(inst, sol.W, sol)
    worst = max(res.values())
    out = PrimalSolution(
        P=sol.P,
        value=sol.value,
        duals=sol.duals,
        kkt_residual=worst,
        user_values=sol.user_values,
        W=sol.W,
        objective=sol.objective,
        R_bar=sol.R_bar,
        residuals=res,
    )
    if not worst <= tol:
        raise SolverError(f"KKT residual {worst:.3e} exceeds tolerance {tol:.1e}", out, worst)
    return out


def lagrangian_value(inst: ProblemInstance, W, P, duals: DualSet, R_bar: float | None = None) -> float:
    """Lagrangian of the primal at ``(P, duals)`` for an arbitrary schedule ``W``.

    With ``duals.delta`` set this is the max-min Lagrangian (rate terms
    weighted by delta plus ``R_bar * (1 - sum delta)``), otherwise the
    sum-rate one.
    """
    W = np.asarray(W, dtype=float)
    P = np.asarray(P, dtype=float)
    tau, E0, EH = inst.tau, inst.E0, inst.EH
    rates = tau * np.log2(1.0 + inst.gains * P / inst.noise_power).sum(axis=1)
    if duals.delta is None:
        total = float(rates.sum())
    else:
        rb = 0.0 if R_bar is None else R_bar
        total = rb + float(duals.delta @ (rates - rb))
    total += float(duals.lam @ (W[:, 0] * E0 - tau * P[:, 0]))
    if inst.M > 1:
        cap = inst.energy_cap[:, None]
        total += float(np.sum(duals.gamma * (W[:, 1:] * cap - tau * P[:, 1:])))
        harvested = np.cumsum((1.0 - W) * EH, axis=1)[:, :-1]  # slots 0..c-1 for c = 1..M-1
        spent = tau * np.cumsum(P, axis=1)[:, 1:]
        total += float(np.sum(duals.theta * (E0[:, None] + harvested - spent)))
    return total


def kkt_residuals(inst: ProblemInstance, W, sol: PrimalSolution) -> dict:
    """Relative KKT residuals of ``sol`` at schedule ``W``.

    Keys: ``stationarity``, ``slackness``, ``feasibility``, ``dual_feasibility``,
    ``lagrangian_gap`` and, for the max-min problem, ``simplex``.
    """
    W = np.asarray(W, dtype=float)
    P = sol.P
    d = sol.duals
    K, M = inst.K, inst.M
    tau, noise = inst.tau, inst.noise_power
    h = inst.gains
    weight = np.ones(K) if d.delta is None else d.delta
    cap = inst.energy_cap

    phi = np.zeros((K, M))
    phi[:, 0] = d.lam
    phi[:, 1:] = d.theta
    suffix = np.cumsum(phi[:, ::-1], axis=1)[:, ::-1]
    stack = suffix.copy()
    stack[:, 1:] += d.gamma

    marginal = weight[:, None] * h / ((noise + h * P) * LN2)
    positive = P > 0
    denom = np.maximum(np.maximum(marginal, stack), 1e-300)
    stat = np.where(positive, np.abs(marginal - stack), np.maximum(marginal - stack, 0.0)) / denom
    stationarity = float(stat.max())

    scale_v = max(abs(sol.value), 1e-12)
    B = np.empty((K, M))
    B[:, 0] = W[:, 0] * inst.E0
    if M > 1:
        B[:, 1:] = inst.E0[:, None] + np.cumsum((1.0 - W) * inst.EH, axis=1)[:, :-1]
    used = tau * np.cumsum(P, axis=1)
    slack_cum = B - used
    gate = W[:, 1:] * cap[:, None] - tau * P[:, 1:]
    cs = [np.abs(phi * slack_cum).max()]
    if M > 1:
        cs.append(np.abs(d.gamma * gate).max())
    if d.delta is not None:
        cs.append(np.abs(d.delta * (sol.R_bar - sol.user_values)).max())
    slackness = float(max(cs)) / scale_v

    ecap = np.maximum(cap, 1e-300)[:, None]
    viol = [np.maximum(-slack_cum, 0.0) / ecap, np.maximum(-P, 0.0) * tau / ecap]
    if M > 1:
        viol.append(np.maximum(-gate, 0.0) / ecap)
    feasibility = float(max(v.max() for v in viol))

    negs = [d.lam, d.gamma, d.theta] + ([d.delta] if d.delta is not None else [])
    dual_feas = 0.0
    for arr in negs:
        if arr.size:
            dual_feas = max(dual_feas, float(np.maximum(-arr, 0.0).max()))

    lag = lagrangian_value(inst, W, P, d, sol.R_bar)
    out = {
        "stationarity": stationarity,
        "slackness": slackness,
        "feasibility": feasibility,
        "dual_feasibility": dual_feas,
        "lagrangian_gap": abs(lag - sol.value) / scale_v,
    }
    if d.delta is not None:
        out["simplex"] = abs(1.0 - float(d.delta.sum()))
    return out
