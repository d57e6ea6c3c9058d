"""Policies other than the decomposition: relaxation and rounding, the two
myopic baselines and the brute-force oracle.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .gbd import OBJECTIVES, PolicyResult, objective_value
from .instance import ProblemInstance
from .master import assignment_to_schedule
from .primal import DEFAULT_TOL, SolverError, solve_primal
from .rates import rate_report, report_from_rates

__all__ = [
    "ORACLE_LIMIT",
    "RelaxedSolution",
    "exhaustive_oracle",
    "myopic_fullduplex",
    "myopic_zhang",
    "project_simplex",
    "round_schedule",
    "solve_relaxed",
    "suboptimal_policy",
]

LN2 = math.log(2.0)
ORACLE_LIMIT = 2**16


def _check_objective(objective: str) -> None:
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")


# --- relaxation -------------------------------------------------------------


@dataclass(frozen=True)
class RelaxedSolution:
    w_frac: np.ndarray
    P: np.ndarray
    value: float
    residual: float
    objective: str = "srm"


def solve_relaxed(inst: ProblemInstance, objective: str = "srm", tol: float = DEFAULT_TOL) -> RelaxedSolution:
    """Continuous relaxation of the schedule, solved jointly in (w, P).

    Energies are rescaled to millijoules before handing the conic program
    to the interior-point solver.  ``residual`` is the worst constraint
    violation of the returned point relative to the user's total energy.
    """
    import cvxpy as cp

    _check_objective(objective)
    K, M = inst.K, inst.M
    scale = 1e3
    tau = inst.tau
    E0 = inst.E0 * scale
    EH = inst.EH * scale
    cap = inst.energy_cap * scale
    snr = inst.gains / (inst.noise_power * scale)  # per mW

    w = cp.Variable((K, M), nonneg=True)
    P = cp.Variable((K, M), nonneg=True)
    cons = [cp.sum(w, axis=0) == 1, w <= 1, tau * P[:, 0] <= cp.multiply(w[:, 0], E0)]
    if M > 1:
        cons.append(tau * P[:, 1:] <= cp.multiply(w[:, 1:], np.repeat(cap[:, None], M - 1, axis=1)))
        spent = tau * cp.cumsum(P, axis=1)
        harvest = cp.cumsum(cp.multiply(1 - w, EH), axis=1)
        cons.append(spent[:, 1:] <= E0[:, None] + harvest[:, :-1])
    rates = tau * cp.sum(cp.log(1 + cp.multiply(snr, P)), axis=1) / LN2
    if objective == "srm":
        prob = cp.Problem(cp.Maximize(cp.sum(rates)), cons)
    else:
        t = cp.Variable()
        prob = cp.Problem(cp.Maximize(t), cons + [rates >= t])
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.SolverError as exc:
        raise SolverError(f"relaxed problem failed: {exc}", residual=math.inf) from exc
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or P.value is None:
        raise SolverError(f"relaxed problem status {prob.status}", residual=math.inf)

    w_frac = np.clip(w.value, 0.0, 1.0)
    P_val = np.maximum(P.value, 0.0) / scale
    per_user = tau * np.log2(1.0 + inst.gains * P_val / inst.noise_power).sum(axis=1)
    value = float(per_user.sum()) if objective == "srm" else float(per_user.min())

    viol = [np.abs(w_frac.sum(axis=0) - 1.0).max()]
    total = np.maximum(inst.E0 + inst.EH.sum(axis=1), 1e-300)
    B = np.empty((K, M))
    B[:, 0] = w_frac[:, 0] * inst.E0
    if M > 1:
        B[:, 1:] = inst.E0[:, None] + np.cumsum((1.0 - w_frac) * inst.EH, axis=1)[:, :-1]
    viol.append((np.maximum(tau * np.cumsum(P_val, axis=1) - B, 0.0) / total[:, None]).max())
    residual = float(max(viol))
    if residual > max(tol, 1e-6):
        raise SolverError(f"relaxed point violates constraints by {residual:.3e}", residual=residual)
    return RelaxedSolution(w_frac, P_val, value, residual, objective)


def round_schedule(w_frac) -> np.ndarray:
    """Round to nearest and keep at most one transmitter per slot.

    A column with several entries at or above one half keeps only its
    largest (lowest user index on ties); a column with none stays empty and
    every user harvests in that slot.
    """
    w_frac = np.asarray(w_frac, dtype=float)
    W = np.zeros(w_frac.shape, dtype=np.int8)
    for i in range(w_frac.shape[1]):
        col = w_frac[:, i]
        up = np.flatnonzero(col >= 0.5)
        if up.size:
            W[up[np.argmax(col[up])], i] = 1
    return W


def suboptimal_policy(inst: ProblemInstance, objective: str = "srm", tol: float = DEFAULT_TOL) -> PolicyResult:
    rel = solve_relaxed(inst, objective, tol)
    W = round_schedule(rel.w_frac)
    sol = solve_primal(inst, W, objective, tol)
    return PolicyResult(
        W=W,
        P=sol.P,
        report=rate_report(inst, W, sol.P),
        objective=objective,
        solver_name=f"suboptimal-{objective}",
        metadata={"relaxed_value": rel.value},
    )


# --- myopic baselines ------------------------------------------------------


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / ind > 0)[-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


class _SlotModel:
    """Per-slot rates as a function of the time fractions ``t`` (length K+1).

    ``t[0]`` is the harvest-only phase and ``t[k+1]`` user k's transmit
    phase.  User k's energy is ``A[k] @ t + c[k]`` and its rate (in units of
    the slot length) is ``x log2(1 + b (A t + c) / x)`` with ``x = t[k+1]``.
    """

    def __init__(self, A: np.ndarray, c: np.ndarray, b: np.ndarray):
        self.A, self.c, self.b = A, c, b
        self.K = b.size

    def energy(self, t):
        return self.A @ t + self.c

    def rates(self, t) -> np.ndarray:
        x = t[1:]
        q = self.b * self.energy(t)
        out = np.zeros(self.K)
        on = (x > 0) & (q > 0)
        out[on] = x[on] * np.log1p(q[on] / x[on]) / LN2
        return out

    def rate_jac(self, t) -> np.ndarray:
        x = np.maximum(t[1:], 1e-300)
        q = self.b * self.energy(t)
        u = q / x
        J = (self.b / ((1.0 + u) * LN2))[:, None] * self.A
        J[np.arange(self.K), np.arange(1, self.K + 1)] += np.log1p(u) / LN2 - u / ((1.0 + u) * LN2)
        return J


def _zhang_model(inst: ProblemInstance, i: int) -> _SlotModel:
    K = inst.K
    e = inst.EH[:, i] + (inst.E0 if i == 0 else 0.0)
    A = np.zeros((K, K + 1))
    A[:, 0] = e
    return _SlotModel(A, np.zeros(K), inst.gains[:, i] / (inst.noise_power * inst.tau))


def _fullduplex_model(inst: ProblemInstance, i: int) -> _SlotModel:
    K = inst.K
    A = np.zeros((K, K + 1))
    for k in range(K):
        A[k, : k + 1] = inst.EH[k, i]
    c = inst.E0.copy() if i == 0 else np.zeros(K)
    return _SlotModel(A, c, inst.gains[:, i] / (inst.noise_power * inst.tau))


def _maximize_sum(model: _SlotModel, max_iter: int = 5000, tol: float = 1e-13) -> np.ndarray:
    """Projected gradient ascent with Armijo backtracking on the simplex."""
    n = model.K + 1
    t = np.full(n, 1.0 / n)
    f = model.rates(t).sum()
    eta = 1.0
    for _ in range(max_iter):
        g = model.rate_jac(t).sum(axis=0)
        gmax = np.abs(g).max()
        if gmax == 0.0:
            break
        eta = min(eta * 2.0, 1e6 / gmax)
        while True:
            t_new = project_simplex(t + eta * g)
            f_new = model.rates(t_new).sum()
            if f_new >= f + 1e-4 * g @ (t_new - t) or eta < 1e-300:
                break
            eta *= 0.5
        moved = np.abs(t_new - t).max()
        gain = f_new - f
        if f_new >= f:
            t, f = t_new, f_new
        if moved <= tol or gain <= tol * max(1.0, f):
            break
    return t


def _maximize_min(model: _SlotModel) -> np.ndarray:
    """Max-min fractions via SLSQP on the epigraph form."""
    from scipy.optimize import minimize

    n = model.K + 1
    t0 = np.full(n, 1.0 / n)
    start = np.append(t0, model.rates(t0).min())
    cons = [
        {
            "type": "ineq",
            "fun": lambda y: model.rates(y[:n]) - y[n],
            "jac": lambda y: np.hstack([model.rate_jac(y[:n]), -np.ones((model.K, 1))]),
        },
        {"type": "eq", "fun": lambda y: y[:n].sum() - 1.0, "jac": lambda y: np.append(np.ones(n), 0.0)},
    ]
    res = minimize(
        lambda y: -y[n],
        start,
        jac=lambda y: np.append(np.zeros(n), -1.0),
        method="SLSQP",
        bounds=[(0.0, 1.0)] * n + [(None, None)],
        constraints=cons,
        options={"ftol": 1e-12, "maxiter": 500},
    )
    t = project_simplex(res.x[:n])
    # keep the starting point if the solver wandered somewhere worse
    return t if model.rates(t).min() >= model.rates(t0).min() else t0


def _myopic(inst: ProblemInstance, objective: str, build, name: str) -> PolicyResult:
    _check_objective(objective)
    K, M = inst.K, inst.M
    fractions = np.zeros((M, K + 1))
    P = np.zeros((K, M))
    per_user = np.zeros(K)
    for i in range(M):
        model = build(inst, i)
        t = _maximize_sum(model) if objective == "srm" else _maximize_min(model)
        fractions[i] = t
        per_user += inst.tau * model.rates(t)
        x = t[1:]
        P[:, i] = np.where(x > 0, model.energy(t) / (inst.tau * np.where(x > 0, x, 1.0)), 0.0)
    meta = {"fractions": fractions.tolist()}
    if not inst.csi.is_perfect:
        meta["extension"] = "myopic baseline under bounded CSI"
    return PolicyResult(
        W=None,
        P=P,
        report=report_from_rates(per_user),
        objective=objective,
        solver_name=f"{name}-{objective}",
        metadata=meta,
    )


def myopic_zhang(inst: ProblemInstance, objective: str = "srm") -> PolicyResult:
    """Harvest-then-transmit in every slot: a common harvest phase, then
    one transmit phase per user, spending everything harvested in the slot
    (plus the initial energy in the first slot)."""
    return _myopic(inst, objective, _zhang_model, "myopic-zhang")


def myopic_fullduplex(inst: ProblemInstance, objective: str = "srm") -> PolicyResult:
    """Like :func:`myopic_zhang`, but user k also harvests while users
    before it transmit."""
    return _myopic(inst, objective, _fullduplex_model, "myopic-fullduplex")


# --- oracle -----------------------------------------------------------------


def exhaustive_oracle(
    inst: ProblemInstance, objective: str = "srm", limit: int = ORACLE_LIMIT, tol: float = DEFAULT_TOL
) -> PolicyResult:
    """Best strict schedule by enumeration; the first one wins ties."""
    _check_objective(objective)
    K, M = inst.K, inst.M
    if K**M > limit:
        raise ValueError(f"{K}^{M} schedules exceed the enumeration limit {limit}")
    best = None
    for a in itertools.product(range(K), repeat=M):
        sol = solve_primal(inst, assignment_to_schedule(a, K), objective, tol)
        if best is None or sol.value > best.value:
            best = sol
    report = rate_report(inst, best.W, best.P)
    assert abs(objective_value(report, objective) - best.value) <= 1e-9 * max(1.0, abs(best.value))
    return PolicyResult(
        W=best.W,
        P=best.P,
        report=report,
        objective=objective,
        solver_name=f"oracle-{objective}",
        metadata={"schedules": K**M},
    )
