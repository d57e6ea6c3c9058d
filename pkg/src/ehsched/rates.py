"""Throughput formulas and the aggregates reported by every policy.

Rates are in bits for a unit bandwidth: ``tau * log2(1 + SNR)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .instance import ProblemInstance

__all__ = ["RateReport", "fairness_index", "rate_report", "report_from_rates", "slot_rate"]


def slot_rate(gain: float, power: float, tau: float, noise: float) -> float:
    return tau * math.log2(1.0 + gain * power / noise)


def fairness_index(rates) -> float:
    """Worst over best user rate; 1 when every user is at zero."""
    rates = np.asarray(rates, dtype=float)
    best = rates.max()
    if best <= 0.0:
        return 1.0
    return float(rates.min() / best)


@dataclass(frozen=True)
class RateReport:
    per_user_rate: tuple[float, ...]
    sum_rate: float
    min_rate: float
    fairness: float

    @property
    def K(self) -> int:
        return len(self.per_user_rate)


def report_from_rates(per_user) -> RateReport:
    r = [float(x) for x in per_user]
    return RateReport(
        per_user_rate=tuple(r),
        sum_rate=math.fsum(r),
        min_rate=min(r),
        fairness=fairness_index(r),
    )


def rate_report(inst: ProblemInstance, W, P) -> RateReport:
    """Per-user and aggregate rates of schedule ``W`` with powers ``P``."""
    W = np.asarray(W)
    P = np.asarray(P, dtype=float)
    if W.shape != (inst.K, inst.M) or P.shape != (inst.K, inst.M):
        raise ValueError(
            f"expected {inst.K}x{inst.M} schedule and powers, got {W.shape} and {P.shape}"
        )
    h = inst.gains
    slot = inst.tau * np.log2(1.0 + h * np.maximum(P, 0.0) / inst.noise_power)
    per_user = (np.where(W != 0, slot, 0.0)).sum(axis=1)
    return report_from_rates(per_user)
