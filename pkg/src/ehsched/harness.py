"""Monte Carlo sweeps over scenario parameters.

Each (sweep value, trial) pair gets its own seed, so adding sweep points or
trials never changes existing cells.  Aggregation walks trials in order and
uses ``math.fsum``, so results are bit-for-bit reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import IO, Any, Callable

from .gbd import PolicyResult, run_gbd
from .instance import (
    CSI,
    ConfigError,
    InstanceFormatError,
    ProblemInstance,
    ScenarioConfig,
    k_sweep_scenario,
    parse_json_text,
    sample_instance,
)
from .master import CutVerificationError
from .policies import exhaustive_oracle, myopic_fullduplex, myopic_zhang, suboptimal_policy
from .primal import DEFAULT_TOL, SolverError
from .rates import RateReport

__all__ = [
    "POLICIES",
    "SCHEMA_VERSION",
    "ExperimentAborted",
    "ExperimentSpec",
    "ResultRow",
    "ResultsTable",
    "instance_seed",
    "run_experiment",
    "run_policy",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SWEEP_VARIABLES = ("M", "alpha", "K", "tau", "epsilon")
# sweeps that leave array shapes alone reuse the same draws for every value
SHARED_DRAWS = ("alpha", "tau", "epsilon")
FAILURE_FRACTION = 0.01


def _gbd(objective):
    def run(inst, zeta, tol, max_iter):
        cap = inst.K**inst.M if max_iter is None else max_iter
        return run_gbd(inst, objective, zeta=zeta, max_iter=cap, tol=tol)

    return run


def _plain(fn, objective):
    return lambda inst, zeta, tol, max_iter: fn(inst, objective)


POLICIES: dict[str, Callable[..., PolicyResult]] = {
    "gbd-srm": _gbd("srm"),
    "gbd-mrm": _gbd("mrm"),
    "suboptimal-srm": lambda inst, zeta, tol, max_iter: suboptimal_policy(inst, "srm", tol),
    "suboptimal-mrm": lambda inst, zeta, tol, max_iter: suboptimal_policy(inst, "mrm", tol),
    "myopic-zhang-srm": _plain(myopic_zhang, "srm"),
    "myopic-zhang-mrm": _plain(myopic_zhang, "mrm"),
    "myopic-fullduplex-srm": _plain(myopic_fullduplex, "srm"),
    "myopic-fullduplex-mrm": _plain(myopic_fullduplex, "mrm"),
    "oracle-srm": lambda inst, zeta, tol, max_iter: exhaustive_oracle(inst, "srm", tol=tol),
    "oracle-mrm": lambda inst, zeta, tol, max_iter: exhaustive_oracle(inst, "mrm", tol=tol),
}


def run_policy(
    name: str,
    inst: ProblemInstance,
    zeta: float | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
) -> PolicyResult:
    """Run a registered policy.  GBD defaults to ``K**M`` iterations, the
    number of schedules, which is enough for it to terminate."""
    try:
        fn = POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICIES)}") from None
    return fn(inst, zeta, tol, max_iter)


class ExperimentAborted(RuntimeError):
    def __init__(self, message: str, failures: list[str]):
        super().__init__(message)
        self.failures = failures


@dataclass(frozen=True)
class ExperimentSpec:
    variable: str
    values: tuple
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    policies: tuple[str, ...] = ("gbd-srm", "gbd-mrm")
    trials: int = 300
    base_seed: int = 0
    zeta: float | None = None
    tol: float = DEFAULT_TOL
    max_iter: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "policies", tuple(self.policies))
        self.validate()

    def validate(self) -> None:
        if self.variable not in SWEEP_VARIABLES:
            raise ConfigError(f"sweep variable must be one of {SWEEP_VARIABLES}, got {self.variable!r}")
        if not self.values:
            raise ConfigError("at least one sweep value is required")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigError("sweep values must be strictly increasing")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        unknown = [p for p in self.policies if p not in POLICIES]
        if unknown:
            raise ConfigError(f"unknown policy {unknown[0]!r}")
        if self.variable in ("M", "K") and any(int(v) != v or v < 1 for v in self.values):
            raise ConfigError(f"{self.variable} values must be positive integers")

    def config_for(self, value) -> ScenarioConfig:
        base = self.scenario
        if self.variable == "M":
            return base.replace(M=int(value))
        if self.variable == "K":
            K = int(value)
            return base.replace(
                K=K,
                E0=(base.E0[0],) * K,
                D=tuple(10.0 / K * (k + 1) for k in range(K)),
            )
        if self.variable == "alpha":
            return base.replace(alpha=float(value))
        if self.variable == "tau":
            return base.replace(tau=float(value))
        return base.replace(csi=CSI.bounded(float(value)))

    def replace(self, **changes) -> "ExperimentSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "sweep": {"variable": self.variable, "values": list(self.values)},
            "scenario": self.scenario.to_dict(),
            "policies": list(self.policies),
            "trials": self.trials,
            "base_seed": self.base_seed,
            "zeta": self.zeta,
            "tol": self.tol,
            "max_iter": self.max_iter,
        }

    @classmethod
    def from_dict(cls, d: Any) -> "ExperimentSpec":
        """Parse the spec-file form.  ``scenario`` may be a table in the
        scenario-file format or one of the presets ``"default"`` and
        ``"k-sweep"``."""
        if not isinstance(d, dict):
            raise InstanceFormatError("experiment spec must be an object")
        known = {"sweep", "scenario", "policies", "trials", "base_seed", "zeta", "tol", "max_iter"}
        unknown = set(d) - known
        if unknown:
            raise InstanceFormatError("unknown key", field=sorted(unknown)[0])
        sweep = d.get("sweep")
        if not isinstance(sweep, dict) or "variable" not in sweep or "values" not in sweep:
            raise InstanceFormatError("expected {variable, values}", field="sweep")
        values = sweep["values"]
        if not isinstance(values, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in values
        ):
            raise InstanceFormatError("expected a list of numbers", field="sweep.values")
        scen = d.get("scenario", "default")
        if scen == "default":
            scenario = ScenarioConfig()
        elif scen == "k-sweep":
            scenario = k_sweep_scenario(2)
        else:
            scenario = ScenarioConfig.from_dict(scen)
        kw: dict[str, Any] = {"variable": sweep["variable"], "values": values, "scenario": scenario}
        if "policies" in d:
            if not isinstance(d["policies"], list):
                raise InstanceFormatError("expected a list of policy names", field="policies")
            kw["policies"] = d["policies"]
        for key in ("trials", "base_seed", "max_iter"):
            if d.get(key) is not None:
                if not isinstance(d[key], int) or isinstance(d[key], bool):
                    raise InstanceFormatError("expected an integer", field=key)
                kw[key] = d[key]
        for key in ("zeta", "tol"):
            if d.get(key) is not None:
                if not isinstance(d[key], (int, float)):
                    raise InstanceFormatError("expected a number", field=key)
                kw[key] = float(d[key])
        try:
            return cls(**kw)
        except ConfigError as exc:
            raise InstanceFormatError(str(exc)) from exc

    @classmethod
    def loads(cls, text: str) -> "ExperimentSpec":
        return cls.from_dict(parse_json_text(text, "experiment spec"))


def instance_seed(base_seed: int, variable: str, value, trial: int) -> int:
    """``base_seed`` XOR a 64-bit hash of the (sweep value, trial) pair.

    For sweeps that leave array shapes alone the hash ignores the value,
    so every cell of a trial sees the same channel and harvest draws.
    """
    key = f"trial={trial}" if variable in SHARED_DRAWS else f"{variable}={value!r};trial={trial}"
    h = int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")
    return base_seed ^ h


@dataclass(frozen=True)
class ResultRow:
    variable: str
    value: float
    policy: str
    trials: int
    failures: int
    mean_sum_rate: float
    se_sum_rate: float
    mean_min_rate: float
    se_min_rate: float
    mean_fairness: float
    se_fairness: float
    mean_iterations: float
    mean_rates: tuple[float, ...]

    def to_dict(self) -> dict:
        d = {name: getattr(self, name) for name in self.__dataclass_fields__}
        d["mean_rates"] = list(self.mean_rates)
        return d


COLUMNS = list(ResultRow.__dataclass_fields__)


@dataclass
class ResultsTable:
    rows: list[ResultRow]
    spec: ExperimentSpec | None = None

    def cell(self, value, policy: str) -> ResultRow:
        for r in self.rows:
            if r.value == value and r.policy == policy:
                return r
        raise KeyError((value, policy))

    def column(self, policy: str, name: str) -> list:
        return [getattr(r, name) for r in self.rows if r.policy == policy]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"#schema={SCHEMA_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
        return buf.getvalue()

    def to_json_lines(self) -> str:
        lines = [json.dumps({"schema": SCHEMA_VERSION, **r.to_dict()}) for r in self.rows]
        return "".join(line + "\n" for line in lines)

    def write(self, fp: IO[str], fmt: str = "csv") -> None:
        if fmt == "csv":
            fp.write(self.to_csv())
        elif fmt == "json-lines":
            fp.write(self.to_json_lines())
        else:
            raise ValueError(f"unknown format {fmt!r}")

    @classmethod
    def from_csv(cls, text: str) -> "ResultsTable":
        lines = text.splitlines()
        if not lines or lines[0] != f"#schema={SCHEMA_VERSION}":
            raise InstanceFormatError(f"expected '#schema={SCHEMA_VERSION}' header", line=1)
        rows = []
        for rec in csv.DictReader(lines[1:]):
            rows.append(
                ResultRow(
                    variable=rec["variable"],
                    value=float(rec["value"]),
                    policy=rec["policy"],
                    trials=int(rec["trials"]),
                    failures=int(rec["failures"]),
                    mean_rates=tuple(float(x) for x in rec["mean_rates"].split(";")),
                    **{
                        c: float(rec[c])
                        for c in COLUMNS
                        if c not in ("variable", "value", "policy", "trials", "failures", "mean_rates")
                    },
                )
            )
        return cls(rows)


def _fmt(x) -> str:
    if isinstance(x, tuple):
        return ";".join(repr(float(v)) for v in x)
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _mean_se(xs: list[float]) -> tuple[float, float]:
    n = len(xs)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(xs) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((x - mean) ** 2 for x in xs) / (n - 1)
    return mean, math.sqrt(var / n)


def _aggregate(variable, value, policy, results: list[tuple[RateReport, int]], failures: int) -> ResultRow:
    n = len(results)
    sums = [r.sum_rate for r, _ in results]
    mins = [r.min_rate for r, _ in results]
    fair = [r.fairness for r, _ in results]
    K = results[0][0].K if results else 0
    rates = tuple(math.fsum(r.per_user_rate[k] for r, _ in results) / n for k in range(K))
    ms, ss = _mean_se(sums)
    mm, sm = _mean_se(mins)
    mf, sf = _mean_se(fair)
    iters = math.fsum(it for _, it in results) / n if n else math.nan
    return ResultRow(
        variable=variable,
        value=float(value),
        policy=policy,
        trials=n,
        failures=failures,
        mean_sum_rate=ms,
        se_sum_rate=ss,
        mean_min_rate=mm,
        se_min_rate=sm,
        mean_fairness=mf,
        se_fairness=sf,
        mean_iterations=iters,
        mean_rates=rates,
    )


def run_experiment(
    spec: ExperimentSpec,
    on_result: Callable[[Any, int, str, PolicyResult], None] | None = None,
) -> ResultsTable:
    """Run every policy on ``spec.trials`` seeded instances per sweep value.

    Solver failures are logged and excluded; more than 1% failures in a
    cell raises :class:`ExperimentAborted`.  ``on_result(value, trial,
    policy, result)`` sees every successful result as it is produced.
    """
    rows = []
    allowed = math.floor(FAILURE_FRACTION * spec.trials)
    for value in spec.values:
        config = spec.config_for(value)
        per_policy: dict[str, list[tuple[RateReport, int]]] = {p: [] for p in spec.policies}
        failed: dict[str, list[str]] = {p: [] for p in spec.policies}
        for t in range(spec.trials):
            seed = instance_seed(spec.base_seed, spec.variable, value, t)
            inst = sample_instance(config, seed)
            for p in spec.policies:
                try:
                    res = run_policy(p, inst, spec.zeta, spec.tol, spec.max_iter)
                except (SolverError, CutVerificationError) as exc:
                    msg = f"{spec.variable}={value} trial={t} seed={seed} {p}: {exc}"
                    log.warning("%s", msg)
                    failed[p].append(msg)
                    if len(failed[p]) > allowed:
                        raise ExperimentAborted(
                            f"{p} failed on {len(failed[p])} of {spec.trials} trials at {spec.variable}={value}",
                            failed[p],
                        ) from exc
                    continue
                if not res.converged:
                    failed[p].append(f"{spec.variable}={value} trial={t} seed={seed} {p}: did not converge")
                    if len(failed[p]) > allowed:
                        raise ExperimentAborted(
                            f"{p} did not converge on {len(failed[p])} of {spec.trials} trials", failed[p]
                        )
                    continue
                per_policy[p].append((res.report, res.iterations))
                if on_result is not None:
                    on_result(value, t, p, res)
        for p in spec.policies:
            rows.append(_aggregate(spec.variable, value, p, per_policy[p], len(failed[p])))
    return ResultsTable(rows, spec)
