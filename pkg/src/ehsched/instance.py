"""Problem data, seeded scenario generation and effective channel gains.

All quantities are stored in SI units: energies in joules, powers in watts,
slot length in seconds.  Conversions from mJ/dBm happen in
:class:`ScenarioConfig` and the CLI, never inside the solvers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import IO, Any, Sequence

import numpy as np

__all__ = [
    "CSI",
    "ConfigError",
    "InstanceFormatError",
    "ProblemInstance",
    "ScenarioConfig",
    "dbm_to_watt",
    "default_scenario",
    "dump_instance",
    "effective_gain",
    "gain_matrix",
    "k_sweep_scenario",
    "load_instance",
    "sample_instance",
    "worst_case_gain",
]

FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Invalid scenario configuration."""


class InstanceFormatError(ValueError):
    """Malformed instance/config document.

    ``field`` names the offending key and ``line`` the 1-based line in the
    source text when it is known.
    """

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.field = field
        self.line = line


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class CSI:
    """Channel state information model.

    ``epsilon`` is the radius of the estimation-error ball around the unit
    variance fading coefficient; ``None`` means perfect CSI.
    """

    epsilon: float | None = None

    def __post_init__(self):
        if self.epsilon is not None and not (self.epsilon >= 0.0):
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")

    @classmethod
    def perfect(cls) -> "CSI":
        return cls(None)

    @classmethod
    def bounded(cls, epsilon: float) -> "CSI":
        return cls(float(epsilon))

    @property
    def is_perfect(self) -> bool:
        return self.epsilon is None

    def to_dict(self) -> dict:
        if self.epsilon is None:
            return {"mode": "perfect"}
        return {"mode": "bounded", "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, d: Any) -> "CSI":
        if isinstance(d, str) and d == "perfect":
            return cls.perfect()
        if not isinstance(d, dict) or "mode" not in d:
            raise InstanceFormatError("expected {'mode': 'perfect'|'bounded', ...}", field="csi")
        mode = d["mode"]
        if mode == "perfect":
            return cls.perfect()
        if mode == "bounded":
            if "epsilon" not in d:
                raise InstanceFormatError("bounded CSI needs 'epsilon'", field="csi.epsilon")
            eps = _as_float(d["epsilon"], "csi.epsilon")
            if eps < 0:
                raise InstanceFormatError("epsilon must be >= 0", field="csi.epsilon")
            return cls.bounded(eps)
        raise InstanceFormatError(f"unknown CSI mode {mode!r}", field="csi.mode")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """One scheduling problem: K transmitters, M slots of length ``tau``.

    Parameters
    ----------
    tau : float
        Slot length in seconds.
    noise_power : float
        Receiver noise power in watts.
    E0 : array_like, shape (K,)
        Initial battery energy per transmitter, joules.
    EH : array_like, shape (K, M)
        Energy harvestable by transmitter k in slot i, joules.
    g : array_like, shape (K, M), complex
        Small-scale fading coefficients (the estimates under bounded CSI).
    D : array_like, shape (K,)
        Transmitter-receiver distances in meters.
    alpha : float
        Path-loss exponent.
    csi : CSI
        Perfect or bounded-error channel knowledge.
    """

    tau: float
    noise_power: float
    E0: np.ndarray
    EH: np.ndarray
    g: np.ndarray
    D: np.ndarray
    alpha: float
    csi: CSI = field(default_factory=CSI.perfect)

    def __post_init__(self):
        E0 = np.asarray(self.E0, dtype=float).reshape(-1)
        EH = np.atleast_2d(np.asarray(self.EH, dtype=float))
        g = np.atleast_2d(np.asarray(self.g, dtype=complex))
        D = np.asarray(self.D, dtype=float).reshape(-1)
        K = E0.shape[0]
        if K < 1:
            raise ConfigError("need at least one transmitter")
        if EH.shape != g.shape or EH.shape[0] != K or D.shape[0] != K:
            raise ConfigError(
                f"inconsistent shapes: E0 {E0.shape}, EH {EH.shape}, g {g.shape}, D {D.shape}"
            )
        if EH.shape[1] < 1:
            raise ConfigError("need at least one slot")
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not self.noise_power > 0:
            raise ConfigError(f"noise_power must be > 0, got {self.noise_power}")
        if np.any(E0 < 0) or np.any(EH < 0):
            raise ConfigError("energies must be nonnegative")
        if np.any(~(D > 0)):
            raise ConfigError("distances must be positive")
        if not np.all(np.isfinite(g)):
            raise ConfigError("channel coefficients must be finite")
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "noise_power", float(self.noise_power))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "E0", _frozen(E0))
        object.__setattr__(self, "EH", _frozen(EH))
        object.__setattr__(self, "g", _frozen(g))
        object.__setattr__(self, "D", _frozen(D))

    @property
    def K(self) -> int:
        return self.E0.shape[0]

    @property
    def M(self) -> int:
        return self.EH.shape[1]

    @cached_property
    def gains(self) -> np.ndarray:
        """Effective power gains h[k, i] (path loss and CSI model applied)."""
        return _frozen(gain_matrix(self))

    @cached_property
    def energy_cap(self) -> np.ndarray:
        """E0[k] + sum_j EH[k, j]: the loose per-slot bound on transmit energy."""
        return _frozen(self.E0 + self.EH.sum(axis=1))

    def with_csi(self, csi: CSI) -> "ProblemInstance":
        return replace(self, csi=csi)

    def equals(self, other: "ProblemInstance") -> bool:
        """Exact (bitwise) equality of every field."""
        return (
            isinstance(other, ProblemInstance)
            and self.tau == other.tau
            and self.noise_power == other.noise_power
            and self.alpha == other.alpha
            and self.csi == other.csi
            and np.array_equal(self.E0, other.E0)
            and np.array_equal(self.EH, other.EH)
            and np.array_equal(self.g, other.g)
            and np.array_equal(self.D, other.D)
        )

    def __eq__(self, other):
        if not isinstance(other, ProblemInstance):
            return NotImplemented
        return self.equals(other)

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "format": "ehsched-instance",
            "version": FORMAT_VERSION,
            "K": self.K,
            "M": self.M,
            "tau": self.tau,
            "noise_power": self.noise_power,
            "E0": self.E0.tolist(),
            "EH": self.EH.tolist(),
            "g": [[[z.real, z.imag] for z in row] for row in self.g.tolist()],
            "D": self.D.tolist(),
            "alpha": self.alpha,
            "csi": self.csi.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Any) -> "ProblemInstance":
        if not isinstance(d, dict):
            raise InstanceFormatError("instance document must be an object")
        for key in ("K", "M", "tau", "noise_power", "E0", "EH", "g", "D", "alpha"):
            if key not in d:
                raise InstanceFormatError("missing required field", field=key)
        K = _as_int(d["K"], "K")
        M = _as_int(d["M"], "M")
        E0 = _float_list(d["E0"], "E0", K)
        D = _float_list(d["D"], "D", K)
        EH = _float_matrix(d["EH"], "EH", K, M)
        g_raw = d["g"]
        if not isinstance(g_raw, list) or len(g_raw) != K:
            raise InstanceFormatError(f"expected {K} rows", field="g")
        g = np.empty((K, M), dtype=complex)
        for k, row in enumerate(g_raw):
            if not isinstance(row, list) or len(row) != M:
                raise InstanceFormatError(f"expected {M} entries", field=f"g[{k}]")
            for i, pair in enumerate(row):
                if not isinstance(pair, list) or len(pair) != 2:
                    raise InstanceFormatError("expected [re, im]", field=f"g[{k}][{i}]")
                g[k, i] = complex(
                    _as_float(pair[0], f"g[{k}][{i}][0]"), _as_float(pair[1], f"g[{k}][{i}][1]")
                )
        csi = CSI.from_dict(d.get("csi", {"mode": "perfect"}))
        try:
            return cls(
                tau=_as_float(d["tau"], "tau"),
                noise_power=_as_float(d["noise_power"], "noise_power"),
                E0=E0,
                EH=EH,
                g=g,
                D=D,
                alpha=_as_float(d["alpha"], "alpha"),
                csi=csi,
            )
        except ConfigError as exc:
            raise InstanceFormatError(str(exc)) from exc


def _as_float(x: Any, name: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise InstanceFormatError(f"expected a number, got {x!r}", field=name)
    return float(x)


def _as_int(x: Any, name: str) -> int:
    if isinstance(x, bool) or not isinstance(x, int) or x < 1:
        raise InstanceFormatError(f"expected a positive integer, got {x!r}", field=name)
    return x


def _float_list(x: Any, name: str, n: int) -> list[float]:
    if not isinstance(x, list) or len(x) != n:
        raise InstanceFormatError(f"expected a list of {n} numbers", field=name)
    return [_as_float(v, f"{name}[{j}]") for j, v in enumerate(x)]


def _float_matrix(x: Any, name: str, rows: int, cols: int) -> list[list[float]]:
    if not isinstance(x, list) or len(x) != rows:
        raise InstanceFormatError(f"expected {rows} rows", field=name)
    return [_float_list(r, f"{name}[{k}]", cols) for k, r in enumerate(x)]


def parse_json_text(text: str, what: str = "document") -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"invalid JSON in {what}: {exc.msg}", line=exc.lineno) from exc


def dump_instance(inst: ProblemInstance, dest: str | Path | IO[str]) -> None:
    """Write ``inst`` as a JSON document (floats keep full precision)."""
    text = json.dumps(inst.to_dict(), indent=1)
    if hasattr(dest, "write"):
        dest.write(text + "\n")
    else:
        Path(dest).write_text(text + "\n")


def load_instance(src: str | Path | IO[str]) -> ProblemInstance:
    text = src.read() if hasattr(src, "read") else Path(src).read_text()
    return ProblemInstance.from_dict(parse_json_text(text, "instance file"))


def worst_case_gain(g_hat_mag: float, epsilon: float) -> float:
    """Lower bound |g|^2 + eps^2 - 2|g| eps on |g_hat + dg|^2 over |dg| <= eps."""
    return g_hat_mag * g_hat_mag + epsilon * epsilon - 2.0 * g_hat_mag * epsilon


def gain_matrix(inst: ProblemInstance) -> np.ndarray:
    power = inst.g.real**2 + inst.g.imag**2
    if not inst.csi.is_perfect:
        eps = inst.csi.epsilon
        # |g|^2 + eps^2 - 2|g|eps; with eps == 0 this is |g|^2 bit for bit
        power = power + eps * eps - 2.0 * np.sqrt(power) * eps
        power = np.maximum(power, 0.0)
    return power * inst.D[:, None] ** (-inst.alpha)


def effective_gain(inst: ProblemInstance, k: int, i: int) -> float:
    """Power gain seen by transmitter ``k`` in slot ``i`` (0-based indices)."""
    if not (0 <= k < inst.K and 0 <= i < inst.M):
        raise IndexError(f"(k, i) = ({k}, {i}) outside {inst.K}x{inst.M}")
    return float(inst.gains[k, i])


@dataclass(frozen=True)
class ScenarioConfig:
    """Recipe for random instances.

    Energies are given in joules and noise in watts; use
    :meth:`from_dict` for the mJ/dBm file representation.
    """

    K: int = 2
    M: int = 4
    tau: float = 1.0
    noise_power: float = 1e-6
    E0: tuple[float, ...] = (2e-3, 2e-3)
    harvest: tuple[float, float] = (0.0, 5e-3)
    D: tuple[float, ...] = (5.0, 10.0)
    alpha: float = 2.0
    csi: CSI = field(default_factory=CSI.perfect)

    def __post_init__(self):
        object.__setattr__(self, "E0", tuple(float(x) for x in np.broadcast_to(self.E0, (self.K,))))
        object.__setattr__(self, "D", tuple(float(x) for x in np.broadcast_to(self.D, (self.K,))))
        object.__setattr__(self, "harvest", tuple(float(x) for x in self.harvest))
        self.validate()

    def validate(self) -> None:
        a, b = self.harvest
        if self.K < 1 or self.M < 1:
            raise ConfigError(f"K and M must be >= 1 (K={self.K}, M={self.M})")
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not self.noise_power > 0:
            raise ConfigError(f"noise_power must be > 0, got {self.noise_power}")
        if a < 0 or a > b:
            raise ConfigError(f"harvest bounds must satisfy 0 <= a <= b, got [{a}, {b}]")
        if any(e < 0 for e in self.E0):
            raise ConfigError("E0 must be nonnegative")
        if any(not d > 0 for d in self.D):
            raise ConfigError("distances must be positive")

    def replace(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "M": self.M,
            "tau": self.tau,
            "noise_dbm": 10.0 * math.log10(self.noise_power) + 30.0,
            "E0_mj": [e * 1e3 for e in self.E0],
            "harvest_mj": [x * 1e3 for x in self.harvest],
            "D": list(self.D),
            "alpha": self.alpha,
            "csi": self.csi.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Any) -> "ScenarioConfig":
        """Build from the file form (``E0_mj``, ``harvest_mj``, ``noise_dbm``).

        Missing keys fall back to the two-user default scenario.
        """
        if not isinstance(d, dict):
            raise InstanceFormatError("scenario document must be an object")
        known = {"K", "M", "tau", "noise_dbm", "E0_mj", "harvest_mj", "D", "alpha", "csi"}
        unknown = set(d) - known
        if unknown:
            raise InstanceFormatError("unknown key", field=sorted(unknown)[0])
        K = _as_int(d.get("K", 2), "K")
        kw: dict[str, Any] = {"K": K, "M": _as_int(d.get("M", 4), "M")}
        if "tau" in d:
            kw["tau"] = _as_float(d["tau"], "tau")
        if "noise_dbm" in d:
            kw["noise_power"] = dbm_to_watt(_as_float(d["noise_dbm"], "noise_dbm"))
        if "E0_mj" in d:
            e0 = d["E0_mj"]
            e0 = [e0] * K if not isinstance(e0, list) else e0
            kw["E0"] = tuple(x * 1e-3 for x in _float_list(e0, "E0_mj", K))
        elif K != 2:
            kw["E0"] = (2e-3,) * K
        if "harvest_mj" in d:
            h = _float_list(d["harvest_mj"], "harvest_mj", 2)
            kw["harvest"] = (h[0] * 1e-3, h[1] * 1e-3)
        if "D" in d:
            kw["D"] = tuple(_float_list(d["D"], "D", K))
        elif K != 2:
            kw["D"] = tuple(10.0 / K * (k + 1) for k in range(K))
        if "alpha" in d:
            kw["alpha"] = _as_float(d["alpha"], "alpha")
        if "csi" in d:
            kw["csi"] = CSI.from_dict(d["csi"])
        try:
            return cls(**kw)
        except ConfigError as exc:
            raise InstanceFormatError(str(exc)) from exc


def default_scenario(M: int = 4, alpha: float = 2.0, csi: CSI | None = None) -> ScenarioConfig:
    """Two users at 5 m and 10 m, 2 mJ initial energy, U[0, 5] mJ harvest, -30 dBm noise."""
    return ScenarioConfig(M=M, alpha=alpha, csi=csi or CSI.perfect())


def k_sweep_scenario(K: int, M: int = 4) -> ScenarioConfig:
    """Users evenly spread up to 10 m with a fixed 3 mJ harvest per slot."""
    return ScenarioConfig(
        K=K,
        M=M,
        E0=(2e-3,) * K,
        harvest=(3e-3, 3e-3),
        D=tuple(10.0 / K * (k + 1) for k in range(K)),
        alpha=2.0,
    )


def _box_muller(rng: np.random.Generator, shape: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    u1 = rng.random(shape)
    u2 = rng.random(shape)
    r = np.sqrt(-2.0 * np.log1p(-u1))  # 1 - u1 is in (0, 1]
    return r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)


def sample_instance(config: ScenarioConfig, seed: int) -> ProblemInstance:
    """Draw a random instance; a pure function of ``(config, seed)``.

    Fading coefficients are CN(0, 1) (real and imaginary parts N(0, 1/2)
    via Box-Muller on a PCG64 stream), harvest amounts U[a, b].
    """
    config.validate()
    K, M = config.K, config.M
    rng = np.random.Generator(np.random.PCG64(seed))
    z_re, z_im = _box_muller(rng, (K, M))
    g = (z_re + 1j * z_im) * math.sqrt(0.5)
    a, b = config.harvest
    EH = a + (b - a) * rng.random((K, M))
    return ProblemInstance(
        tau=config.tau,
        noise_power=config.noise_power,
        E0=np.array(config.E0),
        EH=EH,
        g=g,
        D=np.array(config.D),
        alpha=config.alpha,
        csi=config.csi,
    )
