"""Experiment configuration: JSON files, flag overrides, validation."""

import json
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from .exceptions import ConfigError
from .grid import TimeGrid
from .noise import OUKernel, TabulatedKernel

MODES = ("linear", "nonlinear", "markov_white", "lindblad", "pseudomode")
STOCHASTIC_MODES = ("linear", "nonlinear", "markov_white")
ORACLE_MODES = ("lindblad", "pseudomode")

_DEFAULT_PSI0 = tuple(np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0))


def default_workers() -> int:
    raw = os.environ.get("QSD3_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"QSD3_WORKERS must be an integer, got {raw!r}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    gamma: float | None = None
    omega: float = 1.0
    dt: float = 0.005
    t_max: float = 25.0
    output_stride: int = 10
    n_traj: int = 1000
    master_seed: int = 12345
    psi0: tuple = _DEFAULT_PSI0
    kernel: str = "OU"
    workers: int = 1
    out: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (self.dt > 0.0 and np.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt!r}")
        if not (self.t_max > 0.0 and np.isfinite(self.t_max)):
            raise ConfigError(f"t_max must be positive, got {self.t_max!r}")
        if self.output_stride < 1:
            raise ConfigError(f"output_stride must be >= 1, got {self.output_stride!r}")
        if self.mode in STOCHASTIC_MODES and self.n_traj < 1:
            raise ConfigError(f"n_traj must be >= 1 for mode {self.mode!r}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers!r}")
        needs_gamma = self.mode == "pseudomode" or (
            self.mode in ("linear", "nonlinear") and self.kernel == "OU"
        )
        if needs_gamma and (self.gamma is None or not self.gamma > 0.0):
            raise ConfigError(f"mode {self.mode!r} needs gamma > 0, got {self.gamma!r}")
        if self.mode in ("markov_white", "lindblad") and self.kernel != "OU":
            raise ConfigError(f"mode {self.mode!r} does not take a tabulated kernel")
        psi = np.asarray(self.psi0, dtype=complex)
        if psi.shape != (3,):
            raise ConfigError(f"psi0 must have 3 amplitudes, got {len(self.psi0)}")
        n = np.linalg.norm(psi)
        if not (np.isfinite(n) and n > 0.0):
            raise ConfigError(f"psi0 must have positive finite norm, got {n!r}")
        self.time_grid()  # checks dt/t_max commensurability
        if self.kernel != "OU" and not os.path.exists(self.kernel):
            raise ConfigError(f"kernel table file not found: {self.kernel!r}")
        return self

    def time_grid(self) -> TimeGrid:
        return TimeGrid.from_horizon(self.dt, self.t_max)

    def normalized_psi0(self) -> np.ndarray:
        psi = np.asarray(self.psi0, dtype=complex)
        return psi / np.linalg.norm(psi)

    def uses_ou_kernel(self) -> bool:
        return self.kernel == "OU"

    def kernel_spec(self):
        if self.uses_ou_kernel():
            return OUKernel(self.gamma)
        return load_kernel_table(self.kernel)

    def to_dict(self) -> dict:
        d = asdict(self)
        psi = self.normalized_psi0()
        d["psi0"] = [[z.real, z.imag] for z in psi]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _parse_psi0(raw) -> tuple:
    if isinstance(raw, str):
        parts = raw.split(",")
    else:
        parts = list(raw)
    if len(parts) != 3:
        raise ConfigError(f"psi0 needs exactly 3 amplitudes, got {len(parts)}")
    amps = []
    for part in parts:
        if isinstance(part, str):
            try:
                amps.append(complex(part.strip().replace(" ", "")))
            except ValueError:
                raise ConfigError(f"cannot parse psi0 amplitude {part!r}") from None
        elif isinstance(part, (list, tuple)):
            if len(part) != 2:
                raise ConfigError(f"psi0 amplitude pairs must be [re, im], got {part!r}")
            amps.append(complex(float(part[0]), float(part[1])))
        elif isinstance(part, (int, float)):
            amps.append(complex(part))
        else:
            raise ConfigError(f"cannot parse psi0 amplitude {part!r}")
    return tuple(amps)


_FIELD_PARSERS = {
    "mode": str,
    "gamma": lambda v: None if v is None else float(v),
    "omega": float,
    "dt": float,
    "t_max": float,
    "output_stride": int,
    "n_traj": int,
    "master_seed": int,
    "psi0": _parse_psi0,
    "kernel": str,
    "workers": int,
    "out": lambda v: None if v is None else str(v),
}


def config_from_dict(data: dict) -> ExperimentConfig:
    unknown = sorted(set(data) - set(_FIELD_PARSERS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "mode" not in data:
        raise ConfigError("config is missing the required 'mode' field")
    kwargs = {}
    for key, value in data.items():
        try:
            kwargs[key] = _FIELD_PARSERS[key](value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from None
    if "workers" not in kwargs:
        kwargs["workers"] = default_workers()
    return ExperimentConfig(**kwargs).validate()


def config_from_file(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path!r} must hold a JSON object")
    return config_from_dict(data)


def apply_overrides(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Apply non-None flag values on top of a parsed config; flags win."""
    cleaned = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in _FIELD_PARSERS:
            raise ConfigError(f"unknown config field {key!r}")
        cleaned[key] = _FIELD_PARSERS[key](value)
    return replace(config, **cleaned).validate()


def load_kernel_table(path: str) -> TabulatedKernel:
    """Read a tabulated kernel CSV with columns lag,re_alpha,im_alpha."""
    try:
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read kernel table {path!r}: {exc}") from None
    if rows.shape[1] != 3:
        raise ConfigError(f"kernel table {path!r} must have columns lag,re_alpha,im_alpha")
    return TabulatedKernel(lags=rows[:, 0], values=rows[:, 1] + 1j * rows[:, 2])
