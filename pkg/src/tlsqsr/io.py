"""Run configuration, content hashing and result persistence.

A configuration file is a flat ``key = value`` document; ``#`` starts a
comment.  Every key has a default, so an empty document is a complete
configuration describing the standard protocol (``dt = 0.01``,
``gamma = 0.1``, ``10^4`` trajectories started at ``z = +/-0.999`` with
uniform phases).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .ensemble import EnsembleConfig
from .model import Z_CAP, SystemParams
from .spectral import SpectralConfig
from .stochastic import SCHEMES, IntegratorConfig, NoiseConfig

__all__ = [
    "ConfigError",
    "OutputExistsError",
    "RunConfig",
    "parse_config",
    "serialize_config",
    "load_config",
    "config_hash",
    "write_csv",
    "read_csv",
    "write_json",
    "prepare_output_dir",
    "persist",
]


class ConfigError(ValueError):
    """Invalid configuration document or value."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class OutputExistsError(FileExistsError):
    """Output files already exist and overwriting was not requested."""


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


# key -> (validator or None, description of the valid range)
_RULES = {
    "delta": (_positive, "> 0"),
    "gamma": (_nonneg, ">= 0"),
    "temperature": (_nonneg, ">= 0"),
    "epsilon1": (_nonneg, ">= 0"),
    "omega": (_positive, "> 0"),
    "fdt_prefactor": (_positive, "> 0"),
    "dt": (_positive, "> 0"),
    "t_final": (_positive, "> 0"),
    "record_stride": (lambda v: v >= 1, ">= 1"),
    "z_cap": (lambda v: 0 < v < 1, "in (0, 1)"),
    "stability_threshold": (_positive, "> 0"),
    "scheme": (lambda v: v in SCHEMES, f"one of {sorted(SCHEMES)}"),
    "n_traj": (lambda v: v >= 1, ">= 1"),
    "init": (lambda v: v in ("alternate", "plus", "minus", "equilibrium"),
             "one of alternate, plus, minus, equilibrium"),
    "z0": (lambda v: abs(v) <= 1, "|z0| <= 1"),
    "batch_size": (lambda v: v >= 1, ">= 1"),
    "max_excluded_fraction": (lambda v: 0 <= v <= 1, "in [0, 1]"),
    "n_blocks": (lambda v: v >= 10, ">= 10"),
    "t_relax": (_nonneg, ">= 0"),
    "n_periods": (lambda v: v >= 10, ">= 10"),
    "m_max": (_nonneg, ">= 0"),
    "omega_c": (lambda v: v is None or v > 0, "> 0"),
    "tmin": (_positive, "> 0"),
    "tmax": (_positive, "> 0"),
    "points": (lambda v: v >= 1, ">= 1"),
    "omega_min": (_positive, "> 0"),
    "omega_max": (_positive, "> 0"),
    "omega_points": (lambda v: v >= 1, ">= 1"),
    "peak_threshold": (_nonneg, ">= 0"),
}


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a run, as one flat record.

    ``phi0`` is ``"uniform"`` or a number; ``window_start``/``window_end``
    and ``omega_c`` are ``None`` for their computed defaults.  ``out`` is
    the output directory and is the only field left out of the content hash.
    """

    # system
    epsilon: float = 1.2
    delta: float = 1.0
    epsilon1: float = 0.0
    omega: float = 1.0
    gamma: float = 0.1
    temperature: float = 1.0
    e0: float = 0.0
    omega_c: float | None = None
    # noise
    seed: int = 0
    fdt_prefactor: float = 2.0
    # integrator
    dt: float = 1e-2
    t_final: float = 500.0
    record_stride: int = 10
    z_cap: float = Z_CAP
    stability_threshold: float = 1e3
    scheme: str = "rk4"
    # ensemble
    n_traj: int = 10_000
    init: str = "alternate"
    z0: float = 0.999
    phi0: str | float = "uniform"
    window_start: float | None = None
    window_end: float | None = None
    batch_size: int = 250
    max_excluded_fraction: float = 0.01
    n_blocks: int = 20
    # driven steady state
    t_relax: float = 100.0
    n_periods: int = 20
    m_max: int = 4
    # scan grids
    tmin: float = 0.2
    tmax: float = 5.0
    points: int = 12
    omega_min: float = 0.3
    omega_max: float = 2.6
    omega_points: int = 24
    peak_threshold: float = 3.0
    # output
    out: str = "results"

    def __post_init__(self):
        for key, (ok, rng) in _RULES.items():
            value = getattr(self, key)
            if value is None and key != "omega_c":
                raise ConfigError(f"{key} may not be empty", key=key)
            if not ok(value):
                raise ConfigError(f"{key} = {value!r} out of range (must be {rng})", key=key)
        if not self.phi0 == "uniform":
            try:
                float(self.phi0)
            except ValueError:
                raise ConfigError(f"phi0 must be 'uniform' or a number, got {self.phi0!r}", key="phi0")
        if (self.window_start is None) != (self.window_end is None):
            raise ConfigError("window_start and window_end must be given together", key="window_start")
        if self.window_start is not None and not self.window_start < self.window_end:
            raise ConfigError("window_start must be < window_end", key="window_start")
        if self.tmin > self.tmax:
            raise ConfigError("tmin must be <= tmax", key="tmin")
        if self.omega_min > self.omega_max:
            raise ConfigError("omega_min must be <= omega_max", key="omega_min")
        try:
            self.system_params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def system_params(self) -> SystemParams:
        return SystemParams(
            epsilon=self.epsilon, delta=self.delta, epsilon1=self.epsilon1,
            omega=self.omega, gamma=self.gamma, temperature=self.temperature,
        )

    def noise_config(self) -> NoiseConfig:
        return NoiseConfig(fdt_prefactor=self.fdt_prefactor, master_seed=self.seed)

    def integrator_config(self) -> IntegratorConfig:
        return IntegratorConfig(
            dt=self.dt, t_final=self.t_final, record_stride=self.record_stride,
            z_cap=self.z_cap, stability_threshold=self.stability_threshold, scheme=self.scheme,
        )

    def ensemble_config(self, workers: int | None = None) -> EnsembleConfig:
        window = None if self.window_start is None else (self.window_start, self.window_end)
        phi0 = self.phi0 if self.phi0 == "uniform" else float(self.phi0)
        return EnsembleConfig(
            n_traj=self.n_traj, init=self.init, z0=self.z0, phi0=phi0, window=window,
            worker_count=workers, batch_size=self.batch_size,
            max_excluded_fraction=self.max_excluded_fraction, n_blocks=self.n_blocks,
        )

    def spectral_config(self) -> SpectralConfig:
        return SpectralConfig(t_relax=self.t_relax, n_periods=self.n_periods, m_max=self.m_max)

    def temperature_grid(self) -> np.ndarray:
        return np.linspace(self.tmin, self.tmax, self.points)

    def omega_grid(self) -> np.ndarray:
        return np.linspace(self.omega_min, self.omega_max, self.omega_points)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_OPTIONAL = {"omega_c", "window_start", "window_end"}


def _kind(name: str) -> type:
    default = _FIELDS[name].default
    if name in _OPTIONAL:
        return float
    return type(default)


def _convert(name: str, raw: str):
    kind = _kind(name)
    raw = raw.strip()
    if name in _OPTIONAL and raw.lower() in ("", "none"):
        return None
    if name == "phi0":
        if raw == "uniform":
            return raw
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"expected 'uniform' or a number, got {raw!r}") from None
    if kind is str:
        return raw
    if kind is int:
        try:
            return int(raw)
        except ValueError:
            pass
        try:
            value = float(raw)
        except ValueError:
            raise ValueError(f"expected an integer, got {raw!r}") from None
        # accept 1e4-style spellings only where float is exact
        if not value.is_integer() or abs(value) > 2**53:
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(value)
    try:
        value = float(raw)
    except ValueError:
        raise ValueError(f"expected a number, got {raw!r}") from None
    if not math.isfinite(value):
        raise ValueError(f"expected a finite number, got {raw!r}")
    return value


def config_keys() -> list[str]:
    return list(_FIELDS)


def coerce_value(key: str, raw: str):
    """Convert a textual value for ``key``; raises :class:`ConfigError`."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown key {key!r}", key=key)
    try:
        return _convert(key, raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}", key=key) from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse a ``key = value`` document on top of ``base`` (defaults).

    Unknown and repeated keys are errors; every diagnostic names the line.
    """
    values, seen = {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", line=lineno)
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}", line=lineno, key=key)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first on line {seen[key]})", line=lineno, key=key)
        seen[key] = lineno
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", line=lineno, key=key) from None
    try:
        return dataclasses.replace(base or RunConfig(), **values)
    except ConfigError as exc:
        if exc.key in seen:
            raise ConfigError(str(exc), line=seen[exc.key], key=exc.key) from None
        raise


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: RunConfig, *, include_out: bool = True) -> str:
    """Render every field in declaration order; ``parse_config`` inverts it."""
    lines = []
    for name in _FIELDS:
        if name == "out" and not include_out:
            continue
        lines.append(f"{name} = {_render(getattr(cfg, name))}")
    return "\n".join(lines) + "\n"


def load_config(path: str | os.PathLike, base: RunConfig | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, base)


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 of the serialized configuration, output directory excluded."""
    return hashlib.sha256(serialize_config(cfg, include_out=False).encode()).hexdigest()


def config_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def _fmt(value) -> str:
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, ".17g")


def write_csv(path: str | os.PathLike, columns: dict, comments: dict | None = None) -> Path:
    """Write columns with a header row; floats at 17 significant digits.

    ``comments`` become a leading ``# key=value key=value`` line.
    """
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[k], dtype=float) for k in names]
    n = len(arrays[0]) if arrays else 0
    try:
        with path.open("w", newline="") as fh:
            if comments:
                fh.write("# " + " ".join(f"{k}={v}" for k, v in comments.items()) + "\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(names)
            for i in range(n):
                writer.writerow([_fmt(a[i]) for a in arrays])
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from None
    return path


def read_csv(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Inverse of :func:`write_csv`: ``(columns, comments)``."""
    path = Path(path)
    comments = {}
    try:
        with path.open(newline="") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read {path}: {exc.strerror}") from None
    body = []
    for line in lines:
        if line.startswith("#"):
            for item in line[1:].split():
                k, _, v = item.partition("=")
                comments[k] = v
        elif line.strip():
            body.append(line)
    if not body:
        raise ValueError(f"{path}: no header row")
    rows = list(csv.reader(body))
    names = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(names))
    return {k: data[:, i].copy() for i, k in enumerate(names)}, comments


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    if isinstance(obj, (set, tuple)):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path: str | os.PathLike, obj) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from None
    return path


def prepare_output_dir(directory: str | os.PathLike, names, force: bool = False) -> Path:
    """Create ``directory``; refuse if any of ``names`` exists unless ``force``."""
    directory = Path(directory)
    clashes = [n for n in names if (directory / n).exists()]
    if clashes and not force:
        raise OutputExistsError(
            f"{directory}: would overwrite {', '.join(sorted(clashes))} (use --force)"
        )
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def persist(
    tables: dict[str, dict],
    summary: dict,
    directory: str | os.PathLike,
    cfg: RunConfig,
    *,
    force: bool = False,
    summary_name: str = "summary.json",
) -> list[Path]:
    """Write ``tables`` (file name -> columns) as CSV plus a JSON summary.

    Each CSV carries ``config_hash`` and ``seed`` in its comment line; the
    summary adds the configuration echo and whatever ``summary`` holds.
    """
    names = list(tables) + [summary_name]
    directory = prepare_output_dir(directory, names, force)
    stamp = {"config_hash": config_hash(cfg), "seed": cfg.seed}
    written = [write_csv(directory / name, cols, stamp) for name, cols in tables.items()]
    full = dict(summary)
    full.update(stamp)
    full["config"] = config_dict(cfg)
    written.append(write_json(directory / summary_name, full))
    return written
