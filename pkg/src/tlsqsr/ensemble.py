"""Ensemble propagation, moment accumulation and equilibrium thermodynamics.

Trajectories are split into fixed-size batches of consecutive stream ids.
Each batch accumulates its own partial sums in stream order and batches are
merged in batch order, so the floating-point result is the same for any
number of workers.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import analytic
from .model import SystemParams, TlsState, _s_min
from .results import ScanResult, rows_to_columns
from .stochastic import (
    IntegratorConfig,
    NoiseConfig,
    Trajectory,
    initial_phase,
    propagate_trajectory,
)

log = logging.getLogger(__name__)

__all__ = [
    "EnsembleError",
    "WindowError",
    "EnsembleConfig",
    "MomentSeries",
    "AsymptoticAverage",
    "HeatCapacity",
    "align_to_period",
    "default_window",
    "trajectory_observables",
    "run_ensemble",
    "asymptotic_average",
    "heat_capacity_fluct",
    "thermo_scan",
]

INIT_POLICIES = ("alternate", "plus", "minus", "equilibrium")

# accumulated per-sample observables, in this order
_OBS = ("z", "cos_phi", "sx", "sy", "E", "H0")


class EnsembleError(RuntimeError):
    """Too many trajectories had to be excluded."""


class WindowError(ValueError):
    """Averaging window is invalid or too short."""


@dataclass(frozen=True)
class EnsembleConfig:
    """How trajectories are initialised, counted and averaged.

    ``init`` selects ``z(0)``: ``"alternate"`` puts even stream ids at
    ``+z0`` and odd ones at ``-z0``; ``"plus"``/``"minus"`` use one sign;
    ``"equilibrium"`` starts from the analytic thermal ``<z>``.  ``phi0`` is
    ``"uniform"`` (on ``[-pi, pi)``) or a fixed number.  ``window`` is a
    ``(t_start, t_end)`` pair or ``None`` for the default (last quarter, cut
    to whole driving periods when driven).
    """

    n_traj: int = 10_000
    init: str = "alternate"
    z0: float = 0.999
    phi0: str | float = "uniform"
    window: tuple[float, float] | None = None
    worker_count: int | None = None
    batch_size: int = 250
    max_excluded_fraction: float = 0.01
    n_blocks: int = 20

    def __post_init__(self):
        if self.n_traj < 1:
            raise ValueError(f"n_traj must be >= 1, got {self.n_traj}")
        if self.init not in INIT_POLICIES:
            raise ValueError(f"init must be one of {INIT_POLICIES}, got {self.init!r}")
        if not 0 <= abs(self.z0) <= 1:
            raise ValueError(f"|z0| must be <= 1, got {self.z0}")
        if isinstance(self.phi0, str) and self.phi0 != "uniform":
            raise ValueError(f"phi0 must be 'uniform' or a number, got {self.phi0!r}")
        if self.window is not None and not self.window[0] < self.window[1]:
            raise ValueError(f"window start must precede its end, got {self.window}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.n_blocks < 10:
            raise ValueError("n_blocks must be >= 10")

    def workers(self) -> int:
        if self.worker_count is not None:
            return max(1, int(self.worker_count))
        return max(1, int(os.environ.get("SIM_THREADS", "1")))

    def initial_state(self, stream_id: int, p: SystemParams, ncfg: NoiseConfig) -> TlsState:
        if self.init == "alternate":
            z = self.z0 if stream_id % 2 == 0 else -self.z0
        elif self.init == "plus":
            z = self.z0
        elif self.init == "minus":
            z = -self.z0
        else:
            z = analytic.thermal_averages(p.beta, p).z_avg
        if self.phi0 == "uniform":
            phi = initial_phase(ncfg.for_stream(stream_id))
        else:
            phi = float(self.phi0)
        return TlsState(z, phi, 0.0)


@dataclass
class MomentSeries:
    """Ensemble moments at every recorded time.

    ``mean_E``/``var_E`` refer to the effective energy including friction and
    noise work; ``mean_H0``/``var_H0`` to the (driven) isolated-system energy.
    ``window_stats`` holds, per observable, the mean and standard error across
    trajectories of each trajectory's own time average over ``window``.
    """

    t: np.ndarray
    mean_z: np.ndarray
    se_z: np.ndarray
    mean_cos_phi: np.ndarray
    se_cos_phi: np.ndarray
    mean_E: np.ndarray
    se_E: np.ndarray
    var_E: np.ndarray
    mean_H0: np.ndarray
    var_H0: np.ndarray
    mean_sx: np.ndarray
    mean_sy: np.ndarray
    n_valid: np.ndarray
    n_traj: int = 0
    n_excluded: int = 0
    n_reflections: int = 0
    n_steps: int = 0
    params: SystemParams | None = None
    window: tuple[float, float] | None = None
    window_stats: dict = field(default_factory=dict)

    CSV_COLUMNS = (
        "t", "mean_z", "se_z", "mean_cos_phi", "se_cos_phi",
        "mean_E", "se_E", "var_E", "n_valid",
    )

    def __len__(self) -> int:
        return len(self.t)

    @property
    def mean_E2(self) -> np.ndarray:
        return self.var_E + self.mean_E**2

    @property
    def excluded_fraction(self) -> float:
        return self.n_excluded / self.n_traj if self.n_traj else 0.0

    @property
    def bloch_norm2(self) -> np.ndarray:
        """Squared norm of the ensemble-averaged Bloch vector."""
        return self.mean_sx**2 + self.mean_sy**2 + self.mean_z**2

    @property
    def spacing(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def cv_series(self, temperature: float, estimator: str = "effective") -> np.ndarray:
        var = self.var_E if estimator == "effective" else self.var_H0
        return var / temperature**2

    def summary(self) -> dict:
        return {
            "n_traj": self.n_traj,
            "n_excluded": self.n_excluded,
            "excluded_fraction": self.excluded_fraction,
            "n_reflections": self.n_reflections,
            "reflections_per_step": self.n_reflections / max(self.n_steps, 1),
            "window": list(self.window) if self.window else None,
        }


def align_to_period(icfg: IntegratorConfig, p: SystemParams) -> IntegratorConfig:
    """Shrink ``dt`` so one driving period holds a whole number of records.

    The change is below ``dt / (period / (dt*stride))``; undriven configs are
    returned unchanged.
    """
    if not p.driven:
        return icfg
    stride = int(icfg.record_stride)
    per_record = max(1, math.ceil(p.period / (icfg.dt * stride) - 1e-9))
    return replace(icfg, dt=p.period / (per_record * stride))


def default_window(p: SystemParams, icfg: IntegratorConfig) -> tuple[float, float]:
    """Last quarter of the run; whole driving periods when driven."""
    t_end = (icfg.n_records - 1) * icfg.sample_spacing
    span = 0.25 * t_end
    if p.driven:
        n_per = math.floor(span / p.period + 1e-9)
        if n_per < 1:
            raise WindowError(
                f"run too short for one driving period in the last quarter "
                f"(t_final={icfg.t_final}, period={p.period:.4g})"
            )
        span = n_per * p.period
    return (t_end - span, t_end)


def trajectory_observables(
    traj: Trajectory, p: SystemParams, z_cap: float
) -> dict[str, np.ndarray]:
    """Per-sample ``z, cos phi, sx, sy, E, H0`` of one trajectory.

    ``E`` is the effective energy with the noise value of the step that
    produced the sample; ``H0`` uses the instantaneous (driven) bias.
    """
    z, phi, xi = traj.z, traj.phi, traj.xi
    s = np.sqrt(np.maximum((1.0 - z) * (1.0 + z), 0.0))
    c = np.cos(phi)
    bias = (p.epsilon + p.epsilon1 * np.cos(p.omega * traj.t)) / p.delta if p.driven else p.bias_ratio
    h0 = -s * c + bias * z
    dphi = z * c / np.maximum(s, _s_min(z_cap)) + bias
    return {
        "z": z,
        "cos_phi": c,
        "sx": -s * c,
        "sy": s * np.sin(phi),
        "E": h0 + p.gamma * phi * dphi - xi * phi,
        "H0": h0,
    }


def _window_mask(t: np.ndarray, window: tuple[float, float]) -> np.ndarray:
    # half-open (t0, t1]: N samples for a span of N spacings
    h = t[1] - t[0] if len(t) > 1 else 1.0
    tol = 1e-6 * h
    return (t > window[0] + tol) & (t <= window[1] + tol)


@dataclass
class _Partial:
    n: int
    sums: np.ndarray          # (len(_OBS), n_rec)
    sq: np.ndarray            # (len(_OBS), n_rec)
    win_sum: np.ndarray       # (len(_OBS),)
    win_sq: np.ndarray
    excluded: int
    reflections: int
    steps: int

    def merge(self, other: "_Partial") -> None:
        self.n += other.n
        self.sums += other.sums
        self.sq += other.sq
        self.win_sum += other.win_sum
        self.win_sq += other.win_sq
        self.excluded += other.excluded
        self.reflections += other.reflections
        self.steps += other.steps


def _run_batch(ids, p, ncfg, icfg, ecfg, mask) -> _Partial:
    n_rec = icfg.n_records
    k = len(_OBS)
    part = _Partial(0, np.zeros((k, n_rec)), np.zeros((k, n_rec)), np.zeros(k), np.zeros(k), 0, 0, 0)
    for sid in ids:
        stream = ncfg.for_stream(sid)
        traj = propagate_trajectory(ecfg.initial_state(sid, p, ncfg), p, stream, icfg)
        part.reflections += traj.n_reflections
        part.steps += traj.n_steps
        if traj.unstable:
            part.excluded += 1
            log.debug("stream %d unstable at t=%.4g, excluded", sid, traj.unstable_time)
            continue
        obs = trajectory_observables(traj, p, icfg.z_cap)
        for i, name in enumerate(_OBS):
            x = obs[name]
            part.sums[i] += x
            part.sq[i] += x * x
            w = x[mask].mean()
            part.win_sum[i] += w
            part.win_sq[i] += w * w
        part.n += 1
    return part


def run_ensemble(
    p: SystemParams,
    ncfg: NoiseConfig,
    icfg: IntegratorConfig,
    ecfg: EnsembleConfig,
) -> MomentSeries:
    """Propagate ``ecfg.n_traj`` trajectories and reduce them to moments.

    Stream ids run over ``0 .. n_traj-1``.  Unstable trajectories are left
    out of every moment and counted; :class:`EnsembleError` is raised when
    more than ``max_excluded_fraction`` of them fail.
    """
    window = ecfg.window or default_window(p, icfg)
    t = icfg.record_times()
    mask = _window_mask(t, window)
    if not mask.any():
        raise WindowError(f"window {window} contains no recorded sample")

    ids = range(ecfg.n_traj)
    batches = [ids[i : i + ecfg.batch_size] for i in range(0, ecfg.n_traj, ecfg.batch_size)]
    work = lambda b: _run_batch(b, p, ncfg, icfg, ecfg, mask)  # noqa: E731
    n_workers = min(ecfg.workers(), len(batches))
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            parts = list(pool.map(work, batches))
    else:
        parts = [work(b) for b in batches]
    total = parts[0]
    for part in parts[1:]:
        total.merge(part)

    n = total.n
    frac = total.excluded / ecfg.n_traj
    if frac > ecfg.max_excluded_fraction:
        raise EnsembleError(
            f"{total.excluded} of {ecfg.n_traj} trajectories unstable "
            f"({frac:.2%} > {ecfg.max_excluded_fraction:.2%})"
        )
    if total.excluded:
        log.info("excluded %d unstable trajectories (%.3f%%)", total.excluded, 100 * frac)

    mean = total.sums / n
    var = np.maximum(total.sq / n - mean**2, 0.0)
    se = np.sqrt(var / n)
    idx = {name: i for i, name in enumerate(_OBS)}

    wmean = total.win_sum / n
    wvar = np.maximum(total.win_sq / n - wmean**2, 0.0)
    wse = np.sqrt(wvar / max(n - 1, 1))
    window_stats = {name: (float(wmean[i]), float(wse[i])) for name, i in idx.items()}

    return MomentSeries(
        t=t,
        mean_z=mean[idx["z"]],
        se_z=se[idx["z"]],
        mean_cos_phi=mean[idx["cos_phi"]],
        se_cos_phi=se[idx["cos_phi"]],
        mean_E=mean[idx["E"]],
        se_E=se[idx["E"]],
        var_E=var[idx["E"]],
        mean_H0=mean[idx["H0"]],
        var_H0=var[idx["H0"]],
        mean_sx=mean[idx["sx"]],
        mean_sy=mean[idx["sy"]],
        n_valid=np.full(len(t), n, dtype=np.int64),
        n_traj=ecfg.n_traj,
        n_excluded=total.excluded,
        n_reflections=total.reflections,
        n_steps=total.steps,
        params=p,
        window=tuple(float(w) for w in window),
        window_stats=window_stats,
    )


@dataclass(frozen=True)
class AsymptoticAverage:
    """Steady-state averages with standard errors.

    Errors are the larger of the block-averaging estimate (20 contiguous time
    blocks by default) and, when available, the spread across trajectories of
    per-trajectory window averages.
    """

    z: float
    se_z: float
    cos_phi: float
    se_cos_phi: float
    E: float
    se_E: float
    H0: float
    se_H0: float
    sx: float
    sy: float
    window: tuple[float, float]
    n_blocks: int


def _block_mean(x: np.ndarray, n_blocks: int) -> tuple[float, float]:
    blocks = np.array_split(x, n_blocks)
    means = np.array([b.mean() for b in blocks])
    return float(x.mean()), float(means.std(ddof=1) / math.sqrt(n_blocks))


def _select(ms: MomentSeries, window) -> tuple[np.ndarray, tuple[float, float]]:
    window = tuple(window) if window is not None else ms.window
    if window is None:
        raise WindowError("no window given and none stored on the series")
    t0, t1 = window
    tol = 1e-9 * max(1.0, abs(t1))
    if t0 < ms.t[0] - tol or t1 > ms.t[-1] + tol or not t0 < t1:
        raise WindowError(f"window {window} outside recorded range [{ms.t[0]}, {ms.t[-1]}]")
    return _window_mask(ms.t, window), window


def asymptotic_average(
    ms: MomentSeries, window: tuple[float, float] | None = None, n_blocks: int = 20
) -> AsymptoticAverage:
    """Time-and-ensemble averages over ``window`` (defaults to ``ms.window``)."""
    mask, window = _select(ms, window)
    n_samp = int(mask.sum())
    nb = min(n_blocks, n_samp)
    if nb < 10:
        raise WindowError(f"window holds {n_samp} samples; need at least 10 blocks")
    same = ms.window is not None and np.allclose(window, ms.window)

    def avg(series, key):
        m, se = _block_mean(series[mask], nb)
        if same and key in ms.window_stats:
            se = max(se, ms.window_stats[key][1])
        return m, se

    z, se_z = avg(ms.mean_z, "z")
    c, se_c = avg(ms.mean_cos_phi, "cos_phi")
    e, se_e = avg(ms.mean_E, "E")
    h, se_h = avg(ms.mean_H0, "H0")
    return AsymptoticAverage(
        z=z, se_z=se_z, cos_phi=c, se_cos_phi=se_c, E=e, se_E=se_e, H0=h, se_H0=se_h,
        sx=float(ms.mean_sx[mask].mean()), sy=float(ms.mean_sy[mask].mean()),
        window=window, n_blocks=nb,
    )


@dataclass(frozen=True)
class HeatCapacity:
    value: float
    error: float
    series: np.ndarray
    estimator: str


def heat_capacity_fluct(
    ms: MomentSeries,
    window: tuple[float, float] | None,
    temperature: float,
    estimator: str = "effective",
    n_blocks: int = 20,
) -> HeatCapacity:
    """Heat capacity from ensemble energy fluctuations, ``Var(E) / T^2``.

    ``series`` is the full time-dependent ``C_v(t)``; ``value`` is its
    average over the window.  ``estimator="h0"`` uses the isolated-system
    energy instead of the effective one.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if estimator not in ("effective", "h0"):
        raise ValueError(f"unknown estimator {estimator!r}")
    series = ms.cv_series(temperature, estimator)
    mask, _ = _select(ms, window)
    nb = min(n_blocks, int(mask.sum()))
    if nb < 10:
        raise WindowError("window too short for block averaging")
    value, err = _block_mean(series[mask], nb)
    return HeatCapacity(value, err, series, estimator)


def thermo_scan(
    p: SystemParams,
    temperatures,
    ncfg: NoiseConfig,
    icfg: IntegratorConfig,
    ecfg: EnsembleConfig,
    *,
    e0: float = 0.0,
    classical_refs: bool = True,
) -> ScanResult:
    """Equilibrium observables against temperature, with analytic references.

    Each grid point ``i`` runs its own ensemble with seed context ``(i,)``.
    A failed point leaves a row of NaNs and a note in ``meta["failures"]``.
    Reference columns: quantum (``*_ref``) and classical Boltzmann on the
    phase cylinder at the noise temperature ``c T / 2`` (``*_cl``).
    """
    rows, failures = [], []
    for i, temp in enumerate(np.asarray(temperatures, dtype=float)):
        if temp <= p.gamma:
            warnings.warn(
                f"T={temp:g} is not >> gamma={p.gamma:g}; classical noise questionable",
                stacklevel=2,
            )
        pt = p.with_(temperature=float(temp))
        row = _thermo_row(pt, ncfg, e0, classical_refs)
        try:
            ms = run_ensemble(pt, ncfg.with_context(i), icfg, ecfg)
            aa = asymptotic_average(ms)
            cv = heat_capacity_fluct(ms, None, temp)
            cv0 = heat_capacity_fluct(ms, None, temp, estimator="h0")
            row.update(
                z_eq=aa.z, se_z=aa.se_z, cos_phi_eq=aa.cos_phi, se_cos_phi=aa.se_cos_phi,
                E_eq=aa.E, se_E=aa.se_E, H0_eq=aa.H0, se_H0=aa.se_H0,
                cv_fluct=cv.value, se_cv=cv.error, cv_fluct_h0=cv0.value, se_cv_h0=cv0.error,
                excluded_fraction=ms.excluded_fraction,
            )
        except (EnsembleError, WindowError) as exc:
            failures.append({"index": i, "temperature": float(temp), "error": str(exc)})
            log.warning("thermo-scan point T=%g failed: %s", temp, exc)
        rows.append(_finish_thermo_row(row))
    return ScanResult(
        control="T",
        columns=rows_to_columns(rows),
        meta={"failures": failures, "seed": ncfg.master_seed},
    )


_THERMO_SIM = (
    "z_eq", "se_z", "cos_phi_eq", "se_cos_phi", "E_eq", "se_E", "H0_eq", "se_H0",
    "cv_fluct", "se_cv", "cv_fluct_h0", "se_cv_h0", "excluded_fraction",
)


def _thermo_row(p: SystemParams, ncfg: NoiseConfig, e0: float, classical: bool) -> dict:
    beta = p.beta
    ref = analytic.thermal_averages(beta, p, e0)
    row = {"T": p.temperature}
    row.update({k: math.nan for k in _THERMO_SIM})
    row.update(
        z_ref=ref.z_avg,
        cos_phi_ref=ref.coherence_factor,
        E_ref=ref.energy_avg,
        cv_ref=ref.heat_capacity,
    )
    if classical and p.temperature > 0:
        beta_noise = 2.0 / (ncfg.fdt_prefactor * p.temperature)
        row.update(
            z_cl=analytic.classical_z_average(beta_noise, p),
            cos_phi_cl=analytic.classical_coherence(beta_noise, p, rtol=1e-6),
            H0_cl=analytic.classical_energy(beta_noise, p),
            # Var(H0)/T^2, comparable with cv_fluct_h0
            cv_cl=analytic.classical_heat_capacity(beta_noise, p) / (beta_noise * p.temperature) ** 2,
        )
    return row


def _finish_thermo_row(row: dict) -> dict:
    def dev(sim, ref):
        return abs(sim - ref) / abs(ref) if ref != 0 else math.nan

    row["dev_z"] = dev(abs(row["z_eq"]), abs(row["z_ref"]))
    row["dev_cos_phi"] = dev(abs(row["cos_phi_eq"]), abs(row["cos_phi_ref"]))
    row["dev_E"] = dev(row["E_eq"], row["E_ref"])
    row["dev_cv"] = dev(row["cv_fluct"], row["cv_ref"])
    return row
