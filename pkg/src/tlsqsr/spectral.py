"""Fourier analysis of the driven steady state and the resonance scans.

The periodic steady state of the ensemble-mean population is expanded as
``z(t) = sum_m P_m exp(-i m omega t)``.  Coefficients are inner products of
the recorded mean series with ``exp(+i m omega t)`` over a window of whole
driving periods; on a uniformly sampled whole-period window the trapezoid
rule for a periodic integrand is the plain sample mean, which is what is
used.  The line spectrum, power amplitudes ``eta_m = 4 pi |P_m/eps1|^2`` and
the energy harmonics follow from the coefficients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import analytic
from .ensemble import (
    EnsembleConfig,
    EnsembleError,
    MomentSeries,
    WindowError,
    align_to_period,
    asymptotic_average,
    heat_capacity_fluct,
    run_ensemble,
)
from .model import SystemParams
from .results import ScanResult, rows_to_columns
from .stochastic import IntegratorConfig, NoiseConfig

log = logging.getLogger(__name__)

__all__ = [
    "FourierCoefficients",
    "PowerSpectrum",
    "EnergyHarmonics",
    "DrivenRun",
    "window_slice",
    "fourier_coefficients",
    "fourier_errors",
    "autocorrelation_asy",
    "power_amplitudes",
    "energy_harmonics",
    "find_peaks",
    "comb_matches",
    "classify_temperature_response",
    "driven_ensemble",
    "qsr_scan_omega",
    "qsr_scan_temperature",
    "population_scan",
    "heat_capacity_scan",
    "welch_periodogram",
]


@dataclass(frozen=True)
class FourierCoefficients:
    """Complex ``P_m`` for ``m = -m_max .. m_max``.

    ``mean_square`` is the window average of ``z^2``; ``residual_power`` the
    part of it carried by frequencies other than the retained harmonics
    (noise and harmonics above ``m_max``), so that
    ``mean_square == sum |P_m|^2 + residual_power`` holds exactly (discrete
    Parseval).
    """

    m_max: int
    p: np.ndarray
    omega: float
    epsilon1: float
    window: tuple[float, float]
    n_periods: int
    mean_square: float = math.nan
    residual_power: float = math.nan

    @property
    def m(self) -> np.ndarray:
        return np.arange(-self.m_max, self.m_max + 1)

    def __getitem__(self, m: int) -> complex:
        if abs(m) > self.m_max:
            raise IndexError(f"harmonic {m} beyond m_max={self.m_max}")
        return complex(self.p[m + self.m_max])

    @property
    def line_power(self) -> float:
        return float(np.sum(np.abs(self.p) ** 2))

    def hermitian_defect(self) -> float:
        """``max_m |P_{-m} - conj(P_m)|``."""
        return float(np.max(np.abs(self.p[::-1] - np.conj(self.p))))

    def parseval_defect(self) -> float:
        """``|mean z^2 - (sum_m |P_m|^2 + residual)|``."""
        return abs(self.mean_square - (self.line_power + self.residual_power))


@dataclass(frozen=True)
class PowerSpectrum:
    m: np.ndarray
    nu: np.ndarray
    weights: np.ndarray
    eta: np.ndarray

    def eta_at(self, m: int) -> float:
        return float(self.eta[np.flatnonzero(self.m == m)[0]])


@dataclass(frozen=True)
class EnergyHarmonics:
    m: np.ndarray
    u: np.ndarray
    cv: np.ndarray | None


def window_slice(t: np.ndarray, window: tuple[float, float]) -> slice:
    """Indices of samples with ``t0 < t <= t1`` on a uniform grid."""
    t0, t1 = window
    h = t[1] - t[0]
    tol = 1e-6 * h
    i0 = int(np.searchsorted(t, t0 + tol, side="left"))
    i1 = int(np.searchsorted(t, t1 + tol, side="right"))
    if i1 - i0 < 1:
        raise WindowError(f"window {window} contains no samples")
    return slice(i0, i1)


def _series(source, window):
    if isinstance(source, MomentSeries):
        window = window if window is not None else source.window
        return source.t, source.mean_z, window
    t, x = source
    if window is None:
        raise WindowError("window required for raw series")
    return np.asarray(t, dtype=float), np.asarray(x, dtype=float), window


def _period_count(n_samples: int, h: float, omega: float) -> int:
    span = n_samples * h
    period = 2.0 * math.pi / omega
    n_per = round(span / period)
    if n_per < 1 or abs(span - n_per * period) > 0.5 * h:
        raise WindowError(
            f"window of {span:.6g} does not span a whole number of periods {period:.6g}"
        )
    return n_per


def fourier_coefficients(
    source,
    omega: float,
    window: tuple[float, float] | None = None,
    m_max: int = 4,
    epsilon1: float | None = None,
    min_periods: int = 10,
) -> FourierCoefficients:
    """Fourier coefficients of the ensemble-mean population over ``window``.

    ``source`` is a :class:`MomentSeries` or a ``(t, z)`` pair on a uniform
    grid.  The window must hold a whole number (at least ``min_periods``) of
    driving periods to within half a sample.  For an undriven source
    (``epsilon1 == 0``) only ``P_0`` is meaningful and the others are zero by
    definition; no period condition applies.
    """
    t, x, window = _series(source, window)
    if epsilon1 is None:
        params = getattr(source, "params", None)
        epsilon1 = params.epsilon1 if params is not None else 1.0
    if m_max < 0:
        raise ValueError("m_max must be >= 0")
    sl = window_slice(t, window)
    ts, xs = t[sl], x[sl]
    n = len(xs)
    h = t[1] - t[0]
    mean_square = float(np.mean(xs * xs))
    p = np.zeros(2 * m_max + 1, dtype=complex)
    if epsilon1 == 0:
        p[m_max] = float(np.mean(xs))
        return FourierCoefficients(
            m_max, p, omega, 0.0, tuple(window), 0,
            mean_square=mean_square, residual_power=mean_square - abs(p[m_max]) ** 2,
        )
    if not omega > 0:
        raise ValueError("omega must be > 0")
    n_per = _period_count(n, h, omega)
    if n_per < min_periods:
        raise WindowError(f"window spans {n_per} periods; need at least {min_periods}")
    for m in range(0, m_max + 1):
        val = np.mean(xs * np.exp(1j * m * omega * ts))
        p[m_max + m] = val
        p[m_max - m] = np.conj(val)
    p[m_max] = p[m_max].real
    # Discrete Parseval: the DFT of the window splits mean(x^2) into all bins.
    bins = np.fft.fft(xs) / n
    total = float(np.sum(np.abs(bins) ** 2))
    residual = total - float(np.sum(np.abs(p) ** 2))
    return FourierCoefficients(
        m_max, p, omega, epsilon1, tuple(window), n_per,
        mean_square=mean_square, residual_power=residual,
    )


def fourier_errors(
    source,
    fc: FourierCoefficients,
    n_blocks: int = 10,
) -> np.ndarray:
    """Standard errors of ``|P_m|`` from whole-period blocks of the window."""
    t, x, _ = _series(source, fc.window)
    if fc.epsilon1 == 0 or fc.n_periods < n_blocks:
        xs = x[window_slice(t, fc.window)]
        blocks = np.array_split(xs, min(n_blocks, len(xs)))
        se0 = np.std([b.mean() for b in blocks], ddof=1) / math.sqrt(len(blocks))
        out = np.full(2 * fc.m_max + 1, np.nan)
        out[fc.m_max] = se0
        return out
    per_block = fc.n_periods // n_blocks
    period = 2.0 * math.pi / fc.omega
    t_start = fc.window[1] - n_blocks * per_block * period
    mags = []
    for b in range(n_blocks):
        w = (t_start + b * per_block * period, t_start + (b + 1) * per_block * period)
        sub = fourier_coefficients((t, x), fc.omega, w, fc.m_max, fc.epsilon1, min_periods=1)
        mags.append(np.abs(sub.p))
    mags = np.array(mags)
    return mags.std(axis=0, ddof=1) / math.sqrt(n_blocks)


def autocorrelation_asy(fc: FourierCoefficients, tau, tol: float = 1e-9) -> np.ndarray:
    """Period-averaged steady-state autocorrelation ``sum |P_m|^2 e^{-i m omega tau}``."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    w = np.abs(fc.p) ** 2
    c = (w[None, :] * np.exp(-1j * np.outer(tau, fc.m) * fc.omega)).sum(axis=1)
    if np.max(np.abs(c.imag)) > tol * max(1.0, float(np.max(np.abs(c.real)))):
        raise ArithmeticError("autocorrelation has a non-negligible imaginary part")
    return c.real


def power_amplitudes(fc: FourierCoefficients) -> PowerSpectrum:
    """Line spectrum at ``nu = m omega`` and power amplitudes ``eta_m``."""
    if not fc.epsilon1 > 0:
        raise ValueError("power amplitudes need epsilon1 > 0")
    w = np.abs(fc.p) ** 2
    return PowerSpectrum(m=fc.m, nu=fc.m * fc.omega, weights=w, eta=4.0 * math.pi * w / fc.epsilon1**2)


def energy_harmonics(
    fc: FourierCoefficients,
    p: SystemParams,
    fc_minus: FourierCoefficients | None = None,
    fc_plus: FourierCoefficients | None = None,
    d_temperature: float | None = None,
) -> EnergyHarmonics:
    """``U_m = -(Delta^2/eps) P_m`` and, given runs at ``T -/+ dT``, ``C_v,m``.

    ``C_v,m = -(Delta^2/eps) dP_m/dT`` by central difference; ``d_temperature``
    defaults to ``0.05 T``.
    """
    if p.epsilon == 0:
        raise ValueError("energy harmonics are singular at epsilon = 0")
    k = -(p.big_delta**2) / p.epsilon
    cv = None
    if fc_minus is not None and fc_plus is not None:
        dT = d_temperature if d_temperature is not None else 0.05 * p.temperature
        if not dT > 0:
            raise ValueError("d_temperature must be > 0")
        cv = k * (fc_plus.p - fc_minus.p) / (2.0 * dT)
    return EnergyHarmonics(m=fc.m, u=k * fc.p, cv=cv)


def find_peaks(x, y, threshold: float = 3.0) -> list[dict]:
    """Interior local maxima whose height above the median exceeds
    ``threshold`` median absolute deviations; sorted by height."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(y)
    if ok.sum() < 3:
        return []
    med = float(np.median(y[ok]))
    mad = float(np.median(np.abs(y[ok] - med)))
    peaks = []
    for i in range(1, len(y) - 1):
        if not (ok[i - 1] and ok[i] and ok[i + 1]):
            continue
        if y[i] > y[i - 1] and y[i] >= y[i + 1] and y[i] - med > threshold * mad:
            peaks.append({"x": float(x[i]), "height": float(y[i]), "index": i})
    return sorted(peaks, key=lambda d: -d["height"])


def comb_matches(peaks: list[dict], p: SystemParams, n_max: int = 4) -> list[dict]:
    """Nearest member of the ``eps/n`` and ``Delta/n`` combs for each peak."""
    out = []
    for pk in peaks:
        entry = dict(pk)
        for name, base in (("eps", abs(p.epsilon)), ("Delta", p.big_delta)):
            if base == 0:
                continue
            n = min(range(1, n_max + 1), key=lambda k: abs(pk["x"] - base / k))
            entry[f"{name}_n"] = n
            entry[f"{name}_offset"] = pk["x"] - base / n
        out.append(entry)
    return out


def classify_temperature_response(temps, eta, se=None) -> dict:
    """Shape of ``eta_1(T)``: monotone decay, minimum then maximum, or maximum.

    Differences smaller than two combined standard errors count as flat.
    """
    temps = np.asarray(temps, dtype=float)
    eta = np.asarray(eta, dtype=float)
    se = np.zeros_like(eta) if se is None else np.nan_to_num(np.asarray(se, dtype=float))
    ok = np.isfinite(eta)
    t, e, s = temps[ok], eta[ok], se[ok]
    if len(e) < 2:
        return {"shape": "undetermined", "monotone_decreasing": None, "t_max": None,
                "t_min_before_max": None, "n_rising": 0, "n_falling": 0}
    d = np.diff(e)
    noise = 2.0 * np.hypot(s[1:], s[:-1])
    rising = d > noise
    falling = d < -noise
    monotone = not rising.any()
    i_max = int(np.argmax(e))
    i_min = int(np.argmin(e[: i_max + 1])) if i_max > 0 else 0
    if monotone:
        shape = "monotone_decreasing"
    elif 0 < i_min < i_max:
        shape = "min_then_max"
    else:
        shape = "max"
    return {
        "shape": shape,
        "monotone_decreasing": bool(monotone),
        "t_max": float(t[i_max]),
        "t_min_before_max": float(t[i_min]) if shape == "min_then_max" else None,
        "n_rising": int(rising.sum()),
        "n_falling": int(falling.sum()),
    }


def expected_regime(p: SystemParams) -> str:
    if p.epsilon1 > abs(p.epsilon):
        return "monotone_decay"
    if p.epsilon1 <= 0.1 * abs(p.epsilon):
        return "linear_response"
    return "min_then_max"


@dataclass
class DrivenRun:
    """One driven ensemble with its steady-state analysis."""

    params: SystemParams
    series: MomentSeries
    fc: FourierCoefficients
    se_abs_p: np.ndarray
    z_eq: float
    cv: float
    se_cv: float
    cv_h0: float
    extra: dict = field(default_factory=dict)

    @property
    def eta1(self) -> float:
        if self.params.epsilon1 == 0:
            return math.nan
        return 4.0 * math.pi * abs(self.fc[1]) ** 2 / self.params.epsilon1**2

    @property
    def se_eta1(self) -> float:
        if self.params.epsilon1 == 0 or self.fc.m_max < 1:
            return math.nan
        a = abs(self.fc[1])
        return 8.0 * math.pi * a * self.se_abs_p[self.fc.m_max + 1] / self.params.epsilon1**2


@dataclass(frozen=True)
class SpectralConfig:
    """Run length and harmonic settings of a driven steady-state analysis.

    The run lasts ``t_relax`` plus ``n_periods`` driving periods; the window
    is the trailing ``n_periods``.  Undriven runs use ``t_relax +
    undriven_window``.
    """

    t_relax: float = 100.0
    n_periods: int = 20
    undriven_window: float = 100.0
    m_max: int = 4
    n_blocks: int = 10

    def __post_init__(self):
        if self.n_periods < 10:
            raise ValueError("n_periods must be >= 10")
        if self.t_relax < 0:
            raise ValueError("t_relax must be >= 0")


def _driven_cfgs(p, icfg, ecfg, scfg):
    if p.driven:
        icfg = align_to_period(icfg, p)
        h = icfg.sample_spacing
        per_rec = round(p.period / h)
        n_win = scfg.n_periods * per_rec
        n_relax = math.ceil(scfg.t_relax / h)
        n_rec = n_relax + n_win
        icfg = replace(icfg, t_final=n_rec * h)
        t_end = n_rec * h
        window = (t_end - n_win * h, t_end)
    else:
        h = icfg.sample_spacing
        n_rec = math.ceil((scfg.t_relax + scfg.undriven_window) / h)
        n_win = math.ceil(scfg.undriven_window / h)
        icfg = replace(icfg, t_final=n_rec * h)
        window = (n_rec * h - n_win * h, n_rec * h)
    return icfg, replace(ecfg, window=window)


def driven_ensemble(
    p: SystemParams,
    ncfg: NoiseConfig,
    icfg: IntegratorConfig,
    ecfg: EnsembleConfig,
    scfg: SpectralConfig | None = None,
) -> DrivenRun:
    """Run one ensemble sized for steady-state Fourier analysis.

    ``dt`` is aligned so that a period holds whole records, and the run
    length and window are set from ``scfg``.
    """
    scfg = scfg or SpectralConfig()
    icfg, ecfg = _driven_cfgs(p, icfg, ecfg, scfg)
    ms = run_ensemble(p, ncfg, icfg, ecfg)
    fc = fourier_coefficients(ms, p.omega, ms.window, scfg.m_max, p.epsilon1)
    se = fourier_errors(ms, fc, scfg.n_blocks)
    aa = asymptotic_average(ms)
    if p.temperature > 0:
        cv = heat_capacity_fluct(ms, None, p.temperature)
        cv0 = heat_capacity_fluct(ms, None, p.temperature, estimator="h0")
        cvv, cve, cv0v = cv.value, cv.error, cv0.value
    else:
        cvv = cve = cv0v = math.nan
    return DrivenRun(p, ms, fc, se, aa.z, cvv, cve, cv0v, extra={"dt": icfg.dt})


_SCAN_COLUMNS = (
    "eta1", "se_eta1", "z0", "se_z0", "P0_abs", "P1_abs", "se_P1", "P2_abs",
    "cv_fluct", "se_cv", "cv_fluct_h0",
    "hermitian_defect", "parseval_defect", "residual_power", "excluded_fraction",
)


def _scan_row(run: DrivenRun | None) -> dict:
    if run is None:
        return {k: math.nan for k in _SCAN_COLUMNS}
    fc, mm = run.fc, run.fc.m_max
    get = lambda m: abs(fc[m]) if m <= mm else math.nan  # noqa: E731
    return {
        "eta1": run.eta1,
        "se_eta1": run.se_eta1,
        "z0": float(fc[0].real),
        "se_z0": float(run.se_abs_p[mm]),
        "P0_abs": get(0),
        "P1_abs": get(1),
        "se_P1": float(run.se_abs_p[mm + 1]) if mm >= 1 else math.nan,
        "P2_abs": get(2),
        "cv_fluct": run.cv,
        "se_cv": run.se_cv,
        "cv_fluct_h0": run.cv_h0,
        "hermitian_defect": fc.hermitian_defect(),
        "parseval_defect": fc.parseval_defect(),
        "residual_power": fc.residual_power,
        "excluded_fraction": run.series.excluded_fraction,
    }


def _scan(p, name, values, ncfg, icfg, ecfg, scfg, keep_runs=False, base_context=()):
    rows, failures, runs = [], [], []
    for i, v in enumerate(np.asarray(values, dtype=float)):
        key = "omega" if name == "omega" else "temperature"
        pt = p.with_(**{key: float(v)})
        # omega is inert without drive: all such points are one system, one seed
        ctx = 0 if (key == "omega" and not p.driven) else i
        run = None
        try:
            run = driven_ensemble(pt, ncfg.with_context(*base_context, ctx), icfg, ecfg, scfg)
        except (EnsembleError, WindowError) as exc:
            failures.append({"index": i, name: float(v), "error": str(exc)})
            log.warning("scan point %s=%g failed: %s", name, v, exc)
        row = {name: float(v)}
        row.update(_scan_row(run))
        rows.append(row)
        if keep_runs:
            runs.append(run)
    meta = {"failures": failures, "seed": ncfg.master_seed, "params": p.__dict__.copy()}
    res = ScanResult(control=name, columns=rows_to_columns(rows), meta=meta)
    return (res, runs) if keep_runs else res


def qsr_scan_omega(
    p: SystemParams,
    omegas,
    ncfg: NoiseConfig,
    icfg: IntegratorConfig,
    ecfg: EnsembleConfig,
    scfg: SpectralConfig | None = None,
    *,
    threshold: float = 3.0,
) -> ScanResult:
    """Power amplitude ``eta_1`` against driving frequency at fixed ``T``.

    The report lists detected peaks (height above median > ``threshold``
    MADs) with their nearest ``eps/n`` and ``Delta/n`` comb members.
    """
    res = _scan(p, "omega", omegas, ncfg, icfg, ecfg, scfg)
    peaks = find_peaks(res["omega"], res["eta1"], threshold)
    res.report = {"peaks": comb_matches(peaks, p), "temperature": p.temperature}
    return res


def qsr_scan_temperature(
    p: SystemParams,
    temperatures,
    ncfg: NoiseConfig,
    icfg: IntegratorConfig,
    ecfg: EnsembleConfig,
    scfg: SpectralConfig | None = None,
) -> ScanResult:
    """Power amplitude ``eta_1`` against temperature at fixed ``omega``.

    The report holds the measured shape, the regime expected from
    ``eps1`` versus ``eps`` and the linear-response resonance temperature.
    """
    res = _scan(p, "T", temperatures, ncfg, icfg, ecfg, scfg)
    shape = classify_temperature_response(res["T"], res["eta1"], res["se_eta1"])
    report = {"measured": shape, "expected": expected_regime(p), "omega": p.omega}
    if p.epsilon > 0:
        report["T_qsr"] = analytic.qsr_temperature(p)
    res.report = report
    return res


def population_scan(
    p: SystemParams,
    values,
    ncfg: NoiseConfig,
    icfg: IntegratorConfig,
    ecfg: EnsembleConfig,
    scfg: SpectralConfig | None = None,
    *,
    axis: str = "omega",
    threshold: float = 3.0,
) -> ScanResult:
    """Static component ``<z_0> = P_0`` against ``omega`` or ``T``.

    Peaks of ``|z_0|`` and of ``eta_1`` (same runs) are both reported so
    their locations can be compared.
    """
    if axis not in ("omega", "T"):
        raise ValueError("axis must be 'omega' or 'T'")
    res = _scan(p, axis, values, ncfg, icfg, ecfg, scfg)
    res.report = {
        "z0_peaks": comb_matches(find_peaks(res.x, np.abs(res["z0"]), threshold), p),
        "eta1_peaks": comb_matches(find_peaks(res.x, res["eta1"], threshold), p),
    }
    return res


def heat_capacity_scan(
    p: SystemParams,
    omegas,
    temperatures,
    ncfg: NoiseConfig,
    icfg: IntegratorConfig,
    ecfg: EnsembleConfig,
    scfg: SpectralConfig | None = None,
    *,
    threshold: float = 3.0,
) -> ScanResult:
    """Asymptotic heat capacity against ``omega`` for each temperature.

    Long-format table (one row per ``(omega, T)``).  For every temperature the
    report gives the extrema of ``C_v(omega)`` and the peaks of ``|z_0|``
    from the same runs.
    """
    parts, report = [], {}
    for j, temp in enumerate(np.asarray(temperatures, dtype=float)):
        pt = p.with_(temperature=float(temp))
        res = _scan(pt, "omega", omegas, ncfg, icfg, ecfg, scfg, base_context=(1000 + j,))
        res.columns["T"] = np.full(len(res), float(temp))
        parts.append(res)
        cv = res["cv_fluct_h0"]
        report[f"{temp:g}"] = {
            "cv_maxima": find_peaks(res.x, cv, threshold),
            "cv_minima": find_peaks(res.x, -cv, threshold),
            "z0_peaks": find_peaks(res.x, np.abs(res["z0"]), threshold),
        }
    names = ["omega", "T"] + [k for k in parts[0].names if k not in ("omega", "T")]
    cols = {k: np.concatenate([r.columns[k] for r in parts]) for k in names}
    failures = [f for r in parts for f in r.meta["failures"]]
    return ScanResult("omega", cols, meta={"failures": failures, "seed": ncfg.master_seed}, report=report)


def welch_periodogram(ms: MomentSeries, window=None, nperseg: int | None = None):
    """Welch estimate of the mean-population spectrum, for plotting only."""
    from scipy import signal

    t, x, window = _series(ms, window)
    xs = x[window_slice(t, window)]
    fs = 1.0 / (t[1] - t[0])
    f, pxx = signal.welch(xs - xs.mean(), fs=fs, nperseg=nperseg or min(len(xs), 1024))
    return 2.0 * math.pi * f, pxx
