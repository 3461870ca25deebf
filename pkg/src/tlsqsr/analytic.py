"""Closed-form equilibrium and linear-response references.

Quantum results follow from the two eigenvalues ``E0 +/- Delta`` of the
two-level Hamiltonian.  Classical results treat ``(z, phi)`` as canonical
coordinates on ``[-1, 1] x [0, 2 pi)`` with Boltzmann weight ``exp(-beta H0)``;
that measure is the uniform measure on the Bloch sphere, which is what the
Langevin dynamics samples at long times.

Sign convention: the equilibrium Bloch vector is anti-aligned with the
field ``(delta, epsilon)`` so that ``delta <sx> + epsilon <sz> = -Delta
tanh(beta Delta)``, the thermal energy.  Magnitudes are exposed separately
for comparison with tables that print them unsigned.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

from scipy import integrate, optimize

from .model import SystemParams, _h0

__all__ = [
    "QuadratureError",
    "ThermoReference",
    "LinearResponse",
    "QSR_ROOT",
    "quantum_partition",
    "log_partition",
    "thermal_averages",
    "schottky_cv",
    "entropy",
    "critical_temperature",
    "schottky_peak_temperature",
    "classical_partition",
    "classical_partition_quadrature",
    "classical_average",
    "classical_z_average",
    "coherence_factor_ref",
    "linear_response_p1",
    "qsr_temperature",
    "linear_response_peak_temperature",
    "LR_PEAK_ROOT",
    "classical_energy",
    "classical_heat_capacity",
    "classical_coherence",
]


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message: str, abserr: float):
        super().__init__(f"{message} (estimated abs. error {abserr:.3e})")
        self.abserr = abserr


def _solve_x_tanh_x() -> float:
    return optimize.brentq(lambda x: x * math.tanh(x) - 1.0, 1.0, 2.0, xtol=1e-15, rtol=1e-15)


#: Root of ``x tanh x = 1``.  Locates both the Schottky maximum (in beta*Delta)
#: and the linear-response resonance (in beta*epsilon).
QSR_ROOT = _solve_x_tanh_x()


@dataclass(frozen=True)
class ThermoReference:
    beta: float
    z_avg: float
    sigmax_avg: float
    coherence_factor: float
    energy_avg: float
    entropy: float
    heat_capacity: float
    e0: float = 0.0

    @property
    def z_magnitude(self) -> float:
        return abs(self.z_avg)

    @property
    def sigmax_magnitude(self) -> float:
        return abs(self.sigmax_avg)


@dataclass(frozen=True)
class LinearResponse:
    p1: complex
    lam: float
    omega_c: float
    f_value: float
    regime: dict

    @property
    def in_regime(self) -> bool:
        return all(self.regime.values())


def _tanh_x(beta: float, energy: float) -> tuple[float, float]:
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    x = beta * energy
    return x, math.tanh(x)


def _sech2_times_x2(x: float) -> float:
    # x^2 sech^2 x without overflow for large x
    ax = abs(x)
    if ax == math.inf:
        return 0.0
    e = math.exp(-2.0 * ax)
    return 4.0 * ax * ax * e / (1.0 + e) ** 2


def quantum_partition(beta: float, p: SystemParams) -> float:
    """``Z = 2 cosh(beta Delta)``."""
    _tanh_x(beta, 0.0)
    return 2.0 * math.cosh(beta * p.big_delta)


def log_partition(beta: float, p: SystemParams, e0: float = 0.0) -> float:
    """``ln[2 exp(-beta e0) cosh(beta Delta)]``, evaluated stably."""
    x, _ = _tanh_x(beta, p.big_delta)
    return -beta * e0 + x + math.log1p(math.exp(-2.0 * x))


def schottky_cv(beta: float, p: SystemParams) -> float:
    """Two-level heat capacity ``(beta Delta)^2 sech^2(beta Delta)``."""
    x, _ = _tanh_x(beta, p.big_delta)
    return _sech2_times_x2(x)


def entropy(beta: float, p: SystemParams, e0: float = 0.0) -> float:
    """Canonical entropy ``ln Z + beta U`` of the two-level system.

    Independent of ``e0``; ``T dS/dT`` equals :func:`schottky_cv`.
    ``ln Z`` itself is :func:`log_partition`.
    """
    x, th = _tanh_x(beta, p.big_delta)
    energy = e0 - p.big_delta * th
    if math.isinf(x):
        return 0.0
    return log_partition(beta, p, e0) + beta * energy


def coherence_factor_ref(beta: float, p: SystemParams) -> float:
    """Thermal ``<cos phi>`` deduced from ``<z>`` and ``<sx>``."""
    _, th = _tanh_x(beta, p.big_delta)
    d = p.big_delta
    return (p.delta / d) * th / math.sqrt(1.0 - (p.epsilon / d * th) ** 2)


def thermal_averages(beta: float, p: SystemParams, e0: float = 0.0) -> ThermoReference:
    """Quantum canonical averages at inverse temperature ``beta``."""
    _, th = _tanh_x(beta, p.big_delta)
    d = p.big_delta
    return ThermoReference(
        beta=beta,
        z_avg=-(p.epsilon / d) * th,
        sigmax_avg=-(p.delta / d) * th,
        coherence_factor=coherence_factor_ref(beta, p),
        energy_avg=e0 - d * th,
        entropy=entropy(beta, p, e0),
        heat_capacity=schottky_cv(beta, p),
        e0=e0,
    )


def critical_temperature(p: SystemParams) -> float:
    """Rule-of-thumb location ``Delta / 1.2`` of the Schottky maximum."""
    if p.big_delta <= 0:
        raise ValueError("Delta must be > 0")
    return p.big_delta / 1.2


def schottky_peak_temperature(p: SystemParams) -> float:
    """Exact maximiser of :func:`schottky_cv` in temperature."""
    return p.big_delta / QSR_ROOT


def _classical_gap(p: SystemParams) -> float:
    return math.hypot(1.0, p.bias_ratio)


def classical_partition(beta: float, p: SystemParams) -> float:
    """``Z_c = 4 pi sinh(beta D) / (beta D)`` with ``D = sqrt(1 + (eps/delta)^2)``."""
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    x = beta * _classical_gap(p)
    return 4.0 * math.pi * math.sinh(x) / x


def _weighted_integral(F, beta, p, rtol, scale=0.0):
    # Weight is shifted by exp(-beta*D) so it never exceeds 1; ``scale`` sets
    # an absolute floor for integrands that average to ~0.
    a = p.bias_ratio
    shift = _classical_gap(p)
    epsabs = rtol * scale * 1e-2

    inner_err = [0.0]

    def inner(phi):
        val, e = integrate.quad(
            lambda z: F(z, phi) * math.exp(-beta * (_h0(z, phi, a) + shift)),
            -1.0,
            1.0,
            epsabs=epsabs / (2.0 * math.pi),
            epsrel=rtol * 1e-2,
            limit=200,
        )
        inner_err[0] = max(inner_err[0], e)
        return val

    val, err = integrate.quad(
        inner, 0.0, 2.0 * math.pi, epsabs=epsabs, epsrel=rtol * 1e-1, limit=200
    )
    # inner errors enter the outer integral scaled by the phase range
    err += 2.0 * math.pi * inner_err[0]
    if not math.isfinite(val) or err > rtol * max(abs(val), scale):
        raise QuadratureError("phase-space quadrature did not converge", err)
    return val, err, shift


def classical_partition_quadrature(beta: float, p: SystemParams, rtol: float = 1e-8) -> float:
    """``Z_c`` by direct two-dimensional quadrature."""
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    val, _, shift = _weighted_integral(lambda z, phi: 1.0, beta, p, rtol)
    return val * math.exp(beta * shift)


def classical_average(
    F: Callable[[float, float], float],
    beta: float,
    p: SystemParams,
    rtol: float = 1e-8,
) -> float:
    """Classical canonical average of ``F(z, phi)`` over the phase cylinder.

    Nested adaptive Gauss-Kronrod (phi outer, z inner).  Raises
    :class:`QuadratureError` with the achieved error estimate when the
    tolerance is not met.
    """
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    den, _, _ = _weighted_integral(lambda z, phi: 1.0, beta, p, rtol)
    num, _, _ = _weighted_integral(F, beta, p, rtol, scale=den)
    return num / den


def classical_z_average(beta: float, p: SystemParams) -> float:
    """Closed form ``<z>_c = -(a/D) L(beta D)``, with L the Langevin function."""
    d = _classical_gap(p)
    x = beta * d
    if x < 1e-4:
        lang = x / 3.0
    else:
        lang = 1.0 / math.tanh(x) - 1.0 / x
    return -(p.bias_ratio / d) * lang


def linear_response_p1(
    omega: float,
    beta: float,
    p: SystemParams,
    omega_c: float | None = None,
    *,
    much_less: float = 0.1,
    warn: bool = True,
) -> LinearResponse:
    """First Fourier coefficient of the population in linear response.

    ``P1 = (eps1/4) lam^2/(lam^2 + omega^2) beta sech^2(beta eps)`` with
    ``lam = pi Delta^2 / (2 omega_c)``.  ``omega_c`` defaults to ``10 Delta``.
    Regime conditions ``omega beta << 1``, ``eps1 beta << 1`` (ratio below
    ``much_less``) and ``eps1 < eps`` are reported and, if violated, warned.
    """
    if omega_c is None:
        omega_c = 10.0 * p.big_delta
    if omega_c <= 0:
        raise ValueError("omega_c must be > 0")
    lam = math.pi * p.big_delta**2 / (2.0 * omega_c)
    x = beta * p.epsilon
    f_value = 0.0 if math.isinf(x) else beta * (1.0 - math.tanh(x) ** 2)
    p1 = 0.25 * p.epsilon1 * lam**2 / (lam**2 + omega**2) * f_value
    regime = {
        "omega_beta": abs(omega) * beta <= much_less,
        "eps1_beta": p.epsilon1 * beta <= much_less,
        "eps1_lt_eps": p.epsilon1 < abs(p.epsilon),
    }
    if warn and not all(regime.values()):
        bad = ", ".join(k for k, ok in regime.items() if not ok)
        warnings.warn(f"linear response used outside its regime ({bad})", stacklevel=2)
    return LinearResponse(p1=complex(p1), lam=lam, omega_c=omega_c, f_value=f_value, regime=regime)


def _solve_half() -> float:
    return optimize.brentq(lambda x: x * math.tanh(x) - 0.5, 0.1, 2.0, xtol=1e-15, rtol=1e-15)


#: Root of ``x tanh x = 1/2``, where ``beta sech^2(beta eps)`` peaks in ``beta``.
LR_PEAK_ROOT = _solve_half()


def linear_response_peak_temperature(p: SystemParams) -> float:
    """Temperature maximising :func:`linear_response_p1` at fixed ``omega``.

    ``d/dbeta [beta sech^2(beta eps)] = 0`` gives ``beta eps tanh(beta eps) = 1/2``,
    which differs from the condition behind :func:`qsr_temperature`.
    """
    if p.epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {p.epsilon}")
    return p.epsilon / LR_PEAK_ROOT


def qsr_temperature(p: SystemParams) -> float:
    """Temperature maximising the linear-response ``P1``: ``eps / x*``."""
    if p.epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {p.epsilon}")
    return p.epsilon / QSR_ROOT


def classical_energy(beta: float, p: SystemParams) -> float:
    """Classical ``<H0>_c = T - D coth(beta D)``."""
    x = beta * _classical_gap(p)
    if x < 1e-4:
        return -_classical_gap(p) * x / 3.0
    return 1.0 / beta - _classical_gap(p) / math.tanh(x)


def classical_heat_capacity(beta: float, p: SystemParams) -> float:
    """Classical ``C = 1 - (x / sinh x)^2`` with ``x = beta D``."""
    x = beta * _classical_gap(p)
    if x < 1e-4:
        return x * x / 3.0
    if x > 350.0:
        return 1.0
    return 1.0 - (x / math.sinh(x)) ** 2


def classical_coherence(beta: float, p: SystemParams, rtol: float = 1e-8) -> float:
    """Classical ``<cos phi>_c`` by quadrature."""
    return classical_average(lambda z, phi: math.cos(phi), beta, p, rtol)
