"""Two-level system in canonical variables.

The state is the population difference ``z`` and the (unwrapped) phase
difference ``phi`` between the two localized states.  Time is measured in
units of ``1/(2 delta)``, so the Hamiltonian function reads

    H0 = -sqrt(1 - z**2) cos(phi) + (epsilon/delta) z

and the Hamilton equations are ``dz/dt = -dH0/dphi``, ``dphi/dt = dH0/dz``.
The open system adds Ohmic friction ``-gamma * dphi/dt`` and a white-noise
force ``xi`` to the ``z`` equation; the friction term is eliminated by
substituting the ``phi`` equation, which leaves an explicit system.

The scalar kernels (``_rhs``, ``_h_eff``) are compiled with numba and shared
with the stochastic integrator so that both paths run the same arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numba

__all__ = [
    "DomainError",
    "SystemParams",
    "TlsState",
    "BlochVector",
    "Z_CAP",
    "hamiltonian_h0",
    "driven_bias",
    "effective_hamiltonian",
    "bloch_map",
    "rhs_closed",
    "rhs_open",
]

#: Largest |z| used inside ``1/sqrt(1 - z**2)`` denominators.
Z_CAP = 1.0 - 1e-12


class DomainError(ValueError):
    """Raised when a state lies outside the physical domain |z| <= 1."""


@dataclass(frozen=True)
class SystemParams:
    """Physical parameters of the driven, damped two-level system.

    Attributes
    ----------
    epsilon : float
        Static bias.
    delta : float
        Tunneling rate (1 in rescaled units, but kept explicit).
    epsilon1 : float
        Driving amplitude; the bias becomes ``epsilon + epsilon1*cos(omega t)``.
    omega : float
        Driving angular frequency.
    gamma : float
        Ohmic friction coefficient.
    temperature : float
        Bath temperature (k_B = 1).
    """

    epsilon: float = 1.2
    delta: float = 1.0
    epsilon1: float = 0.0
    omega: float = 1.0
    gamma: float = 0.1
    temperature: float = 1.0

    def __post_init__(self):
        for name in ("epsilon", "delta", "epsilon1", "omega", "gamma", "temperature"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.delta <= 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.epsilon1 < 0:
            raise ValueError(f"epsilon1 must be >= 0, got {self.epsilon1}")
        if self.epsilon1 > 0 and self.omega <= 0:
            raise ValueError(f"omega must be > 0 when driven, got {self.omega}")

    @property
    def big_delta(self) -> float:
        """Half splitting ``sqrt(delta**2 + epsilon**2)``."""
        return math.hypot(self.delta, self.epsilon)

    @property
    def bias_ratio(self) -> float:
        return self.epsilon / self.delta

    @property
    def driven(self) -> bool:
        return self.epsilon1 > 0

    @property
    def beta(self) -> float:
        return math.inf if self.temperature == 0 else 1.0 / self.temperature

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class TlsState:
    """Canonical pair at time ``t``; ``phi`` is never wrapped."""

    z: float
    phi: float
    t: float = 0.0


@dataclass(frozen=True)
class BlochVector:
    sx: float
    sy: float
    sz: float

    @property
    def norm2(self) -> float:
        return self.sx * self.sx + self.sy * self.sy + self.sz * self.sz


def _s_min(z_cap: float) -> float:
    return math.sqrt((1.0 - z_cap) * (1.0 + z_cap))


def _check_z(z: float, strict: bool = False) -> None:
    if not (abs(z) < 1.0 if strict else abs(z) <= 1.0):
        bound = "< 1" if strict else "<= 1"
        raise DomainError(f"|z| must be {bound}, got z={z!r}")


@numba.njit(cache=True, nogil=True, inline="always")
def _bias(t, epsilon, epsilon1, omega):
    if epsilon1 == 0.0:
        return epsilon
    return epsilon + epsilon1 * math.cos(omega * t)


@numba.njit(cache=True, nogil=True, inline="always")
def _rhs(z, phi, bias_ratio, gamma, xi, s_min):
    # sqrt(1 - z^2) is clamped from below only where it divides.
    s = math.sqrt(max((1.0 - z) * (1.0 + z), 0.0))
    dphi = z * math.cos(phi) / max(s, s_min) + bias_ratio
    dz = -s * math.sin(phi) - gamma * dphi + xi
    return dz, dphi


@numba.njit(cache=True, nogil=True, inline="always")
def _h0(z, phi, bias_ratio):
    s = math.sqrt(max((1.0 - z) * (1.0 + z), 0.0))
    return -s * math.cos(phi) + bias_ratio * z


@numba.njit(cache=True, nogil=True, inline="always")
def _h_eff(z, phi, bias_ratio, gamma, xi, s_min):
    s = math.sqrt(max((1.0 - z) * (1.0 + z), 0.0))
    c = math.cos(phi)
    dphi = z * c / max(s, s_min) + bias_ratio
    return -s * c + bias_ratio * z + gamma * phi * dphi - xi * phi


def driven_bias(t: float, p: SystemParams) -> float:
    """Instantaneous bias ``epsilon + epsilon1*cos(omega t)``."""
    return float(_bias(t, p.epsilon, p.epsilon1, p.omega))


def hamiltonian_h0(s: TlsState, p: SystemParams, *, t_dependent: bool = False) -> float:
    """Conserved energy of the isolated system.

    With ``t_dependent=True`` the static bias is replaced by the driven bias
    at ``s.t``.
    """
    _check_z(s.z)
    eps = driven_bias(s.t, p) if t_dependent else p.epsilon
    return float(_h0(s.z, s.phi, eps / p.delta))


def effective_hamiltonian(
    s: TlsState, p: SystemParams, xi: float, *, z_cap: float = Z_CAP
) -> float:
    """Non-conserved energy including friction and noise work terms.

    ``H0 + gamma*phi*dphi/dt - xi*phi``; the bias is the driven one whenever
    ``p.epsilon1 > 0``.
    """
    _check_z(s.z, strict=True)
    bias = driven_bias(s.t, p) / p.delta
    return float(_h_eff(s.z, s.phi, bias, p.gamma, xi, _s_min(z_cap)))


def bloch_map(s: TlsState) -> BlochVector:
    """Pauli expectation values of the pure state ``(z, phi)``."""
    _check_z(s.z)
    r = math.sqrt((1.0 - s.z) * (1.0 + s.z))
    return BlochVector(sx=-r * math.cos(s.phi), sy=r * math.sin(s.phi), sz=s.z)


def rhs_closed(s: TlsState, p: SystemParams, *, z_cap: float = Z_CAP) -> tuple[float, float]:
    """``(dz/dt, dphi/dt)`` of the isolated system (driven bias if any)."""
    return rhs_open(s, p.with_(gamma=0.0), 0.0, z_cap=z_cap)


def rhs_open(
    s: TlsState, p: SystemParams, xi: float, *, z_cap: float = Z_CAP
) -> tuple[float, float]:
    """``(dz/dt, dphi/dt)`` of the damped system for a given noise value ``xi``."""
    _check_z(s.z, strict=True)
    bias = driven_bias(s.t, p) / p.delta
    dz, dphi = _rhs(s.z, s.phi, bias, p.gamma, xi, _s_min(z_cap))
    return float(dz), float(dphi)
