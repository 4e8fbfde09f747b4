"""Complex attenuation laws, wavenumbers and a numerical causality check.

Time is measured in units where the sound speed is one.  Angular frequency
is the reciprocal unit.  All array functions accept scalars or numpy arrays
of real frequencies and broadcast.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import integrate

from .errors import DomainError, GridResolutionError

__all__ = [
    "LawKind",
    "AttenuationLaw",
    "FrequencyGrid",
    "CausalityReport",
    "complex_power",
    "alpha_star",
    "wavenumber",
    "omega_over_k",
    "k1_hat",
    "causality_window",
    "causality_diagnostic",
    "fig1_curves",
    "LIQUID_TAU0",
    "GAS_TAU0",
    "TOL_CAUSALITY",
]

LIQUID_TAU0 = 1e-6
GAS_TAU0 = 1e-4
TOL_CAUSALITY = 1e-6
SQRT_2PI = np.sqrt(2.0 * np.pi)


class LawKind(str, Enum):
    NONE = "none"
    POWER = "power"
    CAUSAL = "causal"


@dataclass(frozen=True)
class AttenuationLaw:
    """Parameters of one attenuation law.

    ``kind="none"`` is lossless propagation.  ``"power"`` is the classical
    frequency power law, which is not causal.  ``"causal"`` is the
    relaxation-type law with a time constant ``tau0``.
    """

    kind: LawKind = LawKind.NONE
    gamma: float = 1.5
    alpha0: float = 0.0
    tau0: float = LIQUID_TAU0
    c0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LawKind(self.kind))
        if not self.c0 > 0:
            raise DomainError(f"c0 must be positive, got {self.c0}")
        if self.kind is LawKind.NONE:
            return
        if not 1.0 < self.gamma <= 2.0:
            raise DomainError(f"gamma must lie in (1, 2], got {self.gamma}")
        if not self.alpha0 >= 0:
            raise DomainError(f"alpha0 must be nonnegative, got {self.alpha0}")
        if self.kind is LawKind.CAUSAL and not self.tau0 > 0:
            raise DomainError(f"tau0 must be positive, got {self.tau0}")

    @classmethod
    def none(cls) -> "AttenuationLaw":
        return cls(LawKind.NONE)

    @classmethod
    def causal(cls, gamma: float, alpha0: float, tau0: float, c0: float = 1.0):
        return cls(LawKind.CAUSAL, gamma, alpha0, tau0, c0)

    @classmethod
    def power(cls, gamma: float, alpha0: float, c0: float = 1.0):
        return cls(LawKind.POWER, gamma, alpha0, LIQUID_TAU0, c0)

    @classmethod
    def reference(cls, gamma: float, tau0: float = LIQUID_TAU0, c0: float = 1.0):
        """Causal law whose real part starts out as ``|tau0*omega|**gamma``.

        Uses ``alpha0 = 2*c0*tau0/|cos(pi*gamma/2)|``.
        """
        a0 = 2.0 * c0 * tau0 / abs(np.cos(np.pi * gamma / 2.0))
        return cls.causal(gamma, a0, tau0, c0)

    def matched_power(self) -> "AttenuationLaw":
        """Power law with the same low-frequency damping as a reference law."""
        if self.kind is not LawKind.CAUSAL:
            raise DomainError("matched_power needs a causal law")
        return AttenuationLaw.power(self.gamma, self.tau0**self.gamma, self.c0)

    @property
    def is_lossless(self) -> bool:
        return self.kind is LawKind.NONE or self.alpha0 == 0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "gamma": float(self.gamma),
            "alpha0": float(self.alpha0),
            "tau0": float(self.tau0),
            "c0": float(self.c0),
        }

    # convenience wrappers
    def alpha_star(self, omega):
        return alpha_star(self, omega)

    def wavenumber(self, omega):
        return wavenumber(self, omega)


def _cpow(w, gamma):
    """Principal power without the domain check; zero maps to zero."""
    w = np.asarray(w, dtype=complex)
    out = np.zeros_like(w)
    nz = w != 0
    out[nz] = np.exp(gamma * (np.log(np.abs(w[nz])) + 1j * np.angle(w[nz])))
    return out


def complex_power(w, gamma: float):
    """``w**gamma`` on the plane cut along the closed negative real axis.

    Raises DomainError for zero or for points on the cut.
    """
    w = np.asarray(w, dtype=complex)
    bad = (w.imag == 0) & (w.real <= 0)
    if np.any(bad):
        raise DomainError("complex_power is undefined on the closed negative real axis")
    out = np.exp(gamma * (np.log(np.abs(w)) + 1j * np.angle(w)))
    return out[()] if out.ndim == 0 else out


def _causal_root(law: AttenuationLaw, omega):
    s = np.sqrt(1.0 + _cpow(-1j * law.tau0 * omega, law.gamma - 1.0))
    return np.where(s.real < 0, -s, s)


def alpha_star(law: AttenuationLaw, omega):
    """Complex attenuation coefficient at real angular frequency ``omega``."""
    omega = np.asarray(omega, dtype=float)
    if law.kind is LawKind.NONE:
        out = np.zeros(omega.shape, dtype=complex)
    elif law.kind is LawKind.POWER:
        a = law.alpha0 / np.cos(np.pi * law.gamma / 2.0)
        out = a * _cpow(-1j * omega, law.gamma)
    else:
        out = law.alpha0 * (-1j * omega) / (law.c0 * _causal_root(law, omega))
    return out[()] if out.ndim == 0 else out


def wavenumber(law: AttenuationLaw, omega):
    """k(omega) = i*alpha_star(omega) + omega/c0."""
    omega = np.asarray(omega, dtype=float)
    out = 1j * alpha_star(law, omega) + omega / law.c0
    return out[()] if np.ndim(out) == 0 else out


def omega_over_k(law: AttenuationLaw, omega):
    """``omega/k(omega)`` with its continuous value at the origin."""
    omega = np.asarray(omega, dtype=float)
    if law.kind is LawKind.NONE:
        out = np.full(omega.shape, law.c0, dtype=complex)
    elif law.kind is LawKind.CAUSAL:
        # omega/k = c0*s/(alpha0 + s) with s the branch-fixed root
        s = _causal_root(law, omega)
        out = law.c0 * s / (law.alpha0 + s)
    else:
        k = wavenumber(law, omega)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(omega == 0, law.c0 + 0j, omega / np.where(k == 0, 1, k))
    return out[()] if out.ndim == 0 else out


def k1_hat(law: AttenuationLaw, omega):
    """(1/sqrt(2 pi)) * (omega/(c0 k))**2, continuous at omega = 0."""
    r = omega_over_k(law, omega) / law.c0
    return r * r / SQRT_2PI


@dataclass(frozen=True)
class FrequencyGrid:
    """DFT frequencies paired with a uniform time step ``dt``."""

    n: int
    dt: float

    def __post_init__(self):
        if self.n < 2 or self.n & (self.n - 1):
            raise DomainError(f"frequency grid size must be a power of two, got {self.n}")
        if not self.dt > 0:
            raise DomainError("dt must be positive")

    @property
    def domega(self) -> float:
        return 2.0 * np.pi / (self.n * self.dt)

    @property
    def omega(self) -> np.ndarray:
        """Full symmetric layout in numpy FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, self.dt)

    @property
    def omega_half(self) -> np.ndarray:
        """Nonnegative frequencies used by real transforms."""
        return self.domega * np.arange(self.n // 2 + 1)


@dataclass(frozen=True)
class CausalityReport:
    neg_fraction: float
    passed: bool
    energy_ratio: float
    imag_ratio: float
    window: float
    n: int
    distance: float

    def to_dict(self) -> dict:
        return {
            "neg_fraction": self.neg_fraction,
            "pass": self.passed,
            "energy_ratio": self.energy_ratio,
            "imag_ratio": self.imag_ratio,
            "window": self.window,
            "n": self.n,
            "distance": self.distance,
        }


def causality_window(law: AttenuationLaw, distance: float) -> float:
    """Default half-length of the symmetric time window for the check.

    Twenty times the larger natural time scale: relaxation time plus the
    low-frequency delay for the causal law, the spreading time of the
    stable-like kernel for the power law.
    """
    d = abs(distance)
    if law.kind is LawKind.CAUSAL:
        scale = law.tau0 + law.alpha0 * d / law.c0
    elif law.kind is LawKind.POWER and law.alpha0 > 0:
        scale = (law.alpha0 * d) ** (1.0 / law.gamma)
    else:
        scale = 1.0
    return 20.0 * scale


def _continuous_energy(law: AttenuationLaw, distance: float) -> float:
    # int |K(t)|^2 dt = (1/pi) int_0^inf exp(-2 Re alpha* |x|) domega, with omega = u/scale
    scale = causality_window(law, distance) / 20.0
    f = lambda u: np.exp(-2.0 * np.real(alpha_star(law, u / scale)) * distance)
    val, _ = integrate.quad(f, 0.0, np.inf, limit=500)
    return val / (np.pi * scale)


def causality_diagnostic(
    law: AttenuationLaw,
    distance: float,
    n: int = 4096,
    window: float | None = None,
    tol: float = TOL_CAUSALITY,
) -> CausalityReport:
    """Fraction of L2 energy of ``exp(-alpha_star*|x|)`` living at negative time.

    The kernel is synthesised on the symmetric window ``[-window, window)``
    with ``n`` samples.  For lossy laws the discrete energy is compared
    against the continuous Parseval value and a GridResolutionError is
    raised when less than 99% is captured.
    """
    if distance <= 0:
        raise DomainError("distance must be positive")
    T = causality_window(law, distance) if window is None else float(window)
    fg = FrequencyGrid(n, 2.0 * T / n)
    dt = fg.dt
    spec = np.exp(-alpha_star(law, fg.omega) * distance)
    # K(t_m) = (1/2pi) sum spec * exp(-i w t_m) dw, t_m = m*dt taken periodically
    k = np.fft.fft(spec) / (n * dt)
    imag_ratio = float(np.abs(k.imag).max() / np.abs(k.real).max())
    e = k.real**2
    neg = float(e[n // 2 :].sum() / e.sum())
    if law.is_lossless:
        ratio = 1.0
    else:
        ratio = float(e.sum() * dt / _continuous_energy(law, distance))
        if ratio < 0.99:
            raise GridResolutionError(
                f"grid captures only {ratio:.3%} of the kernel energy; "
                "refine dt or enlarge the window"
            )
    return CausalityReport(neg, neg <= tol, ratio, imag_ratio, T, n, float(distance))


def fig1_curves(gamma: float = 1.5, tau0: float = LIQUID_TAU0, scaled=None) -> np.ndarray:
    """Rows ``(tau0*omega, Re alpha*, |tau0*omega|**gamma)`` for the reference causal law.

    ``scaled`` holds the dimensionless frequencies ``tau0*omega``.  The
    default is 241 log-spaced points on ``[1e-4, 1e2]``.
    """
    x = np.logspace(-4, 2, 241) if scaled is None else np.asarray(scaled, dtype=float)
    law = AttenuationLaw.reference(gamma, tau0)
    re = np.real(alpha_star(law, x / tau0))
    return np.column_stack([x, re, np.abs(x) ** gamma])
