"""Regularised solution of the discrete causal (Volterra) systems.

The system is ``A q = p`` with ``A = K*dt`` on the informative block of the
kernel.  Tikhonov regularisation penalises ``||L q||``.  ``L`` is the
kernel's own regularisation operator when it has one ("general" form),
otherwise the identity ("standard" form).  The point-detector kernel
factors as ``K = K' L`` with a smooth ``K'`` and a differencing ``L``.
Penalising ``L q`` then damps only the smoothing part and leaves the
exactly known differencing alone.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .attenuation import AttenuationLaw
from .errors import DomainError, SolverError
from .forward import PressureSignal, ProjectionSignal, Signal
from .kernels import KernelKind, KernelMatrix, Pulse, convolve_pulse, m_matrix

__all__ = [
    "RegKind",
    "Regularizer",
    "VolterraInverter",
    "solve_projection",
    "deattenuate",
    "discrepancy_select",
    "DEFAULT_LAMBDA_REL",
]

DEFAULT_LAMBDA_REL = 1e-8


class RegKind(str, Enum):
    TIKHONOV = "tikhonov"
    TSVD = "tsvd"
    NONE = "none"


@dataclass(frozen=True)
class Regularizer:
    """``lam`` is absolute; ``None`` means ``DEFAULT_LAMBDA_REL * s_max**2``."""

    kind: RegKind = RegKind.TIKHONOV
    lam: float | None = None
    threshold: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "kind", RegKind(self.kind))
        if self.lam is not None and not self.lam >= 0:
            raise DomainError(f"lambda must be nonnegative, got {self.lam}")
        if not 0 < self.threshold < 1:
            raise DomainError(f"threshold must lie in (0, 1), got {self.threshold}")

    @classmethod
    def tikhonov(cls, lam=None):
        return cls(RegKind.TIKHONOV, lam)

    @classmethod
    def tsvd(cls, threshold):
        return cls(RegKind.TSVD, None, threshold)

    @classmethod
    def none(cls):
        return cls(RegKind.NONE)

    def to_dict(self):
        return {"kind": self.kind.value, "lam": self.lam, "threshold": self.threshold}


class _Factor:
    """SVD of ``A L^-1`` plus what is needed to map back to ``q``."""

    def __init__(self, kernel: KernelMatrix, form: str):
        A = kernel.system_matrix()
        L = kernel.regularization_operator() if form in ("auto", "general") else None
        if form == "general" and L is None:
            raise DomainError(f"{kernel.kind.value} kernels have no regularisation operator")
        self.A = A
        self.L = L
        self.form = "general" if L is not None else "standard"
        B = A if L is None else solve_triangular(L.T, A.T, lower=False).T
        self.U, self.s, self.Vt = np.linalg.svd(B)
        self.first = kernel.first_index
        self.n = kernel.grid.n

    @property
    def smax(self) -> float:
        return float(self.s[0])

    def _back(self, y):
        return y if self.L is None else solve_triangular(self.L, y, lower=True)

    def filter_factors(self, reg: Regularizer, lam: float):
        s = self.s
        if reg.kind is RegKind.TSVD:
            return np.where(s >= reg.threshold * s[0], 1.0 / s, 0.0)
        return s / (s * s + lam)

    def solve(self, p, reg: Regularizer, lam: float):
        """Return ``(q, residual_norm, seminorm)`` on the informative block."""
        if reg.kind is RegKind.NONE:
            d = np.diag(self.A)
            if np.any(d == 0):
                raise SolverError("singular causal system; a regulariser is required")
            q = solve_triangular(self.A, p, lower=True)
            return q, float(np.linalg.norm(self.A @ q - p)), float(np.linalg.norm(self._lq(q)))
        c = self.U.T @ p
        y = self.Vt.T @ (self.filter_factors(reg, lam) * c)
        q = self._back(y)
        return q, float(np.linalg.norm(self.A @ q - p)), float(np.linalg.norm(y))

    def _lq(self, q):
        return q if self.L is None else self.L @ q

    def residual(self, p, lam: float) -> float:
        """Tikhonov residual from the SVD, without forming ``q``."""
        c = self.U.T @ p
        r2 = np.sum((lam * c / (self.s**2 + lam)) ** 2)
        return float(np.sqrt(r2 + max(p @ p - c @ c, 0.0)))


_FACTORS: dict = {}


def _factor(kernel: KernelMatrix, form: str) -> _Factor:
    key = (id(kernel), form)
    hit = _FACTORS.get(key)
    if hit is not None and hit[0]() is kernel:
        return hit[1]
    f = _Factor(kernel, form)
    _FACTORS[key] = (weakref.ref(kernel, lambda _, k=key: _FACTORS.pop(k, None)), f)
    return f


def _data_array(data, kernel: KernelMatrix) -> np.ndarray:
    if isinstance(data, Signal):
        if data.grid != kernel.grid:
            raise DomainError("kernel and data grids differ")
        data = data.values
    p = np.asarray(data, dtype=float)
    if p.shape != (kernel.grid.n,):
        raise DomainError(f"data of shape {p.shape} does not match kernel rows {kernel.grid.n}")
    return p


def _bisect_lambda(f: _Factor, p: np.ndarray, target: float, bracket, rtol=1e-3):
    lo, hi = np.log10(bracket[0] * f.smax**2), np.log10(bracket[1] * f.smax**2)
    r_lo = f.residual(p, 10**lo)
    if r_lo > 1.05 * target:
        raise SolverError(
            f"even the smallest lambda leaves residual {r_lo:.3e} above the target {target:.3e}"
        )
    if f.residual(p, 10**hi) <= target:
        return 10**hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r = f.residual(p, 10**mid)
        if abs(r - target) <= rtol * target:
            return 10**mid
        if r > target:
            hi = mid
        else:
            lo = mid
    return 10 ** (0.5 * (lo + hi))


def discrepancy_select(kernel: KernelMatrix, data, noise_level: float, form: str = "auto",
                       bracket=(1e-20, 1e4)) -> Regularizer:
    """Tikhonov parameter whose residual equals ``noise_level * ||data||``.

    ``bracket`` is relative to the squared largest singular value.  A zero
    noise level returns the bottom of the bracket.
    """
    if not 0 <= noise_level:
        raise DomainError("noise level must be nonnegative")
    f = _factor(kernel, form)
    p = _data_array(data, kernel)[f.first :]
    if noise_level == 0:
        return Regularizer.tikhonov(bracket[0] * f.smax**2)
    target = noise_level * np.linalg.norm(p)
    return Regularizer.tikhonov(_bisect_lambda(f, p, target, bracket))


def _resolve_lam(reg: Regularizer, f: _Factor) -> float:
    if reg.kind is not RegKind.TIKHONOV:
        return 0.0
    return DEFAULT_LAMBDA_REL * f.smax**2 if reg.lam is None else float(reg.lam)


def solve_projection(kernel: KernelMatrix, data, reg: Regularizer | None = None,
                     form: str = "auto") -> ProjectionSignal:
    """Recover the projection samples behind detector data.

    Returns the full-length solution.  Unknowns before ``kernel.first_index``
    are zero.  ``meta`` records residual norm, penalty norm, lambda and form.
    """
    reg = Regularizer.tikhonov() if reg is None else reg
    f = _factor(kernel, form)
    p = _data_array(data, kernel)
    lam = _resolve_lam(reg, f)
    q, res, semi = f.solve(p[f.first :], reg, lam)
    out = np.zeros(kernel.values.shape[1])
    out[f.first :] = q
    meta = {"residual_norm": res, "solution_norm": float(np.linalg.norm(q)),
            "penalty_norm": semi, "lam": lam, "form": f.form, "regularizer": reg.to_dict(),
            "kernel": kernel.kind.value}
    det = data.detector if isinstance(data, Signal) else {}
    return ProjectionSignal(out, kernel.grid, f"projection_{kernel.kind.value}", det, meta,
                            kernel.source_times)


def deattenuate(data, law: AttenuationLaw, pulse: Pulse, reg: Regularizer | None = None,
                kernel: KernelMatrix | None = None) -> PressureSignal:
    """Recover the lossless ideal-pulse pressure from attenuated pressure."""
    if kernel is None:
        if not isinstance(data, Signal):
            raise DomainError("pass a Signal or an explicit kernel")
        kernel = convolve_pulse(m_matrix(law, data.grid), pulse)
    elif kernel.kind is not KernelKind.M:
        raise DomainError("deattenuation needs an M kernel")
    sol = solve_projection(kernel, data, reg, form="standard")
    det = data.detector if isinstance(data, Signal) else {}
    return PressureSignal(sol.values, kernel.grid, "deattenuated", det, sol.meta)


class VolterraInverter(BaseEstimator, TransformerMixin):
    """Batch inversion of many data rows against one kernel.

    Parameters
    ----------
    kernel : KernelMatrix
        Shared forward kernel.
    regularizer : {"tikhonov", "tsvd", "none"}
    lam : float or None
        Absolute Tikhonov parameter.  None gives ``lam_rel * s_max**2``.
    lam_rel : float
    threshold : float
        Relative singular-value cut for ``tsvd``.
    noise_level : float or None
        If set, lambda is chosen per row by the discrepancy principle.
    form : {"auto", "standard", "general"}

    ``transform`` maps data rows to projection rows.  ``inverse_transform``
    applies the forward kernel.
    """

    def __init__(self, kernel=None, regularizer="tikhonov", lam=None, lam_rel=DEFAULT_LAMBDA_REL,
                 threshold=1e-6, noise_level=None, form="auto"):
        self.kernel = kernel
        self.regularizer = regularizer
        self.lam = lam
        self.lam_rel = lam_rel
        self.threshold = threshold
        self.noise_level = noise_level
        self.form = form

    def fit(self, X=None, y=None):
        if not isinstance(self.kernel, KernelMatrix):
            raise DomainError("VolterraInverter needs a KernelMatrix")
        if self.form not in ("auto", "standard", "general"):
            raise DomainError(f"unknown form {self.form!r}")
        self.reg_ = Regularizer(self.regularizer, self.lam, self.threshold)
        self.factor_ = _Factor(self.kernel, self.form)
        self.n_features_in_ = self.kernel.grid.n
        if self.reg_.kind is RegKind.TIKHONOV:
            self.lam_ = self.lam if self.lam is not None else self.lam_rel * self.factor_.smax**2
        else:
            self.lam_ = 0.0
        return self

    def _rows(self, X):
        X = check_array(X, ensure_2d=False, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features_in_:
            raise DomainError(f"rows have {X.shape[1]} samples, kernel expects {self.n_features_in_}")
        return X

    def transform(self, X):
        check_is_fitted(self, "factor_")
        X = self._rows(X)
        f = self.factor_
        out = np.zeros((X.shape[0], self.kernel.values.shape[1]))
        self.residuals_ = np.zeros(X.shape[0])
        self.lams_ = np.zeros(X.shape[0])
        for i, row in enumerate(X):
            p = row[f.first :]
            lam = self.lam_
            if self.noise_level is not None and self.reg_.kind is RegKind.TIKHONOV:
                if self.noise_level == 0:
                    lam = 1e-20 * f.smax**2
                else:
                    lam = _bisect_lambda(f, p, self.noise_level * np.linalg.norm(p), (1e-20, 1e4))
            q, res, _ = f.solve(p, self.reg_, lam)
            out[i, f.first :] = q
            self.residuals_[i] = res
            self.lams_[i] = lam
        return out

    def inverse_transform(self, Q):
        check_is_fitted(self, "factor_")
        Q = check_array(Q, ensure_2d=False, dtype=float)
        return Q @ self.kernel.values.T * self.kernel.dt
