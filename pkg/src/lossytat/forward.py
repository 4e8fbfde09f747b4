"""Ideal and attenuated detector data, plus a Green-function reference path."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .attenuation import AttenuationLaw, LawKind, wavenumber
from .errors import DomainError
from .kernels import (
    KernelKind,
    KernelMatrix,
    TimeGrid,
    n_line,
    n_planar,
    n_point,
)
from .projections import (
    DetectorKind,
    DetectorSet,
    Phantom,
    circular_projection,
    planar_projection,
    spherical_projection,
)

__all__ = [
    "Signal",
    "PressureSignal",
    "ProjectionSignal",
    "default_duration",
    "ideal_point_pressure",
    "attenuated_point_data",
    "attenuated_planar_data",
    "attenuated_line_data",
    "green_forward",
    "detector_data",
    "projection_samples",
    "add_noise",
]


@dataclass
class Signal:
    """Time series on a grid, with the geometry that produced it."""

    values: np.ndarray
    grid: TimeGrid
    kind: str = "pressure"
    detector: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    times: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n,):
            raise DomainError(f"signal of shape {self.values.shape} on a grid of {self.grid.n}")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("signal contains non-finite values")
        if self.times is None:
            self.times = self.grid.t

    def __len__(self):
        return self.grid.n

    def to_csv(self, path, label: str = "value") -> None:
        head = {"kind": self.kind, "grid": self.grid.to_dict(), "detector": self.detector,
                "meta": self.meta}
        with Path(path).open("w") as fh:
            fh.write("# " + json.dumps(head, sort_keys=True) + "\n")
            fh.write(f"t,{label}\n")
            np.savetxt(fh, np.column_stack([self.times, self.values]), fmt="%.17g", delimiter=",")

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        with path.open() as fh:
            head = json.loads(fh.readline()[2:])
            fh.readline()
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        g = head["grid"]
        return cls(data[:, 1], TimeGrid(g["n"], g["dt"]), head["kind"], head["detector"],
                   head["meta"], data[:, 0])


class PressureSignal(Signal):
    pass


class ProjectionSignal(Signal):
    """Recovered projection samples with solver diagnostics in ``meta``."""


def default_duration(R0: float, phantom: Phantom, law: AttenuationLaw) -> float:
    """Recording time: two crossings of the detector region plus five lag widths."""
    r = phantom.max_radius
    base = 2.0 * (R0 + r) / law.c0
    if law.kind is LawKind.CAUSAL:
        lag = law.tau0 + law.alpha0 * (R0 + r) / law.c0
    else:
        lag = 0.0
    return base + 5.0 * lag


def ideal_point_pressure(phantom: Phantom, x, grid: TimeGrid, sampling: str = "point") -> PressureSignal:
    """Lossless pressure ``d/dt [R_sp/(4 pi t)]`` at detector ``x``.

    ``sampling="point"`` evaluates it at the grid times.  ``"cell"`` returns
    exact averages over ``(t_i - dt, t_i]``, the quantity the discrete
    kernels produce.
    """
    x = np.asarray(x, dtype=float)
    t = grid.t
    if sampling == "cell":
        F = np.zeros(grid.n)
        F[1:] = spherical_projection(phantom, x, t[1:]) / (4.0 * np.pi * t[1:])
        v = np.zeros(grid.n)
        v[1:] = np.diff(F) / grid.dt
    elif sampling == "point":
        v = np.zeros(grid.n)
        for b in phantom.balls:
            d = float(np.linalg.norm(x - b.c))
            R = b.radius
            inside = t + d < R
            shell = (np.abs(d - t) < R) & ~inside
            if d > 0:
                v += b.amplitude * np.where(shell, (d - t) / (2.0 * d), 0.0)
            v += b.amplitude * inside
    else:
        raise DomainError(f"unknown sampling {sampling!r}")
    return PressureSignal(v, grid, "ideal_point", {"position": x.tolist()}, {"sampling": sampling})


def _kernel(kernel, kind, build):
    if kernel is None:
        return build()
    if kernel.kind is not kind:
        raise DomainError(f"expected a {kind.value} kernel, got {kernel.kind.value}")
    return kernel


def _check_grid(kernel: KernelMatrix, grid: TimeGrid):
    if kernel.grid != grid:
        raise DomainError("kernel and signal grids differ")


def projection_samples(phantom: Phantom, detectors: DetectorSet, grid: TimeGrid) -> np.ndarray:
    """Exact projection samples feeding each detector's kernel, shape ``(k, n)``.

    Point detectors take spherical projections at ``t_j``, planar detectors
    planar projections at offset ``R0 - t_j``, line detectors circular
    projections at radius ``t_j``.
    """
    t = grid.t
    out = np.zeros((len(detectors), grid.n))
    for i, pos in enumerate(detectors.positions):
        if detectors.kind is DetectorKind.POINT:
            out[i] = spherical_projection(phantom, pos, t)
        elif detectors.kind is DetectorKind.PLANAR:
            out[i] = planar_projection(phantom, detectors.directions[i], detectors.R0 - t)
        else:
            out[i] = circular_projection(phantom, detectors.normal, pos, t)
    return out


def attenuated_point_data(phantom, law, pulse, x, grid, kernel=None) -> PressureSignal:
    """Pressure at a point detector ``x`` under ``law`` and ``pulse``."""
    K = _kernel(kernel, KernelKind.POINT, lambda: n_point(law, pulse, grid))
    _check_grid(K, grid)
    x = np.asarray(x, dtype=float)
    q = spherical_projection(phantom, x, grid.t)
    return PressureSignal(K.apply(q), grid, "point", {"position": x.tolist()},
                          {"law": K.law.to_dict(), "pulse": K.pulse.to_dict()})


def attenuated_planar_data(phantom, law, pulse, n, R0, grid, kernel=None) -> PressureSignal:
    """Plane-integrated pressure over the plane ``{x.n = R0}``."""
    K = _kernel(kernel, KernelKind.PLANAR, lambda: n_planar(law, pulse, grid, R0))
    _check_grid(K, grid)
    if K.R0 != R0:
        raise DomainError("kernel was built for a different R0")
    n = np.asarray(n, dtype=float)
    q = planar_projection(phantom, n, R0 - grid.t)
    return PressureSignal(K.apply(q), grid, "planar", {"normal": n.tolist(), "R0": float(R0)},
                          {"law": K.law.to_dict(), "pulse": K.pulse.to_dict()})


def attenuated_line_data(phantom, law, pulse, n, x, grid, kernel=None) -> PressureSignal:
    """Pressure integrated along the line through ``x`` parallel to ``n``."""
    K = _kernel(kernel, KernelKind.LINE, lambda: n_line(law, pulse, grid))
    _check_grid(K, grid)
    n = np.asarray(n, dtype=float)
    x = np.asarray(x, dtype=float)
    q = circular_projection(phantom, n, x, grid.t)
    return PressureSignal(K.apply(q), grid, "line", {"normal": n.tolist(), "position": x.tolist()},
                          {"law": K.law.to_dict(), "pulse": K.pulse.to_dict()})


def detector_data(phantom, detectors: DetectorSet, kernel: KernelMatrix, grid: TimeGrid):
    """Attenuated data for every detector of a set, shape ``(k, n)``."""
    want = {DetectorKind.POINT: KernelKind.POINT, DetectorKind.PLANAR: KernelKind.PLANAR,
            DetectorKind.LINE: KernelKind.LINE}[detectors.kind]
    if kernel.kind is not want:
        raise DomainError(f"{detectors.kind.value} detectors need a {want.value} kernel")
    _check_grid(kernel, grid)
    Q = projection_samples(phantom, detectors, grid)
    return Q @ kernel.values.T * grid.dt


# a fixed generic orientation keeps lattice planes off the detector axes
_LATTICE_ROTATION = Rotation.from_euler("zyx", [0.3, 0.7, 1.1]).as_matrix()


def _lattice(phantom: Phantom, spacing: float):
    pts, wts = [], []
    for b in phantom.balls:
        ax = np.arange(-b.radius + spacing / 2, b.radius, spacing)
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
        inside = X**2 + Y**2 + Z**2 < b.radius**2
        p = np.stack([X[inside], Y[inside], Z[inside]], 1) @ _LATTICE_ROTATION.T + b.c
        w = np.full(len(p), spacing**3)
        # exact total mass; the raw cell count misses the boundary shell
        w *= (4.0 / 3.0) * np.pi * b.radius**3 / w.sum()
        pts.append(p)
        wts.append(b.amplitude * w)
    if not pts:
        return np.zeros((0, 3)), np.zeros(0)
    return np.concatenate(pts), np.concatenate(wts)


def _green_response(pts, wts, x, law, grid, pad, chunk=512):
    n, dt = grid.n, grid.dt
    nf = pad * n
    w0 = 2.0 * np.pi * np.arange(nf // 2 + 1) / (nf * dt)
    k = wavenumber(law, w0)
    r = np.linalg.norm(pts - np.asarray(x, dtype=float), axis=1)
    spec = np.zeros(w0.size, dtype=complex)
    for s in range(0, r.size, chunk):
        rr = r[s : s + chunk, None]
        spec += (wts[s : s + chunk, None] * np.exp(1j * k[None, :] * rr) / (4.0 * np.pi * rr)).sum(0)
    G = np.fft.irfft(np.conj(spec), nf)[:n] / dt
    # cell averages of dG/dt
    p = np.zeros(n)
    p[1:] = np.diff(G) / dt
    return p


def green_forward(phantom: Phantom, law: AttenuationLaw, x, grid: TimeGrid, spacing=None,
                  max_nodes: int = 10_000, pad: int = 4, check_refinement: bool = False) -> PressureSignal:
    """Reference pressure from a lattice of point sources and the lossy Green function.

    Each ball becomes point masses on a rotated cubic lattice.  Each mass
    radiates ``F^-1{exp(i k r)/(4 pi r)}``.  The superposition is
    differentiated in time and returned as cell averages.  Only the ideal
    pulse is supported.
    """
    if spacing is None:
        vol = sum((4.0 / 3.0) * np.pi * b.radius**3 for b in phantom.balls)
        spacing = (vol / (0.92 * max_nodes)) ** (1.0 / 3.0) if vol > 0 else 1.0
    pts, wts = _lattice(phantom, spacing)
    if len(pts) > max_nodes:
        raise DomainError(f"lattice has {len(pts)} nodes, above the budget of {max_nodes}")
    p = _green_response(pts, wts, x, law, grid, pad) if len(pts) else np.zeros(grid.n)
    meta = {"law": law.to_dict(), "spacing": float(spacing), "nodes": int(len(pts))}
    if check_refinement and len(pts):
        fine = _green_response(*_lattice(phantom, spacing / 2), x, law, grid, pad)
        change = float(np.linalg.norm(fine - p) / max(np.linalg.norm(fine), 1e-300))
        meta["refinement_change"] = change
        if change > 0.02:
            warnings.warn(f"halving the lattice spacing changes the output by {change:.1%}",
                          RuntimeWarning, stacklevel=2)
    return PressureSignal(p, grid, "green", {"position": np.asarray(x, float).tolist()}, meta)


def add_noise(values, rel: float, rng=None) -> np.ndarray:
    """Add i.i.d. Gaussian noise with standard deviation ``rel * rms(values)`` per row."""
    rng = np.random.default_rng(rng)
    values = np.asarray(values, dtype=float)
    if rel == 0:
        return values.copy()
    rms = np.sqrt(np.mean(values**2, axis=-1, keepdims=True))
    return values + rel * rms * rng.standard_normal(values.shape)
