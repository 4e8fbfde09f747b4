"""Ball-sum phantoms, their projections and detector layouts.

A phantom is a finite sum of uniform balls, so spherical, planar and line
projections have closed forms.  The circular projection needs a 1-D
quadrature.  Monte Carlo counterparts are provided as independent checks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DomainError, QuadratureError

__all__ = [
    "Ball",
    "Phantom",
    "DetectorKind",
    "DetectorSet",
    "plane_basis",
    "sphere_quadrature",
    "spherical_projection",
    "planar_projection",
    "line_integral",
    "circular_projection",
    "mc_spherical_projection",
    "mc_planar_projection",
    "mc_circular_projection",
]


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float
    amplitude: float = 1.0

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        if len(c) != 3:
            raise DomainError("ball center must be a 3-vector")
        if not self.radius > 0:
            raise DomainError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "amplitude", float(self.amplitude))

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.center)


@dataclass(frozen=True)
class Phantom:
    """Sum of uniform balls, optionally checked against a containing radius."""

    balls: tuple = ()
    R0: float | None = None

    def __post_init__(self):
        balls = tuple(b if isinstance(b, Ball) else Ball(**b) for b in self.balls)
        object.__setattr__(self, "balls", balls)
        if self.R0 is not None:
            for b in balls:
                if np.linalg.norm(b.c) + b.radius >= self.R0:
                    raise DomainError(f"ball {b} is not inside the open ball of radius {self.R0}")

    @classmethod
    def single(cls, center=(0.0, 0.0, 0.0), radius=0.25, amplitude=1.0, R0=None):
        return cls((Ball(center, radius, amplitude),), R0)

    @classmethod
    def from_dicts(cls, items, R0=None) -> "Phantom":
        return cls(tuple(Ball(**d) for d in items), R0)

    def to_dicts(self) -> list:
        return [{"center": list(b.center), "radius": b.radius, "amplitude": b.amplitude}
                for b in self.balls]

    @property
    def extent(self) -> float:
        """Radius of the smallest origin-centred ball holding the phantom."""
        return max((np.linalg.norm(b.c) + b.radius for b in self.balls), default=0.0)

    @property
    def max_radius(self) -> float:
        return max((b.radius for b in self.balls), default=0.0)

    def scaled(self, factor: float) -> "Phantom":
        return Phantom(tuple(Ball(b.center, b.radius, b.amplitude * factor) for b in self.balls),
                       self.R0)

    def value(self, points) -> np.ndarray:
        """Pointwise phantom values at ``points`` of shape ``(..., 3)``."""
        p = np.asarray(points, dtype=float)
        out = np.zeros(p.shape[:-1])
        for b in self.balls:
            out += b.amplitude * (np.linalg.norm(p - b.c, axis=-1) < b.radius)
        return out

    def cell_average(self, axis, supersample: int = 6) -> np.ndarray:
        """Mean value over the cubic voxels centred on ``axis`` x ``axis`` x ``axis``."""
        axis = np.asarray(axis, dtype=float)
        h = axis[1] - axis[0]
        P = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), -1)
        off = ((np.arange(supersample) + 0.5) / supersample - 0.5) * h
        out = np.zeros(P.shape[:-1])
        for ox in off:
            for oy in off:
                for oz in off:
                    out += self.value(P + np.array([ox, oy, oz]))
        return out / supersample**3


def _unit(v, name="vector") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv == 0:
        raise DomainError(f"{name} must be nonzero")
    if abs(nv - 1.0) > 1e-12:
        raise DomainError(f"{name} must be a unit vector, |n| = {nv}")
    return v


def plane_basis(n) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal pair spanning the plane through the origin normal to ``n``."""
    n = _unit(n, "normal")
    a = np.eye(3)[np.argmin(np.abs(n))]
    e1 = a - (a @ n) * n
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(n, e1)


def sphere_quadrature(degree: int = 41) -> tuple[np.ndarray, np.ndarray]:
    """Lebedev directions ``(k, 3)`` and weights summing to ``4 pi``.

    ``degree=41`` gives the 590-point rule.
    """
    from scipy.integrate import lebedev_rule

    x, w = lebedev_rule(degree)
    return np.ascontiguousarray(x.T), np.asarray(w)


class DetectorKind(str, Enum):
    POINT = "point"
    PLANAR = "planar"
    LINE = "line"


@dataclass(frozen=True)
class DetectorSet:
    """Detector geometry at distance ``R0`` from the origin.

    ``point``: positions ``R0*directions`` on a sphere with quadrature weights.
    ``planar``: planes ``{x : x.n = R0}`` for each unit normal.
    ``line``: lines parallel to ``normal`` through points of the circle of
    radius ``R0`` in the plane through the origin normal to ``normal``.
    """

    kind: DetectorKind
    R0: float
    directions: np.ndarray = field(default=None, repr=False)
    weights: np.ndarray = field(default=None, repr=False)
    normal: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "kind", DetectorKind(self.kind))
        if not self.R0 > 0:
            raise DomainError("R0 must be positive")
        d = np.atleast_2d(np.asarray(self.directions, dtype=float))
        if d.shape[-1] != 3:
            raise DomainError("directions must have shape (k, 3)")
        if np.abs(np.linalg.norm(d, axis=1) - 1).max() > 1e-12:
            raise DomainError("directions must be unit vectors to 1e-12")
        object.__setattr__(self, "directions", d)
        if self.weights is not None:
            object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.kind is DetectorKind.LINE:
            n = _unit(self.normal, "normal")
            if np.abs(d @ n).max() > 1e-12:
                raise DomainError("line detector directions must lie in the plane normal to n")
            object.__setattr__(self, "normal", n)

    @classmethod
    def sphere(cls, R0: float = 1.0, degree: int = 41) -> "DetectorSet":
        d, w = sphere_quadrature(degree)
        return cls(DetectorKind.POINT, R0, d, w)

    @classmethod
    def planes(cls, R0: float, normals) -> "DetectorSet":
        n = np.atleast_2d(np.asarray(normals, dtype=float))
        return cls(DetectorKind.PLANAR, R0, n / np.linalg.norm(n, axis=1, keepdims=True))

    @classmethod
    def circle(cls, R0: float, normal, count: int) -> "DetectorSet":
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        e1, e2 = plane_basis(n)
        ang = 2.0 * np.pi * np.arange(count) / count
        d = np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2
        return cls(DetectorKind.LINE, R0, d, np.full(count, 2.0 * np.pi * R0 / count), n)

    @property
    def positions(self) -> np.ndarray:
        return self.R0 * self.directions

    def __len__(self) -> int:
        return len(self.directions)

    def describe(self, i: int) -> dict:
        out = {"kind": self.kind.value, "index": int(i), "R0": float(self.R0),
               "direction": [float(v) for v in self.directions[i]]}
        if self.kind is DetectorKind.LINE:
            out["normal"] = [float(v) for v in self.normal]
            out["position"] = [float(v) for v in self.positions[i]]
        elif self.kind is DetectorKind.PLANAR:
            out["normal"] = out["direction"]
        else:
            out["position"] = [float(v) for v in self.positions[i]]
        if self.weights is not None:
            out["weight"] = float(self.weights[i])
        return out


def spherical_projection(phantom: Phantom, x, t):
    """Integral of the phantom over the sphere of radius ``t`` about ``x``."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape)
    for b in phantom.balls:
        d = float(np.linalg.norm(x - b.c))
        R = b.radius
        full = (t > 0) & (t + d <= R)
        cap = (t > 0) & (np.abs(d - t) <= R) & (R <= d + t) & ~full
        v = np.where(full, 4.0 * np.pi * t * t, 0.0)
        if d > 0:
            with np.errstate(invalid="ignore"):
                v = np.where(cap, np.pi * t * (R * R - (d - t) ** 2) / d, v)
        out = out + b.amplitude * v
    return out[()] if out.ndim == 0 else out


def planar_projection(phantom: Phantom, n, s):
    """Integral over the plane ``{y : y.n = s}``."""
    n = _unit(n, "normal")
    s = np.asarray(s, dtype=float)
    out = np.zeros(s.shape)
    for b in phantom.balls:
        out = out + b.amplitude * np.pi * np.maximum(b.radius**2 - (s - b.c @ n) ** 2, 0.0)
    return out[()] if out.ndim == 0 else out


def _check_in_plane(n, x):
    x = np.asarray(x, dtype=float)
    if np.abs(x @ n).max() > 1e-9 * max(1.0, np.abs(x).max()):
        raise DomainError("point must lie in the plane through the origin normal to n")
    return x


def line_integral(phantom: Phantom, n, x):
    """Integral of the phantom along the line ``x + R n``; ``x`` has shape ``(..., 3)``."""
    n = _unit(n, "normal")
    x = _check_in_plane(n, x)
    out = np.zeros(x.shape[:-1])
    for b in phantom.balls:
        ce = b.c - (b.c @ n) * n
        rho2 = np.sum((x - ce) ** 2, axis=-1)
        out = out + b.amplitude * 2.0 * np.sqrt(np.maximum(b.radius**2 - rho2, 0.0))
    return out[()] if out.ndim == 0 else out


def _arc_integral(t, D, R, nodes):
    """int over the circle |y - x| = t of 2 sqrt(R^2 - |y - c|^2)^+ in the plane, |x - c| = D."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape)
    if D == 0:
        inside = (t > 0) & (t < R)
        out[inside] = 2.0 * np.pi * t[inside] * 2.0 * np.sqrt(R * R - t[inside] ** 2)
        return out
    u, w = np.polynomial.legendre.leggauss(nodes)
    pos = t > 0
    kappa = np.full(t.shape, 2.0)
    kappa[pos] = (t[pos] ** 2 + D * D - R * R) / (2.0 * t[pos] * D)
    # whole circle inside the disk: smooth integrand over [0, pi]
    whole = pos & (kappa <= -1.0)
    if whole.any():
        th = 0.5 * np.pi * (u + 1.0)
        tw = t[whole][:, None]
        g = R * R - tw**2 - D * D + 2.0 * tw * D * np.cos(th)[None, :]
        out[whole] = 2.0 * tw[:, 0] * (0.5 * np.pi) * (2.0 * np.sqrt(np.maximum(g, 0)) @ w)
    # partial arc |theta| < theta0; theta = theta0 sin(v) removes the end singularities
    part = pos & (kappa > -1.0) & (kappa < 1.0)
    if part.any():
        th0 = np.arccos(kappa[part])[:, None]
        v = 0.25 * np.pi * (u + 1.0)
        th = th0 * np.sin(v)[None, :]
        tp = t[part][:, None]
        g = 2.0 * tp * D * (np.cos(th) - kappa[part][:, None])
        f = 2.0 * np.sqrt(np.maximum(g, 0.0)) * th0 * np.cos(v)[None, :]
        out[part] = 2.0 * tp[:, 0] * (0.25 * np.pi) * (f @ w)
    return out


def circular_projection(phantom: Phantom, n, x, t, nodes: int = 48, rtol: float = 1e-8):
    """Integral of the line-integrated phantom over the in-plane circle of radius ``t`` about ``x``.

    Gauss-Legendre on each arc inside a projected disk, checked against a
    rule with twice the nodes.  Raises QuadratureError if they disagree by
    more than ``rtol`` relative to the largest value.
    """
    n = _unit(n, "normal")
    x = _check_in_plane(n, x)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("radius must be nonnegative")
    a = np.zeros(t.shape)
    b = np.zeros(t.shape)
    for ball in phantom.balls:
        ce = ball.c - (ball.c @ n) * n
        D = float(np.linalg.norm(x - ce))
        a = a + ball.amplitude * _arc_integral(t, D, ball.radius, nodes)
        b = b + ball.amplitude * _arc_integral(t, D, ball.radius, 2 * nodes)
    scale = np.abs(b).max() if b.size else 0.0
    if scale > 0 and np.abs(a - b).max() > rtol * scale:
        raise QuadratureError(f"circular projection did not converge with {2 * nodes} nodes")
    return b[()] if b.ndim == 0 else b


def _stats(samples):
    samples = np.asarray(samples, dtype=float)
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(samples.size))


def _sphere_points(rng, m):
    v = rng.standard_normal((m, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def mc_spherical_projection(phantom, x, t, samples=1_000_000, rng=None):
    """Monte Carlo spherical projection; returns ``(estimate, standard error)``."""
    rng = np.random.default_rng(rng)
    y = np.asarray(x, dtype=float) + t * _sphere_points(rng, samples)
    return _stats(4.0 * np.pi * t * t * phantom.value(y))


def mc_planar_projection(phantom, n, s, samples=1_000_000, rng=None):
    """Monte Carlo over a square patch of the plane covering every ball."""
    rng = np.random.default_rng(rng)
    n = _unit(n, "normal")
    e1, e2 = plane_basis(n)
    L = phantom.extent
    if L == 0:
        return 0.0, 0.0
    uv = rng.uniform(-L, L, size=(samples, 2))
    y = s * n + uv[:, :1] * e1 + uv[:, 1:] * e2
    return _stats((2 * L) ** 2 * phantom.value(y))


def mc_circular_projection(phantom, n, x, t, samples=200_000, rng=None):
    """Monte Carlo circular projection with exact line integrals along ``n``."""
    rng = np.random.default_rng(rng)
    n = _unit(n, "normal")
    e1, e2 = plane_basis(n)
    ang = rng.uniform(0, 2.0 * np.pi, samples)
    y = np.asarray(x, dtype=float) + t * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)
    return _stats(2.0 * np.pi * t * line_integral(phantom, n, y))
