"""Back-projection from spherical projections on the unit sphere, and Radon records.

For detectors at unit distance the volume is recovered as

    phi(x) = 1/(8 pi^2) div  sum_k w_k n_k G_k(|n_k - x|),
    G_k(t) = (1/t) d/dt [R_k(t)/t],

where ``R_k`` is the spherical projection seen by detector ``k`` with unit
normal ``n_k`` and quadrature weight ``w_k``.  The divergence uses centred
differences with half-voxel step: each field component is evaluated on the
voxel faces normal to its axis.  The voxel value is then the net flux
through the faces, i.e. the mean of ``phi`` over the voxel.

Before differentiation the projections may be smoothed in ``t`` with a
Gaussian of width ``smoothing``.  A few hundred directions cannot resolve
sharp edges, and without the smoothing the sampled sphere integral leaves
streaks.
"""
from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import DomainError
from .forward import ProjectionSignal, Signal
from .kernels import TimeGrid

# the bundled TBB is too old for numba; skip straight to OpenMP
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__all__ = [
    "VolumeGrid",
    "RadonRecord",
    "spherical_backprojection",
    "planar_projection_recovery",
]


@dataclass
class VolumeGrid:
    """Cube ``[-extent, extent]**3`` sampled at ``m`` points per axis."""

    extent: float
    m: int
    values: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 8:
            raise DomainError(f"need at least 8 samples per axis, got {self.m}")
        if not self.extent > 0:
            raise DomainError("extent must be positive")
        self.m = int(self.m)
        if self.values is not None:
            self.values = np.asarray(self.values, dtype=float).reshape(self.m, self.m, self.m)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.extent, self.extent, self.m)

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / (self.m - 1)

    def points(self) -> np.ndarray:
        ax = self.axis
        return np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1)

    def header(self) -> dict:
        return {"format": "lossytat-volume/1", "extent": float(self.extent), "m": self.m,
                "order": "C", "axes": "x,y,z"}

    def to_binary(self, path) -> None:
        if self.values is None:
            raise DomainError("volume has no values")
        head = json.dumps(self.header(), sort_keys=True).encode()
        with Path(path).open("wb") as fh:
            fh.write(b"LTVG")
            fh.write(struct.pack("<I", len(head)))
            fh.write(head)
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "VolumeGrid":
        raw = Path(path).read_bytes()
        if raw[:4] != b"LTVG":
            raise DomainError(f"{path} is not a volume file")
        (hl,) = struct.unpack("<I", raw[4:8])
        h = json.loads(raw[8 : 8 + hl].decode())
        v = np.frombuffer(raw[8 + hl :], dtype="<f8").astype(float)
        return cls(h["extent"], h["m"], v)

    def slice_csv(self, path, axis: int = 2, index: int | None = None) -> None:
        """Write one axis-normal slice as ``u,v,value`` rows."""
        if self.values is None:
            raise DomainError("volume has no values")
        index = self.m // 2 if index is None else index
        sl = np.take(self.values, index, axis=axis)
        ax = self.axis
        U, V = np.meshgrid(ax, ax, indexing="ij")
        with Path(path).open("w") as fh:
            fh.write(f"# axis={axis} index={index} coordinate={ax[index]!r}\n")
            fh.write("u,v,value\n")
            np.savetxt(fh, np.column_stack([U.ravel(), V.ravel(), sl.ravel()]), fmt="%.17g",
                       delimiter=",")


@numba.njit(parallel=True, cache=True)
def _field_component(X, W, G, dt, ax_i, ax_j, ax_k, comp):
    ni, nj, nk = ax_i.size, ax_j.size, ax_k.size
    nt = G.shape[1]
    out = np.zeros((ni, nj, nk))
    for i in numba.prange(ni):
        for d in range(X.shape[0]):
            x0, x1, x2 = X[d, 0], X[d, 1], X[d, 2]
            wc = W[d] * X[d, comp]
            a = ax_i[i] - x0
            for j in range(nj):
                b = ax_j[j] - x1
                ab = a * a + b * b
                for k in range(nk):
                    c = ax_k[k] - x2
                    s = np.sqrt(ab + c * c) / dt
                    q = int(s)
                    if q < nt - 1:
                        f = s - q
                        out[i, j, k] += wc * (G[d, q] + f * (G[d, q + 1] - G[d, q]))
    return out


def _check_quadrature(X, W):
    if abs(W.sum() - 4.0 * np.pi) > 1e-6 * 4.0 * np.pi or np.abs(W @ X).max() > 1e-6:
        warnings.warn("detector weights do not integrate constants and linear functions on the sphere",
                      RuntimeWarning, stacklevel=3)


def _stack(projections, grid):
    if isinstance(projections, np.ndarray):
        P = np.asarray(projections, dtype=float)
    else:
        rows = []
        for p in projections:
            if isinstance(p, Signal):
                if p.grid != grid:
                    raise DomainError("projection grids differ")
                rows.append(p.values)
            else:
                rows.append(np.asarray(p, dtype=float))
        P = np.array(rows, dtype=float).reshape(len(rows), grid.n)
    if P.ndim != 2 or P.shape[1] != grid.n:
        raise DomainError(f"projections must have shape (k, {grid.n})")
    return P


def spherical_backprojection(projections, directions, weights, grid: TimeGrid, extent: float,
                             m: int = 64, smoothing: float = 0.01, variant: str = "exact",
                             R0: float = 1.0) -> VolumeGrid:
    """Reconstruct a volume from spherical projections on the unit sphere.

    Parameters
    ----------
    projections : array ``(k, n)`` or sequence of signals on ``grid``
    directions, weights : detector unit vectors ``(k, 3)`` and sphere weights ``(k,)``
    extent, m : the cube ``[-extent, extent]**3`` with ``m`` samples per axis
    smoothing : width in time of the Gaussian applied to the projections
    variant : ``"exact"`` uses ``(1/t) d/dt (R/t)`` with ``1/(8 pi^2)``.
        ``"literal"`` uses ``d/dt (t R)`` with ``-1/(2 pi)``, kept for comparison.
    """
    if R0 != 1.0:
        raise DomainError("back-projection is implemented for detectors on the unit sphere")
    vol = VolumeGrid(extent, m)
    if extent >= R0:
        raise DomainError("the volume must lie inside the detector sphere")
    X = np.ascontiguousarray(np.asarray(directions, dtype=float))
    W = np.asarray(weights, dtype=float)
    P = _stack(projections, grid)
    if X.shape != (P.shape[0], 3) or W.shape != (P.shape[0],):
        raise DomainError("directions, weights and projections disagree in length")
    _check_quadrature(X, W)
    reach = R0 + np.sqrt(3.0) * extent
    if reach > (grid.n - 2) * grid.dt:
        raise DomainError(f"time grid ends before the farthest voxel distance {reach:.3f}")
    dt = grid.dt
    t = grid.t
    if smoothing > 0:
        P = gaussian_filter1d(P, smoothing / dt, axis=1, mode="nearest")
    tt = t.copy()
    tt[0] = 1.0
    if variant == "exact":
        G = np.gradient(P / tt, dt, axis=1) / tt
        scale = 1.0 / (8.0 * np.pi**2)
    elif variant == "literal":
        G = np.gradient(P * t, dt, axis=1)
        scale = -1.0 / (2.0 * np.pi)
    else:
        raise DomainError(f"unknown variant {variant!r}")
    G[:, 0] = 0.0
    G = np.ascontiguousarray(G)
    ax = vol.axis
    h = vol.spacing
    faces = np.concatenate([ax - h / 2, [ax[-1] + h / 2]])
    div = np.diff(_field_component(X, W, G, dt, faces, ax, ax, 0), axis=0)
    div += np.diff(_field_component(X, W, G, dt, ax, faces, ax, 1), axis=1)
    div += np.diff(_field_component(X, W, G, dt, ax, ax, faces, 2), axis=2)
    vol.values = scale * div / h
    return vol


@dataclass
class RadonRecord:
    """Planar projections indexed by unit normal and signed offset."""

    normals: np.ndarray
    offsets: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.normals)

    def lookup(self, n, s):
        """Value at normal ``n`` and offset ``s``, using ``(n, s) = (-n, -s)`` if needed."""
        n = np.asarray(n, dtype=float)
        s = np.asarray(s, dtype=float)
        for sign in (1.0, -1.0):
            hit = np.nonzero(np.abs(self.normals - sign * n).max(axis=1) < 1e-12)[0]
            if hit.size:
                order = np.argsort(self.offsets)
                row = self.values[hit[0]][order]
                return np.interp(sign * s, self.offsets[order], row, left=0.0, right=0.0)
        raise DomainError("normal not present in the record")

    def to_csv(self, path) -> None:
        with Path(path).open("w") as fh:
            fh.write("nx,ny,nz,s,value\n")
            for n, row in zip(self.normals, self.values):
                block = np.column_stack([np.tile(n, (len(row), 1)), self.offsets, row])
                np.savetxt(fh, block, fmt="%.17g", delimiter=",")


def planar_projection_recovery(solutions, R0: float) -> RadonRecord:
    """Collect recovered planar projections into a Radon record.

    ``solutions`` is a sequence of ``ProjectionSignal`` whose ``detector``
    carries the plane normal.  No inversion of the Radon transform is done.
    """
    sols = list(solutions)
    if not sols:
        return RadonRecord(np.zeros((0, 3)), np.zeros(0), np.zeros((0, 0)))
    offsets = None
    normals, rows = [], []
    for sol in sols:
        if not isinstance(sol, ProjectionSignal) and not isinstance(sol, Signal):
            raise DomainError("solutions must be projection signals")
        n = np.asarray(sol.detector.get("normal"), dtype=float)
        if n.shape != (3,):
            raise DomainError("each solution needs a plane normal in its detector record")
        s = np.asarray(sol.times, dtype=float)
        if offsets is None:
            offsets = s
        elif not np.array_equal(offsets, s):
            raise DomainError("solutions use different offset grids")
        if sol.detector.get("R0", R0) != R0:
            raise DomainError("solution was recovered for another R0")
        normals.append(n)
        rows.append(sol.values)
    return RadonRecord(np.array(normals), offsets, np.array(rows))
