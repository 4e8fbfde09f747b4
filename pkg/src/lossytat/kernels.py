"""Discretised dissipation kernels and detector kernels.

Every matrix ``K`` acts on samples ``q`` through ``p = K @ q * dt``.  Rows are
averages over the cells ``(t_i - dt, t_i]`` of the observation time.  Columns
are coefficients of a trial basis in the source time.  The basis is a box
per cell for ``m_matrix``.  The detector kernels use whatever basis makes
their unknowns plain point samples.

Columns of the lossy kernel are synthesised in the frequency domain.  The
spectrum of a cell-averaged column is summed over its DFT aliases, so the
sampled column is exact up to truncation of that alias sum.  A trigamma
tail estimate covers the remainder.  Exact zeros above the causal diagonal
are then imposed.  The energy removed there is recorded per column and
must stay below ``LEAK_TOL``.
"""
from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import polygamma

from .attenuation import (
    SQRT_2PI,
    AttenuationLaw,
    FrequencyGrid,
    alpha_star,
    omega_over_k,
    wavenumber,
)
from .errors import DomainError, GridResolutionError

__all__ = [
    "TimeGrid",
    "Pulse",
    "KernelKind",
    "KernelMatrix",
    "LEAK_TOL",
    "m_hat",
    "m_matrix",
    "convolve_pulse",
    "n_point",
    "n_planar",
    "n_line",
    "point_geometry",
    "line_geometry",
    "clear_cache",
]

LEAK_TOL = 1e-3
# columns stop summing aliases once exp(-Re alpha* t) is below e**-36
_DECAY_CUTOFF = 36.0


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i*dt`` for ``i = 0..n-1``."""

    n: int
    dt: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise DomainError(f"need at least two samples, got n={self.n}")
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "dt", float(self.dt))

    @classmethod
    def covering(cls, duration: float, n: int) -> "TimeGrid":
        return cls(n, duration / n)

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n) * self.dt

    @property
    def duration(self) -> float:
        return self.n * self.dt

    def frequency_grid(self, pad: int = 1) -> FrequencyGrid:
        return FrequencyGrid(pad * self.n, self.dt)

    def to_dict(self) -> dict:
        return {"n": self.n, "dt": self.dt}


class PulseKind(str, Enum):
    DELTA = "delta"
    RAISED_COSINE = "raised_cosine"


@dataclass(frozen=True)
class Pulse:
    """Temporal excitation profile.

    ``raised_cosine`` is ``(1 - cos(2 pi t/t1))/t1`` on ``[0, t1]``: continuous,
    nonnegative and of unit integral.
    """

    kind: PulseKind = PulseKind.DELTA
    t1: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PulseKind(self.kind))
        if self.kind is PulseKind.RAISED_COSINE and not self.t1 > 0:
            raise DomainError("raised cosine pulse needs t1 > 0")

    @classmethod
    def delta(cls) -> "Pulse":
        return cls(PulseKind.DELTA)

    @classmethod
    def raised_cosine(cls, t1: float) -> "Pulse":
        return cls(PulseKind.RAISED_COSINE, float(t1))

    @property
    def is_delta(self) -> bool:
        return self.kind is PulseKind.DELTA

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.is_delta:
            raise DomainError("the delta pulse has no pointwise values")
        inside = (t >= 0) & (t <= self.t1)
        return np.where(inside, (1.0 - np.cos(2.0 * np.pi * t / self.t1)) / self.t1, 0.0)

    def weights(self, grid: TimeGrid) -> np.ndarray:
        """Projection of the pulse onto the hat functions centred at ``t_m``.

        Convolving a signal held in the hat basis with these weights is
        exact.  The weights sum to one.
        """
        w = np.zeros(grid.n)
        if self.is_delta:
            w[0] = 1.0
            return w
        if self.t1 >= grid.duration:
            raise DomainError("pulse support exceeds the time grid")
        dt = grid.dt
        x, gw = np.polynomial.legendre.leggauss(8)
        kmax = int(np.ceil(self.t1 / dt))
        for k in range(kmax):
            a, b = k * dt, min((k + 1) * dt, self.t1)
            s = 0.5 * (b - a) * x + 0.5 * (b + a)
            f = self.value(s) * gw * 0.5 * (b - a)
            u = (s - a) / dt
            w[k] += np.sum(f * (1.0 - u))
            if k + 1 < grid.n:
                w[k + 1] += np.sum(f * u)
        return w

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "t1": float(self.t1)}


class KernelKind(str, Enum):
    M = "M"
    POINT = "point"
    PLANAR = "planar"
    LINE = "line"


@dataclass
class KernelMatrix:
    """Dense kernel on a time grid with causal support.

    ``first_index`` marks the first row and column that carry information.
    Earlier rows are zero and earlier unknowns are taken to be zero.
    """

    values: np.ndarray
    grid: TimeGrid
    kind: KernelKind = KernelKind.M
    law: AttenuationLaw = field(default_factory=AttenuationLaw.none)
    pulse: Pulse = field(default_factory=Pulse.delta)
    causal_mask: bool = True
    first_index: int = 0
    R0: float | None = None
    leak: np.ndarray | None = None

    def __post_init__(self):
        self.kind = KernelKind(self.kind)
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != self.grid.n:
            raise DomainError(f"kernel shape {v.shape} does not match grid n={self.grid.n}")
        if not np.all(np.isfinite(v)):
            raise DomainError("kernel contains non-finite values")
        self.values = v

    @property
    def shape(self):
        return self.values.shape

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def source_times(self) -> np.ndarray:
        """Argument of the unknown attached to each column."""
        s = np.arange(self.values.shape[1]) * self.dt
        if self.kind is KernelKind.PLANAR:
            return self.R0 - s
        return s

    def apply(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return self.values @ q * self.dt

    def system_matrix(self) -> np.ndarray:
        """Quadrature matrix ``K*dt`` restricted to the informative block."""
        k = self.first_index
        return self.values[k:, k:] * self.dt

    def regularization_operator(self) -> np.ndarray | None:
        """Operator ``L`` with ``K = (K L^-1) L`` and ``K L^-1`` well scaled.

        Returns the block matching ``system_matrix`` or None when the
        identity is the natural choice.
        """
        k = self.first_index
        # the line kernel's Abel factor is not stably invertible, so only the
        # point kernel gets a non-identity operator
        if self.kind is KernelKind.POINT:
            return point_geometry(self.grid)[k:, k:]
        return None

    def causal_violation(self) -> float:
        """Largest magnitude found strictly above the causal diagonal."""
        # planar column j (offset R0 - j*dt) also starts at row j
        v = self.values
        mask = np.triu(np.ones(v.shape, dtype=bool), 1)
        return float(np.abs(v[mask]).max()) if mask.any() else 0.0

    # serialisation

    def header(self) -> dict:
        return {
            "format": "lossytat-kernel/1",
            "kind": self.kind.value,
            "rows": int(self.values.shape[0]),
            "cols": int(self.values.shape[1]),
            "n": self.grid.n,
            "dt": self.grid.dt,
            "law": self.law.to_dict(),
            "pulse": self.pulse.to_dict(),
            "causal_mask": bool(self.causal_mask),
            "first_index": int(self.first_index),
            "R0": self.R0,
        }

    @classmethod
    def _from_header(cls, h: dict, values: np.ndarray) -> "KernelMatrix":
        return cls(
            values=values.reshape(h["rows"], h["cols"]),
            grid=TimeGrid(h["n"], h["dt"]),
            kind=h["kind"],
            law=AttenuationLaw(**h["law"]),
            pulse=Pulse(**h["pulse"]),
            causal_mask=h["causal_mask"],
            first_index=h["first_index"],
            R0=h["R0"],
        )

    def to_csv(self, path) -> None:
        """Row-major CSV with a JSON header line, 17 significant digits."""
        path = Path(path)
        with path.open("w") as fh:
            fh.write("# " + json.dumps(self.header(), sort_keys=True) + "\n")
            np.savetxt(fh, self.values, fmt="%.17g", delimiter=",")

    @classmethod
    def from_csv(cls, path) -> "KernelMatrix":
        path = Path(path)
        with path.open() as fh:
            first = fh.readline()
            if not first.startswith("# "):
                raise DomainError(f"{path} has no kernel header")
            h = json.loads(first[2:])
            values = np.loadtxt(fh, delimiter=",", dtype=float, ndmin=2)
        return cls._from_header(h, values)

    def to_binary(self, path) -> None:
        """Magic, header length, JSON header, then little-endian float64 data."""
        head = json.dumps(self.header(), sort_keys=True).encode()
        with Path(path).open("wb") as fh:
            fh.write(b"LTKM")
            fh.write(struct.pack("<I", len(head)))
            fh.write(head)
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "KernelMatrix":
        raw = Path(path).read_bytes()
        if raw[:4] != b"LTKM":
            raise DomainError(f"{path} is not a kernel file")
        (hl,) = struct.unpack("<I", raw[4:8])
        h = json.loads(raw[8 : 8 + hl].decode())
        values = np.frombuffer(raw[8 + hl :], dtype="<f8").astype(float)
        return cls._from_header(h, values)


def m_hat(law: AttenuationLaw, omega, tprime):
    """Fourier transform in t of the dissipation kernel at source time ``tprime``."""
    omega = np.asarray(omega, dtype=float)
    k = wavenumber(law, omega)
    return omega_over_k(law, omega) / law.c0 * np.exp(1j * k * np.abs(tprime)) / SQRT_2PI


def _check_unit_speed(law: AttenuationLaw) -> None:
    if law.c0 != 1.0:
        raise DomainError("kernels are built in units with c0 = 1")


def _column_block(cols, ctx, out, leak):
    n, nf, w0, dt = ctx["n"], ctx["nf"], ctx["w0"], ctx["dt"]
    k, rB, H, Htp, Htm, M = ctx["k"], ctx["rB"], ctx["H"], ctx["Htp"], ctx["Htm"], ctx["M"]
    decay = ctx["decay"]
    for j in cols:
        if j == 0:
            continue
        tprev = (j - 1) * dt
        # alias bands beyond mj are negligible once damped by exp(-Re alpha* t)
        mj = M
        if tprev > 0:
            hit = np.nonzero(decay[1:] * tprev > _DECAY_CUTOFF)[0]
            if hit.size:
                mj = int(hit[0])
        sl = slice(M - mj, M + mj + 1)
        kk = k[sl]
        with np.errstate(divide="ignore", invalid="ignore"):
            E = (np.exp(1j * kk * (j * dt)) - np.exp(1j * kk * tprev)) / (1j * kk * dt)
        E = np.where(kk == 0, 1.0, E)
        G = rB[sl] * E
        P = G.sum(axis=0)
        if mj == M:
            # remaining aliases follow the hat envelope of the outermost bands
            ph = np.exp(1j * w0 * (j * dt))
            with np.errstate(divide="ignore", invalid="ignore"):
                rp = np.where(np.abs(H[-1]) > 1e-300, G[-1] / (ph * H[-1]), 0.0)
                rm = np.where(np.abs(H[0]) > 1e-300, G[0] / (ph * H[0]), 0.0)
            P = P + ph * (rp * Htp + rm * Htm)
        c = np.fft.irfft(np.conj(P), nf) / dt
        e = c * c
        tot = e.sum()
        leak[j] = (e[:j].sum() + e[3 * n :].sum()) / tot if tot > 0 else 0.0
        col = c[:n].copy()
        col[:j] = 0.0
        out[:, j] = col


def _build_box(law: AttenuationLaw, n: int, dt: float, ncols: int, pad: int, max_alias: int,
               workers: int):
    if law.is_lossless:
        out = np.zeros((n, ncols))
        m = min(n, ncols)
        out[np.arange(m), np.arange(m)] = 1.0 / dt
        return out, np.zeros(ncols)
    nf = pad * n
    w0 = 2.0 * np.pi * np.arange(nf // 2 + 1) / (nf * dt)
    M = max_alias
    ms = np.arange(-M, M + 1)
    W = w0[None, :] + 2.0 * np.pi * ms[:, None] / dt
    k = wavenumber(law, W)
    r = omega_over_k(law, W) / law.c0
    with np.errstate(divide="ignore", invalid="ignore"):
        B = np.where(W == 0, 1.0, (np.exp(1j * W * dt) - 1.0) / (1j * W * dt))
        H = np.where(W == 0, 1.0, (2.0 - 2.0 * np.cos(W * dt)) / (W * dt) ** 2)
    x = w0 * dt / (2.0 * np.pi)
    sin2 = np.sin(w0 * dt / 2.0) ** 2
    ra = np.real(alpha_star(law, W))
    # weakest damping in the bands at |m|
    decay = np.minimum(ra[M:].min(axis=1), ra[M::-1].min(axis=1))
    ctx = dict(
        n=n, nf=nf, w0=w0, dt=dt, k=k, rB=r * B, H=H, M=M, decay=decay,
        Htp=sin2 * polygamma(1, M + 1 + x) / np.pi**2,
        Htm=sin2 * polygamma(1, M + 1 - x) / np.pi**2,
    )
    out = np.zeros((n, ncols))
    leak = np.zeros(ncols)
    cols = np.arange(ncols)
    if workers <= 1:
        _column_block(cols, ctx, out, leak)
    else:
        chunks = np.array_split(cols, 4 * workers)
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(lambda c: _column_block(c, ctx, out, leak), chunks))
    return out, leak


@lru_cache(maxsize=4)
def _cached_box(law, n, dt, ncols, pad, max_alias):
    out, leak = _build_box(law, n, dt, ncols, pad, max_alias, _WORKERS[0])
    out.setflags(write=False)
    leak.setflags(write=False)
    return out, leak


_WORKERS = [1]


def set_workers(n: int) -> None:
    """Thread count used when building kernel columns."""
    _WORKERS[0] = max(1, int(n))


def clear_cache() -> None:
    _cached_box.cache_clear()


def _box(law, grid, ncols, pad=4, max_alias=32):
    _check_unit_speed(law)
    out, leak = _cached_box(law, grid.n, grid.dt, ncols, pad, max_alias)
    worst = float(leak.max()) if leak.size else 0.0
    if worst > LEAK_TOL:
        raise GridResolutionError(
            f"kernel column leaks {worst:.2e} of its energy outside the causal support"
        )
    return out, leak


def _first(law: AttenuationLaw) -> int:
    return 0 if law.is_lossless else 1


def m_matrix(law: AttenuationLaw, grid: TimeGrid, pad: int = 4, max_alias: int = 32) -> KernelMatrix:
    """Box-trial, cell-average discretisation of the dissipation kernel.

    For the lossless law this is exactly ``identity/dt``.
    """
    out, leak = _box(law, grid, grid.n + 1, pad, max_alias)
    return KernelMatrix(
        out[:, : grid.n].copy(), grid, KernelKind.M, law, Pulse.delta(),
        first_index=_first(law), leak=leak[: grid.n].copy(),
    )


def _pulse_rows(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Causal convolution along the observation-time axis."""
    out = np.zeros_like(values)
    for m in np.nonzero(weights)[0]:
        if m == 0:
            out += weights[0] * values
        else:
            out[m:] += weights[m] * values[:-m]
    return out


def convolve_pulse(M: KernelMatrix, pulse: Pulse) -> KernelMatrix:
    """Convolve every column of ``M`` in observation time with ``pulse``."""
    if pulse.is_delta:
        return KernelMatrix(M.values.copy(), M.grid, M.kind, M.law, M.pulse, M.causal_mask,
                            M.first_index, M.R0, M.leak)
    if not M.pulse.is_delta:
        raise DomainError("kernel already carries a pulse")
    w = pulse.weights(M.grid)
    return KernelMatrix(_pulse_rows(M.values, w), M.grid, M.kind, M.law, pulse, M.causal_mask,
                        M.first_index, M.R0, M.leak)


def point_geometry(grid: TimeGrid) -> np.ndarray:
    """Map samples of a spherical projection to cell averages of the lossless pressure.

    With ``F = R/(4 pi t)`` the rows are ``(F_i - F_{i-1})/dt``.  The ``t = 0``
    sample carries no information.
    """
    n, dt = grid.n, grid.dt
    t = grid.t
    inv = np.zeros(n)
    inv[1:] = 1.0 / (4.0 * np.pi * t[1:])
    S = np.zeros((n, n))
    i = np.arange(1, n)
    S[i, i] = inv[1:] / dt
    S[i[1:], i[1:] - 1] = -inv[1:-1] / dt
    return S


def n_point(law: AttenuationLaw, pulse: Pulse, grid: TimeGrid, pad: int = 4,
            max_alias: int = 32) -> KernelMatrix:
    """Kernel taking spherical-projection samples to point-detector pressure."""
    box, leak = _box(law, grid, grid.n + 1, pad, max_alias)
    t = grid.t
    inv = np.zeros(grid.n)
    inv[1:] = 1.0 / (4.0 * np.pi * t[1:] * grid.dt)
    # box-trial columns differenced in source time give the t' derivative
    vals = (box[:, : grid.n] - box[:, 1:]) * inv[None, :]
    vals[:, 0] = 0.0
    if not pulse.is_delta:
        vals = _pulse_rows(vals, pulse.weights(grid))
    return KernelMatrix(vals, grid, KernelKind.POINT, law, pulse, first_index=1,
                        leak=leak[: grid.n].copy())


def n_planar(law: AttenuationLaw, pulse: Pulse, grid: TimeGrid, R0: float, pad: int = 4,
             max_alias: int = 32) -> KernelMatrix:
    """Kernel taking planar projections to plane-integrated pressure.

    Column ``j`` multiplies the projection at signed offset ``R0 - j*dt``.
    The sample at offset ``R0`` is assumed to vanish.
    """
    if not R0 > 0:
        raise DomainError("R0 must be positive")
    if grid.duration < R0:
        raise DomainError(f"grid must cover [0, R0]; duration {grid.duration} < {R0}")
    box, leak = _box(law, grid, grid.n + 1, pad, max_alias)
    # hat trial = mean of the two adjacent box trials
    vals = 0.25 * (box[:, : grid.n] + box[:, 1:])
    if not pulse.is_delta:
        vals = _pulse_rows(vals, pulse.weights(grid))
    return KernelMatrix(vals, grid, KernelKind.PLANAR, law, pulse, first_index=_first(law),
                        R0=float(R0), leak=leak[: grid.n].copy())


def _abel_hat_table(s: np.ndarray, knots: np.ndarray, dt: float) -> np.ndarray:
    """``H[i, j] = int_0^s_i hat_j(u)/sqrt(s_i^2 - u^2) du`` in closed form."""
    S = s[:, None]
    pos = S > 0
    Ssafe = np.where(pos, S, 1.0)

    def prim(u, a, b):
        # antiderivative of (a + b u)/sqrt(S^2 - u^2) at u clipped to [0, S]
        uc = np.clip(u, 0.0, Ssafe)
        return a * np.arcsin(uc / Ssafe) - b * np.sqrt(np.maximum(Ssafe**2 - uc**2, 0.0))

    tj = knots[None, :]
    lo, mid, hi = tj - dt, tj, tj + dt
    rise = prim(mid, -lo / dt, 1.0 / dt) - prim(lo, -lo / dt, 1.0 / dt)
    fall = prim(hi, hi / dt, -1.0 / dt) - prim(mid, hi / dt, -1.0 / dt)
    return np.where(pos, rise + fall, 0.0)


def line_geometry(grid: TimeGrid) -> np.ndarray:
    """Map hat-basis circular projections to cell averages of the line-integrated pressure.

    The line-integrated lossless pressure is ``(1/2 pi) d/ds`` of the Abel-type
    integral of the circular projection.  Cell averages of a derivative are
    differences of the integral, evaluated exactly for each hat.
    """
    n, dt = grid.n, grid.dt
    knots = grid.t
    s = np.arange(-1, n) * dt
    Htab = _abel_hat_table(s, knots, dt)
    A = (Htab[1:] - Htab[:-1]) / (2.0 * np.pi * dt)
    A[0] = 0.0
    return np.tril(A)


def n_line(law: AttenuationLaw, pulse: Pulse, grid: TimeGrid, pad: int = 4,
           max_alias: int = 32) -> KernelMatrix:
    """Kernel taking circular projections to line-integrated pressure."""
    box, leak = _box(law, grid, grid.n + 1, pad, max_alias)
    A = line_geometry(grid)
    vals = box[:, : grid.n] @ A
    if not pulse.is_delta:
        vals = _pulse_rows(vals, pulse.weights(grid))
    return KernelMatrix(vals, grid, KernelKind.LINE, law, pulse, first_index=1,
                        leak=leak[: grid.n].copy())
