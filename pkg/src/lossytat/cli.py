"""Batch experiment runner.

    lossytat pipeline --config run.yaml --out runs/a --threads 1 --seed 7 --noise 0.01

Verbs run a stage together with the stages it depends on:

    causality                       (independent)
    kernel
    forward   <- kernel
    invert    <- forward
    recon     <- invert

``pipeline`` runs the stages listed in the config (all of them by default).
Every run writes ``manifest.json``.  Data files are deterministic for a
fixed config and seed.  The manifest also holds timings, so it is not.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
import traceback
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import __version__
from .attenuation import AttenuationLaw, LawKind, causality_diagnostic, causality_window, fig1_curves
from .errors import ConfigError, DomainError, GridResolutionError, QuadratureError, SolverError
from .forward import ProjectionSignal, PressureSignal, add_noise, default_duration, detector_data, projection_samples
from .inverse import VolterraInverter
from .kernels import Pulse, TimeGrid, n_line, n_planar, n_point, set_workers
from .projections import DetectorKind, DetectorSet, Phantom
from .recon import planar_projection_recovery, spherical_backprojection

__all__ = ["ExperimentConfig", "load_config", "run", "main", "STAGES"]

STAGES = ("causality", "kernel", "forward", "invert", "recon")
_NEEDS = {
    "causality": ("causality",),
    "kernel": ("kernel",),
    "forward": ("kernel", "forward"),
    "invert": ("kernel", "forward", "invert"),
    "recon": ("kernel", "forward", "invert", "recon"),
}

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


# ---------------------------------------------------------------- config


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LawBlock(_Block):
    kind: LawKind = LawKind.CAUSAL
    gamma: float = 1.5
    alpha0: float | None = None  # None: reference value 2*tau0/|cos(pi*gamma/2)|
    tau0: float = 0.02

    @field_validator("gamma")
    @classmethod
    def _gamma(cls, v):
        if not 1.0 < v <= 2.0:
            raise ValueError(f"gamma must lie in (1, 2], got {v}")
        return v

    @field_validator("tau0")
    @classmethod
    def _tau0(cls, v):
        if not v > 0:
            raise ValueError(f"tau0 must be positive, got {v}")
        return v

    @field_validator("alpha0")
    @classmethod
    def _alpha0(cls, v):
        if v is not None and v < 0:
            raise ValueError(f"alpha0 must be nonnegative, got {v}")
        return v

    def build(self) -> AttenuationLaw:
        if self.kind is LawKind.NONE:
            return AttenuationLaw.none()
        ref = AttenuationLaw.reference(self.gamma, self.tau0)
        if self.kind is LawKind.CAUSAL:
            a0 = ref.alpha0 if self.alpha0 is None else self.alpha0
            return AttenuationLaw.causal(self.gamma, a0, self.tau0)
        a0 = ref.matched_power().alpha0 if self.alpha0 is None else self.alpha0
        return AttenuationLaw.power(self.gamma, a0)


class PulseBlock(_Block):
    kind: Literal["delta", "raised_cosine"] = "delta"
    t1: float | None = None

    @model_validator(mode="after")
    def _width(self):
        if self.kind == "raised_cosine" and not (self.t1 and self.t1 > 0):
            raise ValueError("raised_cosine pulses need a positive t1")
        return self

    def build(self) -> Pulse:
        return Pulse.delta() if self.kind == "delta" else Pulse.raised_cosine(self.t1)


class GridBlock(_Block):
    n: int = 1024
    dt: float | None = None
    T: float | None = None  # None: default recording time for the phantom and law

    @field_validator("n")
    @classmethod
    def _n(cls, v):
        if v < 16:
            raise ValueError("n must be at least 16")
        return v


class BallBlock(_Block):
    center: tuple[float, float, float]
    radius: float = Field(gt=0)
    amplitude: float = 1.0


class PhantomBlock(_Block):
    balls: list[BallBlock] = Field(default_factory=lambda: [BallBlock(center=(0.2, -0.1, 0.15),
                                                                       radius=0.25)])


class DetectorBlock(_Block):
    kind: DetectorKind = DetectorKind.POINT
    R0: float = Field(1.0, gt=0)
    degree: int = 41  # point: Lebedev degree of the sphere quadrature (41 -> 590 points)
    normals: list[tuple[float, float, float]] | None = None  # planar normals, or point directions
    normal: tuple[float, float, float] = (0.0, 0.0, 1.0)  # line: axis of the lines
    count: int = Field(16, ge=1)  # line: detectors on the circle

    def build(self) -> DetectorSet:
        if self.kind is DetectorKind.POINT:
            if self.normals is None:
                return DetectorSet.sphere(self.R0, self.degree)
            d = np.asarray(self.normals, dtype=float)
            return DetectorSet(DetectorKind.POINT, self.R0, d / np.linalg.norm(d, axis=1, keepdims=True))
        if self.kind is DetectorKind.PLANAR:
            normals = self.normals or [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)]
            return DetectorSet.planes(self.R0, normals)
        return DetectorSet.circle(self.R0, self.normal, self.count)


class CausalityBlock(_Block):
    distance: float = Field(1.0, gt=0)
    n: int = 4096
    fig1: bool = False  # also write fig1.csv, the low-frequency comparison curves


class InverseBlock(_Block):
    regularizer: Literal["tikhonov", "tsvd", "none"] = "tikhonov"
    lam: float | None = Field(None, ge=0)
    lam_rel: float = Field(1e-8, gt=0)
    threshold: float = Field(1e-6, gt=0, lt=1)
    select: Literal["fixed", "discrepancy"] = "discrepancy"  # discrepancy applies only with noise


class ReconBlock(_Block):
    extent: float = Field(0.45, gt=0)
    m: int = Field(64, ge=8)
    smoothing: float = Field(0.01, ge=0)


class OutputBlock(_Block):
    directory: str = "run"
    formats: list[Literal["csv", "binary"]] = ["csv", "binary"]


class ExperimentConfig(_Block):
    stages: list[Literal["causality", "kernel", "forward", "invert", "recon"]] = list(STAGES)
    law: LawBlock = LawBlock()
    pulse: PulseBlock = PulseBlock()
    grid: GridBlock = GridBlock()
    phantom: PhantomBlock = PhantomBlock()
    detectors: DetectorBlock = DetectorBlock()
    causality: CausalityBlock = CausalityBlock()
    inverse: InverseBlock = InverseBlock()
    recon: ReconBlock = ReconBlock()
    outputs: OutputBlock = OutputBlock()
    seed: int = 0
    noise: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _references(self):
        R0 = self.detectors.R0
        for b in self.phantom.balls:
            if float(np.linalg.norm(b.center)) + b.radius >= R0:
                raise ValueError(f"phantom ball at {b.center} with radius {b.radius} "
                                 f"is not inside the detector radius {R0}")
        g = self.grid
        if g.dt is not None and g.T is not None and g.n * g.dt < g.T:
            raise ValueError(f"grid n*dt = {g.n * g.dt} does not cover T = {g.T}")
        if "recon" in self.stages:
            if self.detectors.kind is DetectorKind.POINT and R0 != 1.0:
                raise ValueError("reconstruction runs need point detectors on the unit sphere (R0 = 1)")
            if self.detectors.kind is DetectorKind.POINT and self.detectors.normals is not None:
                raise ValueError("reconstruction needs the sphere quadrature, not explicit directions")
            if self.recon.extent >= R0:
                raise ValueError("reconstruction cube must lie inside the detector sphere")
        return self

    def phantom_obj(self) -> Phantom:
        return Phantom.from_dicts([b.model_dump() for b in self.phantom.balls], R0=self.detectors.R0)

    def time_grid(self) -> TimeGrid:
        g = self.grid
        if g.dt is not None:
            return TimeGrid(g.n, g.dt)
        T = g.T
        if T is None:
            T = default_duration(self.detectors.R0, self.phantom_obj(), self.law.build())
        return TimeGrid.covering(T, g.n)

    def digest(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def load_config(path) -> ExperimentConfig:
    """Read a YAML (or JSON) file into a validated config.  Raises ConfigError."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw or {})


def parse_config(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------- stages


def _rel(a, b) -> float:
    nb = float(np.linalg.norm(b))
    return float(np.linalg.norm(np.asarray(a) - b) / nb) if nb > 0 else float(np.linalg.norm(a))


def _write_rows(path: Path, header: str, cols) -> None:
    with path.open("w") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, np.column_stack(cols), fmt="%.17g", delimiter=",")


class _Run:
    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.csv = "csv" in cfg.outputs.formats
        self.binary = "binary" in cfg.outputs.formats
        self.law = cfg.law.build()
        self.pulse = cfg.pulse.build()
        self.phantom = cfg.phantom_obj()
        self.detectors = cfg.detectors.build()
        self.grid = cfg.time_grid()
        self.summary: list[tuple[str, str, float]] = []
        self.files: list[str] = []

    def _record(self, stage, metric, value):
        self.summary.append((stage, metric, float(value)))

    def _path(self, *parts) -> Path:
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append("/".join(parts))
        return p

    # each stage returns its diagnostics dict

    def causality(self) -> dict:
        c = self.cfg.causality
        law = self.law
        if law.kind is LawKind.NONE:
            return {"skipped": "lossless law"}
        causal = law if law.kind is LawKind.CAUSAL else AttenuationLaw.causal(
            law.gamma, AttenuationLaw.reference(law.gamma, self.cfg.law.tau0).alpha0, self.cfg.law.tau0)
        power = causal.matched_power() if law.kind is LawKind.CAUSAL else law
        # both laws share the causal law's window so the comparison is like for like
        win = causality_window(causal, c.distance)
        rep = {"causal": causality_diagnostic(causal, c.distance, c.n, win).to_dict(),
               "power": causality_diagnostic(power, c.distance, c.n, win).to_dict()}
        rep["causal"]["law"] = causal.to_dict()
        rep["power"]["law"] = power.to_dict()
        with self._path("causality.json").open("w") as fh:
            json.dump(rep, fh, indent=2, sort_keys=True)
        self._record("causality", "causal_neg_fraction", rep["causal"]["neg_fraction"])
        self._record("causality", "power_neg_fraction", rep["power"]["neg_fraction"])
        if c.fig1:
            curves = fig1_curves(law.gamma, causal.tau0)
            _write_rows(self._path("fig1.csv"), "tau0_omega,re_alpha,power_law", curves.T)
        return rep

    def kernel(self) -> dict:
        kind = self.detectors.kind
        if kind is DetectorKind.POINT:
            K = n_point(self.law, self.pulse, self.grid)
        elif kind is DetectorKind.PLANAR:
            K = n_planar(self.law, self.pulse, self.grid, self.detectors.R0)
        else:
            K = n_line(self.law, self.pulse, self.grid)
        self.K = K
        if self.csv:
            K.to_csv(self._path("kernel.csv"))
        if self.binary:
            K.to_binary(self._path("kernel.bin"))
        leak = float(np.max(K.leak)) if K.leak is not None else 0.0
        self._record("kernel", "causal_violation", K.causal_violation())
        self._record("kernel", "max_leak", leak)
        return {"kind": K.kind.value, "shape": list(K.shape), "first_index": K.first_index,
                "causal_violation": K.causal_violation(), "max_leak": leak,
                "grid": self.grid.to_dict()}

    def _signals(self, values, cls, label, folder):
        for i, row in enumerate(values):
            s = cls(row, self.grid, label, self.detectors.describe(i))
            if isinstance(s, ProjectionSignal):
                s.times = self.K.source_times
            if self.csv:
                s.to_csv(self._path(folder, f"det_{i:04d}.csv"))

    def forward(self) -> dict:
        self.truth = projection_samples(self.phantom, self.detectors, self.grid)
        clean = detector_data(self.phantom, self.detectors, self.K, self.grid)
        rng = np.random.default_rng(self.cfg.seed)
        self.data = add_noise(clean, self.cfg.noise, rng)
        self._signals(self.data, PressureSignal, f"data_{self.detectors.kind.value}", "data")
        return {"detectors": len(self.detectors), "noise": self.cfg.noise, "seed": self.cfg.seed,
                "data_rms": float(np.sqrt(np.mean(clean**2)))}

    def invert(self) -> dict:
        inv = self.cfg.inverse
        noise_level = self.cfg.noise if (inv.select == "discrepancy" and self.cfg.noise > 0) else None
        est = VolterraInverter(self.K, inv.regularizer, inv.lam, inv.lam_rel, inv.threshold,
                               noise_level).fit()
        self.solution = est.transform(self.data)
        k = self.K.first_index
        errs = np.array([_rel(s[k:], t[k:]) for s, t in zip(self.solution, self.truth)])
        self._signals(self.solution, ProjectionSignal, f"projection_{self.K.kind.value}", "solutions")
        _write_rows(self._path("solutions", "diagnostics.csv"), "detector,lambda,residual_norm,rel_error",
                    [np.arange(len(errs)), est.lams_, est.residuals_, errs])
        self._record("invert", "median_rel_error", np.median(errs))
        self._record("invert", "max_rel_error", errs.max())
        return {"form": est.factor_.form, "median_rel_error": float(np.median(errs)),
                "max_rel_error": float(errs.max()), "median_lambda": float(np.median(est.lams_)),
                "median_residual": float(np.median(est.residuals_))}

    def recon(self) -> dict:
        if self.detectors.kind is DetectorKind.PLANAR:
            sols = [ProjectionSignal(row, self.grid, "projection_planar", self.detectors.describe(i),
                                     times=self.K.source_times)
                    for i, row in enumerate(self.solution)]
            rec = planar_projection_recovery(sols, self.detectors.R0)
            if self.csv:
                rec.to_csv(self._path("radon.csv"))
            return {"radon_normals": len(rec)}
        if self.detectors.kind is DetectorKind.LINE:
            return {"skipped": "circular projections are not inverted to a volume"}
        r = self.cfg.recon
        vol = spherical_backprojection(self.solution, self.detectors.directions, self.detectors.weights,
                                       self.grid, r.extent, r.m, r.smoothing)
        if self.binary:
            vol.to_binary(self._path("volume.bin"))
        if self.csv:
            for ax, name in enumerate("xyz"):
                vol.slice_csv(self._path(f"volume_slice_{name}.csv"), axis=ax)
        point = self.phantom.value(vol.points())
        partial = self.phantom.cell_average(vol.axis)
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator((vol.axis,) * 3, vol.values)
        centre = []
        for b in self.phantom.balls:
            if np.all(np.abs(b.c) <= r.extent):
                centre.append(abs(float(interp(b.c)[0]) - b.amplitude) / abs(b.amplitude))
        out = {"rel_error_point": _rel(vol.values, point), "rel_error_partial": _rel(vol.values, partial),
               "center_amplitude_error": max(centre) if centre else None, "m": r.m, "extent": r.extent}
        self._record("recon", "rel_error_point", out["rel_error_point"])
        self._record("recon", "rel_error_partial", out["rel_error_partial"])
        if centre:
            self._record("recon", "center_amplitude_error", out["center_amplitude_error"])
        return out


def _versions() -> dict:
    import numba
    import pydantic
    import scipy
    import sklearn

    return {"lossytat": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "sklearn": sklearn.__version__,
            "pydantic": pydantic.__version__}


def _classify(exc: BaseException) -> tuple[str, int]:
    if isinstance(exc, (GridResolutionError, QuadratureError, SolverError)):
        return "numerical_guard", EXIT_NUMERIC
    if isinstance(exc, (ConfigError, DomainError)):
        return "config", EXIT_CONFIG
    return "internal", EXIT_FAIL


def run(cfg: ExperimentConfig, stages=None, out=None) -> tuple[Path, int]:
    """Execute ``stages`` (default: the config's list) and write the run directory.

    Returns the directory and an exit code.  Failures are recorded in the
    manifest rather than raised.
    """
    wanted = cfg.stages if stages is None else list(stages)
    todo = [s for s in STAGES if any(s in _NEEDS[w] for w in wanted)]
    out = Path(cfg.outputs.directory if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config": cfg.model_dump(mode="json"), "config_hash": cfg.digest(),
                "versions": _versions(), "stages": [], "errors": [], "files": []}
    code = EXIT_OK
    try:
        runner = _Run(cfg, out)
        manifest["grid"] = runner.grid.to_dict()
        manifest["law"] = runner.law.to_dict()
        manifest["phantom"] = runner.phantom.to_dicts()
        for stage in todo:
            t0 = time.perf_counter()
            try:
                diag = getattr(runner, stage)()
            except Exception as exc:  # recorded, then the run stops
                kind, code = _classify(exc)
                manifest["errors"].append({"stage": stage, "kind": kind, "type": type(exc).__name__,
                                           "message": str(exc),
                                           "traceback": traceback.format_exc(limit=4)})
                break
            manifest["stages"].append({"name": stage, "seconds": time.perf_counter() - t0,
                                       "diagnostics": diag})
        if any(st != "causality" for st, _, _ in runner.summary):
            with runner._path("summary.csv").open("w") as fh:
                fh.write("stage,metric,value\n")
                for st, m, v in runner.summary:
                    fh.write(f"{st},{m},{v!r}\n")
        manifest["files"] = sorted(set(runner.files))
    except Exception as exc:
        kind, code = _classify(exc)
        manifest["errors"].append({"stage": "setup", "kind": kind, "type": type(exc).__name__,
                                   "message": str(exc)})
    with (out / "manifest.json").open("w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return out, code


# ---------------------------------------------------------------- entry point


def _limit_threads(n: int):
    import numba
    from threadpoolctl import threadpool_limits

    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    set_workers(n)
    return threadpool_limits(n)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lossytat", description="Thermoacoustic experiments in lossy media.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ("causality", "kernel", "forward", "invert", "recon", "pipeline"):
        s = sub.add_parser(verb)
        s.add_argument("--config", required=True, type=Path, help="YAML or JSON config file")
        s.add_argument("--out", type=Path, help="run directory (overrides outputs.directory)")
        s.add_argument("--threads", type=int, help="cap on worker threads")
        s.add_argument("--seed", type=int, help="noise seed (overrides config)")
        s.add_argument("--noise", type=float, help="relative noise level (overrides config)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        upd = {k: v for k, v in (("seed", args.seed), ("noise", args.noise)) if v is not None}
        if upd:
            cfg = parse_config({**cfg.model_dump(mode="json"), **upd})
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    stages = None if args.verb == "pipeline" else [args.verb]
    if args.threads:
        with _limit_threads(args.threads):
            out, code = run(cfg, stages, args.out)
    else:
        out, code = run(cfg, stages, args.out)
    if code:
        err = json.loads((out / "manifest.json").read_text())["errors"]
        for e in err:
            print(f"{e['stage']}: {e['kind']}: {e['message']}", file=sys.stderr)
    else:
        print(out / "manifest.json")
    return code


if __name__ == "__main__":
    sys.exit(main())
