"""Experiment configuration, presets and the staged pipeline behind the CLI."""
from __future__ import annotations

import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .fileio import (read_measurements_csv, write_field_csv, write_measurements_csv,
                     write_pgm, write_table_csv)
from .forward_sim import (EDGES, SourceSpec, add_noise, measure_adjoint, measure_direct,
                          solve_incident)
from .grid_fem import NodalField, build_grid
from .linearized import (apply_F, build_context, compactness_probe, consistency_residual,
                         first_order_residual, solve_F_least_squares, weighted_norm)
from .metrics import reconstruction_metrics
from .optics_model import (PHANTOMS, OpticalCoefficients, UltrasoundShape, make_phantom,
                           make_scan_grid)
from .recon import Background, ReconConfig, run_reconstruction

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    forward_n: int = 193
    recon_n: int = 129
    allow_same_grid: bool = False
    lx: float = 5.0
    ly: float = 5.0
    phantom: str = "disk_low"
    mu_bar: float = 0.023
    mus_prime: float = 10.74
    gamma: float = 0.431
    alpha: float = 1.0
    source_edges: str = "left"
    source_strength: float = 1.0
    eta_x: float = 5.0
    eta_y: float = 2.5
    scan_x0: float = 0.5
    scan_x1: float = 4.5
    scan_y0: float = 0.5
    scan_y1: float = 4.5
    scan_n1: int = 100
    scan_n2: int = 100
    focus: str = "gaussian"
    sigma1: float = 0.1
    sigma2: float = 0.1
    measurement_mode: str = "adjoint"
    measurements: str = ""
    noise_level: float = 0.0
    noise_seed: int = 0
    max_iters: int = 40
    rel_change_tol: float = 1e-4
    relaxation: float = 1.0
    mu_min: float = 1e-4
    mu_max: float = 1.0
    smooth_data: bool = False
    cg_tol: float = 1e-10
    snapshots: int = 0
    lin_n: int = 129
    lin_bump_radius: float = 0.75
    lin_eps: str = "0.4,0.2,0.1"
    output_dir: str = "out"

    def validate(self) -> "ExperimentConfig":
        for key in ("mu_bar", "mus_prime", "gamma", "alpha", "lx", "ly", "source_strength",
                    "sigma1", "sigma2", "cg_tol", "lin_bump_radius"):
            if not getattr(self, key) > 0:
                raise ConfigError(key, "must be positive")
        for key in ("forward_n", "recon_n", "lin_n"):
            if getattr(self, key) < 3:
                raise ConfigError(key, "grids need at least 3 nodes per axis")
        for key in ("scan_n1", "scan_n2"):
            if getattr(self, key) < 3:
                raise ConfigError(key, "scan lattice needs at least 3 foci per axis")
        if (self.lx, self.ly) != (5.0, 5.0):
            raise ConfigError("lx", "the phantoms are defined on [0, 5]^2 only")
        if self.phantom not in PHANTOMS:
            raise ConfigError("phantom", f"unknown phantom {self.phantom!r}; one of {PHANTOMS}")
        if self.focus not in ("gaussian", "perfect"):
            raise ConfigError("focus", "must be 'gaussian' or 'perfect'")
        if self.measurement_mode not in ("direct", "adjoint", "both"):
            raise ConfigError("measurement_mode", "must be direct, adjoint or both")
        if any(e not in EDGES for e in self.edges()):
            raise ConfigError("source_edges", f"comma list drawn from {EDGES}")
        if self.forward_n == self.recon_n and not self.allow_same_grid:
            raise ConfigError("recon_n", "equals forward_n (inverse crime); "
                                         "set allow_same_grid to override")
        if self.noise_level < 0:
            raise ConfigError("noise_level", "must be nonnegative")
        if self.snapshots < 0:
            raise ConfigError("snapshots", "must be nonnegative")
        try:
            self.eps_values()
        except ValueError:
            raise ConfigError("lin_eps", "comma list of positive numbers") from None
        for key, fn in (("scan_x0", self.scan), ("max_iters", self.recon_config)):
            try:
                fn()
            except ValueError as exc:
                raise ConfigError(key, str(exc)) from None
        return self

    def edges(self) -> tuple[str, ...]:
        return tuple(e.strip() for e in self.source_edges.split(",") if e.strip())

    def eps_values(self) -> list[float]:
        vals = [float(v) for v in self.lin_eps.split(",")]
        if not vals or any(v <= 0 for v in vals):
            raise ValueError("lin_eps")
        return vals

    def scan(self):
        return make_scan_grid((self.scan_x0, self.scan_x1, self.scan_y0, self.scan_y1),
                              self.scan_n1, self.scan_n2, domain=(0.0, self.lx, 0.0, self.ly))

    def shape(self) -> UltrasoundShape:
        return UltrasoundShape.point() if self.focus == "perfect" else \
            UltrasoundShape(self.sigma1, self.sigma2)

    def source(self) -> SourceSpec:
        return SourceSpec(self.edges(), self.source_strength)

    def background(self) -> Background:
        return Background(self.mu_bar, self.mus_prime, self.gamma)

    def recon_config(self) -> ReconConfig:
        return ReconConfig(self.max_iters, self.rel_change_tol, self.relaxation,
                           self.mu_min, self.mu_max, self.smooth_data, self.cg_tol)


PRESETS = {
    "disk_low": dict(phantom="disk_low", max_iters=40),
    "disk_high": dict(phantom="disk_high", max_iters=70),
    "multi": dict(phantom="multi", max_iters=40),
    "elongated": dict(phantom="disk_low", sigma1=0.1, sigma2=0.3, max_iters=40),
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, text: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "bool":
            low = str(text).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return str(text).strip()
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {kind}") from None


def config_from_mapping(values: dict, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    unknown = sorted(set(values) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(unknown[0], "unknown configuration key")
    coerced = {k: v if not isinstance(v, str) else _coerce(k, v) for k, v in values.items()}
    return replace(base or ExperimentConfig(), **coerced)


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}", f"expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(key, f"duplicate key on line {n}")
        out[key] = value
    return out


def load_config(path, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    return config_from_mapping(parse_config_text(Path(path).read_text()), base)


def preset_config(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; one of {sorted(PRESETS)}")
    return config_from_mapping({**PRESETS[name], **overrides})


class Run:
    """Stateful pipeline for one experiment; artifacts land in ``cfg.output_dir``."""

    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg = cfg.validate()
        self.command = command
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.timings: dict[str, float] = {}
        self.outputs: list[str] = []
        self.metrics: dict = {}
        self.forward_grid = build_grid(cfg.forward_n, cfg.forward_n, 0.0, 0.0, cfg.lx, cfg.ly)
        self.recon_grid = build_grid(cfg.recon_n, cfg.recon_n, 0.0, 0.0, cfg.lx, cfg.ly)
        self.meas = None

    def _emit(self, path: Path):
        self.outputs.append(path.name if path.parent == self.out else
                            str(path.relative_to(self.out)))

    def _timed(self, name, fn):
        t = time.perf_counter()
        result = fn()
        self.timings[name] = round(time.perf_counter() - t, 4)
        return result

    def phantom(self) -> NodalField:
        mu = make_phantom(self.cfg.phantom, self.forward_grid, self.cfg.mu_bar)
        self._emit(write_field_csv(mu, self.out / "mu_true.csv"))
        self._emit(write_pgm(mu, self.out / "mu_true.pgm"))
        return mu

    def forward(self):
        cfg = self.cfg
        mu = self._timed("phantom", self.phantom)
        coeffs = OpticalCoefficients(mu, cfg.mus_prime, cfg.gamma)
        src, scan, shape = cfg.source(), cfg.scan(), cfg.shape()
        eta = (cfg.eta_x, cfg.eta_y)
        u = self._timed("incident", lambda: solve_incident(coeffs, src, tol=cfg.cg_tol))
        self._emit(write_field_csv(u, self.out / "u.csv"))
        self._emit(write_pgm(u, self.out / "u.pgm"))

        kw = dict(eta=eta, alpha=cfg.alpha, tol=cfg.cg_tol)
        if cfg.measurement_mode in ("adjoint", "both"):
            meas = self._timed("measure_adjoint",
                               lambda: measure_adjoint(coeffs, src, scan, shape, **kw))
        if cfg.measurement_mode in ("direct", "both"):
            direct = self._timed("measure_direct",
                                 lambda: measure_direct(coeffs, src, scan, shape, **kw))
            if cfg.measurement_mode == "both":
                self._emit(write_measurements_csv(direct, self.out / "measurements_direct.csv"))
                self.metrics["direct_adjoint_max_rel_dev"] = float(
                    np.max(np.abs(direct.values - meas.values) / np.abs(meas.values)))
            else:
                meas = direct
        self.metrics["pde_solves"] = meas.solves
        meas = add_noise(meas, cfg.noise_level, cfg.noise_seed)
        self._emit(write_measurements_csv(meas, self.out / "measurements.csv"))
        self.meas = meas
        return meas

    def reconstruct(self):
        cfg = self.cfg
        if cfg.measurements:
            self.meas = read_measurements_csv(cfg.measurements)
        elif self.meas is None:
            self.forward()
        snap_dir = self.out / "snapshots"

        def snapshot(k, mu):
            if cfg.snapshots and k % cfg.snapshots == 0:
                snap_dir.mkdir(exist_ok=True)
                self._emit(write_field_csv(mu, snap_dir / f"mu_{k:04d}.csv"))

        state = self._timed("reconstruct", lambda: run_reconstruction(
            self.meas, self.recon_grid, cfg.background(), cfg.recon_config(), snapshot))
        self._emit(write_field_csv(state.mu, self.out / "mu_recon.csv"))
        self._emit(write_pgm(state.mu, self.out / "mu_recon.pgm"))
        self._emit(write_table_csv(self.out / "history.csv", ["iteration", "relative_change"],
                                   [(k + 1, c) for k, c in enumerate(state.history)]))
        scan = self.meas.scan
        self.metrics.update(iterations=state.iteration, converged=state.converged,
                            recon_warnings=state.warnings)
        self.metrics.update(reconstruction_metrics(state.mu, cfg.phantom, cfg.mu_bar,
                                                   scan.region))
        return state

    def linearize_check(self):
        cfg = self.cfg
        grid = build_grid(cfg.lin_n, cfg.lin_n, 0.0, 0.0, cfg.lx, cfg.ly)
        U = (cfg.scan_x0, cfg.scan_x1, cfg.scan_y0, cfg.scan_y1)
        ctx = self._timed("context", lambda: build_context(
            NodalField.constant(grid, cfg.mu_bar), cfg.source(), (cfg.eta_x, cfg.eta_y),
            grid, U, cfg.mus_prime, cfg.gamma, cfg.alpha))
        mu1 = smooth_bump(grid, ((U[0] + U[1]) / 2, (U[2] + U[3]) / 2),
                          cfg.lin_bump_radius) * ctx.in_U
        eps = np.array(cfg.eps_values()) * cfg.mu_bar / mu1.max()
        res = self._timed("consistency", lambda: consistency_residual(ctx, mu1, eps))
        self._emit(write_table_csv(self.out / "residuals.csv", ["eps", "residual"],
                                   zip(eps, res)))
        probe = self._timed("compactness", lambda: compactness_probe(ctx, U=U))
        self._emit(write_table_csv(self.out / "compactness.csv", ["k", "K1", "K2"],
                                   zip(probe["k"], probe["K1"], probe["K2"])))
        m, info = self._timed("injectivity", lambda: solve_F_least_squares(ctx, apply_F(ctx, mu1)))
        self.metrics.update(
            u0_min=ctx.u_min, G0_min=ctx.g_min, residuals=res.tolist(),
            first_order_residual=first_order_residual(ctx, mu1),
            injectivity_rel_error=weighted_norm(ctx, m.values - mu1, ctx.in_U)
            / weighted_norm(ctx, mu1, ctx.in_U), injectivity_cg_info=int(info))
        return res, probe

    def manifest(self) -> dict:
        return {
            "tool": "uotomo",
            "version": __version__,
            "command": self.command,
            "config": asdict(self.cfg),
            "outputs": self.outputs,
            "metrics": self.metrics,
            "timings": self.timings,
            "platform": {"python": platform.python_version(), "numpy": np.__version__},
        }

    def write_manifest(self) -> Path:
        path = self.out / "manifest.json"
        path.write_text(json.dumps(self.manifest(), indent=2, default=_jsonable) + "\n")
        return path


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj)}")


def smooth_bump(grid, center, radius: float) -> np.ndarray:
    """cos^2 bump of unit height, C^1 and supported in a disk."""
    X, Y = grid.coordinates()
    rho = np.hypot(X - center[0], Y - center[1]) / radius
    return np.where(rho < 1, np.cos(0.5 * np.pi * rho) ** 2, 0.0)


def run_experiment(cfg: ExperimentConfig, command: str = "reconstruct") -> Run:
    """Run the stages behind ``command`` and write the manifest."""
    run = Run(cfg, command)
    if command == "phantom":
        run._timed("phantom", run.phantom)
    elif command == "forward":
        run.forward()
    elif command in ("reconstruct", "preset"):
        run.reconstruct()
    elif command == "linearize-check":
        run.linearize_check()
    else:
        raise ConfigError("command", f"unknown command {command!r}")
    run.write_manifest()
    return run
