"""Command-line driver: ``yieldvi {solve,control,verify,sensitivity,sweep}``.

Parameters come from an optional ``key = value`` file (``--config``) and
from flags; a flag wins over the file and the override is recorded in the
run manifest.  Every run writes plot-ready CSV files plus ``manifest.json``
into its output directory (``--out``, else ``$YIELDVI_OUTPUT/<subcommand>-<problem>``,
else ``runs/<subcommand>-<problem>``).

Exit codes: 0 success, 2 solver failure or failed verification, 3 invalid
configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bingham import (
    DuctProblem,
    PipeProblem,
    detect_plug,
    mosolov_exact,
    solve_duct,
    solve_radial,
)
from .control import ControlProblem, optimize
from .errors import SolverError
from .io import read_field, read_manifest, write_csv, write_field, write_history, write_manifest, write_sets
from .mesh import Grid, assemble_stiffness, build_grid, norm_v
from .sensitivity import DerivativeProbe, SolverConfig, fd_compare, lipschitz_probe, smooth_random_field
from .smoothing import KINDS, Smoothing
from .stationarity import check_strong, recover_xi
from .vi import classify_sets, continuation_solve, path_distances, smoothed_eps_u

log = logging.getLogger("yieldvi")

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3
SUBCOMMANDS = ("solve", "control", "verify", "sensitivity", "sweep")
PROBLEMS = ("identity-1d", "identity-2d", "bingham-radial", "bingham-duct")
SWEEPS = ("refine", "gamma", "threshold", "alpha")
ENV_OUTPUT = "YIELDVI_OUTPUT"


class ConfigError(ValueError):
    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


# --- field specifications ---------------------------------------------------


def _preset(name, coords, dim):
    x = coords[0]
    y = coords[1] if dim == 2 else None
    table = {
        "bump": (lambda: 8 * x * (1 - x)) if dim == 1 else (lambda: 64 * x * (1 - x) * y * (1 - y)),
        "sine": (lambda: np.sin(np.pi * x)) if dim == 1 else (lambda: np.sin(np.pi * x) * np.sin(np.pi * y)),
        "wave": (lambda: 3 * np.sin(2 * np.pi * x) + 1) if dim == 1 else (
            lambda: 3 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y) + 1),
        "ramp": (lambda: 2.4 * (1 - x)) if dim == 1 else (lambda: 2.4 * (1 - x) * np.ones_like(y)),
    }
    if name not in table:
        return None
    return np.asarray(table[name](), dtype=float)


PRESET_NAMES = ("bump", "sine", "wave", "ramp")


def resolve_field(spec: str, grid: Grid, A=None, beta: float = 1.0, kind: str = "huber-local") -> np.ndarray:
    """Evaluate a field spec.

    Accepted forms: a number (constant), a preset name (``bump``, ``sine``,
    ``wave``, ``ramp``), ``<number>*<preset>``, ``state:<spec>`` (forward
    solution for that load) or a path to a field CSV.
    """
    spec = str(spec).strip()
    if spec.startswith("state:"):
        load = resolve_field(spec[6:], grid, A, beta, kind)
        A = A if A is not None else assemble_stiffness(grid, 1.0)
        return continuation_solve(A, load, Smoothing(kind, beta, 10.0)).u
    try:
        return np.full(grid.size, float(spec))
    except ValueError:
        pass
    scale, name = 1.0, spec
    if "*" in spec:
        a, b = spec.split("*", 1)
        try:
            scale, name = float(a), b.strip()
        except ValueError as err:
            raise ValueError(f"cannot parse field spec {spec!r}") from err
    out = _preset(name, grid.coords(), grid.dim)
    if out is not None:
        return scale * out
    path = Path(spec)
    if path.is_file():
        g, values = read_field(path)
        if (g.dim, g.n) != (grid.dim, grid.n):
            raise ValueError(f"field file {spec} is on a {g.dim}D n={g.n} grid, expected {grid.dim}D n={grid.n}")
        return values
    raise ValueError(f"unknown field spec {spec!r}: not a number, preset {PRESET_NAMES} or CSV file")


def _valid_spec(spec: str) -> bool:
    spec = str(spec).strip()
    if spec.startswith("state:"):
        return _valid_spec(spec[6:])
    try:
        float(spec)
        return True
    except ValueError:
        pass
    name = spec.split("*", 1)[-1].strip()
    return name in PRESET_NAMES or Path(spec).is_file()


# --- configuration ----------------------------------------------------------


@dataclass
class RunConfig:
    subcommand: str = "solve"
    problem: str = "identity-1d"
    mu: float = 1.0
    beta: float = 1.0
    f: str = "2"
    alpha: float = 1e-2
    zd: str | None = None
    n: int = 256
    kind: str = "huber-local"
    gamma_start: float = 10.0
    gamma_stop: float = 1e8
    schedule: str | None = None
    tol: float = 1e-10
    tol_opt: float | None = None
    method: str = "gradient"
    seed: int = 0
    out: str | None = None
    radius: float = 1.0
    steps: str = "1e-1,1e-2,1e-3"
    samples: int = 20
    probes: int = 10
    sweep: str = "refine"
    refine: int = 4
    workers: int = 1
    betas: str = "0.25,0.5,1,1.5,2"
    loads: str = "0.5,1,2,3"
    alphas: str = "1e-1,1e-2,1e-3"
    dir: str | None = None
    overrides: list[str] = field(default_factory=list)

    def gammas(self) -> list[float]:
        if self.schedule:
            return [float(g) for g in self.schedule.split(",")]
        lo, hi = np.log10(self.gamma_start), np.log10(self.gamma_stop)
        gs = [float(g) for g in 10.0 ** np.arange(lo, hi + 0.5)]
        return [g for g in gs if self.beta <= 0 or self.kind != "huber-local" or self.beta - 0.5 / g > 0]

    def dim(self) -> int:
        return 2 if self.problem in ("identity-2d", "bingham-duct") else 1

    def output_dir(self) -> Path:
        if self.out:
            return Path(self.out)
        root = os.environ.get(ENV_OUTPUT, "runs")
        return Path(root) / f"{self.subcommand}-{self.problem}"

    def validate(self) -> None:
        errs = []
        if self.subcommand not in SUBCOMMANDS:
            errs.append(f"subcommand: unknown {self.subcommand!r}")
        if self.problem not in PROBLEMS:
            errs.append(f"problem: unknown preset {self.problem!r}; choose from {PROBLEMS}")
        if not self.mu > 0:
            errs.append(f"mu: must be > 0, got {self.mu}")
        if not self.beta >= 0:
            errs.append(f"beta: must be >= 0, got {self.beta}")
        if not self.alpha > 0:
            errs.append(f"alpha: must be > 0, got {self.alpha}")
        if self.n < 2:
            errs.append(f"n: must be >= 2, got {self.n}")
        if self.kind not in KINDS:
            errs.append(f"kind: unknown {self.kind!r}; choose from {KINDS}")
        if not self.tol > 0:
            errs.append(f"tol: must be > 0, got {self.tol}")
        if self.tol_opt is not None and not self.tol_opt > 0:
            errs.append(f"tol-opt: must be > 0, got {self.tol_opt}")
        if self.method not in ("gradient", "lbfgs"):
            errs.append(f"method: must be gradient or lbfgs, got {self.method!r}")
        if not self.radius > 0:
            errs.append(f"radius: must be > 0, got {self.radius}")
        if self.samples < 1:
            errs.append(f"samples: must be >= 1, got {self.samples}")
        if self.refine < 2:
            errs.append(f"refine: need at least 2 levels, got {self.refine}")
        if self.workers < 1:
            errs.append(f"workers: must be >= 1, got {self.workers}")
        if self.sweep not in SWEEPS:
            errs.append(f"sweep: unknown {self.sweep!r}; choose from {SWEEPS}")
        try:
            gs = self.gammas()
            if not gs:
                errs.append("schedule: no admissible gamma levels")
            elif any(g <= 0 for g in gs) or any(b <= a for a, b in zip(gs, gs[1:])):
                errs.append("schedule: gamma levels must be positive and strictly increasing")
        except ValueError:
            errs.append(f"schedule: cannot parse {self.schedule!r}")
        try:
            steps = [float(t) for t in self.steps.split(",")]
            if any(t <= 0 for t in steps) or any(b >= a for a, b in zip(steps, steps[1:])):
                errs.append("steps: must be positive and strictly decreasing")
            elif min(steps) < 1e-4 and self.tol > 1e-10 * min(steps) / 1e-4:
                errs.append(f"steps: {min(steps):g} < 1e-4 needs tol <= {1e-10 * min(steps) / 1e-4:g}")
        except ValueError:
            errs.append(f"steps: cannot parse {self.steps!r}")
        for key in ("betas", "loads", "alphas"):
            try:
                [float(v) for v in getattr(self, key).split(",")]
            except ValueError:
                errs.append(f"{key}: cannot parse {getattr(self, key)!r}")
        if self.subcommand in ("solve", "control", "sensitivity") and not _valid_spec(self.f):
            errs.append(f"f: unknown field spec {self.f!r}")
        if self.subcommand == "control":
            if self.problem not in ("identity-1d", "identity-2d"):
                errs.append(f"problem: control needs identity-1d or identity-2d, got {self.problem!r}")
            if self.zd is None:
                errs.append("zd: required for control")
            elif not _valid_spec(self.zd):
                errs.append(f"zd: unknown field spec {self.zd!r}")
        if self.subcommand == "sensitivity" and self.problem not in ("identity-1d", "identity-2d"):
            errs.append(f"problem: sensitivity needs identity-1d or identity-2d, got {self.problem!r}")
        if self.subcommand == "verify" and not self.dir:
            errs.append("dir: required for verify")
        if errs:
            raise ConfigError(errs)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    typ = str(_FIELD_TYPES[key])
    if value is None:
        return None
    if typ.startswith("int"):
        return int(float(value))
    if typ.startswith("float"):
        return float(value)
    return str(value)


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; dashes and underscores are interchangeable."""
    out, errs = {}, []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errs.append(f"{path}:{lineno}: expected key = value")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES or key in ("subcommand", "overrides"):
            errs.append(f"{path}:{lineno}: unknown key {key!r}")
            continue
        out[key] = value
    if errs:
        raise ConfigError(errs)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="yieldvi", description=__doc__.split("\n\n")[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    common = argparse.ArgumentParser(add_help=False)
    add = common.add_argument
    add("--config", help="key = value parameter file (flags win)")
    add("--problem", choices=PROBLEMS)
    add("--mu", type=float)
    add("--beta", type=float)
    add("--f", help="load: number, preset, k*preset, state:<spec> or CSV path")
    add("--alpha", type=float)
    add("--zd", help="desired state spec (control)")
    add("--n", type=int, help="interior nodes per axis (radial: cells)")
    add("--kind", choices=KINDS)
    add("--gamma-start", type=float)
    add("--gamma-stop", type=float)
    add("--schedule", help="comma-separated gamma levels (overrides start/stop)")
    add("--tol", type=float)
    add("--tol-opt", type=float)
    add("--method", choices=("gradient", "lbfgs"))
    add("--seed", type=int)
    add("--out")
    add("--radius", type=float)
    helps = {
        "solve": "forward solve (VI, pipe or duct)",
        "control": "optimal control by regularize-then-optimize",
        "verify": "recompute residuals of a saved run",
        "sensitivity": "directional-derivative and Lipschitz probes",
        "sweep": "parameter sweeps (refine, gamma, threshold, alpha)",
    }
    subs = {name: sub.add_parser(name, parents=[common], help=h) for name, h in helps.items()}
    subs["verify"].add_argument("--dir", help="output directory of a solve or control run")
    subs["sensitivity"].add_argument("--steps", help="decreasing t values, comma-separated")
    subs["sensitivity"].add_argument("--samples", type=int, help="Lipschitz pairs")
    subs["sensitivity"].add_argument("--probes", type=int, help="pairing test fields")
    sw = subs["sweep"]
    sw.add_argument("--sweep", choices=SWEEPS)
    sw.add_argument("--refine", type=int, help="number of refinement levels")
    sw.add_argument("--workers", type=int)
    sw.add_argument("--betas")
    sw.add_argument("--loads")
    sw.add_argument("--alphas")
    return parser


def parse_config(argv=None) -> RunConfig:
    """Flags over file over defaults.  Raises :class:`ConfigError` listing every problem."""
    args = build_parser().parse_args(argv)
    ns = vars(args)
    logging.basicConfig(level=getattr(logging, str(ns.pop("log_level")).upper(), logging.WARNING))
    file_vals = read_config_file(ns.pop("config")) if ns.get("config") else {}
    ns.pop("config", None)
    merged, errs, overrides = {}, [], []
    for key, value in file_vals.items():
        try:
            merged[key] = _coerce(key, value)
        except ValueError:
            errs.append(f"{key}: cannot parse {value!r}")
    for key, value in ns.items():
        if value is None or key not in _FIELD_TYPES:
            continue
        if key in merged and merged[key] != value:
            overrides.append(f"{key}: flag {value!r} overrides file {merged[key]!r}")
        merged[key] = value
    if errs:
        raise ConfigError(errs)
    cfg = RunConfig(**merged, overrides=overrides)
    if cfg.subcommand == "solve" and cfg.problem.startswith("bingham") and "beta" not in merged:
        cfg = replace(cfg, beta=0.25 if cfg.problem == "bingham-radial" else 0.1)
    if cfg.subcommand == "solve" and cfg.problem.startswith("bingham") and "f" not in merged:
        cfg = replace(cfg, f="1")
    if cfg.problem in ("identity-2d", "bingham-duct") and "n" not in merged:
        cfg = replace(cfg, n=63)
    cfg.validate()
    return cfg


# --- runs --------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Run:
    """Collects written files and manifest entries for one output directory."""

    def __init__(self, cfg: RunConfig, out: Path | None = None):
        self.cfg = cfg
        self.out = Path(out) if out is not None else cfg.output_dir()
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        self.data: dict = {}
        self.t0 = time.perf_counter()

    def field(self, name, grid, values):
        self.files.append(write_field(self.out / name, grid, values))

    def csv(self, name, header, rows):
        self.files.append(write_csv(self.out / name, header, rows))

    def add(self, path):
        self.files.append(Path(path))

    def finish(self, status="ok", error=None):
        cfg = {k: v for k, v in asdict(self.cfg).items() if k != "overrides"}
        manifest = {
            "config": cfg,
            "overrides": self.cfg.overrides,
            "versions": {
                "yieldvi": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "timings": {"total_seconds": time.perf_counter() - self.t0},
            "status": status,
            "partial": status != "ok",
            "files": {p.name: _sha256(p) for p in self.files if p.exists()},
            **self.data,
        }
        if error is not None:
            manifest["error"] = str(error)
        write_manifest(self.out / "manifest.json", manifest)
        return self.out / "manifest.json"


def _grid(cfg: RunConfig) -> Grid:
    return build_grid(cfg.dim(), cfg.n)


def _forward_residuals(A, sol, f) -> dict:
    w = A.grid.weight
    state = A @ sol.u + w * sol.q - w * f
    return {
        "state_eq": float(np.max(np.abs(state), initial=0.0)),
        "complementarity": sol.complementarity(),
        "dual_excess": max(sol.dual_excess(), 0.0),
    }


def run_solve(cfg: RunConfig, run: _Run) -> int:
    if cfg.problem == "bingham-radial":
        p = PipeProblem(R=cfg.radius, mu=cfg.mu, beta=cfg.beta, f=float(cfg.f), n=cfg.n)
        sol = solve_radial(p, schedule=cfg.gammas(), tol=min(cfg.tol, 1e-12), kind=cfg.kind)
        rep = detect_plug(sol)
        exact = mosolov_exact(p, sol.r)
        flags = np.zeros(sol.r.size, dtype=int)
        cells = np.flatnonzero(rep.mask)
        flags[cells] = 1
        run.csv("profile.csv", ["r", "u", "u_exact", "plug_flag"], zip(sol.r, sol.u, exact, flags))
        err = float(np.max(np.abs(sol.u - exact)) / max(np.max(np.abs(exact)), 1e-300)) if np.any(exact) else float(
            np.max(np.abs(sol.u)))
        run.data["summary"] = {
            "newton_iterations": sol.newton_iterations,
            "gamma_final": sol.gamma_final,
            "relative_error_inf": err,
            "plug_radius": rep.plug_radius,
            "plug_radius_exact": p.plug_radius,
        }
        return EXIT_OK
    grid = _grid(cfg)
    if cfg.problem == "bingham-duct":
        p = DuctProblem(grid, mu=cfg.mu, beta=cfg.beta, f=float(cfg.f))
        sol = solve_duct(p, schedule=cfg.gammas(), tol=min(cfg.tol, 1e-12), kind=cfg.kind)
        rep = detect_plug(sol)
        run.field("u.csv", grid, sol.u)
        n1 = grid.n + 1
        c = (np.arange(n1) + 0.5) * grid.h
        X, Y = np.meshgrid(c, c, indexing="ij")
        run.csv("plug.csv", ["x", "y", "plug"], zip(X.ravel(), Y.ravel(), rep.mask.ravel().astype(int)))
        run.data["summary"] = {
            "newton_iterations": sol.newton_iterations,
            "gamma_final": sol.gamma_final,
            "u_max": float(sol.u.max(initial=0.0)),
            "plug_measure": rep.measure,
            "eps_plug": rep.eps_plug,
        }
        return EXIT_OK
    A = assemble_stiffness(grid, cfg.mu)
    f = resolve_field(cfg.f, grid, A, cfg.beta, cfg.kind)
    gs = cfg.gammas()
    sol = continuation_solve(A, f, Smoothing(cfg.kind, cfg.beta, gs[0]), schedule=gs, tol=cfg.tol)
    run.field("f.csv", grid, f)
    run.field("u.csv", grid, sol.u)
    run.field("q.csv", grid, sol.q)
    run.files.append(write_sets(run.out / "sets.csv", sol.sets))
    run.data["summary"] = {
        "beta": sol.beta,
        "mu": sol.mu,
        "schedule": list(sol.schedule),
        "tol": cfg.tol,
        "newton_iterations": sol.newton_iterations,
        "gamma_final": sol.gamma_final,
        "exact_finish": sol.exact,
        "active_nodes": int(sol.sets.active.sum()),
        "biactive_nodes": int(sol.sets.biactive.sum()),
    }
    run.data["residuals"] = _forward_residuals(A, sol, f)
    return EXIT_OK


def _stationarity(A, u, q, p, f, z_d, alpha, beta, kind, gamma):
    s = Smoothing(kind, beta, gamma)
    sets = classify_sets(u, q, beta, eps_u=smoothed_eps_u(u, s))
    xi = recover_xi(u, p, z_d, A)
    return check_strong(A, u, q, p, xi, f, z_d, alpha, beta, sets), sets


def run_control(cfg: RunConfig, run: _Run) -> int:
    grid = _grid(cfg)
    A = assemble_stiffness(grid, cfg.mu)
    z_d = resolve_field(cfg.zd, grid, A, cfg.beta, cfg.kind)
    f0 = resolve_field(cfg.f, grid, A, cfg.beta, cfg.kind)
    cp = ControlProblem(A, z_d, alpha=cfg.alpha, beta=cfg.beta, f0=f0, schedule=tuple(cfg.gammas()),
                        kind=cfg.kind, tol_opt=cfg.tol_opt, method=cfg.method)
    it, hist = optimize(cp)
    q = it.multiplier(cp)
    rep, sets = _stationarity(A, it.u, q, it.p, it.f, z_d, cfg.alpha, cfg.beta, cfg.kind, it.gamma)
    for name, values in (("f.csv", it.f), ("u.csv", it.u), ("p.csv", it.p), ("q.csv", q), ("zd.csv", z_d)):
        run.field(name, grid, values)
    run.files.append(write_sets(run.out / "sets.csv", sets))
    run.files.append(write_history(run.out / "history.csv", hist))
    run.csv("report.csv", ["condition", "residual", "scaled", "tolerance", "pass"], rep.rows())
    run.data["summary"] = {
        "J": it.J,
        "gradient_norm": it.gradient_norm,
        "gamma_final": it.gamma,
        "tol_opt": hist.tol_opt,
        "descent_steps": len(hist.rows) - len(hist.stages),
        "stalled_stages": hist.stalled,
        "stage_differences": hist.stage_differences(),
        "level": rep.level,
        "sign_condition": rep.sign_condition,
    }
    run.data["residuals"] = {name: r.value for name, r in rep.residuals.items()}
    return EXIT_OK


def run_verify(cfg: RunConfig, run: _Run) -> int:
    src = Path(cfg.dir)
    man = read_manifest(src / "manifest.json")
    conf = man["config"]
    recorded = man.get("residuals", {})
    bad = [name for name, digest in man.get("files", {}).items()
           if not (src / name).exists() or _sha256(src / name) != digest]
    grid, u = read_field(src / "u.csv")
    A = assemble_stiffness(grid, float(conf["mu"]))
    beta = float(conf["beta"])
    _, q = read_field(src / "q.csv")
    _, f = read_field(src / "f.csv")
    if conf["subcommand"] == "control":
        _, p = read_field(src / "p.csv")
        _, z_d = read_field(src / "zd.csv")
        gamma = float(man["summary"]["gamma_final"])
        rep, _ = _stationarity(A, u, q, p, f, z_d, float(conf["alpha"]), beta, conf["kind"], gamma)
        now = {name: r.value for name, r in rep.residuals.items()}
        run.csv("verify_report.csv", ["condition", "residual", "scaled", "tolerance", "pass"], rep.rows())
    else:
        w = grid.weight
        state = A @ u + w * q - w * f
        now = {
            "state_eq": float(np.max(np.abs(state), initial=0.0)),
            "complementarity": float(np.max(np.abs(q * u - beta * np.abs(u)), initial=0.0)),
            "dual_excess": max(float(np.max(np.abs(q) - beta, initial=-np.inf)), 0.0),
        }
        run.csv("verify_report.csv", ["condition", "residual", "tolerance", "pass"],
                ((k, v, cfg.tol, v <= cfg.tol * max(1.0, beta)) for k, v in now.items()))
    mismatch = {k: (recorded[k], now.get(k)) for k in recorded
                if now.get(k) is None or abs(now[k] - recorded[k]) > 1e-12}
    run.data["verified"] = {"source": str(src), "residuals": now, "mismatch": mismatch, "corrupt_files": bad}
    ok = not mismatch and not bad
    print(f"verify {src}: {'reproduced' if ok else 'MISMATCH'} ({len(now)} residuals)")
    return EXIT_OK if ok else EXIT_SOLVER


def run_sensitivity(cfg: RunConfig, run: _Run) -> int:
    grid = _grid(cfg)
    A = assemble_stiffness(grid, cfg.mu)
    f = resolve_field(cfg.f, grid, A, cfg.beta, cfg.kind)
    scfg = SolverConfig(beta=cfg.beta, kind=cfg.kind, schedule=tuple(cfg.gammas()), tol=cfg.tol)
    rng = np.random.default_rng(cfg.seed)
    h = smooth_random_field(grid, rng)
    probes = [smooth_random_field(grid, rng) for _ in range(cfg.probes)]
    steps = tuple(float(t) for t in cfg.steps.split(","))
    probe = fd_compare(A, DerivativeProbe(f, h, steps), scfg, probes, two_sided=True)
    header = ["t", "error_v", "backward_error_v"] + [f"pairing_{k}" for k in range(len(probes))]
    rows = ([t, e, b, *pe] for t, e, b, pe in zip(probe.t_list, probe.errors_v, probe.backward_errors_v,
                                                    probe.pairing_errors))
    run.csv("probe.csv", header, rows)
    run.field("eta.csv", grid, probe.eta)
    lip = lipschitz_probe(grid, cfg.mu, cfg.samples, scfg, seed=cfg.seed)
    run.csv("lipschitz.csv", ["pair", "ratio"], enumerate(lip.ratios))
    run.data["summary"] = {
        "eta_norm_v": probe.eta_norm,
        "monotone": probe.monotone,
        "relative_final": probe.relative_final(),
        "lipschitz_max_ratio": lip.max_ratio,
        "lipschitz_bound": lip.bound,
        "lipschitz_holds": lip.holds(),
    }
    # The derivative theory needs continuous u, q and loads in L^r; on a grid we can only record where fields came from.
    run.data["provenance"] = {
        "load": cfg.f,
        "direction": f"smooth_random_field(modes=4, seed={cfg.seed}), first draw",
        "probes": f"smooth_random_field(modes=4), next {cfg.probes} draws",
        "lipschitz_pairs": f"smooth_random_field(modes=4, amplitude=4), seed={cfg.seed}",
    }
    return EXIT_OK


# Sweep points run in worker processes, so they are module-level functions.


def _refine_point(args):
    cfg, k, out = args
    if cfg.problem == "bingham-radial":
        n = cfg.n * 2**k
        p = PipeProblem(R=cfg.radius, mu=cfg.mu, beta=cfg.beta, f=float(cfg.f), n=n)
        sol = solve_radial(p, schedule=cfg.gammas(), tol=1e-12, kind=cfg.kind)
        exact = mosolov_exact(p, sol.r)
        err = float(np.max(np.abs(sol.u - exact)))
        write_csv(Path(out) / "profile.csv", ["r", "u", "u_exact"], zip(sol.r, sol.u, exact))
        return n, p.h, err
    n = (cfg.n + 1) * 2**k - 1
    grid = build_grid(cfg.dim(), n)
    A = assemble_stiffness(grid, cfg.mu)
    f = resolve_field(cfg.f, grid, A, cfg.beta, cfg.kind)
    gs = cfg.gammas()
    sol = continuation_solve(A, f, Smoothing(cfg.kind, cfg.beta, gs[0]), schedule=gs, tol=cfg.tol)
    write_field(Path(out) / "u.csv", grid, sol.u)
    return n, grid.h, sol.u


def _threshold_point(args):
    cfg, beta, load, out = args
    grid = _grid(cfg)
    A = assemble_stiffness(grid, cfg.mu)
    c = replace(cfg, beta=beta)
    sol = continuation_solve(A, np.full(grid.size, load), Smoothing(cfg.kind, beta, 10.0), schedule=c.gammas(),
                             tol=cfg.tol)
    return beta, load, float(np.max(np.abs(sol.u))), float(sol.sets.active.mean())


def _alpha_point(args):
    cfg, alpha, out = args
    grid = _grid(cfg)
    A = assemble_stiffness(grid, cfg.mu)
    z_d = resolve_field(cfg.zd or "state:wave", grid, A, cfg.beta, cfg.kind)
    f0 = resolve_field(cfg.f, grid, A, cfg.beta, cfg.kind)
    cp = ControlProblem(A, z_d, alpha=alpha, beta=cfg.beta, f0=f0, schedule=tuple(cfg.gammas()),
                        kind=cfg.kind, tol_opt=cfg.tol_opt, method=cfg.method)
    it, _ = optimize(cp)
    write_field(Path(out) / "f.csv", grid, it.f)
    return alpha, it.J, it.gradient_norm, float(np.sqrt(grid.weight * it.f @ it.f))


def _pool_map(fn, jobs, workers):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def _exact_constant(cfg, grid):
    """Closed-form 1D solution for a constant load, or None."""
    try:
        load = float(cfg.f)
    except ValueError:
        return None
    if grid.dim != 1:
        return None
    (x,) = grid.coords()
    return np.sign(load) * max(abs(load) - cfg.beta, 0.0) * x * (1 - x) / (2 * cfg.mu)


def run_sweep(cfg: RunConfig, run: _Run) -> int:
    out = run.out
    if cfg.sweep == "refine":
        jobs = [(cfg, k, out / f"level_{k}") for k in range(cfg.refine)]
        for _, _, d in jobs:
            d.mkdir(parents=True, exist_ok=True)
        res = _pool_map(_refine_point, jobs, cfg.workers)
        rows = []
        if cfg.problem == "bingham-radial":
            errs = [e for _, _, e in res]
            hs = [h for _, h, _ in res]
            scale = mosolov_exact(PipeProblem(R=cfg.radius, mu=cfg.mu, beta=cfg.beta, f=float(cfg.f)), 0.0)
        else:
            finest_n, _, finest_u = res[-1]
            errs, hs = [], []
            for n, h, u in res:
                grid = build_grid(cfg.dim(), n)
                exact = _exact_constant(cfg, grid)
                if exact is None:
                    # Compare against the finest level at the shared nodes.
                    stride = (finest_n + 1) // (n + 1)
                    fine = finest_u.reshape((finest_n,) * cfg.dim())
                    sl = (slice(stride - 1, None, stride),) * cfg.dim()
                    exact = fine[sl].ravel()
                errs.append(float(np.max(np.abs(u - exact))))
                hs.append(h)
            scale = float(np.max(np.abs(finest_u), initial=0.0))
        # Errors at round-off (e.g. a stencil exact on the solution) carry no order information.
        floor = 1e-12 * max(float(scale), np.finfo(float).tiny)
        for k, (r, e, h) in enumerate(zip(res, errs, hs)):
            resolved = k > 0 and min(e, errs[k - 1]) > floor
            order = np.log(errs[k - 1] / e) / np.log(hs[k - 1] / h) if resolved else ""
            rows.append((r[0], h, e, order))
        run.csv("convergence.csv", ["n", "h", "error_inf", "order"], rows)
        for _, _, d in jobs:
            for pth in sorted(d.iterdir()):
                run.add(pth)
    elif cfg.sweep == "gamma":
        grid = _grid(cfg)
        A = assemble_stiffness(grid, cfg.mu)
        f = resolve_field(cfg.f, grid, A, cfg.beta, cfg.kind)
        gs = cfg.gammas()
        sol = continuation_solve(A, f, Smoothing(cfg.kind, cfg.beta, gs[0]), schedule=gs, tol=cfg.tol)
        d = path_distances(A, sol, reference=sol.u)
        run.csv("gamma.csv", ["gamma", "distance_v", "newton_iterations"],
                ((g, dist, rec.newton_iterations) for (g, dist), rec in zip(d, sol.path)))
    elif cfg.sweep == "threshold":
        jobs = [(cfg, float(b), float(l), out) for b in cfg.betas.split(",") for l in cfg.loads.split(",")]
        res = _pool_map(_threshold_point, jobs, cfg.workers)
        run.csv("threshold.csv", ["beta", "f", "u_max", "active_fraction"], res)
    elif cfg.sweep == "alpha":
        jobs = [(cfg, float(a), out / f"alpha_{k}") for k, a in enumerate(cfg.alphas.split(","))]
        for _, _, d in jobs:
            d.mkdir(parents=True, exist_ok=True)
        res = _pool_map(_alpha_point, jobs, cfg.workers)
        run.csv("alpha.csv", ["alpha", "J", "gradient_norm", "f_norm_l2"], res)
        for _, _, d in jobs:
            for pth in sorted(d.iterdir()):
                run.add(pth)
    return EXIT_OK


RUNNERS = {
    "solve": run_solve,
    "control": run_control,
    "verify": run_verify,
    "sensitivity": run_sensitivity,
    "sweep": run_sweep,
}


def run(cfg: RunConfig) -> int:
    out = Path(cfg.out) if cfg.out else (
        Path(cfg.dir) / "verify" if cfg.subcommand == "verify" and cfg.dir else cfg.output_dir())
    r = _Run(cfg, out)
    try:
        code = RUNNERS[cfg.subcommand](cfg, r)
    except SolverError as err:
        log.error("%s failed: %s", cfg.subcommand, err)
        print(f"error: {err}", file=sys.stderr)
        r.finish(status="solver-failure", error=err)
        return EXIT_SOLVER
    except (ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        r.finish(status="invalid-config", error=err)
        return EXIT_CONFIG
    r.finish(status="ok" if code == EXIT_OK else "failed")
    return code


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as err:
        for e in err.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as err:  # argparse usage errors
        return EXIT_CONFIG if err.code not in (0, None) else EXIT_OK
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
