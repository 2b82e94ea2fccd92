"""Configuration ingestion, experiment orchestration, artifact emission.

Configs are strict JSON (unknown keys are errors). A run solves the design
problem once per requested transport budget and writes, per budget, a PGM
preview, a raw density dump, and a history CSV, plus one summary table and
the fully resolved config. Single-threaded runs are byte-reproducible.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dro import DroParams
from .elasticity import IsotropicHooke, Mesh2D, bridge_mesh, cantilever_mesh
from .errors import ConfigurationError, NumericalError
from .material import DensityField, SimpParams
from .optimize import HistoryRecord, OptimizerConfig, ProblemSetup, optimize
from .uncertainty import NominalLaw, build_load_grid, reference_marginals

SCHEMA_VERSION = 1

GEOMETRIES = {
    "bridge": (bridge_mesh, 1.0, 1.0),
    "cantilever-density": (cantilever_mesh, 2.0, 1.0),
}

EMIT_KINDS = ("pgm", "raw", "csv", "vtk")

HISTORY_HEADER = "iter,objective,lambda,nominal_compliance,volume,p,step,wall_time_s"


@dataclass
class MeshSection:
    geometry: str = "bridge"
    nx: int = 100
    ny: int = 100
    lx: float | None = None
    ly: float | None = None


@dataclass
class MaterialSection:
    young_modulus: float = 1.0
    poisson_ratio: float = 0.3
    void_fraction: float = 1e-3
    p_schedule: list = field(default_factory=lambda: [[0, 1.0], [80, 2.0], [160, 3.0]])
    filter_radius: float = 1.5


@dataclass
class UncertaintySection:
    radius: float = 3.0
    spacing: float = 0.05
    refinement_spacing: float = 0.01
    gaussian_scale: float = 1e-3
    samples: list = field(default_factory=lambda: [[0.0, -1.0]])


@dataclass
class DroSection:
    m: list = field(default_factory=lambda: [0.0])
    epsilon: float = 1e-2
    mode: str = "entropic"
    lambda_lo: float = 1e-6
    lambda_hi: float = 1e4


@dataclass
class OptimizerSection:
    volume_fraction: float = 0.2
    max_iterations: int = 240
    initial_step: float | None = None
    armijo_factor: float = 1e-4
    backtrack_ratio: float = 0.5
    max_backtracks: int = 20
    step_growth: float = 1.2
    stagnation_tol: float = 1e-4
    stagnation_window: int = 10


@dataclass
class OutputSection:
    directory: str = "results"
    emit: list = field(default_factory=lambda: ["pgm", "raw", "csv"])
    timings: bool = False


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    mesh: MeshSection = field(default_factory=MeshSection)
    material: MaterialSection = field(default_factory=MaterialSection)
    uncertainty: UncertaintySection = field(default_factory=UncertaintySection)
    dro: DroSection = field(default_factory=DroSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    output: OutputSection = field(default_factory=OutputSection)
    seed: int | None = None  # reserved; the pipeline is deterministic


_SECTIONS = {
    "mesh": MeshSection,
    "material": MaterialSection,
    "uncertainty": UncertaintySection,
    "dro": DroSection,
    "optimizer": OptimizerSection,
    "output": OutputSection,
}


def _parse_section(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigurationError(f"unknown config key '{where}.{key}'")
    return cls(**data)


def parse_config(data: dict) -> RunConfig:
    """Build a RunConfig from a JSON dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a JSON object")
    known = set(_SECTIONS) | {"schema_version", "seed"}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown config key '{sorted(unknown)[0]}'")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigurationError(
            f"unsupported schema_version {version!r}; this build reads version {SCHEMA_VERSION}"
        )
    kwargs = {"schema_version": version, "seed": data.get("seed")}
    for name, cls in _SECTIONS.items():
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise ConfigurationError(f"config section '{name}' must be an object")
        kwargs[name] = _parse_section(cls, section, name)
    cfg = RunConfig(**kwargs)
    if isinstance(cfg.dro.m, (int, float)):
        cfg.dro.m = [float(cfg.dro.m)]
    if not isinstance(cfg.dro.m, list) or len(cfg.dro.m) == 0:
        raise ConfigurationError("config key 'dro.m' must be a nonempty number or list")
    cfg.dro.m = [float(v) for v in cfg.dro.m]
    if any(v < 0 for v in cfg.dro.m):
        raise ConfigurationError("config key 'dro.m' entries must be nonnegative")
    bad = [k for k in cfg.output.emit if k not in EMIT_KINDS]
    if bad:
        raise ConfigurationError(f"config key 'output.emit' has unknown kind '{bad[0]}'")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as err:
        raise ConfigurationError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise ConfigurationError(f"config file {path} is not valid JSON: {err}") from err
    return parse_config(data)


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


@dataclass
class ResolvedCase:
    budget: float
    label: str
    setup: ProblemSetup


def resolve_cases(cfg: RunConfig) -> list[ResolvedCase]:
    """Turn a parsed config into one ready-to-run setup per budget value."""
    if cfg.mesh.geometry not in GEOMETRIES:
        raise ConfigurationError(
            f"config key 'mesh.geometry' must be one of {sorted(GEOMETRIES)}, "
            f"got {cfg.mesh.geometry!r}"
        )
    factory, lx_default, ly_default = GEOMETRIES[cfg.mesh.geometry]
    lx = cfg.mesh.lx if cfg.mesh.lx is not None else lx_default
    ly = cfg.mesh.ly if cfg.mesh.ly is not None else ly_default
    mesh: Mesh2D = factory(cfg.mesh.nx, cfg.mesh.ny, lx=lx, ly=ly)
    hooke = IsotropicHooke(cfg.material.young_modulus, cfg.material.poisson_ratio)
    simp = SimpParams(
        void_fraction=cfg.material.void_fraction,
        penalization=cfg.material.p_schedule[0][1] if cfg.material.p_schedule else 3.0,
        p_schedule=tuple((int(i), float(p)) for i, p in cfg.material.p_schedule),
        filter_radius=cfg.material.filter_radius,
    )
    grid = build_load_grid(
        radius=cfg.uncertainty.radius,
        spacing=cfg.uncertainty.spacing,
        refinement_centers=cfg.uncertainty.samples,
        refinement_spacing=cfg.uncertainty.refinement_spacing,
        gaussian_scale=cfg.uncertainty.gaussian_scale,
    )
    nominal = NominalLaw.from_samples(cfg.uncertainty.samples, grid)
    marginals = reference_marginals(grid, nominal, cfg.uncertainty.gaussian_scale)
    opt = OptimizerConfig(
        volume_fraction=cfg.optimizer.volume_fraction,
        max_iterations=cfg.optimizer.max_iterations,
        initial_step=cfg.optimizer.initial_step,
        armijo_factor=cfg.optimizer.armijo_factor,
        backtrack_ratio=cfg.optimizer.backtrack_ratio,
        max_backtracks=cfg.optimizer.max_backtracks,
        step_growth=cfg.optimizer.step_growth,
        stagnation_tol=cfg.optimizer.stagnation_tol,
        stagnation_window=cfg.optimizer.stagnation_window,
    )
    cases = []
    for i, m in enumerate(cfg.dro.m):
        mode = cfg.dro.mode
        if m == 0.0 and mode == "entropic":
            # a zero-radius regularized ball is empty: fall back to the plain
            # expected cost under the nominal law
            mode = "nominal"
        params = DroParams(
            wasserstein_radius=m,
            entropic_epsilon=cfg.dro.epsilon,
            lambda_bracket=(cfg.dro.lambda_lo, cfg.dro.lambda_hi),
            mode=mode,
        )
        setup = ProblemSetup(
            mesh=mesh,
            hooke=hooke,
            simp=simp,
            nominal=nominal,
            dro_params=params,
            optimizer=opt,
            grid=grid,
            marginals=marginals,
        )
        label = f"{i:02d}_m{m:g}".replace(".", "p")
        cases.append(ResolvedCase(budget=m, label=label, setup=setup))
    return cases


# -- artifact writers ------------------------------------------------------


def _top_first_grid(density: DensityField) -> np.ndarray:
    return density.grid()[::-1]


def emit_density_pgm(density: DensityField, path: str | Path) -> None:
    """ASCII PGM preview, material drawn dark, top row first."""
    grid = _top_first_grid(density)
    pixels = np.floor(255.0 * (1.0 - grid) + 0.5).astype(np.int64)
    pixels = np.clip(pixels, 0, 255)
    lines = [f"P2\n{grid.shape[1]} {grid.shape[0]}\n255"]
    for row in pixels:
        line = ""
        for v in row:
            tok = str(int(v))
            if line and len(line) + 1 + len(tok) > 70:
                lines.append(line)
                line = tok
            else:
                line = tok if not line else line + " " + tok
        lines.append(line)
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")


def emit_density_raw(density: DensityField, path: str | Path) -> None:
    """Two little-endian uint32 dims then row-major float64, top row first."""
    grid = _top_first_grid(density)
    ny, nx = grid.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", nx, ny))
        fh.write(np.ascontiguousarray(grid, dtype="<f8").tobytes())


def read_density_raw(path: str | Path) -> tuple[int, int, np.ndarray]:
    """Inverse of ``emit_density_raw``; returns (nx, ny, bottom-first values)."""
    blob = Path(path).read_bytes()
    nx, ny = struct.unpack("<II", blob[:8])
    grid = np.frombuffer(blob[8:], dtype="<f8").reshape(ny, nx)
    return nx, ny, grid[::-1].ravel().copy()


def emit_density_vtk(density: DensityField, path: str | Path) -> None:
    """Legacy ASCII STRUCTURED_POINTS file with one cell scalar field."""
    mesh = density.mesh
    lines = [
        "# vtk DataFile Version 2.0",
        "density field",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {mesh.nx + 1} {mesh.ny + 1} 1",
        "ORIGIN 0 0 0",
        f"SPACING {mesh.hx:.17g} {mesh.hy:.17g} 1",
        f"CELL_DATA {mesh.n_elements}",
        "SCALARS density double",
        "LOOKUP_TABLE default",
    ]
    lines.extend(f"{v:.17g}" for v in density.values)
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")


def emit_history(records: list[HistoryRecord], path: str | Path, timings: bool = False) -> None:
    """History CSV, 17 significant digits, LF line endings.

    Wall times are written as 0 unless ``timings`` is set, so identical runs
    produce identical bytes.
    """
    lines = [HISTORY_HEADER]
    for r in records:
        wall = r.wall_time_s if timings else 0.0
        lines.append(
            f"{r.iteration},{r.objective:.17g},{r.lam:.17g},{r.nominal_compliance:.17g},"
            f"{r.volume:.17g},{r.penalization:.17g},{r.step:.17g},{wall:.17g}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")


def emit_density(density: DensityField, base_path: str | Path) -> None:
    """Write both the PGM preview and the raw dump for one design."""
    base = Path(base_path)
    emit_density_pgm(density, base.with_suffix(".pgm"))
    emit_density_raw(density, base.with_suffix(".raw"))


def _summary_lines(rows: list[dict]) -> list[str]:
    lines = ["m,objective,lambda,nominal_compliance,volume,iterations"]
    for row in rows:
        lines.append(
            f"{row['m']:.17g},{row['objective']:.17g},{row['lambda']:.17g},"
            f"{row['nominal_compliance']:.17g},{row['volume']:.17g},{row['iterations']}"
        )
    return lines


# -- orchestration ---------------------------------------------------------


def run(
    config_path: str | Path,
    out_dir: str | Path | None = None,
    emit: list[str] | None = None,
    threads: int | None = None,
) -> int:
    """Execute every budget in the config; returns a process exit status."""
    try:
        cfg = load_config(config_path)
        if emit is not None:
            bad = [k for k in emit if k not in EMIT_KINDS]
            if bad:
                raise ConfigurationError(f"unknown emit kind '{bad[0]}'")
            cfg.output.emit = list(emit)
        if out_dir is not None:
            cfg.output.directory = str(out_dir)
        with _limit_threads(threads):
            return _run_resolved(cfg)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (TypeError, ValueError) as err:
        # bad values inside an otherwise well-formed config
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"i/o failure: {err}", file=sys.stderr)
        return 3


def _limit_threads(threads: int | None):
    import contextlib

    if threads is None:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=threads)
    except ImportError:
        print("threadpoolctl not installed; --threads ignored", file=sys.stderr)
        return contextlib.nullcontext()


def _run_resolved(cfg: RunConfig) -> int:
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config_resolved.json", "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    cases = resolve_cases(cfg)
    summary = []
    for case in cases:
        density, lam, history = optimize(case.setup)
        final = history[-1]
        prefix = out / case.label
        kinds = cfg.output.emit
        if "pgm" in kinds:
            emit_density_pgm(density, f"{prefix}_density.pgm")
        if "raw" in kinds:
            emit_density_raw(density, f"{prefix}_density.raw")
        if "csv" in kinds:
            emit_history(history, f"{prefix}_history.csv", timings=cfg.output.timings)
        if "vtk" in kinds:
            emit_density_vtk(density, f"{prefix}_density.vtk")
        summary.append(
            {
                "m": case.budget,
                "objective": final.objective,
                "lambda": lam,
                "nominal_compliance": final.nominal_compliance,
                "volume": final.volume,
                "iterations": final.iteration,
            }
        )
        print(
            f"m={case.budget:g}: objective={final.objective:.6g} "
            f"nominal={final.nominal_compliance:.6g} volume={final.volume:.6g} "
            f"iterations={final.iteration}"
        )
    (out / "summary.csv").write_text(
        "\n".join(_summary_lines(summary)) + "\n", encoding="ascii", newline="\n"
    )
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="drotopo",
        description="Distributionally robust compliance minimization for 2D densities",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run every budget in a JSON config")
    runp.add_argument("config", help="path to the JSON run configuration")
    runp.add_argument("--out", default=None, help="output directory (overrides config)")
    runp.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
    runp.add_argument(
        "--emit", default=None, help="comma-separated subset of pgm,raw,csv,vtk"
    )
    args = parser.parse_args(argv)
    if args.command == "run":
        emit = args.emit.split(",") if args.emit else None
        return run(args.config, out_dir=args.out, emit=emit, threads=args.threads)
    parser.error("unknown command")
    return 2


if __name__ == "__main__":
    sys.exit(main())
