"""Command-line entry point: ``dualpor <action> --config PATH``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .blocks import BlockGrid, run_block_demo
from .cell import CellGeometry, GeometryError, build_geometry, homogenize, worker_count
from .config import ConfigError, ScenarioConfig, gravity_vector, load_config, validate, with_overrides
from .convergence import StudyConfig, run_study
from .fv import ConfigurationError, ConvergenceError, StructuredGrid
from .io import sha256_file, write_csv, write_vtk
from .macro import MacroModel, RegimeConfig, SourceSpec
from .micro import MicroModel, build_micro_grid

log = logging.getLogger("dualpor")

ACTIONS = ("curves", "homogenize", "macro", "micro", "block-demo", "convergence")
EXIT_OK, EXIT_SOLVER, EXIT_CONFIG, EXIT_USAGE = 0, 2, 3, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def cell_geometry(cfg: ScenarioConfig, n=None):
    c = cfg.cell
    n = c.n if n is None else n
    mask_file = Path(cfg.base_dir) / c.mask_file if c.mask_file else None
    geom = build_geometry(c.shape, n, c.d, side=c.side, thickness=c.thickness, mask_file=mask_file,
                          porosity_m=cfg.matrix.porosity)
    k = np.where(geom.matrix_mask, c.perm_matrix, c.perm_fracture)
    return CellGeometry(geom.matrix_mask, geom.porosity_m, k[..., None, None] * np.eye(c.d))


def region_mask(centers_x, region):
    if len(region) != 2:
        raise ConfigError("source regions are x-intervals 'a, b'")
    a, b = region
    return ((centers_x >= a) & (centers_x < b)).astype(float)


# actions


def action_curves(cfg, out: Path):
    pair = cfg.curves()
    f, m = pair.fracture, pair.matrix
    s = np.linspace(0.0, 1.0, 1001)
    cols = {
        "s": s, "pc_f": f.pc(s), "pc_m": m.pc(s),
        "mobw_f": f.mob_w(s), "mobn_f": f.mob_n(s), "mobw_m": m.mob_w(s), "mobn_m": m.mob_n(s),
        "alpha_f": f.alpha(s), "beta_f": f.beta(s), "alpha_m": m.alpha(s), "beta_m": m.beta(s),
        "Gw_f": f.g_w(s), "Gn_f": f.g_n(s), "Gw_m": m.g_w(s), "Gn_m": m.g_n(s),
        "P_of_S": pair.coupling_P(s),
    }
    return [write_csv(out / "curves.csv", list(cols), zip(*cols.values()))]


def action_homogenize(cfg, out: Path):
    geom = cell_geometry(cfg)
    props = homogenize(geom, cfg.fracture.porosity, method=cfg.cell.method)
    k = props.k_star
    rows = [(f"K{i + 1}{j + 1}", k[i, j]) for i in range(geom.d) for j in range(geom.d)]
    rows += [("phi_star", props.phi_star), ("phi_hat_m", props.phi_hat_m),
             ("measure_m", props.measure_m), ("measure_f", props.measure_f)]
    files = [write_csv(out / "effective.csv", ["quantity", "value"], rows)]
    if cfg.output.write_correctors:
        pointwise = props.method == "fe"
        for j, xi in enumerate(props.xi):
            files.append(write_vtk(out / f"xi_{j + 1}.vtk", {f"xi_{j + 1}": xi}, xi.shape,
                                   (geom.h,) * geom.d, point_data=pointwise))
    return files


def build_macro(cfg: ScenarioConfig):
    geom = cell_geometry(cfg)
    props = homogenize(geom, cfg.fracture.porosity, method=cfg.cell.method)
    g = cfg.grid
    grid = StructuredGrid(tuple(g.cells), tuple(g.lengths), tuple(g.dirichlet))
    x = grid.centers()[:, 0]
    s = cfg.sources
    sources = SourceSpec(
        f_I=s.injection_rate * region_mask(x, s.injection_region),
        f_P=s.production_rate * region_mask(x, s.production_region),
        S_I_w=s.injection_s_w, t_on=s.t_on, t_off=s.t_off,
    )
    model = MacroModel(
        grid=grid, pair=cfg.curves(), props=props,
        regime=RegimeConfig(cfg.regime.theta, cfg.regime.coupling), sources=sources,
        gravity=gravity_vector(cfg, grid.d), p_dirichlet=cfg.boundary.p_dirichlet,
        s_dirichlet=cfg.boundary.s_dirichlet, block_grid=BlockGrid.from_geometry(geom),
        block_substeps=cfg.blocks.substeps,
    )
    return model


def action_macro(cfg, out: Path):
    model = build_macro(cfg)
    grid = model.grid
    state = model.initial_state(cfg.initial.s_fracture, cfg.initial.s_block)
    files = []
    every = max(1, cfg.output.snapshot_every)

    def snapshot(k, st):
        files.append(write_vtk(out / f"S_{k:04d}.vtk", {"S": st.S}, grid.shape, grid.spacing))
        files.append(write_vtk(out / f"P_{k:04d}.vtk", {"P": st.P}, grid.shape, grid.spacing))

    snapshot(0, state)
    last = {"k": 0}

    def callback(k, st, diag):
        last["k"] = k
        if k % every == 0:
            snapshot(k // every, st)

    final, rows = model.run(state, cfg.time.t_end, cfg.time.dt_init, cfg.time.dt_max, callback=callback)
    if last["k"] % every:
        snapshot(last["k"] // every + 1, final)
    header = ["t", "dt", "min_S", "max_S", "mean_S", "mass_fracture", "mass_matrix", "influx_w", "source_w",
              "exchange_w", "ledger_error"]
    files.insert(0, write_csv(out / "macro_series.csv", header, [tuple(vars(r).values()) for r in rows]))
    return files


def action_micro(cfg, out: Path):
    mc = cfg.micro
    geom = cell_geometry(cfg, n=mc.resolution)
    mgrid = build_micro_grid(geom, mc.epsilon, cfg.regime.theta, mc.resolution, phi_f=cfg.fracture.porosity,
                             layout=mc.layout)
    model = MicroModel(mgrid, cfg.curves(), s_dirichlet=mc.s_dirichlet, p_dirichlet=cfg.boundary.p_dirichlet,
                       gravity=gravity_vector(cfg, mgrid.grid.d))
    state = model.initial_state(cfg.initial.s_fracture, cfg.initial.s_block)
    g = mgrid.grid
    files = []
    every = max(1, cfg.output.snapshot_every)
    files.append(write_vtk(out / "Smicro_0000.vtk", {"S": state.S, "medium": mgrid.cell_medium}, g.shape,
                           g.spacing))

    def callback(k, st, rep):
        if k % every == 0:
            files.append(write_vtk(out / f"Smicro_{k // every:04d}.vtk", {"S": st.S, "medium": mgrid.cell_medium},
                                   g.shape, g.spacing))

    _, rows = model.run(state, mc.t_end, mc.dt, callback=callback)
    header = ["t", "dt", "min_S", "max_S", "mass_w", "influx_w", "source_w", "ledger_error"]
    files.insert(0, write_csv(out / "micro_series.csv", header, rows))
    return files


def action_block_demo(cfg, out: Path):
    geom = cell_geometry(cfg)
    grid = BlockGrid.from_geometry(geom)
    bd = cfg.block_demo
    rows, _ = run_block_demo(grid, cfg.curves().matrix, bd.s0, bd.trace, bd.dt, bd.t_end)
    return [write_csv(out / "block_series.csv", ["t", "boundary_s", "mean_s", "Q_w"], rows)]


def action_convergence(cfg, out: Path):
    cc = cfg.convergence
    geom = cell_geometry(cfg, n=cc.resolution)
    study = StudyConfig(
        epsilons=tuple(cc.epsilons), theta=cfg.regime.theta, phi_f=cfg.fracture.porosity, S0=cc.s_fracture,
        s_dirichlet=cc.s_dirichlet, p_dirichlet=cfg.boundary.p_dirichlet, t_end=cc.t_end, dt=cc.dt,
        macro_cells=cc.macro_cells, cell_method=cc.method, layout=cfg.micro.layout,
    )
    rows = run_study(geom, cfg.curves(), study, progress=lambda r: log.info("epsilon %g done", r.epsilon))
    data = [(r.epsilon, r.err_fracture, r.err_matrix, r.runtime_s) for r in rows]
    return [write_csv(out / "convergence.csv", ["epsilon", "errL2_fracture", "errL2_matrix", "runtime_s"], data)]


HANDLERS = {
    "curves": action_curves,
    "homogenize": action_homogenize,
    "macro": action_macro,
    "micro": action_micro,
    "block-demo": action_block_demo,
    "convergence": action_convergence,
}


def write_manifest(out: Path, cfg: ScenarioConfig, action: str, files, elapsed: float):
    lines = [
        f"version = dualpor {__version__}",
        f"action = {action}",
        f"config_sha256 = {cfg.digest}",
        f"workers = {worker_count()}",
        f"wall_clock_s = {elapsed:.3f}",
        "[files]",
    ]
    lines += [f"{Path(f).name} {sha256_file(f)}" for f in files]
    path = out / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def dispatch(action: str, cfg: ScenarioConfig, out_dir: str | Path = ".", theta=None, epsilons=None) -> int:
    if action not in HANDLERS:
        print(f"unknown action {action!r}; expected one of {', '.join(ACTIONS)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = with_overrides(cfg, theta=theta, epsilons=epsilons)
        problems = validate(cfg)
        if problems:
            for p in problems:
                print(p, file=sys.stderr)
            return EXIT_CONFIG
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        files = HANDLERS[action](cfg, out)
        write_manifest(out, cfg, action, files, time.perf_counter() - t0)
    except (ConfigError, ConfigurationError, GeometryError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def main(argv=None) -> int:
    parser = _Parser(prog="dualpor", description="Two-phase flow in fractured media: homogenized and resolved models.")
    parser.add_argument("action", help=" | ".join(ACTIONS))
    parser.add_argument("--config", default=None, help="scenario INI file (default: built-in scenario)")
    parser.add_argument("--out-dir", default=".", help="output directory")
    parser.add_argument("--theta", type=float, default=None, help="override the permeability scaling exponent")
    parser.add_argument("--epsilon", default=None, help="comma-separated epsilon list")
    parser.add_argument("-v", "--verbose", action="store_true")
    try:
        args = parser.parse_args(argv)
        eps = [float(e) for e in args.epsilon.split(",")] if args.epsilon else None
    except (UsageError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        print(f"dualpor: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return dispatch(args.action, cfg, args.out_dir, theta=args.theta, epsilons=eps)


if __name__ == "__main__":
    sys.exit(main())
