"""Epsilon-sequence study: resolved runs against the matched homogenized run."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .blocks import BlockGrid, block_mean
from .cell import CellGeometry, homogenize
from .fv import StructuredGrid
from .macro import CRITICAL, MacroModel, RegimeConfig
from .micro import MicroModel, build_micro_grid, restrict_compare
from .petrophysics import CurvePair


@dataclass(frozen=True)
class StudyConfig:
    epsilons: tuple[float, ...] = (1 / 8, 1 / 16, 1 / 32)
    theta: float = 2.0
    phi_f: float = 0.2
    S0: float = 0.2
    s_dirichlet: float = 0.8
    p_dirichlet: float = 0.0
    t_end: float = 0.2
    dt: float = 1e-3
    macro_cells: int = 256
    cell_method: str = "tpfa"
    layout: str = "strip"


@dataclass(frozen=True)
class StudyRow:
    epsilon: float
    err_fracture: float
    err_matrix: float
    runtime_s: float


def homogenized_reference(geom: CellGeometry, pair: CurvePair, cfg: StudyConfig):
    """Final homogenized fracture saturation and matched matrix saturation per macro cell."""
    props = homogenize(geom, cfg.phi_f, method=cfg.cell_method)
    grid = StructuredGrid((cfg.macro_cells,), (1.0,))
    model = MacroModel(grid, pair, props, RegimeConfig(cfg.theta), s_dirichlet=cfg.s_dirichlet,
                       p_dirichlet=cfg.p_dirichlet, block_grid=BlockGrid.from_geometry(geom))
    state, _ = model.run(model.initial_state(cfg.S0), cfg.t_end, cfg.dt)
    if model.active_regime == CRITICAL:
        matrix = block_mean(state.blocks, model.block_grid)
    else:
        # theta < 2: capillary equilibrium; theta > 2: matrix frozen at its initial state
        matrix = np.asarray(pair.coupling_P(state.S)) if cfg.theta < 2 else np.full(
            grid.n_cells, float(pair.coupling_P(cfg.S0)))
    return grid, state.S, matrix


def run_study(geom: CellGeometry, pair: CurvePair, cfg: StudyConfig, progress=None) -> list[StudyRow]:
    grid, S_macro, s_macro = homogenized_reference(geom, pair, cfg)
    rows = []
    for eps in cfg.epsilons:
        t0 = time.perf_counter()
        mgrid = build_micro_grid(geom, eps, cfg.theta, phi_f=cfg.phi_f, layout=cfg.layout)
        model = MicroModel(mgrid, pair, s_dirichlet=cfg.s_dirichlet, p_dirichlet=cfg.p_dirichlet)
        state, _ = model.run(model.initial_state(cfg.S0), cfg.t_end, cfg.dt)
        ef, em = restrict_compare(state, mgrid, S_macro, grid, s_macro)
        rows.append(StudyRow(eps, ef, em, time.perf_counter() - t0))
        if progress is not None:
            progress(rows[-1])
    return rows
