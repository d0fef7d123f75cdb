"""Resolved fracture/matrix model at finite epsilon, and comparison with the homogenized one."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cell import CellGeometry
from .fv import ConfigurationError, ConvergenceError, Sources, StructuredGrid, TwoPhaseFV
from .petrophysics import CurvePair

FRACTURE, MATRIX = 0, 1


@dataclass(frozen=True, eq=False)
class MicroGrid:
    epsilon: float
    theta: float
    geom: CellGeometry
    grid: StructuredGrid
    cell_medium: np.ndarray
    cell_index: np.ndarray  # epsilon-cell each fine cell belongs to (C order over epsilon-cells)
    n_eps: tuple[int, ...]
    perm: np.ndarray  # (n, d) diagonal
    porosity: np.ndarray

    @property
    def k_scale(self) -> float:
        return self.epsilon**self.theta


def _n_cells_per_unit(epsilon):
    k = 1.0 / epsilon
    if abs(k - round(k)) > 1e-9 or round(k) < 1:
        raise ConfigurationError(f"1/epsilon must be an integer, got epsilon = {epsilon}")
    return int(round(k))


def build_micro_grid(cell_geom: CellGeometry, epsilon: float, theta: float, resolution_per_cell: int | None = None,
                     phi_f: float = 0.2, layout: str = "strip", dirichlet=("xmax",)) -> MicroGrid:
    """Tile the unit cell over the domain.

    layout "strip" is (0,1) x (0,epsilon), one row of epsilon-cells; "square"
    is (0,1)^2.  A 1D cell geometry gives a 1D interval in both layouts.
    ``theta = 0`` leaves the matrix permeability unscaled.
    """
    r = cell_geom.n if resolution_per_cell is None else int(resolution_per_cell)
    if r != cell_geom.n:
        raise ConfigurationError(f"cell geometry has resolution {cell_geom.n}, expected {r}")
    if r < 8:
        raise ConfigurationError("resolution_per_cell must be at least 8")
    if theta < 0:
        raise ConfigurationError("theta must be nonnegative")
    m = _n_cells_per_unit(epsilon)
    d = cell_geom.d
    if d == 1 or layout == "strip":
        n_eps = (m,) + (1,) * (d - 1)
    elif layout == "square":
        n_eps = (m, m)
    else:
        raise ConfigurationError(f"unknown layout {layout!r}")
    lengths = tuple(float(k) * epsilon for k in n_eps)
    grid = StructuredGrid(tuple(k * r for k in n_eps), lengths, tuple(dirichlet))

    mask = np.tile(cell_geom.matrix_mask, n_eps)
    boundary = np.zeros(mask.shape, dtype=bool)
    for axis in range(d):
        idx = [slice(None)] * d
        idx[axis] = 0
        boundary[tuple(idx)] = True
        idx[axis] = -1
        boundary[tuple(idx)] = True
    if np.any(mask & boundary):
        raise ConfigurationError("matrix cells touch the outer boundary")

    eps_idx = np.indices(grid.shape).reshape(d, -1) // r
    cell_index = np.ravel_multi_index(tuple(eps_idx), n_eps)
    kdiag = np.stack([np.tile(cell_geom.perm[..., a, a], n_eps).ravel() for a in range(d)], axis=1)
    medium = mask.ravel().astype(int)
    kdiag[medium == MATRIX] *= epsilon**theta
    phi = np.where(medium == MATRIX, np.tile(cell_geom.porosity_m, n_eps).ravel(), phi_f)
    return MicroGrid(epsilon, theta, cell_geom, grid, medium, cell_index, n_eps, kdiag, phi)


@dataclass
class MicroState:
    S: np.ndarray
    P: np.ndarray
    sigma: np.ndarray  # fracture-side traces on interface faces
    t: float = 0.0


@dataclass
class MicroModel:
    mgrid: MicroGrid
    pair: CurvePair
    sources: Sources | None = None
    gravity: tuple[float, ...] | None = None
    p_dirichlet: float = 0.0
    s_dirichlet: float = 1.0
    newton_tol: float = 1e-12

    def __post_init__(self):
        g = self.mgrid
        self.fv = TwoPhaseFV(
            grid=g.grid, media=[self.pair.fracture, self.pair.matrix], cell_medium=g.cell_medium,
            porosity=g.porosity, perm=g.perm, gravity=self.gravity, p_dirichlet=self.p_dirichlet,
            s_dirichlet=self.s_dirichlet, pair=self.pair, newton_tol=self.newton_tol,
        )
        n = g.grid.n_cells
        if self.sources is None:
            self.sources = Sources.zero(n)
        src_on_matrix = (self.sources.inj_w + self.sources.inj_n + self.sources.prod)[g.cell_medium == MATRIX]
        if np.any(src_on_matrix != 0):
            raise ConfigurationError("A.9: sources must vanish on the matrix part")

    def initial_state(self, S0_f, s0_m=None) -> MicroState:
        g = self.mgrid
        n = g.grid.n_cells
        Sf = np.broadcast_to(np.asarray(S0_f, float), (n,))
        if s0_m is None:
            Sm = np.asarray(self.pair.coupling_P(Sf))
        else:
            Sm = np.broadcast_to(np.asarray(s0_m, float), (n,))
        S = np.where(g.cell_medium == MATRIX, Sm, Sf).astype(float)
        sigma = self.fv.initial_traces(S)
        P, _ = self.fv.pressure_step(S, self.sources, sigma)
        return MicroState(S, P, sigma, 0.0)

    def wetting_mass(self, state: MicroState) -> float:
        return float(np.sum(self.fv.porosity * self.fv.volume * state.S))

    def step(self, state: MicroState, dt: float):
        P, U = self.fv.pressure_step(state.S, self.sources, state.sigma)
        rep = self.fv.saturation_step(state.S, P, U, dt, self.sources, sigma_old=state.sigma)
        new = MicroState(np.clip(rep.S, 0.0, 1.0), P, rep.sigma, state.t + dt)
        return new, rep

    def run(self, state: MicroState, t_end: float, dt: float, max_halvings: int = 10, callback=None):
        """Fixed nominal step with halving on failure; returns (state, ledger rows)."""
        m0 = self.wetting_mass(state)
        influx = source = 0.0
        rows = []
        k = 0
        while state.t < t_end * (1 - 1e-12):
            h = min(dt, t_end - state.t)
            for attempt in range(max_halvings + 1):
                try:
                    new, rep = self.step(state, h)
                    break
                except ConvergenceError:
                    if attempt == max_halvings:
                        raise
                    h *= 0.5
            influx += h * rep.boundary_influx_w
            source += h * rep.source_w
            state = new
            k += 1
            mass = self.wetting_mass(state)
            err = abs(mass - m0 - influx - source) / max(m0, abs(influx) + abs(source), 1e-300)
            rows.append((state.t, h, float(state.S.min()), float(state.S.max()), mass, influx, source, err))
            if callback is not None:
                callback(k, state, rep)
        return state, rows


def eps_cell_averages(values, mgrid: MicroGrid, medium: int):
    """Average of a fine field over the cells of one medium inside every epsilon-cell."""
    sel = mgrid.cell_medium == medium
    n_eps = int(np.prod(mgrid.n_eps))
    total = np.bincount(mgrid.cell_index[sel], weights=np.asarray(values)[sel], minlength=n_eps)
    count = np.bincount(mgrid.cell_index[sel], minlength=n_eps)
    with np.errstate(invalid="ignore"):
        return total / count


def eps_cell_centers(mgrid: MicroGrid) -> np.ndarray:
    axes = [(np.arange(k) + 0.5) * mgrid.epsilon for k in mgrid.n_eps]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def sample_cellwise(values, grid: StructuredGrid, mgrid: MicroGrid, n_sub: int = 8):
    """Mean over each epsilon-cell of a piecewise-constant field given on ``grid``."""
    d = grid.d
    offsets = (np.arange(n_sub) + 0.5) / n_sub - 0.5
    centers = eps_cell_centers(mgrid)
    vals = np.asarray(values, float).reshape(grid.shape)
    total = np.zeros(len(centers))
    sub = np.meshgrid(*([offsets] * mgrid.grid.d), indexing="ij")
    sub = np.stack([s.ravel() for s in sub], axis=1) * mgrid.epsilon
    for off in sub:
        pts = centers + off
        idx = tuple(
            np.clip(np.floor(pts[:, a] / grid.spacing[a]).astype(int), 0, grid.shape[a] - 1) for a in range(d)
        )
        total += vals[idx]
    return total / len(sub)


def restrict_compare(micro_state: MicroState, mgrid: MicroGrid, macro_S, macro_grid: StructuredGrid,
                     macro_matrix=None):
    """L2(Omega) distances (fracture, matrix) between epsilon-cell averages and the homogenized fields.

    ``macro_matrix`` is the per-macro-cell matrix saturation to compare with:
    block means at theta = 2, P(S) for smaller theta.  Returns NaN for the
    matrix error when it is omitted.
    """
    d_macro = macro_grid.d
    extent = tuple(k * mgrid.epsilon for k in mgrid.n_eps)
    if abs(macro_grid.lengths[0] - extent[0]) > 1e-12:
        raise ValueError("micro and macro domains differ")
    if d_macro > 1 and any(abs(a - b) > 1e-12 for a, b in zip(macro_grid.lengths, extent)):
        raise ValueError("micro and macro domains differ")
    cell_measure = mgrid.epsilon ** d_macro
    Sf = eps_cell_averages(micro_state.S, mgrid, FRACTURE)
    ref = sample_cellwise(macro_S, macro_grid, mgrid)
    err_f = float(np.sqrt(np.sum((Sf - ref) ** 2) * cell_measure))
    err_m = float("nan")
    if macro_matrix is not None:
        Sm = eps_cell_averages(micro_state.S, mgrid, MATRIX)
        ref_m = sample_cellwise(macro_matrix, macro_grid, mgrid)
        err_m = float(np.sqrt(np.sum((Sm - ref_m) ** 2) * cell_measure))
    return err_f, err_m
