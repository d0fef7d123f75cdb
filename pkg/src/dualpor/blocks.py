"""Matrix-block imbibition: one block per macro cell, all advanced in a single sparse solve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cell import CellGeometry
from .fv import ConvergenceError
from .petrophysics import MediumCurves


@dataclass(frozen=True, eq=False)
class BlockGrid:
    """Two-point discretization of Y_m on the cell grid.

    Faces between a matrix cell and a fracture cell (periodic wrap included)
    carry the Dirichlet trace.
    """

    volume: np.ndarray  # per node, fraction of |Y|
    porosity: np.ndarray
    laplacian: sp.csr_matrix  # includes Dirichlet diagonal
    bd_node: np.ndarray
    bd_T: np.ndarray
    measure_m: float
    shape: tuple[int, ...]
    nodes: np.ndarray  # flat cell indices of matrix cells

    @property
    def n_nodes(self) -> int:
        return self.volume.size

    @classmethod
    def from_geometry(cls, geom: CellGeometry) -> "BlockGrid":
        mask = geom.matrix_mask
        d, h = geom.d, geom.h
        idx = -np.ones(mask.shape, dtype=int)
        idx[mask] = np.arange(mask.sum())
        N = int(mask.sum())
        rows, cols, vals = [], [], []
        bd_node, bd_T = [], []
        for axis in range(d):
            k = geom.perm[..., axis, axis]
            for shift in (-1, 1):
                nb = np.roll(idx, shift, axis=axis)
                k_nb = np.roll(k, shift, axis=axis)
                here = idx >= 0
                inner = here & (nb >= 0)
                T = 2.0 * k[inner] * k_nb[inner] / (k[inner] + k_nb[inner]) * h ** (d - 2)
                rows += [idx[inner], idx[inner]]
                cols += [idx[inner], nb[inner]]
                vals += [T, -T]
                edge = here & (nb < 0)
                bd_node.append(idx[edge])
                bd_T.append(2.0 * k[edge] * h ** (d - 2))
        bd_node = np.concatenate(bd_node)
        bd_T = np.concatenate(bd_T)
        if bd_node.size == 0:
            raise ValueError("matrix block has no interface with the fracture")
        rows.append(bd_node)
        cols.append(bd_node)
        vals.append(bd_T)
        L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
        L.sum_duplicates()
        # fixed-order boundary arrays so that reductions are reproducible
        order = np.lexsort((bd_T, bd_node))
        return cls(
            volume=np.full(N, h**d),
            porosity=geom.porosity_m[mask].astype(float),
            laplacian=L,
            bd_node=bd_node[order],
            bd_T=bd_T[order],
            measure_m=geom.measure_m,
            shape=mask.shape,
            nodes=np.flatnonzero(mask.ravel()),
        )


@dataclass
class BlockState:
    s: np.ndarray  # (n_blocks, n_nodes)
    t: float = 0.0

    def __post_init__(self):
        self.s = np.atleast_2d(np.asarray(self.s, dtype=float))
        if np.any(self.s < -1e-12) or np.any(self.s > 1 + 1e-12):
            raise ValueError("block saturation outside [0, 1]")


def equilibrium_state(grid: BlockGrid, boundary_s, t: float = 0.0) -> BlockState:
    b = np.atleast_1d(np.asarray(boundary_s, dtype=float))
    if np.any(b < 0) or np.any(b > 1):
        raise ValueError("boundary saturation outside [0, 1]")
    return BlockState(np.repeat(b[:, None], grid.n_nodes, axis=1), t)


def _boundary_rhs(grid: BlockGrid, W_b):
    """Per-node Dirichlet contribution T_b * W_b for every block."""
    out = np.zeros((W_b.size, grid.n_nodes))
    np.add.at(out.T, grid.bd_node, np.outer(grid.bd_T, W_b))
    return out


def boundary_flux(state: BlockState, grid: BlockGrid, curves: MediumCurves, boundary_s):
    """Inward flux of K grad beta(s) through the block boundary, per block."""
    W = curves._beta(state.s)
    W_b = np.atleast_1d(curves._beta(np.atleast_1d(boundary_s)))
    W_b = np.broadcast_to(W_b, (W.shape[0],))
    return np.array([np.sum(grid.bd_T * (W_b[k] - W[k, grid.bd_node])) for k in range(W.shape[0])])


def block_step(state: BlockState, grid: BlockGrid, curves: MediumCurves, boundary_s, dt: float,
               tol: float = 1e-13, max_iter: int = 60, substeps: int = 1) -> BlockState:
    """Backward-Euler imbibition step for every block.

    ``boundary_s`` is a scalar or one value per block.  Newton iterates on the
    blended variable u = s + beta(s)/beta(1) like the fracture scheme.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    nb = state.s.shape[0]
    bs = np.broadcast_to(np.asarray(boundary_s, dtype=float), (nb,)).copy()
    if np.any(bs < 0) or np.any(bs > 1):
        raise ValueError("boundary saturation outside [0, 1]")
    W_b = np.atleast_1d(curves._beta(bs))
    rhs_b = _boundary_rhs(grid, W_b).ravel()
    L = sp.kron(sp.identity(nb, format="csr"), grid.laplacian, format="csr")
    phiV = np.tile(grid.porosity * grid.volume, nb)
    b1 = curves.beta_one
    h = dt / substeps
    s = state.s.ravel().copy()
    for _ in range(substeps):
        s = _newton(s, L, rhs_b, phiV, curves, b1, h, tol, max_iter)
    return BlockState(s.reshape(nb, -1), state.t + dt)


def _newton(s_old, L, rhs_b, phiV, curves, b1, dt, tol, max_iter):
    def residual(u):
        s = curves._s_of_u(u)
        W = curves._beta(s)
        R = phiV * (s - s_old) / dt + L @ W - rhs_b
        return s, W, R

    u = curves._u_of_s(s_old)
    s, W, R = residual(u)
    merit = np.max(np.abs(R) * dt / phiV)
    for _ in range(max_iter):
        if merit <= tol:
            return s
        bp = curves._beta_prime_raw(s)
        dS = 1.0 / (1.0 + bp / b1)
        J = L @ sp.diags(bp * dS) + sp.diags(phiV * dS / dt)
        du = spla.spsolve(J.tocsc(), -R)
        lam = 1.0
        for _ in range(8):
            u_try = np.clip(u + lam * du, 0.0, 2.0)
            trial = residual(u_try)
            m_try = np.max(np.abs(trial[2]) * dt / phiV)
            if m_try < merit:
                break
            lam *= 0.5
        u = u_try
        s, W, R = trial
        merit = m_try
    if merit <= tol:
        return s
    raise ConvergenceError(f"block Newton stalled at residual {merit:.3e}")


def transfer_source(old: BlockState, new: BlockState, grid: BlockGrid, dt: float) -> np.ndarray:
    """Wetting exchange rate Q_w per block (1/s); Q_n = -Q_w."""
    ds = (new.s - old.s) @ (grid.porosity * grid.volume)
    return 0.0 - ds / (grid.measure_m * dt)


def block_mean(state: BlockState, grid: BlockGrid) -> np.ndarray:
    return state.s @ grid.volume / grid.volume.sum()


def matrix_mass(state: BlockState, grid: BlockGrid) -> np.ndarray:
    """(1/|Y_m|) * integral of phi_m s over Y_m, per block."""
    return state.s @ (grid.porosity * grid.volume) / grid.measure_m


def uniqueness_energy_check(run_a, run_b, grid: BlockGrid, curves: MediumCurves, dt: float) -> float:
    """Sum over steps of dt * integral (s_a - s_b)(beta(s_a) - beta(s_b))."""
    if len(run_a) != len(run_b):
        raise ValueError("runs have different lengths")
    total = 0.0
    for a, b in zip(run_a, run_b):
        if a.s.shape != b.s.shape or a.s.shape[-1] != grid.n_nodes:
            raise ValueError("runs live on different block grids")
        integrand = (a.s - b.s) * (curves._beta(a.s) - curves._beta(b.s))
        total += dt * float(np.sum(integrand @ grid.volume))
    return total


@dataclass
class BlockEnsemble:
    """Blocks attached to every macro cell."""

    grid: BlockGrid
    curves: MediumCurves
    state: BlockState
    substeps: int = 1
    last_Q: np.ndarray | None = None

    def advance(self, boundary_s, dt):
        """Return (new_state, Q_w) without committing."""
        new = block_step(self.state, self.grid, self.curves, boundary_s, dt, substeps=self.substeps)
        return new, transfer_source(self.state, new, self.grid, dt)

    def commit(self, new: BlockState, Q):
        self.state = new
        self.last_Q = Q


def trace_value(trace, t, dt):
    """Right-continuous piecewise-constant trace evaluated at t."""
    value = trace[0][1]
    for t0, v in trace:
        if t0 <= t + 1e-9 * dt:
            value = v
    return float(value)


def run_block_demo(grid: BlockGrid, curves: MediumCurves, s0: float, trace, dt: float, t_end: float):
    """Single block driven by a piecewise-constant boundary trace [(t_start, value), ...].

    Returns rows (t, boundary_s, mean_s, Q_w) and the list of states.
    """
    state = BlockState(np.full((1, grid.n_nodes), s0))
    rows, states = [], [state]
    n_steps = int(round(t_end / dt))
    for k in range(n_steps):
        t_new = (k + 1) * dt
        value = trace_value(trace, t_new, dt)
        new = block_step(state, grid, curves, value, dt)
        Q = transfer_source(state, new, grid, dt)[0]
        rows.append((t_new, value, float(block_mean(new, grid)[0]), float(Q)))
        state = new
        states.append(state)
    return rows, states
