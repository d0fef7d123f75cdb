"""Periodic cell problem on the fracture part of the unit cell and effective coefficients.

Note the normalization: the effective tensor, the effective porosity and the
matrix/fracture exchange are all divided by |Y_m| rather than |Y|.  The
homogenized equations are consistent under this scaling (every term carries
the same factor), so macroscale solutions are unaffected.
"""

from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

log = logging.getLogger(__name__)

SHAPES = ("centered-box", "horizontal-slab", "custom")
WORKERS_ENV = "DUALPOR_WORKERS"


def worker_count() -> int:
    """Worker threads for independent solves; 1 unless the environment says otherwise."""
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


class GeometryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CellGeometry:
    """Unit cell Y = (0, 1)^d discretized by n^d square cells.

    ``perm`` has shape mask.shape + (d, d); ``porosity_m`` is only read on
    matrix cells.
    """

    matrix_mask: np.ndarray
    porosity_m: np.ndarray
    perm: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.matrix_mask, dtype=bool)
        object.__setattr__(self, "matrix_mask", mask)
        if mask.ndim not in (1, 2) or len(set(mask.shape)) != 1:
            raise GeometryError("mask must be a square 1D or 2D array")
        if not mask.any():
            raise GeometryError("measure_m must be positive (matrix mask is empty)")
        if mask.all():
            raise GeometryError("fracture part is empty")
        phi = np.broadcast_to(np.asarray(self.porosity_m, float), mask.shape).copy()
        if np.any((phi[mask] <= 0) | (phi[mask] >= 1)):
            raise GeometryError("A.1: matrix porosity out of (0,1)")
        object.__setattr__(self, "porosity_m", phi)
        d = mask.ndim
        K = np.asarray(self.perm, float)
        if K.shape == (d, d) or K.ndim == 0:
            K = np.broadcast_to(K * (np.eye(d) if K.ndim == 0 else 1.0), mask.shape + (d, d)).copy()
        if K.shape != mask.shape + (d, d):
            raise GeometryError(f"perm must have shape {mask.shape + (d, d)}")
        if not np.allclose(K, np.swapaxes(K, -1, -2)):
            raise GeometryError("A.2: permeability tensor must be symmetric")
        eig = np.linalg.eigvalsh(K.reshape(-1, d, d))
        if eig.min() <= 0:
            raise GeometryError("A.2: permeability not uniformly positive definite")
        object.__setattr__(self, "perm", K)

    @property
    def n(self) -> int:
        return self.matrix_mask.shape[0]

    @property
    def d(self) -> int:
        return self.matrix_mask.ndim

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def measure_m(self) -> float:
        return float(self.matrix_mask.mean())

    @property
    def measure_f(self) -> float:
        return 1.0 - self.measure_m

    @property
    def k_bounds(self) -> tuple[float, float]:
        eig = np.linalg.eigvalsh(self.perm.reshape(-1, self.d, self.d))
        return float(eig.min()), float(eig.max())

    def fracture_components(self) -> int:
        """Number of connected fracture components under periodic identification."""
        frac = ~self.matrix_mask
        idx = -np.ones(frac.shape, dtype=int)
        idx[frac] = np.arange(frac.sum())
        rows, cols = [], []
        for axis in range(self.d):
            nb = np.roll(idx, -1, axis=axis)
            both = (idx >= 0) & (nb >= 0)
            rows.append(idx[both])
            cols.append(nb[both])
        r, c = np.concatenate(rows), np.concatenate(cols)
        graph = sp.coo_matrix((np.ones(r.size), (r, c)), shape=(frac.sum(),) * 2)
        return int(connected_components(graph, directed=False)[0])


def _grid_index(value: float, n: int, what: str) -> int:
    k = value * n
    if abs(k - round(k)) > 1e-9:
        step = 1.0 / value if value > 0 else n
        raise GeometryError(f"{what} = {value} is not representable at n = {n}; try a multiple of {step:g}")
    return int(round(k))


def build_geometry(shape: str, n: int, d: int = 2, *, side: float | None = None,
                   thickness: float | None = None, mask_file: str | Path | None = None,
                   porosity_m=0.3, perm=1.0) -> CellGeometry:
    """Cell geometry from a shape descriptor.

    centered-box(side): matrix block |y_k - 1/2| < side/2 in every direction.
    horizontal-slab(thickness): matrix layer |y_d - 1/2| < thickness/2.
    custom: 0/1 text grid, one row per line, row r holding y_d index r.
    """
    if n < 4:
        raise GeometryError("cell resolution n must be at least 4")
    if shape == "custom":
        rows = [ln.split() for ln in Path(mask_file).read_text().splitlines() if ln.strip()]
        arr = np.array([[int(v) for v in r] for r in rows], dtype=bool)
        mask = arr[0] if arr.shape[0] == 1 else arr.T
        if mask.shape[0] != n:
            raise GeometryError(f"mask file resolution {mask.shape[0]} differs from n = {n}")
        return CellGeometry(mask, porosity_m, perm)
    if shape == "centered-box":
        lo = _grid_index(0.5 - side / 2.0, n, "box edge")
        axes = [np.arange(n)] * d
        mesh = np.meshgrid(*axes, indexing="ij")
        mask = np.ones((n,) * d, dtype=bool)
        for m in mesh:
            mask &= (m >= lo) & (m < n - lo)
    elif shape == "horizontal-slab":
        lo = _grid_index(0.5 - thickness / 2.0, n, "slab edge")
        last = np.arange(n)
        layer = (last >= lo) & (last < n - lo)
        mask = np.broadcast_to(layer, (n,) * d).copy() if d == 2 else layer
    else:
        raise GeometryError(f"unknown shape {shape!r}; expected one of {SHAPES}")
    return CellGeometry(mask, porosity_m, perm)


@dataclass(frozen=True, eq=False)
class EffectiveProps:
    k_star: np.ndarray
    phi_star: float
    phi_hat_m: float
    xi: tuple[np.ndarray, ...]
    measure_m: float
    measure_f: float
    method: str = "fe"


# ---------------------------------------------------------------------------
# conforming Q1 elements on the periodic fracture mesh


def _q1_reference(d: int):
    """Gauss points/weights and shape-function gradients on the unit reference cell."""
    g = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
    corners = np.array(np.meshgrid(*([[0, 1]] * d), indexing="ij")).reshape(d, -1).T  # (2^d, d)
    pts = np.array(np.meshgrid(*([g] * d), indexing="ij")).reshape(d, -1).T  # (q, d)
    w = np.full(len(pts), 0.5**d)
    grads = np.empty((len(pts), len(corners), d))
    for a, c in enumerate(corners):
        lin = np.where(c == 1, pts, 1.0 - pts)  # (q, d)
        dlin = np.where(c == 1, 1.0, -1.0)  # (d,)
        for k in range(d):
            others = np.prod(np.delete(lin, k, axis=1), axis=1) if d > 1 else 1.0
            grads[:, a, k] = dlin[k] * others
    return corners, w, grads


def _fe_system(geom: CellGeometry):
    n, d, h = geom.n, geom.d, geom.h
    corners, w, grads = _q1_reference(d)
    grads = grads / h
    cells = np.argwhere(~geom.matrix_mask)  # (E, d)
    node_of = lambda c: np.ravel_multi_index(tuple(np.mod(c, n).T), (n,) * d)  # noqa: E731
    conn = np.stack([node_of(cells + cor) for cor in corners], axis=1)  # (E, 2^d)
    K = geom.perm[tuple(cells.T)]  # (E, d, d)
    vol = h**d
    Ke = np.einsum("q,qak,ekl,qbl->eab", w * vol, grads, K, grads)
    B = np.einsum("q,qak->ak", w * vol, grads)  # integral of shape gradients over one element
    C = np.einsum("ak,ekj->eaj", B, K)  # integral of grad(phi_a) . K e_j
    mass = np.full(len(corners), vol / len(corners))

    active, local = np.unique(conn, return_inverse=True)
    local = local.reshape(conn.shape)
    N = active.size
    rows = np.repeat(local, local.shape[1], axis=1).ravel()
    cols = np.tile(local, (1, local.shape[1])).ravel()
    A = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(N, N))
    rhs = np.zeros((N, d))
    np.add.at(rhs, local, -C)
    m = np.zeros(N)
    np.add.at(m, local, np.broadcast_to(mass, local.shape))
    return dict(A=A, rhs=rhs, mass=m, local=local, Ke=Ke, C=C, K=K, active=active, vol=vol)


def _solve_singular_spd(A, rhs, mass, tol=1e-12):
    """Solve A x = rhs with one pinned node per connected component, then zero-mean each component."""
    ncomp, labels = connected_components(A, directed=False)
    pins = np.array([np.flatnonzero(labels == c)[0] for c in range(ncomp)])
    keep = np.setdiff1d(np.arange(A.shape[0]), pins)
    Ar = A[keep][:, keep].tocsr()
    br = rhs[keep]
    x = np.zeros(A.shape[0])
    if keep.size:
        diag = Ar.diagonal()
        M = sp.diags(1.0 / diag)
        xr, info = spla.cg(Ar, br, rtol=tol, atol=0.0, maxiter=20 * keep.size, M=M)
        if info != 0:
            raise np.linalg.LinAlgError(f"cell problem CG did not converge (info={info})")
        x[keep] = xr
    for c in range(ncomp):
        sel = labels == c
        x[sel] -= np.dot(mass[sel], x[sel]) / mass[sel].sum()
    res = np.linalg.norm(A @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
    return x, res


def solve_cell_problem(geom: CellGeometry, j: int, method: str = "fe"):
    """Corrector for direction j (0-based) as a field on the fracture degrees of freedom.

    "fe": nodal Q1 values on the (n^d periodic) vertex grid, NaN where no
    fracture element touches.  "tpfa": cell values on the n^d cell grid, NaN on
    matrix cells.
    """
    if not 0 <= j < geom.d:
        raise ValueError(f"direction index {j} out of range for d = {geom.d}")
    if method == "fe":
        sysm = _fe_system(geom)
        x, _ = _solve_singular_spd(sysm["A"], sysm["rhs"][:, j], sysm["mass"])
        field = np.full(geom.n**geom.d, np.nan)
        field[sysm["active"]] = x
        return field.reshape((geom.n,) * geom.d)
    if method == "tpfa":
        sysm = _tpfa_system(geom)
        x, _ = _solve_singular_spd(sysm["A"], sysm["rhs"][:, j], sysm["mass"])
        field = np.full(geom.matrix_mask.shape, np.nan)
        field[~geom.matrix_mask] = x
        return field
    raise ValueError(f"unknown method {method!r}")


def _fe_energy(geom, sysm, X):
    """Matrix of integrals of K (grad xi_i + e_i) . (grad xi_j + e_j) over Y_f."""
    loc = X[sysm["local"]]  # (E, 2^d, d)
    Ke, C, K = sysm["Ke"], sysm["C"], sysm["K"]
    E = np.einsum("eai,eab,ebj->ij", loc, Ke, loc)
    E += np.einsum("eai,eaj->ij", loc, C) + np.einsum("eaj,eai->ij", loc, C)
    E += sysm["vol"] * K.sum(axis=0)
    return E


def _tpfa_system(geom: CellGeometry):
    d, h = geom.d, geom.h
    frac = ~geom.matrix_mask
    idx = -np.ones(frac.shape, dtype=int)
    idx[frac] = np.arange(frac.sum())
    N = int(frac.sum())
    rows, cols, vals = [], [], []
    rhs = np.zeros((N, d))
    faces = []
    for axis in range(d):
        nb = np.roll(idx, -1, axis=axis)
        k_here = geom.perm[..., axis, axis]
        k_nb = np.roll(k_here, -1, axis=axis)
        both = (idx >= 0) & (nb >= 0)
        a, b = idx[both], nb[both]
        kf = 2.0 * k_here[both] * k_nb[both] / (k_here[both] + k_nb[both])
        T = kf * h ** (d - 2)
        rows += [a, a, b, b]
        cols += [a, b, b, a]
        vals += [T, -T, T, -T]
        # minimize sum T (x_b - x_a + h e_axis . e_j)^2
        np.add.at(rhs[:, axis], a, T * h)
        np.add.at(rhs[:, axis], b, -T * h)
        faces.append((a, b, axis, kf))
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    return dict(A=A, rhs=rhs, mass=np.full(N, h**d), faces=faces, vol=h**d)


def _tpfa_energy(geom, sysm, X):
    d, h = geom.d, geom.h
    E = np.zeros((d, d))
    for a, b, axis, kf in sysm["faces"]:
        # normal difference quotient of xi_i + y_i across the face, for each i
        g = (X[b] - X[a]) / h
        g[:, axis] += 1.0
        E += np.einsum("f,fi,fj->ij", kf * h**d, g, g)
    return E


def effective_tensor(geom: CellGeometry, method: str = "fe"):
    """(k_star, correctors, relative solver residuals)."""
    sysm = _fe_system(geom) if method == "fe" else _tpfa_system(geom)
    d = geom.d

    def solve(j):
        return _solve_singular_spd(sysm["A"], sysm["rhs"][:, j], sysm["mass"])

    n_workers = min(d, worker_count())
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            results = list(pool.map(solve, range(d)))
    else:
        results = [solve(j) for j in range(d)]
    cols = [x for x, _ in results]
    res = [r for _, r in results]
    X = np.stack(cols, axis=1)
    energy = _fe_energy(geom, sysm, X) if method == "fe" else _tpfa_energy(geom, sysm, X)
    k_star = 0.5 * (energy + energy.T) / geom.measure_m
    voigt = geom.k_bounds[1] * geom.measure_f / geom.measure_m
    for j in range(d):
        if k_star[j, j] < 1e-12 * voigt:
            warnings.warn(f"fracture is blocked in direction {j + 1}: effective permeability vanishes",
                          stacklevel=2)
    if geom.fracture_components() > 1:
        warnings.warn("fracture part is not connected under periodic identification", stacklevel=2)
    if method == "fe":
        fields = []
        for j in range(d):
            f = np.full(geom.n**d, np.nan)
            f[sysm["active"]] = X[:, j]
            fields.append(f.reshape((geom.n,) * d))
    else:
        fields = []
        for j in range(d):
            f = np.full(geom.matrix_mask.shape, np.nan)
            f[~geom.matrix_mask] = X[:, j]
            fields.append(f)
    return k_star, tuple(fields), res


def effective_porosity(phi_f_H: float, geom: CellGeometry) -> float:
    if not 0.0 < phi_f_H < 1.0:
        raise ValueError("A.1: fracture porosity out of (0,1)")
    if geom.measure_m <= 0:
        raise GeometryError("measure_m must be positive")
    return phi_f_H * geom.measure_f / geom.measure_m


def averaged_matrix_porosity(geom: CellGeometry) -> float:
    mask = geom.matrix_mask
    if not mask.any():
        raise GeometryError("measure_m must be positive")
    return float(geom.porosity_m[mask].mean())


def homogenize(geom: CellGeometry, phi_f_H: float, method: str = "fe") -> EffectiveProps:
    k_star, xi, res = effective_tensor(geom, method)
    log.info("cell problem solved (%s, n=%d), residuals %s", method, geom.n, res)
    return EffectiveProps(
        k_star=k_star,
        phi_star=effective_porosity(phi_f_H, geom),
        phi_hat_m=averaged_matrix_porosity(geom),
        xi=xi,
        measure_m=geom.measure_m,
        measure_f=geom.measure_f,
        method=method,
    )


def reconstruct_correctors(props: EffectiveProps, grad_P, grad_beta, g=None):
    """First-order correctors w_p = sum_j xi_j (dP/dx_j - g_j) and w_s = sum_j xi_j d beta_f / dx_j."""
    d = len(props.xi)
    grad_P = np.asarray(grad_P, float).reshape(d)
    grad_beta = np.asarray(grad_beta, float).reshape(d)
    g = np.zeros(d) if g is None else np.asarray(g, float).reshape(d)
    w_p = sum(props.xi[j] * (grad_P[j] - g[j]) for j in range(d))
    w_s = sum(props.xi[j] * grad_beta[j] for j in range(d))
    return w_p, w_s
