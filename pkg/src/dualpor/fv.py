"""Two-point finite volumes on structured grids for the global-pressure formulation.

One scheme serves both the homogenized (single-medium) model and the
resolved fracture/matrix model.  A time step is sequential implicit: an
elliptic solve for the global pressure with saturation frozen, then a
Newton solve for saturation with the pressure frozen.  Fluxes are linear in
the Kirchhoff variable b = beta(S); Newton iterates on the blended variable
u = S + b / beta(1), whose derivatives with respect to S and b both stay
bounded where the capillary diffusion degenerates.

Faces between two cells carrying *different* curves are interface faces.
Their wetting flux is built from two half-cell fluxes glued by a trace
unknown tau = beta_f(sigma) on the fracture side; the matrix-side trace is
P(sigma), so capillary pressure and both phase pressures are continuous
at the face.  Faces between cells with identical curves use the ordinary
two-point flux whatever their medium label.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .petrophysics import CurvePair, MediumCurves

SIDES = ("xmin", "xmax", "ymin", "ymax")
_DERIV_FLOOR = 1e-14


class ConvergenceError(RuntimeError):
    """Nonlinear solve did not converge; callers may retry with a smaller step."""


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class StructuredGrid:
    """Axis-aligned grid over (0, Lx) or (0, Lx) x (0, Ly).

    ``dirichlet`` lists the sides forming the Dirichlet part of the boundary;
    every other side carries no flow.
    """

    shape: tuple[int, ...]
    lengths: tuple[float, ...]
    dirichlet: tuple[str, ...] = ("xmax",)

    def __post_init__(self):
        if len(self.shape) not in (1, 2) or len(self.lengths) != len(self.shape):
            raise ConfigurationError("grid must be 1D or 2D with matching lengths")
        if min(self.shape) < 1 or min(self.lengths) <= 0:
            raise ConfigurationError("grid sizes must be positive")
        allowed = SIDES[: 2 * len(self.shape)]
        for side in self.dirichlet:
            if side not in allowed:
                raise ConfigurationError(f"unknown side {side!r} for a {len(self.shape)}D grid")

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def face_area(self, axis: int) -> float:
        h = self.spacing
        return float(np.prod([h[k] for k in range(self.d) if k != axis]))

    def centers(self) -> np.ndarray:
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.shape, self.spacing)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def internal_faces(self):
        """(left, right, axis) index arrays; right = left + one step along axis."""
        idx = np.arange(self.n_cells).reshape(self.shape)
        lefts, rights, axes = [], [], []
        for axis in range(self.d):
            a = np.take(idx, np.arange(self.shape[axis] - 1), axis=axis).ravel()
            b = np.take(idx, np.arange(1, self.shape[axis]), axis=axis).ravel()
            lefts.append(a)
            rights.append(b)
            axes.append(np.full(a.size, axis))
        return np.concatenate(lefts), np.concatenate(rights), np.concatenate(axes)

    def boundary_faces(self, sides=None):
        """(cell, axis, outward sign) for the faces on the listed sides."""
        sides = self.dirichlet if sides is None else sides
        idx = np.arange(self.n_cells).reshape(self.shape)
        cells, axes, signs = [], [], []
        for side in sides:
            axis = SIDES.index(side) // 2
            sign = 1 if side.endswith("max") else -1
            pos = self.shape[axis] - 1 if sign > 0 else 0
            c = np.take(idx, [pos], axis=axis).ravel()
            cells.append(c)
            axes.append(np.full(c.size, axis))
            signs.append(np.full(c.size, sign))
        if not cells:
            return np.zeros(0, int), np.zeros(0, int), np.zeros(0, int)
        return np.concatenate(cells), np.concatenate(axes), np.concatenate(signs)


@dataclass
class Sources:
    """Volume-integrated injection and production rates per cell.

    Wetting source: inj_w - S * prod; nonwetting: inj_n - (1 - S) * prod.
    """

    inj_w: np.ndarray
    inj_n: np.ndarray
    prod: np.ndarray

    @classmethod
    def zero(cls, n):
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))

    def total(self):
        return self.inj_w + self.inj_n - self.prod

    def wetting(self, S):
        return self.inj_w - S * self.prod


@dataclass
class StepReport:
    S: np.ndarray
    sigma: np.ndarray
    boundary_influx_w: float  # volume rate into the domain through Dirichlet faces
    source_w: float  # integrated wetting source rate at the new level
    newton_iterations: int
    residual: float


@dataclass
class TwoPhaseFV:
    """Sequential-implicit two-point scheme over a structured grid.

    ``media[0]`` is the fracture medium; ``media[1]`` (optional) the matrix.
    ``perm`` holds the diagonal permeability per cell and axis.
    """

    grid: StructuredGrid
    media: list[MediumCurves]
    cell_medium: np.ndarray
    porosity: np.ndarray
    perm: np.ndarray
    gravity: tuple[float, ...] | None = None
    p_dirichlet: float = 0.0
    s_dirichlet: float = 1.0
    pair: CurvePair | None = None
    newton_tol: float = 1e-10
    max_newton: int = 60

    _built: bool = field(default=False, init=False, repr=False)

    def __post_init__(self):
        g = self.grid
        n = g.n_cells
        self.cell_medium = np.asarray(self.cell_medium, dtype=int).reshape(n)
        self.porosity = np.broadcast_to(np.asarray(self.porosity, float), (n,)).copy()
        perm = np.asarray(self.perm, dtype=float)
        self.perm = np.broadcast_to(perm if perm.ndim == 2 else perm.reshape(-1, 1), (n, g.d)).copy()
        grav = np.zeros(g.d) if self.gravity is None else np.asarray(self.gravity, float)
        self.gravity = tuple(float(x) for x in grav)
        self.volume = np.full(n, g.cell_volume)
        self._medium_cells = [np.flatnonzero(self.cell_medium == k) for k in range(len(self.media))]
        self._beta_one = self._cellwise("_beta_one_like", np.zeros(n))

        h = g.spacing
        left, right, axis = g.internal_faces()
        area = np.array([g.face_area(a) for a in range(g.d)])[axis]
        dist = np.array(h)[axis]
        half_l = 2.0 * area * self.perm[left, axis] / dist
        half_r = 2.0 * area * self.perm[right, axis] / dist
        gdx = grav[axis] * dist  # g . (x_right - x_left)

        ml, mr = self.cell_medium[left], self.cell_medium[right]
        same = np.array([[a.same_law(b) for b in self.media] for a in self.media], dtype=bool)
        differs = ~same[ml, mr]
        if differs.any() and self.pair is None:
            raise ConfigurationError("interface faces present but no curve pair supplied")

        reg = ~differs
        self.rf_i, self.rf_j = left[reg], right[reg]
        self.rf_T = 1.0 / (1.0 / half_l[reg] + 1.0 / half_r[reg])
        self.rf_g = gdx[reg]

        # interface faces oriented fracture -> matrix
        flip = ml[differs] != 0
        li, ri = left[differs], right[differs]
        self.if_f = np.where(flip, ri, li)
        self.if_m = np.where(flip, li, ri)
        self.if_Tf = np.where(flip, half_r[differs], half_l[differs])
        self.if_Tm = np.where(flip, half_l[differs], half_r[differs])
        self.if_g = np.where(flip, -gdx[differs], gdx[differs])

        bc, bax, bsign = g.boundary_faces()
        if bc.size and np.any(self.cell_medium[bc] != 0) and len(self.media) > 1:
            raise ConfigurationError("matrix cells touch the Dirichlet boundary")
        barea = np.array([g.face_area(a) for a in range(g.d)])[bax] if bc.size else np.zeros(0)
        self.bd_c = bc
        self.bd_T = 2.0 * barea * self.perm[bc, bax] / np.array(h)[bax] if bc.size else np.zeros(0)
        self.bd_g = grav[bax] * bsign * np.array(h)[bax] / 2.0 if bc.size else np.zeros(0)
        self._built = True

    @property
    def n_interface(self) -> int:
        return self.if_f.size

    # per-cell curve evaluation

    def _cellwise(self, fn_name, values):
        out = np.empty_like(values, dtype=float)
        for k, idx in enumerate(self._medium_cells):
            if idx.size:
                out[idx] = getattr(self.media[k], fn_name)(values[idx])
        return out

    def beta(self, S):
        return self._cellwise("_beta", S)

    def beta_inverse(self, b):
        return self._cellwise("_beta_inverse_raw", b)

    def total_mobility(self, S):
        return self._cellwise("_mob_w", S) + self._cellwise("_mob_n", S)

    def initial_traces(self, S):
        """Fracture-side traces for capillary equilibrium with the fracture cells."""
        return S[self.if_f].copy()

    # pressure

    def _interface_offset(self, sigma):
        frac, mat = self.media[0], self.media[1]
        mu = np.asarray(self.pair.coupling_P(sigma)) if sigma.size else sigma
        return (np.asarray(frac._gn(sigma)) - frac._pc(sigma)) - (np.asarray(mat._gn(mu)) - mat._pc(mu))

    def pressure_step(self, S, sources: Sources, sigma=None):
        """Global pressure and frozen interface total fluxes (fracture -> matrix)."""
        n = self.grid.n_cells
        lam = self.total_mobility(S)
        rows, cols, vals = [], [], []
        rhs = sources.total().astype(float).copy()

        c = self.rf_T * 0.5 * (lam[self.rf_i] + lam[self.rf_j])
        e = self.rf_g
        i, j = self.rf_i, self.rf_j
        rows += [i, i, j, j]
        cols += [i, j, j, i]
        vals += [c, -c, c, -c]
        np.add.at(rhs, i, -c * e)
        np.add.at(rhs, j, c * e)

        if self.n_interface:
            sigma = self.initial_traces(S) if sigma is None else sigma
            H = 1.0 / (1.0 / (self.if_Tf * lam[self.if_f]) + 1.0 / (self.if_Tm * lam[self.if_m]))
            ei = self.if_g + self._interface_offset(sigma)
            a, b = self.if_f, self.if_m
            rows += [a, a, b, b]
            cols += [a, b, b, a]
            vals += [H, -H, H, -H]
            np.add.at(rhs, a, -H * ei)
            np.add.at(rhs, b, H * ei)
        else:
            H = ei = np.zeros(0)

        if self.bd_c.size == 0:
            raise ConfigurationError("no Dirichlet boundary: pressure is determined only up to a constant")
        lam_d = self.media[0]._mob_w(self.s_dirichlet) + self.media[0]._mob_n(self.s_dirichlet)
        cb = self.bd_T * 0.5 * (lam[self.bd_c] + lam_d)
        rows.append(self.bd_c)
        cols.append(self.bd_c)
        vals.append(cb)
        np.add.at(rhs, self.bd_c, cb * (self.p_dirichlet - self.bd_g))

        A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        P = spla.spsolve(A, rhs)
        res = np.linalg.norm(A @ P - rhs) / max(np.linalg.norm(rhs), np.linalg.norm(A @ P), 1e-300)
        if not np.all(np.isfinite(P)):
            raise ConfigurationError("singular pressure system")
        U = H * (P[self.if_f] - P[self.if_m] + ei) if self.n_interface else np.zeros(0)
        self.last_pressure_residual = float(res)
        return P, U

    # saturation

    def u_of_s(self, S):
        return self._cellwise("_u_of_s", S)

    def _residual(self, u, tau, S_old, P, U, dt, sources, storage, q_extra, with_jacobian=True):
        n = self.grid.n_cells
        m = self.n_interface
        S = self._cellwise("_s_of_u", u)
        b = self.beta(S)
        bp = self._cellwise("_beta_prime_raw", S)
        dS = 1.0 / (1.0 + bp / self._beta_one)
        db = bp * dS
        lw = self._cellwise("_mob_w", S)
        lwp = self._cellwise("_mob_w_prime", S)

        R = self.porosity * self.volume * (S - S_old) / dt
        diag = self.porosity * self.volume * dS / dt
        if storage is not None:
            st_new, st_prime = storage(S)
            st_old, _ = storage(S_old)
            R += (st_new - st_old) / dt
            diag += st_prime * dS / dt
        R -= sources.wetting(S)
        diag += sources.prod * dS
        if q_extra is not None:
            R -= q_extra
        rows, cols, vals = [np.arange(n)], [np.arange(n)], [diag]

        # regular faces
        i, j, T = self.rf_i, self.rf_j, self.rf_T
        delta = P[i] - P[j] + self.rf_g
        up = delta >= 0
        lw_up = np.where(up, lw[i], lw[j])
        F = T * (lw_up * delta + b[i] - b[j])
        np.add.at(R, i, F)
        np.add.at(R, j, -F)
        dFi = T * (db[i] + np.where(up, lwp[i] * dS[i] * delta, 0.0))
        dFj = T * (-db[j] + np.where(up, 0.0, lwp[j] * dS[j] * delta))
        rows += [i, i, j, j]
        cols += [i, j, i, j]
        vals += [dFi, dFj, -dFi, -dFj]

        # Dirichlet faces
        frac = self.media[0]
        c, Tb = self.bd_c, self.bd_T
        delta = P[c] - self.p_dirichlet + self.bd_g
        up = delta >= 0
        sd = self.s_dirichlet
        lw_b = np.where(up, lw[c], frac._mob_w(sd))
        Fb = Tb * (lw_b * delta + b[c] - float(frac._beta(sd)))
        np.add.at(R, c, Fb)
        rows.append(c)
        cols.append(c)
        vals.append(Tb * (db[c] + np.where(up, lwp[c] * dS[c] * delta, 0.0)))

        E = np.zeros(m)
        sigma = np.zeros(m)
        if m:
            mat, pair = self.media[1], self.pair
            fcell, mcell = self.if_f, self.if_m
            Tf, Tm = self.if_Tf, self.if_Tm
            sigma = frac._beta_inverse_raw(tau)
            dsig = 1.0 / np.maximum(frac._beta_prime_raw(sigma), _DERIV_FLOOR)
            mu = np.asarray(pair.coupling_P(sigma))
            Mt = np.asarray(mat._beta(mu))
            Mp = np.asarray(pair.coupling_M_prime(tau))
            pos = U >= 0
            Sf, Sm = S[fcell], S[mcell]
            fwf = np.where(pos, frac._frac_w(Sf), frac._frac_w(sigma))
            fwm = np.where(pos, mat._frac_w(mu), mat._frac_w(Sm))
            Ff = fwf * U + Tf * (b[fcell] - tau)
            Fm = fwm * U + Tm * (Mt - b[mcell])
            E = Ff - Fm
            np.add.at(R, fcell, Ff)
            np.add.at(R, mcell, -Ff)

            dFf_uf = Tf * db[fcell] + np.where(pos, frac._frac_w_prime(Sf) * dS[fcell] * U, 0.0)
            dFf_tau = -Tf + np.where(pos, 0.0, frac._frac_w_prime(sigma) * dsig * U)
            Pp = np.asarray(pair.coupling_P_prime(sigma))
            dFm_tau = Tm * Mp + np.where(pos, mat._frac_w_prime(mu) * Pp * dsig * U, 0.0)
            dFm_um = -Tm * db[mcell] + np.where(pos, 0.0, mat._frac_w_prime(Sm) * dS[mcell] * U)
            k = n + np.arange(m)
            rows += [fcell, fcell, mcell, mcell, k, k, k]
            cols += [fcell, k, fcell, k, fcell, k, mcell]
            vals += [dFf_uf, dFf_tau, -dFf_uf, -dFf_tau, dFf_uf, dFf_tau - dFm_tau, -dFm_um]

        J = None
        if with_jacobian:
            J = sp.csc_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n + m, n + m)
            )
        return S, sigma, R, E, J, Fb

    def _merit(self, R, E, dt):
        cell = np.max(np.abs(R) * dt / (self.porosity * self.volume)) if R.size else 0.0
        face = np.max(np.abs(E) / (self.if_Tf * self.media[0].beta_one)) if E.size else 0.0
        return max(cell, face)

    def saturation_step(self, S_old, P, U, dt, sources: Sources, storage=None, q_extra=None,
                        sigma_old=None) -> StepReport:
        """Backward-Euler wetting update with the pressure and interface total fluxes frozen.

        ``storage(S) -> (value, derivative)`` adds a volume-integrated extra
        storage term; ``q_extra`` is an explicit volume-integrated wetting source.
        """
        n = self.grid.n_cells
        x = self.u_of_s(S_old)
        if self.n_interface:
            sig0 = self.initial_traces(S_old) if sigma_old is None else sigma_old
            tau = np.asarray(self.media[0]._beta(sig0), dtype=float)
            tau_top = self.media[0].beta_one
        else:
            tau = np.zeros(0)
            tau_top = 0.0
        args = (S_old, P, U, dt, sources, storage, q_extra)
        S, sigma, R, E, J, Fb = self._residual(x, tau, *args)
        merit = self._merit(R, E, dt)
        for it in range(1, self.max_newton + 1):
            if merit <= self.newton_tol:
                return self._report(S, sigma, Fb, sources, it - 1, merit)
            dx = spla.spsolve(J, -np.concatenate([R, E]))
            if not np.all(np.isfinite(dx)):
                raise ConvergenceError("singular saturation Jacobian")
            lam = 1.0
            for _ in range(9):
                x_try = np.clip(x + lam * dx[:n], 0.0, 2.0)
                tau_try = np.clip(tau + lam * dx[n:], 0.0, tau_top)
                trial = self._residual(x_try, tau_try, *args)
                m_try = self._merit(trial[2], trial[3], dt)
                if m_try < merit or lam < 1.0 / 128:
                    break
                lam *= 0.5
            x, tau = x_try, tau_try
            S, sigma, R, E, J, Fb = trial
            merit = m_try
        if merit <= self.newton_tol:
            return self._report(S, sigma, Fb, sources, self.max_newton, merit)
        raise ConvergenceError(f"saturation Newton stalled at residual {merit:.3e}")

    def _report(self, S, sigma, Fb, sources, iters, merit):
        return StepReport(
            S=S, sigma=sigma, boundary_influx_w=float(-np.sum(Fb)),
            source_w=float(np.sum(sources.wetting(S))), newton_iterations=iters, residual=float(merit),
        )
