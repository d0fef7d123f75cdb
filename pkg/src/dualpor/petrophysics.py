"""Constitutive curves for the fracture and matrix media and their global-pressure transforms.

Every curve accepts a scalar or an array of wetting saturations in [0, 1]
and returns the same shape.  Integral transforms (beta, G_n, the energy
transform b) are tabulated once on a uniform 2049-point grid with exact
node derivatives and evaluated by cubic Hermite interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.interpolate import CubicHermiteSpline

__all__ = [
    "DomainError",
    "MediumCurves",
    "CurvePair",
    "reference_pair",
    "curve_violations",
]

TABLE_POINTS = 2049
SAT_TOL = 1e-12
_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


class DomainError(ValueError):
    """Argument outside the domain of a constitutive map."""


def _as_sat(s, tol=SAT_TOL):
    s = np.asarray(s, dtype=float)
    if np.any(~np.isfinite(s)) or np.any(s < -tol) or np.any(s > 1.0 + tol):
        raise DomainError(f"saturation outside [0, 1]: {s.min() if s.size else s}..{s.max() if s.size else s}")
    return np.clip(s, 0.0, 1.0)


def _out(x):
    return x[()] if isinstance(x, np.ndarray) and x.ndim == 0 else x


def _safeguarded_newton(f, fprime, target, lo, hi, tol=1e-14, max_iter=100, ftol=0.0):
    """Vectorized Newton-bisection for an increasing f on brackets [lo, hi]."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        r = f(x) - target
        lo = np.where(r < 0, x, lo)
        hi = np.where(r > 0, x, hi)
        d = fprime(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_new = x - r / d
        bad = ~np.isfinite(x_new) | (x_new <= lo) | (x_new >= hi)
        x_new = np.where(bad, 0.5 * (lo + hi), x_new)
        done = np.all((np.abs(x_new - x) <= tol) | (hi - lo <= tol) | (np.abs(r) <= ftol))
        x = np.where(r == 0, x, x_new)
        if done:
            break
    return x


def _cumulative_integral(integrand, nodes):
    """Integral of ``integrand`` from nodes[0] to every node, by panelwise Gauss-Legendre."""
    a, b = nodes[:-1], nodes[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    pts = mid[:, None] + half[:, None] * _GL_X[None, :]
    panels = half * (integrand(pts) @ _GL_W)
    return np.concatenate([[0.0], np.cumsum(panels)])


@dataclass(frozen=True)
class MediumCurves:
    """Built-in curve family for one medium.

    mob_w(s) = s**exponent_w / mu_w, mob_n(s) = (1 - s)**exponent_n / mu_n and
    P_c(s) = entry_pressure * (1 - s) * (1 + shape * s) with 0 <= shape < 1,
    so P_c' < 0 on [0, 1] and P_c(1) = 0.  Mobilities carry the viscosity.
    """

    medium_id: Literal["fracture", "matrix"] = "fracture"
    exponent_w: float = 2.0
    exponent_n: float = 2.0
    mu_w: float = 1.0
    mu_n: float = 1.0
    entry_pressure: float = 1.0
    shape: float = 0.0

    _nodes: np.ndarray = field(init=False, repr=False, compare=False)
    _beta: CubicHermiteSpline = field(init=False, repr=False, compare=False)
    _beta_prime: CubicHermiteSpline = field(init=False, repr=False, compare=False)
    _gn: CubicHermiteSpline = field(init=False, repr=False, compare=False)
    _bfrak: CubicHermiteSpline = field(init=False, repr=False, compare=False)
    gn0: float = field(init=False, compare=False)
    beta_one: float = field(init=False, compare=False)

    def __post_init__(self):
        if self.medium_id not in ("fracture", "matrix"):
            raise ValueError(f"unknown medium_id {self.medium_id!r}")
        if self.exponent_w < 1 or self.exponent_n < 1:
            raise ValueError("mobility exponents must be >= 1")
        if self.mu_w <= 0 or self.mu_n <= 0:
            raise ValueError("viscosities must be positive")
        if self.entry_pressure <= 0:
            raise ValueError("entry_pressure must be positive")
        if not 0.0 <= self.shape < 1.0:
            raise ValueError("shape must lie in [0, 1) for a strictly decreasing P_c")

        nodes = np.linspace(0.0, 1.0, TABLE_POINTS)
        beta_nodes = _cumulative_integral(self._alpha_raw, nodes)
        beta = CubicHermiteSpline(nodes, beta_nodes, self._alpha_raw(nodes))
        gn_int = _cumulative_integral(self._gn_integrand, nodes)
        gn0 = gn_int[-1]
        gn = CubicHermiteSpline(nodes, gn0 - gn_int, -self._gn_integrand(nodes))
        bfrak = CubicHermiteSpline(nodes, _cumulative_integral(self._afrak_raw, nodes), self._afrak_raw(nodes))

        object.__setattr__(self, "_nodes", nodes)
        object.__setattr__(self, "_beta", beta)
        object.__setattr__(self, "_beta_prime", beta.derivative())
        object.__setattr__(self, "_gn", gn)
        object.__setattr__(self, "_bfrak", bfrak)
        object.__setattr__(self, "gn0", float(gn0))
        object.__setattr__(self, "beta_one", float(beta_nodes[-1]))

    def same_law(self, other: "MediumCurves") -> bool:
        """True when both media carry identical curves, whatever their labels."""
        keys = ("exponent_w", "exponent_n", "mu_w", "mu_n", "entry_pressure", "shape")
        return all(getattr(self, k) == getattr(other, k) for k in keys)

    # raw (unchecked) curves, used for tabulation and hot paths

    def _mob_w(self, s):
        return s**self.exponent_w / self.mu_w

    def _mob_n(self, s):
        return (1.0 - s) ** self.exponent_n / self.mu_n

    def _mob_w_prime(self, s):
        return self.exponent_w * s ** (self.exponent_w - 1.0) / self.mu_w

    def _mob_n_prime(self, s):
        return -self.exponent_n * (1.0 - s) ** (self.exponent_n - 1.0) / self.mu_n

    def _frac_w(self, s):
        mw = self._mob_w(s)
        return mw / (mw + self._mob_n(s))

    def _frac_w_prime(self, s):
        mw, mn = self._mob_w(s), self._mob_n(s)
        return (self._mob_w_prime(s) * mn - mw * self._mob_n_prime(s)) / (mw + mn) ** 2

    def _pc_prime(self, s):
        return self.entry_pressure * ((self.shape - 1.0) - 2.0 * self.shape * s)

    def _pc(self, s):
        return self.entry_pressure * (1.0 - s) * (1.0 + self.shape * s)

    def _alpha_raw(self, s):
        mw, mn = self._mob_w(s), self._mob_n(s)
        return mw * mn / (mw + mn) * np.abs(self._pc_prime(s))

    def _beta_prime_raw(self, s):
        return np.asarray(self._beta_prime(s))

    def _u_of_s(self, s):
        """Blended Newton variable u = s + beta(s) / beta(1), increasing from 0 to 2."""
        return s + np.asarray(self._beta(s)) / self.beta_one

    def _s_of_u(self, u):
        nodes = self._nodes
        u_nodes = nodes[:-1] + self._beta.c[-1] / self.beta_one
        k = np.clip(np.searchsorted(u_nodes, u, side="right") - 1, 0, len(nodes) - 2)
        c0, c1, c2, c3 = self._beta.c[:, k] / self.beta_one
        width = nodes[k + 1] - nodes[k]
        t = _safeguarded_newton(
            lambda t: t + ((c0 * t + c1) * t + c2) * t + c3,
            lambda t: 1.0 + (3.0 * c0 * t + 2.0 * c1) * t + c2,
            u - nodes[k], np.zeros_like(u), width, tol=1e-17, max_iter=40,
        )
        return np.where(u <= 0.0, 0.0, np.where(u >= 2.0, 1.0, t + nodes[k]))

    def _beta_one_like(self, s):
        return np.full(np.shape(s), self.beta_one)

    def _afrak_raw(self, s):
        mw, mn = self._mob_w(s), self._mob_n(s)
        return np.sqrt(mw * mn / (mw + mn)) * np.abs(self._pc_prime(s))

    def _gn_integrand(self, s):
        mw, mn = self._mob_w(s), self._mob_n(s)
        return mw / (mw + mn) * np.abs(self._pc_prime(s))

    # public curves

    def pc(self, s):
        return _out(self._pc(_as_sat(s)))

    def pc_prime(self, s):
        return _out(self._pc_prime(_as_sat(s)))

    def pc_inverse(self, p):
        """Saturation with ``pc(s) = p``; p must lie in [0, pc(0)]."""
        p = np.asarray(p, dtype=float)
        top = self.entry_pressure
        if np.any(p < -1e-12 * top) or np.any(p > top * (1 + 1e-12)):
            raise DomainError("capillary pressure outside [0, P_c(0)]")
        p = np.clip(p, 0.0, top)
        # positive root of c s^2 + (1 - c) s - q = 0 in cancellation-free form
        c = self.shape
        q = 1.0 - p / top
        s = 2.0 * q / ((1.0 - c) + np.sqrt((1.0 - c) ** 2 + 4.0 * c * q))
        return _out(np.clip(s, 0.0, 1.0))

    def mob_w(self, s):
        return _out(self._mob_w(_as_sat(s)))

    def mob_n(self, s):
        return _out(self._mob_n(_as_sat(s)))

    def mob(self, s):
        s = _as_sat(s)
        return _out(self._mob_w(s) + self._mob_n(s))

    def frac_w(self, s):
        s = _as_sat(s)
        mw = self._mob_w(s)
        return _out(mw / (mw + self._mob_n(s)))

    def alpha(self, s):
        return _out(self._alpha_raw(_as_sat(s)))

    def beta(self, s):
        return _out(np.asarray(self._beta(_as_sat(s))))

    def beta_prime(self, s):
        """Derivative of the tabulated beta (agrees with alpha to table accuracy)."""
        return _out(np.asarray(self._beta_prime(_as_sat(s))))

    def beta_inverse(self, b):
        b = np.asarray(b, dtype=float)
        top = self.beta_one
        if np.any(b < -1e-12 * top) or np.any(b > top * (1 + 1e-12)):
            raise DomainError("Kirchhoff value outside [0, beta(1)]")
        b = np.clip(b, 0.0, top)
        return _out(self._beta_inverse_raw(b))

    def _beta_inverse_raw(self, b):
        nodes = self._nodes
        vals = self._beta.c[-1]  # spline values at the left node of each interval
        k = np.clip(np.searchsorted(vals, b, side="right") - 1, 0, len(nodes) - 2)
        c0, c1, c2, c3 = self._beta.c[:, k]
        width = nodes[k + 1] - nodes[k]
        # local cubic in t = s - nodes[k], increasing on [0, width]
        s = _safeguarded_newton(
            lambda t: ((c0 * t + c1) * t + c2) * t + c3,
            lambda t: (3.0 * c0 * t + 2.0 * c1) * t + c2,
            b, np.zeros_like(b), width, tol=1e-17, max_iter=60, ftol=1e-16 * self.beta_one,
        ) + nodes[k]
        s = np.where(b <= 0.0, 0.0, np.where(b >= self.beta_one, 1.0, s))
        return s

    def a_frak(self, s):
        return _out(self._afrak_raw(_as_sat(s)))

    def b_frak(self, s):
        return _out(np.asarray(self._bfrak(_as_sat(s))))

    def g_n(self, s):
        return _out(np.asarray(self._gn(_as_sat(s))))

    def g_w(self, s):
        s = _as_sat(s)
        return _out(np.asarray(self._gn(s)) - self._pc(s))

    def g_n_prime(self, s):
        s = _as_sat(s)
        return _out(-self._gn_integrand(s))

    def g_w_prime(self, s):
        s = _as_sat(s)
        return _out(-self._gn_integrand(s) - self._pc_prime(s))

    def phase_pressures(self, global_pressure, s):
        """(p_w, p_n) reconstructed from the global pressure."""
        s = _as_sat(s)
        gn = np.asarray(self._gn(s))
        P = np.asarray(global_pressure, dtype=float)
        return _out(P + gn - self._pc(s)), _out(P + gn)

    def energy_density(self, s):
        """Integral of P_c from 1 to s (nonpositive, zero at s = 1)."""
        s = _as_sat(s)
        c = self.shape

        def prim(u):
            return u + (c - 1.0) * u**2 / 2.0 - c * u**3 / 3.0

        return _out(self.entry_pressure * (prim(s) - prim(1.0)))


def curve_violations(curves: MediumCurves, tag: str = "") -> list[str]:
    """Assumption checks that the constructor cannot enforce by itself."""
    out = []
    where = f" ({tag})" if tag else ""
    if curves.mu_w < 1.0 or curves.mu_n < 1.0:
        out.append(f"A.4: mobility exceeds 1{where}; viscosities must be >= 1 in normalized units")
    s = np.linspace(0.0, 1.0, 1001)
    lam = curves.mob(s)
    if lam.min() <= 0.0:
        out.append(f"A.4: total mobility not bounded below{where}")
    a = curves.alpha(s)
    if a[0] != 0.0 or a[-1] != 0.0 or np.any(a[1:-1] <= 0.0):
        out.append(f"A.5: alpha must vanish exactly at 0 and 1 and be positive inside{where}")
    return out


@dataclass(frozen=True)
class CurvePair:
    """Fracture and matrix curves plus the capillary coupling maps between them."""

    fracture: MediumCurves
    matrix: MediumCurves
    lipschitz_M: float = field(init=False, compare=False)

    def __post_init__(self):
        pf0, pm0 = self.fracture.entry_pressure, self.matrix.entry_pressure
        if abs(pf0 - pm0) > 1e-12 * max(1.0, abs(pf0)):
            raise ValueError(f"A.3: P_f,c(0) = {pf0} differs from P_m,c(0) = {pm0}")
        b = np.linspace(0.0, self.fracture.beta_one, 4001)
        m = self.coupling_M(b)
        if np.any(np.diff(m) < 0):
            raise ValueError("coupling map M is not monotone")
        object.__setattr__(self, "lipschitz_M", float(np.max(np.diff(m) / np.diff(b))))

    def coupling_P(self, S):
        """Matrix saturation in capillary equilibrium with fracture saturation S."""
        S = _as_sat(S)
        return self.matrix.pc_inverse(np.minimum(self.fracture._pc(S), self.matrix.entry_pressure))

    def coupling_P_prime(self, S):
        S = _as_sat(S)
        return _out(self.fracture._pc_prime(S) / self.matrix._pc_prime(np.asarray(self.coupling_P(S))))

    def coupling_M(self, b):
        """beta_m o P o beta_f^-1, mapping fracture Kirchhoff values to matrix ones."""
        s = self.fracture.beta_inverse(b)
        return self.matrix.beta(self.coupling_P(s))

    def coupling_M_prime(self, b, h=1e-7):
        b = np.asarray(b, dtype=float)
        top = self.fracture.beta_one
        s = np.asarray(self.fracture.beta_inverse(b))
        af = self.fracture._alpha_raw(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            sm = np.asarray(self.coupling_P(s))
            exact = self.matrix._alpha_raw(sm) * np.asarray(self.coupling_P_prime(s)) / af
        # degenerate endpoints: one-sided secant
        lo = np.clip(b - h * top, 0.0, top)
        hi = np.clip(b + h * top, 0.0, top)
        secant = (np.asarray(self.coupling_M(hi)) - np.asarray(self.coupling_M(lo))) / (hi - lo)
        return _out(np.where((af > 1e-8) & np.isfinite(exact), exact, secant))


def reference_pair(**overrides) -> CurvePair:
    """Reference family: P_f,c = 1 - s, P_m,c = (1 - s)(1 + s/2), quadratic mobilities."""
    frac = MediumCurves("fracture", shape=0.0, **overrides)
    mat = MediumCurves("matrix", shape=0.5, **overrides)
    return CurvePair(frac, mat)
