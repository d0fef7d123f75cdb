"""Homogenized two-phase model in the three scaling regimes."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import blocks as blk
from .cell import EffectiveProps
from .fv import ConvergenceError, Sources, StructuredGrid, TwoPhaseFV
from .petrophysics import CurvePair

log = logging.getLogger(__name__)

MODERATE, CRITICAL, VERY_HIGH = "moderate", "critical", "very_high"


@dataclass(frozen=True)
class RegimeConfig:
    theta: float = 2.0
    coupling: bool = True  # False switches every exchange term off

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")

    @property
    def regime(self) -> str:
        if self.theta == 2.0:
            return CRITICAL
        return MODERATE if self.theta < 2.0 else VERY_HIGH


@dataclass(frozen=True)
class SourceSpec:
    """Injection/production rates per cell (1/s), active on [t_on, t_off)."""

    f_I: np.ndarray
    f_P: np.ndarray
    S_I_w: float = 1.0
    t_on: float = 0.0
    t_off: float = np.inf

    def __post_init__(self):
        if np.any(np.asarray(self.f_I) < 0) or np.any(np.asarray(self.f_P) < 0):
            raise ValueError("A.9: source rates must be nonnegative")
        if not 0.0 <= self.S_I_w <= 1.0:
            raise ValueError("A.9: injection saturation out of [0,1]")

    @property
    def S_I_n(self) -> float:
        return 1.0 - self.S_I_w

    def rates(self, t):
        on = self.t_on <= t < self.t_off
        f_I = np.asarray(self.f_I, float) * on
        f_P = np.asarray(self.f_P, float) * on
        return f_I, f_P

    @classmethod
    def none(cls, n):
        return cls(np.zeros(n), np.zeros(n))


def effective_sources(S, f_I, f_P, S_I_w, ratio):
    """(F*_w, F*_n) per unit volume; ``ratio`` is |Y_f|/|Y_m|."""
    S = np.asarray(S, float)
    Fw = (S_I_w * f_I - S * f_P) * ratio
    Fn = ((1.0 - S_I_w) * f_I - (1.0 - S) * f_P) * ratio
    return Fw, Fn


def regime_accumulation(regime: str, pair: CurvePair, phi_star, phi_hat_m, S):
    """Saturation-dependent storage per unit volume, beyond phi_star * S for the fracture part.

    Returns (phi_star * S, extra) where extra is phi_hat_m * P(S) in the
    moderate regime and 0 otherwise (blocks carry the storage at theta = 2).
    """
    S = np.asarray(S, float)
    base = phi_star * S
    if regime == MODERATE:
        return base, phi_hat_m * np.asarray(pair.coupling_P(S))
    return base, np.zeros_like(S)


@dataclass
class MacroState:
    S: np.ndarray
    P: np.ndarray
    t: float = 0.0
    blocks: blk.BlockState | None = None

    def phase_pressures(self, curves):
        return curves.phase_pressures(self.P, self.S)


@dataclass
class LedgerRow:
    t: float
    dt: float
    min_S: float
    max_S: float
    mean_S: float
    mass_fracture: float
    mass_matrix: float
    influx_w: float  # cumulative boundary inflow
    source_w: float  # cumulative F*_w
    exchange_w: float  # cumulative Q_w (into fracture)
    ledger_error: float  # relative


@dataclass
class MacroModel:
    grid: StructuredGrid
    pair: CurvePair
    props: EffectiveProps
    regime: RegimeConfig = field(default_factory=RegimeConfig)
    sources: SourceSpec | None = None
    gravity: tuple[float, ...] | None = None
    p_dirichlet: float = 0.0
    s_dirichlet: float = 1.0
    block_grid: blk.BlockGrid | None = None
    block_substeps: int = 1
    newton_tol: float = 1e-12

    def __post_init__(self):
        d = self.grid.d
        k = np.asarray(self.props.k_star, float)
        off = k - np.diag(np.diag(k))
        if np.max(np.abs(off)) > 1e-8 * max(np.max(np.abs(k)), 1e-300):
            warnings.warn("two-point fluxes drop the off-diagonal part of K*", stacklevel=2)
        kd = np.diag(k)[:d] if k.ndim == 2 else np.atleast_1d(k)[:d]
        self.phi_star = self.props.phi_star
        self.ratio = self.props.measure_f / self.props.measure_m
        self.fv = TwoPhaseFV(
            grid=self.grid, media=[self.pair.fracture], cell_medium=np.zeros(self.grid.n_cells, int),
            porosity=self.phi_star, perm=np.broadcast_to(kd, (self.grid.n_cells, d)),
            gravity=self.gravity, p_dirichlet=self.p_dirichlet, s_dirichlet=self.s_dirichlet,
            newton_tol=self.newton_tol,
        )
        if self.sources is None:
            self.sources = SourceSpec.none(self.grid.n_cells)
        self.volume = self.fv.volume
        if self.regime.regime == CRITICAL and self.regime.coupling and self.block_grid is None:
            raise ValueError("critical regime needs a block grid")

    @property
    def active_regime(self) -> str:
        return self.regime.regime if self.regime.coupling else VERY_HIGH

    def fv_sources(self, t) -> Sources:
        f_I, f_P = self.sources.rates(t)
        V = self.volume
        return Sources(
            inj_w=self.sources.S_I_w * f_I * self.ratio * V,
            inj_n=self.sources.S_I_n * f_I * self.ratio * V,
            prod=f_P * self.ratio * V,
        )

    def initial_state(self, S0, s_block0=None) -> MacroState:
        S0 = np.broadcast_to(np.asarray(S0, float), (self.grid.n_cells,)).copy()
        P, _ = self.fv.pressure_step(S0, self.fv_sources(0.0))
        blocks = None
        if self.active_regime == CRITICAL:
            if s_block0 is None:
                blocks = blk.equilibrium_state(self.block_grid, np.asarray(self.pair.coupling_P(S0)))
            else:
                blocks = blk.BlockState(np.broadcast_to(s_block0, (self.grid.n_cells, self.block_grid.n_nodes)))
        return MacroState(S0, P, 0.0, blocks)

    def _storage(self):
        if self.active_regime != MODERATE:
            return None
        pair, V, phm = self.pair, self.volume, self.props.phi_hat_m

        def storage(S):
            return phm * np.asarray(pair.coupling_P(S)) * V, phm * np.asarray(pair.coupling_P_prime(S)) * V

        return storage

    def matrix_mass(self, state: MacroState) -> float:
        r = self.active_regime
        if r == MODERATE:
            return float(np.sum(self.props.phi_hat_m * np.asarray(self.pair.coupling_P(state.S)) * self.volume))
        if r == CRITICAL:
            return float(np.sum(blk.matrix_mass(state.blocks, self.block_grid) * self.volume))
        return 0.0

    def fracture_mass(self, state: MacroState) -> float:
        return float(np.sum(self.phi_star * state.S * self.volume))

    def step(self, state: MacroState, dt: float):
        """One sequential step: pressure, blocks (critical regime), saturation.

        Returns (new_state, diagnostics dict) or raises ConvergenceError.
        """
        t_new = state.t + dt
        src = self.fv_sources(t_new)
        P, _ = self.fv.pressure_step(state.S, src)
        new_blocks, Q = state.blocks, None
        q_extra = None
        if self.active_regime == CRITICAL:
            bs = np.asarray(self.pair.coupling_P(state.S))
            new_blocks = blk.block_step(state.blocks, self.block_grid, self.pair.matrix, bs, dt,
                                        substeps=self.block_substeps)
            Q = blk.transfer_source(state.blocks, new_blocks, self.block_grid, dt)
            q_extra = Q * self.volume
        rep = self.fv.saturation_step(state.S, P, np.zeros(0), dt, src, storage=self._storage(), q_extra=q_extra)
        S = np.clip(rep.S, 0.0, 1.0)
        diag = dict(
            influx_w=rep.boundary_influx_w, source_w=rep.source_w,
            exchange_w=0.0 if q_extra is None else float(np.sum(q_extra)),
            Q=np.zeros_like(S) if Q is None else Q, newton=rep.newton_iterations,
        )
        return MacroState(S, P, t_new, new_blocks), diag

    def run(self, state: MacroState, t_end: float, dt_init: float, dt_max: float | None = None,
            callback=None, max_halvings: int = 10):
        """Integrate to t_end; returns (final state, ledger rows)."""
        dt_max = dt_init if dt_max is None else dt_max
        dt = dt_init
        m0f, m0m = self.fracture_mass(state), self.matrix_mass(state)
        cum = dict(influx_w=0.0, source_w=0.0, exchange_w=0.0)
        rows = [self._ledger_row(state, 0.0, m0f, m0m, cum, m0f, m0m)]
        streak, step_index = 0, 0
        while state.t < t_end * (1 - 1e-12):
            h = min(dt, t_end - state.t)
            for attempt in range(max_halvings + 1):
                try:
                    new, diag = self.step(state, h)
                    break
                except ConvergenceError as exc:
                    if attempt == max_halvings:
                        raise ConvergenceError(
                            f"step {step_index} at t={state.t:.6g} failed after {max_halvings} halvings: {exc}"
                        ) from exc
                    h *= 0.5
                    streak = 0
            for key in cum:
                cum[key] += h * diag[key]
            step_index += 1
            state = new
            streak += 1
            if h < dt:
                dt = h
            elif streak >= 5:
                dt = min(dt * 1.2, dt_max)
                streak = 0
            rows.append(self._ledger_row(state, h, self.fracture_mass(state), self.matrix_mass(state),
                                         cum, m0f, m0m))
            if callback is not None:
                callback(step_index, state, diag)
        return state, rows

    def _ledger_row(self, state, dt, mf, mm, cum, m0f, m0m):
        change = (mf + mm) - (m0f + m0m)
        # exchange cancels between fracture and matrix in the total balance
        budget = cum["influx_w"] + cum["source_w"]
        if self.active_regime == CRITICAL:
            change_f = mf - m0f
            err_f = abs(change_f - (budget + cum["exchange_w"]))
        else:
            err_f = 0.0
        scale = max(m0f + m0m, abs(cum["influx_w"]) + abs(cum["source_w"]), 1e-300)
        err = max(abs(change - budget), err_f) / scale
        return LedgerRow(
            t=state.t, dt=dt, min_S=float(state.S.min()), max_S=float(state.S.max()),
            mean_S=float(state.S.mean()), mass_fracture=mf, mass_matrix=mm,
            influx_w=cum["influx_w"], source_w=cum["source_w"], exchange_w=cum["exchange_w"],
            ledger_error=err,
        )
