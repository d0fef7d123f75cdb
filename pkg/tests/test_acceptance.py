"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import time

import numpy as np
import pytest

from dualpor.blocks import (
    BlockGrid,
    BlockState,
    block_step,
    boundary_flux,
    equilibrium_state,
    run_block_demo,
    transfer_source,
)
from dualpor.cell import build_geometry, effective_tensor, homogenize
from dualpor.convergence import StudyConfig, run_study
from dualpor.fv import Sources, StructuredGrid, TwoPhaseFV
from dualpor.macro import MacroModel, RegimeConfig, SourceSpec
from dualpor.micro import MicroModel, build_micro_grid
from dualpor.petrophysics import CurvePair, MediumCurves

# observed order of the Q1 cell problem on the box (corner singularity r^(2/3))
RICHARDSON_ORDER = 4.0 / 3.0


class Clock:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.s = time.perf_counter() - self.t0


def default_sources(n):
    x = (np.arange(n) + 0.5) / n
    return SourceSpec(np.where(x < 0.0625, 1.0, 0.0), np.where(np.abs(x - 0.5) < 0.03125, 1.0, 0.0))


def test_criterion_01_petrophysics_identities(pair, criterion):
    rng = np.random.default_rng(1)
    worst_alg = worst_fd = 0.0
    with Clock() as c:
        for curves in (pair.fracture, pair.matrix):
            s = rng.uniform(0.01, 0.99, 1000)
            gP = rng.normal(size=(1000, 2))
            h = rng.normal(size=(1000, 2))
            lw, ln = curves.mob_w(s), curves.mob_n(s)
            dpw = gP + curves.g_w_prime(s)[:, None] * h
            dpn = gP + curves.g_n_prime(s)[:, None] * h
            lhs = ln * np.sum(dpn**2, 1) + lw * np.sum(dpw**2, 1)
            rhs = (lw + ln) * np.sum(gP**2, 1) + curves.a_frak(s) ** 2 * np.sum(h**2, 1)
            worst_alg = max(worst_alg, np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs))))
            d = 1e-6
            fd_w = (curves.g_w(s + d) - curves.g_w(s - d)) / (2 * d)
            fd_n = (curves.g_n(s + d) - curves.g_n(s - d)) / (2 * d)
            a = curves.alpha(s)
            worst_fd = max(worst_fd, np.max(np.abs(lw * fd_w - a)), np.max(np.abs(ln * fd_n + a)))
    ok = worst_alg <= 1e-10 and worst_fd <= 1e-5 and c.s < 1.0
    criterion(1, "petrophysics identities", ok, f"alg={worst_alg:.2e} fd={worst_fd:.2e} t={c.s:.2f}s")


def test_criterion_02_coupling_closed_form(pair, criterion):
    with Clock() as c:
        S = np.linspace(0.0, 1.0, 101)
        err = float(np.max(np.abs(pair.coupling_P(S) - (np.sqrt(1 + 8 * S) - 1) / 2)))
    criterion(2, "coupling map closed form", err <= 1e-12 and c.s < 1.0, f"err={err:.2e} t={c.s:.2f}s")


def test_criterion_03_layered_tensor(criterion):
    with Clock() as c:
        geom = build_geometry("horizontal-slab", 128, 2, thickness=0.5)
        with pytest.warns(UserWarning):
            k, _, _ = effective_tensor(geom)
    e11, e22, asym = abs(k[0, 0] - 1.0), abs(k[1, 1]), abs(k[0, 1] - k[1, 0])
    ok = e11 <= 0.02 and e22 <= 1e-8 and asym <= 1e-10 and c.s < 30
    criterion(3, "effective tensor, layered", ok, f"|K11-1|={e11:.2e} |K22|={e22:.2e} asym={asym:.1e} t={c.s:.1f}s")


def test_criterion_04_box_tensor(criterion):
    with Clock() as c:
        diag = {}
        for n in (32, 64, 128):
            k, _, _ = effective_tensor(build_geometry("centered-box", n, 2, side=0.5))
            diag[n] = k[0, 0]
            if n == 64:
                iso, off = abs(k[0, 0] - k[1, 1]), abs(k[0, 1])
    f = 2.0**RICHARDSON_ORDER
    r1 = (f * diag[64] - diag[32]) / (f - 1)
    r2 = (f * diag[128] - diag[64]) / (f - 1)
    p_obs = np.log2((diag[32] - diag[64]) / (diag[64] - diag[128]))
    stable = float(f"{r1:.3g}") == float(f"{r2:.3g}")
    ok = iso <= 1e-8 and off <= 1e-8 and stable and c.s < 60
    criterion(4, "effective tensor, centered box", ok,
              f"|K11-K22|={iso:.1e} |K12|={off:.1e} R={r1:.6f},{r2:.6f} p_obs={p_obs:.2f} t={c.s:.1f}s")


def test_criterion_05_macro_conservation(pair, box16, criterion):
    with Clock() as c:
        props = homogenize(box16, 0.2)
        m = MacroModel(StructuredGrid((64,), (1.0,)), pair, props, RegimeConfig(2.0), sources=default_sources(64),
                       block_grid=BlockGrid.from_geometry(box16))
        _, rows = m.run(m.initial_state(0.2), 2.0, 0.01)
    ledger = max(r.ledger_error for r in rows)
    lo, hi = min(r.min_S for r in rows), max(r.max_S for r in rows)
    ok = len(rows) == 201 and ledger <= 1e-8 and lo >= -1e-12 and hi <= 1 + 1e-12 and c.s < 30
    criterion(5, "macro conservation and bounds", ok,
              f"steps={len(rows) - 1} ledger={ledger:.1e} S in [{lo:.3g},{hi:.3g}] t={c.s:.1f}s")


def test_criterion_06_block_solver(pair, box16, criterion):
    curves = pair.matrix
    with Clock() as c:
        g = BlockGrid.from_geometry(box16)
        eq = equilibrium_state(g, [0.0, 0.35, 1.0])
        fixed = bool(np.array_equal(block_step(eq, g, curves, [0.0, 0.35, 1.0], 0.05).s, eq.s))
        st0 = BlockState(np.full((3, g.n_nodes), 0.1))
        bs = np.array([0.3, 0.6, 0.95])
        new = block_step(st0, g, curves, bs, 0.01, tol=1e-15)
        q_err = float(np.max(np.abs(transfer_source(st0, new, g, 0.01) + boundary_flux(new, g, curves, bs) / g.measure_m)))
        lo = hi = BlockState(np.full((1, g.n_nodes), 0.2))
        ordered = True
        for k in range(50):
            b = 0.3 + 0.2 * np.sin(0.3 * k) ** 2
            lo, hi = block_step(lo, g, curves, b, 0.01), block_step(hi, g, curves, b + 0.1, 0.01)
            ordered &= bool(np.all(lo.s <= hi.s))
        trace = [(0.0, 0.2), (0.1, 0.9)]
        ra, sa = run_block_demo(g, curves, 0.2, trace, 0.01, 0.3)
        rb, sb = run_block_demo(g, curves, 0.2, trace, 0.01, 0.3)
        same = ra == rb and all(np.array_equal(a.s, b.s) for a, b in zip(sa, sb))
    ok = fixed and q_err <= 1e-10 and ordered and same and c.s < 30
    criterion(6, "block solver", ok, f"fixed={fixed} Q-flux={q_err:.1e} ordered={ordered} bitwise={same} t={c.s:.1f}s")


def test_criterion_07_memory_effect(pair, box16, criterion):
    with Clock() as c:
        g = BlockGrid.from_geometry(box16)
        rows, _ = run_block_demo(g, pair.matrix, 0.2, [(0.0, 0.2), (0.1, 0.9)], 0.005, 1.0)
    Q = np.array([r[3] for r in rows if r[0] >= 0.1 - 1e-12])
    pre = np.array([r[3] for r in rows if r[0] < 0.1 - 1e-12])
    single = bool(np.all(Q < 0))
    decaying = bool(np.all(np.diff(np.abs(Q)) < 0))
    ok = single and decaying and np.all(pre == 0.0) and c.s < 60
    criterion(7, "dual-porosity memory effect", ok,
              f"single-signed={single} decaying={decaying} |Q| {abs(Q[0]):.3g}->{abs(Q[-1]):.3g} t={c.s:.1f}s")


def test_criterion_08_regime_consistency(pair, box16, criterion):
    props = homogenize(box16, 0.2)
    bg = BlockGrid.from_geometry(box16)
    grid = StructuredGrid((64,), (1.0,))

    def series(theta, coupling=True, S0=0.2, s_dir=1.0, sources=True):
        m = MacroModel(grid, pair, props, RegimeConfig(theta, coupling), block_grid=bg, s_dirichlet=s_dir,
                       sources=default_sources(64) if sources else None)
        out = []
        m.run(m.initial_state(S0), 0.5, 0.01, callback=lambda k, st, d: out.append((st.S.copy(), d["Q"])))
        return out

    with Clock() as c:
        a, b = series(3.0), series(3.0, coupling=False)
        d_ab = max(float(np.max(np.abs(x[0] - y[0]))) for x, y in zip(a, b))
        # equilibrium-initialized blocks stay static when S is stationary
        runs = [series(th, cp, S0=0.6, s_dir=0.6, sources=False) for th, cp in ((2.0, True), (3.0, True), (3.0, False))]
        d_static = max(float(np.max(np.abs(x[0] - y[0]))) for r in runs[1:] for x, y in zip(runs[0], r))
        q_static = max(float(np.max(np.abs(x[1]))) for x in runs[0])
    ok = len(a) == len(b) == 50 and d_ab <= 1e-10 and d_static <= 1e-10 and q_static <= 1e-10 and c.s < 60
    criterion(8, "regime consistency", ok, f"theta3-vs-off={d_ab:.1e} static={d_static:.1e} Q={q_static:.1e} t={c.s:.1f}s")


def _study(pair, box8, theta):
    return run_study(box8, pair, StudyConfig(theta=theta))


def test_criterion_09_convergence_moderate(pair, box8, criterion):
    with Clock() as c:
        rows = _study(pair, box8, 1.0)
    e = [r.err_fracture for r in rows]
    ok = all(x > y for x, y in zip(e, e[1:])) and c.s < 300
    criterion(9, "homogenization convergence, theta=1", ok, f"errL2_f={', '.join(f'{x:.4g}' for x in e)} t={c.s:.0f}s")


def test_criterion_10_convergence_critical(pair, box8, criterion):
    with Clock() as c:
        rows = _study(pair, box8, 2.0)
    ef = [r.err_fracture for r in rows]
    em = [r.err_matrix for r in rows]
    dec = all(x > y for x, y in zip(ef, ef[1:])) and all(x > y for x, y in zip(em, em[1:]))
    criterion(10, "homogenization convergence, theta=2", dec and c.s < 600,
              f"errL2_f={', '.join(f'{x:.4g}' for x in ef)} errL2_m={', '.join(f'{x:.4g}' for x in em)} t={c.s:.0f}s")


def test_criterion_11_transparent_interface(box8, criterion):
    frac = MediumCurves("fracture", shape=0.0)
    same = CurvePair(frac, MediumCurves("matrix", shape=0.0))
    with Clock() as c:
        mg = build_micro_grid(box8, 0.25, 0.0)
        micro = MicroModel(mg, same, s_dirichlet=0.9)
        single = TwoPhaseFV(grid=mg.grid, media=[frac], cell_medium=np.zeros(mg.grid.n_cells, int),
                            porosity=mg.porosity, perm=mg.perm, s_dirichlet=0.9, newton_tol=1e-12)
        st = micro.initial_state(0.2)
        S = st.S.copy()
        worst = 0.0
        for _ in range(20):
            st, _ = micro.step(st, 0.01)
            P, U = single.pressure_step(S, Sources.zero(S.size))
            S = np.clip(single.saturation_step(S, P, U, 0.01, Sources.zero(S.size)).S, 0.0, 1.0)
            worst = max(worst, float(np.max(np.abs(st.S - S))))
    ok = micro.fv.n_interface == 0 and worst <= 1e-12 and c.s < 30
    criterion(11, "transparent interface", ok, f"max|dS|={worst:.1e} interfaces={micro.fv.n_interface} t={c.s:.1f}s")
