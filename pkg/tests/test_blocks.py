import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualpor.blocks import (
    BlockEnsemble,
    BlockGrid,
    BlockState,
    block_mean,
    block_step,
    boundary_flux,
    equilibrium_state,
    matrix_mass,
    run_block_demo,
    trace_value,
    transfer_source,
    uniqueness_energy_check,
)


@pytest.fixture(scope="module")
def bgrid(box8):
    return BlockGrid.from_geometry(box8)


@pytest.fixture(scope="module")
def mcurves(pair):
    return pair.matrix


def test_grid_shape(bgrid, box8):
    assert bgrid.n_nodes == int(box8.matrix_mask.sum())
    assert bgrid.volume.sum() == pytest.approx(box8.measure_m)
    # every matrix cell in the 4x4 box touching the fracture has a Dirichlet face
    assert np.unique(bgrid.bd_node).size == 12


@pytest.mark.parametrize("level", [0.0, 0.3, 1.0])
def test_equilibrium_fixed_point(bgrid, mcurves, level):
    st0 = equilibrium_state(bgrid, [level, level])
    new = block_step(st0, bgrid, mcurves, level, 0.05)
    assert np.array_equal(new.s, st0.s)
    assert np.all(transfer_source(st0, new, bgrid, 0.05) == 0.0)


def test_exchange_equals_boundary_flux(bgrid, mcurves):
    st0 = BlockState(np.full((3, bgrid.n_nodes), 0.1))
    bs = np.array([0.4, 0.7, 0.95])
    dt = 0.01
    new = block_step(st0, bgrid, mcurves, bs, dt, tol=1e-15)
    Q = transfer_source(st0, new, bgrid, dt)
    flux = boundary_flux(new, bgrid, mcurves, bs)
    assert np.max(np.abs(Q + flux / bgrid.measure_m)) <= 1e-10
    assert np.all(Q < 0)


def test_comparison_principle(bgrid, mcurves):
    lo = hi = BlockState(np.full((1, bgrid.n_nodes), 0.2))
    for k in range(50):
        b_lo = 0.3 + 0.2 * np.sin(0.2 * k) ** 2
        lo = block_step(lo, bgrid, mcurves, b_lo, 0.01)
        hi = block_step(hi, bgrid, mcurves, b_lo + 0.15, 0.01)
        assert np.all(lo.s <= hi.s + 1e-13)


def test_uniqueness_regression(bgrid, mcurves):
    trace = [(0.0, 0.2), (0.05, 0.9)]
    rows_a, run_a = run_block_demo(bgrid, mcurves, 0.2, trace, 0.01, 0.3)
    rows_b, run_b = run_block_demo(bgrid, mcurves, 0.2, trace, 0.01, 0.3)
    assert rows_a == rows_b
    assert all(np.array_equal(a.s, b.s) for a, b in zip(run_a, run_b))
    assert uniqueness_energy_check(run_a, run_b, bgrid, mcurves, 0.01) == 0.0


def test_energy_check_positive_for_distinct_runs(bgrid, mcurves):
    _, a = run_block_demo(bgrid, mcurves, 0.2, [(0.0, 0.9)], 0.01, 0.1)
    _, b = run_block_demo(bgrid, mcurves, 0.2, [(0.0, 0.6)], 0.01, 0.1)
    assert uniqueness_energy_check(a, b, bgrid, mcurves, 0.01) > 0
    with pytest.raises(ValueError):
        uniqueness_energy_check(a, b[:-1], bgrid, mcurves, 0.01)


def test_trace_value_right_continuous():
    tr = [(0.0, 0.1), (0.5, 0.8)]
    assert trace_value(tr, 0.49, 0.01) == 0.1
    assert trace_value(tr, 0.5, 0.01) == 0.8


def test_mass_and_mean(bgrid):
    s = BlockState(np.full((2, bgrid.n_nodes), 0.5))
    assert np.allclose(block_mean(s, bgrid), 0.5)
    assert np.allclose(matrix_mass(s, bgrid), 0.5 * 0.3)


def test_invalid_inputs(bgrid, mcurves):
    with pytest.raises(ValueError):
        BlockState(np.full((1, bgrid.n_nodes), 1.2))
    st0 = equilibrium_state(bgrid, [0.5])
    with pytest.raises(ValueError):
        block_step(st0, bgrid, mcurves, 0.5, 0.0)
    with pytest.raises(ValueError):
        block_step(st0, bgrid, mcurves, 1.5, 0.1)


def test_ensemble_commit(bgrid, mcurves):
    ens = BlockEnsemble(bgrid, mcurves, equilibrium_state(bgrid, [0.2, 0.2]))
    new, Q = ens.advance([0.2, 0.8], 0.02)
    assert Q[0] == 0.0 and Q[1] < 0
    assert np.all(ens.state.s == 0.2)
    ens.commit(new, Q)
    assert ens.state is new and ens.last_Q is Q


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(1e-3, 0.1))
def test_step_bounded_by_data(s0, b, dt):
    from dualpor.petrophysics import reference_pair
    from dualpor.cell import build_geometry

    g = BlockGrid.from_geometry(build_geometry("centered-box", 8, 2, side=0.5))
    new = block_step(BlockState(np.full((1, g.n_nodes), s0)), g, reference_pair().matrix, b, dt)
    lo, hi = min(s0, b), max(s0, b)
    assert np.all(new.s >= lo - 1e-12) and np.all(new.s <= hi + 1e-12)
