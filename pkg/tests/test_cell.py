import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualpor.cell import (
    CellGeometry,
    GeometryError,
    _fe_system,
    _tpfa_system,
    averaged_matrix_porosity,
    build_geometry,
    effective_porosity,
    effective_tensor,
    homogenize,
    reconstruct_correctors,
    solve_cell_problem,
)


def slab(n, **kw):
    return build_geometry("horizontal-slab", n, 2, thickness=0.5, **kw)


def quiet_tensor(geom, method="fe"):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return effective_tensor(geom, method)


def test_measures():
    assert build_geometry("centered-box", 64, 2, side=0.5).measure_m == 0.25
    g = slab(64)
    assert g.measure_m == 0.5 and g.measure_f == 0.5
    assert abs(g.measure_m + g.measure_f - 1.0) <= 1e-14


def test_empty_matrix_rejected(tmp_path):
    f = tmp_path / "mask.txt"
    f.write_text("\n".join(["0 0 0 0"] * 4))
    with pytest.raises(GeometryError, match="measure_m must be positive"):
        build_geometry("custom", 4, 2, mask_file=f)


def test_custom_mask_orientation(tmp_path):
    f = tmp_path / "mask.txt"
    rows = ["0 0 0 0", "1 1 1 1", "1 1 1 1", "0 0 0 0"]
    f.write_text("\n".join(rows))
    g = build_geometry("custom", 4, 2, mask_file=f)
    # line r is y_2 index r, so this is a horizontal slab
    assert np.array_equal(g.matrix_mask, slab(4).matrix_mask)


def test_not_representable_suggests_n():
    with pytest.raises(GeometryError, match="try a multiple"):
        build_geometry("centered-box", 10, 2, side=0.3)


def test_small_n_rejected():
    with pytest.raises(GeometryError):
        build_geometry("centered-box", 2, 2, side=0.5)


def test_slab_correctors_analytic():
    g = slab(32)
    xi1 = solve_cell_problem(g, 0)
    assert np.nanmax(np.abs(xi1)) <= 1e-10
    xi2 = solve_cell_problem(g, 1)
    # xi_2 = -y_2 + const on each fracture band, so its y_2 difference is -h
    nodes = ~np.isnan(xi2)
    y = np.arange(32) / 32
    band = nodes[0] & np.roll(nodes[0], -1)
    dy = np.roll(xi2[0], -1) - xi2[0]
    inside = band & (np.arange(32) < 31) & (y >= 0.75 - 1e-12)
    assert np.allclose(dy[inside], -1 / 32, atol=1e-9)


@pytest.mark.parametrize("method", ["fe", "tpfa"])
@pytest.mark.parametrize("geom", [slab(16), build_geometry("centered-box", 16, 2, side=0.5)])
def test_galerkin_orthogonality_and_compatibility(geom, method):
    sysm = _fe_system(geom) if method == "fe" else _tpfa_system(geom)
    assert np.all(np.abs(sysm["rhs"].sum(axis=0)) <= 1e-12)
    k, xi, res = quiet_tensor(geom, method)
    assert max(res) <= 1e-10
    if method == "fe":
        for j in range(geom.d):
            x = xi[j].ravel()[sysm["active"]]
            # integral of K (grad xi + e_j) . grad xi = x^T A x - x^T rhs
            val = x @ (sysm["A"] @ x) - x @ sysm["rhs"][:, j]
            assert abs(val) <= 1e-9


def test_slab_tensor():
    k, _, _ = quiet_tensor(slab(64))
    assert abs(k[0, 0] - 1.0) <= 0.02
    assert abs(k[1, 1]) <= 1e-8


def test_blocked_direction_warns():
    with pytest.warns(UserWarning, match="blocked"):
        effective_tensor(slab(16))


def test_box_symmetry_and_voigt(box16):
    k, _, _ = effective_tensor(box16)
    assert abs(k[0, 0] - k[1, 1]) <= 1e-8 and abs(k[0, 1]) <= 1e-8
    bound = box16.k_bounds[1] * box16.measure_f / box16.measure_m
    assert np.max(np.linalg.eigvalsh(k)) <= bound + 1e-9
    assert np.min(np.linalg.eigvalsh(k)) >= -1e-10


def test_box_self_convergence_monotone():
    ks = [effective_tensor(build_geometry("centered-box", n, 2, side=0.5))[0][0, 0] for n in (16, 32, 64, 128)]
    gaps = np.abs(np.diff(ks))
    assert np.all(np.diff(gaps) < 0)


def test_scaling_and_traversal_invariance(box16):
    k1, xi1, _ = effective_tensor(box16)
    scaled = CellGeometry(box16.matrix_mask, box16.porosity_m, 3.5 * box16.perm)
    k2, xi2, _ = effective_tensor(scaled)
    assert np.max(np.abs(k2 - 3.5 * k1)) <= 1e-12 * np.max(np.abs(k2))
    # mirrored cell: same tensor
    flipped = CellGeometry(box16.matrix_mask[::-1, ::-1], box16.porosity_m, box16.perm)
    k3, _, _ = effective_tensor(flipped)
    assert np.max(np.abs(k3 - k1)) <= 1e-12


def test_porosities(box16):
    g = slab(16)
    assert effective_porosity(0.2, g) == pytest.approx(0.2)
    assert effective_porosity(0.2, box16) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        effective_porosity(1.2, g)
    assert averaged_matrix_porosity(box16) == pytest.approx(0.3)


def test_linear_matrix_porosity():
    n = 64
    y1 = (np.arange(n) + 0.5) / n
    phi = np.broadcast_to((0.2 + 0.2 * y1)[:, None], (n, n))
    g = build_geometry("horizontal-slab", n, 2, thickness=0.5, porosity_m=phi)
    assert averaged_matrix_porosity(g) == pytest.approx(0.3, abs=1e-14)


def test_reconstruct_correctors():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        props = homogenize(slab(16), 0.2)
    g = np.array([0.0, -1.0])
    wp, ws = reconstruct_correctors(props, g, [0.0, 0.0], g)
    assert np.nanmax(np.abs(wp)) == 0.0 and np.nanmax(np.abs(ws)) == 0.0
    wp, _ = reconstruct_correctors(props, [1.0, 0.0], [0.0, 0.0])
    assert np.nanmax(np.abs(wp)) <= 1e-10
    a = reconstruct_correctors(props, [0.3, 0.7], [0.1, -0.2])
    b = reconstruct_correctors(props, [0.6, 1.4], [0.2, -0.4])
    assert np.array_equal(np.nan_to_num(2 * a[0]), np.nan_to_num(b[0]))
    assert np.array_equal(np.nan_to_num(2 * a[1]), np.nan_to_num(b[1]))


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.floats(0.5, 4.0), st.floats(0.5, 4.0))
def test_tensor_psd_symmetric_voigt(k4, kf, km):
    n = 16
    side = k4 / 4
    g0 = build_geometry("centered-box", n, 2, side=side)
    K = np.where(g0.matrix_mask, km, kf)[..., None, None] * np.eye(2)
    g = CellGeometry(g0.matrix_mask, 0.3, K)
    k, _, _ = quiet_tensor(g)
    assert abs(k[0, 1] - k[1, 0]) <= 1e-10
    assert np.min(np.linalg.eigvalsh(k)) >= -1e-10
    assert np.max(np.linalg.eigvalsh(k)) <= g.k_bounds[1] * g.measure_f / g.measure_m + 1e-9
