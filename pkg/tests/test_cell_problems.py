import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biot_homog.cell_problems import (RobinStepper, corrector_expansion, solve_elasticity_cell,
                                      solve_pressure_cell, solve_robin_evolution)
from biot_homog.effective import element_strain_integrals
from biot_homog.fem_core import assemble_elasticity, q1_element
from biot_homog.geometry import Cube, GeometryError, build_unit_cell, mesh_from_phase
from biot_homog.materials import PhaseMaterials

# regression baseline: 2D res=8 cube(0.5), lambda1 = lambda2 = 1, mu1 = 1, mu2 = 2
ENERGY_BASELINE = {(0, 0): 0.11279862693835782, (0, 1): 0.09369830977891747,
                   (1, 1): 0.112798626938358}


@pytest.fixture(scope="module")
def shear_contrast(cell2d):
    mat = PhaseMaterials.isotropic(2, 1.0, 1.0, 1.0, 2.0)
    return mat, solve_elasticity_cell(cell2d, mat)


def test_zero_contrast_correctors_vanish(cell3d):
    mat = PhaseMaterials.isotropic(3, 1.0, 1.0, 1.0, 1.0)
    ec = solve_elasticity_cell(cell3d, mat)
    assert max(np.abs(w).max() for w in ec.fields.values()) <= 1e-10


def test_corrector_residuals_small(shear_contrast):
    _, ec = shear_contrast
    assert max(ec.residuals.values()) <= 1e-10


def test_corrector_energy_baseline(cell2d, shear_contrast):
    mat, ec = shear_contrast
    op = assemble_elasticity(cell2d, mat.A1, mat.A2)
    for jk, expected in ENERGY_BASELINE.items():
        w = ec[jk].ravel()
        energy = w @ (op.matrix @ w)
        assert energy > 0
        assert energy == pytest.approx(expected, rel=1e-9)


def test_corrector_symmetric_storage_and_zero_mean(shear_contrast):
    _, ec = shear_contrast
    assert ec[1, 0] is ec[0, 1]
    assert len(ec.fields) == 3
    for w in ec.fields.values():
        assert np.abs(w.mean(axis=0)).max() <= 1e-12 * max(1.0, np.abs(w).max())


def test_pressure_correctors_residual_and_mean(cell3d):
    pcs = solve_pressure_cell(cell3d, np.eye(3))
    assert pcs.residuals.max() <= 1e-10
    assert np.abs(pcs.fields.mean(axis=1)).max() <= 1e-12
    assert np.isnan(pcs.on_lattice(0)).sum() == cell3d.n_nodes - pcs.fields.shape[1]


def test_pressure_corrector_cross_derivative_vanishes(cell2d):
    pcs = solve_pressure_cell(cell2d, np.eye(2))
    el = q1_element(2, cell2d.h)
    elems = np.flatnonzero(cell2d.voxel_labels() == 0)
    local = pcs.dofmap.local(cell2d.elem_nodes()[elems])
    grad = np.einsum("q,qac,ec->a", el.w, el.dN, pcs.fields[0][local])
    assert abs(grad[1]) <= 1e-10


@pytest.mark.parametrize("s", [0.1, 10.0])
def test_pressure_corrector_scaling_invariance(cell2d, s):
    K = np.array([[1.0, 0.2], [0.2, 0.7]])
    a = solve_pressure_cell(cell2d, K).fields
    b = solve_pressure_cell(cell2d, s * K).fields
    assert np.abs(a - b).max() <= 1e-10


def test_pressure_refuses_disconnected_matrix():
    phase = np.zeros((8, 8), dtype=bool)
    phase[1, 2:7] = phase[1:6, 6] = True
    phase[2:7, 1] = phase[6, 1:6] = True
    with pytest.raises(GeometryError, match="disconnected"):
        solve_pressure_cell(mesh_from_phase(phase), np.eye(2))


def test_shrinking_inclusion_pressure_correctors_decay():
    norms = []
    for side in (0.5, 0.375, 0.25, 0.125):
        mesh = build_unit_cell(2, 16, Cube(side))
        norms.append(np.abs(solve_pressure_cell(mesh, np.eye(2)).fields).max())
    assert all(a > b for a, b in zip(norms, norms[1:]))
    # corrector amplitude scales roughly with the inclusion size
    assert norms[-1] < 0.5 * norms[0]


def test_zeta_initial_and_steady_state(cell2d):
    zh = solve_robin_evolution(cell2d, 1.0, np.eye(2), 1.0, 0.5, 200)
    assert np.array_equal(zh.zeta[0], np.zeros_like(zh.zeta[0]))
    assert zh.flux[0] == zh.normal[0].sum() == zh.volume[0] == 0.0
    assert np.abs(zh.zeta[-1] - 1.0).max() <= 1e-10


def test_zeta_bounds_monotone_and_mass_balance(cell3d):
    c2, dt = 1.7, 0.01
    zh = solve_robin_evolution(cell3d, c2, 0.3 * np.eye(3), 2.0, dt, 40)
    z = zh.zeta
    assert z.min() >= -1e-12 and z.max() <= 1 + 1e-12
    assert np.diff(z, axis=0).min() >= -1e-12
    storage = c2 * np.diff(zh.volume) / dt
    exchange = zh.g_tilde - zh.flux[1:]
    assert np.abs(storage - exchange).max() <= 1e-8 * np.abs(exchange).max()


def test_robin_stepper_superposition(cell2d):
    st_ = RobinStepper(cell2d, 1.0, np.eye(2), 1.0, 0.1)
    rng = np.random.default_rng(3)
    prev = rng.random((st_.n_dofs, 3))
    data = np.array([0.5, -1.0, 2.0])
    stacked = st_.step(prev, data)
    for j in range(3):
        single = st_.step(prev[:, j], data[j])
        assert np.abs(stacked[:, j] - single).max() <= 1e-14


def test_robin_invalid_inputs(cell2d):
    with pytest.raises(ValueError):
        RobinStepper(cell2d, 1.0, np.eye(2), 1.0, 0.0)
    with pytest.raises(ValueError):
        RobinStepper(cell2d, -1.0, np.eye(2), 1.0, 0.1)
    with pytest.raises(ValueError):
        solve_robin_evolution(cell2d, 1.0, np.eye(2), 1.0, 0.1, -1)


def test_corrector_expansion_basis_and_zero(shear_contrast):
    _, ec = shear_contrast
    assert np.array_equal(corrector_expansion(ec, np.zeros((2, 2))), np.zeros_like(ec[0, 0]))
    e11 = np.zeros((2, 2))
    e11[0, 0] = 1.0
    assert np.array_equal(corrector_expansion(ec, e11), ec[0, 0])
    with pytest.raises(ValueError):
        corrector_expansion(ec, np.zeros((3, 3)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=8, max_size=8))
def test_corrector_expansion_linear(cell2d, shear_contrast, vals):
    _, ec = shear_contrast
    S1 = np.array(vals[:4]).reshape(2, 2)
    S2 = np.array(vals[4:6] + vals[5:6] + vals[6:7]).reshape(2, 2)
    a, b = vals[6], vals[7]
    lhs = corrector_expansion(ec, a * S1 + b * S2)
    rhs = a * corrector_expansion(ec, S1) + b * corrector_expansion(ec, S2)
    assert np.abs(lhs - rhs).max() <= 1e-12 * max(1.0, np.abs(rhs).max())


def test_pressure_expansion(cell2d):
    pcs = solve_pressure_cell(cell2d, np.eye(2))
    out = corrector_expansion(pcs, np.array([2.0, -1.0]))
    assert np.allclose(out, 2.0 * pcs[0] - pcs[1], atol=1e-15)
    with pytest.raises(ValueError):
        corrector_expansion(pcs, np.ones(3))


def test_strain_integrals_of_zero_field(cell2d):
    S = element_strain_integrals(cell2d, np.zeros((cell2d.n_nodes, 2)))
    assert S.shape == (64, 2, 2) and not S.any()
