import json

import numpy as np
import pytest

from biot_homog.cell_problems import solve_robin_evolution
from biot_homog.effective import homogenize
from biot_homog.geometry import MacroDomain
from biot_homog.macro_biot import MacroConfig, MacroConfigError, run_macro
from biot_homog.materials import PhaseMaterials
from biot_homog.verify import (CheckReport, PlainBiot, check_degenerate_limits,
                               check_kernel_laws, check_mode_equivalence, check_tensor_laws,
                               check_zeta_laws, corrupt_coefficients, run_suite)


def by_name(reports):
    return {r.name: r for r in reports}


def test_reports_serialize():
    r = CheckReport("x", True, 1.0, 0.0, 1e-12, "oracle")
    assert json.loads(json.dumps(r.to_dict()))["passed"] is True


def test_zero_contrast_coefficients(cell2d):
    mat = PhaseMaterials.isotropic(2, 1.3, 0.7, 1.3, 0.7)
    cs = homogenize(cell2d, mat, dt=0.05, steps=2)
    assert np.abs(cs.coefficients.A_eff - mat.A1).max() <= 1e-10
    assert all(r.passed for r in check_tensor_laws(cs.coefficients, mat))


def test_contrast_case_passes_all_tensor_laws(solution2d, contrast2d):
    reports = check_tensor_laws(solution2d.coefficients, contrast2d)
    assert all(r.passed for r in reports), [r for r in reports if not r.passed]
    assert {"A_eff.voigt_bound", "A_eff.reuss_bound", "K_eff.voigt_bound"} <= set(by_name(reports))


def test_negative_control_fails_major_symmetry(solution2d, contrast2d):
    bad = corrupt_coefficients(solution2d.coefficients)
    reports = by_name(check_tensor_laws(bad, contrast2d))
    assert not reports["A_eff.major_symmetry"].passed
    assert not reports["A_eff.energy_vs_volume"].passed
    assert reports["K_eff.symmetry"].passed


def test_zeta_and_kernel_laws(solution2d, contrast2d):
    reports = check_kernel_laws(solution2d.kernels, solution2d.coefficients, solution2d.zeta,
                                contrast2d)
    assert all(r.passed for r in reports), [r for r in reports if not r.passed]
    names = set(by_name(reports))
    assert {"zeta.mass_balance", "zeta.monotone", "kernels.theta_bound"} <= names


def test_zeta_law_violation_detected(cell2d, contrast2d):
    zh = solve_robin_evolution(cell2d, contrast2d.c2, contrast2d.K2, contrast2d.g, 0.05, 4)
    zeta = zh.zeta.copy()
    zeta[2] *= 1.5
    bad = type(zh)(**{**zh.__dict__, "zeta": zeta})
    reports = by_name(check_zeta_laws(bad, contrast2d.c2))
    assert not reports["zeta.upper_bound"].passed or not reports["zeta.monotone"].passed


def test_kernel_laws_lumped_cube(cell3d):
    mat = PhaseMaterials.isotropic(3, 1.0, 1.0, 1.0, 1.0, K2=1000.0)
    cs = homogenize(cell3d, mat, dt=0.01, steps=300)
    kt = cs.kernels
    assert abs(kt.cum_eta[-1] - 1.5) <= 0.02
    assert np.abs(kt.cum_theta).max() <= 1e-10
    reports = check_kernel_laws(kt, cs.coefficients, cs.zeta, mat)
    assert all(r.passed for r in reports), [r for r in reports if not r.passed]


def test_zero_horizon_sums_vanish(cell2d, contrast2d):
    cs = homogenize(cell2d, contrast2d, dt=0.05, steps=0)
    reports = by_name(check_kernel_laws(cs.kernels, cs.coefficients, cs.zeta, contrast2d))
    assert reports["kernels.zero_horizon"].passed
    assert reports["kernels.zero_horizon"].measured == 0.0


def test_no_interface_coupling_without_alpha2(cell3d):
    mat = PhaseMaterials.isotropic(3, 1.0, 1.0, 1.0, 1.0, alpha2=0.0)
    cs = homogenize(cell3d, mat, dt=0.05, steps=5)
    assert not cs.kernels.theta.any()
    assert cs.kernels.eta.max() > 0


def test_degenerate_limits_pass(cell2d, contrast2d, macro2d):
    reports = check_degenerate_limits(cell2d, contrast2d, macro2d, 0.05, 4,
                                      f1=[0.0, -1.0], f2=[0.0, -1.0])
    assert len(reports) == 4
    assert all(r.passed for r in reports), [r for r in reports if not r.passed]


def test_plain_oracle_sees_a_wrong_coefficient(cell2d, contrast2d, macro2d):
    mat = contrast2d.replace(g=0.0)
    cs = homogenize(cell2d, mat, f1=[0.0, -1.0], f2=[0.0, -1.0], dt=0.05, steps=4,
                    allow_zero_g=True)
    co = cs.coefficients
    ref_u, ref_p = PlainBiot(macro2d, co).run(0.05, 4, co.f_bar)
    off = co.replace(c_tilde=co.c_tilde * 1.01)
    hist = run_macro(MacroConfig(macro2d, off, cs.kernels, 0.05, 4))
    assert np.abs(hist.p1 - ref_p).max() > 1e-6


def test_mode_equivalence_check(solution2d, macro2d, cell2d, contrast2d):
    cfg = MacroConfig(macro2d, solution2d.coefficients, solution2d.kernels, 0.05, 16)
    r = check_mode_equivalence(cfg, cell2d, contrast2d)
    assert r.passed and r.measured <= 1e-8


def test_mismatched_time_step_raises(solution2d, macro2d):
    with pytest.raises(MacroConfigError):
        run_macro(MacroConfig(macro2d, solution2d.coefficients, solution2d.kernels, 0.1, 4))


def test_suite_and_negative_control(cell2d, contrast2d):
    dom = MacroDomain(2, (1.0, 1.0), (4, 4))
    good = run_suite(cell2d, contrast2d, dom, 0.05, 3)
    assert good.passed
    names = [r.name for r in good.reports]
    assert names == sorted(names)
    bad = run_suite(cell2d, contrast2d, dom, 0.05, 3, negative_control=True)
    assert not bad.passed
    failed = {r.name for r in bad.reports if not r.passed}
    assert "A_eff.major_symmetry" in failed
