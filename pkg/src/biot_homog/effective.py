"""Homogenized coefficients and memory kernels assembled from cell solutions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cell_problems import (elastic_load, solve_elasticity_cell, solve_pressure_cell,
                            solve_robin_evolution)
from .fem_core import assemble_elasticity, q1_element, strain_operator
from .materials import mandel, sym_pairs, unit_strain


@dataclass(frozen=True, eq=False)
class EffectiveCoefficients:
    A_eff: np.ndarray
    K_eff: np.ndarray
    B: np.ndarray
    Lambda: np.ndarray
    c_tilde: float
    g_tilde: float
    f_bar: np.ndarray
    vol_fracs: tuple
    A_eff_volume: np.ndarray | None = None
    B_volume: np.ndarray | None = None
    run_info: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.K_eff.shape[0]

    def replace(self, **kw):
        data = dict(self.__dict__)
        data.update(kw)
        return EffectiveCoefficients(**data)


def _fill_minor(A_pairs, dim):
    """Full d^4 tensor from entries given for (i<=j, k<=l)."""
    A = np.empty((dim,) * 4)
    for (i, j), row in A_pairs.items():
        for (k, l), v in row.items():
            for p, q in {(i, j), (j, i)}:
                for r, s in {(k, l), (l, k)}:
                    A[p, q, r, s] = v
    return A


def element_strain_integrals(mesh, w):
    """∫_e e_y(w) dy for each voxel, shape (n_voxels, d, d)."""
    d = mesh.dim
    el = q1_element(d, mesh.h)
    Bint = np.einsum("q,qijm->ijm", el.w, strain_operator(el))
    dofs = (mesh.elem_nodes()[:, :, None] * d + np.arange(d)).reshape(mesh.n_voxels, -1)
    return np.einsum("ijm,em->eij", Bint, np.asarray(w).ravel()[dofs])


def effective_elasticity(mesh, materials, correctors, form="energy"):
    """ã_{ijkl}, either as the symmetric energy form

        ∫_Y A (e(d^{ij}) + e_y(w^{ij})) : (e(d^{kl}) + e_y(w^{kl})) dy

    or as the volume form ∫_Y [A (e(d^{kl}) + e_y(w^{kl}))]_{ij} dy.  The two
    agree up to the corrector residual (Galerkin orthogonality).
    """
    d = mesh.dim
    y1, y2 = mesh.vol_fracs
    pairs = sym_pairs(d)
    phase_A = (materials.A1, materials.A2)
    if form == "volume":
        labels = mesh.voxel_labels()
        out = {P: {} for P in pairs}
        for Q in pairs:
            S = element_strain_integrals(mesh, correctors[Q])
            total = [S[labels == p].sum(axis=0) for p in (0, 1)]
            E = unit_strain(d, *Q)
            stress = sum(np.einsum("ijmn,mn->ij", A, frac * E + tot)
                         for A, frac, tot in zip(phase_A, (y1, y2), total))
            for P in pairs:
                out[P][Q] = stress[P]
        return _fill_minor(out, d)
    if form != "energy":
        raise ValueError(f"form must be 'energy' or 'volume', got {form!r}")
    op = assemble_elasticity(mesh, materials.A1, materials.A2)
    w = {P: correctors[P].ravel() for P in pairs}
    b = {P: elastic_load(mesh, materials, *P) for P in pairs}
    out = {P: {} for P in pairs}
    for P in pairs:
        EP = unit_strain(d, *P)
        for Q in pairs:
            EQ = unit_strain(d, *Q)
            base = sum(frac * np.einsum("ijkl,ij,kl->", A, EP, EQ)
                       for A, frac in zip(phase_A, (y1, y2)))
            out[P][Q] = base + w[P] @ b[Q] + b[P] @ w[Q] + w[P] @ (op.matrix @ w[Q])
    return _fill_minor(out, d)


def _pressure_gradients(mesh, pcs):
    """(∇π_j) at quadrature points of matrix voxels, shape (d, n_y1_voxels, nq, d)."""
    el = q1_element(mesh.dim, mesh.h)
    elems = np.flatnonzero(mesh.voxel_labels() == 0)
    local = pcs.dofmap.local(mesh.elem_nodes()[elems])
    vals = pcs.fields[:, local]
    return np.einsum("qac,jec->jeqa", el.dN, vals), el


def effective_permeability(mesh, K1, pcs):
    """K̃_jk = ∫_{Y1} K1 (∇π_j + e_j)·(∇π_k + e_k) dy by element quadrature."""
    d = mesh.dim
    K1 = np.asarray(K1, float) * (np.eye(d) if np.ndim(K1) == 0 else 1.0)
    grads, el = _pressure_gradients(mesh, pcs)
    grads = grads + np.eye(d)[:, None, None, :]
    return np.einsum("q,jeqa,ab,keqb->jk", el.w, grads, K1, grads)


def biot_willis_B(mesh, pcs, alpha1, form="surface"):
    """b_jk = α1(|Y1| δ_jk + ∫_Γ π_k n_j ds), or the volume form with ∫_{Y1} ∂_j π_k dy."""
    d = mesh.dim
    y1 = mesh.vol_fracs[0]
    if form == "surface":
        pi = np.stack([pcs.on_lattice(k) for k in range(d)])
        trace_mean = pi[:, mesh.iface_nodes].mean(axis=-1)
        corr = np.einsum("f,fj,kf->jk", mesh.iface_area, mesh.iface_normal, trace_mean)
    elif form == "volume":
        grads, el = _pressure_gradients(mesh, pcs)
        corr = np.einsum("q,keqj->jk", el.w, grads)
    else:
        raise ValueError(f"form must be 'surface' or 'volume', got {form!r}")
    return alpha1 * (y1 * np.eye(d) + corr)


def biot_willis_Lambda(mesh, correctors, alpha1):
    """λ_jk = α1(|Y1| δ_jk + ∫_{Y1} div_y w^{jk} dy)."""
    d = mesh.dim
    y1 = mesh.vol_fracs[0]
    matrix = mesh.voxel_labels() == 0
    L = np.empty((d, d))
    for j in range(d):
        for k in range(d):
            S = element_strain_integrals(mesh, correctors[j, k])[matrix]
            L[j, k] = y1 * (j == k) + np.trace(S.sum(axis=0))
    return alpha1 * L


def averages(mesh, materials, f1=None, f2=None):
    """(c̃, g̃, f̄) = (∫_{Y1} c1, ∫_Γ g ds, |Y1| f1 + |Y2| f2)."""
    d = mesh.dim
    y1, y2 = mesh.vol_fracs
    f1 = np.zeros(d) if f1 is None else np.asarray(f1, float)
    f2 = np.zeros(d) if f2 is None else np.asarray(f2, float)
    g = np.broadcast_to(np.asarray(materials.g, float), (mesh.n_faces,))
    return materials.c1 * y1, float(g @ mesh.iface_area), y1 * f1 + y2 * f2


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Increment kernels on the lag grid s_n = n·dt, row 0 identically zero.

    theta_n = α2 ∫_Γ (ζ_n - ζ_{n-1}) n ds, eta_n = ∫_Γ g (ζ_n - ζ_{n-1}) ds,
    m_n = ∫_{Y2} (ζ_n - ζ_{n-1}) dy.  η carries a positive sign; the macro
    mass balance subtracts its convolution.
    """

    dt: float
    steps: int
    theta: np.ndarray
    eta: np.ndarray
    m: np.ndarray
    zeta_flux: np.ndarray
    zeta_normal: np.ndarray
    zeta_volume: np.ndarray
    alpha2: float
    g_tilde: float
    vol_y2: float

    @property
    def times(self):
        return self.dt * np.arange(self.steps + 1)

    @property
    def cum_eta(self):
        return np.cumsum(self.eta)

    @property
    def cum_theta(self):
        return np.cumsum(self.theta, axis=0)

    @property
    def cum_m(self):
        return np.cumsum(self.m)

    @property
    def dim(self):
        return self.theta.shape[1]


def _increments(a):
    out = np.zeros_like(a)
    out[1:] = a[1:] - a[:-1]
    return out


def memory_kernels(zeta_history, alpha2):
    """First differences of the ζ aggregates (see KernelTable)."""
    zh = zeta_history
    if zh.zeta.shape[0] == 0:
        raise ValueError("empty ζ history")
    return KernelTable(
        dt=zh.dt, steps=zh.steps,
        theta=alpha2 * _increments(zh.normal), eta=_increments(zh.flux),
        m=_increments(zh.volume), zeta_flux=zh.flux, zeta_normal=zh.normal,
        zeta_volume=zh.volume, alpha2=float(alpha2), g_tilde=zh.g_tilde, vol_y2=zh.vol_y2)


def zero_kernels(dim, dt, steps):
    z = np.zeros(steps + 1)
    return KernelTable(dt=float(dt), steps=int(steps), theta=np.zeros((steps + 1, dim)),
                       eta=z.copy(), m=z.copy(), zeta_flux=z.copy(),
                       zeta_normal=np.zeros((steps + 1, dim)), zeta_volume=z.copy(),
                       alpha2=0.0, g_tilde=0.0, vol_y2=0.0)


@dataclass(frozen=True, eq=False)
class CellSolution:
    """Everything computed on one unit cell."""

    mesh: object
    materials: object
    elastic: object
    pressure: object
    coefficients: EffectiveCoefficients
    zeta: object = None
    kernels: KernelTable | None = None


def homogenize(mesh, materials, f1=None, f2=None, dt=None, steps=None, tol=1e-12,
               allow_zero_g=False):
    """Solve all cell problems and assemble every effective quantity.

    ζ and the kernels are computed only when ``dt`` and ``steps`` are given.
    """
    elastic = solve_elasticity_cell(mesh, materials, tol=tol)
    pressure = solve_pressure_cell(mesh, materials.K1, tol=tol)
    c_tilde, g_tilde, f_bar = averages(mesh, materials, f1, f2)
    coeffs = EffectiveCoefficients(
        A_eff=effective_elasticity(mesh, materials, elastic, "energy"),
        A_eff_volume=effective_elasticity(mesh, materials, elastic, "volume"),
        K_eff=effective_permeability(mesh, materials.K1, pressure),
        B=biot_willis_B(mesh, pressure, materials.alpha1, "surface"),
        B_volume=biot_willis_B(mesh, pressure, materials.alpha1, "volume"),
        Lambda=biot_willis_Lambda(mesh, elastic, materials.alpha1),
        c_tilde=c_tilde, g_tilde=g_tilde, f_bar=f_bar, vol_fracs=mesh.vol_fracs,
        run_info={"dim": mesh.dim, "res": mesh.res,
                    "inclusion_voxels": mesh.n_inclusion_voxels,
                    "interface_faces": mesh.n_faces,
                    "max_corrector_residual": max(
                        max(elastic.residuals.values()), float(pressure.residuals.max()))})
    zeta = kernels = None
    if dt is not None and steps is not None:
        zeta = solve_robin_evolution(mesh, materials.c2, materials.K2, materials.g, dt, steps,
                                     allow_zero_g=allow_zero_g)
        kernels = memory_kernels(zeta, materials.alpha2)
    return CellSolution(mesh, materials, elastic, pressure, coeffs, zeta, kernels)


def mandel_eigs(A):
    return np.linalg.eigvalsh(0.5 * (mandel(A) + mandel(A).T))
