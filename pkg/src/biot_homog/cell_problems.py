"""Auxiliary problems on the unit cell.

* elastic correctors w^{jk}: periodic, driven by the unit strains e(d^{jk});
* pressure correctors π_j: periodic on Y1, natural (zero-flux) condition on Γ;
* the Robin field ζ on Y2: ζ(0) = 0, exchange flux g(1 - ζ) through Γ.

Additive constants are fixed by zero (nodal) mean.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fem_core import (DofMap, assemble_elasticity, assemble_interface_mass, assemble_mass,
                       assemble_scalar_diffusion, interface_normal_weights, q1_element,
                       solve_projected_cg, strain_operator, subdomain_dofmap, vector_dofs)
from .geometry import GeometryError, matrix_connected
from .materials import check_spd, sym_pairs, unit_strain


@dataclass(frozen=True, eq=False)
class ElasticCorrectorSet:
    """w^{jk} for j <= k, each of shape (n_nodes, dim), zero mean per component."""

    mesh: object
    fields: dict
    residuals: dict = field(default_factory=dict)

    def __getitem__(self, jk):
        j, k = jk
        return self.fields[(min(j, k), max(j, k))]

    @property
    def dim(self):
        return self.mesh.dim


@dataclass(frozen=True, eq=False)
class PressureCorrectorSet:
    """π_j on the Y1 node set, shape (dim, n_y1 nodes), zero mean."""

    mesh: object
    dofmap: DofMap
    fields: np.ndarray
    residuals: np.ndarray

    def __getitem__(self, j):
        return self.fields[j]

    def on_lattice(self, j):
        """π_j scattered to all lattice nodes (NaN outside Y1)."""
        out = np.full(self.mesh.n_nodes, np.nan)
        out[self.dofmap.nodes] = self.fields[j]
        return out


def elastic_load(mesh, materials, j, k):
    """b with b·v = ∫_Y A e(d^{jk}) : e(v) dy for every periodic v."""
    d = mesh.dim
    el = q1_element(d, mesh.h)
    B = strain_operator(el)
    E = unit_strain(d, j, k)
    le = np.stack([np.einsum("q,qijm,ij->m", el.w, B, np.einsum("ijkl,kl->ij", A, E))
                   for A in (materials.A1, materials.A2)])
    dofs = vector_dofs(mesh.elem_nodes(), d)
    b = np.zeros(mesh.n_nodes * d)
    np.add.at(b, dofs, le[mesh.voxel_labels()])
    return b


def solve_elasticity_cell(mesh, materials, tol=1e-12, max_iter=None):
    """Solve the periodic corrector problems for every unit strain d^{jk}, j <= k."""
    op = assemble_elasticity(mesh, materials.A1, materials.A2)
    fields, residuals = {}, {}
    for j, k in sym_pairs(mesh.dim):
        b = elastic_load(mesh, materials, j, k)
        w = solve_projected_cg(op, -b, tol=tol, max_iter=max_iter)
        bp = b - op.nullspace.T @ (op.nullspace @ b)
        bn = np.linalg.norm(bp)
        residuals[(j, k)] = 0.0 if bn == 0 else float(np.linalg.norm(op.matrix @ w + bp) / bn)
        fields[(j, k)] = w.reshape(mesh.n_nodes, mesh.dim)
    return ElasticCorrectorSet(mesh, fields, residuals)


def pressure_load(mesh, dofmap, K1, j):
    """b with b·q = ∫_{Y1} K1 e_j · ∇q dy."""
    el = q1_element(mesh.dim, mesh.h)
    le = np.einsum("q,a,qac->c", el.w, K1[:, j], el.dN)
    elems = np.flatnonzero(mesh.voxel_labels() == 0)
    local = dofmap.local(mesh.elem_nodes()[elems])
    b = np.zeros(dofmap.n_dofs)
    np.add.at(b, local, np.broadcast_to(le, local.shape))
    return b


def solve_pressure_cell(mesh, K1, tol=1e-12, max_iter=None):
    """π_j on Y1 with homogeneous natural condition on Γ, periodic on ∂Y."""
    K1 = check_spd(np.asarray(K1, float) * (np.eye(mesh.dim) if np.ndim(K1) == 0 else 1.0), "K1")
    if not matrix_connected(mesh.phase):
        raise GeometryError("matrix phase is disconnected; pressure correctors are not unique")
    op = assemble_scalar_diffusion(mesh, "Y1", K1)
    fields = np.empty((mesh.dim, op.dofmap.n_dofs))
    residuals = np.empty(mesh.dim)
    for j in range(mesh.dim):
        b = pressure_load(mesh, op.dofmap, K1, j)
        pi = solve_projected_cg(op, -b, tol=tol, max_iter=max_iter)
        bp = b - op.nullspace.T @ (op.nullspace @ b)
        bn = np.linalg.norm(bp)
        residuals[j] = 0.0 if bn == 0 else np.linalg.norm(op.matrix @ pi + bp) / bn
        fields[j] = pi
    return PressureCorrectorSet(mesh, op.dofmap, fields, residuals)


class RobinStepper:
    """Backward-Euler step of the lumped Robin problem on Y2.

    (c2/dt M + K + R) z_n = c2/dt M z_{n-1} + R b_n, where M is the lumped
    Y2 mass, K the Y2 diffusion form and R the face-lumped (diagonal) interface
    mass.  ``b_n`` is the exterior (matrix-pressure) datum; b_n = 1 gives ζ.
    The matrix is factorized once; steps accept stacked columns.
    """

    def __init__(self, mesh, c2, K2, g, dt, allow_zero_g=False):
        if not dt > 0:
            raise ValueError(f"time step must be positive, got {dt}")
        if not c2 > 0:
            raise ValueError("c2 must be positive")
        self.mesh, self.c2, self.dt = mesh, float(c2), float(dt)
        self.dofmap = subdomain_dofmap(mesh, "Y2")
        self.mass = assemble_mass(mesh, "Y2", lumped=True).matrix.diagonal()
        self.stiff = assemble_scalar_diffusion(mesh, "Y2", K2).matrix
        self.robin = assemble_interface_mass(mesh, g, "Y2", allow_zero=allow_zero_g).matrix.diagonal()
        self.normal = interface_normal_weights(mesh)[self.dofmap.nodes]
        self.interface_dofs = self.dofmap.local(np.unique(mesh.iface_nodes))
        self.system = (sp.diags(self.c2 / self.dt * self.mass + self.robin) + self.stiff).tocsc()
        self._lu = splu(self.system)

    @property
    def n_dofs(self):
        return self.dofmap.n_dofs

    def step(self, prev, boundary):
        """Advance one step; ``prev`` is (n,) or (n, m), ``boundary`` scalar or (m,)."""
        prev = np.asarray(prev, float)
        # increment form: the right-hand side is small near equilibrium, which keeps
        # rounding far below the 0 <= z <= 1 bounds even for stiff K2
        robin = self.robin[:, None] if prev.ndim == 2 else self.robin
        rhs = robin * (boundary - prev) - self.stiff @ prev
        return prev + self._lu.solve(rhs)

    # aggregate functionals, exact for Q1 traces
    def flux(self, z):
        """∫_Γ g z ds."""
        return self.robin @ z

    def normal_integral(self, z):
        """∫_Γ z n ds, shape (dim,) or (dim, m)."""
        return self.normal.T @ z

    def volume(self, z):
        """∫_{Y2} z dy."""
        return self.mass @ z


@dataclass(frozen=True, eq=False)
class ZetaHistory:
    dt: float
    steps: int
    dofmap: DofMap
    zeta: np.ndarray
    flux: np.ndarray
    normal: np.ndarray
    volume: np.ndarray
    g_tilde: float
    vol_y2: float
    interface_dofs: np.ndarray = None
    interface_area: float = 0.0

    @property
    def times(self):
        return self.dt * np.arange(self.steps + 1)


def solve_robin_evolution(mesh, c2, K2, g, dt, steps, allow_zero_g=False, stepper=None):
    """March ζ from ζ_0 = 0 for ``steps`` backward-Euler steps with unit exterior datum."""
    if steps < 0:
        raise ValueError("number of steps must be nonnegative")
    stepper = RobinStepper(mesh, c2, K2, g, dt, allow_zero_g) if stepper is None else stepper
    zeta = np.zeros((steps + 1, stepper.n_dofs))
    for n in range(1, steps + 1):
        zeta[n] = stepper.step(zeta[n - 1], 1.0)
    return ZetaHistory(
        dt=float(dt), steps=int(steps), dofmap=stepper.dofmap, zeta=zeta,
        flux=zeta @ stepper.robin, normal=zeta @ stepper.normal, volume=zeta @ stepper.mass,
        g_tilde=float(stepper.robin.sum()), vol_y2=float(stepper.mass.sum()),
        interface_dofs=stepper.interface_dofs, interface_area=mesh.interface_area)


def corrector_expansion(correctors, macro):
    """Fine-scale field from macro data by linear combination of correctors.

    For elastic correctors ``macro`` is a d×d strain and the result is
    Σ_ij e_ij w^{ij} (shape (n_nodes, d)); for pressure correctors it is a
    gradient vector and the result is Σ_i ∂_i p1 π_i on Y1 nodes.
    """
    macro = np.asarray(macro, float)
    d = correctors.mesh.dim
    if isinstance(correctors, ElasticCorrectorSet):
        if macro.shape != (d, d):
            raise ValueError(f"expected a {d}x{d} strain, got shape {macro.shape}")
        out = np.zeros((correctors.mesh.n_nodes, d))
        for i in range(d):
            for j in range(d):
                if macro[i, j] != 0.0:
                    out += macro[i, j] * correctors[i, j]
        return out
    if isinstance(correctors, PressureCorrectorSet):
        if macro.shape != (d,):
            raise ValueError(f"expected a gradient of length {d}, got shape {macro.shape}")
        return macro @ correctors.fields
    raise TypeError(f"unsupported corrector set {type(correctors).__name__}")
