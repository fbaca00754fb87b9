"""Backward-Euler time stepping of the homogenized double-porosity Biot system.

Unknowns are Q1 displacement u (zero on ∂Ω) and Q1 matrix pressure p1 on a
box grid.  Per step n the monolithic system reads

    Ku u_n + (G + C(θ_1)) p_n                     = F_n - C(Σ_{m<n} θ_{n-m+1} p_m)
    D u_n + (c̃ M + Δt (Kp + g̃ M - η_1 M)) p_n    = D u_{n-1} + c̃ M p_{n-1}
                                                    + Δt M Σ_{m<n} η_{n-m+1} p_m + Δt H_n

with Ku = ∫ Ã e(u):e(v), G = ∫ (B∇p)·v, D = ∫ Λ:e(u) q, C(θ) = ∫ (θ p)·v.
In micro-coupled mode the two history sums are replaced by live Y2 fields,
one per pressure node, advanced by the same Robin step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .cell_problems import RobinStepper
from .fem_core import (elastic_stiffness, q1_element, scalar_mass, scalar_stiffness,
                       strain_operator, vector_dofs)

log = logging.getLogger(__name__)

KERNEL = "kernel_convolution"
MICRO = "micro_coupled"


class MacroConfigError(ValueError):
    pass


def _scatter_rect(rows_e, cols_e, Ke, n_rows, n_cols):
    nr, nc = rows_e.shape[1], cols_e.shape[1]
    rows = np.repeat(rows_e, nc, axis=1).ravel()
    cols = np.tile(cols_e, (1, nr)).ravel()
    vals = np.broadcast_to(Ke, (len(rows_e), nr, nc)).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols)).tocsr()


class MacroAssembly:
    """Constant-coefficient Q1 operators of the macro problem on a MacroDomain."""

    def __init__(self, domain, coefficients):
        self.domain = domain
        self.coefficients = co = coefficients
        d = self.dim = domain.dim
        self.el = el = q1_element(d, domain.h)
        self.n_nodes = n = domain.n_nodes
        self.n_u = n * d
        self.elem_nodes = en = domain.elem_nodes()
        edofs = vector_dofs(en, d)
        Bs = strain_operator(el)

        self.Ku = _scatter_rect(edofs, edofs, elastic_stiffness(el, co.A_eff), self.n_u, self.n_u)
        self.Kp = _scatter_rect(en, en, scalar_stiffness(el, co.K_eff), n, n)
        Me = scalar_mass(el)
        self.M = _scatter_rect(en, en, Me, n, n)
        # ∫ φ_c (B ∇φ_e)_i for test (c, i) and trial e
        Ge = np.einsum("q,qc,ij,qje->cie", el.w, el.N, co.B, el.dN).reshape(-1, len(Me))
        self.G = _scatter_rect(edofs, en, Ge, self.n_u, n)
        De = np.einsum("q,qc,ij,qijm->cm", el.w, el.N, co.Lambda, Bs)
        self.D = _scatter_rect(en, edofs, De, n, self.n_u)
        # component-wise mass coupling for θ: C_i maps p to the i-th momentum component
        self.C = [_scatter_rect(edofs[:, i::d], en, Me, self.n_u, n) for i in range(d)]
        self.Mu = _scatter_rect(edofs, edofs, np.kron(Me, np.eye(d)), self.n_u, self.n_u)

        bnodes = domain.boundary_nodes()
        u_fixed = (bnodes[:, None] * d + np.arange(d)).ravel()
        p_fixed = bnodes if domain.p1_bc == "dirichlet_zero" else np.zeros(0, np.int64)
        fixed = np.zeros(self.n_u + n, dtype=bool)
        fixed[u_fixed] = True
        fixed[self.n_u + p_fixed] = True
        self.fixed = fixed
        self.free = np.flatnonzero(~fixed)

    def theta_coupling(self, theta):
        out = sp.csr_matrix((self.n_u, self.n_nodes))
        for i in range(self.dim):
            if theta[i] != 0.0:
                out = out + theta[i] * self.C[i]
        return out

    def block_matrix(self, dt, theta1, eta1):
        co = self.coefficients
        top = sp.hstack([self.Ku, self.G + self.theta_coupling(theta1)])
        bottom = sp.hstack([self.D, co.c_tilde * self.M
                            + dt * (self.Kp + (co.g_tilde - eta1) * self.M)])
        return sp.vstack([top, bottom]).tocsc()

    def quadrature_points(self):
        """Physical coordinates of every element's Gauss points, (ne, nq, d)."""
        return self.domain.elem_origins()[:, None, :] + self.el.xi * np.asarray(self.domain.h)

    def integrate(self, func, t):
        """Load vectors (∫ f·v, ∫ h q) of a pointwise source func(x, t) -> (f, h)."""
        pts = self.quadrature_points()
        ne, nq, d = pts.shape
        f, h = func(pts.reshape(-1, d), t)
        f = np.asarray(f, float).reshape(ne, nq, d)
        h = np.asarray(h, float).reshape(ne, nq)
        w, N = self.el.w, self.el.N
        fu = np.einsum("q,qc,eqi->eci", w, N, f).reshape(ne, -1)
        fp = np.einsum("q,qc,eq->ec", w, N, h)
        Fu = np.zeros(self.n_u)
        Fp = np.zeros(self.n_nodes)
        np.add.at(Fu, vector_dofs(self.elem_nodes, d), fu)
        np.add.at(Fp, self.elem_nodes, fp)
        return Fu, Fp

    def body_force_load(self, f_nodal):
        """∫ f·v for a nodal (n_nodes, d) force interpolated in Q1."""
        return self.Mu @ np.asarray(f_nodal, float).ravel()

    def l2_norm(self, nodal):
        """Discrete L² norm Σ h^d |v_i|^2 over nodes (vector values use |.|)."""
        nodal = np.asarray(nodal, float)
        sq = nodal ** 2 if nodal.ndim == 1 else (nodal ** 2).sum(axis=-1)
        return float(np.sqrt(np.prod(self.domain.h) * sq.sum()))


@dataclass
class MacroConfig:
    """Problem data for one macro run.

    ``f1``/``f2`` are constant vectors or (n_nodes, d) fields; when both are
    None the averaged force ``coefficients.f_bar`` is used.  ``load`` is an
    optional extra source callback (assembly, t, n) -> (Fu, Fp) adding to the
    momentum and mass right-hand sides.
    """

    domain: object
    coefficients: object
    kernels: object
    dt: float
    steps: int
    f1: object = None
    f2: object = None
    load: Callable | None = None
    mode: str = KERNEL

    def __post_init__(self):
        if self.mode not in (KERNEL, MICRO):
            raise MacroConfigError(f"unknown mode {self.mode!r}")
        if not self.dt > 0 or self.steps < 0:
            raise MacroConfigError("time grid needs dt > 0 and steps >= 0")

    def check_kernel_grid(self):
        kt = self.kernels
        if kt is None:
            raise MacroConfigError("kernel mode requires a KernelTable")
        if abs(kt.dt - self.dt) > 1e-12 * self.dt:
            raise MacroConfigError(f"kernel table dt={kt.dt!r} does not match macro dt={self.dt!r}")
        if kt.steps < self.steps:
            raise MacroConfigError(
                f"kernel table has {kt.steps} steps, macro run needs {self.steps}")
        if kt.dim != self.domain.dim:
            raise MacroConfigError("kernel table dimension does not match the macro domain")

    def nodal_force(self):
        d, n = self.domain.dim, self.domain.n_nodes
        y1, y2 = self.coefficients.vol_fracs
        if self.f1 is None and self.f2 is None:
            return np.broadcast_to(np.asarray(self.coefficients.f_bar, float), (n, d))
        f1 = np.zeros(d) if self.f1 is None else np.asarray(self.f1, float)
        f2 = np.zeros(d) if self.f2 is None else np.asarray(self.f2, float)
        return np.broadcast_to(y1 * f1 + y2 * f2, (n, d))


@dataclass
class MacroHistory:
    times: np.ndarray
    u: np.ndarray
    p1: np.ndarray
    p2_bar: np.ndarray | None = None
    P: np.ndarray | None = None
    diagnostics: list = field(default_factory=list)
    micro: np.ndarray | None = None


def history_convolution(kernel, values, n):
    """Σ_{m=1}^{n-1} kernel[n-m+1] values[m]: the part of the step-n sum already known."""
    if n <= 1:
        return np.zeros_like(values[0]) if kernel.ndim == 1 else np.zeros(
            (kernel.shape[1],) + values[0].shape)
    k = kernel[n:1:-1]  # kernel[n], ..., kernel[2] pairs with m = 1..n-1
    return np.tensordot(k, values[1:n], axes=(0, 0))


def full_convolution(kernel, values):
    """out[n] = Σ_{m=1}^{n} kernel[n-m+1] values[m] for every n (out[0] = 0)."""
    N = len(values) - 1
    out = np.zeros((N + 1,) + np.shape(kernel[0]) + np.shape(values[0]))
    for n in range(1, N + 1):
        out[n] = np.tensordot(kernel[n:0:-1], values[1:n + 1], axes=(0, 0))
    return out


class _Marcher:
    def __init__(self, config, theta1, eta1):
        self.cfg = config
        self.asm = MacroAssembly(config.domain, config.coefficients)
        self.dt = config.dt
        self.free = self.asm.free
        mat = self.asm.block_matrix(config.dt, theta1, eta1)
        self.lhs = mat[self.free][:, self.free].tocsc()
        self.lu = splu(self.lhs)
        self.body = self.asm.body_force_load(config.nodal_force())

    def solve_step(self, n, u_prev, p_prev, hist_theta, hist_eta):
        a, co, dt = self.asm, self.cfg.coefficients, self.dt
        Fu = self.body.copy()
        Fp = np.zeros(a.n_nodes)
        if self.cfg.load is not None:
            extra_u, extra_p = self.cfg.load(a, n * dt, n)
            Fu = Fu + extra_u
            Fp = Fp + extra_p
        for i in range(a.dim):
            Fu -= a.C[i] @ hist_theta[i]
        rhs_p = (a.D @ u_prev.ravel() + co.c_tilde * (a.M @ p_prev)
                 + dt * (a.M @ hist_eta) + dt * Fp)
        rhs = np.concatenate([Fu, rhs_p])[self.free]
        x = np.zeros(a.n_u + a.n_nodes)
        x[self.free] = self.lu.solve(rhs)
        res = np.linalg.norm(self.lhs @ x[self.free] - rhs)
        scale = np.linalg.norm(rhs)
        diag = {"step": n, "residual": float(res / scale) if scale > 0 else float(res)}
        return x[:a.n_u].reshape(a.n_nodes, a.dim), x[a.n_u:], diag


def _empty_history(cfg):
    d, n, N = cfg.domain.dim, cfg.domain.n_nodes, cfg.steps
    return MacroHistory(times=cfg.dt * np.arange(N + 1), u=np.zeros((N + 1, n, d)),
                        p1=np.zeros((N + 1, n)))


def run_macro(config, cell_mesh=None, materials=None):
    """Time-step the homogenized system; dispatches on ``config.mode``."""
    if config.mode == MICRO:
        if cell_mesh is None or materials is None:
            raise MacroConfigError("micro-coupled mode needs the cell mesh and phase materials")
        return run_micro_coupled(config, cell_mesh, materials)
    config.check_kernel_grid()
    kt = config.kernels
    theta, eta = kt.theta[:config.steps + 1], kt.eta[:config.steps + 1]
    theta1 = theta[1] if config.steps >= 1 else np.zeros(config.domain.dim)
    eta1 = eta[1] if config.steps >= 1 else 0.0
    hist = _empty_history(config)
    if config.steps == 0:
        return _finish(hist, config)
    marcher = _Marcher(config, theta1, eta1)
    for n in range(1, config.steps + 1):
        h_theta = history_convolution(theta, hist.p1, n)
        h_eta = history_convolution(eta, hist.p1, n)
        hist.u[n], hist.p1[n], diag = marcher.solve_step(n, hist.u[n - 1], hist.p1[n - 1],
                                                         h_theta, h_eta)
        hist.diagnostics.append(diag)
    return _finish(hist, config)


def _finish(hist, config):
    if config.kernels is not None and config.mode == KERNEL:
        m = config.kernels.m[:config.steps + 1]
        hist.p2_bar = full_convolution(m, hist.p1)
        hist.P = config.coefficients.vol_fracs[0] * hist.p1 + hist.p2_bar
    return hist


def run_micro_coupled(config, cell_mesh, materials):
    """Two-scale mode: each pressure node carries its own Y2 pressure field.

    The micro update at step n splits into a history part (previous field,
    zero exterior datum) and the unit response ζ_1 scaled by p1_n; the latter
    is condensed into the macro matrix, the former enters the right-hand side
    as -∫_Γ g p2 ds and α2 ∫_Γ p2 n ds.
    """
    stepper = RobinStepper(cell_mesh, materials.c2, materials.K2, materials.g, config.dt,
                           allow_zero_g=True)
    alpha2 = materials.alpha2
    zeta1 = stepper.step(np.zeros(stepper.n_dofs), 1.0)
    theta1 = alpha2 * stepper.normal_integral(zeta1)
    eta1 = stepper.flux(zeta1)
    hist = _empty_history(config)
    n_p = config.domain.n_nodes
    p2 = np.zeros((stepper.n_dofs, n_p))
    hist.p2_bar = np.zeros((config.steps + 1, n_p))
    if config.steps >= 1:
        marcher = _Marcher(config, theta1, eta1)
    for n in range(1, config.steps + 1):
        carried = stepper.step(p2, np.zeros(n_p))
        h_eta = stepper.flux(carried)
        h_theta = alpha2 * stepper.normal_integral(carried)
        hist.u[n], hist.p1[n], diag = marcher.solve_step(n, hist.u[n - 1], hist.p1[n - 1],
                                                         h_theta, h_eta)
        hist.diagnostics.append(diag)
        p2 = carried + np.multiply.outer(zeta1, hist.p1[n])
        hist.p2_bar[n] = stepper.volume(p2)
    hist.P = config.coefficients.vol_fracs[0] * hist.p1 + hist.p2_bar
    hist.micro = p2
    return hist


def reconstruct_p2(p1_series, zeta_history):
    """Discrete Duhamel sum p2_n = Σ_{m=1}^n p1_m (ζ_{n-m+1} - ζ_{n-m}) on Y2 nodes."""
    p1_series = np.asarray(p1_series, float)
    N = len(p1_series) - 1
    if zeta_history.steps < N:
        raise MacroConfigError(
            f"ζ history has {zeta_history.steps} steps, pressure series needs {N}")
    z = zeta_history.zeta[:N + 1]
    delta = np.zeros_like(z)
    delta[1:] = z[1:] - z[:-1]
    return full_convolution(delta, p1_series)


def overall_pressure(p1_history, kernels, vol_y1):
    """P_n = |Y1| p1_n + Σ_{m=1}^n m_{n-m+1} p1_m."""
    p1_history = np.asarray(p1_history, float)
    N = len(p1_history) - 1
    if kernels.steps < N:
        raise MacroConfigError(f"kernel table has {kernels.steps} steps, history needs {N}")
    return vol_y1 * p1_history + full_convolution(kernels.m[:N + 1], p1_history)
