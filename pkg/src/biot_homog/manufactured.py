"""Manufactured solutions for convergence studies of the macro solver.

Both studies use the bubble b(x) = Π_a x_a (L_a - x_a), which vanishes on ∂Ω,
with u* = φ(t) b a for a fixed direction a and p1* = ψ(t) b.

* spatial: φ = ψ = t.  Backward Euler differentiates linear functions exactly,
  so with sources taken from the continuous residual the remaining error is
  purely spatial.
* temporal: sources are the semi-discrete residual of the nodal interpolant
  (φ = ψ = sin 2t), so the spatial error vanishes and only the time
  discretization error remains.

Memory terms in both cases are the discrete convolutions of the exact p1*
samples with the kernel table, i.e. they are reproduced exactly by the scheme.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import MacroDomain
from .macro_biot import MacroAssembly, MacroConfig, full_convolution, run_macro


def bubble(x, extent):
    """b, ∇b and the Hessian of b at points x, shapes (n,), (n, d), (n, d, d)."""
    x = np.atleast_2d(np.asarray(x, float))
    L = np.asarray(extent, float)
    f = x * (L - x)
    df = L - 2.0 * x
    n, d = x.shape
    b = f.prod(axis=1)
    grad = np.empty((n, d))
    hess = np.empty((n, d, d))
    for a in range(d):
        rest = np.prod(np.delete(f, a, axis=1), axis=1)
        grad[:, a] = df[:, a] * rest
        hess[:, a, a] = -2.0 * rest
        for c in range(d):
            if c != a:
                others = np.prod(np.delete(f, [a, c], axis=1), axis=1)
                hess[:, a, c] = df[:, a] * df[:, c] * others
    return b, grad, hess


def direction(dim):
    """Fixed displacement direction of the manufactured u*."""
    return np.array([1.0, -0.5, 0.25][:dim])


@dataclass
class MMSResult:
    h: float
    dt: float
    p1_error: float
    u_error: float


def _errors(asm, hist, phi_T, psi_T, a, extent):
    b = bubble(asm.domain.node_coords(), extent)[0]
    ep = hist.p1[-1] - psi_T * b
    eu = hist.u[-1] - phi_T * np.outer(b, a)
    return asm.l2_norm(ep), asm.l2_norm(eu)


def spatial_case(coeffs, kernels, extent, res, T, steps, mode="kernel_convolution",
                 cell_mesh=None, materials=None, return_history=False):
    """Time-linear exact solution with continuous-residual sources.

    Returns an MMSResult, or (MMSResult, MacroHistory) with ``return_history``.
    """
    d = len(extent)
    dom = MacroDomain(d, tuple(extent), (res,) * d)
    co = coeffs.replace(f_bar=np.zeros(d))
    dt = T / steps
    a = direction(d)
    times = dt * np.arange(steps + 1)
    conv_theta = full_convolution(kernels.theta[:steps + 1], times)  # (N+1, d)
    conv_eta = full_convolution(kernels.eta[:steps + 1], times)
    A, B, L, K = co.A_eff, co.B, co.Lambda, co.K_eff
    Lsym = 0.5 * (L + L.T)

    def source_at(n):
        t = times[n]

        def src(x, _t):
            b, g, H = bubble(x, extent)
            div_stress = np.einsum("ijkl,k,njl->ni", A, a, H)
            f = -t * div_stress + t * g @ B.T + np.outer(b, conv_theta[n])
            strain_rate = np.einsum("ij,i,nj->n", Lsym, a, g)
            h = (co.c_tilde * b + strain_rate - t * np.einsum("ab,nab->n", K, H)
                 + co.g_tilde * t * b - conv_eta[n] * b)
            return f, h
        return src

    def load(asm, t, n):
        return asm.integrate(source_at(n), t)

    cfg = MacroConfig(dom, co, kernels, dt, steps, load=load, mode=mode)
    hist = run_macro(cfg, cell_mesh, materials)
    asm = MacroAssembly(dom, co)
    ep, eu = _errors(asm, hist, T, T, a, extent)
    result = MMSResult(float(np.max(dom.h)), dt, ep, eu)
    return (result, hist) if return_history else result


def temporal_case(coeffs, kernels, extent, res, T, steps):
    """Nodal-interpolant exact solution with semi-discrete residual sources."""
    d = len(extent)
    dom = MacroDomain(d, tuple(extent), (res,) * d)
    co = coeffs.replace(f_bar=np.zeros(d))
    dt = T / steps
    a = direction(d)
    times = dt * np.arange(steps + 1)
    phi, dphi = np.sin(2 * times), 2 * np.cos(2 * times)
    asm = MacroAssembly(dom, co)
    b = bubble(dom.node_coords(), extent)[0]
    U = np.outer(b, a).ravel()
    conv_theta = full_convolution(kernels.theta[:steps + 1], phi)
    conv_eta = full_convolution(kernels.eta[:steps + 1], phi)
    KuU, GP, DU = asm.Ku @ U, asm.G @ b, asm.D @ U
    Mb, Kb = asm.M @ b, asm.Kp @ b
    Cb = np.stack([C @ b for C in asm.C])

    def load(_asm, t, n):
        Fu = phi[n] * (KuU + GP) + conv_theta[n] @ Cb
        Fp = (co.c_tilde * dphi[n] * Mb + dphi[n] * DU + phi[n] * (Kb + co.g_tilde * Mb)
              - conv_eta[n] * Mb)
        return Fu, Fp

    hist = run_macro(MacroConfig(dom, co, kernels, dt, steps, load=load))
    ep, eu = _errors(asm, hist, phi[-1], phi[-1], a, extent)
    return MMSResult(float(np.max(dom.h)), dt, ep, eu)


def observed_orders(errors):
    """log2 ratios of successive errors for a halving sweep."""
    e = np.asarray(errors, float)
    return np.log2(e[:-1] / e[1:])
