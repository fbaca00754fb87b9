"""Q1 finite elements on voxel grids, periodic assembly and projected CG.

Vector-valued fields interleave components: dof = node * ncomp + comp.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import INCLUSION, MATRIX, corner_offsets
from .materials import MaterialError, check_spd, has_minor_symmetries, mandel

log = logging.getLogger(__name__)

_GAUSS = 0.5 + np.array([-0.5, 0.5]) / np.sqrt(3.0)


class ConvergenceError(RuntimeError):
    """Projected CG hit max_iter; carries the last relative residual."""

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class Q1Element:
    """Tensor 2-point Gauss rule on a box with edge lengths ``h``.

    ``N`` has shape (nq, nc), ``dN`` (nq, dim, nc), ``w`` (nq,) already
    includes the Jacobian, ``xi`` (nq, dim) are local coordinates in [0,1]^d.
    """

    dim: int
    h: tuple
    xi: np.ndarray
    w: np.ndarray
    N: np.ndarray
    dN: np.ndarray

    @property
    def n_corners(self):
        return 2 ** self.dim


def q1_element(dim, h):
    h = tuple(float(v) for v in np.broadcast_to(h, (dim,)))
    offs = corner_offsets(dim)
    xi = np.array(np.meshgrid(*[_GAUSS] * dim, indexing="ij")).reshape(dim, -1).T
    w = np.full(len(xi), np.prod(h) / len(xi))
    # per-axis 1D factors: value and derivative of the local hat at each corner bit
    vals = np.where(offs[None, :, :] == 1, xi[:, None, :], 1.0 - xi[:, None, :])
    ders = np.where(offs == 1, 1.0, -1.0) / np.asarray(h)
    N = vals.prod(axis=-1)
    dN = np.empty((len(xi), dim, len(offs)))
    for a in range(dim):
        others = np.delete(vals, a, axis=-1).prod(axis=-1)
        dN[:, a, :] = ders[None, :, a] * others
    return Q1Element(dim, h, xi, w, N, dN)


def scalar_stiffness(el, K):
    return np.einsum("q,qac,ab,qbe->ce", el.w, el.dN, K, el.dN)


def scalar_mass(el):
    return np.einsum("q,qc,qe->ce", el.w, el.N, el.N)


def strain_operator(el):
    """B[q, i, j, c*dim+m] = sym-grad of basis function (corner c, component m)."""
    d, nc = el.dim, el.n_corners
    B = np.zeros((len(el.w), d, d, nc * d))
    for c in range(nc):
        for m in range(d):
            col = c * d + m
            B[:, m, :, col] += 0.5 * el.dN[:, :, c]
            B[:, :, m, col] += 0.5 * el.dN[:, :, c]
    return B


def elastic_stiffness(el, A):
    B = strain_operator(el)
    return np.einsum("q,qijm,ijkl,qkln->mn", el.w, B, A, B)


@dataclass(frozen=True, eq=False)
class DofMap:
    """Active lattice nodes of a field and their compressed numbering.

    ``nodes`` are periodic representatives (already identified), ``ncomp``
    components per node; ``constrained`` lists compressed dof ids excluded
    from the solve space.
    """

    n_lattice: int
    nodes: np.ndarray
    ncomp: int = 1
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def n_dofs(self):
        return len(self.nodes) * self.ncomp

    def local(self, lattice_ids):
        lookup = np.full(self.n_lattice, -1, dtype=np.int64)
        lookup[self.nodes] = np.arange(len(self.nodes))
        out = lookup[lattice_ids]
        if np.any(out < 0):
            raise IndexError("node outside the active set")
        return out

    @property
    def free(self):
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained] = False
        return np.flatnonzero(mask)


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Symmetric sparse form with an optional orthonormal null-space basis (rows)."""

    matrix: sp.csr_matrix
    dofmap: DofMap
    nullspace: np.ndarray | None = None

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x


def _scatter(elem_dofs, Ke, etype, n):
    """Sum element matrices Ke[etype[e]] into an n x n CSR matrix."""
    nloc = elem_dofs.shape[1]
    rows = np.repeat(elem_dofs, nloc, axis=1).ravel()
    cols = np.tile(elem_dofs, (1, nloc)).ravel()
    vals = Ke[etype].reshape(len(etype), -1).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def vector_dofs(node_local, ncomp):
    """Expand per-node local ids (ne, nc) to interleaved dof ids (ne, nc*ncomp)."""
    return (node_local[:, :, None] * ncomp + np.arange(ncomp)).reshape(len(node_local), -1)


def constant_nullspace(n, ncomp=1):
    Z = np.zeros((ncomp, n * ncomp))
    for m in range(ncomp):
        Z[m, m::ncomp] = 1.0 / np.sqrt(n)
    return Z


_SELECT = {"Y": (MATRIX, INCLUSION), "Y1": (MATRIX,), "Y2": (INCLUSION,)}


def _selected_elements(mesh, domain):
    try:
        phases = _SELECT[domain]
    except KeyError:
        raise ValueError(f"domain must be one of {sorted(_SELECT)}, got {domain!r}") from None
    labels = mesh.voxel_labels()
    return np.flatnonzero(np.isin(labels, phases)), labels


def subdomain_dofmap(mesh, domain, ncomp=1):
    elems, _ = _selected_elements(mesh, domain)
    nodes = np.unique(mesh.elem_nodes()[elems])
    return DofMap(mesh.n_nodes, nodes, ncomp)


def _per_phase(coeff, dim):
    if isinstance(coeff, (tuple, list)):
        return [np.atleast_2d(np.asarray(c, float)) if np.ndim(c) else float(c) * np.eye(dim)
                for c in coeff]
    c = np.asarray(coeff, float)
    c = c * np.eye(dim) if c.ndim == 0 else c
    return [c, c]


def assemble_scalar_diffusion(mesh, domain, coeff):
    """∫ K ∇u·∇v over the selected subdomain of the periodic cell.

    ``coeff`` is one d×d SPD matrix or a (matrix-phase, inclusion-phase) pair.
    Rows/cols are the nodes touched by the selected voxels.
    """
    K = _per_phase(coeff, mesh.dim)
    for i, Ki in enumerate(K):
        try:
            check_spd(Ki)
        except MaterialError as exc:
            raise MaterialError(f"phase {i + 1} diffusion coefficient: {exc}") from None
    el = q1_element(mesh.dim, mesh.h)
    Ke = np.stack([scalar_stiffness(el, Ki) for Ki in K])
    elems, labels = _selected_elements(mesh, domain)
    dm = subdomain_dofmap(mesh, domain)
    local = dm.local(mesh.elem_nodes()[elems])
    mat = _scatter(local, Ke, labels[elems], dm.n_dofs)
    return SparseOperator(mat, dm, constant_nullspace(dm.n_dofs))


def assemble_mass(mesh, domain, lumped=False):
    el = q1_element(mesh.dim, mesh.h)
    Me = scalar_mass(el)
    if lumped:
        Me = np.diag(Me.sum(axis=1))
    elems, labels = _selected_elements(mesh, domain)
    dm = subdomain_dofmap(mesh, domain)
    local = dm.local(mesh.elem_nodes()[elems])
    mat = _scatter(local, Me[None], np.zeros(len(elems), np.int64), dm.n_dofs)
    return SparseOperator(mat, dm)


def assemble_elasticity(mesh, A1, A2=None):
    """∫_Y A e(u):e(v) with the per-phase tensor, periodic; translations span the kernel."""
    A2 = A1 if A2 is None else A2
    for i, A in enumerate((A1, A2)):
        if not has_minor_symmetries(np.asarray(A)):
            raise MaterialError(f"phase {i + 1} tensor lacks minor symmetries")
        if np.linalg.eigvalsh(mandel(np.asarray(A))).min() <= 0:
            raise MaterialError(f"phase {i + 1} tensor is not coercive")
    d = mesh.dim
    el = q1_element(d, mesh.h)
    Ke = np.stack([elastic_stiffness(el, A1), elastic_stiffness(el, A2)])
    dm = DofMap(mesh.n_nodes, np.arange(mesh.n_nodes), d)
    dofs = vector_dofs(mesh.elem_nodes(), d)
    mat = _scatter(dofs, Ke, mesh.voxel_labels(), dm.n_dofs)
    return SparseOperator(mat, dm, constant_nullspace(mesh.n_nodes, d))


def _check_g(mesh, g, allow_zero):
    g = np.broadcast_to(np.asarray(g, dtype=float), (mesh.n_faces,))
    if allow_zero:
        if np.any(g < 0):
            raise MaterialError("interface permeability g must be nonnegative")
    elif not np.all(g > 0):
        raise MaterialError("interface permeability g must be positive")
    return g


def interface_node_weights(mesh, g, allow_zero=False):
    """Lumped ∫_Γ g φ_i ds for every lattice node (zero off Γ)."""
    g = _check_g(mesh, g, allow_zero)
    per_node = (g * mesh.iface_area / mesh.iface_nodes.shape[1])
    w = np.zeros(mesh.n_nodes)
    np.add.at(w, mesh.iface_nodes, per_node[:, None])
    return w


def interface_normal_weights(mesh):
    """∫_Γ φ_i n ds per lattice node, shape (n_nodes, dim); exact for Q1 traces."""
    per_node = mesh.iface_area[:, None] * mesh.iface_normal / mesh.iface_nodes.shape[1]
    w = np.zeros((mesh.n_nodes, mesh.dim))
    for c in range(mesh.iface_nodes.shape[1]):
        np.add.at(w, mesh.iface_nodes[:, c], per_node)
    return w


def assemble_interface_mass(mesh, g, domain="Y2", allow_zero=False):
    """Face-lumped surface mass ∫_Γ g u v ds on the node set of ``domain``.

    Each face adds g·area/2^(d-1) to the diagonal entry of each of its nodes.
    ``allow_zero`` admits g = 0 for degenerate-limit runs only.
    """
    w = interface_node_weights(mesh, g, allow_zero)
    dm = subdomain_dofmap(mesh, domain)
    return SparseOperator(sp.diags(w[dm.nodes]).tocsr(), dm)


def interface_coupling(mesh, g, allow_zero=False):
    """Blocks of ∫_Γ g (p1 - p2)(q1 - q2) ds for a Y1 field and a Y2 field.

    Returns (R11, R12, R22) with R12 = -R mapping Y2 dofs into Y1 rows.
    """
    w = interface_node_weights(mesh, g, allow_zero)
    dm1 = subdomain_dofmap(mesh, "Y1")
    dm2 = subdomain_dofmap(mesh, "Y2")
    shared = np.intersect1d(dm1.nodes, dm2.nodes)
    i1, i2 = dm1.local(shared), dm2.local(shared)
    R11 = sp.diags(w[dm1.nodes]).tocsr()
    R22 = sp.diags(w[dm2.nodes]).tocsr()
    R12 = sp.coo_matrix((-w[shared], (i1, i2)), shape=(dm1.n_dofs, dm2.n_dofs)).tocsr()
    return (SparseOperator(R11, dm1), R12, SparseOperator(R22, dm2))


def _orthonormal_rows(Z):
    if Z is None or len(Z) == 0:
        return None
    q, _ = np.linalg.qr(np.asarray(Z, float).T)
    return q.T


def solve_projected_cg(op, rhs, tol=1e-12, max_iter=None, nullspace=None):
    """Jacobi-preconditioned CG on the orthogonal complement of the null space.

    The right-hand side is projected first, so singular periodic/Neumann
    systems are solved in the quotient space; the result is orthogonal to
    the null space.  Accepts a SparseOperator or a bare sparse matrix.
    """
    A = op.matrix if isinstance(op, SparseOperator) else op
    if nullspace is None and isinstance(op, SparseOperator):
        nullspace = op.nullspace
    Z = _orthonormal_rows(nullspace)
    n = A.shape[0]
    max_iter = 10 * n if max_iter is None else max_iter

    def project(v):
        return v if Z is None else v - Z.T @ (Z @ v)

    b = project(np.asarray(rhs, dtype=float))
    bnorm = np.linalg.norm(b)
    x = np.zeros(n)
    if bnorm == 0.0:
        return x
    diag = A.diagonal()
    inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    r = b.copy()
    z = project(inv_diag * r)
    p = z.copy()
    rz = r @ z
    res = 1.0
    for it in range(1, max_iter + 1):
        Ap = project(A @ p)
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            x = project(x)
            # confirm with a true residual; drift in the recurrence is rare but cheap to catch
            true_res = np.linalg.norm(project(b - A @ x)) / bnorm
            if true_res <= tol:
                log.debug("projected CG converged in %d iterations (res %.2e)", it, true_res)
                return x
            r = project(b - A @ x)
            z = project(inv_diag * r)
            p = z.copy()
            rz = r @ z
            continue
        z = project(inv_diag * r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"projected CG did not converge in {max_iter} iterations (relative residual {res:.3e})",
        res, max_iter)
