"""Per-phase coefficients: elasticity tensors, storage, permeability, exchange, Biot-Willis."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MaterialError(ValueError):
    pass


def isotropic_tensor(dim, lam, mu):
    """a_ijkl = lam d_ij d_kl + mu (d_ik d_jl + d_il d_jk)."""
    I = np.eye(dim)
    return (lam * np.einsum("ij,kl->ijkl", I, I)
            + mu * (np.einsum("ik,jl->ijkl", I, I) + np.einsum("il,jk->ijkl", I, I)))


def sym_pairs(dim):
    """Ordered index pairs (j, k) with j <= k."""
    return [(j, k) for j in range(dim) for k in range(j, dim)]


def unit_strain(dim, j, k):
    """Strain of the affine field d^{jk}(y) = y_j e_k, i.e. sym(e_k ⊗ e_j)."""
    E = np.zeros((dim, dim))
    E[j, k] += 0.5
    E[k, j] += 0.5
    return E


def voigt_pairs(dim):
    """Index pairs in Voigt order: diagonal first, then (2,3), (1,3), (1,2)."""
    return [(0, 0), (1, 1), (0, 1)] if dim == 2 else [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]


def mandel(A):
    """Matrix of a fourth-rank tensor acting on symmetric matrices (Mandel basis, Voigt order)."""
    dim = A.shape[0]
    pairs = voigt_pairs(dim)
    w = [1.0 if j == k else np.sqrt(2.0) for j, k in pairs]
    M = np.empty((len(pairs), len(pairs)))
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            M[a, b] = w[a] * w[b] * A[i, j, k, l]
    return M


def from_mandel(M, dim):
    pairs = voigt_pairs(dim)
    w = [1.0 if j == k else np.sqrt(2.0) for j, k in pairs]
    A = np.empty((dim,) * 4)
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            v = M[a, b] / (w[a] * w[b])
            for p, q in {(i, j), (j, i)}:
                for r, s in {(k, l), (l, k)}:
                    A[p, q, r, s] = v
    return A


def has_minor_symmetries(A, tol=1e-12):
    scale = max(1.0, float(np.abs(A).max()))
    return (np.abs(A - A.transpose(1, 0, 2, 3)).max() <= tol * scale
            and np.abs(A - A.transpose(0, 1, 3, 2)).max() <= tol * scale)


def check_elasticity_tensor(A, name="A"):
    A = np.asarray(A, dtype=float)
    dim = A.shape[0]
    if A.shape != (dim,) * 4:
        raise MaterialError(f"{name} must have shape (d, d, d, d)")
    if not has_minor_symmetries(A):
        raise MaterialError(f"{name} lacks minor symmetries")
    if np.linalg.eigvalsh(0.5 * (mandel(A) + mandel(A).T)).min() <= 0:
        raise MaterialError(f"{name} is not coercive on symmetric matrices")
    return A


def check_spd(K, name="K"):
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape[0] != K.shape[1]:
        raise MaterialError(f"{name} must be square")
    if np.abs(K - K.T).max() > 1e-12 * max(1.0, np.abs(K).max()):
        raise MaterialError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(K).min() <= 0:
        raise MaterialError(f"{name} must be positive definite")
    return K


def as_matrix(K, dim):
    K = np.asarray(K, dtype=float)
    if K.ndim == 0:
        return float(K) * np.eye(dim)
    return K


@dataclass(frozen=True, eq=False)
class PhaseMaterials:
    """Constant-per-phase data for matrix (1) and inclusion (2).

    ``g`` is either a scalar or one value per interface face.
    """

    A1: np.ndarray
    A2: np.ndarray
    c1: float
    c2: float
    K1: np.ndarray
    K2: np.ndarray
    g: object
    alpha1: float
    alpha2: float

    @property
    def dim(self):
        return self.A1.shape[0]

    @classmethod
    def isotropic(cls, dim, lam1, mu1, lam2, mu2, c1=1.0, c2=1.0, K1=1.0, K2=1.0,
                  g=1.0, alpha1=1.0, alpha2=1.0):
        return cls(A1=isotropic_tensor(dim, lam1, mu1), A2=isotropic_tensor(dim, lam2, mu2),
                   c1=float(c1), c2=float(c2), K1=as_matrix(K1, dim), K2=as_matrix(K2, dim),
                   g=g, alpha1=float(alpha1), alpha2=float(alpha2))

    def replace(self, **kw):
        data = {k: getattr(self, k) for k in
                ("A1", "A2", "c1", "c2", "K1", "K2", "g", "alpha1", "alpha2")}
        data.update(kw)
        for key in ("K1", "K2"):
            data[key] = as_matrix(data[key], self.dim)
        return PhaseMaterials(**data)

    def validate(self, degenerate=False):
        """Enforce coercivity, positivity and SPD constraints on every coefficient.

        ``degenerate=True`` admits alpha_i = 0 and g = 0 (single-porosity and
        deformation-free limits); c_i must stay positive regardless.
        """
        check_elasticity_tensor(self.A1, "A1")
        check_elasticity_tensor(self.A2, "A2")
        check_spd(self.K1, "K1")
        check_spd(self.K2, "K2")
        for name in ("c1", "c2"):
            if not getattr(self, name) > 0:
                raise MaterialError(f"{name} must be positive")
        for name in ("alpha1", "alpha2"):
            value = getattr(self, name)
            if not (value >= 0 if degenerate else value > 0):
                raise MaterialError(f"{name} must be positive")
        g = np.asarray(self.g, float)
        if not (np.all(g >= 0) if degenerate else np.all(g > 0)):
            raise MaterialError("g must be positive")
        return self


def voigt_reuss(A1, A2, y1, y2):
    """Arithmetic and harmonic mixture bounds, returned as Mandel matrices."""
    M1, M2 = mandel(A1), mandel(A2)
    voigt = y1 * M1 + y2 * M2
    reuss = np.linalg.inv(y1 * np.linalg.inv(M1) + y2 * np.linalg.inv(M2))
    return voigt, reuss
