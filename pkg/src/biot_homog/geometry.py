"""Voxelized periodic unit cell Y = (0,1)^d split into matrix Y1 and inclusion Y2.

Voxels are addressed by C-ordered multi-indices on a ``res**d`` grid.  Nodes
live on the periodic lattice ``{0..res-1}^d`` (node ``res`` along an axis is
identified with node ``0``).  Element-local corner ordering follows
``itertools.product((0, 1), repeat=d)``, i.e. the last axis varies fastest.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

MATRIX = 0
INCLUSION = 1


class GeometryError(ValueError):
    """Raised when a unit cell violates the geometric assumptions."""


@dataclass(frozen=True)
class Cube:
    side: float

    def contains(self, points, center):
        return np.all(np.abs(points - center) < 0.5 * self.side, axis=-1)


@dataclass(frozen=True)
class Sphere:
    radius: float

    def contains(self, points, center):
        return np.linalg.norm(points - center, axis=-1) < self.radius


def corner_offsets(dim):
    """Local corner offsets of a voxel, shape (2**dim, dim)."""
    return np.array(list(itertools.product((0, 1), repeat=dim)), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class CellMesh:
    """Immutable voxel mesh of the periodic cell.

    Interface arrays have one entry per phase-boundary face; ``iface_normal``
    points from the matrix voxel into the inclusion voxel (outward for Y1).
    """

    dim: int
    res: int
    phase: np.ndarray
    iface_normal: np.ndarray
    iface_area: np.ndarray
    iface_matrix_voxel: np.ndarray
    iface_inclusion_voxel: np.ndarray
    iface_nodes: np.ndarray
    node_rep: np.ndarray = field(repr=False)

    @property
    def h(self):
        return 1.0 / self.res

    @property
    def n_voxels(self):
        return self.res ** self.dim

    @property
    def n_nodes(self):
        return self.res ** self.dim

    @property
    def n_inclusion_voxels(self):
        return int(np.count_nonzero(self.phase))

    @property
    def vol_fracs(self):
        """(|Y1|, |Y2|) from voxel counts."""
        y2 = self.n_inclusion_voxels / self.n_voxels
        return 1.0 - y2, y2

    @property
    def n_faces(self):
        return len(self.iface_area)

    @property
    def interface_area(self):
        return float(self.iface_area.sum())

    def voxel_labels(self):
        return self.phase.ravel().astype(np.int8)

    def elem_nodes(self):
        """Periodic node ids of every voxel's corners, shape (n_voxels, 2**dim)."""
        shape = (self.res,) * self.dim
        idx = np.indices(shape).reshape(self.dim, -1).T
        offs = corner_offsets(self.dim)
        corners = (idx[:, None, :] + offs[None, :, :]) % self.res
        return np.ravel_multi_index(tuple(np.moveaxis(corners, -1, 0)), shape)

    def node_coords(self):
        shape = (self.res,) * self.dim
        return np.indices(shape).reshape(self.dim, -1).T * self.h

    def voxel_centroids(self):
        return voxel_centroids(self.dim, self.res)

    def phase_nodes(self, which):
        """Sorted node ids touched by voxels of the given phase (MATRIX/INCLUSION)."""
        mask = self.phase.ravel() == bool(which)
        return np.unique(self.elem_nodes()[mask])


def voxel_centroids(dim, res):
    shape = (res,) * dim
    return (np.indices(shape).reshape(dim, -1).T + 0.5) / res


def periodic_node_map(dim, res):
    """Map from the full (res+1)^d node lattice to periodic representatives."""
    full = np.indices((res + 1,) * dim).reshape(dim, -1) % res
    return np.ravel_multi_index(tuple(full), (res,) * dim)


def _interface(phase, dim, res):
    h = 1.0 / res
    shape = (res,) * dim
    offs = corner_offsets(dim)
    normals, matrix_vox, incl_vox, nodes = [], [], [], []
    for ax in range(dim):
        nb = np.roll(phase, -1, axis=ax)
        cut = np.flatnonzero((phase != nb).ravel())
        if cut.size == 0:
            continue
        idx = np.array(np.unravel_index(cut, shape)).T
        idx_nb = idx.copy()
        idx_nb[:, ax] = (idx_nb[:, ax] + 1) % res
        cut_nb = np.ravel_multi_index(tuple(idx_nb.T), shape)
        here_is_matrix = ~phase.ravel()[cut]
        n = np.zeros((cut.size, dim))
        n[:, ax] = np.where(here_is_matrix, 1.0, -1.0)
        normals.append(n)
        matrix_vox.append(np.where(here_is_matrix, cut, cut_nb))
        incl_vox.append(np.where(here_is_matrix, cut_nb, cut))
        face_offs = offs[offs[:, ax] == 1]
        corners = (idx[:, None, :] + face_offs[None, :, :]) % res
        nodes.append(np.ravel_multi_index(tuple(np.moveaxis(corners, -1, 0)), shape))
    if not normals:
        return (np.zeros((0, dim)), np.zeros(0), np.zeros(0, np.int64),
                np.zeros(0, np.int64), np.zeros((0, 2 ** (dim - 1)), np.int64))
    normals = np.concatenate(normals)
    area = np.full(len(normals), h ** (dim - 1))
    return (normals, area, np.concatenate(matrix_vox), np.concatenate(incl_vox),
            np.concatenate(nodes))


def mesh_from_phase(phase):
    """Build a CellMesh from a boolean voxel array (True = inclusion) without validation."""
    phase = np.ascontiguousarray(phase, dtype=bool)
    dim = phase.ndim
    res = phase.shape[0]
    if dim not in (2, 3):
        raise GeometryError(f"dimension must be 2 or 3, got {dim}")
    if any(s != res for s in phase.shape):
        raise GeometryError("voxel array must have the same resolution on every axis")
    normal, area, mvox, ivox, nodes = _interface(phase, dim, res)
    arrays = dict(phase=phase, iface_normal=normal, iface_area=area,
                  iface_matrix_voxel=mvox, iface_inclusion_voxel=ivox,
                  iface_nodes=nodes, node_rep=periodic_node_map(dim, res))
    for a in arrays.values():
        a.setflags(write=False)
    return CellMesh(dim=dim, res=res, **arrays)


def build_unit_cell(dim, res, inclusion, center=None):
    """Voxelize a single centred (or offset) inclusion and validate the cell.

    A voxel belongs to the inclusion iff its centroid lies strictly inside
    the shape.
    """
    if res < 4:
        raise GeometryError(f"res must be >= 4, got {res}")
    center = np.full(dim, 0.5) if center is None else np.asarray(center, float)
    inside = inclusion.contains(voxel_centroids(dim, res), center)
    mesh = mesh_from_phase(inside.reshape((res,) * dim))
    validate_geometry(mesh).raise_if_failed()
    return mesh


@dataclass
class GeometryReport:
    matrix_connected: bool
    inclusion_interior: bool
    interface_closed: bool
    interface_manifold: bool
    closure_residual: float
    euler_characteristic: int
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def raise_if_failed(self):
        if self.violations:
            raise GeometryError("; ".join(self.violations))


def matrix_connected(phase):
    dim, res = phase.ndim, phase.shape[0]
    shape = phase.shape
    flat = ~phase.ravel()
    n_matrix = int(flat.sum())
    if n_matrix == 0:
        return False
    rows, cols = [], []
    ids = np.arange(phase.size).reshape(shape)
    for ax in range(dim):
        nb = np.roll(ids, -1, axis=ax).ravel()
        both = flat & flat[nb]
        rows.append(ids.ravel()[both])
        cols.append(nb[both])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(phase.size,) * 2)
    _, labels = connected_components(graph, directed=False)
    return len(np.unique(labels[flat])) == 1


def _boundary_layer_hits(phase):
    for ax in range(phase.ndim):
        if phase.take(0, axis=ax).any() or phase.take(-1, axis=ax).any():
            return True
    return False


def _interface_topology(mesh):
    """Return (manifold?, Euler characteristic) of the discrete interface."""
    if mesh.n_faces == 0:
        return True, 0
    nodes = mesh.iface_nodes
    if mesh.dim == 2:
        counts = np.bincount(nodes.ravel())
        verts = np.count_nonzero(counts)
        return bool(np.all(counts % 2 == 0)), int(verts - mesh.n_faces)
    # quad corners follow product order: (0,0),(0,1),(1,0),(1,1); ring 0-1-3-2
    ring = nodes[:, [0, 1, 3, 2]]
    edges = np.sort(np.stack([ring, np.roll(ring, -1, axis=1)], axis=-1).reshape(-1, 2), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    verts = len(np.unique(nodes))
    return bool(np.all(counts % 2 == 0)), int(verts - len(uniq) + mesh.n_faces)


def validate_geometry(mesh):
    """Check connectivity of Y1 (with periodic wrap), interiority of Y2 and closure of Γ."""
    connected = matrix_connected(mesh.phase)
    interior = not _boundary_layer_hits(mesh.phase)
    closure = (mesh.iface_area[:, None] * mesh.iface_normal).sum(axis=0)
    resid = float(np.abs(closure).max()) if mesh.n_faces else 0.0
    closed = resid <= 1e-14 * max(1.0, mesh.interface_area)
    manifold, chi = _interface_topology(mesh)
    violations = []
    if not interior:
        violations.append("inclusion interiority violated: inclusion voxels touch the cell boundary")
    if not connected:
        violations.append("matrix connectivity violated: matrix phase is not face-connected")
    if not closed:
        violations.append(f"interface closure violated: sum(area*n) = {resid:.3e}")
    if not manifold:
        violations.append("interface is not a closed surface: odd edge multiplicity")
    if mesh.n_inclusion_voxels == 0:
        violations.append("inclusion is empty")
    return GeometryReport(connected, interior, closed, manifold, resid, chi, violations)


@dataclass(frozen=True)
class MacroDomain:
    """Box domain Ω = prod [0, extent_a] with ``res_a`` Q1 elements per axis."""

    dim: int
    extent: tuple
    res: tuple
    p1_bc: str = "dirichlet_zero"

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise GeometryError(f"dimension must be 2 or 3, got {self.dim}")
        if len(self.extent) != self.dim or len(self.res) != self.dim:
            raise GeometryError("extent and res need one entry per axis")
        if min(self.extent) <= 0 or min(self.res) <= 0:
            raise GeometryError("extents and resolutions must be positive")
        if self.p1_bc not in ("dirichlet_zero", "neumann_zero"):
            raise GeometryError(f"unknown p1 boundary condition {self.p1_bc!r}")

    @property
    def h(self):
        return tuple(L / n for L, n in zip(self.extent, self.res))

    @property
    def node_shape(self):
        return tuple(n + 1 for n in self.res)

    @property
    def n_nodes(self):
        return int(np.prod(self.node_shape))

    def node_coords(self):
        idx = np.indices(self.node_shape).reshape(self.dim, -1).T
        return idx * np.asarray(self.h)

    def elem_nodes(self):
        idx = np.indices(self.res).reshape(self.dim, -1).T
        corners = idx[:, None, :] + corner_offsets(self.dim)[None, :, :]
        return np.ravel_multi_index(tuple(np.moveaxis(corners, -1, 0)), self.node_shape)

    def elem_origins(self):
        idx = np.indices(self.res).reshape(self.dim, -1).T
        return idx * np.asarray(self.h)

    def boundary_nodes(self):
        idx = np.indices(self.node_shape).reshape(self.dim, -1)
        on = np.zeros(idx.shape[1], dtype=bool)
        for ax in range(self.dim):
            on |= (idx[ax] == 0) | (idx[ax] == self.res[ax])
        return np.flatnonzero(on)
