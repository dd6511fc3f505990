"""Reference-element bases, Piola maps, and degree-of-freedom maps.

Four discrete spaces are provided at lowest order (k = 1): Whitney edge
elements in H(curl), lowest-order Raviart-Thomas face elements in H(div),
piecewise-constant vectors in L2, and continuous piecewise-linear scalars
with a one-vertex gauge.  Degrees of freedom sit on mesh entities with a
combinatorial global orientation (see :mod:`kerrfem.mesh`), so two tets
sharing an entity always agree on the sign of its dof.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .mesh import Mesh, TET_EDGES, TET_FACES, TetGeometry, Topology
from .quadrature import segment_rule, triangle_rule


class SpaceKind(Enum):
    NEDELEC_EDGE = "nedelec_edge"          # U_h, H(curl)-conforming
    NEDELEC_EDGE_BC = "nedelec_edge_bc"    # U_h with zero tangential trace
    RAVIART_THOMAS_FACE = "raviart_thomas" # V_h, H(div)-conforming
    DISCONTINUOUS_VECTOR = "dg_vector"     # W_h, cellwise-constant vectors
    LAGRANGE_SCALAR = "lagrange_scalar"    # S_h, continuous P1 with gauge


class UnsupportedOrderError(ValueError):
    """Raised for any polynomial order other than 1."""


def _require_order_1(order: int) -> None:
    if order != 1:
        raise UnsupportedOrderError(
            f"only lowest order (1) is implemented; got order {order}"
        )


# Barycentric gradients on the reference tet (rows: lambda_0..lambda_3).
LAMBDA_GRADS = np.array(
    [[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
)

DOFS_PER_CELL = {
    SpaceKind.NEDELEC_EDGE: 6,
    SpaceKind.NEDELEC_EDGE_BC: 6,
    SpaceKind.RAVIART_THOMAS_FACE: 4,
    SpaceKind.DISCONTINUOUS_VECTOR: 3,
    SpaceKind.LAGRANGE_SCALAR: 4,
}


def barycentric(points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates (m, 4) of reference points (m, 3)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    lam = np.empty((pts.shape[0], 4))
    lam[:, 0] = 1.0 - pts.sum(axis=1)
    lam[:, 1:] = pts
    return lam


def eval_edge_basis(points) -> tuple[np.ndarray, np.ndarray]:
    """Whitney edge functions at reference points.

    Returns ``(values, curls)`` with values shaped (m, 6, 3) and the constant
    curls (6, 3); basis k lives on local edge TET_EDGES[k] = (a, b) and is
    lambda_a grad lambda_b - lambda_b grad lambda_a with curl
    2 grad lambda_a x grad lambda_b.  A single point gives (6, 3) values.
    """
    single = np.asarray(points).ndim == 1
    lam = barycentric(points)
    values = np.empty((lam.shape[0], 6, 3))
    curls = np.empty((6, 3))
    for k, (a, b) in enumerate(TET_EDGES):
        values[:, k, :] = (
            lam[:, a, None] * LAMBDA_GRADS[b] - lam[:, b, None] * LAMBDA_GRADS[a]
        )
        curls[k] = 2.0 * np.cross(LAMBDA_GRADS[a], LAMBDA_GRADS[b])
    return (values[0], curls) if single else (values, curls)


def eval_face_basis(points) -> tuple[np.ndarray, np.ndarray]:
    """Lowest-order Raviart-Thomas functions at reference points.

    Returns ``(values, divs)`` with values (m, 4, 3) and constant divergences
    (4,).  Basis k is dual to the flux through local face TET_FACES[k],
    measured along the right-hand-rule normal of the (ascending) face triple.
    """
    single = np.asarray(points).ndim == 1
    lam = barycentric(points)
    values = np.empty((lam.shape[0], 4, 3))
    divs = np.empty(4)
    for k, (a, b, c) in enumerate(TET_FACES):
        gbc = np.cross(LAMBDA_GRADS[b], LAMBDA_GRADS[c])
        gca = np.cross(LAMBDA_GRADS[c], LAMBDA_GRADS[a])
        gab = np.cross(LAMBDA_GRADS[a], LAMBDA_GRADS[b])
        values[:, k, :] = 2.0 * (
            lam[:, a, None] * gbc + lam[:, b, None] * gca + lam[:, c, None] * gab
        )
        divs[k] = 6.0 * float(LAMBDA_GRADS[a] @ gbc)
    return (values[0], divs) if single else (values, divs)


def eval_scalar_basis(points) -> tuple[np.ndarray, np.ndarray]:
    """P1 hat functions: values (m, 4) and constant gradients (4, 3)."""
    single = np.asarray(points).ndim == 1
    lam = barycentric(points)
    return (lam[0], LAMBDA_GRADS.copy()) if single else (lam, LAMBDA_GRADS.copy())


def push_forward(kind: SpaceKind, geom: TetGeometry, values, derivs=None):
    """Map reference basis data to a physical tet.

    H(curl) values transform covariantly (J^{-T} u) with curls scaled by
    J/det J; H(div) values transform contravariantly (J u / det J) with
    divergences scaled by 1/det J.  Scalar values are unchanged and their
    gradients transform by J^{-T}.  Tangential edge dofs and normal face
    fluxes are invariant under these maps.
    """
    if not np.isfinite(geom.det) or geom.det <= 0.0:
        raise ValueError(f"degenerate geometry with det J = {geom.det}")
    values = np.asarray(values, dtype=np.float64)
    if kind in (SpaceKind.NEDELEC_EDGE, SpaceKind.NEDELEC_EDGE_BC):
        out = values @ geom.inv_transpose.T
        if derivs is None:
            return out
        curls = np.asarray(derivs) @ geom.jacobian.T / geom.det
        return out, curls
    if kind is SpaceKind.RAVIART_THOMAS_FACE:
        out = values @ geom.jacobian.T / geom.det
        if derivs is None:
            return out
        return out, np.asarray(derivs) / geom.det
    if kind is SpaceKind.DISCONTINUOUS_VECTOR:
        return values if derivs is None else (values, np.asarray(derivs))
    if kind is SpaceKind.LAGRANGE_SCALAR:
        if derivs is None:
            return values
        return values, np.asarray(derivs) @ geom.inv_transpose.T
    raise ValueError(f"unknown space kind {kind}")


@dataclass(frozen=True)
class DofMap:
    """Cell-to-global dof connectivity of one space.

    ``cell_dofs[t, k]`` is the global index of local dof k on tet t (or -1
    for a gauge-removed dof) and ``cell_signs[t, k]`` the orientation factor
    relating the local basis function to the global one.  ``constrained``
    lists dofs pinned to zero (boundary edges of the H0(curl) space).
    """

    kind: SpaceKind
    num_dofs: int
    cell_dofs: np.ndarray   # (nt, n_local) int
    cell_signs: np.ndarray  # (nt, n_local) float
    constrained: np.ndarray  # sorted global indices

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.num_dofs, dtype=bool)
        mask[self.constrained] = False
        return np.flatnonzero(mask)

    @property
    def num_free(self) -> int:
        return self.num_dofs - len(self.constrained)


def build_dof_map(kind: SpaceKind, topo: Topology, order: int = 1,
                  pinned_vertex: int = 0) -> DofMap:
    """Global dof layout for one space on a given topology.

    Counts: edge space -> one dof per edge; face space -> one per face;
    discontinuous vectors -> three per tet; P1 scalars -> one per vertex
    minus the pinned gauge vertex.
    """
    _require_order_1(order)
    nt = topo.tet_edges.shape[0]
    none = np.empty(0, dtype=np.int64)
    if kind is SpaceKind.NEDELEC_EDGE or kind is SpaceKind.NEDELEC_EDGE_BC:
        constrained = topo.boundary_edges if kind is SpaceKind.NEDELEC_EDGE_BC else none
        return DofMap(
            kind=kind,
            num_dofs=topo.num_edges,
            cell_dofs=topo.tet_edges.copy(),
            cell_signs=topo.tet_edge_sign.astype(np.float64),
            constrained=np.sort(constrained),
        )
    if kind is SpaceKind.RAVIART_THOMAS_FACE:
        return DofMap(
            kind=kind,
            num_dofs=topo.num_faces,
            cell_dofs=topo.tet_faces.copy(),
            cell_signs=topo.tet_face_sign.astype(np.float64),
            constrained=none,
        )
    if kind is SpaceKind.DISCONTINUOUS_VECTOR:
        cell_dofs = 3 * np.arange(nt, dtype=np.int64)[:, None] + np.arange(3)
        return DofMap(
            kind=kind,
            num_dofs=3 * nt,
            cell_dofs=cell_dofs,
            cell_signs=np.ones((nt, 3)),
            constrained=none,
        )
    if kind is SpaceKind.LAGRANGE_SCALAR:
        # vertices appear in edges for any valid tet mesh
        nv = int(topo.edges.max()) + 1
        if not 0 <= pinned_vertex < nv:
            raise ValueError(f"pinned vertex {pinned_vertex} out of range")
        vmap = np.arange(nv, dtype=np.int64)
        vmap[pinned_vertex] = -1
        vmap[pinned_vertex + 1:] -= 1
        tets = _tets_from_topology(topo)
        return DofMap(
            kind=kind,
            num_dofs=nv - 1,
            cell_dofs=vmap[tets],
            cell_signs=np.ones((nt, 4)),
            constrained=none,
        )
    raise ValueError(f"unknown space kind {kind}")


def _tets_from_topology(topo: Topology) -> np.ndarray:
    """Recover tet vertex tuples from edge incidence (local edges 0,1,2 share
    local vertex 0 and end at 1, 2, 3)."""
    e = topo.edges
    nt = topo.tet_edges.shape[0]
    tets = np.empty((nt, 4), dtype=np.int64)
    for loc, edge_slot in enumerate((0, 1, 2)):
        pair = e[topo.tet_edges[:, edge_slot]]
        fwd = topo.tet_edge_sign[:, edge_slot] > 0
        tets[:, 0] = np.where(fwd, pair[:, 0], pair[:, 1])
        tets[:, loc + 1] = np.where(fwd, pair[:, 1], pair[:, 0])
    return tets


def interpolate_edge_dofs(func, mesh: Mesh, topo: Topology, time=None) -> np.ndarray:
    """Edge dofs of a vector field: tangential line integrals lo -> hi.

    ``func`` maps (m, 3) points to (m, 3) values (with a leading time
    argument when ``time`` is given).  Gauss quadrature with 4 points per
    edge, exact for the polynomial traces that occur here.
    """
    rule = segment_rule(4)
    s = rule.points[:, 0]
    p_lo = mesh.vertices[topo.edges[:, 0]]
    p_hi = mesh.vertices[topo.edges[:, 1]]
    direction = p_hi - p_lo  # tangent times length
    pts = p_lo[:, None, :] + s[None, :, None] * direction[:, None, :]
    flat = pts.reshape(-1, 3)
    vals = func(flat) if time is None else func(time, flat)
    vals = np.asarray(vals).reshape(len(p_lo), len(s), 3)
    return np.einsum("q,eqd,ed->e", rule.weights, vals, direction)


def interpolate_face_dofs(func, mesh: Mesh, topo: Topology, time=None) -> np.ndarray:
    """Face dofs of a vector field: fluxes through the sorted-triple normal."""
    rule = triangle_rule(5)
    u = rule.points[:, 0]
    v = rule.points[:, 1]
    q0 = mesh.vertices[topo.faces[:, 0]]
    q1 = mesh.vertices[topo.faces[:, 1]]
    q2 = mesh.vertices[topo.faces[:, 2]]
    normal2 = np.cross(q1 - q0, q2 - q0)  # normal times twice the area
    pts = (
        q0[:, None, :]
        + u[None, :, None] * (q1 - q0)[:, None, :]
        + v[None, :, None] * (q2 - q0)[:, None, :]
    )
    flat = pts.reshape(-1, 3)
    vals = func(flat) if time is None else func(time, flat)
    vals = np.asarray(vals).reshape(len(q0), len(u), 3)
    return np.einsum("q,fqd,fd->f", rule.weights, vals, normal2)
