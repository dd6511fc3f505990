import numpy as np
import pytest

from conftest import eval_on_tet
from kerrfem.fem_spaces import (
    SpaceKind,
    UnsupportedOrderError,
    build_dof_map,
    eval_edge_basis,
    eval_face_basis,
    eval_scalar_basis,
    interpolate_edge_dofs,
    interpolate_face_dofs,
    push_forward,
)
from kerrfem.mesh import TET_EDGES, TET_FACES, make_mesh, tet_geometry
from kerrfem.quadrature import segment_rule, triangle_rule

REF_VERTS = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])


def reference_edge_dofs(values_at):
    """Edge-dof functionals on the reference tet applied to a basis batch."""
    rule = segment_rule(4)
    D = np.zeros((6, 6))
    for i, (a, b) in enumerate(TET_EDGES):
        pa, pb = REF_VERTS[a], REF_VERTS[b]
        pts = pa + rule.points[:, 0:1] * (pb - pa)
        vals, _ = values_at(pts)
        D[i] = np.einsum("q,qjd,d->j", rule.weights, vals, pb - pa)
    return D


def test_edge_basis_barycenter_value():
    vals, curls = eval_edge_basis(np.array([0.25, 0.25, 0.25]))
    assert np.allclose(vals[0], [0.5, 0.25, 0.25])
    assert np.allclose(curls[0], [0.0, -2.0, 2.0])


def test_edge_dof_duality():
    D = reference_edge_dofs(eval_edge_basis)
    assert np.abs(D - np.eye(6)).max() < 1e-13


def test_edge_curl_is_constant():
    rng = np.random.default_rng(0)
    pts = rng.dirichlet(np.ones(4), size=5)[:, :3]
    _, curls = eval_edge_basis(pts)
    assert curls.shape == (6, 3)
    for k, (a, b) in enumerate(TET_EDGES):
        grads = np.array([[-1.0, -1, -1], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
        assert np.allclose(curls[k], 2.0 * np.cross(grads[a], grads[b]))


def test_face_dof_duality():
    rule = triangle_rule(5)
    F = np.zeros((4, 4))
    for i, (a, b, c) in enumerate(TET_FACES):
        pa, pb, pc = REF_VERTS[a], REF_VERTS[b], REF_VERTS[c]
        pts = pa + rule.points[:, 0:1] * (pb - pa) + rule.points[:, 1:2] * (pc - pa)
        vals, _ = eval_face_basis(pts)
        n2 = np.cross(pb - pa, pc - pa)
        F[i] = np.einsum("q,qjd,d->j", rule.weights, vals, n2)
    assert np.abs(F - np.eye(4)).max() <= 1e-12


def test_face_divergence_theorem():
    # |K| div(phi_f) equals the total outward boundary flux of phi_f
    rule = triangle_rule(5)
    _, divs = eval_face_basis(np.array([[0.25, 0.25, 0.25]]))
    centroid = REF_VERTS.mean(axis=0)
    for j in range(4):
        flux = 0.0
        for (a, b, c) in TET_FACES:
            pa, pb, pc = REF_VERTS[a], REF_VERTS[b], REF_VERTS[c]
            pts = pa + rule.points[:, 0:1] * (pb - pa) + rule.points[:, 1:2] * (pc - pa)
            vals, _ = eval_face_basis(pts)
            n2 = np.cross(pb - pa, pc - pa)
            if n2 @ (pa - centroid) < 0:  # orient outward
                n2 = -n2
            flux += np.einsum("q,qd,d->", rule.weights, vals[:, j, :], n2)
        assert flux == pytest.approx(divs[j] / 6.0, abs=1e-12)


def test_constant_field_face_expansion():
    # a constant expands with coefficients equal to its face fluxes
    rng = np.random.default_rng(1)
    c = rng.normal(size=3)
    coeffs = np.zeros(4)
    for i, (a, b, cc) in enumerate(TET_FACES):
        pa, pb, pc = REF_VERTS[a], REF_VERTS[b], REF_VERTS[cc]
        n2 = np.cross(pb - pa, pc - pa)
        coeffs[i] = 0.5 * c @ n2  # flux of the constant through face i
    pts = np.random.default_rng(2).dirichlet(np.ones(4), size=10)[:, :3]
    vals, _ = eval_face_basis(pts)
    recon = np.einsum("qid,i->qd", vals, coeffs)
    assert np.abs(recon - c).max() < 1e-13


def test_scalar_basis_partition_of_unity():
    pts = np.random.default_rng(3).dirichlet(np.ones(4), size=8)[:, :3]
    vals, grads = eval_scalar_basis(pts)
    assert np.allclose(vals.sum(axis=1), 1.0)
    assert np.allclose(grads.sum(axis=0), 0.0)


def test_dof_counts_unit_cube(cube1):
    mesh, topo = cube1
    dm_u = build_dof_map(SpaceKind.NEDELEC_EDGE, topo)
    assert dm_u.num_dofs == 19
    dm_w = build_dof_map(SpaceKind.DISCONTINUOUS_VECTOR, topo)
    assert dm_w.num_dofs == 18
    dm_u0 = build_dof_map(SpaceKind.NEDELEC_EDGE_BC, topo)
    assert dm_u0.num_dofs == 19
    assert len(dm_u0.constrained) == 18  # only the body diagonal is interior
    dm_v = build_dof_map(SpaceKind.RAVIART_THOMAS_FACE, topo)
    assert dm_v.num_dofs == 18
    dm_s = build_dof_map(SpaceKind.LAGRANGE_SCALAR, topo)
    assert dm_s.num_dofs == 7  # vertices minus gauge


def test_order_guard(cube1):
    _, topo = cube1
    with pytest.raises(UnsupportedOrderError):
        build_dof_map(SpaceKind.NEDELEC_EDGE, topo, order=2)


def test_push_forward_identity(reference_tet_mesh):
    geom = tet_geometry(reference_tet_mesh, 0)
    pts = np.array([[0.2, 0.3, 0.1]])
    vals, curls = eval_edge_basis(pts)
    pv, pc = push_forward(SpaceKind.NEDELEC_EDGE, geom, vals, curls)
    assert np.allclose(pv, vals)
    assert np.allclose(pc, curls)
    fvals, fdivs = eval_face_basis(pts)
    qv, qd = push_forward(SpaceKind.RAVIART_THOMAS_FACE, geom, fvals, fdivs)
    assert np.allclose(qv, fvals)
    assert np.allclose(qd, fdivs)


def test_push_forward_rejects_degenerate(reference_tet_mesh):
    geom = tet_geometry(reference_tet_mesh, 0)
    bad = type(geom)(
        origin=geom.origin, jacobian=geom.jacobian, det=0.0,
        inv_transpose=geom.inv_transpose,
    )
    with pytest.raises(ValueError):
        push_forward(SpaceKind.NEDELEC_EDGE, bad, np.zeros((1, 6, 3)))


def test_mapped_edge_dof_invariance():
    # tangential edge dof of the mapped Whitney function equals 1
    rng = np.random.default_rng(4)
    verts = rng.normal(size=(4, 3))
    mesh = make_mesh(verts, np.array([[0, 1, 2, 3]]))
    geom = tet_geometry(mesh, 0)
    rule = segment_rule(4)
    for k, (a, b) in enumerate(TET_EDGES):
        ra, rb = REF_VERTS[a], REF_VERTS[b]
        ref_pts = ra + rule.points[:, 0:1] * (rb - ra)
        vals, _ = eval_edge_basis(ref_pts)
        phys = push_forward(SpaceKind.NEDELEC_EDGE, geom, vals)
        pa, pb = geom.to_physical(ra), geom.to_physical(rb)
        dof = np.einsum("q,qd,d->", rule.weights, phys[:, k, :], pb - pa)
        assert dof == pytest.approx(1.0, abs=1e-12)


def test_mapped_face_flux_invariance():
    rng = np.random.default_rng(5)
    verts = rng.normal(size=(4, 3))
    mesh = make_mesh(verts, np.array([[0, 1, 2, 3]]))
    geom = tet_geometry(mesh, 0)
    rule = triangle_rule(5)
    for k, (a, b, c) in enumerate(TET_FACES):
        ra, rb, rc = REF_VERTS[a], REF_VERTS[b], REF_VERTS[c]
        ref_pts = ra + rule.points[:, 0:1] * (rb - ra) + rule.points[:, 1:2] * (rc - ra)
        vals, _ = eval_face_basis(ref_pts)
        phys = push_forward(SpaceKind.RAVIART_THOMAS_FACE, geom, vals)
        pa, pb, pc = (geom.to_physical(p) for p in (ra, rb, rc))
        n2 = np.cross(pb - pa, pc - pa)
        flux = np.einsum("q,qd,d->", rule.weights, phys[:, k, :], n2)
        assert flux == pytest.approx(1.0, abs=1e-12)


def _face_samples(mesh, topo, f):
    tri = topo.faces[f]
    P = mesh.vertices[tri]
    bary = np.array([[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.25, 0.35, 0.4]])
    n = np.cross(P[1] - P[0], P[2] - P[0])
    return bary @ P, n / np.linalg.norm(n)


def test_hcurl_tangential_conformity(cube2):
    mesh, topo = cube2
    dm = build_dof_map(SpaceKind.NEDELEC_EDGE, topo)
    rng = np.random.default_rng(6)
    coeffs = rng.normal(size=dm.num_dofs)
    for f in range(topo.num_faces):
        t1, t2 = topo.face_tets[f]
        if t2 < 0:
            continue
        X, n = _face_samples(mesh, topo, f)
        d = eval_on_tet(mesh, dm, coeffs, t1, X) - eval_on_tet(mesh, dm, coeffs, t2, X)
        tang = d - (d @ n)[:, None] * n
        assert np.abs(tang).max() < 1e-10


def test_hdiv_normal_conformity(cube2):
    mesh, topo = cube2
    dm = build_dof_map(SpaceKind.RAVIART_THOMAS_FACE, topo)
    rng = np.random.default_rng(7)
    coeffs = rng.normal(size=dm.num_dofs)
    for f in range(topo.num_faces):
        t1, t2 = topo.face_tets[f]
        if t2 < 0:
            continue
        X, n = _face_samples(mesh, topo, f)
        d = eval_on_tet(mesh, dm, coeffs, t1, X) - eval_on_tet(mesh, dm, coeffs, t2, X)
        assert np.abs(d @ n).max() < 1e-10


def test_u0h_zero_tangential_boundary_trace(cube2):
    mesh, topo = cube2
    dm = build_dof_map(SpaceKind.NEDELEC_EDGE_BC, topo)
    rng = np.random.default_rng(8)
    coeffs = rng.normal(size=dm.num_dofs)
    coeffs[dm.constrained] = 0.0
    for f in topo.boundary_faces:
        X, n = _face_samples(mesh, topo, f)
        t1 = topo.face_tets[f, 0]
        v = eval_on_tet(mesh, dm, coeffs, t1, X)
        assert np.abs(np.cross(n, v)).max() <= 1e-12


def test_interpolation_reproduces_in_space_fields(cube2):
    # Whitney interpolation reproduces a + c x X; face-flux interpolation
    # reproduces a + b X (the respective local shape spaces).
    mesh, topo = cube2
    a = np.array([0.3, -0.7, 0.1])
    c = np.array([1.0, -2.0, 0.5])

    def whitney_type(X):
        X = np.atleast_2d(X)
        return a + np.cross(np.broadcast_to(c, X.shape), X)

    def rt_type(X):
        X = np.atleast_2d(X)
        return a + 0.8 * X

    dm = build_dof_map(SpaceKind.NEDELEC_EDGE, topo)
    edofs = interpolate_edge_dofs(whitney_type, mesh, topo)
    dmv = build_dof_map(SpaceKind.RAVIART_THOMAS_FACE, topo)
    fdofs = interpolate_face_dofs(rt_type, mesh, topo)
    for t in (0, 7, 23):
        X = mesh.vertices[mesh.tets[t]].mean(axis=0, keepdims=True)
        ve = eval_on_tet(mesh, dm, edofs, t, X)
        assert np.abs(ve - whitney_type(X)).max() < 1e-12
        vf = eval_on_tet(mesh, dmv, fdofs, t, X)
        assert np.abs(vf - rt_type(X)).max() < 1e-12
