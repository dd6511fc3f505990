import numpy as np
import pytest

from conftest import discrete_field_closure, piecewise_curl_closure
from kerrfem.assembly import (
    assemble_coupling,
    assemble_gradient,
    assemble_mass,
    assemble_nonlinear_mass,
    assemble_nonlinear_mass_curl,
    assemble_source,
    build_context,
    build_forms,
    curl_project,
    l2_project,
)
from kerrfem.fem_spaces import SpaceKind, build_dof_map
from kerrfem.material import MaterialParams
from kerrfem.mesh import TET_EDGES, build_topology, generate_structured_cube, make_mesh
from kerrfem.quadrature import (
    monomial_integral_tet,
    segment_rule,
    tetrahedron_rule,
    triangle_rule,
)


def test_tet_rule_monomial_exactness():
    rule = tetrahedron_rule(5)
    assert rule.weights.sum() == pytest.approx(1.0 / 6.0, abs=1e-15)
    assert np.all(rule.weights > 0)
    x, y, z = rule.points.T
    for a in range(5):
        for b in range(5 - a):
            for c in range(5 - a - b):
                got = np.sum(rule.weights * x**a * y**b * z**c)
                assert got == pytest.approx(
                    monomial_integral_tet(a, b, c), abs=1e-14
                )


def test_triangle_and_segment_rules():
    tri = triangle_rule(5)
    assert tri.weights.sum() == pytest.approx(0.5, abs=1e-15)
    u, v = tri.points.T
    # int over unit triangle of u^a v^b = a! b! / (a+b+2)!
    from math import factorial

    for a in range(4):
        for b in range(4 - a):
            got = np.sum(tri.weights * u**a * v**b)
            assert got == pytest.approx(
                factorial(a) * factorial(b) / factorial(a + b + 2), abs=1e-15
            )
    seg = segment_rule(4)
    for a in range(8):
        assert np.sum(seg.weights * seg.points[:, 0] ** a) == pytest.approx(
            1.0 / (a + 1), abs=1e-15
        )


@pytest.fixture(scope="module")
def ctx2(cube2):
    mesh, topo = cube2
    return build_context(mesh, topo)


def test_w_mass_is_volume_blocks(ctx2):
    dm = build_dof_map(SpaceKind.DISCONTINUOUS_VECTOR, ctx2.topo)
    M = assemble_mass(ctx2, SpaceKind.DISCONTINUOUS_VECTOR, dm)
    expect = np.kron(np.diag(ctx2.vol), np.eye(3))
    assert np.abs(M.to_dense() - expect).max() < 1e-15
    # volume sum: trace of the unweighted Gram equals 3 |Omega|
    assert np.trace(M.to_dense()) == pytest.approx(3.0, abs=1e-12)


def test_masses_are_spd(ctx2):
    rng = np.random.default_rng(0)
    for kind in (SpaceKind.NEDELEC_EDGE, SpaceKind.RAVIART_THOMAS_FACE):
        dm = build_dof_map(kind, ctx2.topo)
        M = assemble_mass(ctx2, kind, dm, weight=2.0)
        D = M.to_dense()
        assert np.abs(D - D.T).max() < 1e-14
        for _ in range(5):
            x = rng.normal(size=dm.num_dofs)
            assert x @ (M @ x) > 0.0


def test_mass_weight_forms(ctx2):
    dm = build_dof_map(SpaceKind.NEDELEC_EDGE, ctx2.topo)
    M1 = assemble_mass(ctx2, SpaceKind.NEDELEC_EDGE, dm, weight=1.0)
    M2 = assemble_mass(ctx2, SpaceKind.NEDELEC_EDGE, dm, weight=np.full(ctx2.num_tets, 2.0))
    assert np.abs(2.0 * M1.to_dense() - M2.to_dense()).max() < 1e-13
    M3 = assemble_mass(ctx2, SpaceKind.NEDELEC_EDGE, dm,
                       weight=lambda X: 2.0 * np.ones(len(X)))
    assert np.abs(M2.to_dense() - M3.to_dense()).max() < 1e-13


def test_nonlinear_mass_vacuum(ctx2):
    params = MaterialParams(eps0=2.0)
    m = assemble_nonlinear_mass(ctx2, params, np.zeros(3 * ctx2.num_tets))
    expect = 2.0 * ctx2.vol[:, None, None] * np.eye(3)
    assert np.abs(m.blocks - expect).max() < 1e-15


def test_nonlinear_mass_single_tet_example():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    mesh = make_mesh(verts, np.array([[0, 1, 2, 3]]))
    ctx = build_context(mesh, build_topology(mesh))
    params = MaterialParams(eps0=1.0, chi1=0.0, chi3=1.0)
    m = assemble_nonlinear_mass(ctx, params, np.array([1.0, 0.0, 0.0]))
    assert np.allclose(m.blocks[0], ctx.vol[0] * np.diag([4.0, 2.0, 2.0]))


def test_nonlinear_mass_blockwise_inverse(ctx2):
    rng = np.random.default_rng(1)
    params = MaterialParams(eps0=1.3, chi1=0.2, chi3=0.7)
    e = rng.normal(size=3 * ctx2.num_tets)
    m = assemble_nonlinear_mass(ctx2, params, e)
    for t in (0, 5, 17):
        num_inv = np.linalg.inv(m.blocks[t])
        assert np.abs(m.inv_blocks[t] - num_inv).max() < 1e-13
    x = rng.normal(size=3 * ctx2.num_tets)
    assert np.abs(m.solve(m.matvec(x)) - x).max() < 1e-12


def test_nonlinear_mass_curl_matches_block_structure(ctx2):
    # with chi3 = 0 the edge-space eps-mass is the scaled plain mass
    params = MaterialParams(eps0=2.0, chi1=0.5)
    dm = build_dof_map(SpaceKind.NEDELEC_EDGE, ctx2.topo)
    rng = np.random.default_rng(2)
    e = rng.normal(size=dm.num_dofs)
    M = assemble_nonlinear_mass_curl(ctx2, params, dm, e)
    M1 = assemble_mass(ctx2, SpaceKind.NEDELEC_EDGE, dm, weight=1.0)
    assert np.abs(M.to_dense() - 3.0 * M1.to_dense()).max() < 1e-12


def test_nonlinear_mass_curl_is_spd_kerr(ctx2):
    params = MaterialParams(chi3=1.5)
    dm = build_dof_map(SpaceKind.NEDELEC_EDGE, ctx2.topo)
    rng = np.random.default_rng(3)
    e = rng.normal(size=dm.num_dofs)
    M = assemble_nonlinear_mass_curl(ctx2, params, dm, e)
    w = np.linalg.eigvalsh(M.to_dense())
    M1 = assemble_mass(ctx2, SpaceKind.NEDELEC_EDGE, dm, weight=1.0)
    w1 = np.linalg.eigvalsh(M1.to_dense())
    assert w.min() >= w1.min() - 1e-12  # eps(E) >= eps0 I = I


def test_coupling_reference_tet_entries():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    mesh = make_mesh(verts, np.array([[0, 1, 2, 3]]))
    topo = build_topology(mesh)
    ctx = build_context(mesh, topo)
    dm = build_dof_map(SpaceKind.NEDELEC_EDGE, topo)
    C = assemble_coupling(ctx, "lee-madsen", {"U": dm}).to_dense()
    # entries are |K| times the constant curl components (signs are +1 here)
    for j in range(6):
        assert np.allclose(C[:, dm.cell_dofs[0, j]],
                           ctx.vol[0] * ctx.edge_curls[0, j] * dm.cell_signs[0, j])


def test_coupling_gradient_columns_vanish(forms2):
    # coefficients of a discrete gradient field lie in the kernel of C
    rng = np.random.default_rng(4)
    q = rng.normal(size=forms2.grad.shape[1])
    grad_coeffs = forms2.grad @ q
    assert np.abs(forms2.coupling_lm @ grad_coeffs).max() <= 1e-13
    assert np.abs(forms2.discrete_curl @ grad_coeffs).max() <= 1e-13


def test_coupling_transpose_identity(forms2):
    rng = np.random.default_rng(5)
    e = rng.normal(size=forms2.coupling_lm.shape[0])
    h = rng.normal(size=forms2.coupling_lm.shape[1])
    a = e @ (forms2.coupling_lm @ h)
    b = h @ (forms2.coupling_lm.T @ e)
    assert a == pytest.approx(b, rel=1e-15)


def test_nedelec_coupling_matches_quadrature(cube1):
    mesh, topo = cube1
    ctx = build_context(mesh, topo)
    dm_u0 = build_dof_map(SpaceKind.NEDELEC_EDGE_BC, topo)
    dm_v = build_dof_map(SpaceKind.RAVIART_THOMAS_FACE, topo)
    K = assemble_coupling(ctx, "nedelec", {"U0": dm_u0, "V": dm_v}).to_dense()
    # quadrature oracle for (phi_i^V, curl psi_j)
    oracle = np.zeros((dm_v.num_dofs, dm_u0.num_dofs))
    for t in range(ctx.num_tets):
        for i in range(4):
            gi, si = dm_v.cell_dofs[t, i], dm_v.cell_signs[t, i]
            for j in range(6):
                gj, sj = dm_u0.cell_dofs[t, j], dm_u0.cell_signs[t, j]
                val = np.einsum(
                    "q,qd,d->", ctx.rule.weights, ctx.face_values[t, :, i, :],
                    ctx.edge_curls[t, j],
                ) * ctx.det[t]
                oracle[gi, gj] += si * sj * val
    assert np.abs(K - oracle[:, dm_u0.free]).max() < 1e-13


def test_discrete_curl_reproduces_curl(cube2):
    mesh, topo = cube2
    forms = build_forms(mesh, topo, MaterialParams())
    rng = np.random.default_rng(6)
    u = rng.normal(size=forms.dof_u.num_dofs)
    hcoeff = forms.discrete_curl @ u
    # compare the RT representation against the cellwise constant curl
    cell_curl = np.einsum(
        "tid,ti->td",
        forms.ctx.edge_curls * forms.dof_u.cell_signs[:, :, None],
        u[forms.dof_u.cell_dofs],
    )
    H = forms.ctx.field_at_quads(forms.dof_v, hcoeff)
    assert np.abs(H - cell_curl[:, None, :]).max() < 1e-12


def test_l2_project_constants(ctx2):
    c = np.array([1.5, -2.0, 0.25])
    coeffs = l2_project(ctx2, lambda X: np.broadcast_to(c, np.atleast_2d(X).shape))
    assert np.abs(coeffs.reshape(-1, 3) - c).max() < 1e-14


def test_l2_project_commutes_with_curl(cube2, forms2):
    mesh, _ = cube2
    rng = np.random.default_rng(7)
    u = rng.normal(size=forms2.dof_u.num_dofs)
    closure = piecewise_curl_closure(mesh, forms2, u)
    projected = l2_project(forms2.ctx, closure)
    signed = forms2.ctx.edge_curls * forms2.dof_u.cell_signs[:, :, None]
    exact = np.einsum("tid,ti->td", signed, u[forms2.dof_u.cell_dofs]).ravel()
    assert np.abs(projected - exact).max() <= 1e-12


def test_l2_projection_rate():
    errs = []
    for n in (2, 4):
        mesh = generate_structured_cube(n)
        ctx = build_context(mesh, build_topology(mesh))

        def w(X):
            X = np.atleast_2d(X)
            out = np.zeros_like(X)
            out[:, 0] = np.sin(np.pi * X[:, 0])
            return out

        coeffs = l2_project(ctx, w)
        dm = build_dof_map(SpaceKind.DISCONTINUOUS_VECTOR, ctx.topo)
        wh = ctx.field_at_quads(dm, coeffs)
        d = wh - np.asarray(w(ctx.phys_pts.reshape(-1, 3))).reshape(*ctx.phys_pts.shape)
        errs.append(np.sqrt(np.einsum("q,tqd,tqd,t->", ctx.rule.weights, d, d, ctx.det)))
    eoc = np.log2(errs[0] / errs[1])
    assert 0.8 <= eoc <= 1.3


def test_curl_project_idempotent_on_discrete_fields(cube2, forms2):
    mesh, _ = cube2
    rng = np.random.default_rng(8)
    coeffs = rng.normal(size=forms2.dof_u.num_dofs)
    v = discrete_field_closure(mesh, forms2.dof_u, coeffs)
    vc = piecewise_curl_closure(mesh, forms2, coeffs)
    proj = curl_project(forms2.ctx, v, vc)
    assert np.abs(proj - coeffs).max() < 1e-10


def test_curl_project_gradient_field(forms2):
    # v = grad(q) for smooth q: the projection is curl-free and matches the
    # gradient moments of v
    def q_grad(X):
        X = np.atleast_2d(X)
        s = np.pi
        return np.stack(
            [
                s * np.cos(s * X[:, 0]) * np.sin(s * X[:, 1]),
                s * np.sin(s * X[:, 0]) * np.cos(s * X[:, 1]),
                np.zeros(len(X)),
            ],
            axis=-1,
        )

    zero = lambda X: np.zeros_like(np.atleast_2d(X))
    u = curl_project(forms2.ctx, q_grad, zero)
    assert np.abs(forms2.discrete_curl @ u).max() <= 1e-10
    g = forms2.grad.T @ assemble_source(
        forms2.ctx, q_grad, SpaceKind.NEDELEC_EDGE, forms2.dof_u
    )
    got = forms2.grad.T @ (forms2.mass_u1 @ u)
    assert np.abs(got - g).max() <= 1e-10


def test_curl_project_gauge_invariance(forms2):
    def v(X):
        X = np.atleast_2d(X)
        sx, sy = np.sin(np.pi * X[:, 0]), np.sin(np.pi * X[:, 1])
        cx, cy = np.cos(np.pi * X[:, 0]), np.cos(np.pi * X[:, 1])
        return np.stack([-sx * cy, cx * sy, np.zeros(len(X))], axis=-1)

    def vc(X):
        X = np.atleast_2d(X)
        out = np.zeros_like(X)
        out[:, 2] = -2.0 * np.pi * np.sin(np.pi * X[:, 0]) * np.sin(np.pi * X[:, 1])
        return out

    u0 = curl_project(forms2.ctx, v, vc, pinned_vertex=0)
    u7 = curl_project(forms2.ctx, v, vc, pinned_vertex=7)
    assert np.abs(u0 - u7).max() < 1e-9


def test_assemble_source_zero_and_constant(ctx2):
    dm = build_dof_map(SpaceKind.DISCONTINUOUS_VECTOR, ctx2.topo)
    zero = assemble_source(
        ctx2, lambda X: np.zeros_like(np.atleast_2d(X)), SpaceKind.DISCONTINUOUS_VECTOR, dm
    )
    assert np.all(zero == 0.0)
    c = np.array([2.0, -1.0, 0.5])
    load = assemble_source(
        ctx2, lambda X: np.broadcast_to(c, np.atleast_2d(X).shape),
        SpaceKind.DISCONTINUOUS_VECTOR, dm,
    )
    expect = (ctx2.vol[:, None] * c).ravel()
    assert np.abs(load - expect).max() < 1e-14


def _poly_affine_product_integral(poly, lin):
    """Exact integral over the reference tet of poly(x) * lin(x), where poly
    is a dict {(a,b,c): coeff} and lin = (c0, cx, cy, cz) is affine."""
    total = 0.0
    c0, cx, cy, cz = lin
    for (a, b, c), coeff in poly.items():
        total += coeff * (
            c0 * monomial_integral_tet(a, b, c)
            + cx * monomial_integral_tet(a + 1, b, c)
            + cy * monomial_integral_tet(a, b + 1, c)
            + cz * monomial_integral_tet(a, b, c + 1)
        )
    return total


def test_assemble_source_polynomial_exactness(reference_tet_mesh):
    # degree-3 polynomial target against the Whitney basis, checked against
    # the closed-form monomial integrals
    topo = build_topology(reference_tet_mesh)
    ctx = build_context(reference_tet_mesh, topo)
    dm = build_dof_map(SpaceKind.NEDELEC_EDGE, topo)
    polys = (
        {(2, 1, 0): 1.0, (0, 0, 0): 0.5},   # x^2 y + 0.5
        {(0, 3, 0): -2.0, (1, 0, 1): 1.0},  # -2 y^3 + x z
        {(0, 0, 2): 3.0, (1, 1, 1): -1.0},  # 3 z^2 - x y z
    )

    def target(X):
        X = np.atleast_2d(X)
        x, y, z = X[:, 0], X[:, 1], X[:, 2]
        cols = []
        for p in polys:
            col = np.zeros(len(X))
            for (a, b, c), coeff in p.items():
                col += coeff * x**a * y**b * z**c
            cols.append(col)
        return np.stack(cols, axis=-1)

    load = assemble_source(ctx, target, SpaceKind.NEDELEC_EDGE, dm)
    grads = np.array([[-1.0, -1, -1], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    lam_affine = {  # lambda_i as (c0, cx, cy, cz)
        0: (1.0, -1.0, -1.0, -1.0),
        1: (0.0, 1.0, 0.0, 0.0),
        2: (0.0, 0.0, 1.0, 0.0),
        3: (0.0, 0.0, 0.0, 1.0),
    }
    for k, (a, b) in enumerate(TET_EDGES):
        exact = 0.0
        for comp in range(3):
            # w_k component: lam_a * grads[b][comp] - lam_b * grads[a][comp]
            la = tuple(grads[b][comp] * v for v in lam_affine[a])
            lb = tuple(-grads[a][comp] * v for v in lam_affine[b])
            lin = tuple(la[i] + lb[i] for i in range(4))
            exact += _poly_affine_product_integral(polys[comp], lin)
        gk = dm.cell_dofs[0, k]
        assert load[gk] == pytest.approx(exact, abs=1e-14)


def test_assembly_permutation_invariance():
    # same mesh with permuted tet order assembles the same global matrix
    mesh = generate_structured_cube(2)
    perm = np.random.default_rng(9).permutation(mesh.num_tets)
    mesh_p = make_mesh(mesh.vertices, mesh.tets[perm])
    f1 = build_forms(mesh, build_topology(mesh), MaterialParams())
    f2 = build_forms(mesh_p, build_topology(mesh_p), MaterialParams())
    # summation order differs, so agreement is to roundoff in the entries
    assert np.abs(f1.mass_u1.to_dense() - f2.mass_u1.to_dense()).max() < 1e-14
    assert np.abs(f1.curl_curl.to_dense() - f2.curl_curl.to_dense()).max() < 1e-14


def test_curl_curl_gram(forms2):
    rng = np.random.default_rng(10)
    u = rng.normal(size=forms2.dof_u.num_dofs)
    quad = u @ (forms2.curl_curl @ u)
    signed = forms2.ctx.edge_curls * forms2.dof_u.cell_signs[:, :, None]
    cell_curl = np.einsum("tid,ti->td", signed, u[forms2.dof_u.cell_dofs])
    direct = np.einsum("td,td,t->", cell_curl, cell_curl, forms2.ctx.vol)
    assert quad == pytest.approx(direct, rel=1e-13)


def test_gradient_matrix_is_incidence(cube2):
    mesh, topo = cube2
    ctx = build_context(mesh, topo)
    G = assemble_gradient(ctx, pinned_vertex=0).to_dense()
    nv = mesh.num_vertices
    for e, (lo, hi) in enumerate(topo.edges[:10]):
        row = np.zeros(nv - 1)
        if hi != 0:
            row[hi - 1] += 1.0
        if lo != 0:
            row[lo - 1] -= 1.0
        assert np.allclose(G[e], row)
