import numpy as np
import pytest
import scipy.sparse as sp
import sympy as sy

import oracle
from ipdgeig.assembly import (assemble_a, assemble_b, assemble_c, assemble_mass,
                              assemble_system, dump_coo, load_coo)
from ipdgeig.materials import MaterialTable
from ipdgeig.mesh import generate_unit_square, mesh_from_triangles, refine
from ipdgeig.spaces import build_space, lattice_nodes

TWO_MAT = MaterialTable(0.35, {1: (3.0, 2.0), 2: (5.0, 0.5)})


def two_material_mesh(seed=3):
    rng = np.random.default_rng(seed)
    mesh = generate_unit_square(2, "bottom,left", split=("y", 0.5, (1, 2)))
    mesh = refine(mesh, [0, 3])
    return refine(mesh, rng.choice(mesh.n_elements, 3, replace=False))


def reference_triangle():
    return mesh_from_triangles([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], boundary="N")


def sympy_basis(k):
    x, y = sy.symbols("x y")
    mons = [x ** a * y ** (d - a) for d in range(k + 1) for a in range(d + 1)]
    nodes = [tuple(sy.Rational(int(round(c * k)), k) for c in p) for p in lattice_nodes(k)]
    V = sy.Matrix([[m.subs({x: px, y: py}) for m in mons] for px, py in nodes])
    coef = V.inv()
    return x, y, [sum(coef[j, i] * mons[j] for j in range(len(mons))) for i in range(len(mons))]


def tri_integral(expr, x, y):
    return sy.integrate(sy.integrate(expr, (y, 0, 1 - x)), (x, 0, 1))


def test_volume_block_matches_symbolic():
    k = 1
    x, y, phi = sympy_basis(k)
    nb = len(phi)
    fields = [(p, 0) for p in phi] + [(0, p) for p in phi]

    def strain(f):
        ux, uy = (sy.sympify(c) for c in f)
        exy = (sy.diff(ux, y) + sy.diff(uy, x)) / 2
        return sy.diff(ux, x), exy, sy.diff(uy, y)

    mu = sy.Rational(1, 2)
    exact = np.zeros((2 * nb, 2 * nb))
    for i, fi in enumerate(fields):
        for j, fj in enumerate(fields):
            a, b, c = strain(fi)
            d, e, f = strain(fj)
            exact[i, j] = float(tri_integral(2 * mu * (a * d + 2 * b * e + c * f), x, y))
    space = build_space(reference_triangle(), k)
    A = assemble_a(space, MaterialTable.homogeneous(1.0, 0.35), a_S=10.0).toarray()
    assert np.max(np.abs(A - exact)) <= 1e-13


def test_mass_block_k2_matches_symbolic():
    k = 2
    x, y, phi = sympy_basis(k)
    exact = np.array([[float(tri_integral(pi * pj, x, y)) for pj in phi] for pi in phi])
    M = assemble_mass(build_space(reference_triangle(), k),
                      MaterialTable.homogeneous(1.0, 0.35)).toarray()
    nb = len(phi)
    assert np.max(np.abs(M[:nb, :nb] - exact)) <= 1e-13
    assert np.max(np.abs(M[nb:, nb:] - exact)) <= 1e-13
    assert np.all(M[:nb, nb:] == 0)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_b_matches_brute_force(k):
    mesh = two_material_mesh()
    space = build_space(mesh, k)
    rng = np.random.default_rng(k)
    v = rng.standard_normal(space.n_u)
    q = rng.standard_normal(space.n_p)
    got = q @ assemble_b(space) @ v
    assert got == pytest.approx(oracle.b_form(mesh, k, v, q), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("epsilon", [-1, 0, 1])
def test_a_matches_brute_force(k, epsilon):
    mesh = two_material_mesh()
    space = build_space(mesh, k)
    rng = np.random.default_rng(10 * k + epsilon)
    u, v = rng.standard_normal((2, space.n_u))
    a_S = 10.0 * k ** 2
    A = assemble_a(space, TWO_MAT, a_S, epsilon)
    ref = oracle.a_form(mesh, TWO_MAT, k, u, v, a_S, epsilon)
    scale = np.abs(v) @ abs(A) @ np.abs(u)
    assert abs(v @ A @ u - ref) <= 1e-12 * scale


def test_b_divergence_example():
    # v = (x, 0), q = 1 on the bottom-clamped square
    mesh = generate_unit_square(3, "bottom")
    space = build_space(mesh, 1)
    v = oracle.interpolate(mesh, 1, lambda x: np.stack([x[:, 0], 0 * x[:, 0]], 1))
    q = np.ones(space.n_p)
    assert q @ assemble_b(space) @ v == pytest.approx(-1.0, abs=1e-13)


@pytest.mark.parametrize("k", [1, 2])
def test_conforming_fields_reduce_to_volume_forms(k):
    mesh = generate_unit_square(3, "bottom")
    space = build_space(mesh, k)
    mats = MaterialTable.homogeneous(2.0, 0.3)
    if k == 1:
        fu = lambda x: np.stack([x[:, 1], 2 * x[:, 1]], 1)  # noqa: E731
        fv = lambda x: np.stack([-x[:, 1], 0.5 * x[:, 1]], 1)  # noqa: E731
    else:
        fu = lambda x: np.stack([x[:, 0] * x[:, 1], x[:, 1] ** 2], 1)  # noqa: E731
        fv = lambda x: np.stack([x[:, 1] * (1 - x[:, 0]), x[:, 1]], 1)  # noqa: E731
    u, v = oracle.interpolate(mesh, k, fu), oracle.interpolate(mesh, k, fv)
    A = assemble_a(space, mats, 10.0 * k ** 2)
    mu = 1.0
    vol = 0.0
    zp = np.zeros(space.n_p)
    bu, bv = oracle.BrokenField(mesh, k, u, zp), oracle.BrokenField(mesh, k, v, zp)
    for e in range(mesh.n_elements):
        x, w = oracle.triangle_rule(mesh.vertices[mesh.triangles[e]], 2 * k + 2)
        vol += 2 * mu * np.sum(w * np.einsum("qab,qab->q", bu.strain(e, x), bv.strain(e, x)))
    assert v @ A @ u == pytest.approx(vol, rel=1e-12)
    q = np.random.default_rng(0).standard_normal(space.n_p)
    bq = oracle.BrokenField(mesh, k, np.zeros(space.n_u), q)
    vol_b = -sum(np.sum(w * bv.div(e, x) * bq.p[e](x))
                 for e in range(mesh.n_elements)
                 for x, w in [oracle.triangle_rule(mesh.vertices[mesh.triangles[e]], 2 * k + 2)])
    assert q @ assemble_b(space) @ v == pytest.approx(vol_b, rel=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_symmetric_for_sip(k):
    space = build_space(two_material_mesh(), k)
    A = assemble_a(space, TWO_MAT, 10.0 * k ** 2, 1)
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()
    An = assemble_a(space, TWO_MAT, 10.0 * k ** 2, -1)
    assert abs(An - An.T).max() > 1e-3 * abs(An).max()


def test_epsilon_rejected():
    space = build_space(generate_unit_square(1), 1)
    mats = MaterialTable.homogeneous()
    with pytest.raises(ValueError, match="epsilon"):
        assemble_a(space, mats, 10.0, 2)
    with pytest.raises(ValueError):
        assemble_a(space, mats, 0.0)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_rigid_translation_has_zero_energy(k):
    mesh = refine(generate_unit_square(3, "N"), [1, 4])
    space = build_space(mesh, k)
    A = assemble_a(space, MaterialTable.homogeneous(1.0, 0.35), 10.0 * k ** 2)
    u = oracle.interpolate(mesh, k, lambda x: np.ones_like(x))
    assert abs(u @ A @ u) <= 1e-12 * abs(A).max()
    assert np.max(np.abs(A @ u)) <= 1e-12 * abs(A).max()


def test_positive_energy_with_clamped_side():
    rng = np.random.default_rng(4)
    for k in (1, 2):
        space = build_space(two_material_mesh(), k)
        A = assemble_a(space, TWO_MAT, 10.0 * k ** 2).toarray()
        V = rng.standard_normal((space.n_u, 1000))
        assert np.all(np.einsum("ij,ij->j", V, A @ V) > 0)


def test_c_zero_at_incompressible_limit():
    space = build_space(generate_unit_square(3), 2)
    C = assemble_c(space, MaterialTable.homogeneous(1.0, 0.5))
    assert C.nnz == 0 and C.shape == (space.n_p, space.n_p)


def test_c_single_element_value():
    mesh = mesh_from_triangles([[0, 0], [2, 0], [0, 1.5]], [[0, 1, 2]])
    mats = MaterialTable.homogeneous(3.0, 0.3)
    C = assemble_c(build_space(mesh, 1), mats).toarray()
    w = (1 - 0.6) / (3.0 * 0.3)
    assert C[0, 0] == pytest.approx(w * 1.5, rel=1e-14)


def test_c_scales_with_material():
    mesh = two_material_mesh()
    space = build_space(mesh, 2)
    C = assemble_c(space, TWO_MAT)
    inv = TWO_MAT.inv_lambda(mesh.materials)
    unit = MaterialTable(0.35, {1: (1.0,), 2: (1.0,)})
    Cu = assemble_c(space, unit)
    rows = np.repeat(inv / unit.inv_lambda(mesh.materials), space.np_loc)
    assert abs(C - sp.diags(rows) @ Cu).max() <= 1e-15 * abs(C).max()
    # against quadrature on each element: constant pressure of one element
    for e in range(0, mesh.n_elements, 5):
        q = np.zeros(space.n_p)
        q[space.p_dofs(e)] = 1.0
        assert q @ C @ q == pytest.approx(inv[e] * mesh.areas[e], rel=1e-13)


def test_mass_examples():
    mesh = generate_unit_square(4)
    space = build_space(mesh, 2)
    M = assemble_mass(space, MaterialTable.homogeneous(1.0, 0.35))
    u = oracle.interpolate(mesh, 2, lambda x: np.stack([np.ones(len(x)), np.zeros(len(x))], 1))
    assert u @ M @ u == pytest.approx(1.0, rel=1e-14)
    M2 = assemble_mass(space, MaterialTable.homogeneous(1.0, 0.35, rho=2.0))
    assert abs(M2 - 2 * M).max() == 0
    assert np.all(M.diagonal() > 0)
    assert abs(M - M.T).max() <= 1e-15 * abs(M).max()


def test_scaling_in_E():
    mesh = two_material_mesh()
    space = build_space(mesh, 2)
    s1 = assemble_system(space, TWO_MAT)
    s2 = assemble_system(space, TWO_MAT.scaled(1e4))
    assert abs(s2.A - 1e4 * s1.A).max() <= 1e-12 * abs(s2.A).max()
    assert abs(s2.C - s1.C / 1e4).max() <= 1e-12 * abs(s2.C).max()
    assert abs(s2.B - s1.B).max() == 0
    assert abs(s2.M - s1.M).max() == 0


def test_sparsity_pattern():
    mesh = two_material_mesh()
    space = build_space(mesh, 1)
    s = assemble_system(space, TWO_MAT)
    F = mesh.facets
    adj = np.eye(mesh.n_elements, dtype=bool)
    inner = F.elements[:, 1] >= 0
    adj[F.elements[inner, 0], F.elements[inner, 1]] = True
    adj[F.elements[inner, 1], F.elements[inner, 0]] = True

    def blocks(mat, rsize, csize):
        c = sp.coo_matrix(mat)
        return c.row // rsize, c.col // csize

    r, c = blocks(s.A, space.nu_loc, space.nu_loc)
    assert np.all(adj[r, c])
    r, c = blocks(s.B, space.np_loc, space.nu_loc)
    assert np.all(adj[r, c])
    for mat, size in ((s.C, space.np_loc), (s.M, space.nu_loc)):
        r, c = blocks(mat, size, size)
        assert np.all(r == c)


def test_default_penalty_and_metadata():
    space = build_space(generate_unit_square(2), 3)
    s = assemble_system(space, MaterialTable.homogeneous())
    assert s.a_S == 90.0
    assert s.meta["k"] == 3 and s.symmetric
    assert s.K().shape == (s.n_u + s.n_p,) * 2


def test_coo_dump_round_trip(tmp_path):
    space = build_space(generate_unit_square(2, "bottom"), 2)
    A = assemble_a(space, MaterialTable.homogeneous(), 40.0)
    path = tmp_path / "A.txt"
    dump_coo(A, path)
    assert abs(load_coo(path, A.shape) - A).max() == 0
