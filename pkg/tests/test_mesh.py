import numpy as np
import pytest

from ipdgeig.mesh import (DIRICHLET, INTERIOR, NEUMANN, Mesh, generate_unit_square,
                          mesh_from_triangles, refine, refine_uniform, shape_regularity)


def facet_counts(mesh):
    tags = mesh.facets.tags
    return {t: int(np.sum(tags == t)) for t in (INTERIOR, DIRICHLET, NEUMANN)}


def check_invariants(mesh, area=1.0):
    F = mesh.facets
    interior = F.tags == INTERIOR
    assert np.all(F.elements[interior] >= 0)
    assert np.all(F.elements[~interior, 1] == -1)
    assert np.all(F.elements[interior, 0] < F.elements[interior, 1])
    assert np.all(mesh.areas > 0)
    assert mesh.areas.sum() == pytest.approx(area, rel=1e-12)
    # every local edge of every triangle is exactly one facet
    assert mesh.n_facets * 2 - int(np.sum(~interior)) == 3 * mesh.n_elements
    hk = mesh.h[F.elements[:, 0]]
    hk = np.maximum(hk, np.where(interior, mesh.h[F.elements[:, 1]], 0))
    assert np.all(F.h <= hk + 1e-15)
    # normals: unit, and pointing from the first element towards the second
    assert np.allclose(np.linalg.norm(F.normals, axis=1), 1.0)
    cen = mesh.vertices[mesh.triangles].mean(axis=1)
    mid = mesh.vertices[F.vertices].mean(axis=1)
    assert np.all(np.einsum("fa,fa->f", F.normals, mid - cen[F.elements[:, 0]]) > 0)
    e1 = F.elements[interior, 1]
    assert np.all(np.einsum("fa,fa->f", F.normals[interior], cen[e1] - mid[interior]) > 0)


def test_single_cell_counts():
    mesh = generate_unit_square(1, "D")
    assert mesh.n_elements == 2
    assert mesh.n_vertices == 4
    assert facet_counts(mesh) == {INTERIOR: 1, DIRICHLET: 4, NEUMANN: 0}
    check_invariants(mesh)


@pytest.mark.parametrize("n", [1, 2, 5, 8])
def test_element_count(n):
    mesh = generate_unit_square(n)
    assert mesh.n_elements == 2 * n * n
    check_invariants(mesh)


def test_bottom_clamped_tags():
    mesh = generate_unit_square(8, "bottom")
    counts = facet_counts(mesh)
    assert counts[DIRICHLET] == 8
    assert counts[NEUMANN] == 24
    F = mesh.facets
    ys = mesh.vertices[F.vertices[F.tags == DIRICHLET]][..., 1]
    assert np.all(ys == 0.0)


def test_boundary_mapping_and_errors():
    mesh = generate_unit_square(2, {"bottom": "D", "right": "N", "top": "N", "left": "D"})
    assert facet_counts(mesh)[DIRICHLET] == 4
    with pytest.raises(ValueError, match="missing"):
        generate_unit_square(2, {"bottom": "D"})
    with pytest.raises(ValueError, match="unknown side"):
        generate_unit_square(2, "bottom,front")
    with pytest.raises(ValueError):
        generate_unit_square(0)


def test_material_split():
    mesh = generate_unit_square(4, "D", split=("y", 0.5, (1, 2)))
    cen = mesh.vertices[mesh.triangles].mean(axis=1)
    assert np.all(mesh.materials[cen[:, 1] < 0.5] == 1)
    assert np.all(mesh.materials[cen[:, 1] > 0.5] == 2)
    assert np.sum(mesh.materials == 1) == 16
    with pytest.raises(ValueError, match="not aligned"):
        generate_unit_square(3, "D", split=("y", 0.5, (1, 2)))


def test_clockwise_rejected():
    with pytest.raises(ValueError, match="non-positive"):
        mesh_from_triangles([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])


def test_refine_nothing_is_identity():
    mesh = generate_unit_square(3)
    assert refine(mesh, []) is mesh
    with pytest.raises(ValueError):
        refine(mesh, [mesh.n_elements])


def test_refine_one_element_conserves_area():
    mesh = refine(generate_unit_square(1, "bottom"), {0})
    check_invariants(mesh)
    assert mesh.n_elements > 2


def test_refine_inherits_tags_and_materials():
    mesh = generate_unit_square(2, "bottom", split=("y", 0.5, (3, 7)))
    fine = refine_uniform(mesh, 2)
    check_invariants(fine)
    cen = fine.vertices[fine.triangles].mean(axis=1)
    assert np.all(fine.materials == np.where(cen[:, 1] < 0.5, 3, 7))
    F = fine.facets
    dverts = fine.vertices[F.vertices[F.tags == DIRICHLET]]
    assert np.all(dverts[..., 1] == 0.0)
    assert np.isclose(F.h[F.tags == DIRICHLET].sum(), 1.0)


def test_random_refinement_keeps_shape_regularity():
    rng = np.random.default_rng(7)
    mesh = generate_unit_square(2, "bottom", split=("y", 0.5, (1, 2)))
    angles = []
    for _ in range(10):
        marked = rng.choice(mesh.n_elements, size=max(1, mesh.n_elements // 5), replace=False)
        mesh = refine(mesh, marked)
        check_invariants(mesh)
        angles.append(mesh.shape_regularity().min_angle)
    # bisection of right isosceles triangles only produces similar copies
    assert min(angles) == pytest.approx(45.0)


def test_uniform_refinement_decreases_h():
    mesh = generate_unit_square(2)
    hs = [mesh.h_max]
    for _ in range(4):
        mesh = refine_uniform(mesh)
        hs.append(mesh.h_max)
    assert all(b <= a for a, b in zip(hs, hs[1:]))
    assert hs[-1] == pytest.approx(hs[0] / 4)


def test_refined_children_lie_inside_parent():
    mesh = generate_unit_square(2)
    fine = refine(mesh, [3])
    assert fine.h.max() <= mesh.h.max()
    # every child centroid is in some coarse triangle whose h is not smaller
    cen = fine.vertices[fine.triangles].mean(axis=1)
    for c, h in zip(cen, fine.h):
        for tri, H in zip(mesh.triangles, mesh.h):
            p = mesh.vertices[tri]
            l = np.linalg.solve(np.stack([p[1] - p[0], p[2] - p[0]], 1), c - p[0])
            if l.min() >= -1e-12 and l.sum() <= 1 + 1e-12:
                assert h <= H + 1e-15
                break
        else:
            pytest.fail("child outside every parent")


def test_shape_regularity_examples():
    right = np.array([[[0, 0], [1, 0], [0, 1]]], dtype=float)
    assert shape_regularity(right).min_angle == pytest.approx(45.0)
    eq = np.array([[[0, 0], [1, 0], [0.5, np.sqrt(3) / 2]]])
    stats = shape_regularity(eq)
    assert stats.min_angle == pytest.approx(60.0)
    # h / inradius of the equilateral triangle is 2 sqrt(3)
    assert stats.max_ratio == pytest.approx(2 * np.sqrt(3))
    assert generate_unit_square(4).shape_regularity().min_angle == pytest.approx(45.0)


def test_mesh_is_read_only():
    mesh = generate_unit_square(2)
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 3.0
    assert isinstance(mesh, Mesh)
