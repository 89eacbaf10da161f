import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from packopt.mesh import (
    BoundaryTag,
    InvalidDisplacement,
    Mesh,
    MeshError,
    apply_displacement,
    box_mesh,
    cell_qualities,
    cell_quality,
    cell_volume,
    cell_volumes,
    facet_normal_area,
    facet_normals,
    min_quality,
    rectangle_mesh,
)

WALL = int(BoundaryTag.CYL_WALL)


def one_cell(vertices):
    v = np.asarray(vertices, dtype=float)
    if v.shape[1] == 2:
        return Mesh(v, [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], [WALL] * 3)
    return Mesh(v, [[0, 1, 2, 3]], [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]], [WALL] * 4)


def test_cell_volume_examples(unit_triangle):
    assert cell_volume(unit_triangle, 0) == pytest.approx(0.5)
    tet = one_cell([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    assert cell_volume(tet, 0) == pytest.approx(1 / 6)


def test_cell_volume_degenerate_and_index():
    # degenerate cells are legal to build only through with_vertices
    m = one_cell([[0, 0], [1, 0], [0, 1]]).with_vertices([[0, 0], [1, 0], [1, 0]])
    assert cell_volume(m, 0) == 0.0
    with pytest.raises(IndexError):
        cell_volume(m, 1)


def test_cells_are_reoriented():
    m = Mesh(np.array([[0, 0], [0, 1], [1, 0]], float), [[0, 1, 2]],
             [[0, 1], [1, 2], [2, 0]], [WALL] * 3)
    assert cell_volume(m, 0) > 0


def test_facet_normal_examples():
    m = one_cell([[0, 0], [1, 0], [0, 1]])
    fid = [i for i, f in enumerate(m.facets) if set(f) == {0, 1}][0]
    n, length = facet_normal_area(m, fid)
    np.testing.assert_allclose(n, [0, -1], atol=1e-15)
    assert length == pytest.approx(1.0)

    m = one_cell([[0, 0], [0, 2], [1, 0]])
    fid = [i for i, f in enumerate(m.facets) if set(f) == {0, 1}][0]
    n, length = facet_normal_area(m, fid)
    np.testing.assert_allclose(n, [-1, 0], atol=1e-15)
    assert length == pytest.approx(2.0)


def test_facet_normal_cube_face():
    m = box_mesh(1, 1, 1)
    n, meas = facet_normals(m)
    x0 = m.tag_facets(BoundaryTag.INLET)
    assert meas[x0].sum() == pytest.approx(1.0)
    np.testing.assert_allclose(n[x0], np.tile([-1, 0, 0], (len(x0), 1)), atol=1e-14)


def test_facet_normal_rejects_bad_index(unit_triangle):
    with pytest.raises(IndexError):
        facet_normal_area(unit_triangle, 3)


def test_normals_point_outward():
    m = rectangle_mesh(5, 3, 2.0, 1.0)
    n, _ = facet_normals(m)
    mid = m.vertices[m.facets].mean(axis=1)
    centre = np.array([1.0, 0.5])
    assert np.all(np.einsum("fi,fi->f", n, mid - centre) > 0)


def test_quality_examples():
    eq = one_cell([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]])
    assert cell_quality(eq, 0) == pytest.approx(1.0)
    right = one_cell([[0, 0], [1, 0], [0, 1]])
    # r = (a + b - c)/2, R = c/2 with legs 1 and hypotenuse sqrt(2)
    r, R = (2 - math.sqrt(2)) / 2, math.sqrt(2) / 2
    assert cell_quality(right, 0) == pytest.approx(2 * r / R)
    assert cell_quality(right, 0) == pytest.approx(0.8284, abs=1e-4)
    flat = right.with_vertices([[0, 0], [1, 0], [2, 0]])
    assert cell_quality(flat, 0) == 0.0


def test_quality_regular_tet():
    tet = one_cell([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]])
    assert cell_quality(tet, 0) == pytest.approx(1.0)


def test_inverted_cell_quality_is_zero(unit_triangle):
    inv = unit_triangle.with_vertices([[0, 0], [0, 1], [1, 0]])
    assert cell_quality(inv, 0) == 0.0


def test_min_quality_examples():
    crossed = rectangle_mesh(4, 4, diagonal="crossed")
    assert min_quality(crossed) == pytest.approx(2 * (2 - math.sqrt(2)) / 2 / (math.sqrt(2) / 2))
    assert np.allclose(cell_qualities(crossed), cell_qualities(crossed)[0])
    m = rectangle_mesh(2, 2)
    x = m.vertices.copy()
    x[4] = x[0]  # collapse the centre vertex onto a corner
    assert min_quality(m.with_vertices(x)) == 0.0


def test_min_quality_equilateral_strip():
    s = math.sqrt(3) / 2
    v = np.array([[0, 0], [1, 0], [2, 0], [0.5, s], [1.5, s]])
    cells = [[0, 1, 3], [1, 4, 3], [1, 2, 4]]
    facets = [[0, 1], [1, 2], [2, 4], [4, 3], [3, 0]]
    m = Mesh(v, cells, facets, [WALL] * 5)
    assert min_quality(m) == pytest.approx(1.0)


def test_mesh_validation():
    v = np.array([[0, 0], [1, 0], [0, 1]], float)
    with pytest.raises(MeshError, match="no tag"):
        Mesh(v, [[0, 1, 2]], [[0, 1], [1, 2]], [WALL] * 2)
    with pytest.raises(MeshError, match="unknown tag"):
        Mesh(v, [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], [WALL, WALL, 7])
    with pytest.raises(MeshError):
        Mesh(v, [[0, 1, 2]], [[0, 1], [1, 2], [2, 0], [0, 1]], [WALL] * 4)


def test_domain_and_boundary_measures():
    m = rectangle_mesh(7, 3, 4e-3, 1e-3)
    assert cell_volumes(m).sum() == pytest.approx(4e-6, rel=1e-12)
    _, meas = facet_normals(m)
    assert meas[m.tag_facets(BoundaryTag.INLET)].sum() == pytest.approx(1e-3, rel=1e-12)
    b = box_mesh(2, 3, 2, (1.0, 2.0, 0.5))
    assert cell_volumes(b).sum() == pytest.approx(1.0, rel=1e-12)
    _, meas = facet_normals(b)
    assert meas[b.tag_facets(BoundaryTag.OUTLET)].sum() == pytest.approx(1.0, rel=1e-12)


def test_apply_displacement_identity_and_errors(unit_square):
    out = apply_displacement(unit_square, np.zeros_like(unit_square.vertices))
    assert np.array_equal(out.vertices, unit_square.vertices)
    with pytest.raises(ValueError):
        apply_displacement(unit_square, np.zeros((3, 2)))
    d = np.zeros_like(unit_square.vertices)
    d[0, 0] = np.nan
    with pytest.raises(ValueError):
        apply_displacement(unit_square, d)


def test_apply_displacement_rejects_inversion(unit_triangle):
    d = np.zeros((3, 2))
    d[2] = [0.0, -2.0]  # push the apex through the opposite edge
    with pytest.raises(InvalidDisplacement) as info:
        apply_displacement(unit_triangle, d)
    assert info.value.min_quality == 0.0
    np.testing.assert_array_equal(unit_triangle.vertices[2], [0, 1])


@settings(max_examples=30, deadline=None)
@given(tx=st.floats(-10, 10), ty=st.floats(-10, 10), angle=st.floats(0, 2 * math.pi),
       scale=st.floats(1e-3, 1e3))
def test_quality_invariant_under_similarity(tx, ty, angle, scale):
    m = rectangle_mesh(3, 2, 1.0, 0.7)
    q0 = cell_qualities(m)
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    x = scale * m.vertices @ R.T + [tx, ty]
    np.testing.assert_allclose(cell_qualities(m.with_vertices(x)), q0, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), amp=st.floats(0.0, 0.05))
def test_displacement_reversible(seed, amp):
    m = rectangle_mesh(4, 4)
    d = amp * np.random.default_rng(seed).uniform(-1, 1, m.vertices.shape) / 4
    moved = apply_displacement(m, d, 0.0)
    back = apply_displacement(moved, -d, 0.0)
    np.testing.assert_allclose(back.vertices, m.vertices, atol=1e-15)


def test_rigid_translation_accepted():
    m = rectangle_mesh(3, 3)
    moved = apply_displacement(m, np.tile([0.25, -3.0], (m.num_vertices, 1)))
    np.testing.assert_allclose(cell_volumes(moved), cell_volumes(m), rtol=1e-12)
    np.testing.assert_allclose(cell_qualities(moved), cell_qualities(m), rtol=1e-12)


def test_vertex_cells_adjacency():
    m = rectangle_mesh(2, 2)
    vc = m.vertex_cells
    centre = 4
    cells = vc[centre].indices
    assert all(centre in m.cells[c] for c in cells)
    assert len(cells) == sum(centre in c for c in m.cells)
