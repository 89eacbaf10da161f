import numpy as np
import pytest
from scipy.spatial import cKDTree

from packopt.cases import default_layout, desk_case, make_case, symmetric_case
from packopt.mesh import BoundaryTag, cell_qualities, cell_volumes


def test_no_obstacles_gives_plain_channel():
    m = make_case(centers=[], radii=[], h=4e-4)
    assert len(m.tag_facets([BoundaryTag.PACKING])) == 0
    assert cell_volumes(m).sum() == pytest.approx(8e-3 * 2e-3, rel=1e-12)


def test_single_obstacle_geometry():
    r, n = 2.5e-4, 24
    m = make_case(centers=[(4e-3, 1e-3)], radii=[r], segments=n, h=2e-4)
    pv = m.vertices[m.tag_vertices(BoundaryTag.PACKING)]
    assert len(pv) == n
    assert np.allclose(np.hypot(pv[:, 0] - 4e-3, pv[:, 1] - 1e-3), r, rtol=1e-12)
    # fluid area = box minus the inscribed regular polygon
    poly = 0.5 * n * r ** 2 * np.sin(2 * np.pi / n)
    assert cell_volumes(m).sum() == pytest.approx(16e-6 - poly, rel=1e-10)


def test_every_boundary_facet_is_tagged():
    m = desk_case(h=2.5e-4, segments=16)
    tags = set(np.unique(m.facet_tags))
    assert tags == {BoundaryTag.INLET, BoundaryTag.OUTLET, BoundaryTag.CYL_WALL, BoundaryTag.PACKING}


def test_quality(coarse_desk):
    assert cell_qualities(coarse_desk).min() >= 0.3


def test_default_layout_counts():
    for n in range(0, 7):
        c, r = default_layout(n)
        assert len(c) == len(r) == n
        make_case(centers=c, radii=r, h=3e-4, segments=12)


@pytest.mark.parametrize("centers, radii, msg", [
    ([(1e-3, 1e-3), (1.2e-3, 1e-3)], [2.5e-4, 2.5e-4], "overlap"),
    ([(1e-4, 1e-3)], [2.5e-4], "inside"),
])
def test_bad_layouts(centers, radii, msg):
    with pytest.raises(ValueError, match=msg):
        make_case(centers=centers, radii=radii)


def test_unknown_kind():
    with pytest.raises(ValueError, match="unknown case"):
        make_case("sphere-packing")


def test_mirror_case_is_exactly_symmetric(sym_mesh):
    X = sym_mesh.vertices
    dist, partner = cKDTree(X).query(np.column_stack([X[:, 0], 2e-3 - X[:, 1]]))
    assert dist.max() <= 1e-15
    # tags map onto tags under the reflection
    key = {tuple(sorted(f)): t for f, t in zip(sym_mesh.facets, sym_mesh.facet_tags)}
    for f, t in key.items():
        assert key[tuple(sorted(partner[list(f)]))] == t


def test_mirror_needs_centreline():
    with pytest.raises(ValueError, match="centreline"):
        make_case(centers=[(4e-3, 0.8e-3)], radii=[2.5e-4], mirror=True)


def test_symmetric_case_area():
    m = symmetric_case(obstacles=2, h=3e-4, segments=16)
    assert len(m.tag_vertices(BoundaryTag.PACKING)) == 2 * 16
