import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lameeig import mesh as meshmod
from lameeig.mesh import (
    BOUNDARY,
    build_lshape_3d,
    build_square_with_hole,
    build_unit_square,
    facet_geometry,
    refine_marked,
    uniform_refine,
    write_vtk,
)


def assert_conforming(msh):
    # every facet belongs to 1 (boundary) or 2 (interior) cells; counts by scan
    counts = {}
    for c in range(msh.n_cells):
        verts = sorted(msh.cells[c])
        for skip in range(msh.dim + 1):
            key = tuple(v for i, v in enumerate(sorted(msh.cells[c])) if i != skip)
            counts[key] = counts.get(key, 0) + 1
    assert set(counts.values()) <= {1, 2}
    n_interior = sum(1 for v in counts.values() if v == 2)
    assert n_interior == (~msh.boundary_facet).sum()


class TestUnitSquare:
    def test_smallest_split(self):
        msh = build_unit_square(1)
        assert msh.n_cells == 2
        assert msh.n_vertices == 4
        assert msh.n_facets == 5
        assert (~msh.boundary_facet).sum() == 1

    def test_cell_count_n50(self):
        assert build_unit_square(50).n_cells == 5000

    def test_exact_area(self):
        assert build_unit_square(2).cell_volumes().sum() == 1.0

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            build_unit_square(0)

    def test_all_exterior_facets_flagged(self):
        msh = build_unit_square(3)
        for f in range(msh.n_facets):
            pts = msh.vertices[list(msh.facets[f])]
            on_bdry = any(
                np.all(np.isclose(pts[:, d], v)) for d in (0, 1) for v in (0.0, 1.0)
            )
            assert on_bdry == msh.boundary_facet[f]

    @given(st.integers(min_value=1, max_value=9))
    @settings(max_examples=9, deadline=None)
    def test_structure(self, N):
        msh = build_unit_square(N)
        assert msh.n_cells == 2 * N * N
        assert abs(msh.cell_volumes().sum() - 1.0) < 1e-12
        assert_conforming(msh)


class TestSquareWithHole:
    def test_hole_corner_vertex(self, hole_mesh):
        corners = [
            (129 / 400, 129 / 400),
            (129 / 400, 271 / 400),
            (271 / 400, 129 / 400),
            (271 / 400, 271 / 400),
        ]
        vset = {tuple(v) for v in hole_mesh.vertices}
        for c in corners:
            assert c in vset

    def test_total_area(self, hole_mesh):
        assert abs(hole_mesh.cell_volumes().sum() - (1 - (142 / 400) ** 2)) < 1e-12

    def test_boundary_on_eight_segments(self, hole_mesh):
        # outer rotated square (4 segments) + inner hole square (4 segments)
        c = 0.5
        r = np.sqrt(2) / 2
        outer = [(c + r, c), (c, c + r), (c - r, c), (c, c - r)]
        a, b = 129 / 400, 271 / 400
        inner = [(a, a), (b, a), (b, b), (a, b)]

        def on_segment(p, q0, q1):
            d = np.subtract(q1, q0)
            t = np.dot(np.subtract(p, q0), d) / np.dot(d, d)
            if t < -1e-12 or t > 1 + 1e-12:
                return False
            return np.linalg.norm(np.subtract(p, q0) - t * d) < 1e-12

        segments = [(outer[i], outer[(i + 1) % 4]) for i in range(4)]
        segments += [(inner[i], inner[(i + 1) % 4]) for i in range(4)]
        for f in np.flatnonzero(hole_mesh.boundary_facet):
            pts = hole_mesh.vertices[list(hole_mesh.facets[f])]
            assert any(
                on_segment(pts[0], *s) and on_segment(pts[1], *s) for s in segments
            )

    def test_conforming(self, hole_mesh):
        assert_conforming(hole_mesh)


class TestLShape3d:
    def test_volume(self, lshape_mesh):
        assert abs(lshape_mesh.cell_volumes().sum() - 0.75) < 1e-12

    def test_singular_edge_in_skeleton(self, lshape_mesh):
        # every segment of {x=z=0} between consecutive grid planes is a mesh edge
        vid = {tuple(v): i for i, v in enumerate(np.round(lshape_mesh.vertices, 12))}
        ys = sorted(v[1] for v in vid if v[0] == 0.0 and v[2] == 0.0)
        assert ys[0] == 0.0 and ys[-1] == 1.0
        edges = set()
        for c in lshape_mesh.cells:
            for i in range(4):
                for j in range(i + 1, 4):
                    edges.add(frozenset((c[i], c[j])))
        for y0, y1 in zip(ys, ys[1:]):
            e = frozenset((vid[(0.0, y0, 0.0)], vid[(0.0, y1, 0.0)]))
            assert e in edges

    def test_conforming(self, lshape_mesh):
        assert_conforming(lshape_mesh)

    def test_solvable_dof_count(self, lshape_mesh):
        # coarsest mesh must leave interior displacement nodes
        on_bdry = np.zeros(lshape_mesh.n_vertices, dtype=bool)
        for f in np.flatnonzero(lshape_mesh.boundary_facet):
            on_bdry[list(lshape_mesh.facets[f])] = True
        assert (~on_bdry).sum() > 0


class TestUniformRefine:
    def test_two_cells_to_eight(self):
        msh = uniform_refine(build_unit_square(1))
        assert msh.n_cells == 8

    def test_h_halves_exactly(self):
        msh = build_unit_square(2)
        fine = uniform_refine(msh)
        assert fine.cell_diameters().max() == msh.cell_diameters().max() / 2

    def test_volume_conserved(self, hole_mesh):
        fine = uniform_refine(hole_mesh)
        v0 = hole_mesh.cell_volumes().sum()
        assert abs(fine.cell_volumes().sum() - v0) < 1e-14 * v0

    def test_3d_factor_eight(self, lshape_mesh):
        fine = uniform_refine(lshape_mesh)
        assert fine.n_cells == 8 * lshape_mesh.n_cells
        assert fine.cell_diameters().max() == lshape_mesh.cell_diameters().max() / 2


class TestRefineMarked:
    def test_empty_marked_identity(self, square4):
        out = refine_marked(square4, [])
        assert out is square4

    def test_all_marked_at_least_doubles(self, square4):
        out = refine_marked(square4, range(square4.n_cells))
        assert out.n_cells >= 2 * square4.n_cells
        assert_conforming(out)

    def test_out_of_range(self, square4):
        with pytest.raises(IndexError):
            refine_marked(square4, [square4.n_cells])

    def test_single_cell_locality(self, square4):
        out = refine_marked(square4, [10])
        assert_conforming(out)
        # count cells of the refined mesh not present in the original
        before = {frozenset(c) for c in square4.cells}
        changed = sum(1 for c in out.cells if frozenset(c) not in before)
        assert changed <= 32

    def test_shape_regularity_bounded(self, hole_mesh):
        # aggressive adaptive-style sequence: mark cells nearest a hole corner
        target = np.array([129 / 400, 129 / 400])
        bound = 4 * hole_mesh.shape_regularity()
        msh = hole_mesh
        rng = np.random.default_rng(7)
        for _ in range(15):
            mids = msh.vertices[msh.cells].mean(axis=1)
            d = np.linalg.norm(mids - target, axis=1)
            marked = np.argsort(d)[: max(1, msh.n_cells // 10)]
            msh = refine_marked(msh, marked)
            assert msh.shape_regularity() <= bound
        assert abs(msh.cell_volumes().sum() - hole_mesh.cell_volumes().sum()) < 1e-12

    def test_3d_conformity_sequence(self, lshape_mesh):
        msh = lshape_mesh
        for _ in range(4):
            mids = msh.vertices[msh.cells].mean(axis=1)
            d = np.hypot(mids[:, 0], mids[:, 2])
            msh = refine_marked(msh, np.argsort(d)[: msh.n_cells // 8 + 1])
            assert_conforming(msh)
        assert abs(msh.cell_volumes().sum() - 0.75) < 1e-12


class TestFacetGeometry:
    def test_right_triangle_diameter(self):
        msh = meshmod.Mesh(
            2,
            np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
            np.array([[0, 1, 2]]),
            np.array([2]),
        )
        assert abs(msh.cell_diameters()[0] - np.sqrt(2)) < 1e-15

    def test_outward_normal(self):
        # cell above the edge (0,0)-(1,0): outward normal (0,-1)
        msh = meshmod.Mesh(
            2,
            np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
            np.array([[0, 1, 2]]),
            np.array([2]),
        )
        geo = facet_geometry(msh)
        for f in range(msh.n_facets):
            if set(msh.facets[f]) == {0, 1}:
                assert np.allclose(geo.normals[f], (0, -1))

    def test_unit_tetrahedron(self):
        msh = meshmod.Mesh(
            3,
            np.array(
                [[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [0.0, 0, 1]], dtype=float
            ),
            np.array([[0, 1, 2, 3]]),
            np.array([3]),
        )
        areas = sorted(msh.facet_measures())
        assert np.allclose(areas, [0.5, 0.5, 0.5, np.sqrt(3) / 2])
        assert abs(msh.cell_volumes()[0] - 1 / 6) < 1e-15
        assert abs(msh.cell_diameters()[0] - np.sqrt(2)) < 1e-15

    def test_degenerate_cell_rejected(self):
        msh = meshmod.Mesh(
            2,
            np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]),
            np.array([[0, 1, 2]]),
            np.array([2]),
        )
        with pytest.raises(ValueError):
            msh.cell_volumes()


class TestVtkExport:
    def test_structure(self, tmp_path, square4):
        path = tmp_path / "mesh.vtk"
        write_vtk(square4, path, cell_data={"indicator": np.arange(square4.n_cells, dtype=float)})
        text = path.read_text()
        assert "POINTS %d" % square4.n_vertices in text
        assert "CELL_TYPES" in text
        assert "indicator" in text
        # legacy triangle type
        assert "\n5\n" in text or text.rstrip().endswith("5")

    def test_roundtrip_coordinates(self, tmp_path, hole_mesh):
        path = tmp_path / "hole.vtk"
        write_vtk(hole_mesh, path)
        lines = path.read_text().splitlines()
        i = next(j for j, l in enumerate(lines) if l.startswith("POINTS"))
        pts = []
        j = i + 1
        while len(pts) < 3 * hole_mesh.n_vertices:
            pts.extend(float(x) for x in lines[j].split())
            j += 1
        pts = np.array(pts).reshape(-1, 3)[:, :2]
        assert np.array_equal(pts, hole_mesh.vertices)
