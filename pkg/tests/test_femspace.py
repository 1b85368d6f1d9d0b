import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lameeig import femspace, mesh as meshmod
from lameeig.femspace import (
    boundary_dofs,
    build_spaces,
    evaluate_field,
    facet_quadrature,
    interpolate_dg,
    interpolate_displacement,
    quadrature,
    tabulate_basis,
)


def exact_simplex_monomial(exps):
    # int over reference simplex of prod x_i^e_i = prod(e_i!) / (sum e_i + dim)!
    dim = len(exps)
    num = 1
    for e in exps:
        num *= math.factorial(e)
    return num / math.factorial(sum(exps) + dim)


class TestQuadrature:
    def test_reference_triangle_measure(self):
        q = quadrature(2, 0)
        assert abs(q.weights.sum() - 0.5) < 1e-15

    def test_x2y_exact(self):
        q = quadrature(2, 3)
        val = np.sum(q.weights * q.points[:, 0] ** 2 * q.points[:, 1])
        assert abs(val - 1 / 60) < 1e-15

    @pytest.mark.parametrize("dim", [1, 2, 3])
    def test_monomial_exactness(self, dim):
        for deg in range(femspace.MAX_DEGREE[dim] + 1 if dim > 1 else 8):
            q = quadrature(dim, deg)
            for exps in itertools.product(range(deg + 1), repeat=dim):
                if sum(exps) > deg:
                    continue
                val = np.sum(q.weights * np.prod(q.points ** np.array(exps), axis=1))
                assert abs(val - exact_simplex_monomial(exps)) < 1e-13

    def test_positive_weights(self):
        for dim in (2, 3):
            for deg in range(femspace.MAX_DEGREE[dim] + 1):
                assert np.all(quadrature(dim, deg).weights > 0)

    def test_unsupported_degree(self):
        with pytest.raises(ValueError):
            quadrature(2, 11)
        with pytest.raises(ValueError):
            quadrature(3, 9)

    def test_facet_rule_closed_form(self):
        # edge rule integrating t^4 on [0,1] (degree 2k with k=2)
        q = facet_quadrature(2, 4)
        val = np.sum(q.weights * q.points[:, 0] ** 4)
        assert abs(val - 1 / 5) < 1e-15


class TestBasis:
    def test_p1_barycenter(self):
        vals, _ = tabulate_basis(1, 2, [[1 / 3, 1 / 3]])
        assert np.allclose(vals, 1 / 3)

    @pytest.mark.parametrize("dim,k", [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2)])
    def test_partition_of_unity(self, dim, k, rng):
        pts = rng.dirichlet(np.ones(dim + 1), size=7)[:, 1:]
        vals, grads = tabulate_basis(k, dim, pts)
        assert np.allclose(vals.sum(axis=1), 1.0, atol=1e-12)
        assert np.allclose(grads.sum(axis=1), 0.0, atol=1e-10)

    @pytest.mark.parametrize("dim,k", [(2, 1), (2, 3), (3, 2)])
    def test_gradients_match_finite_differences(self, dim, k, rng):
        pts = rng.dirichlet(np.ones(dim + 1) * 3, size=4)[:, 1:]
        _, grads = tabulate_basis(k, dim, pts)
        h = 1e-6
        for d in range(dim):
            ep, em = pts.copy(), pts.copy()
            ep[:, d] += h
            em[:, d] -= h
            fd = (tabulate_basis(k, dim, ep)[0] - tabulate_basis(k, dim, em)[0]) / (2 * h)
            assert np.abs(fd - grads[:, :, d]).max() < 1e-6

    def test_degree_out_of_range(self):
        with pytest.raises(ValueError):
            tabulate_basis(4, 2, [[0.1, 0.1]])


class TestSpaces:
    def test_counts_square_n2_k1(self):
        msh = meshmod.build_unit_square(2)
        sp = build_spaces(msh, 1)
        assert sp.n_u == 2  # one interior node, two components
        assert sp.n_w == 8 and sp.n_p == 8
        assert sp.n_total == 18

    def test_boundary_dofs_square_n2_k1(self):
        msh = meshmod.build_unit_square(2)
        sp = build_spaces(msh, 1)
        assert boundary_dofs(msh, sp).size == 16

    def test_boundary_dofs_rejects_dg(self):
        msh = meshmod.build_unit_square(2)
        sp = build_spaces(msh, 1)
        with pytest.raises(ValueError):
            boundary_dofs(msh, sp, which="pressure")

    def test_lshape_dof_arithmetic(self, lshape_mesh):
        sp = build_spaces(lshape_mesh, 1)
        # brute-force interior-node classification
        on_bdry = np.zeros(lshape_mesh.n_vertices, dtype=bool)
        for f in np.flatnonzero(lshape_mesh.boundary_facet):
            on_bdry[list(lshape_mesh.facets[f])] = True
        assert sp.n_u == 3 * (~on_bdry).sum()
        assert sp.n_w == 3 * lshape_mesh.n_cells
        assert sp.n_p == lshape_mesh.n_cells

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_dof_map_bijectivity(self, k):
        msh = meshmod.build_unit_square(3)
        sp = build_spaces(msh, k)
        free = sp.node_dofs[sp.node_dofs >= 0]
        assert np.array_equal(np.sort(free), np.arange(sp.n_u))
        allw = np.concatenate([sp.rotation_dofs(c).ravel() for c in range(msh.n_cells)])
        assert np.array_equal(np.sort(allw), np.arange(sp.n_u, sp.n_u + sp.n_w))
        allp = np.concatenate([sp.pressure_dofs(c) for c in range(msh.n_cells)])
        assert np.array_equal(np.sort(allp), np.arange(sp.n_u + sp.n_w, sp.n_total))

    def test_displacement_count_before_elimination(self):
        msh = meshmod.build_unit_square(3)
        for k in (1, 2, 3):
            sp = build_spaces(msh, k)
            # number of P_k nodes on an N x N structured square
            n_nodes = (3 * k + 1) ** 2
            assert sp.node_coords.shape[0] == n_nodes


class TestEvaluateField:
    def test_rigid_rotation(self):
        msh = meshmod.build_unit_square(3)
        sp = build_spaces(msh, 1)
        coeffs = interpolate_displacement(msh, sp, lambda x: (-x[1], x[0]))
        fv = evaluate_field(msh, sp, coeffs, 5, [[0.25, 0.5], [0.1, 0.1]])
        assert np.allclose(fv.curl, 2.0, atol=1e-13)
        assert np.allclose(fv.div, 0.0, atol=1e-13)

    def test_scalar_curl_convention(self):
        msh = meshmod.build_unit_square(2)
        sp = build_spaces(msh, 2)
        w = interpolate_dg(msh, sp, lambda x: x[0], "rotation")
        fw = evaluate_field(msh, sp, w, 3, [[0.2, 0.3]], "rotation")
        assert np.allclose(fw.curl, [[0.0, -1.0]], atol=1e-13)

    def test_cell_out_of_range(self):
        msh = meshmod.build_unit_square(2)
        sp = build_spaces(msh, 1)
        with pytest.raises(IndexError):
            evaluate_field(msh, sp, np.zeros(sp.n_u), 99, [[0.1, 0.1]])

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_derivatives_vs_finite_differences(self, k, rng):
        # random coefficients: div/curl against FD of the evaluated values
        msh = meshmod.build_unit_square(2)
        sp = build_spaces(msh, k)
        coeffs = rng.standard_normal(sp.n_u)
        cell = 4
        p0 = np.array([[0.21, 0.34]])
        h = 1e-6
        fv = evaluate_field(msh, sp, coeffs, cell, p0)
        v = msh.vertices[msh.cells[cell]]
        invJ = np.linalg.inv((v[1:] - v[0]).T)
        grad_fd = np.empty((2, 2))
        for d in range(2):
            # physical offset expressed in reference coordinates
            dref = invJ @ np.eye(2)[d]
            up = evaluate_field(msh, sp, coeffs, cell, p0 + h * dref).values[0]
            dn = evaluate_field(msh, sp, coeffs, cell, p0 - h * dref).values[0]
            grad_fd[:, d] = (up - dn) / (2 * h)
        assert np.abs(grad_fd - fv.grad[0]).max() < 1e-6
        assert abs(fv.div[0] - np.trace(grad_fd)) < 1e-6
        assert abs(fv.curl[0] - (grad_fd[1, 0] - grad_fd[0, 1])) < 1e-6

    def test_3d_curl(self, lshape_mesh):
        sp = build_spaces(lshape_mesh, 1)
        coeffs = interpolate_displacement(
            lshape_mesh, sp, lambda x: np.cross([1.0, 2.0, 3.0], x)
        )
        fv = evaluate_field(lshape_mesh, sp, coeffs, 7, [[0.2, 0.2, 0.2]])
        assert np.allclose(fv.curl, [[2.0, 4.0, 6.0]], atol=1e-12)
        assert np.allclose(fv.div, 0.0, atol=1e-12)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_interpolation_exactness(self, k):
        msh = meshmod.build_unit_square(2)
        sp = build_spaces(msh, k)

        def f(x):
            return (x[0] ** k + x[1], (x[0] + x[1]) ** k)

        coeffs = interpolate_displacement(msh, sp, f)
        q = quadrature(2, 2 * k)
        for cell in range(msh.n_cells):
            fv = evaluate_field(msh, sp, coeffs, cell, q.points)
            v = msh.vertices[msh.cells[cell]]
            phys = v[0] + q.points @ (v[1:] - v[0])
            exact = np.array([f(x) for x in phys])
            assert np.abs(fv.values - exact).max() < 1e-12


class TestCurlAdjointness:
    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_2d_identity(self, k):
        # int theta curl v = int curl theta . v for v with zero trace
        msh = meshmod.build_unit_square(3)
        sp = build_spaces(msh, k)
        rng = np.random.default_rng(3)
        v = rng.standard_normal(sp.n_u)  # reduced vector: zero on boundary

        def theta(x):
            return x[0] ** (k - 1) + x[1] ** (k - 1) if k > 1 else 1.5

        w = interpolate_dg(msh, sp, theta, "rotation")
        q = quadrature(2, 2 * k)
        lhs = rhs = 0.0
        for cell in range(msh.n_cells):
            verts = msh.vertices[msh.cells[cell]]
            wq = q.weights * abs(np.linalg.det((verts[1:] - verts[0]).T))
            fv = evaluate_field(msh, sp, v, cell, q.points)
            fw = evaluate_field(msh, sp, w, cell, q.points, "rotation")
            lhs += np.dot(wq, fw.values * fv.curl)
            rhs += np.dot(wq, np.sum(fw.curl * fv.values, axis=1))
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))
