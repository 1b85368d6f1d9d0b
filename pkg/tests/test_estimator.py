import math
from types import SimpleNamespace

import numpy as np
import pytest

from lameeig import assembly, eigsolver, estimator, femspace, mesh as meshmod
from lameeig.estimator import (
    cell_residuals,
    estimate,
    facet_jump,
    global_estimator,
    local_estimator,
)


def make_solution(spaces, kappa=0.0, u=None, w=None, p=None):
    return SimpleNamespace(
        kappa=kappa,
        u=np.zeros(spaces.n_u) if u is None else u,
        w=np.zeros(spaces.n_w) if w is None else w,
        p=np.zeros(spaces.n_p) if p is None else p,
    )


@pytest.fixture(scope="module")
def two_cells():
    # two triangles sharing the unit-length edge (0,0)-(0,1)
    msh = meshmod.Mesh(
        2,
        np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]),
        np.array([[0, 1, 2], [0, 3, 2]]),
        np.array([2, 2]),
    )
    return msh, femspace.build_spaces(msh, 1)


@pytest.fixture(scope="module")
def eigenpair8():
    msh = meshmod.build_unit_square(8)
    spaces = femspace.build_spaces(msh, 1)
    par = assembly.material(1.0, 0.35)
    pen = assembly.assemble_pencil(msh, spaces, par)
    sol = eigsolver.solve_dense(pen, 1)[0]
    return msh, spaces, par, sol


class TestCellResiduals:
    def test_zero_solution(self, two_cells):
        msh, spaces = two_cells
        par = assembly.material(1.0, 0.25)
        sol = make_solution(spaces)
        assert cell_residuals(msh, spaces, par, sol, 0) == (0.0, 0.0, 0.0)

    def test_k1_r1_is_mass_of_u(self, eigenpair8):
        # for k=1 the DG fields are constant per cell, so R1 = kappa u
        msh, spaces, par, sol = eigenpair8
        q = femspace.quadrature(2, 2)
        cell = 17
        fv = femspace.evaluate_field(msh, spaces, sol.u, cell, q.points)
        verts = msh.vertices[msh.cells[cell]]
        wq = q.weights * abs(np.linalg.det((verts[1:] - verts[0]).T))
        expected = sol.kappa**2 * np.dot(wq, np.sum(fv.values**2, axis=1))
        r1, _, _ = cell_residuals(msh, spaces, par, sol, cell)
        assert abs(r1 - expected) < 1e-12 * expected

    def test_manufactured_fields(self, two_cells):
        # piecewise-polynomial triple against a hand-computed residual
        msh, spaces = two_cells
        par = assembly.material(1.0, 0.25)  # mu = 0.4, lam = 0.4
        p = femspace.interpolate_dg(msh, spaces, lambda x: 2.0, "pressure")
        w = femspace.interpolate_dg(msh, spaces, lambda x: 3.0, "rotation")
        sol = make_solution(spaces, kappa=0.0, p=p, w=w)
        r1, r2, r3 = cell_residuals(msh, spaces, par, sol, 0)
        area = 0.5
        # R1 = 0 (constants), R2 = -w, R3 = p/(2mu+lam)
        assert abs(r1) < 1e-14
        assert abs(r2 - 9.0 * area) < 1e-13
        assert abs(r3 - (2.0 / 1.2) ** 2 * area) < 1e-13

    def test_cell_out_of_range(self, two_cells):
        msh, spaces = two_cells
        par = assembly.material(1.0, 0.25)
        with pytest.raises(IndexError):
            cell_residuals(msh, spaces, par, make_solution(spaces), 5)


class TestFacetJump:
    def interior_facet(self, msh):
        return int(np.flatnonzero(~msh.boundary_facet)[0])

    def test_pressure_jump(self, two_cells):
        msh, spaces = two_cells
        par = assembly.material(1.0, 0.25)
        f = self.interior_facet(msh)
        cp, _ = msh.facet_cells[f]
        p = np.zeros(spaces.n_p)
        p[cp] = 1.0
        sol = make_solution(spaces, p=p)
        assert abs(facet_jump(msh, spaces, par, sol, f) - 0.25) < 1e-14

    def test_rotation_jump(self, two_cells):
        msh, spaces = two_cells
        par = assembly.material(1.0, 0.25)  # mu = 0.4
        f = self.interior_facet(msh)
        cp, _ = msh.facet_cells[f]
        w = np.zeros(spaces.n_w)
        w[cp] = 1.0
        sol = make_solution(spaces, w=w)
        assert abs(facet_jump(msh, spaces, par, sol, f) - 0.1) < 1e-14

    def test_continuous_fields_no_jump(self, two_cells):
        msh, spaces = two_cells
        par = assembly.material(1.0, 0.25)
        p = femspace.interpolate_dg(msh, spaces, lambda x: 4.0, "pressure")
        w = femspace.interpolate_dg(msh, spaces, lambda x: -2.0, "rotation")
        sol = make_solution(spaces, p=p, w=w)
        for f in range(msh.n_facets):
            assert facet_jump(msh, spaces, par, sol, f) == 0.0

    def test_boundary_facet_zero(self, two_cells):
        msh, spaces = two_cells
        par = assembly.material(1.0, 0.25)
        sol = make_solution(spaces, p=np.ones(spaces.n_p))
        for f in np.flatnonzero(msh.boundary_facet):
            assert facet_jump(msh, spaces, par, sol, f) == 0.0

    def test_convention_flip_invariance(self, two_cells):
        # swapping cell order flips the normal; the squared jump is unchanged
        msh, spaces = two_cells
        msh2 = meshmod.Mesh(2, msh.vertices.copy(), msh.cells[::-1].copy(), msh.tags[::-1].copy())
        spaces2 = femspace.build_spaces(msh2, 1)
        par = assembly.material(1.0, 0.25)
        f1 = self.interior_facet(msh)
        f2 = self.interior_facet(msh2)
        p1 = np.array([1.0, -0.5])
        sol1 = make_solution(spaces, p=p1)
        sol2 = make_solution(spaces2, p=p1[::-1].copy())
        j1 = facet_jump(msh, spaces, par, sol1, f1)
        j2 = facet_jump(msh2, spaces2, par, sol2, f2)
        assert abs(j1 - j2) < 1e-15


class TestLocalGlobal:
    def test_all_zero(self):
        par = assembly.material(1.0, 0.25)
        assert local_estimator((0, 0, 0), [], 0.5, [], par) == 0.0

    def test_r3_coefficient(self):
        par = assembly.material(1.0, 0.25)  # mu = lam = 0.4
        val = local_estimator((0, 0, 1.0), [], 1.0, [], par)
        assert abs(val - 0.3) < 1e-15

    def test_single_cell_sqrt(self):
        assert global_estimator([9.0]) == 3.0

    def test_permutation_invariance(self, rng):
        z = rng.random(50)
        assert global_estimator(z) == global_estimator(z[::-1])

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            global_estimator([-1.0])


class TestEstimateField:
    def test_consistency_of_field(self, eigenpair8):
        msh, spaces, par, sol = eigenpair8
        ef = estimate(msh, spaces, par, sol)
        assert np.all(ef.volume_residual >= 0)
        assert np.all(ef.jump_sum >= 0)
        assert abs(ef.zeta - math.sqrt(ef.zeta_sq.sum())) < 1e-14 * ef.zeta
        assert np.all(ef.facet_jumps[msh.boundary_facet] == 0.0)

    def test_matches_per_entity_functions(self, eigenpair8):
        msh, spaces, par, sol = eigenpair8
        ef = estimate(msh, spaces, par, sol)
        h_T = msh.cell_diameters()
        h_e = msh.facet_diameters()
        cell = 11
        res = cell_residuals(msh, spaces, par, sol, cell)
        jumps, hes = [], []
        for j in range(msh.dim + 1):
            f = msh.cell_facets[cell, j]
            if not msh.boundary_facet[f]:
                jumps.append(facet_jump(msh, spaces, par, sol, f))
                hes.append(h_e[f])
        val = local_estimator(res, jumps, h_T[cell], hes, par)
        assert abs(val - ef.zeta_sq[cell]) < 1e-13 * ef.zeta_sq[cell]

    def test_facet_major_reaccumulation(self, eigenpair8):
        # rebuild zeta from per-entity pieces accumulated facet-major
        msh, spaces, par, sol = eigenpair8
        ef = estimate(msh, spaces, par, sol)
        mu = par.mu_s
        h_e = msh.facet_diameters()
        total = (
            ef.volume_residual.sum()
            + ef.rotation_residual.sum()
            + ef.divergence_residual.sum()
        )
        for f in np.flatnonzero(~msh.boundary_facet):
            total += 2.0 * (h_e[f] / mu) * ef.facet_jumps[f]
        assert abs(math.sqrt(total) - ef.zeta) < 1e-14 * ef.zeta

    def test_interior_jump_counted_twice(self, eigenpair8):
        msh, spaces, par, sol = eigenpair8
        ef = estimate(msh, spaces, par, sol)
        mu = par.mu_s
        h_e = msh.facet_diameters()
        expected = np.zeros(msh.n_cells)
        for f in np.flatnonzero(~msh.boundary_facet):
            cp, cm = msh.facet_cells[f]
            expected[cp] += (h_e[f] / mu) * ef.facet_jumps[f]
            expected[cm] += (h_e[f] / mu) * ef.facet_jumps[f]
        assert np.allclose(expected, ef.jump_sum, rtol=1e-13, atol=1e-300)

    def test_estimator_scales_with_E(self):
        msh = meshmod.build_unit_square(6)
        spaces = femspace.build_spaces(msh, 1)
        z2 = []
        for E in (1.0, 4.0):
            par = assembly.material(E, 0.4999, dim=2)
            pen = assembly.assemble_pencil(msh, spaces, par)
            sol = eigsolver.solve_dense(pen, 1)[0]
            z2.append(estimate(msh, spaces, par, sol).zeta ** 2)
        assert abs(z2[1] / z2[0] - 4.0) < 1e-6 * 4.0

    def test_zeta_squared_quarters_under_refinement(self):
        par = assembly.material(1.0, 0.35)
        z = []
        for N in (10, 20):
            msh = meshmod.build_unit_square(N)
            spaces = femspace.build_spaces(msh, 1)
            pen = assembly.assemble_pencil(msh, spaces, par)
            sol = eigsolver.solve_dense(pen, 1)[0]
            z.append(estimate(msh, spaces, par, sol).zeta ** 2)
        assert 3.0 < z[0] / z[1] < 5.0
