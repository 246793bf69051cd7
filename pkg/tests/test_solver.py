"""Saddle-point solver: residual control, dense/sparse agreement, solution
splitting, and singularity diagnostics."""

import numpy as np
import pytest
import scipy.sparse as sp

from polywg.assembly import DofMap, GlobalSystem, build_system
from polywg.localspaces import build_cell_spaces
from polywg.mesh import generate_rect_mesh
from polywg.reconstruct import build_recon_operators
from polywg.solver import RESIDUAL_RTOL, Solution, SolverError, solve


def _bubble_force(pts):
    x, y = pts[:, 0], pts[:, 1]
    lap1 = 10.0 * ((12 * x**2 - 12 * x + 2) * (2 * y**3 - 3 * y**2 + y) + (x**4 - 2 * x**3 + x**2) * (12 * y - 6))
    lap2 = -10.0 * ((12 * x - 6) * (y**4 - 2 * y**3 + y**2) + (2 * x**3 - 3 * x**2 + x) * (12 * y**2 - 12 * y + 2))
    return np.column_stack([-lap1 + 10.0, -lap2])


@pytest.fixture(scope="module")
def small_system():
    mesh = generate_rect_mesh(4)
    spaces = build_cell_spaces(mesh, 0)
    dm = DofMap(mesh, 0)
    ops = build_recon_operators(spaces)
    system = build_system(mesh, spaces, dm, 1.0, _bubble_force, "robust", recon_ops=ops)
    return mesh, spaces, dm, ops, system


class TestSolve:
    def test_shapes_and_residual(self, small_system):
        mesh, spaces, dm, ops, system = small_system
        sol = solve(system)
        assert isinstance(sol, Solution)
        assert sol.u0.shape == (mesh.ncells, 2, dm.np0)
        assert sol.ub.shape == (mesh.nedges, 2, dm.nb)
        assert sol.p.shape == (mesh.ncells, dm.np0)
        assert sol.residual <= RESIDUAL_RTOL
        assert sol.x.shape == (dm.n_total,)

    def test_boundary_dofs_respected(self, small_system):
        mesh, _, _, _, system = small_system
        sol = solve(system)
        assert np.abs(sol.ub[mesh.boundary_edges]).max() == 0.0

    def test_pressure_mean_zero_and_multiplier(self, small_system):
        _, spaces, _, _, system = small_system
        sol = solve(system)
        mean = sum(sol.p[ci] @ cs.int_mono for ci, cs in enumerate(spaces))
        assert abs(mean) < 1e-12
        assert abs(sol.lam) < 1e-10

    def test_dense_sparse_agree(self, small_system):
        _, _, _, _, system = small_system
        xs = solve(system, method="sparse")
        xd = solve(system, method="dense")
        assert xs.method == "sparse" and xd.method == "dense"
        assert np.abs(xs.x - xd.x).max() < 1e-8

    def test_rhs_linearity(self, small_system):
        mesh, spaces, dm, ops, system = small_system
        double = build_system(
            mesh, spaces, dm, 1.0, lambda p: 2.0 * _bubble_force(p), "robust", recon_ops=ops
        )
        x1 = solve(system).x
        x2 = solve(double).x
        assert np.allclose(x2, 2.0 * x1, atol=1e-9)

    def test_unknown_method(self, small_system):
        with pytest.raises(ValueError):
            solve(small_system[4], method="quantum")


class TestDiagnostics:
    def test_dense_limit(self):
        mesh = generate_rect_mesh(20)
        spaces = build_cell_spaces(mesh, 0)
        dm = DofMap(mesh, 0)
        system = build_system(mesh, spaces, dm, 1.0, lambda p: np.zeros((len(p), 2)), "standard")
        with pytest.raises(SolverError, match="dense path"):
            solve(system, method="dense")

    def test_structural_singularity_named(self):
        mesh = generate_rect_mesh(2)
        dm = DofMap(mesh, 0)
        K = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
        bad = GlobalSystem(
            K=K,
            rhs=np.array([1.0, 0.0]),
            dofmap=dm,
            free=np.array([0, 1]),
            fixed=np.array([], dtype=int),
            fixed_vals=np.array([]),
            nu=1.0,
            scheme="standard",
        )
        with pytest.raises(SolverError, match="velocity comp 1 cell 0"):
            solve(bad)


class TestExactness:
    def test_linear_field_recovered_exactly(self):
        # u = (y, x) is divergence-free with zero symmetric load, p = 0;
        # the order-1 scheme reproduces its projection through the full
        # pipeline, including the inhomogeneous trace condensation.
        mesh = generate_rect_mesh(2)
        spaces = build_cell_spaces(mesh, 1)
        dm = DofMap(mesh, 1)
        u = lambda p: np.column_stack([p[:, 1], p[:, 0]])
        system = build_system(
            mesh, spaces, dm, 1.0, lambda p: np.zeros((len(p), 2)), "standard", g=u
        )
        sol = solve(system)
        for ci, cs in enumerate(spaces):
            assert np.allclose(sol.u0[ci].T, cs.project_cell(u), atol=1e-9)
        assert np.abs(sol.p).max() < 1e-9
