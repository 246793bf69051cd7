"""Global assembly: DOF numbering, saddle-point block structure, scheme
independence of the matrix, boundary condensation, and load vectors."""

import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp

from polywg.assembly import (
    DofMap,
    assemble_load,
    boundary_values,
    build_system,
    divergence_triplets,
    dump_matrix,
    stiffness_triplets,
)
from polywg.localspaces import build_cell_spaces
from polywg.mesh import generate_rect_mesh
from polywg.reconstruct import build_recon_operators


@pytest.fixture(scope="module")
def rect2():
    return generate_rect_mesh(2)


@pytest.fixture(scope="module")
def setup_k0(rect2):
    spaces = build_cell_spaces(rect2, 0)
    return rect2, spaces, DofMap(rect2, 0), build_recon_operators(spaces)


@pytest.fixture(scope="module")
def setup_k1(rect2):
    spaces = build_cell_spaces(rect2, 1)
    return rect2, spaces, DofMap(rect2, 1), build_recon_operators(spaces)


def _force(pts):
    return np.column_stack([np.sin(pts[:, 0] + 2 * pts[:, 1]), np.cos(pts[:, 0] - pts[:, 1])])


class TestDofMap:
    def test_counts_k0(self, rect2):
        dm = DofMap(rect2, 0)
        assert rect2.ncells == 4 and rect2.nedges == 12
        assert dm.np0 == 1 and dm.nb == 1
        assert dm.n_scalar == 16
        assert dm.n_velocity == 32
        assert dm.n_pressure == 4
        assert dm.n_total == 37
        assert dm.multiplier == 36

    def test_counts_k1(self, rect2):
        dm = DofMap(rect2, 1)
        assert dm.n_scalar == 4 * 3 + 12 * 2
        assert dm.n_total == 2 * dm.n_scalar + 4 * 3 + 1

    def test_cell_scalars_cover_all(self, rect2):
        dm = DofMap(rect2, 1)
        seen = set()
        for ci in range(rect2.ncells):
            scal = dm.cell_scalars(ci)
            assert len(scal) == dm.np0 + 4 * dm.nb  # quad cells
            seen.update(scal.tolist())
        assert seen == set(range(dm.n_scalar))

    def test_vdofs_interleave(self, rect2):
        dm = DofMap(rect2, 0)
        scal = dm.cell_scalars(0)
        v0, v1 = dm.vdofs(scal, 0), dm.vdofs(scal, 1)
        assert np.all(v0 % 2 == 0) and np.all(v1 % 2 == 1)
        assert set(v0).isdisjoint(v1)

    def test_describe(self, rect2):
        dm = DofMap(rect2, 1)
        assert "multiplier" in dm.describe(dm.multiplier)
        assert "pressure" in dm.describe(dm.n_velocity)
        assert "edge" in dm.describe(2 * dm.edge_scalars(0)[0])
        assert "interior" in dm.describe(0)


class TestBlocks:
    def test_stiffness_symmetric_positive(self, setup_k0):
        mesh, spaces, dm, _ = setup_k0
        r, c, v = stiffness_triplets(spaces, dm, 1.0)
        A = sp.coo_matrix((v, (r, c)), shape=(dm.n_velocity, dm.n_velocity)).toarray()
        assert np.allclose(A, A.T, atol=1e-14)
        assert np.linalg.eigvalsh(A).min() > -1e-12

    def test_stiffness_kernel_contains_constants(self, setup_k1):
        mesh, spaces, dm, _ = setup_k1
        r, c, v = stiffness_triplets(spaces, dm, 1.0)
        A = sp.coo_matrix((v, (r, c)), shape=(dm.n_velocity, dm.n_velocity)).toarray()
        # one component constant: interior constant mode + edge constant modes
        x = np.zeros(dm.n_velocity)
        for ci in range(mesh.ncells):
            x[2 * (ci * dm.np0)] = 1.0
        base = mesh.ncells * dm.np0
        for ei in range(mesh.nedges):
            x[2 * (base + ei * dm.nb)] = 1.0
        assert np.abs(A @ x).max() < 1e-11

    def test_stiffness_nu_scaling(self, setup_k0):
        _, spaces, dm, _ = setup_k0
        _, _, v1 = stiffness_triplets(spaces, dm, 1.0)
        _, _, v5 = stiffness_triplets(spaces, dm, 5.0)
        assert np.allclose(v5, 5.0 * v1, rtol=1e-15)

    def test_divergence_kills_constants(self, setup_k1):
        mesh, spaces, dm, _ = setup_k1
        r, c, v = divergence_triplets(spaces, dm)
        B = sp.coo_matrix(
            (v, (r - dm.n_velocity, c)), shape=(dm.n_pressure, dm.n_velocity)
        ).toarray()
        x = np.zeros(dm.n_velocity)
        for ci in range(mesh.ncells):
            x[2 * (ci * dm.np0)] = 1.0
        base = mesh.ncells * dm.np0
        for ei in range(mesh.nedges):
            x[2 * (base + ei * dm.nb)] = 1.0
        assert np.abs(B @ x).max() < 1e-12


class TestBuildSystem:
    def test_matrix_identical_between_schemes(self, setup_k0):
        mesh, spaces, dm, ops = setup_k0
        sys_r = build_system(mesh, spaces, dm, 1.0, _force, "robust", recon_ops=ops)
        sys_s = build_system(mesh, spaces, dm, 1.0, _force, "standard")
        assert np.array_equal(sys_r.K.indptr, sys_s.K.indptr)
        assert np.array_equal(sys_r.K.indices, sys_s.K.indices)
        assert np.array_equal(sys_r.K.data, sys_s.K.data)
        assert np.abs(sys_r.rhs - sys_s.rhs).max() > 1e-6  # loads genuinely differ

    def test_system_symmetric(self, setup_k0):
        mesh, spaces, dm, ops = setup_k0
        system = build_system(mesh, spaces, dm, 1.0, _force, "robust", recon_ops=ops)
        diff = (system.K - system.K.T).tocoo()
        assert np.abs(diff.data).max() < 1e-13 if diff.nnz else True

    def test_condensation_bookkeeping(self, setup_k0):
        mesh, spaces, dm, ops = setup_k0
        system = build_system(mesh, spaces, dm, 1.0, _force, "robust", recon_ops=ops)
        nbdry = len(mesh.boundary_edges)
        assert len(system.fixed) == 2 * dm.nb * nbdry
        assert len(system.free) + len(system.fixed) == dm.n_total
        assert system.meta["n_free"] == len(system.free)
        assert system.K.shape == (len(system.free), len(system.free))
        x = system.expand(np.zeros(len(system.free)))
        assert np.array_equal(x[system.fixed], system.fixed_vals)

    def test_inhomogeneous_trace_enters_rhs(self, setup_k1):
        mesh, spaces, dm, ops = setup_k1
        g = lambda p: np.column_stack([p[:, 1], p[:, 0]])
        sys0 = build_system(mesh, spaces, dm, 1.0, _force, "standard")
        sysg = build_system(mesh, spaces, dm, 1.0, _force, "standard", g=g)
        assert np.array_equal(sys0.free, sysg.free)
        # rhs difference must equal -K[free, fixed] @ g-values
        r0, c0, v0 = stiffness_triplets(spaces, dm, 1.0)
        rb, cb, vb = divergence_triplets(spaces, dm)
        rows = np.concatenate([r0, cb, rb])
        cols = np.concatenate([c0, rb, cb])
        vals = np.concatenate([v0, -vb, -vb])
        K = sp.coo_matrix((vals, (rows, cols)), shape=(dm.n_total, dm.n_total)).tocsr()
        expect = -K[sysg.free][:, sysg.fixed] @ sysg.fixed_vals
        assert np.allclose(sysg.rhs - sys0.rhs, expect, atol=1e-13)


class TestBoundaryValues:
    def test_zero_default(self, setup_k0):
        mesh, spaces, dm, _ = setup_k0
        fixed, vals = boundary_values(spaces, dm)
        assert len(fixed) == 2 * dm.nb * len(mesh.boundary_edges)
        assert np.all(vals == 0.0)
        scal_sets = {s for ei in mesh.boundary_edges for s in dm.edge_scalars(ei)}
        assert set(fixed.tolist()) == {2 * s + c for s in scal_sets for c in (0, 1)}

    def test_linear_trace_reproduced(self, setup_k1):
        mesh, spaces, dm, _ = setup_k1
        g = lambda p: np.column_stack([1.0 + 2.0 * p[:, 0] - p[:, 1], p[:, 0] + 3.0 * p[:, 1]])
        fixed, vals = boundary_values(spaces, dm, g)
        lookup = dict(zip(fixed.tolist(), vals))
        for ei in mesh.boundary_edges:
            va, vb = mesh.edges[ei]
            pa, pb = mesh.vertices[va], mesh.vertices[vb]
            ts = np.linspace(0.0, 1.0, 5)
            pts = pa[None, :] + ts[:, None] * (pb - pa)[None, :]
            scal = dm.edge_scalars(ei)
            leg = np.polynomial.legendre.legvander(2.0 * ts - 1.0, dm.nb - 1)
            for comp in (0, 1):
                coeff = np.array([lookup[2 * s + comp] for s in scal])
                assert np.allclose(leg @ coeff, g(pts)[:, comp], atol=1e-12)


class TestLoads:
    def test_zero_force_zero_load(self, setup_k0):
        mesh, spaces, dm, ops = setup_k0
        zero = lambda p: np.zeros((len(p), 2))
        for scheme, kw in (("robust", {"recon_ops": ops}), ("standard", {})):
            rhs = assemble_load(spaces, dm, zero, scheme, **kw)
            assert np.abs(rhs).max() < 1e-15

    def test_standard_load_interior_only(self, setup_k0):
        mesh, spaces, dm, _ = setup_k0
        rhs = assemble_load(spaces, dm, _force, "standard")
        base = mesh.ncells * dm.np0
        edge_dofs = np.arange(2 * base, dm.n_velocity)
        assert np.abs(rhs[edge_dofs]).max() == 0.0
        assert np.abs(rhs[: 2 * base]).max() > 0.0

    def test_robust_load_reaches_edges(self, setup_k0):
        mesh, spaces, dm, ops = setup_k0
        rhs = assemble_load(spaces, dm, _force, "robust", recon_ops=ops)
        base = mesh.ncells * dm.np0
        assert np.abs(rhs[2 * base : dm.n_velocity]).max() > 1e-6

    def test_robust_requires_operators(self, setup_k0):
        mesh, spaces, dm, _ = setup_k0
        with pytest.raises(ValueError):
            assemble_load(spaces, dm, _force, "robust")
        with pytest.raises(ValueError):
            assemble_load(spaces, dm, _force, "mystery")


def test_dump_matrix_roundtrip(setup_k0, tmp_path):
    mesh, spaces, dm, ops = setup_k0
    system = build_system(mesh, spaces, dm, 1.0, _force, "robust", recon_ops=ops)
    path = tmp_path / "system.mtx"
    dump_matrix(system, path)
    M = scipy.io.mmread(path).tocsr()
    assert M.shape == system.K.shape
    assert np.abs((M - system.K).toarray()).max() < 1e-15
