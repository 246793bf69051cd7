"""Global assembly of the velocity-pressure saddle-point system.

Unknowns, in order: velocity scalar DOFs interleaved by component
(dof = 2 * scalar + comp, scalars numbered cell interiors first, then edge
modes), then cell-wise pressure coefficients, then one scalar multiplier
enforcing zero pressure mean.  The assembled system is symmetric indefinite:

    [ A   -B^T  0 ] [u]   [F]
    [-B    0    c ] [p] = [0]
    [ 0   c^T   0 ] [l]   [0]

with A the (nu-scaled) weak-gradient stiffness, B the weak-divergence
operator, c the vector of pressure basis integrals.  Since both schemes share
A and B, the scheme only enters through F.  Dirichlet data is imposed by
fixing boundary-edge velocity DOFs to edge-Legendre projections of the given
trace and condensing them out; zero data reproduces the elimination of the
homogeneous space exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp

from .polybasis import poly_space_dim
from .reconstruct import standard_load


class DofMap:
    """Global degree-of-freedom numbering for order-k spaces on a mesh."""

    def __init__(self, mesh, k):
        self.mesh = mesh
        self.k = k
        self.np0 = poly_space_dim(k)
        self.nb = k + 1
        self.n_scalar = mesh.ncells * self.np0 + mesh.nedges * self.nb
        self.n_velocity = 2 * self.n_scalar
        self.n_pressure = mesh.ncells * self.np0
        self.n_total = self.n_velocity + self.n_pressure + 1
        self.multiplier = self.n_total - 1

    def cell_scalars(self, ci):
        """Scalar DOF ids of cell ci in local order: interior then edges."""
        ids = [ci * self.np0 + np.arange(self.np0)]
        base = self.mesh.ncells * self.np0
        for ei in self.mesh.cell_edge_ids[ci]:
            ids.append(base + ei * self.nb + np.arange(self.nb))
        return np.concatenate(ids)

    def edge_scalars(self, ei):
        base = self.mesh.ncells * self.np0
        return base + ei * self.nb + np.arange(self.nb)

    def vdofs(self, scalars, comp):
        return 2 * np.asarray(scalars) + comp

    def pressure_dofs(self, ci):
        return self.n_velocity + ci * self.np0 + np.arange(self.np0)

    def describe(self, dof):
        """Human-readable name of a global DOF (for solver diagnostics)."""
        if dof == self.multiplier:
            return "pressure-mean multiplier"
        if dof >= self.n_velocity:
            local = dof - self.n_velocity
            return f"pressure cell {local // self.np0} mode {local % self.np0}"
        scalar, comp = divmod(dof, 2)[0], dof % 2
        cells_end = self.mesh.ncells * self.np0
        if scalar < cells_end:
            return f"velocity comp {comp} cell {scalar // self.np0} interior mode {scalar % self.np0}"
        local = scalar - cells_end
        return f"velocity comp {comp} edge {local // self.nb} mode {local % self.nb}"


@dataclass
class GlobalSystem:
    """Condensed linear system plus the bookkeeping to expand solutions."""

    K: sp.csr_matrix
    rhs: np.ndarray
    dofmap: DofMap
    free: np.ndarray  # global indices kept in the condensed system
    fixed: np.ndarray  # boundary velocity DOFs that were eliminated
    fixed_vals: np.ndarray
    nu: float
    scheme: str
    meta: dict = field(default_factory=dict)

    def expand(self, x_free):
        x = np.empty(self.dofmap.n_total)
        x[self.free] = x_free
        x[self.fixed] = self.fixed_vals
        return x


def stiffness_triplets(spaces, dofmap, nu):
    """COO triplets of the velocity stiffness nu * (wg u, wg v)."""
    rows, cols, vals = [], [], []
    for ci, cs in enumerate(spaces):
        scal = dofmap.cell_scalars(ci)
        s_local = nu * cs.S
        ii, jj = np.meshgrid(scal, scal, indexing="ij")
        for comp in (0, 1):
            rows.append((2 * ii + comp).ravel())
            cols.append((2 * jj + comp).ravel())
            vals.append(s_local.ravel())
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def divergence_triplets(spaces, dofmap):
    """COO triplets of B with rows at the global pressure indices:
    B[(ci, a), vdof] = (wd basis, m_a)_T moments."""
    rows, cols, vals = [], [], []
    for ci, cs in enumerate(spaces):
        scal = dofmap.cell_scalars(ci)
        pdofs = dofmap.pressure_dofs(ci)
        for comp, dmat in ((0, cs.Dx), (1, cs.Dy)):
            ii, jj = np.meshgrid(pdofs, 2 * scal + comp, indexing="ij")
            rows.append(ii.ravel())
            cols.append(jj.ravel())
            vals.append(dmat.ravel())
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def assemble_load(spaces, dofmap, f, scheme, recon_ops=None):
    """Global velocity load vector (length n_total) for the given scheme:
    'robust' tests f against reconstructed basis functions, 'standard'
    against the interior component only."""
    if scheme not in ("robust", "standard"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if scheme == "robust" and recon_ops is None:
        raise ValueError("robust scheme needs reconstruction operators")
    rhs = np.zeros(dofmap.n_total)
    for ci, cs in enumerate(spaces):
        load = recon_ops[ci].robust_load(f) if scheme == "robust" else standard_load(cs, f)
        scal = dofmap.cell_scalars(ci)
        for comp in (0, 1):
            np.add.at(rhs, 2 * scal + comp, load[comp])
    return rhs


def boundary_values(spaces, dofmap, g=None):
    """Fixed velocity DOFs on the domain boundary and their values.

    g : callable(pts) -> (npts, 2) boundary trace, or None for zero data.
    Values are edge-Legendre projections of g, so the discrete trace is the
    best L2 fit edge by edge (flux compatibility is inherited exactly).
    """
    mesh = dofmap.mesh
    fixed, vals = [], []
    for ei in mesh.boundary_edges:
        ci = mesh.edge_cells[ei, 0]
        scal = dofmap.edge_scalars(ei)
        if g is None:
            coeff = np.zeros((dofmap.nb, 2))
        else:
            cs = spaces[ci]
            pos = list(mesh.cell_edge_ids[ci]).index(ei)
            coeff = cs.project_edge(pos, g)
        for comp in (0, 1):
            fixed.append(2 * scal + comp)
            vals.append(coeff[:, comp])
    if not fixed:
        return np.array([], dtype=int), np.array([])
    return np.concatenate(fixed), np.concatenate(vals)


def build_system(mesh, spaces, dofmap, nu, f, scheme, recon_ops=None, g=None):
    """Assemble and condense the full saddle-point system."""
    ar, ac, av = stiffness_triplets(spaces, dofmap, nu)
    br, bc, bv = divergence_triplets(spaces, dofmap)
    crow = np.concatenate([dofmap.pressure_dofs(ci) for ci in range(mesh.ncells)])
    cval = np.concatenate([cs.int_mono for cs in spaces])
    mult = np.full(len(crow), dofmap.multiplier)

    rows = np.concatenate([ar, bc, br, crow, mult])
    cols = np.concatenate([ac, br, bc, mult, crow])
    vals = np.concatenate([av, -bv, -bv, cval, cval])
    n = dofmap.n_total
    K = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()

    rhs = assemble_load(spaces, dofmap, f, scheme, recon_ops)
    fixed, fixed_vals = boundary_values(spaces, dofmap, g)
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    free = np.nonzero(mask)[0]
    rhs_free = rhs[free]
    if len(fixed):
        rhs_free = rhs_free - K[free][:, fixed] @ fixed_vals
    return GlobalSystem(
        K=K[free][:, free].tocsr(),
        rhs=rhs_free,
        dofmap=dofmap,
        free=free,
        fixed=fixed,
        fixed_vals=fixed_vals,
        nu=nu,
        scheme=scheme,
        meta={"n_full": n, "n_free": len(free)},
    )


def dump_matrix(system, path):
    """Write the condensed system matrix in MatrixMarket format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(system.K))
