"""Direct solution of the condensed saddle-point system.

The matrix is symmetric indefinite and, for small viscosities, badly scaled
between its momentum and divergence blocks, so it is symmetrically
equilibrated (rows and columns divided by the square root of the row maximum)
before sparse LU factorization, followed by a few steps of iterative
refinement on the original system until the relative residual reaches 1e-10.
A dense path exists for debugging small problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

RESIDUAL_RTOL = 1.0e-10
MAX_REFINEMENTS = 3
DENSE_LIMIT = 2000


class SolverError(RuntimeError):
    pass


@dataclass
class Solution:
    """Expanded solution of a Stokes system.

    u0 : (ncells, 2, np0) interior velocity coefficients.
    ub : (nedges, 2, k+1) edge velocity coefficients (stored orientation).
    p : (ncells, np0) pressure coefficients (zero mean by construction).
    lam : mean multiplier (zero up to roundoff for compatible data).
    """

    x: np.ndarray
    u0: np.ndarray
    ub: np.ndarray
    p: np.ndarray
    lam: float
    residual: float
    refinements: int
    method: str


def _check_structure(K, dofmap, free):
    empty = np.nonzero(np.diff(K.indptr) == 0)[0]
    if len(empty):
        dof = free[empty[0]]
        raise SolverError(f"structurally singular system: empty row for {dofmap.describe(dof)}")


def solve(system, method="sparse"):
    """Solve a :class:`GlobalSystem`; returns a :class:`Solution`.

    method : 'sparse' (SuperLU) or 'dense' (LAPACK, only for systems below
    2000 unknowns).
    """
    K = system.K.tocsr()
    b = system.rhs
    n = K.shape[0]
    _check_structure(K, system.dofmap, system.free)

    rowmax = np.abs(K).max(axis=1).toarray().ravel()
    if rowmax.min() <= 0.0:
        raise SolverError("zero row in assembled system")
    s = 1.0 / np.sqrt(rowmax)
    Ks = sp.diags(s) @ K @ sp.diags(s)

    if method == "dense":
        if n >= DENSE_LIMIT:
            raise SolverError(f"dense path limited to {DENSE_LIMIT} unknowns, got {n}")
        lu_piv = scipy.linalg.lu_factor(Ks.toarray())
        apply_inv = lambda r: scipy.linalg.lu_solve(lu_piv, r)
    elif method == "sparse":
        try:
            lu = spla.splu(Ks.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
        apply_inv = lu.solve
    else:
        raise ValueError(f"unknown method {method!r}")

    bnorm = np.linalg.norm(b)
    scale = bnorm if bnorm > 0.0 else 1.0
    x = s * apply_inv(s * b)
    res = b - K @ x
    rel = np.linalg.norm(res) / scale
    refinements = 0
    while rel > RESIDUAL_RTOL and refinements < MAX_REFINEMENTS:
        x = x + s * apply_inv(s * res)
        res = b - K @ x
        rel = np.linalg.norm(res) / scale
        refinements += 1
    if rel > RESIDUAL_RTOL:
        raise SolverError(
            f"relative residual {rel:.3e} above {RESIDUAL_RTOL:.1e} after {refinements} refinement passes "
            f"(n={n}, nu={system.nu}, scheme={system.scheme})"
        )

    dm = system.dofmap
    full = system.expand(x)
    mesh, np0, nb = dm.mesh, dm.np0, dm.nb
    scal_cells = full[: 2 * mesh.ncells * np0]
    u0 = np.empty((mesh.ncells, 2, np0))
    for comp in (0, 1):
        u0[:, comp, :] = scal_cells[comp::2].reshape(mesh.ncells, np0)
    scal_edges = full[2 * mesh.ncells * np0 : dm.n_velocity]
    ub = np.empty((mesh.nedges, 2, nb))
    for comp in (0, 1):
        ub[:, comp, :] = scal_edges[comp::2].reshape(mesh.nedges, nb)
    p = full[dm.n_velocity : dm.n_velocity + dm.n_pressure].reshape(mesh.ncells, np0)
    return Solution(
        x=full,
        u0=u0,
        ub=ub,
        p=p,
        lam=float(full[dm.multiplier]),
        residual=float(rel),
        refinements=refinements,
        method=method,
    )
