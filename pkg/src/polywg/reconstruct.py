"""H(div)-preserving velocity reconstruction on one polygonal cell.

A weak velocity (interior [P_k]^2 plus edge [P_k]^2 traces) is lifted to a
single piecewise Raviart-Thomas field on the cell's subtriangulation by a
square linear system M c = R d whose rows, in order, impose:

1. boundary flux matching: Legendre moments of the reconstruction's normal
   component on every cell edge equal those of the edge trace;
2. (k >= 1) interior moments along a fixed direction n1 against P_{k-1} on
   the whole cell match those of the interior velocity;
3. (k >= 1) interior moments along the rotated direction n2 against
   P_{k-1}(T_i) on each triangle match those of the interior velocity;
4. normal-jump moments across interior diagonals vanish (H(div) conformity);
5. divergence compatibility: each piece's polynomial divergence agrees with
   the first piece's, tested against P_k on the first triangle.

Rows 4 and 5 place the result in the cell's H(div) test space; rows 1-3 make
the lift unisolvent.  The direction n1 is the first angle of 1, 2, 3, ...
degrees whose unit vector is not parallel (within 1e-8) to any interior
diagonal normal; n2 is n1 rotated by 90 degrees.  If the system is singular
the next admissible angle is tried.

The pressure-robust body load tests the source against reconstructed basis
functions without forming them one at a time: with data-rule moments
fphi[i, r] = int_{T_i} f . Phi_r, the local load is R^T M^{-T} fphi.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .polybasis import CellPolyBasis, poly_space_dim

PARALLEL_TOL = 1.0e-8
SINGULAR_RTOL = 1.0e-12


class ReconstructionError(RuntimeError):
    """Raised when the reconstruction system cannot be made invertible."""


def _angle_candidates(normals):
    """Unit vectors at 1, 2, 3, ... degrees, skipping directions parallel to
    any of the given normals (within PARALLEL_TOL)."""
    for deg in range(1, 361):
        theta = np.deg2rad(deg)
        cand = np.array([np.cos(theta), np.sin(theta)])
        if all(abs(cand[0] * n[1] - cand[1] * n[0]) > PARALLEL_TOL for n in normals):
            yield cand


class ReconOperator:
    """Factorized reconstruction system for one cell.

    Parameters
    ----------
    cs : CellSpace
        The cell's discrete structure (subtriangulation, bases, tabulations).

    Attributes
    ----------
    M : (nbig, nbig) reconstruction matrix, nbig = ntri * dim RT_k.
    R : (nbig, 2, nloc) map from the two components' local weak-function
        coefficients to the right-hand side.
    n1, n2 : the interior-moment directions (None for k = 0).
    cond : 2-norm condition number of M (diagnostic).
    """

    def __init__(self, cs):
        self.cs = cs
        k, nrt, np0 = cs.k, cs.nrt, cs.np0
        ntri, nbig, nloc = cs.sub.ntri, cs.nbig, cs.nloc
        nq = len(cs.tri_w[0])

        flux_rows = np.zeros((len(cs.edges) * (k + 1), nbig))
        flux_rhs = np.zeros((len(cs.edges) * (k + 1), 2, nloc))
        for j, ed in enumerate(cs.edges):
            rtv = cs.piola[ed.tri].eval(ed.pts)  # (nq, nrt, 2)
            qn = rtv @ ed.n_out
            for m in range(k + 1):
                row = j * (k + 1) + m
                flux_rows[row, ed.tri * nrt : (ed.tri + 1) * nrt] = (ed.wds * ed.legv[:, m]) @ qn
                for c in (0, 1):
                    flux_rhs[row, c, np0 + j * (k + 1) + m] = ed.n_out[c] * ed.length / (2 * m + 1)

        if k >= 1:
            npm1 = poly_space_dim(k - 1)
            diag_normals = [ie.normal for ie in cs.sub.interior_edges]
            tri_bases = [
                CellPolyBasis(k - 1, cs.tri_pts[i].T @ cs.tri_w[i] / (cs.tri_w[i].sum()), cs.diameter)
                for i in range(ntri)
            ]
            tb_vals = [tri_bases[i].eval(cs.tri_pts[i]) for i in range(ntri)]
            # cross moments int_{T_i} m_s tb_a used for the right-hand side
            cross = [(tb_vals[i] * cs.tri_w[i][:, None]).T @ cs.mono_vals[i * nq : (i + 1) * nq] for i in range(ntri)]
            last_err = None
            for cand in _angle_candidates(diag_normals):
                n1, n2 = cand, np.array([-cand[1], cand[0]])
                m_rows, r_rows = self._moment_rows(n1, n2, npm1, tb_vals, cross)
                m_full = np.vstack([flux_rows, m_rows, cs.jump_rows, cs.div_rows])
                try:
                    lu, piv = lu_factor(m_full)
                except np.linalg.LinAlgError as exc:  # pragma: no cover
                    last_err = exc
                    continue
                udiag = np.abs(np.diag(lu))
                if udiag.min() <= SINGULAR_RTOL * udiag.max():
                    last_err = RuntimeError(f"singular reconstruction matrix for direction {n1}")
                    continue
                self.n1, self.n2 = n1, n2
                self.M = m_full
                self.R = np.concatenate([flux_rhs, r_rows, np.zeros((len(cs.jump_rows) + len(cs.div_rows), 2, nloc))])
                self.lu = (lu, piv)
                break
            else:
                raise ReconstructionError(
                    f"cell {cs.ci}: no interior-moment direction yields an invertible "
                    f"reconstruction system (last error: {last_err})"
                )
        else:
            self.n1 = self.n2 = None
            m_full = np.vstack([flux_rows, cs.jump_rows, cs.div_rows])
            lu, piv = lu_factor(m_full)
            udiag = np.abs(np.diag(lu))
            if udiag.min() <= SINGULAR_RTOL * udiag.max():
                raise ReconstructionError(f"cell {cs.ci}: singular reconstruction matrix (k=0)")
            self.M = m_full
            self.R = np.concatenate([flux_rhs, np.zeros((len(cs.jump_rows) + len(cs.div_rows), 2, nloc))])
            self.lu = (lu, piv)
        assert self.M.shape == (nbig, nbig)
        self.cond = float(np.linalg.cond(self.M))

    def _moment_rows(self, n1, n2, npm1, tb_vals, cross):
        """Whole-cell n1 moments and per-triangle n2 moments (rows 2 and 3)."""
        cs = self.cs
        nrt, np0, ntri, nloc = cs.nrt, cs.np0, cs.sub.ntri, cs.nloc
        nq = len(cs.tri_w[0])
        nrows = npm1 + ntri * npm1
        rows = np.zeros((nrows, cs.nbig))
        rhs = np.zeros((nrows, 2, nloc))
        for i in range(ntri):
            qn1 = cs.rt_vals[i] @ n1  # (nq, nrt)
            mono_i = cs.mono_vals[i * nq : (i + 1) * nq]
            for a in range(npm1):
                rows[a, i * nrt : (i + 1) * nrt] += (cs.tri_w[i] * mono_i[:, a]) @ qn1
        for a in range(npm1):
            for c in (0, 1):
                rhs[a, c, :np0] = n1[c] * cs.M_P[a, :np0]
        for i in range(ntri):
            qn2 = cs.rt_vals[i] @ n2
            for a in range(npm1):
                row = npm1 + i * npm1 + a
                rows[row, i * nrt : (i + 1) * nrt] = (cs.tri_w[i] * tb_vals[i][:, a]) @ qn2
                for c in (0, 1):
                    rhs[row, c, :np0] = n2[c] * cross[i][a]
        return rows, rhs

    # ------------------------------------------------------------------

    def reconstruct(self, dofs_x, dofs_y):
        """Piecewise-RT coefficients (nbig,) of the reconstructed field for a
        vector weak function given by its two components' local coefficients."""
        b = np.einsum("rcl,cl->r", self.R, np.vstack([dofs_x, dofs_y]))
        return lu_solve(self.lu, b)

    def eval_field(self, coeffs, tri, pts):
        """Evaluate a reconstructed field (piece `tri`) at physical points."""
        cs = self.cs
        sel = np.asarray(coeffs)[tri * cs.nrt : (tri + 1) * cs.nrt]
        return np.einsum("qrd,r->qd", cs.piola[tri].eval(pts), sel)

    def div_field(self, coeffs, tri, pts):
        cs = self.cs
        sel = np.asarray(coeffs)[tri * cs.nrt : (tri + 1) * cs.nrt]
        return cs.piola[tri].div(pts) @ sel

    def robust_load(self, f):
        """Local body load (2, nloc) of the pressure-robust scheme:
        entries (f, reconstruction of each basis function), computed as
        R^T M^{-T} fphi with data-rule moments fphi[i, r] = int_{T_i} f.Phi_r."""
        cs = self.cs
        d = cs.data
        fphi = np.empty(cs.nbig)
        for i in range(cs.sub.ntri):
            fv = np.asarray(f(d["tri_pts"][i]))
            fphi[i * cs.nrt : (i + 1) * cs.nrt] = np.einsum("q,qd,qrd->r", d["tri_w"][i], fv, d["rt_vals"][i])
        y = lu_solve(self.lu, fphi, trans=1)
        return np.einsum("r,rcl->cl", y, self.R)


def standard_load(cs, f):
    """Local body load (2, nloc) of the plain scheme: (f, v0) tested against
    the interior basis only."""
    d = cs.data
    fv = np.asarray(f(d["all_pts"]))
    load = np.zeros((2, cs.nloc))
    load[:, : cs.np0] = (d["mono"].T @ (d["all_w"][:, None] * fv)).T
    return load


def build_recon_operators(spaces):
    """ReconOperator for every cell."""
    return [ReconOperator(cs) for cs in spaces]
