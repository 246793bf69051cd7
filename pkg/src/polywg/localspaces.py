"""Per-cell discrete spaces and weak differential operators.

For a polygonal cell T split into triangles T_1..T_n the matrix test space is

    Lambda_k(T) = { q in H(div; T) : q|_{T_i} in RT_k(T_i), div q in P_k(T) },

realized as the null space of (i) normal-jump moments against P_k on every
interior diagonal and (ii) moments on T_1 of the difference between the
polynomial divergence of each piece and that of the first piece, tested
against P_k(T_1).  Gradients of weak functions are tested row-wise against
Lambda_k, so one scalar space serves both velocity components.

A scalar weak function on T has interior coefficients in P_k(T) (scaled
monomials) followed by (k+1) Legendre coefficients per cell edge in the
edge's stored orientation; its weak gradient g in Lambda_k(T) satisfies

    (g, q)_T = -(v0, div q)_T + <vb, q . n>_dT      for all q in Lambda_k(T),

and its weak divergence d in P_k(T) satisfies

    (d, w)_T = -(v0, grad w)_T + <vb . n, w>_dT     for all w in P_k(T).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .mesh import subtriangulate
from .polybasis import (
    CellPolyBasis,
    EdgePolyBasis,
    PiolaRT,
    edge_quadrature,
    poly_space_dim,
    rt_basis,
    rt_ref_table,
    tri_quadrature,
)

NULLSPACE_RTOL = 1.0e-10
DEFAULT_DATA_DEGREE = 14


def lambda_space_dim(ntri, k):
    """dim Lambda_k on an ntri-piece subtriangulation."""
    return ntri * (k + 1) * (k + 3) - (ntri - 1) * (k + 1) - (ntri - 1) * poly_space_dim(k)


@dataclass
class EdgeData:
    """Tabulated quadrature data for one edge of a cell, in the edge's stored
    (mesh-wide) orientation so both adjacent cells share coefficients."""

    ei: int  # global edge id
    length: float
    n_out: np.ndarray  # unit normal, outward from this cell
    tri: int  # owning triangle of the subtriangulation
    ledge: int  # local edge of that triangle
    t: np.ndarray  # quadrature parameters in [0, 1]
    pts: np.ndarray  # (nq, 2) physical points
    wds: np.ndarray  # arclength weights (sum to length)
    legv: np.ndarray  # (nq, k+1) Legendre values
    mono: np.ndarray  # (nq, np0) cell monomials at the points
    lam: np.ndarray = None  # (nq, m, 2) Lambda basis values (owner piece)


class CellSpace:
    """All per-cell discrete structure for one polygonal cell.

    Parameters
    ----------
    mesh, ci : the mesh and cell index.
    k : polynomial order (interior/edge velocity and pressure order).
    build_degree : quadrature degree for basis-times-basis integrals
        (default 2k+4, exact for every such product).
    data_degree : fixed quadrature degree for analytic data (loads,
        projections of exact solutions).
    """

    def __init__(self, mesh, ci, k, build_degree=None, data_degree=DEFAULT_DATA_DEGREE):
        self.mesh = mesh
        self.ci = ci
        self.k = k
        self.data_degree = data_degree
        degree = 2 * k + 4 if build_degree is None else build_degree
        self.build_degree = degree

        self.sub = subtriangulate(mesh, ci)
        ntri = self.sub.ntri
        self.centroid = mesh.cell_centroids[ci]
        self.diameter = mesh.cell_diameters[ci]
        self.area = mesh.cell_areas[ci]
        self.cellbasis = CellPolyBasis(k, self.centroid, self.diameter)
        self.np0 = self.cellbasis.dim
        self.rt = rt_basis(k)
        self.nrt = self.rt.ndof
        self.edgebasis = EdgePolyBasis(k)
        self.nloc = self.np0 + len(mesh.cells[ci]) * (k + 1)

        # --- triangle quadrature tabulations (build rule) ---
        rule = tri_quadrature(degree)
        ref_vals, ref_divs = rt_ref_table(k, degree)
        self.piola = [PiolaRT(m, self.rt) for m in self.sub.maps]
        self.tri_pts = [m.push(rule.points) for m in self.sub.maps]
        self.tri_w = [rule.weights * m.det for m in self.sub.maps]
        rt_vals, rt_divs = [], []
        for p in self.piola:
            v, d = p.transform(ref_vals, ref_divs)
            rt_vals.append(v)
            rt_divs.append(d)
        self.rt_vals, self.rt_divs = rt_vals, rt_divs
        self.all_pts = np.vstack(self.tri_pts)
        self.all_w = np.concatenate(self.tri_w)
        self.mono_vals = self.cellbasis.eval(self.all_pts)
        self.mono_grads = self.cellbasis.grad(self.all_pts)

        # --- cell mass and gradient-gram matrices ---
        self.M_P = (self.mono_vals * self.all_w[:, None]).T @ self.mono_vals
        self.M_P_cho = cho_factor(self.M_P)
        self.int_mono = self.M_P[:, 0].copy()  # integrals of the monomials
        self.K_grad = np.einsum("q,qad,qbd->ab", self.all_w, self.mono_grads, self.mono_grads)

        # --- cell-edge tabulations ---
        erule = edge_quadrature(degree)
        self.edges = []
        cell = mesh.cells[ci]
        for pos, (ei, sign) in enumerate(zip(mesh.cell_edge_ids[ci], mesh.cell_edge_signs[ci])):
            va, vb = mesh.edges[ei]
            pa, pb = mesh.vertices[va], mesh.vertices[vb]
            length = mesh.edge_lengths[ei]
            pts = pa[None, :] + erule.points[:, None] * (pb - pa)[None, :]
            tri, ledge = self.sub.cell_edge_tri[pos]
            self.edges.append(
                EdgeData(
                    ei=ei,
                    length=length,
                    n_out=sign * mesh.edge_normals[ei],
                    tri=tri,
                    ledge=ledge,
                    t=erule.points,
                    pts=pts,
                    wds=erule.weights * length,
                    legv=self.edgebasis.eval(erule.points),
                    mono=self.cellbasis.eval(pts),
                )
            )

        # --- Lambda_k basis as a constraint null space ---
        nrt, np0 = self.nrt, self.np0
        nbig = ntri * nrt
        self.nbig = nbig
        jump_rows = []
        for ie in self.sub.interior_edges:
            pa, pb = mesh.vertices[ie.va], mesh.vertices[ie.vb]
            pts = pa[None, :] + erule.points[:, None] * (pb - pa)[None, :]
            legv = self.edgebasis.eval(erule.points)
            qa_n = self.piola[ie.tri_a].eval(pts) @ ie.normal  # (nq, nrt)
            qb_n = self.piola[ie.tri_b].eval(pts) @ ie.normal
            w = erule.weights * ie.length
            for m in range(k + 1):
                row = np.zeros(nbig)
                row[ie.tri_a * nrt : (ie.tri_a + 1) * nrt] = (w * legv[:, m]) @ qa_n
                row[ie.tri_b * nrt : (ie.tri_b + 1) * nrt] = -(w * legv[:, m]) @ qb_n
                jump_rows.append(row)
        # divergence compatibility: each piece's polynomial divergence,
        # extended to T_1, must match the first piece's
        div_rows = []
        w1, pts1 = self.tri_w[0], self.tri_pts[0]
        div_on_t1 = [self.piola[i].div(pts1) for i in range(ntri)]  # (nq, nrt) each
        mono1 = self.cellbasis.eval(pts1)
        moments = [(mono1 * w1[:, None]).T @ d for d in div_on_t1]  # (np0, nrt) each
        for i in range(1, ntri):
            for a in range(np0):
                row = np.zeros(nbig)
                row[i * nrt : (i + 1) * nrt] = moments[i][a]
                row[0:nrt] = -moments[0][a]
                div_rows.append(row)
        self.jump_rows = np.array(jump_rows).reshape(len(jump_rows), nbig)
        self.div_rows = np.array(div_rows).reshape(len(div_rows), nbig)
        self.m_dim = lambda_space_dim(ntri, k)
        rows = jump_rows + div_rows
        if rows:
            con = np.array(rows)
            _u, sing, vt = np.linalg.svd(con, full_matrices=True)
            rank = int((sing > NULLSPACE_RTOL * sing[0]).sum())
            self.C = vt[rank:].T  # (nbig, null_dim), orthonormal columns
        else:
            self.C = np.eye(nbig)
        if self.C.shape[1] != self.m_dim:
            raise RuntimeError(
                f"cell {ci}: H(div) space dimension {self.C.shape[1]} != expected {self.m_dim} "
                f"(ntri={ntri}, k={k}); the subtriangulation may be degenerate"
            )

        # Gram of the Lambda basis and of the raw RT blocks
        gram = np.zeros((nbig, nbig))
        for i in range(ntri):
            gi = np.einsum("q,qad,qbd->ab", self.tri_w[i], rt_vals[i], rt_vals[i])
            gram[i * nrt : (i + 1) * nrt, i * nrt : (i + 1) * nrt] = gi
        self.rt_gram = gram
        self.M_lambda = self.C.T @ gram @ self.C
        self.M_lambda_cho = cho_factor(self.M_lambda)

        # Lambda values at triangle quadrature points and at cell-edge points
        self.lam_vals = [np.einsum("qrd,rm->qmd", rt_vals[i], self.C[i * nrt : (i + 1) * nrt]) for i in range(ntri)]
        self.lam_divs = [rt_divs[i] @ self.C[i * nrt : (i + 1) * nrt] for i in range(ntri)]
        for ed in self.edges:
            rtv = self.piola[ed.tri].eval(ed.pts)
            ed.lam = np.einsum("qrd,rm->qmd", rtv, self.C[ed.tri * nrt : (ed.tri + 1) * nrt])

        # --- weak-gradient moment matrix W: (g, lam_b) = W @ dofs ---
        lam_div_all = np.vstack(self.lam_divs)  # (ntri*nq, m)
        w_int = -(lam_div_all * self.all_w[:, None]).T @ self.mono_vals  # (m, np0)
        w_edge = []
        for ed in self.edges:
            lam_n = ed.lam @ ed.n_out  # (nq, m)
            w_edge.append((lam_n * ed.wds[:, None]).T @ ed.legv)  # (m, k+1)
        self.W = np.hstack([w_int] + w_edge)
        x = cho_solve(self.M_lambda_cho, self.W)
        s = self.W.T @ x
        self.S = 0.5 * (s + s.T)  # scalar stiffness: (wg u, wg v)_T

        # --- weak-divergence moment matrices: (d, m_a) = Dx ux + Dy uy ---
        # interior block [a, s] = -int_T m_s d(m_a)/dx_c
        dxy = []
        for c in (0, 1):
            cols = [-(self.mono_grads[:, :, c] * self.all_w[:, None]).T @ self.mono_vals]
            for ed in self.edges:
                cols.append(ed.n_out[c] * (ed.mono * ed.wds[:, None]).T @ ed.legv)
            dxy.append(np.hstack(cols))
        self.Dx, self.Dy = dxy

        # lazy caches for the fixed-degree data rule
        self._data = None

    # ------------------------------------------------------------------
    # data-rule tabulations (analytic loads and projections)

    @property
    def data(self):
        if self._data is None:
            rule = tri_quadrature(self.data_degree)
            ref_vals, _ = rt_ref_table(self.k, self.data_degree)
            pts = [m.push(rule.points) for m in self.sub.maps]
            w = [rule.weights * m.det for m in self.sub.maps]
            rtv = [np.einsum("dc,nic->nid", p._piola, ref_vals) for p in self.piola]
            erule = edge_quadrature(self.data_degree)
            elegv = EdgePolyBasis(self.k).eval(erule.points)
            self._data = {
                "tri_pts": pts,
                "tri_w": w,
                "rt_vals": rtv,
                "all_pts": np.vstack(pts),
                "all_w": np.concatenate(w),
                "mono": self.cellbasis.eval(np.vstack(pts)),
                "erule": erule,
                "elegv": elegv,
            }
        return self._data

    # ------------------------------------------------------------------
    # weak operators

    def weak_gradient(self, dofs):
        """Lambda coefficients of the weak gradient of a scalar weak function
        given by its nloc local coefficients."""
        return cho_solve(self.M_lambda_cho, self.W @ np.asarray(dofs))

    def weak_divergence(self, dofs_x, dofs_y):
        """P_k coefficients of the weak divergence of a vector weak function."""
        rhs = self.Dx @ np.asarray(dofs_x) + self.Dy @ np.asarray(dofs_y)
        return cho_solve(self.M_P_cho, rhs)

    # ------------------------------------------------------------------
    # projections (data rule)

    def project_cell(self, fn):
        """L2 projection onto P_k(T) of a callable fn(pts) -> (npts,) or
        (npts, nc); returns (np0,) or (np0, nc) coefficients."""
        d = self.data
        vals = np.asarray(fn(d["all_pts"]))
        rhs = d["mono"].T @ (d["all_w"][:, None] * vals.reshape(len(d["all_w"]), -1))
        out = cho_solve(self.M_P_cho, rhs)
        return out[:, 0] if vals.ndim == 1 else out

    def project_edge(self, pos, fn):
        """Edge-Legendre projection on cell edge `pos` of fn(pts) -> (npts,)
        or (npts, nc), in the edge's stored orientation."""
        ed = self.edges[pos]
        d = self.data
        erule, legv = d["erule"], d["elegv"]
        va, vb = self.mesh.edges[ed.ei]
        pa, pb = self.mesh.vertices[va], self.mesh.vertices[vb]
        pts = pa[None, :] + erule.points[:, None] * (pb - pa)[None, :]
        vals = np.asarray(fn(pts))
        moments = legv.T @ (erule.weights[:, None] * vals.reshape(len(erule.weights), -1))
        coeff = moments * (2.0 * np.arange(self.k + 1) + 1.0)[:, None]
        return coeff[:, 0] if vals.ndim == 1 else coeff

    def project_lambda(self, fn):
        """L2 projection onto Lambda_k(T) of a vector callable fn(pts) ->
        (npts, 2); returns the m Lambda coefficients."""
        d = self.data
        rhs = np.zeros(self.m_dim)
        nrt = self.nrt
        for i in range(self.sub.ntri):
            lam = np.einsum("qrd,rm->qmd", d["rt_vals"][i], self.C[i * nrt : (i + 1) * nrt])
            rhs += np.einsum("q,qd,qmd->m", d["tri_w"][i], np.asarray(fn(d["tri_pts"][i])), lam)
        return cho_solve(self.M_lambda_cho, rhs)

    # ------------------------------------------------------------------
    # evaluation and norms

    def eval_cell_poly(self, coeffs, pts):
        return self.cellbasis.eval(pts) @ np.asarray(coeffs)

    def eval_lambda(self, coeffs, tri, pts):
        """Evaluate a Lambda field (given by its m coefficients) using the
        polynomial piece of triangle `tri` at physical points."""
        b = self.C[tri * self.nrt : (tri + 1) * self.nrt] @ np.asarray(coeffs)
        return np.einsum("qrd,r->qd", self.piola[tri].eval(pts), b)

    def locate_tri(self, pts, tol=1.0e-12):
        """Subtriangle index containing each point (barycentric test)."""
        pts = np.atleast_2d(pts)
        out = np.full(len(pts), -1, dtype=int)
        for i, amap in enumerate(self.sub.maps):
            ref = amap.pull(pts)
            inside = (ref[:, 0] >= -tol) & (ref[:, 1] >= -tol) & (ref.sum(axis=1) <= 1.0 + tol)
            out[(out == -1) & inside] = i
        return out

    def l2_cell(self, coeffs):
        c = np.asarray(coeffs)
        return float(c @ self.M_P @ c)

    def energy_cell(self, dofs_x, dofs_y):
        """Squared local energy |wg u|^2 summed over both components."""
        return float(dofs_x @ self.S @ dofs_x + dofs_y @ self.S @ dofs_y)

    def norm1h_cell(self, dofs_x, dofs_y):
        """Squared local discrete H1 seminorm:
        |grad v0|^2_T + h_T^-1 |v0 - vb|^2_dT, summed over components."""
        total = 0.0
        for dofs in (dofs_x, dofs_y):
            dofs = np.asarray(dofs)
            c0 = dofs[: self.np0]
            total += float(c0 @ self.K_grad @ c0)
            for j, ed in enumerate(self.edges):
                cb = dofs[self.np0 + j * (self.k + 1) : self.np0 + (j + 1) * (self.k + 1)]
                diff = ed.mono @ c0 - ed.legv @ cb
                total += float((ed.wds * diff**2).sum()) / self.diameter
        return total


def build_cell_spaces(mesh, k, build_degree=None, data_degree=DEFAULT_DATA_DEGREE):
    """CellSpace for every cell of the mesh."""
    return [CellSpace(mesh, ci, k, build_degree, data_degree) for ci in range(mesh.ncells)]
