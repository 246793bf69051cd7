"""Quadrature rules and polynomial bases on cells, edges, and triangles.

Cell bases are scaled monomials ((x-xc)/h)^a ((y-yc)/h)^b in graded order so
mass matrices stay well conditioned under refinement.  Edge bases are Legendre
polynomials in the arclength parameter t in [0,1], orthogonal on straight
edges.  Raviart-Thomas bases live on the reference triangle
That = (0,0),(1,0),(0,1) and are pushed to physical triangles by the Piola
transform, which preserves edge fluxes and divides divergences by det(J).

Triangle quadrature is a collapsed-square (Duffy) construction from a
Gauss-Jacobi(1,0) x Gauss-Legendre tensor rule, exact to the requested degree
with positive weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import legvander
from scipy.special import roots_jacobi, roots_legendre

MAX_QUAD_DEGREE = 20
MAX_RT_ORDER = 3


@dataclass(frozen=True)
class QuadRule:
    """Quadrature nodes and weights (weights include the domain measure)."""

    points: np.ndarray  # (nq, 2) on the reference triangle, or (nq,) on [0,1]
    weights: np.ndarray  # (nq,)
    degree: int


@lru_cache(maxsize=None)
def tri_quadrature(degree):
    """Rule on the reference triangle (0,0),(1,0),(0,1), exact for total
    degree <= degree.

    Built by collapsing the unit square: x = u, y = v(1-u) with Jacobian
    (1-u); the (1-u) factor is absorbed into a Gauss-Jacobi(1,0) rule in u so
    all weights are positive.  Weights sum to the triangle area 1/2.
    """
    if not 0 <= degree <= MAX_QUAD_DEGREE:
        raise ValueError(f"triangle quadrature degree must be in [0, {MAX_QUAD_DEGREE}], got {degree}")
    m = (degree + 2) // 2  # Gauss: m points integrate degree 2m-1
    xj, wj = roots_jacobi(m, 1.0, 0.0)  # int_{-1}^{1} (1-x) f(x) dx
    u = 0.5 * (1.0 + xj)
    wu = 0.25 * wj
    xg, wg = roots_legendre(m)
    v = 0.5 * (1.0 + xg)
    wv = 0.5 * wg
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([uu.ravel(), (vv * (1.0 - uu)).ravel()])
    w = np.outer(wu, wv).ravel()
    return QuadRule(points=pts, weights=w, degree=degree)


@lru_cache(maxsize=None)
def edge_quadrature(degree):
    """Gauss-Legendre rule on [0,1], exact for degree <= degree."""
    if not 0 <= degree <= MAX_QUAD_DEGREE:
        raise ValueError(f"edge quadrature degree must be in [0, {MAX_QUAD_DEGREE}], got {degree}")
    m = (degree + 2) // 2
    xg, wg = roots_legendre(m)
    return QuadRule(points=0.5 * (1.0 + xg), weights=0.5 * wg, degree=degree)


def monomial_exponents(degree):
    """Exponent pairs (a, b) of the 2D monomials of total degree <= degree,
    graded order, constant first: (0,0), (1,0), (0,1), (2,0), (1,1), ..."""
    return [(d - b, b) for d in range(degree + 1) for b in range(d + 1)]


def poly_space_dim(degree):
    """dim P_degree in 2D; zero for negative degree."""
    if degree < 0:
        return 0
    return (degree + 1) * (degree + 2) // 2


class CellPolyBasis:
    """Scaled monomial basis of P_degree on a cell.

    Basis functions are ((x-xc)/h)^a ((y-yc)/h)^b in graded order, where
    (xc, yc) is the cell centroid and h the cell diameter.  The first
    function is the constant 1.
    """

    def __init__(self, degree, center, scale):
        if degree < 0:
            raise ValueError("degree must be >= 0")
        if scale <= 0.0:
            raise ValueError("scale must be positive")
        self.degree = degree
        self.center = np.asarray(center, dtype=float)
        self.scale = float(scale)
        self.exponents = np.array(monomial_exponents(degree), dtype=int)
        self.dim = len(self.exponents)

    def _local(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return (pts - self.center) / self.scale

    @staticmethod
    def _powers(z, kmax):
        # (npts, kmax+1) with column a = z**a
        out = np.ones((z.shape[0], kmax + 1))
        for a in range(1, kmax + 1):
            out[:, a] = out[:, a - 1] * z
        return out

    def eval(self, pts):
        """Values at points, shape (npts, dim)."""
        loc = self._local(pts)
        xp = self._powers(loc[:, 0], self.degree)
        yp = self._powers(loc[:, 1], self.degree)
        return xp[:, self.exponents[:, 0]] * yp[:, self.exponents[:, 1]]

    def grad(self, pts):
        """Gradients at points, shape (npts, dim, 2)."""
        loc = self._local(pts)
        xp = self._powers(loc[:, 0], self.degree)
        yp = self._powers(loc[:, 1], self.degree)
        n = loc.shape[0]
        out = np.zeros((n, self.dim, 2))
        a = self.exponents[:, 0]
        b = self.exponents[:, 1]
        ax = a > 0
        by = b > 0
        out[:, ax, 0] = (a[ax] / self.scale) * xp[:, a[ax] - 1] * yp[:, b[ax]]
        out[:, by, 1] = (b[by] / self.scale) * xp[:, a[by]] * yp[:, b[by] - 1]
        return out


class EdgePolyBasis:
    """Legendre basis of P_degree on an edge, in the parameter t in [0,1].

    L_m(t) = P_m(2t - 1) with P_m the Legendre polynomial, so
    int_e L_m L_p ds = delta_mp * |e| / (2m + 1).
    """

    def __init__(self, degree):
        if degree < 0:
            raise ValueError("degree must be >= 0")
        self.degree = degree
        self.dim = degree + 1

    def eval(self, t):
        """Values at parameters t, shape (npts, dim)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return legvander(2.0 * t - 1.0, self.degree)

    def mass_diag(self, length):
        """Diagonal of the edge mass matrix for an edge of the given length."""
        return length / (2.0 * np.arange(self.dim) + 1.0)


# reference triangle geometry: local edge j is opposite local vertex j
REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
# (start vertex, end vertex, outward unit normal, length)
REF_EDGES = (
    (1, 2, np.array([1.0, 1.0]) / np.sqrt(2.0), np.sqrt(2.0)),
    (2, 0, np.array([-1.0, 0.0]), 1.0),
    (0, 1, np.array([0.0, -1.0]), 1.0),
)


class RTRefBasis:
    """Raviart-Thomas basis RT_k on the reference triangle.

    The space is [P_k]^2 + x * (homogeneous P_k); dimension (k+1)(k+3).
    Degrees of freedom, in order:

    * edge DOFs: for each local edge j = 0,1,2 and each m = 0..k,
      q -> int_0^1 (q . n_j)(x(t)) L_m(t) dt with t the parameter from edge
      start to end and L_m the Legendre polynomial on [0,1];
    * interior DOFs (k >= 1): q -> int_That q_c x^a y^b for each component
      c and monomial of total degree <= k-1.

    Shape function i is dual to DOF i.  For k = 0 this yields
    q_0 = sqrt(2) (x, y), q_1 = (x - 1, y), q_2 = (x, y - 1).
    """

    def __init__(self, k):
        if not 0 <= k <= MAX_RT_ORDER:
            raise ValueError(f"RT order must be in [0, {MAX_RT_ORDER}], got {k}")
        self.k = k
        self.ndof = (k + 1) * (k + 3)
        # spanning set: vector monomials, then x * homogeneous monomials
        self._vec_exps = [(a, b, c) for c in (0, 1) for (a, b) in monomial_exponents(k)]
        self._tail_exps = [(k - b, b) for b in range(k + 1)]
        nspan = len(self._vec_exps) + len(self._tail_exps)
        assert nspan == self.ndof
        self.coeffs = np.linalg.inv(self._dof_matrix())  # (nspan, ndof)

    def _span_eval(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = pts.shape[0]
        kmax = self.k + 1
        xp = CellPolyBasis._powers(pts[:, 0], kmax)
        yp = CellPolyBasis._powers(pts[:, 1], kmax)
        vals = np.zeros((n, self.ndof, 2))
        for s, (a, b, c) in enumerate(self._vec_exps):
            vals[:, s, c] = xp[:, a] * yp[:, b]
        off = len(self._vec_exps)
        for s, (a, b) in enumerate(self._tail_exps):
            vals[:, off + s, 0] = xp[:, a + 1] * yp[:, b]
            vals[:, off + s, 1] = xp[:, a] * yp[:, b + 1]
        return vals

    def _span_div(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = pts.shape[0]
        xp = CellPolyBasis._powers(pts[:, 0], self.k)
        yp = CellPolyBasis._powers(pts[:, 1], self.k)
        div = np.zeros((n, self.ndof))
        for s, (a, b, c) in enumerate(self._vec_exps):
            if c == 0 and a > 0:
                div[:, s] = a * xp[:, a - 1] * yp[:, b]
            elif c == 1 and b > 0:
                div[:, s] = b * xp[:, a] * yp[:, b - 1]
        off = len(self._vec_exps)
        for s, (a, b) in enumerate(self._tail_exps):
            div[:, off + s] = (a + b + 2) * xp[:, a] * yp[:, b]
        return div

    def _dof_matrix(self):
        k = self.k
        v = np.zeros((self.ndof, self.ndof))
        row = 0
        erule = edge_quadrature(2 * k + 2)
        leg = EdgePolyBasis(k)
        legv = leg.eval(erule.points)  # (nq, k+1)
        for va, vb, nhat, _length in REF_EDGES:
            pa, pb = REF_VERTICES[va], REF_VERTICES[vb]
            pts = pa[None, :] + erule.points[:, None] * (pb - pa)[None, :]
            qn = self._span_eval(pts) @ nhat  # (nq, nspan)
            for m in range(k + 1):
                v[row] = (erule.weights * legv[:, m]) @ qn
                row += 1
        if k >= 1:
            trule = tri_quadrature(2 * k + 2)
            vals = self._span_eval(trule.points)
            xp = CellPolyBasis._powers(trule.points[:, 0], k - 1)
            yp = CellPolyBasis._powers(trule.points[:, 1], k - 1)
            for c in (0, 1):
                for a, b in monomial_exponents(k - 1):
                    mono = xp[:, a] * yp[:, b]
                    v[row] = (trule.weights * mono) @ vals[:, :, c]
                    row += 1
        assert row == self.ndof
        return v

    def eval_ref(self, pts):
        """Shape function values at reference points, shape (npts, ndof, 2)."""
        return np.einsum("nsc,si->nic", self._span_eval(pts), self.coeffs)

    def div_ref(self, pts):
        """Shape function divergences at reference points, shape (npts, ndof)."""
        return self._span_div(pts) @ self.coeffs


@lru_cache(maxsize=None)
def rt_basis(k):
    """Cached RT_k reference basis."""
    return RTRefBasis(k)


@lru_cache(maxsize=None)
def rt_ref_table(k, degree):
    """RT_k shape values and divergences tabulated at the degree-`degree`
    triangle rule; returned arrays are read-only caches."""
    rule = tri_quadrature(degree)
    rt = rt_basis(k)
    vals = rt.eval_ref(rule.points)
    divs = rt.div_ref(rule.points)
    vals.flags.writeable = False
    divs.flags.writeable = False
    return vals, divs


class AffineMap:
    """Affine map F(xhat) = origin + J xhat from the reference triangle onto a
    physical triangle with CCW vertices (positive det J = 2 * area)."""

    def __init__(self, origin, jac):
        self.origin = np.asarray(origin, dtype=float)
        self.jac = np.asarray(jac, dtype=float)
        self.det = self.jac[0, 0] * self.jac[1, 1] - self.jac[0, 1] * self.jac[1, 0]
        scale = max(np.abs(self.jac).max(), 1.0e-300)
        if self.det <= 1.0e-14 * scale * scale:
            raise ValueError(f"degenerate or misoriented triangle: det J = {self.det:.3e}")
        self.inv = np.array([[self.jac[1, 1], -self.jac[0, 1]], [-self.jac[1, 0], self.jac[0, 0]]]) / self.det

    @classmethod
    def from_vertices(cls, p1, p2, p3):
        p1 = np.asarray(p1, dtype=float)
        return cls(p1, np.column_stack([np.asarray(p2, float) - p1, np.asarray(p3, float) - p1]))

    def push(self, ref_pts):
        """Map reference points to physical points."""
        return np.atleast_2d(ref_pts) @ self.jac.T + self.origin

    def pull(self, phys_pts):
        """Map physical points back to reference points."""
        return (np.atleast_2d(phys_pts) - self.origin) @ self.inv.T


class PiolaRT:
    """RT_k basis on a physical triangle via the contravariant Piola map:
    q(x) = J qhat(F^-1 x) / det J, div q (x) = div qhat (F^-1 x) / det J.
    Edge fluxes int_e q.n p ds equal their reference counterparts."""

    def __init__(self, amap, rt):
        self.amap = amap
        self.rt = rt
        self._piola = amap.jac / amap.det

    def eval(self, phys_pts):
        """Values at physical points, shape (npts, ndof, 2)."""
        return self.eval_at_ref(self.amap.pull(phys_pts))

    def div(self, phys_pts):
        """Divergences at physical points, shape (npts, ndof)."""
        return self.div_at_ref(self.amap.pull(phys_pts))

    def eval_at_ref(self, ref_pts):
        """Values at physical images of given reference points."""
        return np.einsum("dc,nic->nid", self._piola, self.rt.eval_ref(ref_pts))

    def div_at_ref(self, ref_pts):
        """Divergences at physical images of given reference points."""
        return self.rt.div_ref(ref_pts) / self.amap.det

    def transform(self, ref_vals, ref_divs):
        """Piola-transform pre-tabulated reference values (for cached rules)."""
        return np.einsum("dc,nic->nid", self._piola, ref_vals), ref_divs / self.amap.det


def piola_map(amap, rt):
    """RT basis evaluator on the physical triangle described by `amap`."""
    return PiolaRT(amap, rt)
