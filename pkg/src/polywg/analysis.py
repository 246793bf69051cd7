"""Manufactured Stokes cases, error norms, convergence and robustness studies,
and a structural property suite.

Error norms follow the discrete theory: the energy error is the weak-gradient
seminorm of the difference between the projected exact velocity and the
discrete one (reusing the local stiffness with unit viscosity), the velocity
L2 error compares interior coefficients against the cell-wise L2 projection,
and the pressure L2 error compares against the mean-shifted projection of the
exact pressure (the discrete pressure has zero mean; exact pressures need not).
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .assembly import DofMap, build_system, divergence_triplets, stiffness_triplets
from .localspaces import CellSpace, build_cell_spaces, lambda_space_dim
from .mesh import (
    PolyMesh,
    generate_deformed_rect_mesh,
    generate_hex_mesh,
    generate_lshape_mesh,
    generate_rect_mesh,
)
from .polybasis import edge_quadrature
from .reconstruct import ReconOperator, build_recon_operators
from .solver import solve

# ---------------------------------------------------------------------------
# manufactured cases


@dataclass(frozen=True)
class StokesCase:
    """Closed-form Stokes solution with its body force f = -nu lap(u) + grad p."""

    name: str
    domain: str  # "unit_square" or "lshape"
    velocity: callable  # pts -> (n, 2)
    pressure: callable  # pts -> (n,)
    body_force: callable  # (pts, nu) -> (n, 2)
    zero_boundary: bool
    description: str = ""


def _poly_bubble_velocity(p):
    x, y = p[:, 0], p[:, 1]
    return np.column_stack(
        [
            10.0 * (x**4 - 2 * x**3 + x**2) * (2 * y**3 - 3 * y**2 + y),
            -10.0 * (2 * x**3 - 3 * x**2 + x) * (y**4 - 2 * y**3 + y**2),
        ]
    )


def _poly_bubble_force(p, nu):
    x, y = p[:, 0], p[:, 1]
    lap1 = 10.0 * ((12 * x**2 - 12 * x + 2) * (2 * y**3 - 3 * y**2 + y) + (x**4 - 2 * x**3 + x**2) * (12 * y - 6))
    lap2 = -10.0 * ((12 * x - 6) * (y**4 - 2 * y**3 + y**2) + (2 * x**3 - 3 * x**2 + x) * (12 * y**2 - 12 * y + 2))
    return np.column_stack([-nu * lap1 + 10.0, -nu * lap2])


def _grad_poly7(p):
    x, y = p[:, 0], p[:, 1]
    fx = sum(j * x ** (j - 1) * y ** (7 - j) for j in range(1, 8))
    fy = sum((7 - j) * x**j * y ** (6 - j) for j in range(0, 7))
    return np.column_stack([fx, fy])


def _poly7_pressure(p):
    x, y = p[:, 0], p[:, 1]
    return sum(x**j * y ** (7 - j) for j in range(8)) - 761.0 / 1260.0


def _trig_velocity(p):
    x, y = p[:, 0], p[:, 1]
    return np.column_stack([np.sin(np.pi * x) * np.sin(np.pi * y), np.cos(np.pi * x) * np.cos(np.pi * y)])


def _trig_pressure(p):
    return 2.0 * np.cos(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])


def _trig_force(p, nu):
    x, y = p[:, 0], p[:, 1]
    sx, sy = np.sin(np.pi * x), np.sin(np.pi * y)
    cx, cy = np.cos(np.pi * x), np.cos(np.pi * y)
    pi = np.pi
    return np.column_stack(
        [2.0 * nu * pi**2 * sx * sy - 2.0 * pi * sx * sy, 2.0 * nu * pi**2 * cx * cy + 2.0 * pi * cx * cy]
    )


def _corner_theta(p):
    th = np.arctan2(p[:, 1], p[:, 0])
    return np.where(th < 0.0, th + 2.0 * np.pi, th)


def _corner_pressure(p):
    r = np.hypot(p[:, 0], p[:, 1])
    return r ** (2.0 / 3.0) * np.sin(2.0 * _corner_theta(p) / 3.0)


def _corner_force(p, nu):
    # grad(r^(2/3) sin(2 theta / 3)) = (2/3) r^(-1/3) (-sin(theta/3), cos(theta/3))
    r = np.maximum(np.hypot(p[:, 0], p[:, 1]), 1.0e-300)
    th = _corner_theta(p)
    gp = (2.0 / 3.0) * r ** (-1.0 / 3.0)
    grad = np.column_stack([-gp * np.sin(th / 3.0), gp * np.cos(th / 3.0)])
    return 2.0 * nu * np.pi**2 * _trig_velocity(p) + grad


CASES = {
    "poly_bubble": StokesCase(
        name="poly_bubble",
        domain="unit_square",
        velocity=_poly_bubble_velocity,
        pressure=lambda p: 10.0 * p[:, 0],
        body_force=_poly_bubble_force,
        zero_boundary=True,
        description="degree-5 divergence-free velocity with zero trace, linear pressure",
    ),
    "zero_flow": StokesCase(
        name="zero_flow",
        domain="unit_square",
        velocity=lambda p: np.zeros((len(p), 2)),
        pressure=_poly7_pressure,
        body_force=lambda p, nu: _grad_poly7(p),
        zero_boundary=True,
        description="no flow: the body force is the gradient of a degree-7 pressure",
    ),
    "trig": StokesCase(
        name="trig",
        domain="unit_square",
        velocity=_trig_velocity,
        pressure=_trig_pressure,
        body_force=_trig_force,
        zero_boundary=False,
        description="divergence-free trigonometric velocity with nonzero trace",
    ),
    "corner_singular": StokesCase(
        name="corner_singular",
        domain="lshape",
        velocity=_trig_velocity,
        pressure=_corner_pressure,
        body_force=_corner_force,
        zero_boundary=False,
        description="smooth velocity with a low-regularity pressure at the re-entrant corner",
    ),
}

MESH_FAMILIES = ("rect", "deformed", "hex", "lshape")


def make_mesh(family, level, seed=0, amplitude=0.2):
    """Mesh for a study level; rect/deformed take level = 1/h, hex/lshape take
    the tiling refinement level."""
    if family == "rect":
        return generate_rect_mesh(level)
    if family == "deformed":
        return generate_deformed_rect_mesh(level, amplitude=amplitude, seed=seed + level)
    if family == "hex":
        return generate_hex_mesh(level)
    if family == "lshape":
        return generate_lshape_mesh(level)
    raise ValueError(f"unknown mesh family {family!r}; expected one of {MESH_FAMILIES}")


# ---------------------------------------------------------------------------
# discretization driver and error norms


@dataclass
class Discretization:
    """Cached per-mesh structure shared by all (nu, scheme) runs."""

    mesh: PolyMesh
    k: int
    spaces: list
    recon_ops: list
    dofmap: DofMap


def discretize(mesh, k, build_degree=None, data_degree=None):
    kwargs = {}
    if data_degree is not None:
        kwargs["data_degree"] = data_degree
    spaces = build_cell_spaces(mesh, k, build_degree=build_degree, **kwargs)
    return Discretization(mesh, k, spaces, build_recon_operators(spaces), DofMap(mesh, k))


def project_exact(disc, case):
    """Projections of the exact solution: interior velocity (ncells, 2, np0),
    edge velocity (nedges, 2, k+1), and mean-shifted pressure (ncells, np0)."""
    mesh, spaces, k = disc.mesh, disc.spaces, disc.k
    u0p = np.empty((mesh.ncells, 2, spaces[0].np0))
    ubp = np.zeros((mesh.nedges, 2, k + 1))
    qp = np.empty((mesh.ncells, spaces[0].np0))
    for ci, cs in enumerate(spaces):
        u0p[ci] = cs.project_cell(case.velocity).T
        qp[ci] = cs.project_cell(case.pressure)
        for pos, ed in enumerate(cs.edges):
            if mesh.edge_cells[ed.ei, 0] == ci:
                ubp[ed.ei] = cs.project_edge(pos, case.velocity).T
    mean = sum(qp[ci] @ cs.int_mono for ci, cs in enumerate(spaces)) / mesh.cell_areas.sum()
    qp[:, 0] -= mean
    return u0p, ubp, qp


def _local_dofs(cs, u0_cell, ub_edges):
    """Gather (2, nloc) local coefficients from global arrays."""
    k = cs.k
    out = np.zeros((2, cs.nloc))
    out[:, : cs.np0] = u0_cell
    for j, ed in enumerate(cs.edges):
        out[:, cs.np0 + j * (k + 1) : cs.np0 + (j + 1) * (k + 1)] = ub_edges[ed.ei]
    return out


def compute_errors(disc, case, sol):
    """(energy, velocity L2, pressure L2) errors against projections."""
    u0p, ubp, qp = project_exact(disc, case)
    e_energy = e_ul2 = e_pl2 = 0.0
    ph = sol.p
    for ci, cs in enumerate(disc.spaces):
        d = _local_dofs(cs, u0p[ci] - sol.u0[ci], ubp - sol.ub)
        e_energy += d[0] @ cs.S @ d[0] + d[1] @ cs.S @ d[1]
        e0 = u0p[ci] - sol.u0[ci]
        e_ul2 += e0[0] @ cs.M_P @ e0[0] + e0[1] @ cs.M_P @ e0[1]
        ep = qp[ci] - ph[ci]
        e_pl2 += ep @ cs.M_P @ ep
    return float(np.sqrt(e_energy)), float(np.sqrt(e_ul2)), float(np.sqrt(e_pl2))


@dataclass
class RunResult:
    case: str
    scheme: str
    k: int
    nu: float
    level: int
    h: float
    dofs: int
    err_energy: float
    err_ul2: float
    err_pl2: float
    wall_ms: float
    residual: float
    solution: object = None


def run_case(case, disc, nu, scheme, level=0, keep_solution=False):
    """Solve one configuration and measure its errors."""
    if isinstance(case, str):
        case = CASES[case]
    t0 = time.perf_counter()
    g = None if case.zero_boundary else case.velocity
    system = build_system(
        disc.mesh,
        disc.spaces,
        disc.dofmap,
        nu,
        lambda p: case.body_force(p, nu),
        scheme,
        recon_ops=disc.recon_ops,
        g=g,
    )
    sol = solve(system)
    err = compute_errors(disc, case, sol)
    wall_ms = 1000.0 * (time.perf_counter() - t0)
    return RunResult(
        case=case.name,
        scheme=scheme,
        k=disc.k,
        nu=nu,
        level=level,
        h=disc.mesh.h,
        dofs=system.meta["n_free"],
        err_energy=err[0],
        err_ul2=err[1],
        err_pl2=err[2],
        wall_ms=wall_ms,
        residual=sol.residual,
        solution=sol if keep_solution else None,
    )


# ---------------------------------------------------------------------------
# studies


@dataclass
class RateTable:
    """Errors over a refinement sequence plus observed convergence rates."""

    results: list
    rates: dict = field(default_factory=dict)  # column -> list (first entry None)

    def __post_init__(self):
        cols = ("err_energy", "err_ul2", "err_pl2")
        for col in cols:
            vals = [getattr(r, col) for r in self.results]
            hs = [r.h for r in self.results]
            out = [None]
            for i in range(1, len(vals)):
                if vals[i] > 0.0 and vals[i - 1] > 0.0 and hs[i] != hs[i - 1]:
                    out.append(float(np.log(vals[i - 1] / vals[i]) / np.log(hs[i - 1] / hs[i])))
                else:
                    out.append(None)
            self.rates[col] = out

    def terminal_rate(self, col):
        r = self.rates[col]
        return r[-1] if r else None


def convergence_study(case, family, k, nu, scheme, levels, seed=0, amplitude=0.2, data_degree=None):
    """Solve a case over a refinement sequence and tabulate errors/rates."""
    if isinstance(case, str):
        case = CASES[case]
    results = []
    for level in levels:
        disc = discretize(make_mesh(family, level, seed=seed, amplitude=amplitude), k, data_degree=data_degree)
        results.append(run_case(case, disc, nu, scheme, level=level))
    return RateTable(results)


def robustness_study(case, family, level, k, nus, schemes=("robust", "standard"), seed=0):
    """Solve one mesh across viscosities for both schemes; returns results and
    velocity-agreement / pressure-scaling diagnostics."""
    if isinstance(case, str):
        case = CASES[case]
    disc = discretize(make_mesh(family, level, seed=seed), k)
    results = {}
    for scheme in schemes:
        for nu in nus:
            results[(scheme, nu)] = run_case(case, disc, nu, scheme, level=level, keep_solution=True)
    diag = {}
    if "robust" in schemes and len(nus) > 1:
        base = results[("robust", nus[0])].solution
        agree = 0.0
        for nu in nus[1:]:
            other = results[("robust", nu)].solution
            agree = max(agree, np.abs(base.u0 - other.u0).max() / max(np.abs(base.u0).max(), 1e-300))
        diag["robust_velocity_agreement"] = float(agree)
        diag["robust_pressure_errors"] = [results[("robust", nu)].err_pl2 for nu in nus]
    if "standard" in schemes:
        diag["standard_energy_errors"] = [results[("standard", nu)].err_energy for nu in nus]
    for key, res in results.items():
        res.solution = None
    return results, diag


# ---------------------------------------------------------------------------
# property suite


@dataclass
class PropertyCheck:
    name: str
    passed: bool
    observed: str
    requirement: str


def _check(checks, name, passed, observed, requirement):
    checks.append(PropertyCheck(name, bool(passed), observed, requirement))


def _random_weak_function(dofmap, rng, zero_boundary=True):
    """Random global scalar-per-component coefficients with zero boundary."""
    x = rng.standard_normal(dofmap.n_velocity)
    if zero_boundary:
        for ei in dofmap.mesh.boundary_edges:
            scal = dofmap.edge_scalars(ei)
            x[2 * scal] = 0.0
            x[2 * scal + 1] = 0.0
    return x


def _gather_cell(dofmap, cs, ci, xglobal):
    scal = dofmap.cell_scalars(ci)
    return xglobal[2 * scal], xglobal[2 * scal + 1]


def _condition_residual(cs, op, dx, dy, rng):
    """Largest residual of the reconstruction's defining conditions for one
    random weak function: edge-flux moments against P_k(e), whole-cell
    interior moments against [P_{k-1}]^2, and normal continuity across the
    sub-triangulation; all relative to the coefficient scale."""
    k = cs.k
    co = op.reconstruct(dx, dy)
    scale = max(np.abs(co).max(), 1.0)
    worst = 0.0
    erule = edge_quadrature(2 * k + 6)
    legv = cs.edgebasis.eval(erule.points)
    mesh = cs.mesh
    for j, ed in enumerate(cs.edges):
        va, vb = mesh.edges[ed.ei]
        pa, pb = mesh.vertices[va], mesh.vertices[vb]
        pts = pa[None, :] + erule.points[:, None] * (pb - pa)[None, :]
        qn = op.eval_field(co, ed.tri, pts) @ ed.n_out
        sl = slice(cs.np0 + j * (k + 1), cs.np0 + (j + 1) * (k + 1))
        vbn = (legv @ dx[sl]) * ed.n_out[0] + (legv @ dy[sl]) * ed.n_out[1]
        moments = ed.length * (erule.weights[:, None] * legv).T @ (qn - vbn)
        worst = max(worst, np.abs(moments).max() / scale)
    if k >= 1:
        # interior moments against every [P_{k-1}]^2 monomial, whole cell
        npm1 = (k + 1) * k // 2
        mom = np.zeros((npm1, 2))
        for i in range(cs.sub.ntri):
            vals = op.eval_field(co, i, cs.tri_pts[i])
            vals = vals - np.column_stack(
                [cs.eval_cell_poly(dx[: cs.np0], cs.tri_pts[i]), cs.eval_cell_poly(dy[: cs.np0], cs.tri_pts[i])]
            )
            mono = cs.cellbasis.eval(cs.tri_pts[i])[:, :npm1]
            mom += (cs.tri_w[i][:, None] * mono).T @ vals
        worst = max(worst, np.abs(mom).max() / scale)
    for ie in cs.sub.interior_edges:
        pa, pb = mesh.vertices[ie.va], mesh.vertices[ie.vb]
        ts = rng.uniform(0.05, 0.95, size=4)
        pts = pa[None, :] + ts[:, None] * (pb - pa)[None, :]
        jump = (op.eval_field(co, ie.tri_a, pts) - op.eval_field(co, ie.tri_b, pts)) @ ie.normal
        worst = max(worst, np.abs(jump).max() / scale)
    return worst


def property_suite(seed=0, families=MESH_FAMILIES, n_random=50, korders=(0, 1), level=1):
    """Structural checks on the discretization; returns PropertyCheck list."""
    rng = np.random.default_rng(seed)
    checks = []

    # 1. reconstruction conditions on random weak functions, every mesh family
    worst = 0.0
    for family in families:
        mesh = make_mesh(family, 3 if family in ("rect", "deformed") else level, seed=seed)
        for k in korders:
            spaces = build_cell_spaces(mesh, k)
            ops = {}
            for _ in range(max(1, n_random // len(korders))):
                ci = int(rng.integers(mesh.ncells))
                cs = spaces[ci]
                if ci not in ops:
                    ops[ci] = ReconOperator(cs)
                dx, dy = rng.standard_normal(cs.nloc), rng.standard_normal(cs.nloc)
                worst = max(worst, _condition_residual(cs, ops[ci], dx, dy, rng))
            ops.clear()
    _check(checks, "reconstruction_conditions", worst < 1e-9, f"max residual {worst:.2e}", "< 1e-9")

    # 2. divergence transfer: div(reconstruction) == weak divergence
    worst = 0.0
    mesh = generate_hex_mesh(1)
    spaces = build_cell_spaces(mesh, 1)
    for ci in rng.choice(mesh.ncells, size=4, replace=False):
        cs = spaces[ci]
        op = ReconOperator(cs)
        dx, dy = rng.standard_normal(cs.nloc), rng.standard_normal(cs.nloc)
        co = op.reconstruct(dx, dy)
        wd = cs.weak_divergence(dx, dy)
        for i in range(cs.sub.ntri):
            pts = cs.tri_pts[i][:4]
            worst = max(worst, np.abs(op.div_field(co, i, pts) - cs.eval_cell_poly(wd, pts)).max())
    _check(checks, "divergence_transfer", worst < 1e-9, f"max deviation {worst:.2e}", "< 1e-9")

    # 3. space dimension identity on every cell
    ok = True
    for k in (0, 1, 2):
        spaces = build_cell_spaces(mesh, k)
        for cs in spaces:
            ok &= cs.m_dim == lambda_space_dim(cs.sub.ntri, k)
    _check(checks, "space_dimension_identity", ok, "all cells, k in {0,1,2}", "exact")

    # 4. pinned reconstruction matrix on a fan-triangulated pentagon (k=0)
    pent = PolyMesh(np.array([[0.0, 0.0], [3.0, 0.0], [3.5, 2.0], [1.5, 3.5], [-0.5, 1.5]]), [[0, 1, 2, 3, 4]])
    cs = CellSpace(pent, 0, 0)
    op = ReconOperator(cs)
    s2 = np.sqrt(2.0)
    a1, a2, a3 = cs.sub.areas
    expected = np.array(
        [
            [0, 0, 1, 0, 0, 0, 0, 0, 0],
            [s2, 0, 0, 0, 0, 0, 0, 0, 0],
            [0, 0, 0, s2, 0, 0, 0, 0, 0],
            [0, 0, 0, 0, 0, 0, s2, 0, 0],
            [0, 0, 0, 0, 0, 0, 0, 1, 0],
            [0, 1, 0, 0, 0, 1, 0, 0, 0],
            [0, 0, 0, 0, 1, 0, 0, 0, 1],
            [-s2, -1, -1, s2 * a1 / a2, a1 / a2, a1 / a2, 0, 0, 0],
            [-s2, -1, -1, 0, 0, 0, s2 * a1 / a3, a1 / a3, a1 / a3],
        ]
    )
    dev = np.abs(op.M - expected).max()
    _check(checks, "pentagon_matrix_match", dev < 1e-12, f"max entry deviation {dev:.2e}", "< 1e-12")

    # 5. stiffness and divergence blocks identical between schemes
    rmesh = generate_rect_mesh(4)
    disc = discretize(rmesh, 0)
    case = CASES["poly_bubble"]
    sys_r = build_system(rmesh, disc.spaces, disc.dofmap, 1.0, lambda p: case.body_force(p, 1.0), "robust", disc.recon_ops)
    sys_s = build_system(rmesh, disc.spaces, disc.dofmap, 1.0, lambda p: case.body_force(p, 1.0), "standard")
    same = (
        np.array_equal(sys_r.K.indptr, sys_s.K.indptr)
        and np.array_equal(sys_r.K.indices, sys_s.K.indices)
        and np.array_equal(sys_r.K.data, sys_s.K.data)
    )
    _check(checks, "matrix_identical_between_schemes", same, "CSR byte comparison", "bit-identical")

    # 6. discrete incompressibility of the solved velocity
    res = run_case(case, disc, 1.0, "robust", keep_solution=True)
    sol = res.solution
    div_norm = unorm = 0.0
    for ci, cs in enumerate(disc.spaces):
        dx, dy = _local_dofs(cs, sol.u0[ci], sol.ub)
        wd = cs.weak_divergence(dx, dy)
        div_norm += wd @ cs.M_P @ wd
        unorm += sol.u0[ci, 0] @ cs.M_P @ sol.u0[ci, 0] + sol.u0[ci, 1] @ cs.M_P @ sol.u0[ci, 1]
    ratio = np.sqrt(div_norm) / max(np.sqrt(unorm), 1e-300)
    _check(checks, "discrete_incompressibility", ratio < 1e-9, f"|wd u|/|u0| = {ratio:.2e}", "< 1e-9")

    # 7. energy norm vs discrete H1 norm equivalence, stable across levels
    k = 0
    intervals = []
    for level in (1, 2):
        hmesh = generate_hex_mesh(level)
        spaces = build_cell_spaces(hmesh, k)
        dm = DofMap(hmesh, k)
        ratios = []
        for _ in range(40):
            x = _random_weak_function(dm, rng)
            energy = h1 = 0.0
            for ci, cs in enumerate(spaces):
                dx, dy = _gather_cell(dm, cs, ci, x)
                energy += cs.energy_cell(dx, dy)
                h1 += cs.norm1h_cell(dx, dy)
            if h1 > 0.0:
                ratios.append(energy / h1)
        intervals.append((min(ratios), max(ratios)))
    (lo1, hi1), (lo2, hi2) = intervals
    stable = 0.8 <= lo2 / lo1 <= 1.25 and 0.8 <= hi2 / hi1 <= 1.25 and lo1 > 0.0
    _check(
        checks,
        "norm_equivalence_interval",
        stable,
        f"level1 [{lo1:.3f}, {hi1:.3f}], level2 [{lo2:.3f}, {hi2:.3f}]",
        "positive, endpoints stable to 20% across refinement",
    )

    # 8. inf-sup constant drift across refinement
    betas = []
    for n in (4, 8):
        m = generate_rect_mesh(n)
        disc_n = discretize(m, 0)
        sysm = build_system(m, disc_n.spaces, disc_n.dofmap, 1.0, lambda p: np.zeros((len(p), 2)), "standard")
        kfull = sysm.K.toarray()
        nfree = kfull.shape[0]
        # block boundaries inside the condensed system
        vmask = sysm.free < disc_n.dofmap.n_velocity
        pmask = (sysm.free >= disc_n.dofmap.n_velocity) & (sysm.free < disc_n.dofmap.n_velocity + disc_n.dofmap.n_pressure)
        a = kfull[np.ix_(vmask, vmask)]
        b = -kfull[np.ix_(pmask, vmask)]
        mp = np.zeros((pmask.sum(), pmask.sum()))
        off = 0
        for cs in disc_n.spaces:
            mp[off : off + cs.np0, off : off + cs.np0] = cs.M_P
            off += cs.np0
        schur = b @ np.linalg.solve(a, b.T)
        eig = scipy.linalg.eigh(schur, mp, eigvals_only=True)
        betas.append(float(np.sqrt(max(eig[1], 0.0))))  # skip the constant-pressure mode
    drift = abs(betas[1] - betas[0]) / betas[0]
    _check(
        checks,
        "inf_sup_stability",
        drift < 0.25 and betas[0] > 0.0,
        f"beta(h)={betas[0]:.4f}, beta(h/2)={betas[1]:.4f}, drift {100 * drift:.1f}%",
        "positive, drift < 25% under refinement",
    )

    # 9. reconstruction-vs-interior deviation controlled by the trace jump
    ratios_by_level = []
    for level in (1, 2):
        hmesh = generate_hex_mesh(level)
        spaces = build_cell_spaces(hmesh, 0)
        ops = [ReconOperator(cs) for cs in spaces]
        dm = DofMap(hmesh, 0)
        worst = 0.0
        for _ in range(10):
            x = _random_weak_function(dm, rng)
            num = den = 0.0
            for ci, cs in enumerate(spaces):
                dx, dy = _gather_cell(dm, cs, ci, x)
                co = ops[ci].reconstruct(dx, dy)
                for i in range(cs.sub.ntri):
                    diff = ops[ci].eval_field(co, i, cs.tri_pts[i])
                    diff = diff - np.column_stack(
                        [cs.eval_cell_poly(dx[: cs.np0], cs.tri_pts[i]), cs.eval_cell_poly(dy[: cs.np0], cs.tri_pts[i])]
                    )
                    num += (cs.tri_w[i] * (diff**2).sum(axis=1)).sum()
                for j, ed in enumerate(cs.edges):
                    jump_x = ed.mono @ dx[: cs.np0] - ed.legv @ dx[cs.np0 + j : cs.np0 + j + 1]
                    jump_y = ed.mono @ dy[: cs.np0] - ed.legv @ dy[cs.np0 + j : cs.np0 + j + 1]
                    den += cs.diameter * (ed.wds * (jump_x**2 + jump_y**2)).sum()
            if den > 0.0:
                worst = max(worst, np.sqrt(num / den))
        ratios_by_level.append(worst)
    grow = ratios_by_level[1] / max(ratios_by_level[0], 1e-300)
    _check(
        checks,
        "reconstruction_deviation_bound",
        grow < 2.0,
        f"ratio level1 {ratios_by_level[0]:.3f}, level2 {ratios_by_level[1]:.3f}",
        "bounded ratio, growth < 2x under refinement",
    )

    # 10. commuting identities for the weak operators
    pentagon_cs = CellSpace(pent, 0, 1)
    v = lambda p: np.sin(p[:, 0]) * np.cos(p[:, 1])
    gv = lambda p: np.column_stack([np.cos(p[:, 0]) * np.cos(p[:, 1]), -np.sin(p[:, 0]) * np.sin(p[:, 1])])
    dofs = np.concatenate(
        [pentagon_cs.project_cell(v)] + [pentagon_cs.project_edge(j, v) for j in range(len(pentagon_cs.edges))]
    )
    dev = np.abs(pentagon_cs.weak_gradient(dofs) - pentagon_cs.project_lambda(gv)).max()
    _check(checks, "weak_gradient_commutes", dev < 1e-9, f"max deviation {dev:.2e}", "< 1e-9")

    return checks


# ---------------------------------------------------------------------------
# CSV output

CSV_COLUMNS = [
    "case",
    "scheme",
    "k",
    "nu",
    "level",
    "h",
    "dofs",
    "err_energy",
    "rate_energy",
    "err_ul2",
    "rate_ul2",
    "err_pl2",
    "rate_pl2",
    "wall_ms",
]


def results_to_csv(tables, stream=None, zero_walltime=False):
    """Serialize RateTables (or plain result lists) with deterministic
    formatting; zero_walltime replaces measured times for byte-stable output."""
    out = stream or io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)

    def fmt(x):
        return "" if x is None else f"{x:.6e}"

    for table in tables:
        results = table.results if isinstance(table, RateTable) else list(table)
        rates = table.rates if isinstance(table, RateTable) else {c: [None] * len(results) for c in ("err_energy", "err_ul2", "err_pl2")}
        for i, r in enumerate(results):
            writer.writerow(
                [
                    r.case,
                    r.scheme,
                    r.k,
                    f"{r.nu:.6e}",
                    r.level,
                    f"{r.h:.6e}",
                    r.dofs,
                    fmt(r.err_energy),
                    "" if rates["err_energy"][i] is None else f"{rates['err_energy'][i]:.3f}",
                    fmt(r.err_ul2),
                    "" if rates["err_ul2"][i] is None else f"{rates['err_ul2'][i]:.3f}",
                    fmt(r.err_pl2),
                    "" if rates["err_pl2"][i] is None else f"{rates['err_pl2'][i]:.3f}",
                    "0" if zero_walltime else f"{r.wall_ms:.1f}",
                ]
            )
    if stream is None:
        return out.getvalue()
    return None
