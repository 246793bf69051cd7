"""Polygonal meshes: storage/validation, generators, text I/O, and cell
subtriangulation.

Conventions
-----------
* Cells are simple polygons with vertices listed counterclockwise.
* Every undirected edge is stored once, oriented as traversed by the cell of
  lowest index that contains it (its owner); the stored unit normal points out
  of the owner.  Interior edges are shared by exactly two cells with opposite
  traversal directions.
* Subtriangulation introduces no new vertices: a cell with ne vertices is
  split into ne - 2 triangles, fanned from a vertex that sees the whole cell
  when one exists (lowest global index preferred), otherwise by ear clipping.
  The first triangle is the reference piece for divergence-compatibility
  constraints; triangle vertex order is CCW so local edge j is opposite local
  vertex j, matching the reference element.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Polygon, box
from shapely.geometry.polygon import orient

from .polybasis import AffineMap

KERNEL_REL_TOL = 1.0e-10
SNAP = 1.0e-9
MIN_CLIP_AREA = 1.0e-12


class MeshError(ValueError):
    """Raised for invalid polygons or inconsistent mesh topology."""


def _polygon_area_centroid(pts):
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if abs(area) < 1.0e-300:
        return area, pts.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return area, np.array([cx, cy])


class PolyMesh:
    """Immutable polygonal mesh with precomputed edge topology.

    Parameters
    ----------
    vertices : (nv, 2) float array
    cells : sequence of integer index arrays, each a CCW simple polygon
    validate : bool
        Check polygon simplicity/orientation and edge consistency.

    Attributes
    ----------
    cell_areas, cell_centroids, cell_diameters : per-cell geometry; ``h`` is
        the largest cell diameter.
    edges : (ne, 2) vertex pairs in owner traversal order.
    edge_cells : (ne, 2) owner cell and neighbor cell (-1 on the boundary).
    edge_normals : (ne, 2) unit normals pointing out of the owner cell.
    cell_edge_ids, cell_edge_signs : per cell, edge ids in loop order and +1
        if the cell owns the edge (stored normal is outward) else -1.
    """

    def __init__(self, vertices, cells, validate=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be an (nv, 2) array")
        self.cells = [np.asarray(c, dtype=int).ravel() for c in cells]
        self.ncells = len(self.cells)
        self.nvertices = len(self.vertices)

        areas = np.empty(self.ncells)
        centroids = np.empty((self.ncells, 2))
        diams = np.empty(self.ncells)
        for i, cell in enumerate(self.cells):
            if len(cell) < 3:
                raise MeshError(f"cell {i} has fewer than 3 vertices")
            if len(np.unique(cell)) != len(cell):
                raise MeshError(f"cell {i} repeats a vertex")
            pts = self.vertices[cell]
            area, centroid = _polygon_area_centroid(pts)
            if area <= 0.0:
                raise MeshError(f"cell {i} is not positively oriented (area {area:.3e})")
            if validate and not Polygon(pts).is_valid:
                raise MeshError(f"cell {i} is not a simple polygon")
            areas[i] = area
            centroids[i] = centroid
            diff = pts[:, None, :] - pts[None, :, :]
            diams[i] = np.sqrt((diff**2).sum(axis=2)).max()
        self.cell_areas = areas
        self.cell_centroids = centroids
        self.cell_diameters = diams
        self.h = diams.max()

        # edge topology; owner = first (lowest-index) cell to traverse the edge
        edge_index = {}
        edges = []
        edge_cells = []
        self.cell_edge_ids = []
        self.cell_edge_signs = []
        for ci, cell in enumerate(self.cells):
            ids = np.empty(len(cell), dtype=int)
            signs = np.empty(len(cell), dtype=int)
            for j in range(len(cell)):
                a, b = int(cell[j]), int(cell[(j + 1) % len(cell)])
                key = (a, b) if a < b else (b, a)
                if key not in edge_index:
                    edge_index[key] = len(edges)
                    edges.append((a, b))
                    edge_cells.append([ci, -1])
                    ids[j], signs[j] = edge_index[key], 1
                else:
                    ei = edge_index[key]
                    if edge_cells[ei][1] != -1:
                        raise MeshError(f"edge {key} shared by more than two cells")
                    if edges[ei] != (b, a):
                        raise MeshError(f"edge {key} traversed twice in the same direction")
                    edge_cells[ei][1] = ci
                    ids[j], signs[j] = ei, -1
            self.cell_edge_ids.append(ids)
            self.cell_edge_signs.append(signs)
        self.edges = np.array(edges, dtype=int)
        self.edge_cells = np.array(edge_cells, dtype=int)
        tang = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        self.edge_lengths = np.hypot(tang[:, 0], tang[:, 1])
        if validate and self.edge_lengths.min() <= 0.0:
            raise MeshError("zero-length edge")
        self.edge_normals = np.column_stack([tang[:, 1], -tang[:, 0]]) / self.edge_lengths[:, None]
        self.edge_is_boundary = self.edge_cells[:, 1] == -1
        self.boundary_edges = np.nonzero(self.edge_is_boundary)[0]
        self.nedges = len(self.edges)

    def cell_vertices(self, ci):
        return self.vertices[self.cells[ci]]


@dataclass
class InteriorEdge:
    """Diagonal between two triangles of one cell's subtriangulation.

    The stored unit normal points out of triangle ``tri_a``; (va, vb) is the
    traversal order of tri_a, which parametrizes quadrature on the edge.
    """

    tri_a: int
    tri_b: int
    va: int
    vb: int
    normal: np.ndarray
    length: float


@dataclass
class SubTriangulation:
    """Triangulation of one polygonal cell introducing no new vertices."""

    tris: np.ndarray  # (ntri, 3) global vertex ids, CCW
    maps: list  # AffineMap per triangle
    areas: np.ndarray
    interior_edges: list  # InteriorEdge, deterministic order
    cell_edge_tri: list  # aligned with the cell's edge loop: (tri, local_edge)
    fan_vertex: int | None  # global id of the fan center, None if ear-clipped
    ntri: int = field(init=False)

    def __post_init__(self):
        self.ntri = len(self.tris)


def _kernel_fan(pts, tol2):
    """Return loop rotation making vertex p a valid fan center, or None.

    Candidate order is by global vertex index (handled by caller); p sees the
    polygon iff cross(b - a, p - a) >= tol2 for every non-incident edge (a, b),
    which equals twice the area of each fan triangle.
    """
    ne = len(pts)
    for p in range(ne):
        ok = True
        for j in range(ne):
            jn = (j + 1) % ne
            if j == p or jn == p:
                continue
            a, b = pts[j], pts[jn]
            if (b[0] - a[0]) * (pts[p][1] - a[1]) - (b[1] - a[1]) * (pts[p][0] - a[0]) < tol2:
                ok = False
                break
        if ok:
            yield p


def _ear_clip(loop, pts, tol2):
    """Deterministic ear clipping; returns list of local index triples."""
    idx = list(range(len(loop)))
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10000:
            raise MeshError("ear clipping failed to terminate")
        clipped = False
        for pos in range(len(idx)):
            ip, ic, jn = idx[pos - 1], idx[pos], idx[(pos + 1) % len(idx)]
            a, c, b = pts[ip], pts[ic], pts[jn]
            area2 = (c[0] - a[0]) * (b[1] - a[1]) - (c[1] - a[1]) * (b[0] - a[0])
            if area2 < tol2:
                continue
            # ear must not contain any other remaining vertex
            contains = False
            for other in idx:
                if other in (ip, ic, jn):
                    continue
                q = pts[other]
                w0 = (c[0] - a[0]) * (q[1] - a[1]) - (c[1] - a[1]) * (q[0] - a[0])
                w1 = (b[0] - c[0]) * (q[1] - c[1]) - (b[1] - c[1]) * (q[0] - c[0])
                w2 = (a[0] - b[0]) * (q[1] - b[1]) - (a[1] - b[1]) * (q[0] - b[0])
                if w0 > -tol2 and w1 > -tol2 and w2 > -tol2:
                    contains = True
                    break
            if not contains:
                tris.append((ip, ic, jn))
                del idx[pos]
                clipped = True
                break
        if not clipped:
            raise MeshError("no ear found; polygon may be degenerate")
    tris.append(tuple(idx))
    return tris


def subtriangulate(mesh, ci):
    """Triangulate cell ``ci`` without new vertices and build its adjacency.

    Prefers a fan from the kernel vertex of lowest global index; falls back to
    ear clipping for cells with an empty kernel.  Returns a
    :class:`SubTriangulation` whose first triangle serves as the reference
    piece for divergence-compatibility constraints.
    """
    cell = mesh.cells[ci]
    pts = mesh.vertices[cell]
    ne = len(cell)
    tol2 = KERNEL_REL_TOL * mesh.cell_diameters[ci] ** 2

    fan_vertex = None
    local_tris = None
    candidates = sorted(_kernel_fan(pts, tol2), key=lambda p: cell[p])
    if candidates:
        p = candidates[0]
        fan_vertex = int(cell[p])
        rot = [(p + i) % ne for i in range(ne)]
        local_tris = [(rot[0], rot[i], rot[i + 1]) for i in range(1, ne - 1)]
    else:
        local_tris = _ear_clip(cell, pts, tol2)

    tris = np.array([[cell[a], cell[b], cell[c]] for a, b, c in local_tris], dtype=int)
    maps = [AffineMap.from_vertices(*mesh.vertices[t]) for t in tris]
    areas = np.array([0.5 * m.det for m in maps])

    # polygon boundary edges by sorted vertex pair -> loop position
    bdry = {}
    for j in range(ne):
        a, b = int(cell[j]), int(cell[(j + 1) % ne])
        bdry[(a, b) if a < b else (b, a)] = j
    cell_edge_tri = [None] * ne
    interior = []
    first_seen = {}
    for t, tri in enumerate(tris):
        for le in range(3):
            va, vb = int(tri[(le + 1) % 3]), int(tri[(le + 2) % 3])
            key = (va, vb) if va < vb else (vb, va)
            if key in bdry:
                cell_edge_tri[bdry[key]] = (t, le)
            elif key in first_seen:
                ta, a0, b0 = first_seen.pop(key)
                pa, pb = mesh.vertices[a0], mesh.vertices[b0]
                tangent = pb - pa
                length = float(np.hypot(*tangent))
                normal = np.array([tangent[1], -tangent[0]]) / length
                interior.append(InteriorEdge(ta, t, a0, b0, normal, length))
            else:
                first_seen[key] = (t, va, vb)
    if first_seen or any(v is None for v in cell_edge_tri):
        raise MeshError(f"inconsistent subtriangulation of cell {ci}")
    return SubTriangulation(tris, maps, areas, interior, cell_edge_tri, fan_vertex)


# ---------------------------------------------------------------------------
# generators


def generate_rect_mesh(n):
    """Uniform n x n quadrilateral mesh of the unit square (h = 1/n)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    vid = lambda i, j: j * (n + 1) + i
    cells = [
        [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]
        for j in range(n)
        for i in range(n)
    ]
    return PolyMesh(vertices, cells)


def generate_deformed_rect_mesh(n, amplitude=0.2, seed=0):
    """n x n quad mesh with interior vertices jittered by up to
    ``amplitude * h`` per coordinate (seeded, reproducible).

    If a draw produces an invalid cell the whole mesh is retried with halved
    amplitude, up to 10 times.
    """
    rng = np.random.default_rng(seed)
    h = 1.0 / n
    amp = amplitude
    for _attempt in range(10):
        base = generate_rect_mesh(n)
        verts = base.vertices.copy()
        interior = np.nonzero(
            (verts[:, 0] > 1e-12) & (verts[:, 0] < 1 - 1e-12) & (verts[:, 1] > 1e-12) & (verts[:, 1] < 1 - 1e-12)
        )[0]
        verts[interior] += rng.uniform(-amp * h, amp * h, size=(len(interior), 2))
        try:
            return PolyMesh(verts, base.cells)
        except MeshError:
            amp *= 0.5
    raise MeshError(f"could not build valid deformed mesh for n={n}, amplitude={amplitude}")


def _hex_tiling(span_x, span_y, ncols, clip_poly):
    """Regular flat-top hexagon tiling clipped to a convex or L-shaped domain."""
    x0, x1 = span_x
    y0, y1 = span_y
    width = x1 - x0
    r = width / (1.5 * ncols)
    dy = np.sqrt(3.0) * r
    ang = np.arange(6) * np.pi / 3.0
    hx, hy = r * np.cos(ang), r * np.sin(ang)
    polys = []
    ni = int(np.ceil(width / (1.5 * r))) + 2
    nj = int(np.ceil((y1 - y0) / dy)) + 2
    for i in range(-1, ni):
        cx = x0 + 1.5 * r * i
        off = 0.5 * dy if i % 2 else 0.0
        for j in range(-1, nj):
            cy = y0 + dy * j + off
            hexagon = Polygon(np.column_stack([cx + hx, cy + hy]))
            clipped = hexagon.intersection(clip_poly)
            if clipped.is_empty:
                continue
            pieces = clipped.geoms if clipped.geom_type in ("MultiPolygon", "GeometryCollection") else [clipped]
            for piece in pieces:
                if piece.geom_type == "Polygon" and piece.area > MIN_CLIP_AREA:
                    polys.append(orient(piece, 1.0))
    # snap, dedupe vertices, build index arrays
    vid = {}
    vertices = []
    cells = []
    for poly in polys:
        coords = np.asarray(poly.exterior.coords)[:-1]
        ids = []
        for x, y in coords:
            key = (round(x / SNAP), round(y / SNAP))
            if key not in vid:
                vid[key] = len(vertices)
                vertices.append((key[0] * SNAP, key[1] * SNAP))
            if not ids or vid[key] != ids[-1]:
                ids.append(vid[key])
        if len(ids) > 1 and ids[0] == ids[-1]:
            ids.pop()
        if len(ids) >= 3:
            cells.append(ids)
    return PolyMesh(np.array(vertices), cells)


def generate_hex_mesh(level):
    """Hexagon-dominated mesh of the unit square; cell count roughly
    quadruples per level (level 1: 5 hexagon columns)."""
    if level < 1:
        raise ValueError("level must be >= 1")
    ncols = 5 * 2 ** (level - 1)
    return _hex_tiling((0.0, 1.0), (0.0, 1.0), ncols, box(0.0, 0.0, 1.0, 1.0))


LSHAPE_POLYGON = [(-1.0, -1.0), (0.0, -1.0), (0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (-1.0, 1.0)]


def generate_lshape_mesh(level):
    """Hexagon-dominated mesh of the L-shaped domain [-1,1]^2 minus the
    closed quadrant [0,1] x [-1,0]; the re-entrant corner at the origin is a
    clip vertex and therefore always a mesh vertex."""
    if level < 1:
        raise ValueError("level must be >= 1")
    ncols = 5 * 2 ** (level - 1)
    return _hex_tiling((-1.0, 1.0), (-1.0, 1.0), ncols, Polygon(LSHAPE_POLYGON))


# ---------------------------------------------------------------------------
# text I/O: "nv nc" header, nv vertex lines "x y", nc cell lines "m v1 .. vm"


def write_mesh(mesh, path):
    """Write a mesh as plain text (full double precision)."""
    with open(path, "w") as f:
        f.write(f"{mesh.nvertices} {mesh.ncells}\n")
        for x, y in mesh.vertices:
            f.write(f"{float(x)!r} {float(y)!r}\n")
        for cell in mesh.cells:
            f.write(" ".join([str(len(cell))] + [str(int(v)) for v in cell]) + "\n")


def read_mesh(path):
    """Read a mesh written by :func:`write_mesh`."""
    with open(path) as f:
        tokens = f.read().split("\n")
    header = tokens[0].split()
    if len(header) != 2:
        raise MeshError("mesh file must start with an 'nv nc' header")
    nv, nc = int(header[0]), int(header[1])
    vertices = np.array([[float(t) for t in tokens[1 + i].split()] for i in range(nv)])
    cells = []
    for i in range(nc):
        parts = [int(t) for t in tokens[1 + nv + i].split()]
        if parts[0] != len(parts) - 1:
            raise MeshError(f"cell line {i} has inconsistent vertex count")
        cells.append(parts[1:])
    return PolyMesh(vertices, cells)
