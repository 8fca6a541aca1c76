"""Triangular meshes, needles and geometric reference quantities.

The mesher is a small distmesh-style generator: boundary (and optional
interface) samples are held fixed, interior points start on a hexagonal
lattice and are relaxed with repulsive bar forces, then Delaunay
triangulated.  For the convex domains used here the result is boundary
conforming, and interface segments come out as mesh edges because relaxed
points keep clear of each segment's diametral circle (checked, not assumed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from .shapes import Disk, Polygon, Shape, ShapeError

GAMMA_ARC = 1
OTHER = 0


class MeshError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh2D:
    """Triangulated domain with marked boundary arcs.

    ``boundary_markers[k]`` is :data:`GAMMA_ARC` or :data:`OTHER` for
    ``boundary_edges[k]``.  ``interface_edges`` lists the edges of a known
    inclusion boundary when the mesh was built conforming to it.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_markers: np.ndarray
    interface_edges: np.ndarray | None = None
    h: float = float("nan")
    domain: Shape | None = field(default=None, repr=False)
    interface: Shape | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Gradients of the three P1 basis functions on every cell, shape (M, 3, 2)."""
        p = self.vertices[self.triangles]
        a2 = 2 * self.signed_areas
        g = np.empty((self.n_cells, 3, 2))
        for k in range(3):
            i, j = (k + 1) % 3, (k + 2) % 3
            g[:, k, 0] = (p[:, i, 1] - p[:, j, 1]) / a2
            g[:, k, 1] = (p[:, j, 0] - p[:, i, 0]) / a2
        return g

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        """Outer boundary nodes in loop order (counter-clockwise)."""
        return _loop_order(self.boundary_edges, self.vertices)

    @cached_property
    def boundary_position(self) -> dict:
        return {int(n): k for k, n in enumerate(self.boundary_nodes)}

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def gamma_nodes(self) -> np.ndarray:
        """Boundary nodes whose incident boundary edges are all on the Γ arc."""
        bad = np.zeros(self.n_nodes, bool)
        good = np.zeros(self.n_nodes, bool)
        for (a, b), m in zip(self.boundary_edges, self.boundary_markers):
            if m == GAMMA_ARC:
                good[[a, b]] = True
            else:
                bad[[a, b]] = True
        return np.array([n for n in self.boundary_nodes if good[n] and not bad[n]], dtype=int)

    @cached_property
    def interface_nodes(self) -> np.ndarray:
        if self.interface_edges is None or len(self.interface_edges) == 0:
            return np.empty(0, dtype=int)
        return _loop_order(self.interface_edges, self.vertices)

    @cached_property
    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    def min_angle_deg(self) -> float:
        p = self.vertices[self.triangles]
        angs = []
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            c = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angs.append(np.degrees(np.arccos(np.clip(c, -1, 1))))
        return float(np.min(angs))

    def cells_inside(self, shape: Shape | None) -> np.ndarray:
        """Boolean mask of cells whose centroid lies in ``shape``."""
        if shape is None:
            return np.zeros(self.n_cells, bool)
        return shape.contains(self.centroids)

    def locate(self, point) -> int:
        """Index of the cell containing ``point`` (-1 if outside the mesh)."""
        x = np.asarray(point, float)
        cand = np.argsort(np.linalg.norm(self.centroids - x, axis=1))[:32]
        for c in cand:
            lam = self.barycentric(c, x)
            if lam.min() >= -1e-12:
                return int(c)
        return -1

    def barycentric(self, cell: int, point) -> np.ndarray:
        p = self.vertices[self.triangles[cell]]
        T = np.column_stack([p[1] - p[0], p[2] - p[0]])
        l12 = np.linalg.solve(T, np.asarray(point, float) - p[0])
        return np.array([1 - l12.sum(), l12[0], l12[1]])

    def check_invariants(self) -> None:
        h = self.h if np.isfinite(self.h) else float(np.median(self.edge_lengths()))
        if np.any(self.signed_areas <= 1e-12 * h * h):
            raise MeshError("mesh has non-positively oriented or degenerate triangles")
        if self.triangles.min() < 0 or self.triangles.max() >= self.n_nodes:
            raise MeshError("triangle index out of range")
        _loop_order(self.boundary_edges, self.vertices)
        g = np.flatnonzero(self.boundary_markers == GAMMA_ARC)
        if 0 < len(g) < len(self.boundary_edges):
            # Γ edges must form one contiguous run along the loop
            order = self.boundary_nodes
            pos = {int(n): k for k, n in enumerate(order)}
            nb = len(order)
            flags = np.zeros(nb, bool)
            for (a, b), m in zip(self.boundary_edges, self.boundary_markers):
                ia, ib = pos[int(a)], pos[int(b)]
                k = ia if (ia + 1) % nb == ib else ib
                flags[k] = m == GAMMA_ARC
            runs = np.sum(flags & ~np.roll(flags, 1))
            if runs != 1:
                raise MeshError(f"gamma arc is not connected ({runs} separate runs)")


def _loop_order(edges: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Order a single closed loop of edges counter-clockwise."""
    if len(edges) == 0:
        raise MeshError("no boundary edges")
    nbrs: dict[int, list[int]] = {}
    for a, b in edges:
        nbrs.setdefault(int(a), []).append(int(b))
        nbrs.setdefault(int(b), []).append(int(a))
    if any(len(v) != 2 for v in nbrs.values()):
        raise MeshError("boundary edges do not form simple closed loops")
    start = min(nbrs)
    order = [start]
    prev, cur = start, nbrs[start][0]
    while cur != start:
        order.append(cur)
        a, b = nbrs[cur]
        prev, cur = cur, (b if a == prev else a)
        if len(order) > len(edges):
            raise MeshError("boundary loop walk did not close")
    if len(order) != len(edges):
        raise MeshError("boundary consists of more than one loop")
    order = np.asarray(order)
    p = vertices[order]
    area2 = np.sum(p[:, 0] * np.roll(p[:, 1], -1) - np.roll(p[:, 0], -1) * p[:, 1])
    if area2 < 0:
        order = np.concatenate([order[:1], order[1:][::-1]])
    return order


def _in_arc(angles: np.ndarray, arc: tuple[float, float]) -> np.ndarray:
    start, end = np.radians(arc[0]), np.radians(arc[1])
    span = (end - start) % (2 * np.pi)
    if np.isclose(span, 0.0) and arc[1] != arc[0]:
        return np.ones_like(angles, bool)
    return ((angles - start) % (2 * np.pi)) <= span + 1e-12


def build_domain_mesh(
    domain: Shape,
    h: float,
    gamma_arc: tuple[float, float] | None = None,
    interface: Shape | None = None,
    max_iter: int = 300,
) -> Mesh2D:
    """Mesh a disk or polygon with target edge length ``h``.

    Parameters
    ----------
    domain : Disk | Polygon
        Outer domain, a simple closed curve.
    h : float
        Target edge length.
    gamma_arc : (start_deg, end_deg), optional
        Counter-clockwise angle range (about the domain centroid) marked as
        the accessible arc Γ.  ``None`` marks the whole boundary.
    interface : Disk | Polygon, optional
        Known inclusion boundary to be resolved by mesh edges.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    if not isinstance(domain, (Disk, Polygon)):
        raise ShapeError(f"unsupported domain {domain!r}")
    if interface is not None:
        probe = interface.boundary_samples(h / 4)
        if np.max(domain.signed_distance(probe)) > -h:
            raise ShapeError("interface must lie inside the domain with a margin of at least h")

    outer = domain.boundary_samples(h)
    fixed = [outer]
    if interface is not None:
        inner = interface.boundary_samples(h)
        fixed.append(inner)
    fixed = np.vstack(fixed)
    nf = len(fixed)

    lo, hi = domain.bbox()
    dy = h * np.sqrt(3) / 2
    ys = np.arange(lo[1] + dy / 2, hi[1], dy)
    rows = []
    for k, y in enumerate(ys):
        xs = np.arange(lo[0] + (h / 2 if k % 2 else 0.0), hi[0] + h, h)
        rows.append(np.column_stack([xs, np.full_like(xs, y)]))
    lat = np.vstack(rows)
    keep = domain.signed_distance(lat) < -0.6 * h
    if interface is not None:
        keep &= np.abs(interface.signed_distance(lat)) > 0.6 * h
    p = np.vstack([fixed, lat[keep]])

    clamp = 0.5 * h
    p_last = np.full_like(p, np.inf)
    tri = None
    for _ in range(max_iter):
        if np.max(np.linalg.norm(p - p_last, axis=1)) > 0.1 * h:
            p_last = p.copy()
            tri = _delaunay_inside(p, domain)
            e = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
            bars = np.unique(np.sort(e, axis=1), axis=0)
        vec = p[bars[:, 0]] - p[bars[:, 1]]
        L = np.linalg.norm(vec, axis=1)
        L0 = 1.2 * np.sqrt(np.mean(L**2))
        F = np.maximum(L0 - L, 0.0)
        fv = (F / L)[:, None] * vec
        ftot = np.zeros_like(p)
        np.add.at(ftot, bars[:, 0], fv)
        np.add.at(ftot, bars[:, 1], -fv)
        ftot[:nf] = 0.0
        p = p + 0.2 * ftot
        free = np.arange(nf, len(p))
        d = domain.signed_distance(p[free])
        out = d > -clamp
        if np.any(out):
            q = p[free[out]]
            p[free[out]] = q - (d[out] + clamp)[:, None] * domain.outward_normal(q)
        if interface is not None:
            di = interface.signed_distance(p[free])
            near = np.abs(di) < clamp
            if np.any(near):
                q = p[free[near]]
                s = np.where(di[near] >= 0, 1.0, -1.0)
                p[free[near]] = q + (s * clamp - di[near])[:, None] * interface.outward_normal(q)
        if np.max(0.2 * np.linalg.norm(ftot, axis=1)) < 1e-3 * h:
            break

    tri = _delaunay_inside(p, domain)
    # drop unused points (can only happen for free points pushed into slivers)
    used = np.zeros(len(p), bool)
    used[tri.ravel()] = True
    if not np.all(used[:nf]):
        raise MeshError("a fixed boundary or interface sample is not part of the triangulation")
    remap = -np.ones(len(p), int)
    remap[used] = np.arange(used.sum())
    p = p[used]
    tri = remap[tri]
    tri = _orient(p, tri)

    t = tri
    e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    es = np.sort(e, axis=1)
    uniq, counts = np.unique(es, axis=0, return_counts=True)
    bedges = uniq[counts == 1]
    mid = 0.5 * (p[bedges[:, 0]] + p[bedges[:, 1]])
    if gamma_arc is None:
        markers = np.full(len(bedges), GAMMA_ARC)
    else:
        ang = domain.boundary_angle(mid)
        markers = np.where(_in_arc(ang, gamma_arc), GAMMA_ARC, OTHER)

    iedges = None
    if interface is not None:
        n_outer = len(outer)
        ids = np.arange(n_outer, nf)
        ids = remap[ids]
        cand = np.sort(np.column_stack([ids, np.roll(ids, -1)]), axis=1)
        have = {tuple(x) for x in uniq}
        missing = [tuple(c) for c in cand if tuple(c) not in have]
        if missing:
            raise MeshError(f"{len(missing)} interface segments are not mesh edges; try a smaller h")
        iedges = cand

    mesh = Mesh2D(
        vertices=p,
        triangles=tri,
        boundary_edges=bedges,
        boundary_markers=markers,
        interface_edges=iedges,
        h=float(h),
        domain=domain,
        interface=interface,
    )
    mesh.check_invariants()
    return mesh


def _delaunay_inside(p: np.ndarray, domain: Shape) -> np.ndarray:
    tri = Delaunay(p).simplices
    c = p[tri].mean(axis=1)
    keep = domain.signed_distance(c) < 0
    tri = tri[keep]
    # remove slivers made only of (near co-circular) boundary samples
    q = p[tri]
    e1, e2 = q[:, 1] - q[:, 0], q[:, 2] - q[:, 0]
    a = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    lmax = np.max(np.stack([np.linalg.norm(q[:, i] - q[:, (i + 1) % 3], axis=1) for i in range(3)]), axis=0)
    return tri[a > 1e-3 * lmax**2]


def _orient(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    q = p[tri]
    e1, e2 = q[:, 1] - q[:, 0], q[:, 2] - q[:, 0]
    s = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    tri = tri.copy()
    neg = s < 0
    tri[neg] = tri[neg][:, [0, 2, 1]]
    return tri


# ----------------------------------------------------------------------------
# mesh text format


def write_mesh(mesh: Mesh2D, path) -> None:
    """Write the plain-text node/element format.

    Layout: ``nodes N / triangles M`` header, N coordinate rows, M index
    rows, then ``boundary_edges B`` with ``i j marker`` rows and optionally
    ``interface_edges E`` with ``i j`` rows.
    """
    lines = [f"nodes {mesh.n_nodes} / triangles {mesh.n_cells}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"boundary_edges {len(mesh.boundary_edges)}")
    lines += [f"{a} {b} {m}" for (a, b), m in zip(mesh.boundary_edges, mesh.boundary_markers)]
    if mesh.interface_edges is not None:
        lines.append(f"interface_edges {len(mesh.interface_edges)}")
        lines += [f"{a} {b}" for a, b in mesh.interface_edges]
    lines.append(f"h {mesh.h:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh2D:
    rows = Path(path).read_text().splitlines()
    head = rows[0].replace("/", " ").split()
    if head[0] != "nodes" or head[2] != "triangles":
        raise MeshError(f"bad mesh header: {rows[0]!r}")
    n, m = int(head[1]), int(head[3])
    verts = np.array([list(map(float, r.split())) for r in rows[1 : 1 + n]])
    tris = np.array([list(map(int, r.split())) for r in rows[1 + n : 1 + n + m]], dtype=int)
    k = 1 + n + m
    bedges = markers = iedges = None
    h = float("nan")
    while k < len(rows):
        parts = rows[k].split()
        if not parts:
            k += 1
            continue
        if parts[0] == "boundary_edges":
            cnt = int(parts[1])
            arr = np.array([list(map(int, r.split())) for r in rows[k + 1 : k + 1 + cnt]], dtype=int)
            bedges, markers = arr[:, :2], arr[:, 2]
            k += 1 + cnt
        elif parts[0] == "interface_edges":
            cnt = int(parts[1])
            iedges = np.array([list(map(int, r.split())) for r in rows[k + 1 : k + 1 + cnt]], dtype=int)
            k += 1 + cnt
        elif parts[0] == "h":
            h = float(parts[1])
            k += 1
        else:
            raise MeshError(f"unexpected line in mesh file: {rows[k]!r}")
    if bedges is None:
        e = np.sort(np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
        uniq, cnt = np.unique(e, axis=0, return_counts=True)
        bedges = uniq[cnt == 1]
        markers = np.full(len(bedges), OTHER)
    mesh = Mesh2D(verts, tris, bedges, markers, iedges, h)
    mesh.check_invariants()
    return mesh


# ----------------------------------------------------------------------------
# needles


@dataclass(frozen=True, eq=False)
class Needle:
    """Polyline needle parameterised by normalised arclength t in [0, 1]."""

    points: np.ndarray
    name: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("needle needs at least two 2D points")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg <= 0):
            raise ValueError("needle has repeated consecutive points")
        object.__setattr__(self, "points", pts)

    @cached_property
    def cumulative(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self.cumulative[-1])

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        s = np.clip(t, 0, 1) * self.length
        cum = self.cumulative
        k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(cum) - 2)
        frac = (s - cum[k]) / (cum[k + 1] - cum[k])
        a, b = self.points[k], self.points[k + 1]
        return a + frac[..., None] * (b - a)

    def tail(self, t: float) -> np.ndarray:
        """Polyline vertices of {c(t'): 0 <= t' <= t}."""
        s = float(np.clip(t, 0, 1)) * self.length
        inner = self.points[1:-1][self.cumulative[1:-1] < s]
        return np.vstack([self.points[:1], inner, self(t)[None]])

    def check(self, domain: Shape, tol: float = 1e-9) -> None:
        ends = domain.signed_distance(self.points[[0, -1]])
        if np.any(np.abs(ends) > tol):
            raise ValueError("needle endpoints must lie on the domain boundary")
        mid = self(np.linspace(0, 1, 201)[1:-1])
        if np.any(domain.signed_distance(mid) >= 0):
            raise ValueError("needle leaves the open domain between its endpoints")


def _boundary_exit(domain: Shape, start: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Point where the ray start + s·direction (s > 0) leaves the domain."""
    direction = direction / np.linalg.norm(direction)
    lo, hi = domain.bbox()
    far = start + direction * 4 * float(np.linalg.norm(hi - lo))
    s = domain.segment_crossings(start, far)
    s = s[s * np.linalg.norm(far - start) > 1e-9]
    if len(s) == 0:
        raise ValueError("ray does not leave the domain")
    return start + s.min() * (far - start)


def needle_family(domain: Shape, spec: dict) -> list[Needle]:
    """Generate a list of needles from a declarative description.

    Supported ``spec['kind']`` values:

    ``chord``
        straight needle from ``start`` to ``end`` (both on the boundary).
    ``fan``
        ``count`` chords leaving the boundary point at ``anchor_angle``
        (degrees) with directions spread over ``spread`` degrees around the
        inward normal.
    ``arc_fan``
        one chord per anchor, anchors spread over the boundary arc
        ``anchor_arc`` = (start_deg, end_deg); each chord heads towards
        ``aim`` (default: domain centroid), optionally bending at the
        ``waypoints`` list before continuing straight to the boundary.
    ``polyline``
        explicit ``points`` list; the first and last points are snapped to
        the boundary.
    ``union``
        concatenation of the ``parts`` list of sub-specs.
    """
    kind = spec.get("kind", "fan")
    c = domain.centroid
    out: list[Needle] = []
    if kind == "union":
        for part in spec["parts"]:
            out.extend(needle_family(domain, part))
    elif kind == "chord":
        out.append(Needle(np.array([spec["start"], spec["end"]], float), spec.get("name", "chord")))
    elif kind == "polyline":
        pts = np.array(spec["points"], float)
        pts[0] = domain.project(pts[:1])[0] if hasattr(domain, "project") else pts[0]
        pts[-1] = domain.project(pts[-1:])[0] if hasattr(domain, "project") else pts[-1]
        out.append(Needle(pts, spec.get("name", "polyline")))
    elif kind == "fan":
        count = int(spec["count"])
        if count < 1:
            raise ValueError("count must be >= 1")
        ang = np.radians(float(spec["anchor_angle"]))
        anchor = _boundary_exit(domain, c, np.array([np.cos(ang), np.sin(ang)]))
        spread = np.radians(float(spec.get("spread", 150.0)))
        inward = c - anchor
        base = np.arctan2(inward[1], inward[0])
        dirs = base + (np.linspace(-0.5, 0.5, count) * spread if count > 1 else np.array([0.0]))
        for k, th in enumerate(dirs):
            end = _boundary_exit(domain, anchor + 1e-9 * inward, np.array([np.cos(th), np.sin(th)]))
            out.append(Needle(np.array([anchor, end]), f"fan{k}"))
    elif kind == "arc_fan":
        count = int(spec["count"])
        if count < 1:
            raise ValueError("count must be >= 1")
        a0, a1 = map(float, spec["anchor_arc"])
        if (a1 - a0) % 360 == 0 and a1 == a0:
            raise ValueError("anchor arc is empty")
        span = (a1 - a0) % 360 or 360.0
        angs = a0 + span * (np.arange(count) + 0.5) / count
        aim = np.asarray(spec.get("aim", c), float)
        wps = [np.asarray(w, float) for w in spec.get("waypoints", [])]
        for k, a in enumerate(np.radians(angs)):
            anchor = _boundary_exit(domain, c, np.array([np.cos(a), np.sin(a)]))
            pts = [anchor, *wps]
            d = (aim - pts[-1]) if np.linalg.norm(aim - pts[-1]) > 1e-12 else (pts[-1] - pts[-2])
            end = _boundary_exit(domain, pts[-1] + 1e-9 * d / np.linalg.norm(d), d)
            out.append(Needle(np.array(pts + [end]), f"arc{k}"))
    else:
        raise ValueError(f"unknown needle family kind {kind!r}")
    if not out:
        raise ValueError("anchor arc is empty")
    for n in out:
        n.check(domain, tol=1e-7)
    for i in range(len(out)):
        for j in range(i):
            a, b = out[i].points, out[j].points
            if a.shape == b.shape and np.allclose(a, b):
                raise ValueError(f"needles {j} and {i} coincide")
    return out


def impact_parameter_oracle(needle: Needle, inclusion: Shape | None) -> float:
    """Arclength-normalised parameter of the first contact with the closure of D (1 if none)."""
    if inclusion is None:
        return 1.0
    pts = needle.points
    cum = needle.cumulative
    for k in range(len(pts) - 1):
        p, q = pts[k], pts[k + 1]
        seg_len = cum[k + 1] - cum[k]
        if inclusion.contains(p[None])[0]:
            return float(cum[k] / needle.length)
        s = inclusion.segment_crossings(p, q)
        if len(s):
            return float((cum[k] + s.min() * seg_len) / needle.length)
    return 1.0


def _polyline_distance(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    if len(poly) == 1:
        return np.linalg.norm(points - poly[0], axis=1)
    a, b = poly[:-1], poly[1:]
    keep = np.linalg.norm(b - a, axis=1) > 0
    if not np.any(keep):
        return np.linalg.norm(points - poly[0], axis=1)
    from .shapes import _segment_distance

    return _segment_distance(points, a[keep], b[keep]).min(axis=1)


def exclusion_region(
    mesh: Mesh2D,
    needle: Needle,
    t: float,
    delta: float,
    widen: float = 0.0,
    boundary_margin: float = 0.0,
    max_radius: float = np.inf,
) -> np.ndarray:
    """Cells kept for approximation: centroid farther than the tube radius from the tail.

    The tube radius is ``delta`` at the tip c(t) and grows by ``widen`` per
    unit arclength back along the tail, capped at ``max_radius``
    (``widen=0`` is a plain tube).  With
    ``boundary_margin > 0`` cells whose centroid is closer than that to ∂Ω
    are dropped as well, keeping K compactly inside the domain.
    Returns a boolean cell mask K.
    """
    if not (0 < t < 1):
        raise ValueError("t must lie in (0, 1)")
    if not delta > 0:
        raise ValueError("delta must be positive")
    tail = needle.tail(t)
    if widen == 0.0:
        dist = _polyline_distance(mesh.centroids, tail)
        keep = dist > delta
    else:
        from .shapes import _segment_distance

        s_tip = t * needle.length
        seg_len = np.linalg.norm(np.diff(tail, axis=0), axis=1)
        s_nodes = np.concatenate([[0.0], np.cumsum(seg_len)])
        keep = np.ones(mesh.n_cells, bool)
        cen = mesh.centroids
        for k in range(len(tail) - 1):
            a, b = tail[k], tail[k + 1]
            if seg_len[k] == 0:
                continue
            ab = b - a
            s = np.clip((cen - a) @ ab / (ab @ ab), 0, 1)
            near = a + s[:, None] * ab
            d = np.linalg.norm(cen - near, axis=1)
            back = s_tip - (s_nodes[k] + s * seg_len[k])
            keep &= d > np.minimum(delta + widen * back, max(max_radius, delta))
    if boundary_margin > 0:
        if mesh.domain is None:
            raise ValueError("a boundary margin needs the mesh domain")
        keep &= mesh.domain.signed_distance(mesh.centroids) < -boundary_margin
    if not np.any(keep):
        bound = float(_polyline_distance(mesh.centroids, tail).max())
        raise ValueError(f"exclusion region is empty; delta must be below {bound:.4g}")
    return keep


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, float).reshape(-1, 2)
    b = np.asarray(b, float).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        return float("inf")
    d = np.linalg.norm(a[:, None] - b[None], axis=-1)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))
