"""Planar shapes shared by the domain and inclusion descriptions.

Both shapes expose a vectorised signed distance (negative inside), a
containment test, boundary sampling and exact segment/boundary
intersection parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised for degenerate or self-intersecting shape descriptions."""


def _as_points(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p.reshape(-1, 2) if p.ndim == 1 else p


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point to the segments ``a[k]b[k]``; shape (n_points, n_seg)."""
    ab = b - a
    ll = np.einsum("ij,ij->i", ab, ab)
    ll = np.where(ll > 0, ll, 1.0)
    ap = points[:, None, :] - a[None, :, :]
    s = np.clip(np.einsum("pkj,kj->pk", ap, ab) / ll, 0.0, 1.0)
    nearest = a[None] + s[..., None] * ab[None]
    return np.linalg.norm(points[:, None, :] - nearest, axis=-1)


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ShapeError(f"disk radius must be positive, got {self.radius}")

    @property
    def kind(self) -> str:
        return "disk"

    @property
    def area(self) -> float:
        return float(np.pi * self.radius**2)

    @property
    def perimeter(self) -> float:
        return float(2 * np.pi * self.radius)

    @property
    def centroid(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.centroid
        return c - self.radius, c + self.radius

    def signed_distance(self, points) -> np.ndarray:
        p = _as_points(points)
        return np.linalg.norm(p - self.centroid, axis=1) - self.radius

    def contains(self, points) -> np.ndarray:
        return self.signed_distance(points) <= 0.0

    def outward_normal(self, points) -> np.ndarray:
        d = _as_points(points) - self.centroid
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def project(self, points) -> np.ndarray:
        return self.centroid + self.radius * self.outward_normal(points)

    def boundary_samples(self, spacing: float) -> np.ndarray:
        n = max(8, int(np.ceil(self.perimeter / spacing)))
        th = 2 * np.pi * np.arange(n) / n
        return self.centroid + self.radius * np.column_stack([np.cos(th), np.sin(th)])

    def boundary_angle(self, points) -> np.ndarray:
        d = _as_points(points) - self.centroid
        return np.arctan2(d[:, 1], d[:, 0])

    def segment_crossings(self, p, q) -> np.ndarray:
        """Parameters s in [0, 1] where p + s (q - p) meets the circle."""
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        d = q - p
        f = p - self.centroid
        a = d @ d
        if a == 0:
            return np.empty(0)
        b = 2 * f @ d
        c = f @ f - self.radius**2
        disc = b * b - 4 * a * c
        # tangency counts as contact with the closed disk
        tol = 1e-12 * max(b * b, 4 * a * self.radius**2)
        if disc < -tol:
            return np.empty(0)
        r = np.sqrt(disc) if disc > tol else 0.0
        s = np.array([(-b - r) / (2 * a), (-b + r) / (2 * a)])
        return np.unique(s[(s >= 0) & (s <= 1)])


@dataclass(frozen=True)
class Polygon:
    """Simple polygon, vertices listed counter-clockwise (orientation is normalised)."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ShapeError("polygon needs at least three 2D vertices")
        if np.any(np.linalg.norm(np.roll(v, -1, 0) - v, axis=1) == 0):
            raise ShapeError("polygon has repeated consecutive vertices")
        area2 = np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if abs(area2) < 1e-14:
            raise ShapeError("polygon has zero area")
        if area2 < 0:
            object.__setattr__(self, "vertices", tuple(map(tuple, v[::-1])))
        bad = _self_intersection(np.asarray(self.vertices, float))
        if bad is not None:
            raise ShapeError(f"polygon is self-intersecting: edges {bad[0]} and {bad[1]} cross")

    @property
    def kind(self) -> str:
        return "polygon"

    @property
    def _v(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    @property
    def area(self) -> float:
        v = self._v
        return float(0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]))

    @property
    def perimeter(self) -> float:
        v = self._v
        return float(np.linalg.norm(np.roll(v, -1, 0) - v, axis=1).sum())

    @property
    def centroid(self) -> np.ndarray:
        v = self._v
        w = np.roll(v, -1, 0)
        cr = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        a = cr.sum() / 2
        return np.array([((v[:, 0] + w[:, 0]) * cr).sum(), ((v[:, 1] + w[:, 1]) * cr).sum()]) / (6 * a)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        v = self._v
        return v.min(axis=0), v.max(axis=0)

    def contains(self, points) -> np.ndarray:
        p = _as_points(points)
        v = self._v
        w = np.roll(v, -1, 0)
        x, y = p[:, 0:1], p[:, 1:2]
        cond = (v[None, :, 1] > y) != (w[None, :, 1] > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = v[None, :, 0] + (y - v[None, :, 1]) * (w[None, :, 0] - v[None, :, 0]) / (
                w[None, :, 1] - v[None, :, 1]
            )
        inside = (np.sum(cond & (x < xint), axis=1) % 2) == 1
        on_edge = _segment_distance(p, v, w).min(axis=1) <= 1e-14
        return inside | on_edge

    def signed_distance(self, points) -> np.ndarray:
        p = _as_points(points)
        v = self._v
        d = _segment_distance(p, v, np.roll(v, -1, 0)).min(axis=1)
        return np.where(self.contains(p), -d, d)

    def outward_normal(self, points) -> np.ndarray:
        p = _as_points(points)
        q = self.project(p)
        d = p - q
        n = np.linalg.norm(d, axis=1, keepdims=True)
        # points exactly on an edge: use the edge normal
        v = self._v
        w = np.roll(v, -1, 0)
        k = _segment_distance(p, v, w).argmin(axis=1)
        e = w[k] - v[k]
        en = np.column_stack([e[:, 1], -e[:, 0]]) / np.linalg.norm(e, axis=1, keepdims=True)
        sign = np.where(self.contains(p), -1.0, 1.0)[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(n > 1e-14, sign * d / n, en)
        return out

    def project(self, points) -> np.ndarray:
        p = _as_points(points)
        v = self._v
        w = np.roll(v, -1, 0)
        ab = w - v
        ll = np.einsum("ij,ij->i", ab, ab)
        s = np.clip(np.einsum("pkj,kj->pk", p[:, None] - v[None], ab) / ll, 0, 1)
        near = v[None] + s[..., None] * ab[None]
        k = np.linalg.norm(p[:, None] - near, axis=-1).argmin(axis=1)
        return near[np.arange(len(p)), k]

    def boundary_samples(self, spacing: float) -> np.ndarray:
        v = self._v
        pts = []
        for a, b in zip(v, np.roll(v, -1, 0)):
            n = max(1, int(np.ceil(np.linalg.norm(b - a) / spacing)))
            s = np.arange(n) / n
            pts.append(a + s[:, None] * (b - a))
        return np.vstack(pts)

    def corner_mask(self, samples: np.ndarray) -> np.ndarray:
        v = self._v
        return np.min(np.linalg.norm(samples[:, None] - v[None], axis=-1), axis=1) < 1e-12

    def boundary_angle(self, points) -> np.ndarray:
        d = _as_points(points) - self.centroid
        return np.arctan2(d[:, 1], d[:, 0])

    def segment_crossings(self, p, q) -> np.ndarray:
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        v = self._v
        w = np.roll(v, -1, 0)
        r = q - p
        out = []
        for a, b in zip(v, w):
            e = b - a
            den = r[0] * e[1] - r[1] * e[0]
            ap = a - p
            if abs(den) < 1e-15:
                # collinear overlap: report the entry point of the overlap
                if abs(ap[0] * r[1] - ap[1] * r[0]) < 1e-15 and r @ r > 0:
                    for c in (a, b):
                        s = (c - p) @ r / (r @ r)
                        if 0 <= s <= 1:
                            out.append(s)
                continue
            s = (ap[0] * e[1] - ap[1] * e[0]) / den
            u = (ap[0] * r[1] - ap[1] * r[0]) / den
            if -1e-14 <= s <= 1 + 1e-14 and -1e-14 <= u <= 1 + 1e-14:
                out.append(min(max(s, 0.0), 1.0))
        return np.unique(np.asarray(out, float))


def _self_intersection(v: np.ndarray):
    n = len(v)
    w = np.roll(v, -1, 0)

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            a, b, c, d = v[i], w[i], v[j], w[j]
            o1, o2 = orient(a, b, c), orient(a, b, d)
            o3, o4 = orient(c, d, a), orient(c, d, b)
            if o1 * o2 < 0 and o3 * o4 < 0:
                return i, j
            if o1 == 0 and o2 == 0 and o3 == 0 and o4 == 0:
                # collinear: overlapping projections mean a degenerate polygon
                lo1, hi1 = sorted([a @ (b - a), b @ (b - a)])
                lo2, hi2 = sorted([c @ (b - a), d @ (b - a)])
                if max(lo1, lo2) < min(hi1, hi2):
                    return i, j
    return None


Shape = Disk | Polygon


def shape_from_dict(spec: dict) -> Shape:
    """Build a shape from a config mapping (``kind`` = disk | polygon)."""
    kind = spec.get("kind", "disk")
    if kind == "disk":
        return Disk(center=tuple(map(float, spec.get("center", (0.0, 0.0)))), radius=float(spec["radius"]))
    if kind == "polygon":
        return Polygon(vertices=tuple(tuple(map(float, p)) for p in spec["vertices"]))
    raise ShapeError(f"unknown shape kind {kind!r}")
