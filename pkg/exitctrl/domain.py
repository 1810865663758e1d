"""Bounded domains with exterior spheres, and finite control sets"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from exitctrl.exceptions import SchemaError


DOMAIN_KINDS = ("interval", "ball", "box")


def _as_points(points: np.ndarray, d: int) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != d:
        pts = pts.reshape(-1, d)
    return pts


@dataclass(frozen=True)
class Domain:
    """
    Bounded domain D of one of three kinds.

    interval and ball use a single radius (the exterior sphere radius is the
    radius itself); box uses per-axis half-widths and a declared exterior
    radius, which may be any positive value.
    """
    kind: str
    center: Tuple[float, ...]
    half_widths: Tuple[float, ...]
    exterior_radius: float = 0.0

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise SchemaError(f"unknown domain kind '{self.kind}'", "domain.kind")
        if any(h <= 0 for h in self.half_widths):
            raise SchemaError("radius/half-widths must be positive", "domain")
        if self.kind == "interval" and len(self.center) != 1:
            raise SchemaError("interval domains are one-dimensional", "domain.center")
        if self.kind in ("interval", "ball"):
            if len(self.half_widths) != 1:
                raise SchemaError("interval/ball take a single radius", "domain.radius")
            object.__setattr__(self, "exterior_radius", float(self.half_widths[0]))
        else:
            if len(self.half_widths) != len(self.center):
                raise SchemaError("box needs one half-width per axis", "domain.half_widths")
            if self.exterior_radius <= 0:
                object.__setattr__(self, "exterior_radius", float(min(self.half_widths)))

    @classmethod
    def interval(cls, center: float = 0.0, radius: float = 1.0) -> "Domain":
        return cls("interval", (float(center),), (float(radius),))

    @classmethod
    def ball(cls, center, radius: float) -> "Domain":
        return cls("ball", tuple(float(c) for c in center), (float(radius),))

    @classmethod
    def box(cls, center, half_widths, exterior_radius: float = 0.0) -> "Domain":
        return cls("box", tuple(float(c) for c in center),
                   tuple(float(h) for h in half_widths), float(exterior_radius))

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def radius(self) -> float:
        return self.half_widths[0]

    @property
    def rho(self) -> float:
        return self.exterior_radius

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        h = np.full(self.d, self.radius) if self.kind != "box" else np.asarray(self.half_widths)
        return c - h, c + h

    def diameter(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo)) if self.kind == "box" else 2.0 * self.radius

    # Exact geometric queries

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance to the boundary, positive inside D, negative outside"""
        pts = _as_points(points, self.d)
        offset = pts - np.asarray(self.center)
        if self.kind != "box":
            return self.radius - np.linalg.norm(offset, axis=1)
        slack = np.asarray(self.half_widths) - np.abs(offset)
        inside = np.all(slack >= 0, axis=1)
        outside_dist = np.linalg.norm(np.maximum(-slack, 0.0), axis=1)
        return np.where(inside, np.min(slack, axis=1), -outside_dist)

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Membership in the closure of D"""
        return self.signed_distance(points) >= -tol

    def on_boundary(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        return np.abs(self.signed_distance(points)) <= tol

    def closest_boundary_point(self, points: np.ndarray) -> np.ndarray:
        pts = _as_points(points, self.d)
        c = np.asarray(self.center)
        offset = pts - c
        if self.kind != "box":
            norms = np.linalg.norm(offset, axis=1)
            direction = np.zeros_like(offset)
            direction[:, 0] = 1.0
            nonzero = norms > 0
            direction[nonzero] = offset[nonzero] / norms[nonzero, None]
            return c + self.radius * direction

        h = np.asarray(self.half_widths)
        result = np.clip(pts, c - h, c + h)
        slack = h - np.abs(offset)
        inside = np.all(slack >= 0, axis=1)
        if np.any(inside):
            idx = np.flatnonzero(inside)
            axis = np.argmin(slack[idx], axis=1)
            signs = np.where(offset[idx, axis] >= 0, 1.0, -1.0)
            result[idx, axis] = c[axis] + signs * h[axis]
        return result

    def outward_normal(self, boundary_points: np.ndarray) -> np.ndarray:
        """Unit outward normal; at box edges/corners the normalised sum of face normals"""
        pts = _as_points(boundary_points, self.d)
        c = np.asarray(self.center)
        offset = pts - c
        if self.kind != "box":
            norms = np.linalg.norm(offset, axis=1)
            norms = np.where(norms > 0, norms, 1.0)
            return offset / norms[:, None]
        h = np.asarray(self.half_widths)
        active = np.abs(np.abs(offset) - h) <= 1e-12 * np.maximum(h, 1.0)
        normals = np.where(active, np.sign(offset), 0.0)
        lengths = np.linalg.norm(normals, axis=1)
        # Interior points have no active face; fall back to the closest face
        missing = lengths == 0
        if np.any(missing):
            snapped = self.closest_boundary_point(pts[missing])
            normals[missing] = self.outward_normal(snapped)
            lengths[missing] = 1.0
        return normals / lengths[:, None]

    def exterior_center(self, boundary_points: np.ndarray) -> np.ndarray:
        """Centre of the exterior sphere of radius rho touching D at each point"""
        pts = _as_points(boundary_points, self.d)
        return pts + self.rho * self.outward_normal(pts)

    # Sampling

    @property
    def uniform_width(self) -> int:
        """Uniforms consumed per point by map_uniform"""
        return self.d + 1

    def map_uniform(self, u: np.ndarray) -> np.ndarray:
        """
        Map rows of uniforms (n, d + 1) to points of closure(D).

        Row i depends only on u[i], so prefixes of one uniform array give
        nested sample sets.
        """
        u = np.atleast_2d(u)
        c = np.asarray(self.center)
        if self.kind == "box":
            return c + (2.0 * u[:, :self.d] - 1.0) * np.asarray(self.half_widths)
        if self.d == 1:
            return c + self.radius * (2.0 * u[:, :1] - 1.0)
        if self.d == 2:
            angle = 2.0 * np.pi * u[:, 0]
            r = self.radius * np.sqrt(u[:, 1])
            return c + np.column_stack([r * np.cos(angle), r * np.sin(angle)])
        cube = 2.0 * u[:, :self.d] - 1.0
        norms = np.linalg.norm(cube, axis=1)
        norms = np.where(norms > 0, norms, 1.0)
        r = self.radius * u[:, self.d] ** (1.0 / self.d)
        return c + (r / norms)[:, None] * cube

    def sample_interior(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.map_uniform(rng.random((n, self.uniform_width)))

    def sample_boundary(self, rng: np.random.Generator, n: int) -> np.ndarray:
        interior = self.sample_interior(rng, n)
        if self.kind == "box":
            # Push each sample to a random face so faces are hit roughly by area
            h = np.asarray(self.half_widths)
            axis = rng.integers(0, self.d, size=n)
            side = np.where(rng.random(n) < 0.5, -1.0, 1.0)
            pts = interior.copy()
            pts[np.arange(n), axis] = np.asarray(self.center)[axis] + side * h[axis]
            return pts
        if self.d == 1:
            side = np.where(rng.random(n) < 0.5, -1.0, 1.0)
            return np.asarray(self.center) + side[:, None] * self.radius
        return self.closest_boundary_point(interior)

    def to_doc(self) -> dict:
        doc = {"kind": self.kind, "center": list(self.center)}
        if self.kind == "box":
            doc["half_widths"] = list(self.half_widths)
            doc["exterior_radius"] = self.exterior_radius
        else:
            doc["radius"] = self.radius
        return doc


@dataclass(frozen=True)
class ControlSet:
    """Finite discretisation V_h of the compact control set, in lexicographic order"""
    points: Tuple[Tuple[float, ...], ...]
    _array: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.points:
            raise SchemaError("control set must be nonempty", "controls.points")
        k = len(self.points[0])
        if k == 0 or any(len(p) != k for p in self.points):
            raise SchemaError("control points must share a positive dimension", "controls.points")
        ordered = tuple(sorted(tuple(float(c) for c in p) for p in self.points))
        if len(set(ordered)) != len(ordered):
            raise SchemaError("control points must be distinct", "controls.points")
        object.__setattr__(self, "points", ordered)
        object.__setattr__(self, "_array", np.asarray(ordered, dtype=float).reshape(len(ordered), k))

    @classmethod
    def from_values(cls, values) -> "ControlSet":
        pts = []
        for p in values:
            pts.append(tuple(np.atleast_1d(np.asarray(p, dtype=float)).tolist()))
        return cls(tuple(pts))

    @property
    def k(self) -> int:
        return len(self.points[0])

    @property
    def array(self) -> np.ndarray:
        return self._array

    def __len__(self) -> int:
        return len(self.points)

    def index_of(self, point) -> Optional[int]:
        target = tuple(np.atleast_1d(np.asarray(point, dtype=float)).tolist())
        try:
            return self.points.index(target)
        except ValueError:
            return None

    def to_doc(self) -> dict:
        return {"points": [list(p) for p in self.points]}
