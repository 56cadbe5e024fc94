"""Planar obstacle scenes and signed-distance queries against convex polygons."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

# feature kinds reported by the closest-feature query
EDGE = 0
VERTEX = 1


class SceneError(ValueError):
    """Raised for geometrically invalid obstacles or scenes."""


@dataclass(frozen=True, eq=False)
class Obstacle:
    """Convex polygon with counter-clockwise vertices (meters)."""

    vertices: np.ndarray
    normals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=float).reshape(-1, 2)
        if len(verts) < 3:
            raise SceneError("obstacle needs at least 3 vertices")
        edges = np.roll(verts, -1, axis=0) - verts
        lengths = np.sqrt(edges[:, 0] ** 2 + edges[:, 1] ** 2)
        if np.any(lengths < 1e-9):
            raise SceneError("consecutive obstacle vertices closer than 1e-9 m")
        nxt = np.roll(edges, -1, axis=0)
        cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
        if np.any(cross <= 0.0):
            raise SceneError("obstacle must be strictly convex and counter-clockwise")
        normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1) / lengths[:, None]
        verts.setflags(write=False)
        normals.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "normals", normals)

    @classmethod
    def box(cls, xmin: float, ymin: float, xmax: float, ymax: float) -> "Obstacle":
        return cls(np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]]))

    def contains(self, point) -> bool:
        return signed_distance(point, self) < 0.0


@dataclass(frozen=True, eq=False)
class Scene:
    """Obstacles, pinned base pose ``(x, y, theta)`` and workspace bounds."""

    obstacles: tuple = ()
    base_pose: tuple = (0.0, 0.0, 0.0)
    bounds: tuple = (-1.0, -1.0, 1.0, 1.0)

    def __post_init__(self):
        obstacles = tuple(o if isinstance(o, Obstacle) else Obstacle(np.asarray(o)) for o in self.obstacles)
        base = tuple(float(v) for v in self.base_pose)
        bounds = tuple(float(v) for v in self.bounds)
        if len(base) != 3 or len(bounds) != 4:
            raise SceneError("base_pose needs (x, y, theta) and bounds (xmin, ymin, xmax, ymax)")
        xmin, ymin, xmax, ymax = bounds
        if not (xmin < xmax and ymin < ymax):
            raise SceneError("empty bounds")
        if not (xmin <= base[0] <= xmax and ymin <= base[1] <= ymax):
            raise SceneError("base pose lies outside the scene bounds")
        for i, obs in enumerate(obstacles):
            if signed_distance(base[:2], obs) <= 0.0:
                raise SceneError(f"obstacle {i} contains the base pose")
        object.__setattr__(self, "obstacles", obstacles)
        object.__setattr__(self, "base_pose", base)
        object.__setattr__(self, "bounds", bounds)

    def to_dict(self) -> dict:
        return {
            "bounds": list(self.bounds),
            "base": list(self.base_pose),
            "obstacles": [o.vertices.tolist() for o in self.obstacles],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        try:
            return cls(
                obstacles=tuple(Obstacle(np.asarray(o, dtype=float)) for o in data.get("obstacles", [])),
                base_pose=tuple(data["base"]),
                bounds=tuple(data["bounds"]),
            )
        except KeyError as exc:
            raise SceneError(f"scene is missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, SceneError):
                raise
            raise SceneError(f"malformed scene: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def load_scene(path) -> Scene:
    """Read a scene JSON file (SI units, radians)."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return Scene.from_dict(data)


class ClosestFeature(NamedTuple):
    """Batched closest-feature query result (arrays share the leading shape)."""

    distance: np.ndarray  # signed distance
    normal: np.ndarray  # (..., 2) unit outward normal
    kind: np.ndarray  # EDGE or VERTEX
    anchor: np.ndarray  # (..., 2) point on the feature used for the local distance formula
    edge_normal: np.ndarray  # (..., 2) normal of the edge feature (unused for vertices)


def closest_feature(points, obstacle: Obstacle) -> ClosestFeature:
    """Signed distance, normal and closest feature for an array of points.

    Inside the polygon the distance is minus the depth to the nearest edge line.
    Ties between equally close features resolve to the lowest edge index.
    """
    p = np.asarray(points, dtype=float)
    shape = p.shape[:-1]
    p = p.reshape(-1, 2)
    a = obstacle.vertices
    e = np.roll(a, -1, axis=0) - a
    nrm = obstacle.normals

    dx = p[:, None, 0] - a[None, :, 0]
    dy = p[:, None, 1] - a[None, :, 1]
    # height above each supporting line; all <= 0 means inside
    height = dx * nrm[None, :, 0] + dy * nrm[None, :, 1]
    elen2 = e[:, 0] ** 2 + e[:, 1] ** 2
    t = np.clip((dx * e[None, :, 0] + dy * e[None, :, 1]) / elen2[None, :], 0.0, 1.0)
    cx = dx - t * e[None, :, 0]
    cy = dy - t * e[None, :, 1]
    seg_dist = np.sqrt(cx * cx + cy * cy)

    inside = np.all(height <= 0.0, axis=1)
    rows = np.arange(len(p))

    out_edge = np.argmin(seg_dist, axis=1)
    out_t = t[rows, out_edge]
    out_d = seg_dist[rows, out_edge]
    in_edge = np.argmax(height, axis=1)
    in_d = height[rows, in_edge]

    edge = np.where(inside, in_edge, out_edge)
    dist = np.where(inside, in_d, out_d)
    at_vertex = (~inside) & ((out_t <= 0.0) | (out_t >= 1.0)) & (out_d > 0.0)
    vert_idx = np.where(out_t >= 1.0, (edge + 1) % len(a), edge)
    kind = np.where(at_vertex, VERTEX, EDGE)
    anchor = np.where(at_vertex[:, None], a[vert_idx], a[edge])

    edge_normal = nrm[edge]
    safe_d = np.where(at_vertex, out_d, 1.0)
    vnormal = np.stack([cx[rows, out_edge], cy[rows, out_edge]], axis=1) / safe_d[:, None]
    normal = np.where(at_vertex[:, None], vnormal, edge_normal)

    return ClosestFeature(
        dist.reshape(shape),
        normal.reshape(shape + (2,)),
        kind.reshape(shape),
        anchor.reshape(shape + (2,)),
        edge_normal.reshape(shape + (2,)),
    )


def signed_distance(point, obstacle: Obstacle) -> float:
    """Signed distance from ``point`` to ``obstacle`` (negative inside)."""
    return float(closest_feature(np.asarray(point, dtype=float)[None], obstacle).distance[0])


def distance_gradient(point, obstacle: Obstacle) -> np.ndarray:
    """Unit gradient of :func:`signed_distance` with respect to ``point``."""
    return closest_feature(np.asarray(point, dtype=float)[None], obstacle).normal[0].copy()


class Contact(NamedTuple):
    link: int
    obstacle: int
    gap: float
    normal: np.ndarray


def vine_contacts(state, scene: Scene, radius: float, activation: float | None = None) -> list[Contact]:
    """Candidate contacts between the vine's collision spheres and obstacles.

    One entry per (link, obstacle) pair whose gap ``signed_distance - radius``
    is below ``activation`` (defaults to the segment length). Ordered by link,
    then obstacle index.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if activation is None:
        activation = state.d_segment
    if activation < 0:
        raise ValueError("activation must be non-negative")
    centers = np.asarray(state.q, dtype=float)[: state.n, :2]
    found = []
    for j, obs in enumerate(scene.obstacles):
        feat = closest_feature(centers, obs)
        gap = feat.distance - radius
        for link in np.flatnonzero(gap < activation):
            found.append(Contact(int(link), j, float(gap[link]), feat.normal[link].copy()))
    found.sort(key=lambda c: (c.link, c.obstacle))
    return found


def obstacle_features(points, obstacles: Sequence[Obstacle]) -> ClosestFeature:
    """Stack :func:`closest_feature` over obstacles along a new trailing axis.

    ``points`` has shape ``(..., 2)``; every returned array gains an obstacle
    axis right after the point axes.
    """
    p = np.asarray(points, dtype=float)
    if not obstacles:
        shape = p.shape[:-1] + (0,)
        return ClosestFeature(
            np.zeros(shape), np.zeros(shape + (2,)), np.zeros(shape, dtype=int),
            np.zeros(shape + (2,)), np.zeros(shape + (2,)),
        )
    parts = [closest_feature(p, o) for o in obstacles]
    return ClosestFeature(*(np.stack(field_, axis=p.ndim - 1) for field_ in zip(*parts)))


def min_clearance(centers, scene: Scene, radius: float) -> float:
    """Smallest sphere-to-obstacle gap over ``centers`` (inf without obstacles)."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if not scene.obstacles or len(centers) == 0:
        return float("inf")
    feats = obstacle_features(centers, scene.obstacles)
    return float(np.min(feats.distance) - radius)
