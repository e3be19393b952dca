"""Random star-shaped cross-sections and their exact section properties

Polygons are generated in polar coordinates around the origin: angular steps
are drawn uniformly and renormalized to a full turn, radii come from a normal
distribution trimmed to [0.1, 2] times the average radius. Section properties
are closed-form Green's theorem sums over the polygon edges.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import pandas as pd

from core.errors import DegenerateGeometryError, FormatError, ParameterError
from core.seeding import SEED_MASK, substreams

logger = logging.getLogger(__name__)

MIN_AREA_MM2 = 1.0
RADIUS_CLIP = (0.1, 2.0)
POLYGON_CSV_COLUMNS = ["x_mm", "y_mm"]


@dataclass(frozen=True)
class PolygonSpec:
    """Generator parameters for one cross-section"""
    n_vertices: int
    avg_radius: float
    irregularity: float
    spikiness: float
    seed: int

    def __post_init__(self):
        if int(self.n_vertices) != self.n_vertices or self.n_vertices < 3:
            raise ParameterError(f"n_vertices must be an integer >= 3, got {self.n_vertices}")
        if not math.isfinite(self.avg_radius) or self.avg_radius <= 0:
            raise ParameterError(f"avg_radius must be positive, got {self.avg_radius}")
        for name in ("irregularity", "spikiness"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {value}")
        if not 0 <= self.seed <= SEED_MASK:
            raise ParameterError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass(frozen=True, eq=False)
class Polygon:
    """Counter-clockwise vertex list in mm"""
    vertices: np.ndarray

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=np.float64).reshape(-1, 2)
        if len(verts) < 3:
            raise DegenerateGeometryError(f"polygon needs at least 3 vertices, got {len(verts)}")
        if not np.all(np.isfinite(verts)):
            raise DegenerateGeometryError("polygon vertices must be finite")
        verts.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        if self.signed_area() <= 0:
            raise DegenerateGeometryError("polygon must be counter-clockwise with positive area")

    def __len__(self) -> int:
        return len(self.vertices)

    def __eq__(self, other) -> bool:
        return isinstance(other, Polygon) and np.array_equal(self.vertices, other.vertices)

    def signed_area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def max_extent(self) -> float:
        """Largest absolute coordinate, used against the raster window"""
        return float(np.max(np.abs(self.vertices)))

    def is_star_shaped(self) -> bool:
        """Polar angles strictly increasing modulo 2*pi around the origin."""
        angles = np.arctan2(self.vertices[:, 1], self.vertices[:, 0])
        steps = np.mod(np.diff(np.append(angles, angles[0])), 2 * np.pi)
        return bool(np.all(steps > 0) and math.isclose(float(steps.sum()), 2 * np.pi, rel_tol=1e-9))

    def is_simple(self) -> bool:
        """Segment-pair intersection test over all non-adjacent edges"""
        p = self.vertices
        q = np.roll(p, -1, axis=0)
        n = len(p)
        for i in range(n):
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue
                if _segments_intersect(p[i], q[i], p[j], q[j]):
                    return False
        return True

    def translate(self, dx: float, dy: float) -> "Polygon":
        return Polygon(self.vertices + np.array([dx, dy]))

    def rotate(self, phi: float, origin: Tuple[float, float] = (0.0, 0.0)) -> "Polygon":
        c, s = math.cos(phi), math.sin(phi)
        rot = np.array([[c, -s], [s, c]])
        center = np.asarray(origin, dtype=np.float64)
        return Polygon((self.vertices - center) @ rot.T + center)


@dataclass(frozen=True)
class SectionProperties:
    """Area, centroid and centroidal second moments (mm, mm^2, mm^4)"""
    area: float
    centroid: Tuple[float, float]
    i_x: float
    i_y: float
    i_xy: float

    def rotated(self, theta: float) -> Tuple[float, float, float]:
        """Second moments in axes rotated by theta from the centroidal axes."""
        mean = 0.5 * (self.i_x + self.i_y)
        half = 0.5 * (self.i_x - self.i_y)
        c2, s2 = math.cos(2 * theta), math.sin(2 * theta)
        i_u = mean + half * c2 - self.i_xy * s2
        i_v = mean - half * c2 + self.i_xy * s2
        i_uv = half * s2 + self.i_xy * c2
        return i_u, i_v, i_uv


@dataclass(frozen=True)
class PrincipalSection:
    theta_p: float
    i_xp: float
    i_yp: float


def _segments_intersect(a, b, c, d) -> bool:
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    d1, d2 = orient(c, d, a), orient(c, d, b)
    d3, d4 = orient(a, b, c), orient(a, b, d)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True

    def on_segment(p, q, r):
        return min(p[0], q[0]) <= r[0] <= max(p[0], q[0]) and min(p[1], q[1]) <= r[1] <= max(p[1], q[1])

    return any(
        o == 0 and on_segment(p, q, r)
        for o, p, q, r in ((d1, c, d, a), (d2, c, d, b), (d3, a, b, c), (d4, a, b, d))
    )


def generate_polygon(spec: PolygonSpec) -> Polygon:
    """Deterministic star-shaped polygon for a generator spec."""
    angle_rng, radius_rng = substreams(spec.seed, 2)
    n = spec.n_vertices
    step = 2 * np.pi / n

    steps = angle_rng.uniform(step * (1 - spec.irregularity), step * (1 + spec.irregularity), n)
    steps = steps * (2 * np.pi / steps.sum())
    start = angle_rng.uniform(0.0, 2 * np.pi)
    angles = start + np.concatenate(([0.0], np.cumsum(steps[:-1])))

    radii = radius_rng.normal(spec.avg_radius, spec.spikiness * spec.avg_radius, n)
    radii = np.clip(radii, RADIUS_CLIP[0] * spec.avg_radius, RADIUS_CLIP[1] * spec.avg_radius)

    vertices = np.column_stack((radii * np.cos(angles), radii * np.sin(angles)))
    logger.debug(f"Generated {n}-gon with seed {spec.seed}")
    return Polygon(vertices)


def regular_polygon(n_vertices: int, radius: float, phase: float = 0.0) -> Polygon:
    angles = phase + 2 * np.pi * np.arange(n_vertices) / n_vertices
    return Polygon(np.column_stack((radius * np.cos(angles), radius * np.sin(angles))))


def rectangle(width: float, height: float) -> Polygon:
    """Axis-aligned rectangle centred on the origin"""
    w, h = width / 2, height / 2
    return Polygon([(-w, -h), (w, -h), (w, h), (-w, h)])


def section_properties(poly: Polygon) -> SectionProperties:
    """Shoelace area, centroid and centroidal second moments of a polygon"""
    x0, y0 = poly.vertices[:, 0], poly.vertices[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    cross = x0 * y1 - x1 * y0

    area = 0.5 * float(np.sum(cross))
    if area < MIN_AREA_MM2:
        raise DegenerateGeometryError(f"polygon area {area:.4g} mm^2 below {MIN_AREA_MM2} mm^2")

    cx = float(np.sum((x0 + x1) * cross)) / (6 * area)
    cy = float(np.sum((y0 + y1) * cross)) / (6 * area)

    # moments about the origin
    i_x0 = float(np.sum((y0 * y0 + y0 * y1 + y1 * y1) * cross)) / 12
    i_y0 = float(np.sum((x0 * x0 + x0 * x1 + x1 * x1) * cross)) / 12
    i_xy0 = float(np.sum((x0 * y1 + 2 * x0 * y0 + 2 * x1 * y1 + x1 * y0) * cross)) / 24

    i_x = i_x0 - area * cy * cy
    i_y = i_y0 - area * cx * cx
    i_xy = i_xy0 - area * cx * cy
    if i_x <= 0 or i_y <= 0 or i_x * i_y - i_xy * i_xy <= 0:
        raise DegenerateGeometryError("inertia tensor is not positive definite")

    return SectionProperties(area=area, centroid=(cx, cy), i_x=i_x, i_y=i_y, i_xy=i_xy)


def principal_axes(props: SectionProperties) -> PrincipalSection:
    """Rotation that diagonalizes the centroidal inertia tensor"""
    scale = props.i_x + props.i_y
    diff = props.i_y - props.i_x
    if abs(diff) <= 1e-12 * scale and abs(props.i_xy) <= 1e-12 * scale:
        theta = 0.0
    else:
        theta = 0.5 * math.atan2(2 * props.i_xy, diff)
    i_xp, i_yp, _ = props.rotated(theta)
    return PrincipalSection(theta_p=theta, i_xp=i_xp, i_yp=i_yp)


def write_polygon_csv(poly: Polygon, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(poly.vertices, columns=POLYGON_CSV_COLUMNS).to_csv(path, index=False, lineterminator="\n")
    return path


def read_polygon_csv(path: Union[str, Path]) -> Polygon:
    df = pd.read_csv(path, float_precision="round_trip")
    if list(df.columns) != POLYGON_CSV_COLUMNS:
        raise FormatError(f"{path}: expected header {','.join(POLYGON_CSV_COLUMNS)}, got {','.join(df.columns)}")
    return Polygon(df.to_numpy(dtype=np.float64))
