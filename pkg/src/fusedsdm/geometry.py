"""Planar geometry of the study region and survey design.

Survey units are points, transects (polylines), and traps. Each unit owns a
sampled region: a disk of given radius around a point or trap, or a
perpendicular strip of given half-width around a transect (no end caps).
Quadrature rules are midpoint rules on regular grids clipped to a region,
or equally spaced nodes on an observed-distance support (circle perimeter
or the pair of lines parallel to a transect).

All distances and areas are in flat map units. Objects are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

POINT = "point"
TRANSECT = "transect"
TRAP = "trap"
UNIT_KINDS = (POINT, TRANSECT, TRAP)

# Unit kinds observed by each survey type. Points and transects collect
# distance-sampling detections; traps collect capture-recapture captures.
DS_KINDS = (POINT, TRANSECT)
CR_KINDS = (TRAP,)


@dataclass(frozen=True)
class StudyRegion:
    """Axis-aligned study area, optionally restricted by a polygon mask."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float
    mask: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ConfigError("study region bounds must have positive extent")
        if self.mask is not None:
            if len(self.mask) < 3:
                raise ConfigError("mask polygon needs at least 3 vertices")
            vx = np.array([v[0] for v in self.mask])
            vy = np.array([v[1] for v in self.mask])
            eps = 1e-9
            if (vx < self.xmin - eps).any() or (vx > self.xmax + eps).any() \
                    or (vy < self.ymin - eps).any() or (vy > self.ymax + eps).any():
                raise ConfigError("mask polygon must lie within the bounds")

    @classmethod
    def unit_square(cls) -> "StudyRegion":
        return cls(0.0, 0.0, 1.0, 1.0)

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        if self.mask is None:
            return self.width * self.height
        return _polygon_area(self.mask)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Boolean membership for an (n, 2) array of locations."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        inside = (
            (pts[:, 0] >= self.xmin) & (pts[:, 0] <= self.xmax)
            & (pts[:, 1] >= self.ymin) & (pts[:, 1] <= self.ymax)
        )
        if self.mask is not None:
            inside &= _polygon_contains(self.mask, pts)
        return inside

    def bbox(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)


def _polygon_area(vertices) -> float:
    vx = np.array([v[0] for v in vertices], dtype=float)
    vy = np.array([v[1] for v in vertices], dtype=float)
    return 0.5 * abs(np.sum(vx * np.roll(vy, -1) - np.roll(vx, -1) * vy))


def _polygon_contains(vertices, pts: np.ndarray) -> np.ndarray:
    """Even-odd ray casting, vectorized over points."""
    vx = np.array([v[0] for v in vertices], dtype=float)
    vy = np.array([v[1] for v in vertices], dtype=float)
    n = len(vx)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    for i in range(n):
        j = (i - 1) % n
        crosses = (vy[i] > y) != (vy[j] > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (vx[j] - vx[i]) * (y - vy[i]) / (vy[j] - vy[i]) + vx[i]
        inside ^= crosses & (x < xint)
    return inside


@dataclass(frozen=True, eq=False)
class SurveyUnit:
    """One survey unit: a point, a transect polyline, or a trap."""

    id: str
    kind: str
    xy: np.ndarray  # (2,) for point/trap, (k, 2) with k >= 2 for transect

    def __post_init__(self):
        if self.kind not in UNIT_KINDS:
            raise ConfigError(f"unknown unit kind {self.kind!r}")
        xy = np.asarray(self.xy, dtype=float)
        if self.kind == TRANSECT:
            if xy.ndim != 2 or xy.shape[0] < 2 or xy.shape[1] != 2:
                raise ConfigError(f"transect {self.id!r} needs >= 2 vertices")
            if polyline_length(xy) <= 0:
                raise ConfigError(f"transect {self.id!r} has zero length")
        else:
            if xy.shape != (2,):
                raise ConfigError(f"unit {self.id!r} needs a single (x, y) location")
        object.__setattr__(self, "xy", xy)

    @property
    def reference_point(self) -> np.ndarray:
        """Point/trap location, or the arc-length midpoint of a transect."""
        if self.kind != TRANSECT:
            return self.xy
        return _polyline_point_at(self.xy, 0.5 * polyline_length(self.xy))


def polyline_length(vertices: np.ndarray) -> float:
    d = np.diff(np.asarray(vertices, dtype=float), axis=0)
    return float(np.sqrt((d ** 2).sum(axis=1)).sum())


def _polyline_point_at(vertices: np.ndarray, s: float) -> np.ndarray:
    """Point at arc length s along the polyline."""
    seg = np.diff(vertices, axis=0)
    lens = np.sqrt((seg ** 2).sum(axis=1))
    for i, ell in enumerate(lens):
        if s <= ell or i == len(lens) - 1:
            t = 0.0 if ell == 0 else min(s / ell, 1.0)
            return vertices[i] + t * seg[i]
        s -= ell
    return vertices[-1]


def _segment_projection(pts: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Per-point clamped parameter t and distance to segment a-b."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        t = np.zeros(len(pts))
    else:
        t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    dist = np.sqrt(((pts - proj) ** 2).sum(axis=1))
    return t, dist


def distance_to_unit(s, unit: SurveyUnit) -> float | np.ndarray:
    """Euclidean distance to a point/trap, minimum distance to a transect."""
    pts = np.atleast_2d(np.asarray(s, dtype=float))
    if unit.kind == TRANSECT:
        dmin = np.full(len(pts), np.inf)
        verts = unit.xy
        for i in range(len(verts) - 1):
            _, d = _segment_projection(pts, verts[i], verts[i + 1])
            dmin = np.minimum(dmin, d)
        out = dmin
    else:
        out = np.sqrt(((pts - unit.xy) ** 2).sum(axis=1))
    if np.asarray(s).ndim == 1:
        return float(out[0])
    return out


@dataclass(frozen=True, eq=False)
class SampledRegion:
    """Detection/capture region of one unit: disk or perpendicular strip."""

    unit: SurveyUnit
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError(f"region radius for {self.unit.id!r} must be > 0")

    @property
    def is_ds(self) -> bool:
        return self.unit.kind in DS_KINDS

    @property
    def measure(self) -> float:
        """Analytic area: pi r^2 for disks, 2 w L for strips."""
        if self.unit.kind == TRANSECT:
            return 2.0 * self.radius * polyline_length(self.unit.xy)
        return math.pi * self.radius ** 2

    def bbox(self) -> tuple[float, float, float, float]:
        xy = np.atleast_2d(self.unit.xy)
        r = self.radius
        return (xy[:, 0].min() - r, xy[:, 1].min() - r,
                xy[:, 0].max() + r, xy[:, 1].max() + r)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.unit.kind == TRANSECT:
            # Strip membership: perpendicular foot on some segment interior.
            inside = np.zeros(len(pts), dtype=bool)
            verts = self.unit.xy
            for i in range(len(verts) - 1):
                t, d = _segment_projection(pts, verts[i], verts[i + 1])
                inside |= (t > 0.0) & (t < 1.0) & (d <= self.radius)
            # Include points exactly on the polyline.
            inside |= distance_to_unit(pts, self.unit) <= 1e-12
            return inside
        return ((pts - self.unit.xy) ** 2).sum(axis=1) <= self.radius ** 2

    def distance(self, pts: np.ndarray) -> np.ndarray:
        return np.atleast_1d(distance_to_unit(np.atleast_2d(pts), self.unit))


@dataclass(frozen=True, eq=False)
class SurveyDesign:
    """The full survey layout: all sampled regions, id-addressable."""

    regions: tuple[SampledRegion, ...]

    def __post_init__(self):
        ids = [r.unit.id for r in self.regions]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate unit ids in design")

    @property
    def ds_regions(self) -> tuple[SampledRegion, ...]:
        return tuple(r for r in self.regions if r.is_ds)

    @property
    def cr_regions(self) -> tuple[SampledRegion, ...]:
        return tuple(r for r in self.regions if not r.is_ds)

    @property
    def units(self) -> tuple[SurveyUnit, ...]:
        return tuple(r.unit for r in self.regions)

    def region_by_id(self, unit_id: str) -> SampledRegion:
        for r in self.regions:
            if r.unit.id == unit_id:
                return r
        raise DataError(f"unknown unit id {unit_id!r}")


REGION_SUPPORT = "region"
LINE_SUPPORT = "lines"


@dataclass(frozen=True, eq=False)
class ObservedLocationSupport:
    """Support of an observed location: the whole region, or the circle
    perimeter / parallel lines at a recorded distance."""

    kind: str
    region: SampledRegion
    distance: float | None = None

    def __post_init__(self):
        if self.kind not in (REGION_SUPPORT, LINE_SUPPORT):
            raise ConfigError(f"unknown support kind {self.kind!r}")
        if self.kind == LINE_SUPPORT:
            if self.distance is None or self.distance < 0:
                raise DataError("line support needs a nonnegative recorded distance")
            if self.distance > self.region.radius:
                raise DataError(
                    f"recorded distance {self.distance} exceeds the truncation "
                    f"radius {self.region.radius} of unit {self.region.unit.id!r}"
                )

    @property
    def measure(self) -> float:
        if self.kind == REGION_SUPPORT:
            return self.region.measure
        if self.region.unit.kind == TRANSECT:
            return 2.0 * polyline_length(self.region.unit.xy)
        return 2.0 * math.pi * self.distance


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and positive weights; weights carry the measure of the set."""

    nodes: np.ndarray   # (n, 2)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        if len(self.nodes) != len(self.weights):
            raise ConfigError("node/weight length mismatch")
        if len(self.nodes) == 0:
            raise ConfigError("empty quadrature rule")

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def integrate(self, values: np.ndarray) -> float:
        return float(self.weights @ values)


def area_rule(target, spacing: float, within: StudyRegion | None = None) -> QuadratureRule:
    """Midpoint rule on a regular grid clipped to ``target``.

    ``target`` is anything with ``bbox()`` and ``contains(points)``
    (a SampledRegion or a StudyRegion). Disk and rectangular grids are
    centered on the bounding box so clipping errors shrink symmetrically
    as the spacing is refined; strips get a grid in the transect's own
    frame, which tiles them exactly.
    """
    if not spacing > 0:
        raise ConfigError("spacing must be > 0")
    if isinstance(target, SampledRegion) and target.unit.kind == TRANSECT:
        return _strip_rule(target, spacing, within)
    xmin, ymin, xmax, ymax = target.bbox()
    nx = max(1, int(math.ceil((xmax - xmin) / spacing)))
    ny = max(1, int(math.ceil((ymax - ymin) / spacing)))
    hx = (xmax - xmin) / nx
    hy = (ymax - ymin) / ny
    xs = xmin + (np.arange(nx) + 0.5) * hx
    ys = ymin + (np.arange(ny) + 0.5) * hy
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    keep = target.contains(pts)
    if within is not None:
        keep &= within.contains(pts)
    if not keep.any():
        raise ConfigError(
            f"spacing {spacing} too coarse: no quadrature nodes fall in the region"
        )
    pts = pts[keep]
    return QuadratureRule(pts, np.full(len(pts), hx * hy))


def _strip_rule(region: SampledRegion, spacing: float,
                within: StudyRegion | None) -> QuadratureRule:
    """Per-segment midpoint grid in (along, across) strip coordinates."""
    w = region.radius
    verts = region.unit.xy
    nodes, weights = [], []
    for i in range(len(verts) - 1):
        a, b = verts[i], verts[i + 1]
        seg = b - a
        ell = float(np.sqrt(seg @ seg))
        if ell == 0:
            continue
        direction = seg / ell
        normal = np.array([-direction[1], direction[0]])
        nt = max(1, int(math.ceil(ell / spacing)))
        nn = max(1, int(math.ceil(2 * w / spacing)))
        ht, hn = ell / nt, 2 * w / nn
        t = (np.arange(nt) + 0.5) * ht
        n = -w + (np.arange(nn) + 0.5) * hn
        tt, nnd = np.meshgrid(t, n)
        pts = (a + tt.ravel()[:, None] * direction
               + nnd.ravel()[:, None] * normal)
        nodes.append(pts)
        weights.append(np.full(len(pts), ht * hn))
    pts = np.vstack(nodes)
    wts = np.concatenate(weights)
    if within is not None:
        keep = within.contains(pts)
        pts, wts = pts[keep], wts[keep]
    if len(pts) == 0:
        raise ConfigError("no strip quadrature nodes fall in the region")
    return QuadratureRule(pts, wts)


def native_area_rule(target, x0: float, y0: float, dx: float, dy: float,
                     within: StudyRegion | None = None) -> QuadratureRule:
    """Midpoint rule whose nodes are the cell centers of an external grid
    with origin (x0, y0) and cell size (dx, dy). Used to make likelihood
    quadrature coincide exactly with a covariate field's own cells."""
    xmin, ymin, xmax, ymax = target.bbox()
    i0 = int(math.floor((xmin - x0) / dx))
    i1 = int(math.ceil((xmax - x0) / dx))
    j0 = int(math.floor((ymin - y0) / dy))
    j1 = int(math.ceil((ymax - y0) / dy))
    xs = x0 + (np.arange(i0, i1 + 1) + 0.5) * dx
    ys = y0 + (np.arange(j0, j1 + 1) + 0.5) * dy
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    keep = target.contains(pts)
    if within is not None:
        keep &= within.contains(pts)
    if not keep.any():
        raise ConfigError("no native-grid cell centers fall in the region")
    pts = pts[keep]
    return QuadratureRule(pts, np.full(len(pts), dx * dy))


def line_rule(support: ObservedLocationSupport, n_nodes: int = 128) -> QuadratureRule:
    """Equally spaced nodes on a circle perimeter or on both parallel lines.

    Weights are uniform and sum to the support measure |L|. A recorded
    distance of (numerically) zero degenerates to a single node at the unit.
    """
    if support.kind != LINE_SUPPORT:
        raise ConfigError("line_rule requires a perimeter-or-lines support")
    if n_nodes < 8:
        raise ConfigError("line_rule needs at least 8 nodes")
    unit = support.region.unit
    d = float(support.distance)
    if unit.kind == TRANSECT:
        verts = unit.xy
        total_len = 2.0 * polyline_length(verts)
        nodes = []
        counts = []
        for i in range(len(verts) - 1):
            a, b = verts[i], verts[i + 1]
            seg = b - a
            ell = float(np.sqrt(seg @ seg))
            if ell == 0:
                continue
            normal = np.array([-seg[1], seg[0]]) / ell
            n_seg = max(1, int(round(n_nodes * ell / total_len)))
            t = (np.arange(n_seg) + 0.5) / n_seg
            base = a + t[:, None] * seg
            for side in (+1.0, -1.0):
                nodes.append(base + side * d * normal)
                counts.append(n_seg)
        pts = np.vstack(nodes)
        w = np.full(len(pts), total_len / len(pts))
        return QuadratureRule(pts, w)
    if d <= 1e-12:
        return QuadratureRule(unit.xy[None, :].copy(), np.array([1.0]))
    theta = (np.arange(n_nodes) + 0.5) * (2.0 * math.pi / n_nodes)
    pts = unit.xy + d * np.column_stack([np.cos(theta), np.sin(theta)])
    w = np.full(n_nodes, 2.0 * math.pi * d / n_nodes)
    return QuadratureRule(pts, w)


@dataclass(frozen=True, eq=False)
class PartitionGrid:
    """Rectangular nx-by-ny tiling of the study region bounds.

    Cells are half-open in x and y except at the outer boundary, so every
    interior location belongs to exactly one cell. A cell is sampled when
    some unit's reference geometry (the point/trap location or the transect
    polyline) intersects it.
    """

    region: StudyRegion
    nx: int
    ny: int
    sampled: np.ndarray = field(default=None)  # (nx*ny,) bool

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_width(self) -> float:
        return self.region.width / self.nx

    @property
    def cell_height(self) -> float:
        return self.region.height / self.ny

    @property
    def cell_area(self) -> float:
        return self.cell_width * self.cell_height

    def cell_index(self, pts: np.ndarray) -> np.ndarray:
        """Flat cell index (iy * nx + ix) for each location."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ix = np.floor((pts[:, 0] - self.region.xmin) / self.cell_width).astype(int)
        iy = np.floor((pts[:, 1] - self.region.ymin) / self.cell_height).astype(int)
        ix = np.clip(ix, 0, self.nx - 1)
        iy = np.clip(iy, 0, self.ny - 1)
        return iy * self.nx + ix

    def cell_centers(self) -> np.ndarray:
        ix = np.arange(self.nx)
        iy = np.arange(self.ny)
        gx, gy = np.meshgrid(
            self.region.xmin + (ix + 0.5) * self.cell_width,
            self.region.ymin + (iy + 0.5) * self.cell_height,
        )
        return np.column_stack([gx.ravel(), gy.ravel()])


def build_partitions(region: StudyRegion, nx: int, ny: int,
                     design: SurveyDesign) -> PartitionGrid:
    """Tile the region and flag cells intersected by a unit's geometry.

    Transects are marched at a quarter of the cell size so every crossed
    cell is flagged.
    """
    if nx < 1 or ny < 1:
        raise ConfigError("partition counts must be >= 1")
    grid = PartitionGrid(region, nx, ny, sampled=None)
    sampled = np.zeros(grid.n_cells, dtype=bool)
    step = 0.25 * min(grid.cell_width, grid.cell_height)
    for unit in design.units:
        if unit.kind == TRANSECT:
            verts = unit.xy
            pts = [verts[0]]
            for i in range(len(verts) - 1):
                seg = verts[i + 1] - verts[i]
                ell = float(np.sqrt(seg @ seg))
                n = max(1, int(math.ceil(ell / step)))
                t = (np.arange(1, n + 1)) / n
                pts.append(verts[i] + t[:, None] * seg)
            pts = np.vstack([np.atleast_2d(p) for p in pts])
        else:
            pts = unit.xy[None, :]
        sampled[np.unique(grid.cell_index(pts))] = True
    return PartitionGrid(region, nx, ny, sampled=sampled)


def check_nonoverlap(design: SurveyDesign) -> tuple[bool, list[tuple[str, str]]]:
    """True when all sampled regions are pairwise disjoint.

    Disk-disk pairs are exact; pairs involving a strip use distance to the
    polyline, which is slightly conservative past a transect's ends.
    """
    regions = design.regions
    offending = []
    for i in range(len(regions)):
        for j in range(i + 1, len(regions)):
            a, b = regions[i], regions[j]
            if a.unit.kind == TRANSECT or b.unit.kind == TRANSECT:
                strip, other = (a, b) if a.unit.kind == TRANSECT else (b, a)
                if other.unit.kind == TRANSECT:
                    d = min(
                        float(distance_to_unit(strip.unit.xy, other.unit).min()),
                        float(distance_to_unit(other.unit.xy, strip.unit).min()),
                    )
                else:
                    d = float(distance_to_unit(other.unit.xy, strip.unit))
            else:
                d = float(np.sqrt(((a.unit.xy - b.unit.xy) ** 2).sum()))
            if d <= a.radius + b.radius:
                offending.append((a.unit.id, b.unit.id))
    return (len(offending) == 0, offending)


def load_design(path) -> SurveyDesign:
    """Read a `id,kind,radius,geometry` design file.

    Geometry is `x y` for points/traps and `x1 y1;x2 y2;...` for transects.
    """
    regions = []
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0].lower().replace(" ", "") != "id,kind,radius,geometry":
        raise DataError(f"{path}: expected header 'id,kind,radius,geometry'")
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 comma-separated fields")
        uid, kind, radius_s, geom = (p.strip() for p in parts)
        try:
            radius = float(radius_s)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad radius {radius_s!r}") from exc
        try:
            pieces = [p.split() for p in geom.split(";") if p.strip()]
            coords = np.array([[float(a), float(b)] for a, b in pieces])
        except Exception as exc:
            raise DataError(f"{path}:{lineno}: bad geometry {geom!r}") from exc
        xy = coords if kind == TRANSECT else coords[0]
        try:
            regions.append(SampledRegion(SurveyUnit(uid, kind, xy), radius))
        except ConfigError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return SurveyDesign(tuple(regions))


def save_design(design: SurveyDesign, path) -> None:
    with open(path, "w") as fh:
        fh.write("id,kind,radius,geometry\n")
        for r in design.regions:
            xy = np.atleast_2d(r.unit.xy)
            geom = ";".join(f"{float(x)!r} {float(y)!r}" for x, y in xy)
            fh.write(f"{r.unit.id},{r.unit.kind},{float(r.radius)!r},{geom}\n")
