"""Simulation of the latent point pattern and the two observation processes.

Individuals arise from an inhomogeneous Poisson process with intensity
exp(x(s)'beta). An individual inside a distance-sampling region is detected
with half-normal probability exp(-d^2/phi) of its distance to the unit; one
inside a trap's capture region is captured with constant probability theta.
Individuals outside every sampled region are never observed, which is what
makes the missingness not-at-random.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .covariates import CovariateField
from .errors import ConfigError, DataError
from .geometry import (
    PartitionGrid,
    StudyRegion,
    SurveyDesign,
    check_nonoverlap,
)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Natural-scale parameters: log-intensity coefficients, half-normal
    scale phi (map units squared), capture probability theta."""

    beta: np.ndarray
    phi: float
    theta: float

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "beta", beta)
        if not self.phi > 0:
            raise ConfigError("phi must be positive")
        if not 0 < self.theta < 1:
            raise ConfigError("theta must lie strictly in (0, 1)")


@dataclass(frozen=True, eq=False)
class IndividualPattern:
    """Realized locations of all N individuals, observed or not."""

    locations: np.ndarray  # (n, 2)

    @property
    def n(self) -> int:
        return len(self.locations)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """DS detections and CR captures, optionally with true locations.

    ``observed_flags`` carries the per-individual observed/missing label
    from simulation when available; it is None for ingested data.
    """

    ds_unit: np.ndarray          # (n_ds,) unit ids
    ds_distance: np.ndarray      # (n_ds,) recorded distances
    cr_unit: np.ndarray          # (n_cr,) trap ids
    ds_loc: np.ndarray | None = None  # (n_ds, 2) true locations
    cr_loc: np.ndarray | None = None  # (n_cr, 2)
    observed_flags: np.ndarray | None = None

    @property
    def n_ds(self) -> int:
        return len(self.ds_unit)

    @property
    def n_cr(self) -> int:
        return len(self.cr_unit)

    @property
    def n(self) -> int:
        return self.n_ds + self.n_cr

    @property
    def has_locations(self) -> bool:
        return self.ds_loc is not None and self.cr_loc is not None

    @classmethod
    def empty(cls) -> "ObservationSet":
        return cls(
            ds_unit=np.array([], dtype=object),
            ds_distance=np.array([], dtype=float),
            cr_unit=np.array([], dtype=object),
            ds_loc=np.zeros((0, 2)),
            cr_loc=np.zeros((0, 2)),
        )


def intensity(params: ModelParams, field: CovariateField, s) -> float | np.ndarray:
    """lambda(s) = exp(x(s)'beta); vectorized over (n, 2) location arrays."""
    pts = np.atleast_2d(np.asarray(s, dtype=float))
    lam = np.exp(field.covariates_at(pts) @ params.beta)
    if np.asarray(s).ndim == 1:
        return float(lam[0])
    return lam


def integrated_intensity(params: ModelParams, field: CovariateField,
                         region: StudyRegion) -> float:
    """Exact integral of the piecewise-constant intensity over the field
    cells whose centers lie in the region."""
    centers = field.cell_centers()
    keep = region.contains(centers)
    lam = np.exp(field.design_matrix()[keep] @ params.beta)
    return float(lam.sum() * field.cell_area)


def simulate_ippp(params: ModelParams, field: CovariateField,
                  region: StudyRegion, seed) -> IndividualPattern:
    """Draw N ~ Poisson(integral of lambda) and place individuals by
    rejection against the grid maximum of lambda (exact for the
    piecewise-constant field)."""
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    centers = field.cell_centers()
    in_region = region.contains(centers)
    lam_cells = np.exp(field.design_matrix() @ params.beta)
    lam_cells = np.where(in_region, lam_cells, 0.0)
    total = float(lam_cells.sum() * field.cell_area)
    lam_max = float(lam_cells.max())
    n = int(rng.poisson(total))
    if n == 0 or lam_max == 0.0:
        return IndividualPattern(np.zeros((0, 2)))
    accepted = []
    remaining = n
    while remaining > 0:
        m = max(256, int(remaining * 1.5))
        pts = np.column_stack([
            rng.uniform(region.xmin, region.xmax, m),
            rng.uniform(region.ymin, region.ymax, m),
        ])
        ok = region.contains(pts)
        u = rng.uniform(0.0, lam_max, m)
        lam = np.exp(field.covariates_at(pts) @ params.beta)
        ok &= u < lam
        pts = pts[ok]
        take = pts[:remaining]
        if len(take):
            accepted.append(take)
            remaining -= len(take)
    return IndividualPattern(np.vstack(accepted))


def simulate_observation(pattern: IndividualPattern, design: SurveyDesign,
                         params: ModelParams, seed) -> ObservationSet:
    """Thin the pattern through both observation processes.

    Requires a non-overlapping design so each individual is eligible for at
    most one unit. Detected DS individuals record the exact distance to
    their unit; captured CR individuals record the trap id.
    """
    ok, pairs = check_nonoverlap(design)
    if not ok:
        raise ConfigError(f"design has overlapping regions: {pairs}")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    pts = pattern.locations
    flags = np.zeros(pattern.n, dtype=bool)
    ds_unit, ds_dist, ds_loc = [], [], []
    cr_unit, cr_loc = [], []
    for reg in design.regions:
        if pattern.n == 0:
            break
        inside = np.flatnonzero(reg.contains(pts))
        if len(inside) == 0:
            continue
        if reg.is_ds:
            d = reg.distance(pts[inside])
            p = np.exp(-d ** 2 / params.phi)
        else:
            d = None
            p = np.full(len(inside), params.theta)
        hit = rng.random(len(inside)) < p
        taken = inside[hit]
        flags[taken] = True
        if reg.is_ds:
            ds_unit.extend([reg.unit.id] * len(taken))
            ds_dist.extend(d[hit].tolist())
            ds_loc.extend(pts[taken].tolist())
        else:
            cr_unit.extend([reg.unit.id] * len(taken))
            cr_loc.extend(pts[taken].tolist())
    return ObservationSet(
        ds_unit=np.array(ds_unit, dtype=object),
        ds_distance=np.array(ds_dist, dtype=float),
        cr_unit=np.array(cr_unit, dtype=object),
        ds_loc=np.array(ds_loc, dtype=float).reshape(-1, 2),
        cr_loc=np.array(cr_loc, dtype=float).reshape(-1, 2),
        observed_flags=flags,
    )


def degrade_to_partial(obs: ObservationSet) -> ObservationSet:
    """Drop true locations: DS keeps (unit, distance), CR keeps the trap id.
    Idempotent."""
    return replace(obs, ds_loc=None, cr_loc=None)


def aggregate_counts(obs: ObservationSet, partitions: PartitionGrid,
                     design: SurveyDesign) -> np.ndarray:
    """Observed individuals per partition cell.

    Each observation is assigned to the cell containing its unit's
    reference point (the point/trap location, or the transect midpoint),
    so totals are conserved and land only in sampled cells.
    """
    counts = np.zeros(partitions.n_cells, dtype=int)
    ref_cell = {
        r.unit.id: int(partitions.cell_index(r.unit.reference_point[None, :])[0])
        for r in design.regions
    }
    for uid in obs.ds_unit:
        counts[ref_cell[uid]] += 1
    for uid in obs.cr_unit:
        counts[ref_cell[uid]] += 1
    return counts


DS_SOURCE = "ds"
CR_SOURCE = "cr"


def save_observations(obs: ObservationSet, path) -> None:
    """Write `source,unit_id,distance[,x,y]` rows; distance empty for CR."""
    with_loc = obs.has_locations
    with open(path, "w") as fh:
        fh.write("source,unit_id,distance,x,y\n" if with_loc
                 else "source,unit_id,distance\n")
        for i in range(obs.n_ds):
            row = f"{DS_SOURCE},{obs.ds_unit[i]},{float(obs.ds_distance[i])!r}"
            if with_loc:
                row += f",{float(obs.ds_loc[i, 0])!r},{float(obs.ds_loc[i, 1])!r}"
            fh.write(row + "\n")
        for i in range(obs.n_cr):
            row = f"{CR_SOURCE},{obs.cr_unit[i]},"
            if with_loc:
                row += f",{float(obs.cr_loc[i, 0])!r},{float(obs.cr_loc[i, 1])!r}"
            fh.write(row + "\n")


def load_observations(path) -> ObservationSet:
    """Read an observation file; x,y columns are optional."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty observation file")
    header = [h.strip().lower() for h in lines[0].split(",")]
    if header[:3] != ["source", "unit_id", "distance"]:
        raise DataError(f"{path}: expected header starting 'source,unit_id,distance'")
    with_loc = header[3:] == ["x", "y"]
    if not with_loc and len(header) != 3:
        raise DataError(f"{path}: unrecognized columns {header[3:]}")
    ds_unit, ds_dist, ds_loc, cr_unit, cr_loc = [], [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields")
        source, uid, dist_s = parts[:3]
        if source == DS_SOURCE:
            try:
                d = float(dist_s)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad distance {dist_s!r}") from exc
            ds_unit.append(uid)
            ds_dist.append(d)
            if with_loc:
                ds_loc.append((float(parts[3]), float(parts[4])))
        elif source == CR_SOURCE:
            if dist_s:
                raise DataError(f"{path}:{lineno}: CR rows must leave distance empty")
            cr_unit.append(uid)
            if with_loc:
                cr_loc.append((float(parts[3]), float(parts[4])))
        else:
            raise DataError(f"{path}:{lineno}: unknown source {source!r}")
    return ObservationSet(
        ds_unit=np.array(ds_unit, dtype=object),
        ds_distance=np.array(ds_dist, dtype=float),
        cr_unit=np.array(cr_unit, dtype=object),
        ds_loc=np.array(ds_loc, dtype=float).reshape(-1, 2) if with_loc else None,
        cr_loc=np.array(cr_loc, dtype=float).reshape(-1, 2) if with_loc else None,
    )


def save_pattern(pattern: IndividualPattern, path) -> None:
    with open(path, "w") as fh:
        fh.write("x,y\n")
        for x, y in pattern.locations:
            fh.write(f"{float(x)!r},{float(y)!r}\n")


def load_pattern(path) -> IndividualPattern:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0].lower() != "x,y":
        raise DataError(f"{path}: expected header 'x,y'")
    locs = [tuple(float(v) for v in ln.split(",")) for ln in lines[1:]]
    return IndividualPattern(np.array(locs, dtype=float).reshape(-1, 2))
