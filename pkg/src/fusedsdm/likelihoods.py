"""The five competing log-likelihoods.

Scenarios, all sharing one working parameter vector (beta, log phi,
logit theta):

* ``complete``       — benchmark fit to data with exact individual
  locations: sum of log lambda(u_i) q(u_i) minus the detection-weighted
  intensity integrated over all sampled regions.
* ``aggregated-farr``— Poisson counts per sampled partition cell with the
  covariate frozen at the cell centroid and an effective sampled measure
  (integrated half-normal for DS, theta times capture area for CR).
* ``aggregated-cos`` — change-of-support Poisson counts: the cell mean
  integrates lambda(s) q(s) over the sampled parts of the cell, letting
  the covariate vary within the cell.
* ``fused-region``   — partial-location fusion: each observed individual
  contributes the average of lambda q over its unit's whole region.
* ``fused-distance`` — partial-location fusion using recorded distances:
  each DS individual contributes the average of lambda over the circle
  (point) or parallel lines (transect) at its recorded distance.

Evaluation is pure: every function is a deterministic function of the
working parameters and the prepared data tables, with observation sums
reduced in a fixed canonical order so results are reproducible bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import gammaln

from .covariates import CovariateField, region_of
from .errors import ConfigError, DataError
from .geometry import (
    LINE_SUPPORT,
    ObservedLocationSupport,
    PartitionGrid,
    StudyRegion,
    SurveyDesign,
    area_rule,
    line_rule,
    native_area_rule,
)
from .pointprocess import ModelParams, ObservationSet

SCENARIO_COMPLETE = "complete"
SCENARIO_FARR = "aggregated-farr"
SCENARIO_COS = "aggregated-cos"
SCENARIO_FUSED_REGION = "fused-region"
SCENARIO_FUSED_DISTANCE = "fused-distance"

# Paper-order scenario labels 1..5.
SCENARIO_ORDER = (
    SCENARIO_COMPLETE,
    SCENARIO_FARR,
    SCENARIO_COS,
    SCENARIO_FUSED_REGION,
    SCENARIO_FUSED_DISTANCE,
)

# Observation-term integrals are clamped here before taking logs, turning
# impossible configurations into large finite penalties instead of NaNs.
_FLOOR = 1e-300
_BIG_NEGATIVE = -1e300


def _sigmoid(x: float) -> float:
    if x >= 0:
        v = 1.0 / (1.0 + math.exp(-x))
    else:
        e = math.exp(x)
        v = e / (1.0 + e)
    # Keep strictly inside (0, 1) so ModelParams stays constructible even
    # when the optimizer probes extreme logits.
    return min(max(v, 1e-300), 1.0 - 1e-16)


def _exp_clip(x: float) -> float:
    return math.exp(min(x, 700.0))


@dataclass(frozen=True, eq=False)
class WorkingParams:
    """Unconstrained optimizer scale: beta as-is, log phi, logit theta."""

    beta: np.ndarray
    log_phi: float
    logit_theta: float

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "beta", beta)

    def to_model(self) -> ModelParams:
        return ModelParams(self.beta.copy(), _exp_clip(self.log_phi),
                           _sigmoid(self.logit_theta))

    @classmethod
    def from_model(cls, params: ModelParams) -> "WorkingParams":
        theta = params.theta
        return cls(params.beta.copy(), math.log(params.phi),
                   math.log(theta) - math.log1p(-theta))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, [self.log_phi, self.logit_theta]])

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "WorkingParams":
        v = np.asarray(v, dtype=float)
        if len(v) < 3:
            raise ConfigError("working vector needs >= 1 beta plus log_phi, logit_theta")
        return cls(v[:-2], float(v[-2]), float(v[-1]))

    @property
    def names(self) -> list[str]:
        return [f"beta{i}" for i in range(len(self.beta))] + ["log_phi", "logit_theta"]


@dataclass(frozen=True)
class QuadratureSettings:
    """How region integrals are discretized.

    ``spacing`` mode lays a midpoint grid per region at
    ``spacing_fraction * radius`` (or the absolute ``spacing`` override);
    ``native`` mode reuses the covariate grid's own cell centers so the
    integrals coincide with exact cell sums.
    """

    mode: str = "spacing"
    spacing_fraction: float = 0.05
    spacing: float | None = None
    line_nodes: int = 128

    def __post_init__(self):
        if self.mode not in ("spacing", "native"):
            raise ConfigError(f"unknown quadrature mode {self.mode!r}")
        if self.spacing is not None and self.spacing <= 0:
            raise ConfigError("quadrature spacing must be positive")
        if self.line_nodes < 8:
            raise ConfigError("line rules need at least 8 nodes")


@dataclass(eq=False)
class LikelihoodSpec:
    """Everything a scenario log-likelihood needs besides the parameters."""

    scenario: str
    design: SurveyDesign
    field: CovariateField
    obs: ObservationSet | None = None
    counts: np.ndarray | None = None
    partitions: PartitionGrid | None = None
    region: StudyRegion | None = None
    quadrature: QuadratureSettings = dc_field(default_factory=QuadratureSettings)

    def __post_init__(self):
        if self.scenario not in SCENARIO_ORDER:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.region is None:
            self.region = region_of(self.field)
        self._validate()
        self._prep = None

    def _validate(self):
        s = self.scenario
        if s in (SCENARIO_FARR, SCENARIO_COS):
            if self.counts is None or self.partitions is None:
                raise DataError(f"{s} needs per-cell counts and a partition grid")
            counts = np.asarray(self.counts)
            if len(counts) != self.partitions.n_cells:
                raise DataError("counts length does not match the partition grid")
            if (counts < 0).any():
                raise DataError("negative counts rejected")
            if (counts[~self.partitions.sampled] != 0).any():
                raise DataError("nonzero count in an unsampled partition")
        else:
            if self.obs is None:
                raise DataError(f"{s} needs an ObservationSet")
            if s == SCENARIO_COMPLETE and not self.obs.has_locations:
                raise DataError(
                    "complete-data likelihood needs true locations "
                    "(x,y columns are missing from the observations)"
                )
            if s == SCENARIO_FUSED_DISTANCE:
                for uid, d in zip(self.obs.ds_unit, self.obs.ds_distance):
                    r = self.design.region_by_id(uid)
                    if d > r.radius:
                        raise DataError(
                            f"recorded distance {d} exceeds truncation radius "
                            f"{r.radius} of unit {uid!r}"
                        )
            # Every referenced unit must exist (raises DataError otherwise).
            for uid in list(self.obs.ds_unit) + list(self.obs.cr_unit):
                self.design.region_by_id(uid)
            for uid in self.obs.ds_unit:
                if not self.design.region_by_id(uid).is_ds:
                    raise DataError(f"DS observation references non-DS unit {uid!r}")
            for uid in self.obs.cr_unit:
                if self.design.region_by_id(uid).is_ds:
                    raise DataError(f"CR observation references non-trap unit {uid!r}")

    def prepared(self) -> "_Prepared":
        if self._prep is None:
            self._prep = _Prepared(self)
        return self._prep


def _region_rule(reg, field, region, quad):
    if quad.mode == "native":
        return native_area_rule(reg, field.x0, field.y0, field.dx, field.dy,
                                within=region)
    spacing = quad.spacing if quad.spacing is not None \
        else quad.spacing_fraction * reg.radius
    return area_rule(reg, spacing, within=region)


def _ds_sort_order(obs: ObservationSet, unit_pos: dict) -> np.ndarray:
    """Canonical DS observation order: by unit, then distance, then location."""
    upos = np.array([unit_pos[u] for u in obs.ds_unit])
    if obs.ds_loc is not None and len(obs.ds_loc):
        keys = (obs.ds_loc[:, 1], obs.ds_loc[:, 0], obs.ds_distance, upos)
    else:
        keys = (obs.ds_distance, upos)
    return np.lexsort(keys)


def _cr_sort_order(obs: ObservationSet, unit_pos: dict) -> np.ndarray:
    upos = np.array([unit_pos[u] for u in obs.cr_unit])
    if obs.cr_loc is not None and len(obs.cr_loc):
        keys = (obs.cr_loc[:, 1], obs.cr_loc[:, 0], upos)
    else:
        keys = (upos,)
    return np.lexsort(keys)


class _Prepared:
    """Quadrature tables and canonical observation arrays for one spec."""

    def __init__(self, spec: LikelihoodSpec):
        design, field, region, quad = (spec.design, spec.field,
                                       spec.region, spec.quadrature)
        self.X = field.design_matrix()
        self.n_beta = 1 + field.q

        self.ds_regions = design.ds_regions
        self.cr_regions = design.cr_regions
        self.ds_pos = {r.unit.id: k for k, r in enumerate(self.ds_regions)}
        self.cr_pos = {r.unit.id: k for k, r in enumerate(self.cr_regions)}

        nodes, cells, w, d2, ridx = [], [], [], [], []
        self.ds_measure = np.zeros(len(self.ds_regions))
        for k, reg in enumerate(self.ds_regions):
            rule = _region_rule(reg, field, region, quad)
            nodes.append(rule.nodes)
            cells.append(field.cell_index(rule.nodes))
            w.append(rule.weights)
            d2.append(reg.distance(rule.nodes) ** 2)
            ridx.append(np.full(len(rule.nodes), k))
            self.ds_measure[k] = rule.total
        self.ds_nodes = np.vstack(nodes) if nodes else np.zeros((0, 2))
        self.ds_cell = np.concatenate(cells) if cells else np.zeros(0, dtype=int)
        self.ds_w = np.concatenate(w) if w else np.zeros(0)
        self.ds_d2 = np.concatenate(d2) if d2 else np.zeros(0)
        self.ds_ridx = np.concatenate(ridx) if ridx else np.zeros(0, dtype=int)

        nodes, cells, w, ridx = [], [], [], []
        self.cr_measure = np.zeros(len(self.cr_regions))
        for k, reg in enumerate(self.cr_regions):
            rule = _region_rule(reg, field, region, quad)
            nodes.append(rule.nodes)
            cells.append(field.cell_index(rule.nodes))
            w.append(rule.weights)
            ridx.append(np.full(len(rule.nodes), k))
            self.cr_measure[k] = rule.total
        self.cr_nodes = np.vstack(nodes) if nodes else np.zeros((0, 2))
        self.cr_cell = np.concatenate(cells) if cells else np.zeros(0, dtype=int)
        self.cr_w = np.concatenate(w) if w else np.zeros(0)
        self.cr_ridx = np.concatenate(ridx) if ridx else np.zeros(0, dtype=int)

        scenario, obs = spec.scenario, spec.obs
        if scenario in (SCENARIO_FARR, SCENARIO_COS):
            self._prepare_aggregated(spec)
        else:
            ds_order = _ds_sort_order(obs, self.ds_pos)
            cr_order = _cr_sort_order(obs, self.cr_pos)
            self.ds_obs_ridx = np.array(
                [self.ds_pos[u] for u in obs.ds_unit[ds_order]], dtype=int)
            self.cr_obs_ridx = np.array(
                [self.cr_pos[u] for u in obs.cr_unit[cr_order]], dtype=int)
            self.ds_obs_d2 = obs.ds_distance[ds_order] ** 2
            self.ds_counts = np.bincount(self.ds_obs_ridx,
                                         minlength=len(self.ds_regions))
            self.cr_counts = np.bincount(self.cr_obs_ridx,
                                         minlength=len(self.cr_regions))
            if scenario == SCENARIO_COMPLETE:
                self.ds_obs_X = spec.field.covariates_at(obs.ds_loc[ds_order]) \
                    if obs.n_ds else np.zeros((0, self.n_beta))
                self.cr_obs_X = spec.field.covariates_at(obs.cr_loc[cr_order]) \
                    if obs.n_cr else np.zeros((0, self.n_beta))
            if scenario == SCENARIO_FUSED_DISTANCE:
                self._prepare_line_supports(spec, ds_order)

    def _prepare_line_supports(self, spec, ds_order):
        obs, field = spec.obs, spec.field
        cells, frac, oidx = [], [], []
        for i, k in enumerate(ds_order):
            reg = spec.design.region_by_id(obs.ds_unit[k])
            support = ObservedLocationSupport(LINE_SUPPORT, reg,
                                              float(obs.ds_distance[k]))
            rule = line_rule(support, spec.quadrature.line_nodes)
            # Supports are intersected with the study region (individuals
            # only exist inside it) and the uniform density renormalized.
            keep = spec.region.contains(rule.nodes)
            if not keep.any():
                raise DataError(
                    f"observed-location support for unit {reg.unit.id!r} at "
                    f"distance {obs.ds_distance[k]} lies outside the region"
                )
            nodes = rule.nodes[keep]
            w = rule.weights[keep]
            cells.append(field.cell_index(nodes))
            frac.append(w / w.sum())
            oidx.append(np.full(len(nodes), i))
        self.line_cell = np.concatenate(cells) if cells else np.zeros(0, dtype=int)
        self.line_frac = np.concatenate(frac) if frac else np.zeros(0)
        self.line_oidx = np.concatenate(oidx) if oidx else np.zeros(0, dtype=int)

    def _prepare_aggregated(self, spec):
        parts = spec.partitions
        self.sampled_cells = np.flatnonzero(parts.sampled)
        pos = np.full(parts.n_cells, -1, dtype=int)
        pos[self.sampled_cells] = np.arange(len(self.sampled_cells))
        self.n_sampled = len(self.sampled_cells)
        self.cell_counts = np.asarray(spec.counts)[self.sampled_cells].astype(float)

        # Per-node position in the sampled-cell list; -1 marks mass falling
        # in unsampled partitions, which the aggregated models never see.
        self.ds_ppos = pos[parts.cell_index(self.ds_nodes)] \
            if len(self.ds_nodes) else np.zeros(0, dtype=int)
        self.cr_ppos = pos[parts.cell_index(self.cr_nodes)] \
            if len(self.cr_nodes) else np.zeros(0, dtype=int)

        if spec.scenario == SCENARIO_FARR:
            centers = parts.cell_centers()[self.sampled_cells]
            self.centroid_X = spec.field.covariates_at(centers)
            keep = self.cr_ppos >= 0
            self.cr_area_by_cell = np.bincount(
                self.cr_ppos[keep], weights=self.cr_w[keep],
                minlength=self.n_sampled)

    # ---- shared evaluation pieces -------------------------------------

    def lambda_cells(self, beta: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.X @ beta)

    def ds_region_integrals(self, lam: np.ndarray, phi: float) -> np.ndarray:
        """Integral of lambda * exp(-d^2/phi) over every DS region."""
        if len(self.ds_w) == 0:
            return np.zeros(0)
        with np.errstate(over="ignore", invalid="ignore"):
            contrib = self.ds_w * lam[self.ds_cell] * np.exp(-self.ds_d2 / phi)
        return np.bincount(self.ds_ridx, weights=contrib,
                           minlength=len(self.ds_regions))

    def cr_region_integrals(self, lam: np.ndarray) -> np.ndarray:
        """Integral of lambda over every CR region."""
        if len(self.cr_w) == 0:
            return np.zeros(0)
        contrib = self.cr_w * lam[self.cr_cell]
        return np.bincount(self.cr_ridx, weights=contrib,
                           minlength=len(self.cr_regions))


@dataclass(frozen=True)
class LoglikTerms:
    """Observation-sum and exposure halves: loglik = observation - exposure."""

    observation: float
    exposure: float

    @property
    def total(self) -> float:
        v = self.observation - self.exposure
        return v if np.isfinite(v) else _BIG_NEGATIVE


def _params(wp: WorkingParams):
    phi = _exp_clip(wp.log_phi)
    theta = _sigmoid(wp.logit_theta)
    return phi, theta


def loglik_terms(wp: WorkingParams, spec: LikelihoodSpec) -> LoglikTerms:
    """Observation/exposure decomposition of the requested scenario."""
    p = spec.prepared()
    phi, theta = _params(wp)
    lam = p.lambda_cells(wp.beta)
    scenario = spec.scenario

    if scenario in (SCENARIO_FARR, SCENARIO_COS):
        mu = _aggregated_means(p, wp.beta, lam, phi, theta, scenario)
        n = p.cell_counts
        obs_term = float(np.sum(n * np.log(np.maximum(mu, _FLOOR)))
                         - gammaln(n + 1.0).sum())
        return LoglikTerms(obs_term, float(mu.sum()))

    I_ds = p.ds_region_integrals(lam, phi)
    J_cr = p.cr_region_integrals(lam)
    exposure = float(I_ds.sum() + theta * J_cr.sum())

    if scenario == SCENARIO_COMPLETE:
        obs_term = 0.0
        if len(p.ds_obs_X):
            lam_obs = np.maximum(np.exp(p.ds_obs_X @ wp.beta), _FLOOR)
            obs_term += float(np.log(lam_obs).sum() - (p.ds_obs_d2 / phi).sum())
        if len(p.cr_obs_X):
            lam_obs = np.maximum(np.exp(p.cr_obs_X @ wp.beta), _FLOOR)
            obs_term += float(np.log(lam_obs).sum()
                              + len(p.cr_obs_X) * math.log(theta))
        return LoglikTerms(obs_term, exposure)

    # CR observation terms are shared by both fused scenarios.
    with np.errstate(invalid="ignore"):
        cr_avg = np.maximum(theta * J_cr / p.cr_measure, _FLOOR)
        obs_term = float(np.sum(p.cr_counts * np.log(cr_avg)))

    if scenario == SCENARIO_FUSED_REGION:
        ds_avg = np.maximum(I_ds / p.ds_measure, _FLOOR)
        obs_term += float(np.sum(p.ds_counts * np.log(ds_avg)))
        return LoglikTerms(obs_term, exposure)

    if scenario == SCENARIO_FUSED_DISTANCE:
        if len(p.line_oidx):
            mean_lam = np.bincount(p.line_oidx,
                                   weights=p.line_frac * lam[p.line_cell],
                                   minlength=len(p.ds_obs_d2))
            obs_term += float(np.log(np.maximum(mean_lam, _FLOOR)).sum()
                              - (p.ds_obs_d2 / phi).sum())
        return LoglikTerms(obs_term, exposure)

    raise ConfigError(f"unknown scenario {scenario!r}")


def _aggregated_means(p: _Prepared, beta, lam, phi, theta, scenario) -> np.ndarray:
    ds_keep = p.ds_ppos >= 0
    if scenario == SCENARIO_COS:
        mu = np.zeros(p.n_sampled)
        if ds_keep.any():
            with np.errstate(over="ignore"):
                contrib = (p.ds_w * lam[p.ds_cell]
                           * np.exp(-p.ds_d2 / phi))[ds_keep]
            mu += np.bincount(p.ds_ppos[ds_keep], weights=contrib,
                              minlength=p.n_sampled)
        cr_keep = p.cr_ppos >= 0
        if cr_keep.any():
            contrib = (p.cr_w * lam[p.cr_cell])[cr_keep]
            mu += theta * np.bincount(p.cr_ppos[cr_keep], weights=contrib,
                                      minlength=p.n_sampled)
        return mu
    # Farr-style: centroid covariate times effective sampled measure.
    with np.errstate(over="ignore"):
        e_ds = np.bincount(p.ds_ppos[ds_keep],
                           weights=(p.ds_w * np.exp(-p.ds_d2 / phi))[ds_keep],
                           minlength=p.n_sampled) if ds_keep.any() \
            else np.zeros(p.n_sampled)
        lam_centroid = np.exp(p.centroid_X @ beta)
    return lam_centroid * (e_ds + theta * p.cr_area_by_cell)


def loglik(wp: WorkingParams, spec: LikelihoodSpec) -> float:
    """Log-likelihood of the spec's scenario at the working parameters."""
    return loglik_terms(wp, spec).total


def loglik_complete(wp: WorkingParams, spec: LikelihoodSpec) -> float:
    _require(spec, SCENARIO_COMPLETE)
    return loglik(wp, spec)


def loglik_aggregated_farr(wp: WorkingParams, spec: LikelihoodSpec) -> float:
    _require(spec, SCENARIO_FARR)
    return loglik(wp, spec)


def loglik_aggregated_cos(wp: WorkingParams, spec: LikelihoodSpec) -> float:
    _require(spec, SCENARIO_COS)
    return loglik(wp, spec)


def loglik_fused_region(wp: WorkingParams, spec: LikelihoodSpec) -> float:
    _require(spec, SCENARIO_FUSED_REGION)
    return loglik(wp, spec)


def loglik_fused_distance(wp: WorkingParams, spec: LikelihoodSpec) -> float:
    _require(spec, SCENARIO_FUSED_DISTANCE)
    return loglik(wp, spec)


def _require(spec: LikelihoodSpec, scenario: str) -> None:
    if spec.scenario != scenario:
        raise ConfigError(f"spec is for scenario {spec.scenario!r}, not {scenario!r}")


def phi_saturation_knee(spec: LikelihoodSpec, rel: float = 1e-6) -> float | None:
    """Upper working-scale knee for the half-normal scale.

    Beyond log_phi = log(max d^2 / rel) every detection probability in the
    data and quadrature tables equals 1 up to ``rel``, so the likelihood is
    numerically constant in phi; fits past the knee are equi-optimal with
    the knee itself. None when the spec involves no DS distances.
    """
    p = spec.prepared()
    m = 0.0
    if len(p.ds_d2):
        m = max(m, float(p.ds_d2.max()))
    d2 = getattr(p, "ds_obs_d2", None)
    if d2 is not None and len(d2):
        m = max(m, float(d2.max()))
    if m <= 0.0:
        return None
    return math.log(m / rel)
