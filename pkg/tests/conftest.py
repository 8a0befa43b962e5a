"""Shared fixtures: a 25-cell toy problem small enough for brute-force
checks, plus the full study configuration used by the acceptance suite."""

import numpy as np
import pytest

from fusedsdm.covariates import CovariateField
from fusedsdm.geometry import (
    SampledRegion,
    StudyRegion,
    SurveyDesign,
    SurveyUnit,
    build_partitions,
)
from fusedsdm.likelihoods import LikelihoodSpec, QuadratureSettings
from fusedsdm.pointprocess import (
    ModelParams,
    aggregate_counts,
    degrade_to_partial,
    simulate_ippp,
    simulate_observation,
)


@pytest.fixture(scope="session")
def toy_region():
    return StudyRegion.unit_square()


@pytest.fixture(scope="session")
def toy_field(toy_region):
    """5x5 covariate grid with a fixed irregular surface."""
    rng = np.random.default_rng(7)
    values = rng.normal(0.0, 1.0, size=(5, 5, 1))
    return CovariateField(0.0, 0.0, 0.2, 0.2, values)


@pytest.fixture(scope="session")
def toy_design():
    """One DS point, one DS transect, one CR trap; regions disjoint."""
    return SurveyDesign((
        SampledRegion(SurveyUnit("pt", "point", np.array([0.3, 0.3])), 0.21),
        SampledRegion(SurveyUnit("tr", "transect",
                                 np.array([[0.1, 0.9], [0.9, 0.9]])), 0.15),
        SampledRegion(SurveyUnit("cr", "trap", np.array([0.7, 0.5])), 0.21),
    ))


@pytest.fixture(scope="session")
def toy_truth():
    return ModelParams(np.array([3.0, 0.7]), 0.02, 0.6)


@pytest.fixture(scope="session")
def toy_partitions(toy_region, toy_design):
    # 3x3 partitions deliberately misaligned with the 5x5 covariate grid so
    # the centroid-covariate and change-of-support means differ.
    return build_partitions(toy_region, 3, 3, toy_design)


@pytest.fixture(scope="session")
def toy_data(toy_region, toy_field, toy_design, toy_truth, toy_partitions):
    """One simulated draw with every data flavor the scenarios need."""
    rng = np.random.default_rng(4)
    pattern = simulate_ippp(toy_truth, toy_field, toy_region, rng)
    obs = simulate_observation(pattern, toy_design, toy_truth, rng)
    assert obs.n_ds >= 3 and obs.n_cr >= 2, "toy seed must produce data"
    partial = degrade_to_partial(obs)
    counts = aggregate_counts(partial, toy_partitions, toy_design)
    return {"pattern": pattern, "obs": obs, "partial": partial,
            "counts": counts}


def make_toy_spec(scenario, toy_field, toy_design, toy_region,
                  toy_partitions, toy_data, native=True):
    quad = QuadratureSettings(mode="native" if native else "spacing")
    if scenario == "complete":
        return LikelihoodSpec(scenario, toy_design, toy_field,
                              obs=toy_data["obs"], region=toy_region,
                              quadrature=quad)
    if scenario in ("aggregated-farr", "aggregated-cos"):
        return LikelihoodSpec(scenario, toy_design, toy_field,
                              counts=toy_data["counts"],
                              partitions=toy_partitions, region=toy_region,
                              quadrature=quad)
    return LikelihoodSpec(scenario, toy_design, toy_field,
                          obs=toy_data["partial"], region=toy_region,
                          quadrature=quad)


@pytest.fixture(scope="session")
def toy_specs(toy_field, toy_design, toy_region, toy_partitions, toy_data):
    return {
        s: make_toy_spec(s, toy_field, toy_design, toy_region,
                         toy_partitions, toy_data)
        for s in ("complete", "aggregated-farr", "aggregated-cos",
                  "fused-region", "fused-distance")
    }
