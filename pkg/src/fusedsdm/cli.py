"""Command-line interface: simulate, fit, experiment, predict-map.

Settings come from a JSON config file plus flag overrides (flags win).
Every command validates its inputs fully before creating any output file.
Exit codes: 0 ok, 2 config error, 3 data error, 4 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .covariates import (
    GPConfig,
    ingest_raster,
    region_of,
    simulate_grf,
    write_raster,
)
from .errors import ConfigError, DataError
from .estimation import FitSettings, fit
from .experiment import StudyConfig, build_study_design, emit_reports, run_study
from .geometry import (
    StudyRegion,
    build_partitions,
    check_nonoverlap,
    load_design,
    save_design,
)
from .likelihoods import (
    SCENARIO_COMPLETE,
    SCENARIO_COS,
    SCENARIO_FARR,
    SCENARIO_ORDER,
    LikelihoodSpec,
    QuadratureSettings,
)
from .pointprocess import (
    ModelParams,
    aggregate_counts,
    load_observations,
    save_observations,
    save_pattern,
    simulate_ippp,
    simulate_observation,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NOCONVERGE = 4


def _load_config(path) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    # A run manifest can be re-fed directly as a config.
    if "config" in cfg and isinstance(cfg["config"], dict):
        cfg = cfg["config"]
    return cfg


def _merge_flags(cfg: dict, args, keys) -> dict:
    merged = dict(cfg)
    for key in keys:
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            merged[key] = val
    return merged


def _require(cfg: dict, key: str):
    if key not in cfg or cfg[key] in (None, ""):
        raise ConfigError(f"missing required setting {key!r}")
    return cfg[key]


def _region_from(cfg: dict) -> StudyRegion:
    bounds = cfg.get("region", [0.0, 0.0, 1.0, 1.0])
    if len(bounds) != 4:
        raise ConfigError("region must be [xmin, ymin, xmax, ymax]")
    return StudyRegion(*map(float, bounds))


def _truth_from(cfg: dict) -> ModelParams:
    t = cfg.get("truth")
    if t is None:
        raise ConfigError("missing 'truth' with beta, phi, theta")
    try:
        return ModelParams(np.asarray(t["beta"], dtype=float),
                           float(t["phi"]), float(t["theta"]))
    except KeyError as exc:
        raise ConfigError(f"truth is missing {exc}") from exc


def _gp_from(cfg: dict) -> GPConfig:
    g = cfg.get("gp", {})
    return GPConfig(
        n_knots=int(g.get("n_knots", 8)),
        kernel_range=float(g.get("kernel_range", 0.15)),
        marginal_sd=float(g.get("marginal_sd", 1.0)),
        seed=int(g.get("seed", 0)),
    )


def _quad_from(cfg: dict) -> QuadratureSettings:
    kwargs = {}
    if cfg.get("quad_spacing") is not None:
        kwargs["spacing"] = float(cfg["quad_spacing"])
    if cfg.get("quad_mode") is not None:
        kwargs["mode"] = cfg["quad_mode"]
    return QuadratureSettings(**kwargs)


def _design_from(cfg: dict, seed: int):
    src = cfg.get("design", "study-default")
    if src == "study-default":
        design = build_study_design(seed)
    else:
        if not os.path.exists(src):
            raise ConfigError(f"design file not found: {src}")
        design = load_design(src)
    ok, pairs = check_nonoverlap(design)
    if not ok:
        raise ConfigError(
            f"design fails check_nonoverlap; overlapping region pairs: {pairs}"
        )
    return design


def _field_from(cfg: dict, region: StudyRegion):
    rasters = cfg.get("raster")
    if rasters:
        paths = rasters if isinstance(rasters, list) else [rasters]
        for p in paths:
            if not os.path.exists(p):
                raise ConfigError(f"raster file not found: {p}")
        return ingest_raster(paths)
    return simulate_grf(region, _gp_from(cfg), float(cfg.get("grid_resolution", 0.01)))


def cmd_simulate(cfg: dict) -> int:
    out_dir = _require(cfg, "out")
    seed = int(cfg.get("seed", 1))
    region = _region_from(cfg)
    truth = _truth_from(cfg)
    design = _design_from(cfg, seed)
    field = _field_from(cfg, region)
    if len(truth.beta) != 1 + field.q:
        raise ConfigError(
            f"truth has {len(truth.beta)} beta coefficients but the field "
            f"provides {field.q} covariates (+1 intercept)"
        )

    rng = np.random.default_rng(seed)
    pattern = simulate_ippp(truth, field, region, rng)
    obs = simulate_observation(pattern, design, truth, rng)

    os.makedirs(out_dir, exist_ok=True)
    save_observations(obs, os.path.join(out_dir, "observations.csv"))
    save_pattern(pattern, os.path.join(out_dir, "pattern.csv"))
    for k in range(field.q):
        name = "covariate.asc" if field.q == 1 else f"covariate{k}.asc"
        write_raster(field, os.path.join(out_dir, name), covariate=k)
    save_design(design, os.path.join(out_dir, "design.csv"))
    _write_manifest(out_dir, "simulate", cfg)
    print(f"simulated N={pattern.n} individuals: "
          f"n_ds={obs.n_ds}, n_cr={obs.n_cr} -> {out_dir}")
    return EXIT_OK


def _spec_from_files(cfg: dict):
    scenario = _require(cfg, "scenario")
    if scenario not in SCENARIO_ORDER:
        raise ConfigError(
            f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIO_ORDER)}"
        )
    obs_path = _require(cfg, "observations")
    if not os.path.exists(obs_path):
        raise ConfigError(f"observations file not found: {obs_path}")
    design = _design_from({"design": _require(cfg, "design")},
                          int(cfg.get("seed", 1)))
    rasters = _require(cfg, "raster")
    field = _field_from({"raster": rasters}, None)
    region = region_of(field)
    obs = load_observations(obs_path)
    quad = _quad_from(cfg)

    if scenario in (SCENARIO_FARR, SCENARIO_COS):
        nx, ny = cfg.get("partitions", [10, 10])
        partitions = build_partitions(region, int(nx), int(ny), design)
        counts = aggregate_counts(obs, partitions, design)
        return LikelihoodSpec(scenario=scenario, design=design, field=field,
                              counts=counts, partitions=partitions,
                              region=region, quadrature=quad)
    return LikelihoodSpec(scenario=scenario, design=design, field=field,
                          obs=obs, region=region, quadrature=quad)


def _fit_settings_from(cfg: dict) -> FitSettings:
    fs = cfg.get("fit", {})
    return FitSettings(
        max_iter=int(fs.get("max_iter", 4000)),
        n_starts=int(fs.get("n_starts", 1)),
        start_seed=int(fs.get("start_seed", 0)),
    )


def cmd_fit(cfg: dict) -> int:
    out_dir = _require(cfg, "out")
    spec = _spec_from_files(cfg)
    result = fit(spec, settings=_fit_settings_from(cfg))

    os.makedirs(out_dir, exist_ok=True)
    report = result.report()
    with open(os.path.join(out_dir, "fit_report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    text = _format_fit_table(cfg["scenario"], result)
    with open(os.path.join(out_dir, "fit_report.txt"), "w") as fh:
        fh.write(text)
    _write_manifest(out_dir, "fit", cfg)
    print(text, end="")
    if not result.converged:
        print("fit did not converge", file=sys.stderr)
        return EXIT_NOCONVERGE
    return EXIT_OK


def _format_fit_table(scenario: str, result) -> str:
    """Estimate and 95% CI width per parameter, one row each."""
    lines = [f"scenario: {scenario}",
             f"converged: {result.converged} ({result.message})",
             f"loglik: {result.loglik:.6f}",
             f"{'parameter':<16}{'estimate':>14}{'ci_width':>14}"]

    def row(name, est, width):
        w = f"{width:.6g}" if width is not None and math.isfinite(width) else "n/a"
        lines.append(f"{name:<16}{est:>14.6g}{w:>14}")

    for i, b in enumerate(result.params.beta):
        width = None
        if result.cis is not None:
            lo, hi = result.cis[f"beta{i}"]
            width = hi - lo
        row(f"beta{i}", float(b), width)
    lam = result.abundance
    if lam is not None and lam.value > 0:
        width = None
        if result.cis is not None:
            width = lam.log_interval[1] - lam.log_interval[0]
        row("log_lambda_bar", math.log(lam.value), width)
    return "\n".join(lines) + "\n"


def cmd_experiment(cfg: dict) -> int:
    out_dir = _require(cfg, "out")
    seed = int(cfg.get("seed", 1))
    design = None
    if cfg.get("design") not in (None, "study-default"):
        design = _design_from(cfg, seed)
    truth = _truth_from(cfg) if "truth" in cfg else ModelParams(
        np.array([9.0, 1.0]), 0.025, 0.2)
    nx, ny = cfg.get("partitions", [10, 10])
    config = StudyConfig(
        truth=truth,
        region=_region_from(cfg),
        design=design,
        gp=_gp_from(cfg),
        grid_resolution=float(cfg.get("grid_resolution", 0.01)),
        partitions_nx=int(nx),
        partitions_ny=int(ny),
        replicates=int(cfg.get("replicates", 200)),
        root_seed=seed,
        workers=int(cfg.get("workers", 1)),
        quadrature=_quad_from(cfg),
        fit_settings=_fit_settings_from(cfg),
    )
    report = run_study(config)
    emit_reports(report, out_dir, manifest={"command": "experiment",
                                            "config": _resolved(cfg, seed)})
    excluded = sum(e["n_excluded"] for e in report.summary)
    print(f"experiment: {config.replicates} replicates x "
          f"{len(config.scenarios)} scenarios -> {out_dir} "
          f"({excluded} fits excluded)")
    return EXIT_OK


def _resolved(cfg: dict, seed: int) -> dict:
    out = dict(cfg)
    out["seed"] = seed
    return out


def cmd_predict_map(cfg: dict) -> int:
    out_path = _require(cfg, "out")
    report_path = _require(cfg, "fit_report")
    if not os.path.exists(report_path):
        raise ConfigError(f"fit report not found: {report_path}")
    rasters = _require(cfg, "raster")
    field = _field_from({"raster": rasters}, None)
    with open(report_path) as fh:
        report = json.load(fh)
    est = report.get("estimates", {})
    beta = []
    for i in range(1 + field.q):
        key = f"beta{i}"
        if key not in est:
            raise DataError(f"{report_path}: missing estimate {key!r}")
        beta.append(float(est[key]))
    beta = np.array(beta)

    lam = np.exp(field.design_matrix() @ beta).reshape(field.ny, field.nx)
    out_field = type(field)(field.x0, field.y0, field.dx, field.dy,
                            lam[:, :, None])
    parent = os.path.dirname(os.path.abspath(out_path))
    os.makedirs(parent, exist_ok=True)
    write_raster(out_field, out_path, covariate=0)
    lam_bar = float(lam.sum() * field.cell_area)
    print(f"predicted intensity raster -> {out_path} (lambda_bar={lam_bar!r})")
    return EXIT_OK


def _write_manifest(out_dir: str, command: str, cfg: dict) -> None:
    manifest = {"version": __version__, "command": command, "config": cfg}
    with open(os.path.join(out_dir, "run_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusedsdm",
        description="Fused distance-sampling / capture-recapture SDM toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "fit", "experiment", "predict-map"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--workers", type=int)
        p.add_argument("--quad-spacing", type=float, dest="quad_spacing")
        if name == "fit":
            p.add_argument("--scenario", choices=SCENARIO_ORDER)
            p.add_argument("--observations")
            p.add_argument("--design")
            p.add_argument("--raster")
        if name == "simulate":
            p.add_argument("--design")
            p.add_argument("--raster")
        if name == "experiment":
            p.add_argument("--replicates", type=int)
        if name == "predict-map":
            p.add_argument("--fit-report", dest="fit_report")
            p.add_argument("--raster")
    return parser


_FLAG_KEYS = ("seed", "out", "workers", "quad_spacing", "scenario",
              "observations", "design", "raster", "replicates", "fit_report")

_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "experiment": cmd_experiment,
    "predict-map": cmd_predict_map,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config)
        cfg = _merge_flags(cfg, args, _FLAG_KEYS)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
