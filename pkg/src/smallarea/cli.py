"""Config-driven command-line pipeline: estimate, simulate, diagnose.

Exit codes: 0 success, 1 validation failure, 2 numerical failure. The
SAE_LOG_LEVEL environment variable controls log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import FLAG_NOT_DESIGN_CONSISTENT
from .direct import hajek_estimate, hajek_variance
from .errors import NumericalError, ValidationError
from .io import (
    build_partition,
    config_get,
    parse_config,
    read_adjacency,
    read_area_covariates,
    read_frame,
    read_units,
    write_estimates_csv,
    write_metrics_csv,
    write_replicate_log_csv,
)
from .model_assisted import logit_with_delta, ma_estimate, ma_variance, working_residuals
from .simulation import SimulationConfig, design_interval, run_study
from .smoothing import smooth_direct, smooth_ma
from .spatial import build_spatial_structure
from .working import fit_working_model

log = logging.getLogger("smallarea")

ALL_METHODS = ("hajek", "ma", "sh_iid", "sh_spatial", "sma_iid", "sma_spatial")


def _setup_logging() -> None:
    level = os.environ.get("SAE_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_inputs(config: dict, need_frame: bool, need_adjacency: bool):
    units = read_units(config_get(config, "units", str, required=True))
    frame = None
    if "frame" in config and config["frame"]:
        frame = read_frame(config["frame"])
    elif need_frame:
        raise ValidationError("model-assisted methods require a frame= input")
    adjacency = None
    if "adjacency" in config and config["adjacency"]:
        adjacency = read_adjacency(config["adjacency"])
    elif need_adjacency:
        raise ValidationError("spatial methods require an adjacency= input")
    if frame is not None and frame.p != units.p:
        raise ValidationError(
            f"frame has {frame.p} covariates but units file has {units.p}"
        )
    partition = build_partition(
        units, frame, adjacency[0] if adjacency is not None else None
    )
    structure = None
    if adjacency is not None:
        structure = build_spatial_structure(np.array(adjacency[0], dtype=object),
                                            adjacency[1])
    X = None
    if "area_covariates" in config and config["area_covariates"]:
        ids, values = read_area_covariates(config["area_covariates"])
        idx = {aid: k for k, aid in enumerate(ids.tolist())}
        missing = [aid for aid in partition.area_ids.tolist() if aid not in idx]
        if missing:
            raise ValidationError(
                f"area_covariates file is missing areas: {missing[:5]}"
            )
        order = [idx[aid] for aid in partition.area_ids.tolist()]
        X = np.column_stack([np.ones(partition.n_areas), values[order]])
    log.info("ingested %d units, %d areas%s", units.n, partition.n_areas,
             "" if frame is None else f", {frame.n_cells} frame cells")
    return units, frame, partition, structure, X


def _smoothing_params(config: dict) -> dict:
    return dict(
        pc_sigma_threshold=config_get(config, "pc_sigma_u", float, 5.0),
        pc_sigma_tail=config_get(config, "pc_sigma_alpha", float, 0.01),
        pc_phi_threshold=config_get(config, "pc_phi_u", float, 0.5),
        pc_phi_tail=config_get(config, "pc_phi_alpha", float, 2.0 / 3.0),
        n_sigma=config_get(config, "grid_sigma", int, 41),
        n_phi=config_get(config, "grid_phi", int, 41),
        n_draws=config_get(config, "draws", int, 1000),
    )


def _grid_payload(result):
    return {
        "log_sigma": [float(v) for v in result.grid.log_sigma],
        "phi": [None if not np.isfinite(v) else float(v) for v in result.grid.phi],
        "posterior_weight": [float(v) for v in result.grid.weights],
    }


def run_estimate(config: dict, output_dir: Path) -> None:
    methods = config_get(config, "methods", str, ",".join(ALL_METHODS))
    methods = [m.strip() for m in methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise ValidationError(f"unknown methods: {', '.join(unknown)}")
    seed = config_get(config, "seed", int, 0)
    clustered = config_get(config, "clustered", bool, True)
    need_frame = any(m in ("ma", "sma_iid", "sma_spatial") for m in methods)
    need_adjacency = any(m.endswith("_spatial") for m in methods)
    units, frame, partition, structure, X = _load_inputs(config, need_frame, need_adjacency)
    params = _smoothing_params(config)

    diagnostics = {"n_units": int(units.n), "n_areas": int(partition.n_areas),
                   "methods": methods, "seed": seed}
    rows = []

    def emit(est_set, method, lower, upper, se):
        for a in range(partition.n_areas):
            rows.append((
                partition.area_ids[a], method, est_set[0][a], se[a],
                lower[a], upper[a], est_set[1][a], est_set[2][a],
            ))

    hajek = None
    if any(m in ("hajek", "sh_iid", "sh_spatial") for m in methods):
        hajek = logit_with_delta(
            hajek_variance(units, hajek_estimate(units, partition), clustered=clustered)
        )
    ma = None
    if need_frame:
        model = fit_working_model(units)
        ma = ma_estimate(units, frame, model, partition)
        ma = logit_with_delta(
            ma_variance(working_residuals(units, model), ma, clustered=clustered)
        )
        diagnostics["working_model"] = {
            "coefficients": [float(v) for v in model.coefficients_],
            "converged": bool(model.converged_),
            "iterations": int(model.n_iter_),
            "weighted_deviance": float(model.deviance_),
            "weighted_score_norm": float(model.score_norm_),
        }
        diagnostics["clamped_areas"] = [
            str(partition.area_ids[a]) for a in range(partition.n_areas)
            if "clamped" in ma.flags[a]
        ]

    for method in methods:
        if method == "hajek":
            lo, hi = design_interval(hajek)
            emit((hajek.estimate, hajek.sample_size, hajek.flags), "hajek",
                 lo, hi, np.sqrt(hajek.variance))
        elif method == "ma":
            lo, hi = design_interval(ma)
            emit((ma.estimate, ma.sample_size, ma.flags), "ma", lo, hi,
                 np.sqrt(ma.variance))
        else:
            smoother = smooth_direct if method.startswith("sh") else smooth_ma
            base = hajek if method.startswith("sh") else ma
            spatial = method.endswith("_spatial")
            result = smoother(base, X=X, structure=structure if spatial else None,
                              random_state=seed, **params)
            emit((result.median, base.sample_size, result.flags), method,
                 result.lower90, result.upper90, result.sd)
            diagnostics[f"grid_{method}"] = _grid_payload(result)

    output_dir.mkdir(parents=True, exist_ok=True)
    write_estimates_csv(output_dir / "estimates.csv", rows)
    (output_dir / "diagnostics.json").write_text(json.dumps(diagnostics, indent=2) + "\n")
    print(f"wrote {output_dir / 'estimates.csv'} ({len(rows)} rows)")


def _simulation_config(config: dict) -> SimulationConfig:
    seed = config_get(config, "seed", int, required=True)
    return SimulationConfig(
        grid_size=config_get(config, "grid_size", int, 5),
        strata_per_area=config_get(config, "strata_per_area", int, 2),
        clusters_per_stratum=config_get(config, "clusters_per_stratum", int, 20),
        clusters_sampled_per_stratum=config_get(config, "clusters_sampled_per_stratum", int, 10),
        cluster_size_mean=config_get(config, "cluster_size_mean", float, 15.0),
        area_effect_sd=config_get(config, "area_effect_sd", float, 0.1),
        cluster_effect_sd=config_get(config, "cluster_effect_sd", float, 0.5),
        oversample_ratio=config_get(config, "oversample_ratio", float, 3.0),
        oversample_quantile=config_get(config, "oversample_quantile", float, 0.75),
        n_replicates=config_get(config, "replicates", int, 200),
        seed=seed,
        n_jobs=config_get(config, "n_jobs", int, 1),
        n_draws=config_get(config, "draws", int, 1000),
        include_full_sma=config_get(config, "include_full_sma", bool, False),
    )


def run_simulate(config: dict, output_dir: Path) -> None:
    sim_config = _simulation_config(config)
    metrics = run_study(sim_config)
    output_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(output_dir / "metrics.csv", metrics)
    write_replicate_log_csv(output_dir / "replicates.csv", metrics)
    if metrics.failed_replicates:
        print(f"skipped {len(metrics.failed_replicates)} failed replicates",
              file=sys.stderr)
    print(f"wrote {output_dir / 'metrics.csv'} "
          f"({metrics.n_replicates} replicates, {len(metrics.methods)} methods)")


def run_diagnose(config: dict, output_dir: Path) -> None:
    units, frame, partition, structure, X = _load_inputs(
        config, need_frame=False, need_adjacency=False
    )
    report = {
        "n_units": int(units.n),
        "n_covariates": int(units.p),
        "n_areas": int(partition.n_areas),
        "areas_without_sample": [
            str(aid) for aid, n in zip(
                partition.area_ids,
                np.bincount(partition.indexer(units.area_id), minlength=partition.n_areas),
            ) if n == 0
        ],
        "weight_range": [float(units.weight.min()), float(units.weight.max())],
        "response_mean": float(units.response.mean()),
    }
    if frame is not None:
        report["n_frame_cells"] = int(frame.n_cells)
        report["frame_count_total"] = float(frame.count.sum())
    if units.p > 0:
        model = fit_working_model(units)
        report["working_model"] = {
            "coefficients": [float(v) for v in model.coefficients_],
            "converged": bool(model.converged_),
            "iterations": int(model.n_iter_),
            "weighted_score_norm": float(model.score_norm_),
        }
    if structure is not None:
        report["spatial"] = {
            "n_edges": int(structure.edges.shape[0]),
            "scaling_factor": float(structure.scaling_factor),
            "marginal_variance_geometric_mean": float(
                np.exp(np.mean(np.log(np.diag(structure.scaled_covariance))))
            ),
        }
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / "diagnostics.json"
    path.write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report, indent=2))


def main(argv=None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(
        prog="sae",
        description="Small area estimation: direct, model-assisted, and smoothed estimators",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("estimate", "run the estimation pipeline on survey data files"),
        ("simulate", "run the design-based simulation study"),
        ("diagnose", "validate inputs and report diagnostics"),
    ):
        cmd = sub.add_parser(name, help=helptext)
        cmd.add_argument("--config", required=True, help="flat key=value configuration file")

    args = parser.parse_args(argv)
    try:
        config = parse_config(args.config)
        output_dir = Path(config_get(config, "output_dir", str, "."))
        if args.command == "estimate":
            run_estimate(config, output_dir)
        elif args.command == "simulate":
            run_simulate(config, output_dir)
        else:
            run_diagnose(config, output_dir)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
