"""Deterministic demo dataset writer: ``python -m smallarea.demo OUTDIR``.

Generates a small synthetic survey (3x3 area lattice, informative cluster
sampling) and writes the four pipeline input files plus ready-to-run
configuration files for ``sae estimate`` and ``sae simulate``.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import numpy as np

from .io import fmt
from .simulation import (
    REDUCED_COLUMNS,
    SimulationConfig,
    build_population_frame,
    draw_informative_sample,
    lattice_edges,
    realize_population,
)

DEMO_SEED = 20180614


def demo_config() -> SimulationConfig:
    return SimulationConfig(
        grid_size=3,
        strata_per_area=2,
        clusters_per_stratum=8,
        clusters_sampled_per_stratum=4,
        n_replicates=20,
        seed=DEMO_SEED,
    )


def write_demo(outdir) -> dict:
    """Write demo input files; returns the paths that were written."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    config = demo_config()
    frame = build_population_frame(config, config.seed)
    population = realize_population(frame, np.random.SeedSequence([config.seed, 1, 0]))
    sample = draw_informative_sample(population, np.random.SeedSequence([config.seed, 2, 0]))
    columns = list(REDUCED_COLUMNS)

    paths = {}

    units_path = outdir / "units.csv"
    with open(units_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["unit_id", "cluster_id", "stratum_id", "area_id", "weight", "y"]
                        + [f"z{j + 1}" for j in range(len(columns))])
        for i in range(sample.n):
            writer.writerow([
                f"u{i:05d}", f"c{sample.cluster_id[i]:04d}", f"s{sample.stratum_id[i]:03d}",
                f"area{sample.area_id[i]:02d}", fmt(sample.weight[i]),
                int(sample.response[i]),
            ] + [fmt(v) for v in sample.covariates[i, columns]])
    paths["units"] = units_path

    frame_path = outdir / "frame.csv"
    with open(frame_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["cell_id", "area_id", "count"]
                        + [f"z{j + 1}" for j in range(len(columns))])
        for c in range(frame.n_clusters):
            writer.writerow([
                f"c{c:04d}", f"area{frame.cluster_area[c]:02d}", int(frame.sizes[c]),
            ] + [fmt(v) for v in frame.covariates[c, columns]])
    paths["frame"] = frame_path

    adjacency_path = outdir / "adjacency.json"
    area_names = [f"area{a:02d}" for a in range(config.n_areas)]
    edges = [[area_names[i], area_names[j]] for i, j in lattice_edges(config.grid_size)]
    adjacency_path.write_text(json.dumps({"areas": area_names, "edges": edges}, indent=1) + "\n")
    paths["adjacency"] = adjacency_path

    estimate_cfg = outdir / "estimate.ini"
    estimate_cfg.write_text(
        "\n".join([
            "# demo estimation run",
            f"units={units_path}",
            f"frame={frame_path}",
            f"adjacency={adjacency_path}",
            "methods=hajek,ma,sh_iid,sh_spatial,sma_iid,sma_spatial",
            "seed=1",
            "draws=1000",
            f"output_dir={outdir / 'out_estimate'}",
        ]) + "\n"
    )
    paths["estimate_config"] = estimate_cfg

    simulate_cfg = outdir / "simulate.ini"
    simulate_cfg.write_text(
        "\n".join([
            "# demo simulation run (small, a couple of minutes)",
            "grid_size=3",
            "strata_per_area=2",
            "clusters_per_stratum=8",
            "clusters_sampled_per_stratum=4",
            "replicates=20",
            "seed=1",
            f"output_dir={outdir / 'out_simulate'}",
        ]) + "\n"
    )
    paths["simulate_config"] = simulate_cfg
    return paths


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    outdir = argv[0] if argv else "demo"
    paths = write_demo(outdir)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
