"""File ingestion and output writers for the command-line pipeline.

Formats: headered CSV for tabular data, JSON for adjacency
({"areas": [...], "edges": [[a, b], ...]}), and flat key=value files for
run configuration. Errors carry file names and line numbers.
"""

from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path

import numpy as np

from .data import AreaPartition, PopulationFrame, SurveyDataset
from .errors import ValidationError

_Z_COL = re.compile(r"^z(\d+)$")
_X_COL = re.compile(r"^x(\d+)$")


def _covariate_columns(fieldnames, pattern) -> list:
    found = []
    for name in fieldnames:
        m = pattern.match(name)
        if m:
            found.append((int(m.group(1)), name))
    found.sort()
    expected = list(range(1, len(found) + 1))
    if [k for k, _ in found] != expected:
        raise ValidationError(
            f"covariate columns must be numbered consecutively from 1; found {[n for _, n in found]}"
        )
    return [name for _, name in found]


def _parse_float(raw, path, line, column, positive=False):
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ValidationError(f"{path}:{line}: column {column!r} is not a number: {raw!r}") from None
    if not math.isfinite(value):
        raise ValidationError(f"{path}:{line}: column {column!r} must be finite")
    if positive and value <= 0:
        raise ValidationError(f"{path}:{line}: column {column!r} must be positive, got {raw!r}")
    return value


def _read_rows(path, required):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"input file does not exist: {path}")
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise ValidationError(f"{path}: file is empty")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise ValidationError(f"{path}: missing required columns: {', '.join(missing)}")
        rows = [(reader.line_num, row) for row in reader]
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return rows, reader.fieldnames


def read_units(path) -> SurveyDataset:
    """Read units.csv: unit_id, cluster_id, stratum_id, area_id, weight, y, z1..zp."""
    required = ["unit_id", "cluster_id", "stratum_id", "area_id", "weight", "y"]
    rows, fieldnames = _read_rows(path, required)
    z_cols = _covariate_columns(fieldnames, _Z_COL)

    unit_id, area_id, cluster_id, stratum_id = [], [], [], []
    weight, response, covariates = [], [], []
    seen = {}
    for line, row in rows:
        uid = row["unit_id"]
        if uid in seen:
            raise ValidationError(
                f"{path}:{line}: duplicate unit_id {uid!r} (first seen on line {seen[uid]})"
            )
        seen[uid] = line
        y_raw = (row["y"] or "").strip()
        if y_raw not in ("0", "1"):
            raise ValidationError(f"{path}:{line}: response y must be 0 or 1, got {y_raw!r}")
        unit_id.append(uid)
        area_id.append(row["area_id"])
        cluster_id.append(row["cluster_id"])
        stratum_id.append(row["stratum_id"])
        weight.append(_parse_float(row["weight"], path, line, "weight", positive=True))
        response.append(int(y_raw))
        covariates.append([_parse_float(row[c], path, line, c) for c in z_cols])
    return SurveyDataset(
        unit_id=np.array(unit_id, dtype=object),
        area_id=np.array(area_id, dtype=object),
        cluster_id=np.array(cluster_id, dtype=object),
        stratum_id=np.array(stratum_id, dtype=object),
        weight=np.array(weight),
        response=np.array(response),
        covariates=np.array(covariates, dtype=float).reshape(len(unit_id), len(z_cols)),
    )


def read_frame(path) -> PopulationFrame:
    """Read frame.csv: cell_id, area_id, count, z1..zp."""
    rows, fieldnames = _read_rows(path, ["cell_id", "area_id", "count"])
    z_cols = _covariate_columns(fieldnames, _Z_COL)
    cell_id, area_id, count, covariates = [], [], [], []
    seen = {}
    for line, row in rows:
        cid = row["cell_id"]
        if cid in seen:
            raise ValidationError(f"{path}:{line}: duplicate cell_id {cid!r}")
        seen[cid] = line
        cell_id.append(cid)
        area_id.append(row["area_id"])
        count.append(_parse_float(row["count"], path, line, "count", positive=True))
        covariates.append([_parse_float(row[c], path, line, c) for c in z_cols])
    return PopulationFrame(
        cell_id=np.array(cell_id, dtype=object),
        area_id=np.array(area_id, dtype=object),
        count=np.array(count),
        covariates=np.array(covariates, dtype=float).reshape(len(cell_id), len(z_cols)),
    )


def read_adjacency(path):
    """Read adjacency.json: {"areas": [...], "edges": [[a, b], ...]}."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"input file does not exist: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(payload, dict) or "areas" not in payload or "edges" not in payload:
        raise ValidationError(f'{path}: expected an object with "areas" and "edges"')
    areas = [str(a) for a in payload["areas"]]
    edges = []
    for edge in payload["edges"]:
        if not isinstance(edge, (list, tuple)) or len(edge) != 2:
            raise ValidationError(f"{path}: edge {edge!r} is not a pair")
        edges.append((str(edge[0]), str(edge[1])))
    return areas, edges


def read_area_covariates(path):
    """Read area_covariates.csv: area_id, x1..xq. Returns (area_ids, matrix)."""
    rows, fieldnames = _read_rows(path, ["area_id"])
    x_cols = _covariate_columns(fieldnames, _X_COL)
    if not x_cols:
        raise ValidationError(f"{path}: no covariate columns x1..xq found")
    area_id, values = [], []
    for line, row in rows:
        area_id.append(row["area_id"])
        values.append([_parse_float(row[c], path, line, c) for c in x_cols])
    return np.array(area_id, dtype=object), np.array(values, dtype=float)


def parse_config(path) -> dict:
    """Parse a flat key=value configuration file ('#' starts a comment)."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file does not exist: {path}")
    config = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValidationError(f"{path}:{lineno}: empty key")
        if key in config:
            raise ValidationError(f"{path}:{lineno}: duplicate key {key!r}")
        config[key] = value.strip()
    return config


def config_get(config: dict, key: str, cast, default=None, required: bool = False):
    if key not in config or config[key] == "":
        if required:
            raise ValidationError(f"config is missing required key {key!r}")
        return default
    raw = config[key]
    if cast is bool:
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"config key {key!r} must be boolean, got {raw!r}")
    try:
        return cast(raw)
    except (TypeError, ValueError):
        raise ValidationError(f"config key {key!r} has invalid value {raw!r}") from None


def fmt(value) -> str:
    """Deterministic number formatting for CSV output."""
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".12g")


def write_estimates_csv(path, rows) -> None:
    """rows: iterables of (area_id, method, estimate, se, lower90, upper90, n_a, flags)."""
    with open(path, "w", newline="") as handle:
        handle.write(
            "# se is the design-based standard error for direct and model-assisted"
            " methods and the posterior standard deviation for smoothed methods\n"
        )
        writer = csv.writer(handle)
        writer.writerow(
            ["area_id", "method", "estimate", "se", "lower90", "upper90", "n_a", "flags"]
        )
        for area_id, method, est, se, lo, hi, n_a, flags in rows:
            writer.writerow([
                area_id, method, fmt(est), fmt(se), fmt(lo), fmt(hi),
                int(n_a), ";".join(sorted(flags)),
            ])


def write_metrics_csv(path, metrics) -> None:
    """Table-1-shaped report: RMSE, MAE, and MIL scaled by 100, coverage in percent."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["Method", "RMSE", "MAE", "90% Cov.", "MIL"])
        for name in metrics.methods:
            cov = metrics.cov90[name]
            mil = metrics.mil[name]
            writer.writerow([
                name,
                fmt(100.0 * metrics.rmse[name]),
                fmt(100.0 * metrics.mae[name]),
                fmt(100.0 * cov) if cov is not None else "",
                fmt(100.0 * mil) if mil is not None else "",
            ])


def write_replicate_log_csv(path, metrics) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["replicate", "method", "rmse", "mae", "cov90", "mil"])
        for name in metrics.methods:
            table = metrics.per_replicate[name]
            for r in range(table.shape[0]):
                rmse, mae, cov, mil = table[r]
                writer.writerow([r, name, fmt(rmse), fmt(mae), fmt(cov), fmt(mil)])


def build_partition(units=None, frame=None, adjacency_areas=None) -> AreaPartition:
    """Area universe for a run: adjacency order when given, otherwise the
    sorted union of areas seen in the units and frame files."""
    if adjacency_areas is not None:
        ids = np.array(list(adjacency_areas), dtype=object)
        partition = AreaPartition(ids)
        for source, name in ((units, "units"), (frame, "frame")):
            if source is not None:
                for aid in np.unique(source.area_id):
                    if aid not in partition._index:
                        raise ValidationError(
                            f"{name} file references area {aid!r} absent from the adjacency"
                        )
        return partition
    seen = []
    for source in (units, frame):
        if source is not None:
            seen.extend(source.area_id.tolist())
    if not seen:
        raise ValidationError("no areas found in inputs")
    return AreaPartition(np.array(sorted(set(seen), key=str), dtype=object))
