"""Experiment driver: validated JSON configs, seeded Monte-Carlo batches over
(sweep value, run) cells, deterministic CSV outputs, and plot-ready data
extraction for the reference figures.

Result files (rows.csv, aggregate.csv) are byte-identical across repeated
executions with the same seed and any worker count; wall times go to a
separate timing.csv sidecar so they cannot break that guarantee.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .engine import EngineConfig, GridCache, chi_from_db, run as run_sbl
from .metrics import OspaConfig, detection_stats, ospa
from .nomp import NompConfig, nomp_run, tau_from_db
from .scenarios import (
    CrossingTracksSpec,
    ObjectSpec,
    Scenario,
    crossing_tracks_scenario,
    multi_radar_scenarios,
    polar_grid,
    synthesize,
    xy_grid,
)
from .arrays import mimo_3x3_geometry

SCHEMA_VERSION = 1
BUILTIN_SCENARIOS = ("crossing_tracks", "single_object", "four_object_pathloss")
ALGORITHMS = ("sbl", "nomp")
WORKER_ENV_VAR = "SBLFUSION_WORKERS"

OSPA_CFG = OspaConfig(order_p=2.0, cutoff_c=10.0)
DETECTION_GATE = 5.0

ROW_COLUMNS = ["algorithm", "threshold_db", "n_sensors", "time_step", "run",
               "k_hat", "ospa", "miss", "false_alarms", "lambda_hat",
               "components"]
AGGREGATE_COLUMNS = ["algorithm", "threshold_db", "n_sensors", "time_step",
                     "runs", "mean_ospa", "mean_k_hat", "p_miss",
                     "mean_false_alarms"]


class ConfigError(ValueError):
    """Invalid experiment configuration; ``errors`` lists every violation."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(self.errors))


class SchemaError(ValueError):
    """Aggregate file does not expose the columns a figure needs."""


@dataclass
class ExperimentConfig:
    name: str
    scenario: object  # builtin name or inline dict
    algorithms: List[str]
    thresholds_db: List[float]
    nomp_thresholds_db: List[float]
    sensor_counts: List[int]
    time_steps: Optional[List[int]]
    runs: int
    seed: int
    sweep: str
    snr_db: float
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "name": self.name,
            "scenario": self.scenario,
            "algorithms": list(self.algorithms),
            "thresholds_db": list(self.thresholds_db),
            "nomp_thresholds_db": list(self.nomp_thresholds_db),
            "sensor_counts": list(self.sensor_counts),
            "time_steps": None if self.time_steps is None else list(self.time_steps),
            "runs": self.runs,
            "seed": self.seed,
            "sweep": self.sweep,
            "snr_db": self.snr_db,
        }


_KNOWN_KEYS = {"schema_version", "name", "scenario", "algorithms",
               "thresholds_db", "nomp_thresholds_db", "sensor_counts",
               "time_steps", "runs", "seed", "sweep", "snr_db"}


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def normalize_config(raw: dict) -> dict:
    """Validate a raw config dict, fill defaults, and return the canonical
    form. Raises ConfigError listing every violation."""
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError(["configuration must be a JSON object"])
    unknown = sorted(set(raw) - _KNOWN_KEYS)
    for key in unknown:
        errors.append("unknown key: %r" % key)
    if raw.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        errors.append("unsupported schema_version %r" % raw.get("schema_version"))

    scenario = raw.get("scenario")
    is_crossing = scenario == "crossing_tracks"
    max_sensors = 1
    if isinstance(scenario, str):
        if scenario not in BUILTIN_SCENARIOS:
            errors.append("unknown scenario %r (built-ins: %s)"
                          % (scenario, ", ".join(BUILTIN_SCENARIOS)))
        elif scenario != "crossing_tracks":
            max_sensors = 4
    elif isinstance(scenario, dict):
        if "sensors" not in scenario or "objects" not in scenario:
            errors.append("inline scenario needs 'sensors' and 'objects'")
        else:
            max_sensors = len(scenario["sensors"])
    else:
        errors.append("scenario must be a built-in name or an inline object")

    algorithms = raw.get("algorithms", ["sbl"])
    if (not isinstance(algorithms, list) or not algorithms
            or any(a not in ALGORITHMS for a in algorithms)):
        errors.append("algorithms must be a nonempty subset of %s" % (ALGORITHMS,))
        algorithms = ["sbl"]

    thresholds = raw.get("thresholds_db", [])
    if (not isinstance(thresholds, list) or not thresholds
            or not all(_is_number(x) for x in thresholds)):
        errors.append("thresholds_db must be a nonempty list of numbers")
        thresholds = [10.0]
    nomp_thresholds = raw.get("nomp_thresholds_db", thresholds)
    if (not isinstance(nomp_thresholds, list)
            or len(nomp_thresholds) != len(thresholds)
            or not all(_is_number(x) for x in nomp_thresholds)):
        errors.append("nomp_thresholds_db must pair with thresholds_db by index")
        nomp_thresholds = thresholds

    default_counts = [1] if is_crossing else [max_sensors]
    sensor_counts = raw.get("sensor_counts", default_counts)
    if (not isinstance(sensor_counts, list) or not sensor_counts
            or not all(isinstance(c, int) and not isinstance(c, bool)
                       and 1 <= c <= max_sensors for c in sensor_counts)):
        errors.append("sensor_counts must be a nonempty list of ints in [1, %d]"
                      % max_sensors)
        sensor_counts = default_counts
    if "nomp" in algorithms and any(c != 1 for c in sensor_counts):
        errors.append("nomp supports a single sensor only (sensor_counts must be [1])")

    time_steps = raw.get("time_steps")
    if is_crossing and time_steps is None:
        lo, hi = CrossingTracksSpec().t_range
        time_steps = list(range(lo, hi + 1))
    if time_steps is not None and (
            not isinstance(time_steps, list) or not time_steps
            or not all(isinstance(t, int) and not isinstance(t, bool)
                       for t in time_steps)):
        errors.append("time_steps must be a nonempty list of integers")
        time_steps = [0]
    if time_steps is not None and not is_crossing and not isinstance(scenario, dict):
        errors.append("time_steps only apply to the crossing_tracks scenario")

    runs = raw.get("runs")
    if not isinstance(runs, int) or isinstance(runs, bool) or runs < 1:
        errors.append("runs must be an integer >= 1")
        runs = 1
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        errors.append("seed must be a nonnegative integer")
        seed = 0

    sweep = raw.get("sweep", "time_step" if is_crossing else "threshold")
    if sweep not in ("time_step", "threshold", "sensor_count"):
        errors.append("sweep must be one of time_step, threshold, sensor_count")
        sweep = "threshold"

    snr_db = raw.get("snr_db", 30.0)
    if not _is_number(snr_db):
        errors.append("snr_db must be a finite number")
        snr_db = 30.0

    if errors:
        raise ConfigError(errors)
    return {
        "schema_version": SCHEMA_VERSION,
        "name": raw.get("name", "experiment"),
        "scenario": scenario,
        "algorithms": list(algorithms),
        "thresholds_db": [float(x) for x in thresholds],
        "nomp_thresholds_db": [float(x) for x in nomp_thresholds],
        "sensor_counts": list(sensor_counts),
        "time_steps": None if time_steps is None else list(time_steps),
        "runs": runs,
        "seed": seed,
        "sweep": sweep,
        "snr_db": float(snr_db),
    }


def load_config(path) -> ExperimentConfig:
    """Load and validate an experiment configuration file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(["%s: JSON parse error at line %d column %d: %s"
                               % (path, exc.lineno, exc.colno, exc.msg)]) from None
    return ExperimentConfig(**normalize_config(raw))


def _geometry_from_dict(entry: dict, path_loss: bool):
    position = entry["position"]
    if "aim_at" in entry:
        delta = np.asarray(entry["aim_at"], dtype=float) - np.asarray(position, float)
        broadside = math.atan2(delta[1], delta[0])
    else:
        broadside = math.radians(entry.get("broadside_deg", 90.0))
    return mimo_3x3_geometry(sensor_position=position, broadside=broadside,
                             path_loss_enabled=path_loss)


def _scenario_from_dict(spec: dict, n_sensors: int, seed) -> Scenario:
    path_loss = bool(spec.get("path_loss", False))
    sensors = [_geometry_from_dict(s, path_loss) for s in spec["sensors"][:n_sensors]]
    objects = [ObjectSpec(o["position"], o["snr_db"],
                          o.get("reference_distance"))
               for o in spec["objects"]]
    surveillance = tuple(tuple(pair) for pair in spec["surveillance"])
    if spec.get("grid_type", "xy") == "polar":
        grid = polar_grid(sensors[0])
    else:
        grid = xy_grid(surveillance, spacing=float(spec.get("grid_spacing", 2.0)),
                       exclude=[s.sensor_position for s in sensors])
    return Scenario(sensors=sensors, objects=objects,
                    noise_precision=np.full(len(sensors),
                                            float(spec.get("noise_precision", 1.0))),
                    seed=seed, surveillance=surveillance, grid=grid,
                    name="inline")


def build_scenario(config_dict: dict, n_sensors: int, time_step: Optional[int],
                   run_seed) -> Scenario:
    """Materialize the scenario for one Monte-Carlo cell."""
    scenario = config_dict["scenario"]
    if scenario == "crossing_tracks":
        return crossing_tracks_scenario(
            t=0 if time_step is None else time_step,
            snr_db=config_dict["snr_db"], seed=run_seed)
    if scenario in ("single_object", "four_object_pathloss"):
        return multi_radar_scenarios(scenario, n_sensors=n_sensors, seed=run_seed)
    return _scenario_from_dict(scenario, n_sensors, run_seed)


@dataclass
class ResultRow:
    """One Monte-Carlo run of one sweep cell."""

    algorithm: str
    threshold_db: float
    n_sensors: int
    time_step: Optional[int]
    run: int
    k_hat: int
    ospa: float
    miss: bool
    false_alarms: int
    lambda_hat: List[float]
    components: List[dict]
    wall_time: float = float("nan")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def row_to_csv(row: ResultRow) -> List[str]:
    return [
        row.algorithm,
        _fmt(row.threshold_db),
        str(row.n_sensors),
        "" if row.time_step is None else str(row.time_step),
        str(row.run),
        str(row.k_hat),
        _fmt(row.ospa),
        "1" if row.miss else "0",
        str(row.false_alarms),
        json.dumps(row.lambda_hat),
        json.dumps(row.components),
    ]


def row_from_csv(record: dict) -> ResultRow:
    return ResultRow(
        algorithm=record["algorithm"],
        threshold_db=float(record["threshold_db"]),
        n_sensors=int(record["n_sensors"]),
        time_step=None if record["time_step"] == "" else int(record["time_step"]),
        run=int(record["run"]),
        k_hat=int(record["k_hat"]),
        ospa=float(record["ospa"]),
        miss=record["miss"] == "1",
        false_alarms=int(record["false_alarms"]),
        lambda_hat=json.loads(record["lambda_hat"]),
        components=json.loads(record["components"]),
    )


# Per-worker caches for precomputed grid atoms; keyed by the scenario cell so
# parallel Monte-Carlo runs reuse them without coordination.
_GRID_CACHES = {}


def _scenario_key(config_dict: dict, n_sensors: int) -> str:
    return json.dumps({"scenario": config_dict["scenario"],
                       "snr_db": config_dict["snr_db"],
                       "n_sensors": n_sensors}, sort_keys=True)


def _grid_cache_for(scenario: Scenario, key: str) -> GridCache:
    cache = _GRID_CACHES.get(key)
    if cache is None:
        cache = GridCache(scenario.grid, scenario.sensors)
        _GRID_CACHES[key] = cache
    return cache


def _scenario_seed(base_seed: int, time_step: Optional[int]):
    if time_step is None:
        return (base_seed,)
    return (base_seed, time_step + (1 << 20))


def execute_task(config_dict: dict, algorithm: str, threshold_db: float,
                 n_sensors: int, time_step: Optional[int], run_index: int) -> ResultRow:
    """Run one (cell, run) task and score it."""
    seed = _scenario_seed(config_dict["seed"], time_step)
    scenario = build_scenario(config_dict, n_sensors, time_step, seed)
    cache = _grid_cache_for(scenario, _scenario_key(config_dict, n_sensors))
    obs = synthesize(scenario, run_index)
    started = time.perf_counter()
    if algorithm == "sbl":
        cfg = EngineConfig(threshold_chi=chi_from_db(threshold_db),
                           grid=scenario.grid, bounds=scenario.surveillance)
        est = run_sbl(obs, cfg, grid_cache=cache)
        locations = est.locations
        lambda_hat = [float(v) for v in est.noise_precisions]
        components = []
        for i, comp in enumerate(est.components):
            amp = [[float(np.real(est.amp_mean[l][i])),
                    float(np.imag(est.amp_mean[l][i]))]
                   for l in range(obs.n_sensors)]
            components.append({"x": float(comp.location[0]),
                               "y": float(comp.location[1]),
                               "gamma": float(comp.gamma), "amp": amp})
    else:
        cfg = NompConfig(tau=tau_from_db(threshold_db), grid=scenario.grid,
                         bounds=scenario.surveillance)
        est = nomp_run(obs.snapshots[0], scenario.sensors[0], cfg,
                       noise_precision=float(scenario.noise_precision[0]),
                       grid_cache=cache)
        locations = est.locations
        lambda_hat = [float(scenario.noise_precision[0])]
        components = [{"x": float(loc[0]), "y": float(loc[1]), "gamma": None,
                       "amp": [[float(np.real(a)), float(np.imag(a))]]}
                      for loc, a in zip(est.locations, est.amplitudes)]
    wall = time.perf_counter() - started
    truth = scenario.truth
    stats = detection_stats(truth, locations, gate=DETECTION_GATE)
    return ResultRow(
        algorithm=algorithm,
        threshold_db=float(threshold_db),
        n_sensors=n_sensors,
        time_step=time_step,
        run=run_index,
        k_hat=int(locations.shape[0]),
        ospa=ospa(truth, locations, OSPA_CFG),
        miss=stats.miss,
        false_alarms=stats.false_alarms,
        lambda_hat=lambda_hat,
        components=components,
        wall_time=wall,
    )


def _task_star(args):
    return execute_task(*args)


def enumerate_tasks(config: ExperimentConfig):
    """Deterministic task order over the full sweep product."""
    tasks = []
    steps = [None] if config.time_steps is None else config.time_steps
    cfg = config.to_dict()
    for algorithm in config.algorithms:
        thresholds = (config.thresholds_db if algorithm == "sbl"
                      else config.nomp_thresholds_db)
        for threshold in thresholds:
            for n_sensors in config.sensor_counts:
                for step in steps:
                    for run_index in range(config.runs):
                        tasks.append((cfg, algorithm, threshold, n_sensors,
                                      step, run_index))
    return tasks


def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is None:
        env = os.environ.get(WORKER_ENV_VAR)
        workers = int(env) if env else 1
    return max(1, workers)


def aggregate_rows(rows: List[ResultRow]) -> List[dict]:
    """Per-cell means in deterministic (task) order."""
    order = []
    groups = {}
    for row in rows:
        key = (row.algorithm, row.threshold_db, row.n_sensors, row.time_step)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)
    out = []
    for key in order:
        cell = groups[key]
        out.append({
            "algorithm": key[0],
            "threshold_db": key[1],
            "n_sensors": key[2],
            "time_step": key[3],
            "runs": len(cell),
            "mean_ospa": float(np.mean([r.ospa for r in cell])),
            "mean_k_hat": float(np.mean([r.k_hat for r in cell])),
            "p_miss": float(np.mean([1.0 if r.miss else 0.0 for r in cell])),
            "mean_false_alarms": float(np.mean([r.false_alarms for r in cell])),
        })
    return out


def write_rows_csv(rows: List[ResultRow], path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROW_COLUMNS)
        for row in rows:
            writer.writerow(row_to_csv(row))


def write_aggregate_csv(aggregates: List[dict], path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_COLUMNS)
        for agg in aggregates:
            writer.writerow([
                agg["algorithm"],
                _fmt(agg["threshold_db"]),
                str(agg["n_sensors"]),
                "" if agg["time_step"] is None else str(agg["time_step"]),
                str(agg["runs"]),
                _fmt(agg["mean_ospa"]),
                _fmt(agg["mean_k_hat"]),
                _fmt(agg["p_miss"]),
                _fmt(agg["mean_false_alarms"]),
            ])


def write_timing_csv(rows: List[ResultRow], path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["algorithm", "threshold_db", "n_sensors", "time_step",
                         "run", "wall_time"])
        for row in rows:
            writer.writerow([row.algorithm, _fmt(row.threshold_db),
                             str(row.n_sensors),
                             "" if row.time_step is None else str(row.time_step),
                             str(row.run), _fmt(row.wall_time)])


def run_experiment(config: ExperimentConfig, output_dir,
                   workers: Optional[int] = None) -> dict:
    """Execute the full sweep and persist per-run and aggregate results.

    Returns the paths of the written files.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    tasks = enumerate_tasks(config)
    workers = resolve_workers(workers)
    if workers > 1:
        chunksize = max(1, len(tasks) // (workers * 8))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_task_star, tasks, chunksize=chunksize))
    else:
        rows = [_task_star(task) for task in tasks]
    aggregates = aggregate_rows(rows)
    paths = {
        "rows": output_dir / "rows.csv",
        "aggregate": output_dir / "aggregate.csv",
        "timing": output_dir / "timing.csv",
    }
    write_rows_csv(rows, paths["rows"])
    write_aggregate_csv(aggregates, paths["aggregate"])
    write_timing_csv(rows, paths["timing"])
    return paths


def simulate_observations(config: ExperimentConfig, output_dir) -> list:
    """Write the raw per-run observations of every sweep cell as NPZ files."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    written = []
    steps = [None] if config.time_steps is None else config.time_steps
    cfg = config.to_dict()
    for n_sensors in config.sensor_counts:
        for step in steps:
            seed = _scenario_seed(config.seed, step)
            scenario = build_scenario(cfg, n_sensors, step, seed)
            for run_index in range(config.runs):
                obs = synthesize(scenario, run_index)
                tag = "L%d_t%s_r%d" % (n_sensors,
                                       "NA" if step is None else str(step),
                                       run_index)
                path = output_dir / ("obs_%s.npz" % tag)
                arrays = {"y%d" % l: obs.snapshots[l]
                          for l in range(obs.n_sensors)}
                np.savez(path, truth=scenario.truth, **arrays)
                written.append(path)
    return written


_FIGURE_NEEDS = {
    "fig3": ["time_step", "algorithm", "threshold_db", "mean_ospa", "mean_k_hat"],
    "fig4": ["threshold_db", "n_sensors", "p_miss", "mean_false_alarms",
             "mean_ospa"],
    "fig5": ["threshold_db", "n_sensors", "mean_ospa"],
}

_FIGURE_PANELS = {
    "fig3": [("ospa", "mean_ospa"), ("k_hat", "mean_k_hat")],
    "fig4": [("p_miss", "p_miss"), ("n_fa", "mean_false_alarms"),
             ("ospa", "mean_ospa")],
    "fig5": [("ospa", "mean_ospa")],
}


def emit_plot_data(aggregate_path, figure: str, output_path) -> list:
    """Extract a tall-format (figure, panel, x, series, y) table for one
    figure from an aggregate CSV."""
    if figure not in _FIGURE_NEEDS:
        raise ValueError("unknown figure %r (choose fig3, fig4, fig5)" % figure)
    with open(aggregate_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        columns = reader.fieldnames or []
        records = list(reader)
    missing = [c for c in _FIGURE_NEEDS[figure] if c not in columns]
    if missing:
        raise SchemaError("aggregate file lacks columns: %s" % ", ".join(missing))
    if not records:
        raise SchemaError("aggregate file has no data rows")
    out = []
    for record in records:
        if figure == "fig3":
            if record["time_step"] == "":
                raise SchemaError("fig3 needs time_step values")
            x = record["time_step"]
            series = "%s %g dB" % (record["algorithm"].upper(),
                                   float(record["threshold_db"]))
        else:
            x = record["threshold_db"]
            series = "L=%s" % record["n_sensors"]
        for panel, column in _FIGURE_PANELS[figure]:
            out.append((figure, panel, x, series, record[column]))
    with open(output_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["figure", "panel", "x", "series", "y"])
        writer.writerows(out)
    return out
