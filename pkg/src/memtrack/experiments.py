"""Multi-seed experiment runners behind ``compare``, ``sweep`` and ``pvs``.

Every (policy, seed) run is independent, so runs may execute in a process
pool; rows are sorted into a canonical order before they are returned.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Dict, Iterable, List, Sequence, Tuple

import pandas as pd

from .metrics import DEFAULT_RESOLUTION, REPORT_COLUMNS, MetricsReport, density_gap, evaluate, f_boundary, j_score
from .policy import PolicyConfig, PolicyKind
from .scenario import GroundTruth, ScenarioConfig, archetype, density, simulate
from .timing import timed
from .tracker import FrameResult, RunRecord, TrackerConfig, TrackingMode, run, run_one_by_one

logger = logging.getLogger(__name__)

POLICY_ORDER = (PolicyKind.COUPLED, PolicyKind.DECOUPLED)
COMPARE_COLUMNS = ["archetype", "kind", "policy", "seed"] + list(REPORT_COLUMNS)
PVS_VARIANTS = ("one_by_one", "coupled", "decoupled")
PVS_COLUMNS = ["archetype", "kind", "variant", "seed", "J", "F", "JF"]


def tracker_for(policy: PolicyKind, seed: int, mode: TrackingMode = TrackingMode.PCS) -> TrackerConfig:
    return TrackerConfig(policy=PolicyConfig(kind=policy), mode=mode, encoder_noise_seed=seed)


def run_scenario(scenario: ScenarioConfig, tracker: TrackerConfig) -> Tuple[RunRecord, GroundTruth]:
    truth, _, frames = simulate(scenario)
    return run(frames, tracker, scenario.seed), truth


def _map(func: Callable[[Any], Any], tasks: Sequence[Any], workers: int) -> List[Any]:
    if workers <= 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks))


def _policy_task(task: Tuple[str, str, int, str, int]) -> Dict[str, Any]:
    name, policy, seed, mode, resolution = task
    record, truth = run_scenario(archetype(name, seed), tracker_for(PolicyKind(policy), seed, TrackingMode(mode)))
    report = evaluate(record, truth, resolution=resolution)
    return dict(archetype=name, kind="run", policy=policy, seed=seed, **report.as_row())


def _summary_rows(rows: pd.DataFrame, name: str) -> List[Dict[str, Any]]:
    means = {}
    for policy in POLICY_ORDER:
        subset = rows[rows["policy"] == policy.value]
        means[policy] = {column: float(subset[column].mean()) for column in REPORT_COLUMNS}
    summary = [
        dict(archetype=name, kind="mean", policy=policy.value, seed="", **means[policy]) for policy in POLICY_ORDER
    ]
    delta = {
        column: means[PolicyKind.DECOUPLED][column] - means[PolicyKind.COUPLED][column] for column in REPORT_COLUMNS
    }
    summary.append(dict(archetype=name, kind="delta", policy="decoupled-coupled", seed="", **delta))
    return summary


@timed
def compare(
    name: str,
    seeds: int,
    mode: TrackingMode = TrackingMode.PCS,
    resolution: int = DEFAULT_RESOLUTION,
    workers: int = 1,
) -> pd.DataFrame:
    """Both policies over seeds ``0..seeds-1``: one row per run, then means and delta."""
    archetype(name, 0)
    tasks = [(name, policy.value, seed, TrackingMode(mode).value, resolution)
             for policy in POLICY_ORDER for seed in range(seeds)]
    rows = sorted(_map(_policy_task, tasks, workers), key=lambda row: (row["policy"], row["seed"]))
    table = pd.DataFrame(rows, columns=COMPARE_COLUMNS)
    summary = pd.DataFrame(_summary_rows(table, name), columns=COMPARE_COLUMNS) if rows else None
    if summary is not None:
        table = pd.concat([table.astype({"seed": object}), summary], ignore_index=True)
    logger.info({"event": "compare_complete", "archetype": name, "seeds": seeds, "rows": len(table)})
    return table


def _density_task(task: Tuple[int, str, int, str, int]) -> Tuple[int, str, int, MetricsReport]:
    level, policy, seed, mode, resolution = task
    record, truth = run_scenario(density(level, seed), tracker_for(PolicyKind(policy), seed, TrackingMode(mode)))
    return level, policy, seed, evaluate(record, truth, resolution=resolution)


@timed
def density_sweep(
    densities: Iterable[int],
    seeds: int,
    mode: TrackingMode = TrackingMode.PCS,
    resolution: int = DEFAULT_RESOLUTION,
    workers: int = 1,
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Gap table per density level plus the per-run rows it was computed from."""
    tasks = [(int(level), policy.value, seed, TrackingMode(mode).value, resolution)
             for level in densities for policy in POLICY_ORDER for seed in range(seeds)]
    results = sorted(_map(_density_task, tasks, workers), key=lambda item: item[:3])
    gaps = density_gap((level, policy, report) for level, policy, _, report in results)
    runs = pd.DataFrame(
        [dict(archetype=f"density({level})", kind="run", policy=policy, seed=seed, **report.as_row())
         for level, policy, seed, report in results],
        columns=COMPARE_COLUMNS,
    )
    logger.info({"event": "sweep_complete", "densities": list(gaps["N"]), "seeds": seeds})
    return gaps, runs


def merge_one_by_one(records: Dict[int, RunRecord], config: TrackerConfig) -> RunRecord:
    """Combine isolated single-target runs into one record, track id = slot."""
    runs = [records[slot] for slot in sorted(records)]
    if not runs:
        return RunRecord(config=config)
    frames = []
    for results in zip(*(record.frames for record in runs)):
        outputs = []
        for result in results:
            for output in result.outputs:
                decision = output.decision
                if decision is not None:
                    decision = decision.model_copy(update={"track_id": output.slot})
                outputs.append(output.model_copy(update={"track_id": output.slot, "decision": decision}))
        frames.append(FrameResult(
            t=results[0].t,
            presence=results[0].presence,
            outputs=tuple(sorted(outputs, key=lambda output: output.track_id)),
            new_track_ids=tuple(sorted(output.slot for result in results
                                       for output in result.outputs if output.track_id in result.new_track_ids)),
        ))
    return RunRecord(config=config, scenario_seed=runs[0].scenario_seed, frames=tuple(frames))


def _pvs_task(task: Tuple[str, str, int, int]) -> Dict[str, Any]:
    name, variant, seed, resolution = task
    scenario = archetype(name, seed)
    truth, _, frames = simulate(scenario)
    if variant == "one_by_one":
        config = tracker_for(PolicyKind.DECOUPLED, seed, TrackingMode.PVS)
        record = merge_one_by_one(run_one_by_one(frames, config, scenario.seed), config)
    else:
        record = run(frames, tracker_for(PolicyKind(variant), seed, TrackingMode.PVS), scenario.seed)
    j = j_score(record, truth)
    f = f_boundary(record, truth, resolution)
    return dict(archetype=name, kind="run", variant=variant, seed=seed, J=j, F=f, JF=(j + f) / 2.0)


@timed
def pvs_gap(name: str, seeds: int, resolution: int = DEFAULT_RESOLUTION, workers: int = 1) -> pd.DataFrame:
    """J, F and J&F of one-by-one against simultaneous PVS tracking."""
    archetype(name, 0)
    tasks = [(name, variant, seed, resolution) for variant in PVS_VARIANTS for seed in range(seeds)]
    order = {variant: index for index, variant in enumerate(PVS_VARIANTS)}
    rows = sorted(_map(_pvs_task, tasks, workers), key=lambda row: (order[row["variant"]], row["seed"]))
    table = pd.DataFrame(rows, columns=PVS_COLUMNS).astype({"seed": object})
    if rows:
        summary = []
        for variant in PVS_VARIANTS:
            subset = table[table["variant"] == variant]
            summary.append(dict(
                archetype=name, kind="mean", variant=variant, seed="",
                **{column: float(subset[column].mean()) for column in ("J", "F", "JF")},
            ))
        table = pd.concat([table, pd.DataFrame(summary, columns=PVS_COLUMNS)], ignore_index=True)
    logger.info({"event": "pvs_gap_complete", "archetype": name, "seeds": seeds})
    return table
