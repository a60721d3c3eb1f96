"""Evaluation kernels: region and boundary similarity, identity switches, HOTA.

Predicted detections are the track outputs with a visible mask; ground-truth
detections are the identities with visibility above zero.
"""
import itertools
import logging
import math
from collections import defaultdict
from typing import Annotated, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from annotated_types import Ge
from scipy.optimize import linear_sum_assignment

from .core import MaskGeom, Score, ValueModel, disc_intersection
from .errors import FrameRangeMismatch, InstanceTooLarge, MissingPolicy
from .policy import PolicyKind
from .raster import PixelGrid, boundary_f, tolerance_radius
from .scenario import GroundTruth
from .tracker import RunRecord

logger = logging.getLogger(__name__)

DEFAULT_ALPHAS = tuple(round(0.05 * k, 2) for k in range(1, 20))
DEFAULT_RESOLUTION = 128
ORACLE_LIMITS = {"tracks": 4, "frames": 6, "identities": 4}


def iou(a: MaskGeom, b: MaskGeom) -> float:
    """Disc IoU with the shared area and both areas scaled by visible fraction."""
    inter = min(a.visible_fraction, b.visible_fraction) * disc_intersection(a, b)
    union = a.visible_fraction * a.area + b.visible_fraction * b.area - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


class FrameDetections(NamedTuple):
    t: int
    truth_ids: Tuple[int, ...]
    truth_masks: Tuple[MaskGeom, ...]
    pred_ids: Tuple[int, ...]
    pred_masks: Tuple[MaskGeom, ...]
    similarity: np.ndarray  # truth x pred IoU


def frame_detections(run: RunRecord, gt: GroundTruth) -> List[FrameDetections]:
    run_times = [frame.t for frame in run.frames]
    truth_times = [frame.t for frame in gt.frames]
    if run_times != truth_times:
        raise FrameRangeMismatch(run_times, truth_times)
    detections = []
    for result, truth in zip(run.frames, gt.frames):
        visible = [state for state in truth.identities if state.mask.visible_fraction > 0.0]
        preds = [output for output in result.outputs if output.mask.visible_fraction > 0.0]
        similarity = np.array(
            [[iou(state.mask, output.mask) for output in preds] for state in visible], dtype=np.float64
        ).reshape(len(visible), len(preds))
        detections.append(FrameDetections(
            t=result.t,
            truth_ids=tuple(state.identity for state in visible),
            truth_masks=tuple(state.mask for state in visible),
            pred_ids=tuple(output.track_id for output in preds),
            pred_masks=tuple(output.mask for output in preds),
            similarity=similarity,
        ))
    return detections


def _max_iou_pairs(similarity: np.ndarray) -> List[Tuple[int, int]]:
    """Maximum-IoU one-to-one pairing, dropping pairs that do not overlap."""
    if similarity.size == 0:
        return []
    rows, cols = linear_sum_assignment(similarity, maximize=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if similarity[r, c] > 0.0]


def j_score(run: RunRecord, gt: GroundTruth) -> float:
    """Mean matched IoU over visible identities; 1 when nothing is visible."""
    scores, count = [], 0
    for frame in frame_detections(run, gt):
        count += len(frame.truth_ids)
        scores.extend(frame.similarity[r, c] for r, c in _max_iou_pairs(frame.similarity))
    if count == 0:
        return 1.0
    return math.fsum(scores) / count


def f_boundary(run: RunRecord, gt: GroundTruth, resolution: int = DEFAULT_RESOLUTION) -> float:
    """Mean boundary F over visible identities, paired as for ``j_score``."""
    grid = PixelGrid(gt.width, gt.height, resolution)
    radius = tolerance_radius(grid.shape)
    scores, count = [], 0
    for frame in frame_detections(run, gt):
        count += len(frame.truth_ids)
        for r, c in _max_iou_pairs(frame.similarity):
            scores.append(boundary_f(grid.disc(frame.pred_masks[c]), grid.disc(frame.truth_masks[r]), radius))
    if count == 0:
        return 1.0
    return math.fsum(scores) / count


def id_switches(run: RunRecord, gt: GroundTruth, alpha: float = 0.5) -> int:
    """Count changes of the best-overlapping track id per identity."""
    previous: Dict[int, int] = {}
    switches = 0
    for frame in frame_detections(run, gt):
        for row, identity in enumerate(frame.truth_ids):
            best: Optional[Tuple[float, int]] = None
            for col, track_id in enumerate(frame.pred_ids):
                value = frame.similarity[row, col]
                if value >= alpha and (best is None or (-value, track_id) < (-best[0], best[1])):
                    best = (value, track_id)
            if best is None:
                continue
            if identity in previous and previous[identity] != best[1]:
                switches += 1
            previous[identity] = best[1]
    return switches


class HotaScores(NamedTuple):
    hota: float
    det_a: float
    ass_a: float


def _eligible(similarity: np.ndarray, alpha: float) -> np.ndarray:
    return similarity >= alpha


def _optimal_matching(similarity: np.ndarray, alpha: float) -> List[Tuple[int, int]]:
    """Most matches first, then the largest summed IoU."""
    if similarity.size == 0:
        return []
    eligible = _eligible(similarity, alpha)
    bonus = min(similarity.shape) + 1
    weights = np.where(eligible, bonus + similarity, 0.0)
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return sorted((int(r), int(c)) for r, c in zip(rows, cols) if eligible[r, c])


def _greedy_matching(similarity: np.ndarray, alpha: float) -> List[Tuple[int, int]]:
    rows, cols = np.nonzero(_eligible(similarity, alpha))
    pairs = sorted(zip(rows.tolist(), cols.tolist()), key=lambda rc: (-similarity[rc], rc))
    used_rows, used_cols, matches = set(), set(), []
    for r, c in pairs:
        if r in used_rows or c in used_cols:
            continue
        used_rows.add(r)
        used_cols.add(c)
        matches.append((r, c))
    return sorted(matches)


def _brute_force_matching(similarity: np.ndarray, alpha: float) -> List[Tuple[int, int]]:
    eligible = _eligible(similarity, alpha)
    n_rows, n_cols = similarity.shape
    best_key, best = None, []
    for size in range(min(n_rows, n_cols) + 1):
        for rows in itertools.combinations(range(n_rows), size):
            for cols in itertools.permutations(range(n_cols), size):
                pairs = tuple(zip(rows, cols))
                if not all(eligible[r, c] for r, c in pairs):
                    continue
                total = math.fsum(similarity[r, c] for r, c in pairs)
                ordered = tuple(sorted(pairs))
                key = (size, total, tuple((-r, -c) for r, c in ordered))
                if best_key is None or key > best_key:
                    best_key, best = key, list(ordered)
    return best


def _hota_from_matchings(frames: Sequence[FrameDetections], alphas: Sequence[float], matcher) -> HotaScores:
    truth_counts: Dict[int, int] = defaultdict(int)
    pred_counts: Dict[int, int] = defaultdict(int)
    for frame in frames:
        for identity in frame.truth_ids:
            truth_counts[identity] += 1
        for track_id in frame.pred_ids:
            pred_counts[track_id] += 1
    total_truth = sum(truth_counts.values())
    total_pred = sum(pred_counts.values())
    if total_truth == 0 and total_pred == 0:
        return HotaScores(1.0, 1.0, 1.0)

    hotas, dets, asss = [], [], []
    for alpha in alphas:
        pair_counts: Dict[Tuple[int, int], int] = defaultdict(int)
        tp = 0
        for frame in frames:
            for r, c in matcher(frame.similarity, alpha):
                pair_counts[(frame.truth_ids[r], frame.pred_ids[c])] += 1
                tp += 1
        fn, fp = total_truth - tp, total_pred - tp
        det_a = tp / (tp + fn + fp)
        if tp == 0:
            ass_a = 0.0
        else:
            ass_a = math.fsum(
                m * m / (truth_counts[g] + pred_counts[p] - m)
                for (g, p), m in sorted(pair_counts.items())
            ) / tp
        dets.append(det_a)
        asss.append(ass_a)
        hotas.append(math.sqrt(det_a * ass_a))
    n = len(alphas)
    return HotaScores(math.fsum(hotas) / n, math.fsum(dets) / n, math.fsum(asss) / n)


def hota(
    run: RunRecord,
    gt: GroundTruth,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    matching: str = "hungarian",
) -> HotaScores:
    """HOTA, DetA and AssA averaged over the IoU thresholds ``alphas``.

    ``matching="greedy"`` pairs detections by descending IoU instead and logs
    every frame where that loses matches against the optimal assignment.
    """
    frames = frame_detections(run, gt)
    if matching == "hungarian":
        return _hota_from_matchings(frames, alphas, _optimal_matching)
    if matching != "greedy":
        raise ValueError(f"unknown matching {matching!r}")

    def greedy_logged(similarity: np.ndarray, alpha: float) -> List[Tuple[int, int]]:
        greedy = _greedy_matching(similarity, alpha)
        optimal = len(_optimal_matching(similarity, alpha))
        if len(greedy) < optimal:
            logger.info({"event": "greedy_divergence", "alpha": alpha, "greedy": len(greedy), "optimal": optimal})
        return greedy

    return _hota_from_matchings(frames, alphas, greedy_logged)


def oracle_hota(run: RunRecord, gt: GroundTruth, alphas: Sequence[float] = DEFAULT_ALPHAS) -> HotaScores:
    """HOTA by exhaustive matching enumeration, for small instances only."""
    frames = frame_detections(run, gt)
    sizes = {
        "tracks": len({track_id for frame in frames for track_id in frame.pred_ids}),
        "frames": len(frames),
        "identities": len({identity for frame in frames for identity in frame.truth_ids}),
    }
    for name, limit in ORACLE_LIMITS.items():
        if sizes[name] > limit:
            raise InstanceTooLarge(f"{sizes[name]} {name}, at most {limit} supported")
    return _hota_from_matchings(frames, alphas, _brute_force_matching)


class MetricsReport(ValueModel):
    j: Score
    f: Score
    jf: Score
    hota: Score
    det_a: Score
    ass_a: Score
    idsw: Annotated[int, Ge(0)]

    def as_row(self) -> Dict[str, float]:
        return {
            "HOTA": self.hota,
            "DetA": self.det_a,
            "AssA": self.ass_a,
            "J": self.j,
            "F": self.f,
            "JF": self.jf,
            "IDSW": self.idsw,
        }


REPORT_COLUMNS = ("HOTA", "DetA", "AssA", "J", "F", "JF", "IDSW")


def evaluate(
    run: RunRecord,
    gt: GroundTruth,
    alpha: float = 0.5,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    resolution: int = DEFAULT_RESOLUTION,
    matching: str = "hungarian",
) -> MetricsReport:
    j = j_score(run, gt)
    f = f_boundary(run, gt, resolution)
    scores = hota(run, gt, alphas, matching)
    return MetricsReport(
        j=j,
        f=f,
        jf=(j + f) / 2.0,
        hota=scores.hota,
        det_a=scores.det_a,
        ass_a=scores.ass_a,
        idsw=id_switches(run, gt, alpha),
    )


GAP_COLUMNS = ["N", "delta_hota", "delta_hota_se", "delta_idsw", "delta_idsw_se"]


def _mean_and_se(values: pd.Series) -> Tuple[float, float]:
    if len(values) < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


def density_gap(reports: Iterable[Tuple[int, PolicyKind, MetricsReport]]) -> pd.DataFrame:
    """Decoupled minus coupled HOTA and IDSW means per density level."""
    rows = [
        {"N": int(n), "policy": PolicyKind(policy).value, "hota": report.hota, "idsw": report.idsw}
        for n, policy, report in reports
    ]
    if not rows:
        return pd.DataFrame(columns=GAP_COLUMNS)
    table = pd.DataFrame(rows)
    gaps = []
    for n, level in table.groupby("N", sort=True):
        stats = {}
        for kind in (PolicyKind.COUPLED, PolicyKind.DECOUPLED):
            subset = level[level["policy"] == kind.value]
            if subset.empty:
                raise MissingPolicy(int(n), kind.value)
            stats[kind] = {metric: _mean_and_se(subset[metric]) for metric in ("hota", "idsw")}
        row = {"N": int(n)}
        for metric in ("hota", "idsw"):
            (mean_c, se_c), (mean_d, se_d) = stats[PolicyKind.COUPLED][metric], stats[PolicyKind.DECOUPLED][metric]
            row[f"delta_{metric}"] = mean_d - mean_c
            row[f"delta_{metric}_se"] = math.hypot(se_c, se_d)
        gaps.append(row)
    return pd.DataFrame(gaps, columns=GAP_COLUMNS)
