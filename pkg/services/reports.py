"""Result tables. Every CSV goes through pandas with a fixed float format so reruns are byte-identical."""
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np
import pandas as pd

from models.data_models import BatchSummary, RoundRecord, TrialResult

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.6f"

TRIAL_COLUMNS = ["trial", "method", "area", "success", "time_cost", "step_cost", "seed",
                 "start_x", "start_y", "start_theta", "goal_x", "goal_y"]
SUMMARY_COLUMNS = ["area", "method", "trials", "successes", "success_rate", "avg_time_cost",
                   "std_time_cost", "avg_step_cost", "std_step_cost"]
PAIRED_COLUMNS = ["area", "paired_trials", "mean_time_diff", "time_saving_pct", "mean_step_diff",
                  "step_saving_pct", "placements_match"]
CURVE_COLUMNS = ["round", "reward", "success", "loss", "steps"]


def trials_frame(trials: Iterable[TrialResult]) -> pd.DataFrame:
    rows = [{
        "trial": t.trial, "method": t.method.value, "area": t.area, "success": int(t.success),
        "time_cost": t.time_cost, "step_cost": t.step_cost, "seed": t.seed,
        "start_x": t.start.x, "start_y": t.start.y, "start_theta": t.start.theta,
        "goal_x": t.goal[0], "goal_y": t.goal[1],
    } for t in trials]
    return pd.DataFrame(rows, columns=TRIAL_COLUMNS)


def summary_frame(summaries: Iterable[BatchSummary]) -> pd.DataFrame:
    rows = []
    for summary in summaries:
        row = summary.model_dump()
        row["method"] = summary.method.value
        rows.append(row)
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def curve_frame(records: Iterable[RoundRecord]) -> pd.DataFrame:
    rows = [{"round": r.round, "reward": r.reward, "success": int(r.success), "loss": r.loss,
             "steps": r.steps} for r in records]
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def paired_row(area: str, first: Sequence[TrialResult], second: Sequence[TrialResult]) -> Dict[str, object]:
    """Paired differences first - second over trials both methods solved.

    The saving percentage is relative to the second method's mean cost.
    """
    by_trial = {t.trial: t for t in second}
    match = True
    time_diffs: List[float] = []
    step_diffs: List[float] = []
    second_times: List[float] = []
    second_steps: List[float] = []
    for a in first:
        b = by_trial.get(a.trial)
        if b is None:
            match = False
            continue
        same = (np.allclose(a.start.as_array(), b.start.as_array()) and
                np.allclose(a.goal, b.goal))
        match = match and same
        if a.success and b.success:
            time_diffs.append(a.time_cost - b.time_cost)
            step_diffs.append(a.step_cost - b.step_cost)
            second_times.append(b.time_cost)
            second_steps.append(b.step_cost)

    def mean(values: List[float]) -> float:
        return float(np.mean(values)) if values else math.nan

    def saving(diffs: List[float], base: List[float]) -> float:
        if not diffs or mean(base) == 0:
            return math.nan
        return -100.0 * mean(diffs) / mean(base)

    return {
        "area": area, "paired_trials": len(time_diffs),
        "mean_time_diff": mean(time_diffs), "time_saving_pct": saving(time_diffs, second_times),
        "mean_step_diff": mean(step_diffs), "step_saving_pct": saving(step_diffs, second_steps),
        "placements_match": int(match),
    }


def paired_frame(rows: Iterable[Dict[str, object]]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=PAIRED_COLUMNS)


def write_csv(frame: pd.DataFrame, path: PathLike) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n")
    logger.info("wrote %d rows to %s", len(frame), path)


def render_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n")
