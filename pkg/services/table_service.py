from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Sequence

import numpy as np
import pandas as pd

from core.constants import AGGREGATE_COLUMNS, TRIAL_COLUMNS
from core.exceptions import ReportMismatchError
from core.logging import get_logger

if TYPE_CHECKING:
    from services.experiment_service import TrialResult

logger = get_logger(__name__)

DEFAULT_REPORT_METRIC = "mean_sqrt_amse"


@dataclass(frozen=True)
class MetricsTable:
    trials: pd.DataFrame
    aggregate: pd.DataFrame

    @property
    def n_aborted(self) -> int:
        if self.trials.empty:
            return 0
        return int(self.trials.groupby(["strategy", "seed"])["aborted"].max().sum())


class TableService:
    """Shapes trial records into the per-trial, aggregate and report tables"""

    def trial_frame(self, results: Sequence["TrialResult"]) -> pd.DataFrame:
        rows = []
        for result in results:
            aborted = int(result.aborted)
            for record in result.records:
                rows.append(
                    {
                        "strategy": result.strategy,
                        "cq_kind": result.cq_kind.value,
                        "seed": result.seed,
                        "round": record.round,
                        "labeled": record.labeled,
                        "sqrt_amse": float(np.sqrt(record.amse)),
                        "trace_q": record.trace_q,
                        "logdet_q": record.logdet_q,
                        "wall_time_s": record.wall_time_s,
                        "aborted": aborted,
                    }
                )
            if aborted and not result.records:
                # keep the abort visible even when no round finished
                rows.append(
                    {
                        "strategy": result.strategy,
                        "cq_kind": result.cq_kind.value,
                        "seed": result.seed,
                        "round": 0,
                        "labeled": 0,
                        "sqrt_amse": np.nan,
                        "trace_q": np.nan,
                        "logdet_q": np.nan,
                        "wall_time_s": 0.0,
                        "aborted": 1,
                    }
                )
        return pd.DataFrame(rows, columns=TRIAL_COLUMNS)

    def aggregate(self, trials: pd.DataFrame) -> pd.DataFrame:
        """Mean and standard error of sqrt AMSE per (strategy, round) over completed trials"""
        completed = trials[trials["aborted"] == 0]
        if completed.empty:
            return pd.DataFrame(columns=AGGREGATE_COLUMNS)
        grouped = completed.groupby(["strategy", "round"], sort=False)
        summary = grouped.agg(
            labeled=("labeled", "first"),
            mean_sqrt_amse=("sqrt_amse", "mean"),
            std_sqrt_amse=("sqrt_amse", "std"),
            n_trials=("sqrt_amse", "size"),
        ).reset_index()
        summary["se_sqrt_amse"] = (summary["std_sqrt_amse"] / np.sqrt(summary["n_trials"])).fillna(0.0)
        return summary[AGGREGATE_COLUMNS]

    def metrics_table(self, results: Sequence["TrialResult"]) -> MetricsTable:
        trials = self.trial_frame(results)
        return MetricsTable(trials=trials, aggregate=self.aggregate(trials))

    def wide_report(self, frames: List[pd.DataFrame], metric: str = DEFAULT_REPORT_METRIC) -> pd.DataFrame:
        """
        Rounds as rows, strategies as columns.

        Raises:
            ReportMismatchError: missing columns, or strategies observed on different round grids
        """
        for frame in frames:
            missing = [c for c in AGGREGATE_COLUMNS if c not in frame.columns]
            if missing:
                raise ReportMismatchError(f"Aggregate table is missing columns {missing}", missing=missing)
        if metric not in AGGREGATE_COLUMNS:
            raise ReportMismatchError(f"Unknown report metric '{metric}'", metric=metric)

        merged = pd.concat(frames, ignore_index=True)
        grids = {strategy: set(group["round"]) for strategy, group in merged.groupby("strategy", sort=False)}
        all_rounds = set().union(*grids.values()) if grids else set()
        divergent = sorted(int(r) for r in all_rounds if any(r not in rounds for rounds in grids.values()))
        if divergent:
            raise ReportMismatchError(f"Round grids differ across strategies at rounds {divergent}", rounds=divergent)
        if merged.duplicated(["strategy", "round"]).any():
            raise ReportMismatchError("A strategy appears in more than one input table")

        strategies = list(grids)
        wide = merged.pivot(index="round", columns="strategy", values=metric)[strategies]
        wide.columns.name = None
        logger.info("Report built", strategies=strategies, rounds=len(wide), metric=metric)
        return wide.reset_index()
