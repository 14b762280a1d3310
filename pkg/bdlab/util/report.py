"""Tables over the manifests of many fine-tuning runs.

Runs are grouped into cells by (strategy, r, exit layer) and task. Every cell
reports the mean test micro-F1 over its seeds with a 95% t-interval, and the
mean validation micro-F1 of the selected epochs when the manifests carry it.

"""
import glob
import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from bdlab.misc import ConfigurationError
from bdlab.util.metric import SeedAggregate, aggregate

Row = Tuple[str, int, int]
MANIFEST_KEYS = {"dataset", "strategy", "r", "exit_layer", "seed", "f1"}
BASELINE = "middle_unmask"


def row_label(row: Row) -> str:
    strategy, r, exit_layer = row
    label = strategy
    if r:
        label += " (r={})".format(r)
    if exit_layer:
        label += " @{}".format(exit_layer)
    return label


def read_manifests(folder: str) -> pd.DataFrame:
    """One row per run manifest found in `folder` (other JSON files are skipped)."""
    records = []
    for filename in sorted(glob.glob(os.path.join(folder, "*.json"))):
        with open(filename, "r", encoding="utf-8") as file:
            try:
                data = json.load(file)
            except json.JSONDecodeError:
                continue
        if isinstance(data, dict) and MANIFEST_KEYS <= set(data):
            record = {key: data[key] for key in sorted(MANIFEST_KEYS)}
            if data.get("valid_f1"):
                # the checkpoint is the epoch with the best validation F1
                record["valid_f1"] = max(data["valid_f1"])
            records.append(record)
    if not records:
        raise ConfigurationError("no run manifests found in {}".format(folder))
    return pd.DataFrame(records)


@dataclass
class Report:
    tasks: List[str]
    rows: List[Row]
    #: (row, task) -> aggregate over seeds
    cells: Dict[Tuple[Row, str], SeedAggregate]
    #: (row, task) -> mean best-epoch validation F1 over seeds
    valid: Dict[Tuple[Row, str], float] = field(default_factory=dict)

    def best(self, task: str) -> Row:
        candidates = [row for row in self.rows if (row, task) in self.cells]
        return max(candidates, key=lambda row: self.cells[(row, task)].mean)

    def table(self) -> pd.DataFrame:
        records = []
        for task in self.tasks:
            best = self.best(task)
            for row in self.rows:
                if (row, task) not in self.cells:
                    continue
                cell = self.cells[(row, task)]
                records.append(
                    dict(
                        dataset=task,
                        strategy=row[0],
                        r=row[1],
                        exit_layer=row[2],
                        seeds=len(cell.values),
                        mean=cell.mean,
                        ci_halfwidth=cell.ci_halfwidth,
                        std=cell.std,
                        best=row == best,
                        valid_mean=self.valid.get((row, task), float("nan")),
                    )
                )
        return pd.DataFrame(records)

    def markdown(self) -> str:
        lines = [
            "| Method | " + " | ".join(self.tasks) + " |",
            "|---" * (len(self.tasks) + 1) + "|",
        ]
        best = {task: self.best(task) for task in self.tasks}
        for row in self.rows:
            entries = []
            for task in self.tasks:
                cell = self.cells.get((row, task))
                if cell is None:
                    entries.append("")
                    continue
                text = "{:.2f} ± {:.2f}".format(100 * cell.mean, 100 * cell.ci_halfwidth)
                entries.append("**" + text + "**" if best[task] == row else text)
            lines.append("| " + row_label(row) + " | " + " | ".join(entries) + " |")
        return "\n".join(lines) + "\n"

    def superiority(self) -> pd.DataFrame:
        """Number of tasks on which the row's mean exceeds the column's mean."""
        labels = [row_label(row) for row in self.rows]
        counts = np.zeros((len(self.rows), len(self.rows)), dtype=np.int64)
        for i, a in enumerate(self.rows):
            for j, b in enumerate(self.rows):
                for task in self.tasks:
                    if (a, task) in self.cells and (b, task) in self.cells:
                        counts[i, j] += (
                            self.cells[(a, task)].mean > self.cells[(b, task)].mean
                        )
        frame = pd.DataFrame(counts, index=labels, columns=labels)
        frame["wins"] = frame.sum(axis=1)
        frame.index.name = "method"
        return frame

    def gains(self) -> Optional[pd.DataFrame]:
        """F1 gain of every row over the middle unmasking baseline, per task."""
        baselines = [row for row in self.rows if row[0] == BASELINE]
        if not baselines:
            return None
        baseline = min(baselines, key=lambda row: (row[2], row[1]))
        records = []
        for task in self.tasks:
            if (baseline, task) not in self.cells:
                continue
            reference = self.cells[(baseline, task)].mean
            for row in self.rows:
                if row == baseline or (row, task) not in self.cells:
                    continue
                cell = self.cells[(row, task)]
                records.append(
                    dict(
                        dataset=task,
                        method=row_label(row),
                        gain=cell.mean - reference,
                        std=cell.std,
                    )
                )
        return pd.DataFrame(records)

    def save(self, folder: str) -> List[str]:
        os.makedirs(folder, exist_ok=True)
        files = [os.path.join(folder, name) for name in ["report.csv", "report.md"]]
        self.table().to_csv(files[0], index=False, float_format="%.17g")
        with open(files[1], "w", encoding="utf-8") as file:
            file.write(self.markdown())
        files.append(os.path.join(folder, "superiority.csv"))
        self.superiority().to_csv(files[-1])
        gains = self.gains()
        if gains is not None:
            files.append(os.path.join(folder, "gains.csv"))
            gains.to_csv(files[-1], index=False, float_format="%.17g")
        return files


def build_report(runs: pd.DataFrame) -> Report:
    """Aggregates runs per cell; every cell needs at least two seeds."""
    tasks = sorted(runs["dataset"].unique())
    rows = sorted(
        {
            (str(s), int(r), int(e))
            for s, r, e in zip(runs["strategy"], runs["r"], runs["exit_layer"])
        },
        key=lambda row: (row[2], row[0], row[1]),
    )
    cells = {}
    valid = {}
    for (task, strategy, r, exit_layer), group in runs.groupby(
        ["dataset", "strategy", "r", "exit_layer"]
    ):
        row = (str(strategy), int(r), int(exit_layer))
        if group["seed"].nunique() < 2:
            raise ConfigurationError(
                "cell {} on {} has {} seed(s), need at least 2".format(
                    row_label(row), task, group["seed"].nunique()
                )
            )
        cells[(row, task)] = aggregate(group.sort_values("seed")["f1"].tolist())
        if "valid_f1" in group and group["valid_f1"].notna().any():
            valid[(row, task)] = float(group["valid_f1"].mean())
    return Report(tasks, rows, cells, valid)
