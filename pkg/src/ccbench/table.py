"""The task x algorithm comparison table built from result directories."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .experiment import ALGORITHMS, DISPLAY_NAMES, performance_from_rows, read_progress
from .stats import bold_set


@dataclass
class Cell:
    performances: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.performances))

    @property
    def std(self) -> float:
        # across-seed spread of per-seed performance
        return float(np.std(self.performances))


@dataclass
class ComparisonTable:
    tasks: list[str]
    algorithms: list[str]
    cells: dict            # (task, algorithm) -> Cell
    best: dict             # task -> algorithm
    bold: dict             # task -> set of algorithms

    def render_text(self) -> str:
        header = ["Task"] + [DISPLAY_NAMES.get(a, a) for a in self.algorithms]
        body = []
        for t in self.tasks:
            row = [t]
            for a in self.algorithms:
                c = self.cells.get((t, a))
                if c is None:
                    row.append("N/A")
                    continue
                txt = f"{c.mean:.1f} ± {c.std:.1f}"
                row.append(f"**{txt}**" if a in self.bold[t] else txt)
            body.append(row)
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in [header] + body]
        return "\n".join(lines) + "\n"

    def render_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "algorithm", "mean", "std", "seeds", "bold"])
        for t in self.tasks:
            for a in self.algorithms:
                c = self.cells.get((t, a))
                if c is None:
                    w.writerow([t, a, "N/A", "N/A", 0, 0])
                else:
                    w.writerow([t, a, f"{c.mean:.6g}", f"{c.std:.6g}", len(c.performances),
                                int(a in self.bold[t])])
        return buf.getvalue()


def collect(results_dir) -> dict:
    """(task, algorithm) -> per-seed performances found under ``results_dir``.

    Layout: ``<results>/<task>/<algorithm>/seed<k>/progress.csv``. Seeds
    without a completed episode are skipped; an algorithm whose seeds all
    failed is left out (rendered N/A).
    """
    found: dict = {}
    root = Path(results_dir)
    for task_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for algo_dir in sorted(p for p in task_dir.iterdir() if p.is_dir()):
            perfs = []
            for csv_path in sorted(algo_dir.glob("seed*/progress.csv")):
                try:
                    perfs.append(performance_from_rows(read_progress(csv_path)))
                except ValueError:
                    continue
            if perfs:
                found[(task_dir.name, algo_dir.name)] = perfs
    return found


def build_table(performances: dict) -> ComparisonTable:
    """Bold = best mean plus every algorithm with Welch p >= 0.05 against it."""
    if not performances:
        raise ValueError("no results")
    tasks = sorted({t for t, _ in performances})
    present = {a for _, a in performances}
    algorithms = [a for a in ALGORITHMS if a in present] + sorted(present - set(ALGORITHMS))
    cells = {k: Cell(list(v)) for k, v in performances.items()}
    best, bold = {}, {}
    for t in tasks:
        samples = {a: cells[(t, a)].performances for a in algorithms if (t, a) in cells}
        best[t], bold[t] = bold_set(samples)
    return ComparisonTable(tasks, algorithms, cells, best, bold)


def table_from_dir(results_dir) -> ComparisonTable:
    return build_table(collect(results_dir))
