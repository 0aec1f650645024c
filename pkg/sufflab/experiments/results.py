"""
Result rows, CSV output, the deterministic SVG plot and the repetition-cell runner.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402

from sufflab.utils.config_manager import thread_limit  # noqa: E402
from sufflab.utils.errors import ArgumentError  # noqa: E402

logger = logging.getLogger(__name__)

CSV_HEADER = ("experiment", "method", "param", "rep", "seed", "metric", "value", "stderr")


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    method: str
    param: int
    rep: int
    seed: int
    metric: str
    value: float
    stderr: Optional[float] = None

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ArgumentError(f"non-finite metric {self.metric}={self.value} for {self.method}")

    def as_csv(self) -> List[str]:
        return [_fmt(getattr(self, name)) for name in CSV_HEADER]


class ResultTable:
    """Append-only collection of rows, written in a fixed sort order"""

    def __init__(self, experiment: str):
        self.experiment = experiment
        self._rows: List[ResultRow] = []

    def add(self, method: str, param: int, rep: int, seed: int, metric: str, value: float, stderr=None):
        row = ResultRow(self.experiment, method, int(param), int(rep), int(seed), metric, float(value),
                        None if stderr is None else float(stderr))
        self._rows.append(row)
        return row

    def extend(self, rows: Iterable[ResultRow]):
        for row in rows:
            self._rows.append(row)

    @property
    def rows(self) -> List[ResultRow]:
        return sorted(self._rows, key=lambda r: (r.method, r.param, r.rep, r.metric))

    def __len__(self):
        return len(self._rows)

    def select(self, method=None, metric=None, param=None) -> List[ResultRow]:
        return [
            r for r in self.rows
            if (method is None or r.method == method)
            and (metric is None or r.metric == metric)
            and (param is None or r.param == param)
        ]

    def values(self, method: str, metric: str, param: int) -> np.ndarray:
        return np.array([r.value for r in self.select(method, metric, param)])

    def mean(self, method: str, metric: str, param: int) -> float:
        return float(self.values(method, metric, param).mean())

    def methods(self, metric: Optional[str] = None) -> List[str]:
        return sorted({r.method for r in self._rows if metric is None or r.metric == metric})

    def params(self, method: str, metric: str) -> List[int]:
        return sorted({r.param for r in self.select(method, metric)})

    def write_csv(self, path) -> Path:
        path = Path(path)
        os.makedirs(path.parent, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in self.rows:
                writer.writerow(row.as_csv())
        logger.info("Wrote %d rows to %s", len(self), path)
        return path

    def render_svg(self, path, metric: str, xlabel: str = "m", ylabel: Optional[str] = None, logx: bool = True) -> Path:
        """Mean +/- SD over repetitions per method against the grid parameter"""
        path = Path(path)
        os.makedirs(path.parent, exist_ok=True)
        # fixed ids and no timestamp make the SVG byte-stable
        with plt.rc_context({"svg.hashsalt": "sufflab", "svg.fonttype": "none"}):
            fig, ax = plt.subplots(figsize=(6, 4))
            for method in self.methods(metric):
                params = self.params(method, metric)
                means = [self.values(method, metric, p).mean() for p in params]
                sds = [self.values(method, metric, p).std(ddof=1) if len(self.values(method, metric, p)) > 1 else 0.0
                       for p in params]
                ax.errorbar(params, means, yerr=sds, marker="o", capsize=3, label=method)
            if logx:
                ax.set_xscale("log")
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel or metric)
            ax.legend()
            ax.grid(True, alpha=0.3)
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
        logger.info("Wrote plot to %s", path)
        return path


def run_cells(fn: Callable, cells: Sequence, max_workers: Optional[int] = None) -> List:
    """
    Evaluate fn on every cell, concurrently when allowed, returning results in cell order.

    Each cell must carry its own generator stream; torch intra-op threads are
    capped at the same limit.
    """
    workers = max(1, min(max_workers or thread_limit(), len(cells) or 1))
    torch.set_num_threads(workers)
    if workers == 1:
        return [fn(cell) for cell in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))
