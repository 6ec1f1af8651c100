"""Load-imbalance and normalization metrics for loop executions."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

BASELINE = ("np", "STATIC")
REPORT_COLUMNS = ("scenario", "technique", "t_par", "cov", "mean_max", "normalized_pct")


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ImbalanceReport:
    cov: float
    mean_max: float
    t_par: float


def imbalance(per_pe_finish: Sequence[float]) -> ImbalanceReport:
    """Coefficient of variation (population) and mean/max of PE finishing times."""
    xs = [float(x) for x in per_pe_finish]
    if len(xs) < 2:
        raise MetricsError("need finishing times for at least two PEs")
    if not all(x > 0 and math.isfinite(x) for x in xs):
        raise MetricsError("finishing times must be positive and finite")
    n = len(xs)
    mean = math.fsum(xs) / n
    var = math.fsum((x - mean) ** 2 for x in xs) / n
    t_par = max(xs)
    return ImbalanceReport(math.sqrt(var) / mean, mean / t_par, t_par)


def normalize_to_baseline(results: Mapping[tuple[str, str], float], baseline: float | None = None,
                          baseline_key: tuple[str, str] = BASELINE) -> dict:
    """Map every (scenario, technique) t_par to a percentage of the baseline t_par."""
    if baseline is None:
        if baseline_key not in results:
            raise MetricsError(f"baseline cell {baseline_key} is missing")
        baseline = results[baseline_key]
    if not baseline > 0:
        raise MetricsError("baseline must be positive")
    return {k: 100.0 * v / baseline for k, v in results.items()}


def write_report(rows: Sequence[dict], path, extra_columns: Sequence[str] = ()) -> None:
    """Rows carry REPORT_COLUMNS keys (plus ``extra_columns``); floats are written with repr."""
    cols = list(REPORT_COLUMNS) + list(extra_columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in cols])


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v
