"""Report container shared by the check operations and the experiment harness."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np


@dataclass
class Report:
    name: str
    rows: list[dict[str, Any]] = field(default_factory=list)
    verdicts: dict[str, bool] = field(default_factory=dict)
    info: dict[str, Any] = field(default_factory=dict)
    anchors: dict[str, str] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.verdicts) and all(self.verdicts.values())

    def check(self, assertion: str, ok: bool, anchor: str | None = None):
        self.verdicts[assertion] = bool(ok)
        if anchor is not None:
            self.anchors[assertion] = anchor

    def columns(self) -> list[str]:
        cols: list[str] = []
        for row in self.rows:
            for key in row:
                if key not in cols:
                    cols.append(key)
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = self.columns()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.rows:
            w.writerow([_fmt(row.get(c, "")) for c in cols])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"[{'PASS' if self.passed else 'FAIL'}] {self.name}"]
        for key, val in self.info.items():
            lines.append(f"    {key} = {_fmt(val)}")
        for assertion, ok in self.verdicts.items():
            anchor = self.anchors.get(assertion)
            tail = f"  ({anchor})" if anchor else ""
            lines.append(f"    {'ok  ' if ok else 'FAIL'} {assertion}{tail}")
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def loglog_slope(xs: Sequence[float], ys: Sequence[float], discard_coarsest: bool = True) -> float:
    """Least-squares slope of log(y) against log(x).

    The point with the largest ``x`` is treated as pre-asymptotic and dropped
    when ``discard_coarsest`` is set and more than two points remain.
    Non-positive entries are ignored.
    """
    pts = sorted((float(x), float(y)) for x, y in zip(xs, ys) if x > 0 and y > 0)
    if discard_coarsest and len(pts) > 2:
        pts = pts[:-1]
    if len(pts) < 2:
        return math.nan
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    return float(np.polyfit(lx, ly, 1)[0])


def is_monotone_decreasing(values: Sequence[float], rtol: float = 0.0) -> bool:
    vals = list(values)
    return all(b <= a * (1 + rtol) for a, b in zip(vals, vals[1:]))
