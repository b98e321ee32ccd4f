"""Ablation tables and relative-improvement arithmetic.

Deltas are always recomputed from the stored metric values against the first
(baseline) row; nothing is hard-coded. `relative_improvement` reports percent
change to one decimal, so published figures rounded differently will show up
as a discrepancy rather than being silently matched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidArgumentError
from .evaluation import parse_report_text


@dataclass
class AblationRow:
    label: str
    map5095: float
    map50: float
    flops_g: float | None = None


def relative_improvement(new: float, base: float) -> float:
    """Percent change 100*(new-base)/base, reported to one decimal place."""
    if base <= 0:
        raise InvalidArgumentError(f"relative_improvement: base must be > 0, got {base}")
    return round(100.0 * (new - base) / base, 1)


def _fmt(value: float, delta: float | None) -> str:
    if delta is None:
        return f"{value:.3f}"
    return f"{value:.3f} ({delta:+.3f})"


def ablation_report(rows: list[AblationRow]) -> str:
    """Plain-text ablation table; the first row is the baseline."""
    if not rows:
        raise InvalidArgumentError("ablation_report: no rows")
    base = rows[0]
    header = f"{'Model':<24} {'mAP50:95':<18} {'mAP50':<18} {'FLOPs(G)':<14}"
    lines = [header, "-" * len(header)]
    for i, row in enumerate(rows):
        d5095 = None if i == 0 else row.map5095 - base.map5095
        d50 = None if i == 0 else row.map50 - base.map50
        if row.flops_g is None:
            flops = "-"
        elif i == 0 or base.flops_g is None:
            flops = f"{row.flops_g:.1f}"
        else:
            flops = f"{row.flops_g:.1f} ({row.flops_g - base.flops_g:+.1f})"
        lines.append(f"{row.label:<24} {_fmt(row.map5095, d5095):<18} "
                     f"{_fmt(row.map50, d50):<18} {flops:<14}")
    final = rows[-1]
    if len(rows) > 1:
        lines.append("")
        lines.append(f"relative improvement vs {base.label}: "
                     f"mAP50:95 {relative_improvement(final.map5095, base.map5095):+.1f}%, "
                     f"mAP50 {relative_improvement(final.map50, base.map50):+.1f}% "
                     f"(computed from the rows above, one decimal)")
    return "\n".join(lines) + "\n"


def ablation_json(rows: list[AblationRow]) -> str:
    if not rows:
        raise InvalidArgumentError("ablation_json: no rows")
    base = rows[0]
    out = []
    for i, row in enumerate(rows):
        rec = {"label": row.label, "map5095": row.map5095, "map50": row.map50}
        if row.flops_g is not None:
            rec["flops_g"] = row.flops_g
        if i > 0:
            rec["delta_map5095"] = row.map5095 - base.map5095
            rec["delta_map50"] = row.map50 - base.map50
        out.append(rec)
    return json.dumps(out, indent=2) + "\n"


def parse_runs_file(text: str, base_dir=None) -> list[AblationRow]:
    """Rows as `label,map5095,map50[,flops]`; `label,@report.txt[,flops]` reads
    the metrics from a serialized evaluation report."""
    rows = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) < 2:
            raise InvalidArgumentError(f"runs line {line_no}: expected label,metrics")
        label = fields[0]
        if fields[1].startswith("@"):
            path = Path(fields[1][1:])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            report = parse_report_text(path.read_text())
            map5095, map50 = float(report["map5095"]), float(report["map50"])
            flops = float(fields[2]) if len(fields) > 2 else None
        else:
            if len(fields) < 3:
                raise InvalidArgumentError(
                    f"runs line {line_no}: expected label,map5095,map50[,flops]")
            map5095, map50 = float(fields[1]), float(fields[2])
            flops = float(fields[3]) if len(fields) > 3 else None
        rows.append(AblationRow(label=label, map5095=map5095, map50=map50, flops_g=flops))
    return rows
