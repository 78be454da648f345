"""Per-round metrics records and their delimited on-disk form.

The metrics.csv schema is the package's stable external interface: one row
per round, every column below, floats written in shortest round-trip form
so parsing the file reproduces the exact values.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, fields

from .errors import FormatError, InputError

METRICS_COLUMNS = [
    "t", "val_acc_global", "mal_conf_mean", "mal_targets_hit_frac",
    "val_acc_mal_local", "acc_flag", "acc_gap", "dist_flag", "dist_deviation",
    "l2_ben_min", "l2_ben_max", "l2_mal_min", "l2_mal_max",
    "krum_chosen_agent", "mal_chosen",
]

_INT_COLUMNS = {"t", "krum_chosen_agent"}
_FLAG_COLUMNS = {"acc_flag", "dist_flag", "mal_chosen"}


@dataclass
class RoundRecord:
    """Everything measured about one aggregation round.

    Optional fields stay None when not applicable (no attack configured,
    malicious agent not selected, aggregation rule without selection).
    """

    t: int
    val_acc_global: float
    mal_conf_mean: float | None = None
    mal_targets_hit_frac: float | None = None
    val_acc_mal_local: float | None = None
    acc_flag: bool | None = None
    acc_gap: float | None = None
    dist_flag: bool | None = None
    dist_deviation: float | None = None
    l2_ben_min: float | None = None
    l2_ben_max: float | None = None
    l2_mal_min: float | None = None
    l2_mal_max: float | None = None
    krum_chosen_agent: int | None = None
    mal_chosen: bool | None = None


def _format_cell(name: str, value) -> str:
    if value is None:
        return ""
    if name in _FLAG_COLUMNS:
        return "1" if value else "0"
    if name in _INT_COLUMNS:
        return str(int(value))
    return repr(float(value))


def _parse_cell(name: str, text: str):
    if text == "":
        return None
    if name in _FLAG_COLUMNS:
        return text == "1"
    if name in _INT_COLUMNS:
        return int(text)
    return float(text)


def render_metrics(records: list[RoundRecord]) -> str:
    """Records as CSV text with the documented column order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for rec in records:
        writer.writerow([_format_cell(f.name, getattr(rec, f.name))
                         for f in fields(RoundRecord)])
    return buf.getvalue()


def write_metrics(records: list[RoundRecord], path) -> None:
    """Atomic write: render fully, then replace the target path."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        f.write(render_metrics(records))
    os.replace(tmp, path)


def read_metrics(path) -> list[RoundRecord]:
    """Parse a metrics.csv back into records, verifying the schema."""
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != METRICS_COLUMNS:
            raise FormatError(f"{path}: unexpected metrics header {header}")
        out = []
        for row in reader:
            if len(row) != len(METRICS_COLUMNS):
                raise FormatError(f"{path}: row with {len(row)} cells")
            values = {name: _parse_cell(name, cell)
                      for name, cell in zip(METRICS_COLUMNS, row)}
            if values["t"] is None:
                raise InputError(f"{path}: row without round number")
            out.append(RoundRecord(**values))
    return out
