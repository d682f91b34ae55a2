"""CSV files with a ``# key=value`` header block."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import SchemaError

TIMESTEP_COLUMNS = ("Time", "snesIts", "innerIts", "SNEStime", "resNorm")
TRACE_COLUMNS = ("iteration", "resNorm")
TUNING_COLUMNS = ("method", "setting", "avgIts", "totalInner", "cpuTime", "converged")
THREAD_COLUMNS = ("threads", "time", "speedup", "efficiency")
IMEX_COLUMNS = ("mode", "N", "bochnerError", "cpuPerStep", "totalCpu")


@dataclass
class CsvReport:
    header: dict[str, str] = field(default_factory=dict)
    columns: tuple[str, ...] = ()
    rows: list[tuple] = field(default_factory=list)

    def column(self, name: str) -> list[str]:
        if name not in self.columns:
            raise SchemaError(f"missing column {name!r}")
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def floats(self, name: str) -> list[float]:
        return [float(v) for v in self.column(name)]


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def write_csv(path, report: CsvReport) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for key, val in report.header.items():
            fh.write(f"# {key}={val}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(report.columns)
        for row in report.rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path, required: tuple[str, ...] = ()) -> CsvReport:
    header, body = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                header[key.strip()] = val
            else:
                body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise SchemaError(f"{path}: no column row")
    columns = tuple(rows[0])
    for name in required:
        if name not in columns:
            raise SchemaError(f"{path}: missing column {name!r}")
    return CsvReport(header, columns, [tuple(r) for r in rows[1:] if r])
