"""Readers for the qsmooth output CSVs.

Every qsmooth CSV starts with one comment line carrying a format token and the
scenario hash; the readers surface both so plots can refuse mixed-scenario
inputs.  The plotter never recomputes estimates, so readers return plain
column arrays.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np


class SchemaError(ValueError):
    """A required column or header token is missing; names the offender."""


@dataclass
class Table:
    path: str
    format: str
    scenario: str
    columns: dict            # name -> float ndarray
    method_col: list | None  # raw method strings when present

    def require(self, *names):
        for name in names:
            if name not in self.columns:
                raise SchemaError(f"{self.path} is missing required column {name!r}")
        return [self.columns[n] for n in names]


def file_checksum(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def read_table(path: str) -> Table:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        head = fh.readline().strip()
        if not head.startswith("#"):
            raise SchemaError(f"{path} lacks the qsmooth header comment line")
        tokens = dict(part.split("=", 1) for part in head.split()[2:] if "=" in part)
        fmt = head.split()[1] if len(head.split()) > 1 else ""
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path} has no column header row")
        rows = list(reader)
    columns = {}
    method_col = None
    for name in rows[0].keys() if rows else []:
        vals = [r[name] for r in rows]
        if name == "method":
            method_col = vals
            continue
        try:
            columns[name] = np.array([float(v) if v != "" else np.nan for v in vals])
        except ValueError:
            method_col = vals if name == "method" else method_col
    return Table(path=path, format=fmt, scenario=tokens.get("scenario", ""),
                 columns=columns, method_col=method_col)


def estimate_state_dim(table: Table) -> int:
    n = 0
    while f"x_mean_{n}" in table.columns:
        n += 1
    if n == 0:
        raise SchemaError(f"{table.path} is missing required column 'x_mean_0'")
    return n


def check_same_scenario(tables) -> str:
    hashes = {t.scenario for t in tables}
    if len(hashes) != 1:
        details = ", ".join(f"{t.path}: {t.scenario}" for t in tables)
        raise ValueError(f"input files carry different scenario hashes ({details}); "
                         "refusing to plot mixed runs")
    return next(iter(hashes))
