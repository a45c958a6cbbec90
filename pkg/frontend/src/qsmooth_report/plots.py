"""Tracking and ensemble-MSE figures from qsmooth run directories.

The plotter is a pure view of the CSV data: inputs are checksummed before and
after rendering and any change aborts the figure.  SVG is the default output
(diff-able in review); PNG follows from the file extension.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .readers import (
    SchemaError,
    Table,
    check_same_scenario,
    estimate_state_dim,
    file_checksum,
    read_table,
)

METHOD_FILES = {
    "filter": "filter.csv",
    "smooth": "smooth.csv",
    "retrodict": "retrodict.csv",
    "kalman": "kalman.csv",
    "kalman-smooth": "kalman_smooth.csv",
}


@dataclass
class PlotJob:
    run_dir: str
    output: str
    methods: tuple = ("filter", "smooth")
    t_min: float | None = None
    t_max: float | None = None
    band_sigmas: float = 2.0
    log_scale: bool = False


def _read_record(run_dir):
    path = os.path.join(run_dir, "record.csv")
    return read_table(path) if os.path.exists(path) else None


def _time_mask(t, job):
    mask = np.ones(len(t), dtype=bool)
    if job.t_min is not None:
        mask &= t >= job.t_min
    if job.t_max is not None:
        mask &= t <= job.t_max
    if not mask.any():
        raise ValueError(
            f"no data in range [{job.t_min}, {job.t_max}] for the requested plot")
    return mask


class _ChecksumGuard:
    """Assert the plotter reads but never rewrites its inputs."""

    def __init__(self, paths):
        self.paths = list(paths)
        self.before = {p: file_checksum(p) for p in self.paths}

    def verify(self):
        for p in self.paths:
            if file_checksum(p) != self.before[p]:
                raise RuntimeError(f"input file {p} changed while plotting")


def plot_tracking(job: PlotJob) -> str:
    """Truth, estimator means, and +-k sigma bands, one panel per component."""
    paths = [os.path.join(job.run_dir, METHOD_FILES[m]) for m in job.methods]
    for m, p in zip(job.methods, paths):
        if m not in METHOD_FILES:
            raise ValueError(f"unknown method {m!r}")
        if not os.path.exists(p):
            raise FileNotFoundError(f"estimate file for method {m!r} not found: {p}")
    record_path = os.path.join(job.run_dir, "record.csv")
    guard = _ChecksumGuard(paths + ([record_path] if os.path.exists(record_path) else []))

    tables = [read_table(p) for p in paths]
    record = _read_record(job.run_dir)
    check_same_scenario(tables + ([record] if record else []))
    n = estimate_state_dim(tables[0])

    fig, axes = plt.subplots(n, 1, figsize=(9, 3.2 * n), squeeze=False, sharex=True)
    for dim in range(n):
        ax = axes[dim, 0]
        if record is not None:
            (rt,) = record.require("t")
            (rx,) = record.require(f"x_true_{dim}")
            rmask = _time_mask(rt, job)
            ax.plot(rt[rmask], rx[rmask], color="0.25", lw=0.9, label="truth")
        for table, m in zip(tables, job.methods):
            t, mean, var = table.require("t", f"x_mean_{dim}", f"x_cov_{dim}_{dim}")
            mask = _time_mask(t, job)
            band = job.band_sigmas * np.sqrt(np.clip(var[mask], 0.0, None))
            line, = ax.plot(t[mask], mean[mask], lw=1.2, label=m)
            ax.fill_between(t[mask], mean[mask] - band, mean[mask] + band,
                            alpha=0.2, color=line.get_color(), linewidth=0)
        ax.set_ylabel(f"x[{dim}]")
        ax.legend(loc="upper right", fontsize=8)
    axes[-1, 0].set_xlabel("t")
    fig.suptitle(f"waveform tracking (bands: +-{job.band_sigmas:g} sigma)")
    fig.tight_layout()
    fig.savefig(job.output)
    plt.close(fig)
    guard.verify()
    return job.output


def plot_mse(summary_path: str, output: str, log_scale: bool = False,
             t_min: float | None = None, t_max: float | None = None) -> str:
    """Time-resolved ensemble MSE curves with standard-error bands."""
    guard = _ChecksumGuard([summary_path])
    table = read_table(summary_path)
    if table.method_col is None:
        raise SchemaError(f"{summary_path} is missing required column 'method'")
    t, mse, se = table.require("t", "mse", "se")
    methods = sorted(set(table.method_col))
    if len(methods) < 2:
        raise ValueError("MSE comparison needs at least two methods in the summary")

    job = PlotJob(run_dir="", output=output, t_min=t_min, t_max=t_max)
    fig, ax = plt.subplots(figsize=(9, 4.2))
    for m in methods:
        sel = np.array([mm == m for mm in table.method_col])
        mask = sel & _time_mask(t, job) if (t_min or t_max) else sel
        order = np.argsort(t[mask])
        tt, mm_, ss = t[mask][order], mse[mask][order], se[mask][order]
        line, = ax.plot(tt, mm_, lw=1.2, label=m)
        ax.fill_between(tt, mm_ - ss, mm_ + ss, alpha=0.25,
                        color=line.get_color(), linewidth=0)
        if "pred_var" in table.columns:
            pv = table.columns["pred_var"][mask][order]
            if np.isfinite(pv).all():
                ax.plot(tt, pv, ls="--", lw=0.9, color=line.get_color(),
                        label=f"{m} predicted")
    if log_scale:
        ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("ensemble MSE")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(output)
    plt.close(fig)
    guard.verify()
    return output
