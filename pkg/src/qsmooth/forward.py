"""Forward hybrid filter: measurement update and prediction on a grid of
operator-valued density blocks.

The implementation integrates the linear (unnormalized) evolution with a
per-step renormalization whose logarithm accumulates in ``log_weight``: the
trajectory of normalized fields is identical to the nonlinear filter, and the
ledger makes the unnormalized field available to the smoother for free.  Each
step applies the measurement update with the increment observed at the current
time, then the dynamics (one-step degree-4 Lindblad integration followed by
classical kernel mixing).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from ._gridops import GridOps, gaussian_prior_density, grid_moments
from .classical import ClassicalGrid
from .errors import DegenerateUpdateError, NumericalOverflowError
from .operators import measurement_kraus, taylor4_lindblad_step
from .scenario import Scenario
from .truth import TrajectoryRecord

TRACE_PRESERVATION_RTOL = 1e-8


@dataclass
class HybridDensityField:
    """Grid of Hermitian blocks f(x_k, t) with a log-normalization ledger."""

    grid: ClassicalGrid
    blocks: np.ndarray          # (K, d, d) complex
    log_weight: float
    t: float

    def copy(self) -> "HybridDensityField":
        return HybridDensityField(self.grid, self.blocks.copy(), self.log_weight, self.t)

    def block_traces(self) -> np.ndarray:
        return np.trace(self.blocks, axis1=1, axis2=2).real

    def total_trace(self) -> float:
        return float(self.block_traces().sum() * self.grid.cell_volume)


@dataclass
class FilterEstimate:
    t: float
    p_x: np.ndarray             # classical marginal density over the grid
    x_mean: np.ndarray
    x_cov: np.ndarray
    rho_cond: np.ndarray        # unit-trace conditional quantum state
    log_likelihood: float


@dataclass
class FilterRun:
    estimates: list
    snapshots: dict             # step index -> HybridDensityField
    final: HybridDensityField
    stats: dict = dc_field(default_factory=dict)


def snapshot_indices(n_steps: int, stride: int) -> set:
    """Indices at which fields are snapshotted: 0, multiples of stride, and the end."""
    idx = set(range(0, n_steps + 1, max(1, stride)))
    idx.add(0)
    idx.add(n_steps)
    return idx


class ForwardFilter:
    """Filter engine bound to one scenario; distinct runs may share it read-only."""

    def __init__(self, scenario: Scenario, grid_ops: GridOps | None = None):
        self.scenario = scenario
        self.ops = grid_ops if grid_ops is not None else GridOps(scenario)

    def init_field(self) -> HybridDensityField:
        """Prior field: rho0 times the Gaussian prior density, normalized."""
        scen = self.scenario
        density = gaussian_prior_density(scen)
        blocks = scen.quantum.initial_state[None, :, :] * density[:, None, None]
        fld = HybridDensityField(scen.grid, blocks.astype(complex), 0.0, scen.t0)
        total = fld.total_trace()
        fld.blocks /= total
        return fld

    def update_step(self, fld: HybridDensityField, dy: np.ndarray,
                    dt: float | None = None) -> HybridDensityField:
        """Measurement update: blocks -> M f M*, renormalized into the ledger."""
        dt = self.scenario.dt if dt is None else dt
        M = measurement_kraus(self.scenario.measurement, dy, dt)
        blocks = M @ fld.blocks @ M.conj().T
        total = np.trace(blocks, axis1=1, axis2=2).real.sum() * fld.grid.cell_volume
        if not np.isfinite(total) or total <= 1e-300:
            raise DegenerateUpdateError(
                f"field trace {total:.3e} after update at t={fld.t}")
        return HybridDensityField(fld.grid, blocks / total,
                                  fld.log_weight + float(np.log(total)), fld.t)

    def predict_step(self, fld: HybridDensityField,
                     dt: float | None = None) -> HybridDensityField:
        """Dynamics: per-block Lindblad propagation, then kernel mixing."""
        dt = self.scenario.dt if dt is None else dt
        before = fld.total_trace()
        blocks = taylor4_lindblad_step(self.ops.H_all, self.ops.dissipators,
                                       self.ops.hbar, fld.blocks, dt)
        KT = self.ops.kernel_transpose(fld.t, dt)
        K, d, _ = blocks.shape
        blocks = (KT @ blocks.reshape(K, d * d)).reshape(K, d, d)
        out = HybridDensityField(fld.grid, blocks, fld.log_weight, fld.t + dt)
        after = out.total_trace()
        if not np.isfinite(after):
            raise NumericalOverflowError("field blocks", f"at t={out.t}")
        if abs(after - before) > TRACE_PRESERVATION_RTOL * max(1.0, abs(before)):
            raise NumericalOverflowError(
                "field trace", f"prediction drifted {after - before:.3e} at t={out.t}")
        return out

    def estimate(self, fld: HybridDensityField) -> FilterEstimate:
        traces = fld.block_traces()
        total = traces.sum() * fld.grid.cell_volume
        p_x = traces / total
        mean, cov = grid_moments(fld.grid, np.clip(traces, 0.0, None))
        rho = fld.blocks.sum(axis=0) * fld.grid.cell_volume
        rho = rho / np.trace(rho).real
        return FilterEstimate(t=fld.t, p_x=p_x, x_mean=mean, x_cov=cov,
                              rho_cond=rho, log_likelihood=fld.log_weight)

    def run_filter(self, record: TrajectoryRecord, stride: int | None = None) -> FilterRun:
        """Alternate update and predict over the whole record.

        Emits one estimate per step at the post-step times t0+dt, ..., T; a
        zero-length record yields the prior estimate only.  Snapshots of the
        field (with ledger) are stored at ``stride`` for the smoother.
        """
        scen = self.scenario
        if stride is None:
            stride = scen.effective_stride()
        L = record.n_steps
        snaps = snapshot_indices(L, stride)
        fld = self.init_field()
        snapshots = {0: fld.copy()} if 0 in snaps else {}
        estimates = []
        if L == 0:
            return FilterRun([self.estimate(fld)], snapshots, fld)
        for i in range(L):
            try:
                fld = self.update_step(fld, record.dy[i])
                fld = self.predict_step(fld)
            except (DegenerateUpdateError, NumericalOverflowError) as exc:
                raise type(exc)(f"step {i}: {exc}") from exc
            estimates.append(self.estimate(fld))
            if i + 1 in snaps:
                snapshots[i + 1] = fld.copy()
        return FilterRun(estimates, snapshots, fld,
                         stats={"kernel": self.ops.kernels.stats})

    def predict_ahead(self, fld: HybridDensityField, horizon: float,
                      dt: float | None = None) -> list:
        """Measurement-free prediction from ``fld`` for ``horizon`` time units."""
        dt = self.scenario.dt if dt is None else dt
        if horizon < 0:
            raise ValueError("horizon must be nonnegative")
        steps = int(round(horizon / dt))
        out = [self.estimate(fld)]
        for _ in range(steps):
            fld = self.predict_step(fld, dt)
            out.append(self.estimate(fld))
        return out


def init_field(scenario: Scenario) -> HybridDensityField:
    return ForwardFilter(scenario).init_field()


def run_filter(scenario: Scenario, record: TrajectoryRecord,
               stride: int | None = None) -> FilterRun:
    return ForwardFilter(scenario).run_filter(record, stride=stride)


# ---------------------------------------------------------------------------
# Snapshot files: decimal text, one file per snapshot.
# ---------------------------------------------------------------------------

def write_field_snapshot(fld: HybridDensityField, path: str, direction: str = "forward",
                         scenario_id: str = "") -> None:
    K, d, _ = fld.blocks.shape
    gridspec = [[fld.grid.mins[i], fld.grid.maxs[i], fld.grid.counts[i]]
                for i in range(fld.grid.ndim)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# qsmooth-snapshot-v1 direction={direction} "
                 f"t={float(fld.t)!r} log_weight={float(fld.log_weight)!r} "
                 f"points={K} dim={d}"
                 + (f" scenario={scenario_id}" if scenario_id else "") + "\n")
        fh.write(f"# grid {json.dumps(gridspec)}\n")
        for k in range(K):
            for row in range(d):
                fh.write(" ".join(
                    f"{float(fld.blocks[k, row, col].real)!r} "
                    f"{float(fld.blocks[k, row, col].imag)!r}"
                    for col in range(d)) + "\n")


def read_field_snapshot(path: str) -> tuple[HybridDensityField, str]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        gridline = fh.readline().strip()
        body = fh.read().split()
    if not header.startswith("# qsmooth-snapshot-v1"):
        raise ValueError("not a qsmooth snapshot file")
    fields = dict(part.split("=", 1) for part in header.split()[2:])
    gridspec = json.loads(gridline[len("# grid "):])
    grid = ClassicalGrid.regular([(lo, hi, int(c)) for lo, hi, c in gridspec])
    K, d = int(fields["points"]), int(fields["dim"])
    vals = np.array(body, dtype=float).reshape(K, d, d, 2)
    blocks = vals[..., 0] + 1j * vals[..., 1]
    fld = HybridDensityField(grid, blocks, float(fields["log_weight"]), float(fields["t"]))
    return fld, fields["direction"]
