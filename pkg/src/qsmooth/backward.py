"""Backward effect equation: the adjoint of the forward composition, iterated
in reverse step order from the identity final condition.

Each backward step undoes one forward step using the same recorded increment:
adjoint kernel mixing (transpose of the forward mixing), adjoint dynamics, then
the adjoint measurement update, with a per-step renormalization ledger.  The
dynamics sub-step applies the same degree-4 polynomial in the adjoint
generator, so every forward/backward step pair is exactly dual up to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._gridops import GridOps
from .classical import ClassicalGrid
from .errors import NumericalOverflowError
from .forward import snapshot_indices
from .operators import measurement_kraus, taylor4_lindblad_step
from .scenario import Scenario
from .truth import TrajectoryRecord


@dataclass
class EffectField:
    """Grid of Hermitian effect blocks g(x_k, t) with a log-normalization ledger."""

    grid: ClassicalGrid
    blocks: np.ndarray          # (K, d, d) complex
    log_weight: float
    t: float

    def copy(self) -> "EffectField":
        return EffectField(self.grid, self.blocks.copy(), self.log_weight, self.t)

    def total_trace(self) -> float:
        return float(np.trace(self.blocks, axis1=1, axis2=2).real.sum() * self.grid.cell_volume)


class BackwardFilter:
    """Effect-equation engine; shares the kernel cache with the forward engine."""

    def __init__(self, scenario: Scenario, grid_ops: GridOps | None = None):
        self.scenario = scenario
        self.ops = grid_ops if grid_ops is not None else GridOps(scenario)

    def init_effect(self) -> EffectField:
        """Final condition: identity blocks at t = T, zero ledger."""
        scen = self.scenario
        K, d = scen.grid.n_points, scen.quantum.dim
        blocks = np.tile(np.eye(d, dtype=complex)[None], (K, 1, 1))
        return EffectField(scen.grid, blocks, 0.0, scen.T)

    def backward_step(self, fld: EffectField, dy: np.ndarray,
                      dt: float | None = None) -> EffectField:
        """One reverse step consuming the increment observed at t - dt."""
        dt = self.scenario.dt if dt is None else dt
        t_new = fld.t - dt
        if t_new < self.scenario.t0 - 1e-9 * max(1.0, abs(self.scenario.t0)):
            raise ValueError("backward step would cross t0")
        K_mat = self.ops.kernel(t_new, dt)
        Kn, d, _ = fld.blocks.shape
        blocks = (K_mat @ fld.blocks.reshape(Kn, d * d)).reshape(Kn, d, d)
        blocks = taylor4_lindblad_step(self.ops.H_all, self.ops.dissipators,
                                       self.ops.hbar, blocks, dt, adjoint=True)
        M = measurement_kraus(self.scenario.measurement, dy, dt)
        blocks = M.conj().T @ blocks @ M
        total = np.trace(blocks, axis1=1, axis2=2).real.sum() * fld.grid.cell_volume
        if not np.isfinite(total) or total <= 1e-300:
            raise NumericalOverflowError("effect blocks", f"trace {total:.3e} at t={t_new}")
        return EffectField(fld.grid, blocks / total,
                           fld.log_weight + float(np.log(total)), t_new)

    def run_backward(self, record: TrajectoryRecord, stride: int | None = None) -> dict:
        """Iterate from T down to t0; returns snapshots keyed by step index.

        Index i holds the effect of increments i, ..., L-1, aligned with the
        forward snapshot at the same index.  A zero-length record yields the
        single identity snapshot.
        """
        if stride is None:
            stride = self.scenario.effective_stride()
        L = record.n_steps
        snaps = snapshot_indices(L, stride)
        fld = self.init_effect()
        out = {}
        if L in snaps:
            out[L] = fld.copy()
        for i in range(L - 1, -1, -1):
            fld = self.backward_step(fld, record.dy[i])
            if i in snaps:
                out[i] = fld.copy()
        return out


def init_effect(scenario: Scenario) -> EffectField:
    return BackwardFilter(scenario).init_effect()


def run_backward(scenario: Scenario, record: TrajectoryRecord,
                 stride: int | None = None) -> dict:
    return BackwardFilter(scenario).run_backward(record, stride=stride)
