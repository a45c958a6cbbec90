"""Two-filter smoothing: combine forward density and backward effect fields
into classical smoothing densities, plus retrodiction from the prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._gridops import GridOps, grid_moments
from .backward import BackwardFilter, EffectField
from .errors import DegenerateSmoothingError
from .forward import ForwardFilter, HybridDensityField, snapshot_indices
from .scenario import Scenario
from .truth import TrajectoryRecord

IMAG_RESIDUE_TOL = 1e-8


@dataclass
class SmoothingDensity:
    t: float
    h: np.ndarray               # smoothed classical density over the grid
    x_mean: np.ndarray
    x_cov: np.ndarray


def combine(f_snap: HybridDensityField, g_snap: EffectField) -> SmoothingDensity:
    """Smoothing density h(x_k) proportional to tr[g(x_k) f(x_k)].

    The trace is taken as the real part of the Frobenius pairing; the imaginary
    residue is asserted small and discarded.
    """
    if f_snap.blocks.shape != g_snap.blocks.shape:
        raise ValueError("forward and backward fields have mismatched shapes")
    if f_snap.grid.counts != g_snap.grid.counts or f_snap.grid.mins != g_snap.grid.mins:
        raise ValueError("forward and backward fields live on different grids")
    if abs(f_snap.t - g_snap.t) > 1e-9 * max(1.0, abs(f_snap.t)):
        raise ValueError(f"snapshot times differ: {f_snap.t} vs {g_snap.t}")
    pair = np.einsum("kij,kji->k", g_snap.blocks, f_snap.blocks)
    scale = float(np.max(np.abs(pair))) or 1.0
    if np.max(np.abs(pair.imag)) > IMAG_RESIDUE_TOL * scale:
        raise DegenerateSmoothingError(
            f"imaginary residue {np.max(np.abs(pair.imag)):.3e} in the overlap")
    vals = pair.real
    total = vals.sum() * f_snap.grid.cell_volume
    if not np.isfinite(total) or total <= 0.0:
        raise DegenerateSmoothingError(
            f"forward/backward overlap vanished at t={f_snap.t} "
            "(grid or truncation failure)")
    h = vals / total
    mean, cov = grid_moments(f_snap.grid, np.clip(vals, 0.0, None))
    return SmoothingDensity(t=f_snap.t, h=h, x_mean=mean, x_cov=cov)


def smooth_series(scenario: Scenario, record: TrajectoryRecord,
                  stride: int | None = None, return_filter: bool = False,
                  drop_snapshots: bool = False):
    """Run both passes and combine at every snapshot time.

    Returns the smoothing densities in ascending time; the density at T equals
    the filtering marginal there.  With ``return_filter`` the forward run
    (estimates and snapshots) is returned as well, sharing one forward pass.
    ``drop_snapshots`` releases each forward snapshot once combined, bounding
    memory on long runs.
    """
    ops = GridOps(scenario)
    fwd = ForwardFilter(scenario, ops)
    bwd = BackwardFilter(scenario, ops)
    run = fwd.run_filter(record, stride=stride)
    series = _combine_backward(bwd, run.snapshots, record, drop=drop_snapshots)
    if return_filter:
        return series, run
    return series


def smooth_with_effects(scenario: Scenario, record: TrajectoryRecord,
                        stride: int | None = None, collect: set | None = None):
    """Like :func:`smooth_series` but also returns the forward run and the
    effect-field snapshots at the indices in ``collect`` (for file output)."""
    ops = GridOps(scenario)
    fwd = ForwardFilter(scenario, ops)
    bwd = BackwardFilter(scenario, ops)
    run = fwd.run_filter(record, stride=stride)
    series, effects = _combine_backward(bwd, run.snapshots, record,
                                        collect=collect or set(), with_effects=True)
    return series, run, effects


def retrodict(scenario: Scenario, record: TrajectoryRecord,
              stride: int | None = None):
    """Smoothing with an empty past: effect field against the propagated prior."""
    ops = GridOps(scenario)
    fwd = ForwardFilter(scenario, ops)
    bwd = BackwardFilter(scenario, ops)
    if stride is None:
        stride = scenario.effective_stride()
    L = record.n_steps
    snaps = snapshot_indices(L, stride)
    fld = fwd.init_field()
    prior_snaps = {0: fld.copy()} if 0 in snaps else {}
    for i in range(L):
        fld = fwd.predict_step(fld)
        if i + 1 in snaps:
            prior_snaps[i + 1] = fld.copy()
    return _combine_backward(bwd, prior_snaps, record)


def _combine_backward(bwd: BackwardFilter, fwd_snapshots: dict,
                      record: TrajectoryRecord, collect: set = frozenset(),
                      with_effects: bool = False, drop: bool = False):
    """Backward pass fused with combination at the forward snapshot indices."""
    L = record.n_steps
    out = {}
    effects = {}
    g = bwd.init_effect()
    if L in fwd_snapshots:
        out[L] = combine(fwd_snapshots[L], g)
        if drop:
            fwd_snapshots.pop(L)
    if L in collect:
        effects[L] = g.copy()
    for i in range(L - 1, -1, -1):
        g = bwd.backward_step(g, record.dy[i])
        if i in fwd_snapshots:
            out[i] = combine(fwd_snapshots[i], g)
            if drop:
                fwd_snapshots.pop(i)
        if i in collect:
            effects[i] = g.copy()
    series = [out[i] for i in sorted(out)]
    if with_effects:
        return series, effects
    return series
