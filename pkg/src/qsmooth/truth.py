"""Ground-truth generation: classical sample path, conditional quantum state,
and the continuous measurement record.

The conditional state given the true path follows the known-x weak-measurement
update, so the simulator and the estimators are fully independent code paths.
Randomness comes from one counter-based generator per record, split into a
classical stream and a measurement stream, which keeps the two noise sources
decoupled under parameter changes and makes records replayable bit-exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .classical import euler_maruyama_step, sample_wiener
from .errors import DegenerateRecordError, ScenarioMismatchError
from .operators import measurement_kraus, taylor4_lindblad_step
from .scenario import TOOL_VERSION, Scenario

TRACE_FLOOR = 1e-12


@dataclass(frozen=True)
class TrajectoryRecord:
    """One simulated experiment: true path, measurement increments, provenance.

    Row i holds the state at t0 + (i+1) dt and the increment dy over
    [t0 + i dt, t0 + (i+1) dt); both arrays have n_steps rows.
    """

    t0: float
    T: float
    dt: float
    x_true: np.ndarray
    dy: np.ndarray
    seed: int
    scenario_id: str

    def __post_init__(self):
        steps = int(round((self.T - self.t0) / self.dt))
        if self.x_true.shape[0] != steps or self.dy.shape[0] != steps:
            raise ValueError("record length does not match (T - t0)/dt")

    @property
    def n_steps(self) -> int:
        return self.x_true.shape[0]

    @property
    def times(self) -> np.ndarray:
        """Times of the stored states: t0 + dt, ..., T."""
        return self.t0 + self.dt * np.arange(1, self.n_steps + 1)


@dataclass
class TruthDetails:
    """Per-step internals kept for diagnostics and tests."""

    rho_true: np.ndarray      # (L+1, d, d) conditional state, rho_true[0] = prior
    dy_mean: np.ndarray       # (L, m) emission means tr[(C+C*)rho]/2 * dt / dt
    innovations: np.ndarray   # (L, m) injected Gaussian increments


def _record_streams(seed: int):
    children = np.random.SeedSequence(seed).spawn(2)
    return (np.random.Generator(np.random.Philox(children[0])),
            np.random.Generator(np.random.Philox(children[1])))


def _hermitize(rho):
    return 0.5 * (rho + rho.conj().T)


def simulate_truth(scenario: Scenario, seed: int, with_details: bool = False):
    """Generate a trajectory record; optionally return per-step internals.

    Per step: advance x by Euler-Maruyama; emit dy = mean_rate(rho) dt + deta
    with deta ~ N(0, R dt); evolve rho by one Lindblad step at the pre-advance
    x followed by the weak-measurement update with the emitted dy.
    """
    cl, qu, meas = scenario.classical, scenario.quantum, scenario.measurement
    L = scenario.n_steps
    rng_cl, rng_meas = _record_streams(seed)

    x = cl.initial_mean + sample_wiener(rng_cl, cl.initial_cov, 1.0)
    rho = qu.initial_state.copy()
    Rchol = np.linalg.cholesky(meas.R)

    x_true = np.empty((L, cl.n))
    dys = np.empty((L, meas.n_channels))
    if with_details:
        rho_path = np.empty((L + 1, qu.dim, qu.dim), dtype=complex)
        rho_path[0] = rho
        means = np.empty((L, meas.n_channels))
        detas = np.empty((L, meas.n_channels))

    for i in range(L):
        t = scenario.t0 + i * scenario.dt
        x_prev = x
        dW = sample_wiener(rng_cl, cl.wiener_cov, scenario.dt)
        x = euler_maruyama_step(cl, x, t, scenario.dt, dW)
        x_true[i] = x

        mean = meas.mean_rate(rho)
        deta = np.sqrt(scenario.dt) * (Rchol @ rng_meas.standard_normal(meas.n_channels))
        dy = mean * scenario.dt + deta
        dys[i] = dy

        rho = taylor4_lindblad_step(
            qu.hamiltonian(x_prev)[None], qu.dissipators, qu.hbar, rho[None], scenario.dt
        )[0]
        M = measurement_kraus(meas, dy, scenario.dt)
        rho = M @ rho @ M.conj().T
        tr = np.trace(rho).real
        if not np.isfinite(tr) or tr < TRACE_FLOOR:
            raise DegenerateRecordError(
                f"conditional state trace {tr:.3e} at step {i}; decrease dt")
        rho = _hermitize(rho / tr)

        if with_details:
            rho_path[i + 1] = rho
            means[i] = mean
            detas[i] = deta

    record = TrajectoryRecord(t0=scenario.t0, T=scenario.T, dt=scenario.dt,
                              x_true=x_true, dy=dys, seed=seed,
                              scenario_id=scenario.scenario_id)
    if with_details:
        return record, TruthDetails(rho_true=rho_path, dy_mean=means, innovations=detas)
    return record


def simulate_truth_batch(scenario: Scenario, seeds) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized simulation of many records at once (ensemble fast path).

    Returns (x_true, dy) with shapes (B, L, n) and (B, L, m).  Noise streams
    per seed are identical to :func:`simulate_truth`; results agree with the
    sequential path up to (and normally including) floating-point identity,
    but records produced here are not persisted by callers.
    """
    cl, qu, meas = scenario.classical, scenario.quantum, scenario.measurement
    L, B = scenario.n_steps, len(seeds)
    gens = [_record_streams(s) for s in seeds]
    Rchol = np.linalg.cholesky(meas.R)

    x = np.stack([cl.initial_mean + sample_wiener(g_cl, cl.initial_cov, 1.0) for g_cl, _ in gens])
    dWs = np.stack([sample_wiener(g_cl, cl.wiener_cov, scenario.dt, size=L) for g_cl, _ in gens])
    whites = np.stack([g_meas.standard_normal((L, meas.n_channels)) for _, g_meas in gens])
    detas = np.sqrt(scenario.dt) * (whites @ Rchol.T)

    rho = np.tile(qu.initial_state[None], (B, 1, 1))
    x_true = np.empty((B, L, cl.n))
    dys = np.empty((B, L, meas.n_channels))

    for i in range(L):
        t = scenario.t0 + i * scenario.dt
        H_all = _hamiltonians_at(qu, x)
        x = euler_maruyama_step(cl, x, t, scenario.dt, dWs[:, i])
        x_true[:, i] = x

        mean = meas.mean_rate(rho)
        dy = mean * scenario.dt + detas[:, i]
        dys[:, i] = dy

        rho = taylor4_lindblad_step(H_all, qu.dissipators, qu.hbar, rho, scenario.dt)
        Ms = _kraus_batch(meas, dy, scenario.dt)
        rho = Ms @ rho @ np.conj(np.swapaxes(Ms, 1, 2))
        tr = np.trace(rho, axis1=1, axis2=2).real
        if not np.all(np.isfinite(tr)) or np.min(tr) < TRACE_FLOOR:
            raise DegenerateRecordError(f"conditional state trace underflow at step {i}")
        rho = 0.5 * (rho + np.conj(np.swapaxes(rho, 1, 2))) / tr[:, None, None]
    return x_true, dys


def _hamiltonians_at(qu, xs):
    return np.stack([qu.hamiltonian(x) for x in xs])


def _kraus_batch(meas, dys, dt):
    B = dys.shape[0]
    d = meas.dim
    w = dys @ meas.R_inv.T
    Ms = np.tile(np.eye(d, dtype=complex)[None], (B, 1, 1)) - (dt / 8.0) * meas.quad_term[None]
    for nu, C in enumerate(meas.channels):
        Ms += 0.5 * w[:, nu, None, None] * C[None]
    return Ms


def replay_check(record: TrajectoryRecord, scenario: Scenario) -> bool:
    """True iff regeneration from (scenario, seed) reproduces the record bit-exactly."""
    if record.scenario_id != scenario.scenario_id:
        raise ScenarioMismatchError(
            f"record was generated for scenario {record.scenario_id}, "
            f"got {scenario.scenario_id}")
    fresh = simulate_truth(scenario, record.seed)
    return (np.array_equal(fresh.x_true, record.x_true)
            and np.array_equal(fresh.dy, record.dy))


# ---------------------------------------------------------------------------
# Record files: columnar CSV plus a JSON metadata sidecar.
# ---------------------------------------------------------------------------

def record_paths(out_dir: str) -> tuple[str, str]:
    return os.path.join(out_dir, "record.csv"), os.path.join(out_dir, "record.meta.json")


def write_record(record: TrajectoryRecord, csv_path: str, meta_path: str) -> None:
    n = record.x_true.shape[1]
    m = record.dy.shape[1]
    cols = ["t"] + [f"x_true_{i}" for i in range(n)] + [f"dy_{j}" for j in range(m)]
    times = record.times
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(f"# qsmooth-record-v1 scenario={record.scenario_id}\n")
        fh.write(",".join(cols) + "\n")
        for i in range(record.n_steps):
            vals = [times[i], *record.x_true[i], *record.dy[i]]
            fh.write(",".join(repr(float(v)) for v in vals) + "\n")
    meta = {
        "format": "qsmooth-record-v1",
        "tool_version": TOOL_VERSION,
        "scenario_hash": record.scenario_id,
        "seed": record.seed,
        "t0": record.t0,
        "T": record.T,
        "dt": record.dt,
        "n_steps": record.n_steps,
        "state_dim": n,
        "channels": m,
    }
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_record(csv_path: str, meta_path: str) -> TrajectoryRecord:
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    n, m = meta["state_dim"], meta["channels"]
    data = np.loadtxt(csv_path, delimiter=",", skiprows=2, ndmin=2)
    if data.shape[1] != 1 + n + m:
        raise ValueError("record CSV column count does not match its metadata")
    return TrajectoryRecord(
        t0=meta["t0"], T=meta["T"], dt=meta["dt"],
        x_true=data[:, 1:1 + n].copy(), dy=data[:, 1 + n:].copy(),
        seed=meta["seed"], scenario_id=meta["scenario_hash"],
    )
