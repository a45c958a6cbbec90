"""Scenario assembly: presets, strict JSON config validation, fingerprinting.

A ``Scenario`` bundles the quantum model, classical signal model, measurement
model, grid, and time discretization.  Config-built scenarios carry the config
hash as their id so records and estimates can be cross-checked; programmatic
scenarios (used heavily in tests) pass an explicit id.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .classical import ClassicalGrid, ClassicalModel, linear_model
from .errors import ConfigError
from .operators import MeasurementModel, QuantumModel, build_fock_operators

TOOL_VERSION = "0.1.0"


@dataclass(frozen=True)
class Scenario:
    quantum: QuantumModel
    classical: ClassicalModel
    measurement: MeasurementModel
    grid: ClassicalGrid
    t0: float
    T: float
    dt: float
    seed: int = 0
    snapshot_stride: int | None = None
    scenario_id: str = "adhoc"
    config: dict | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        steps = (self.T - self.t0) / self.dt
        if self.T < self.t0 or abs(steps - round(steps)) > 1e-6:
            raise ValueError("dt must divide T - t0")
        if self.measurement.dim != self.quantum.dim:
            raise ValueError("measurement channels and quantum model disagree on dimension")
        if self.grid.ndim != self.classical.n:
            raise ValueError("grid dimension does not match the classical state dimension")

    @property
    def n_steps(self) -> int:
        return int(round((self.T - self.t0) / self.dt))

    @property
    def times(self) -> np.ndarray:
        """Full time grid t0, t0+dt, ..., T (n_steps + 1 values)."""
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def effective_stride(self) -> int:
        if self.snapshot_stride is not None:
            return max(1, int(self.snapshot_stride))
        L = self.n_steps
        return 1 if L <= 10_000 else int(math.ceil(L / 1000))


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------

_TIME_KEYS = {"t0": float, "T": float, "dt": float}
_GRID_KEYS = {"min": float, "max": float, "points": int}


def _require(cfg: dict, path: str, keys: dict, optional: set = frozenset()):
    """Check presence/types and reject unknown keys, reporting dotted paths."""
    for key in cfg:
        if key not in keys and key not in optional:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    out = {}
    for key, typ in keys.items():
        full = f"{path}.{key}" if path else key
        if key not in cfg:
            raise ConfigError(full, "missing required key")
        val = cfg[key]
        if typ is float:
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ConfigError(full, f"expected a number, got {type(val).__name__}")
            val = float(val)
        elif typ is int:
            if not isinstance(val, int) or isinstance(val, bool):
                raise ConfigError(full, f"expected an integer, got {type(val).__name__}")
        elif typ is str and not isinstance(val, str):
            raise ConfigError(full, f"expected a string, got {type(val).__name__}")
        out[key] = val
    return out


def _build_quantum(cfg, path="quantum"):
    if not isinstance(cfg, dict):
        raise ConfigError(path, "expected an object")
    base = _require(cfg, path, {"omega": float, "hbar": float, "fock_dim": int},
                    optional={"dissipators", "initial_state"})
    omega, hbar, dim = base["omega"], base["hbar"], base["fock_dim"]
    if omega <= 0 or hbar <= 0:
        raise ConfigError(f"{path}.omega", "omega and hbar must be positive")
    if dim < 2:
        raise ConfigError(f"{path}.fock_dim", "fock_dim must be >= 2")
    ops = build_fock_operators(dim, omega, hbar)
    H0 = 0.5 * (ops.p @ ops.p + omega**2 * (ops.q @ ops.q))
    q = ops.q

    def hamiltonian(x, _H0=H0, _q=q):
        return _H0 - float(np.atleast_1d(x)[0]) * _q

    dissipators = []
    for i, dcfg in enumerate(cfg.get("dissipators", [])):
        dpath = f"{path}.dissipators[{i}]"
        spec = _require(dcfg, dpath, {"kind": str, "rate": float})
        if spec["rate"] < 0:
            raise ConfigError(f"{dpath}.rate", "rate must be nonnegative")
        root = math.sqrt(spec["rate"])
        if spec["kind"] == "lowering":
            dissipators.append(root * ops.a)
        elif spec["kind"] == "number":
            dissipators.append(root * (ops.a_dag @ ops.a))
        else:
            raise ConfigError(f"{dpath}.kind", f"unknown dissipator kind {spec['kind']!r}")

    init_cfg = cfg.get("initial_state", "ground")
    if init_cfg == "ground":
        rho0 = None
    elif isinstance(init_cfg, dict) and set(init_cfg) == {"thermal"}:
        nbar = float(init_cfg["thermal"])
        if nbar < 0:
            raise ConfigError(f"{path}.initial_state.thermal", "occupation must be nonnegative")
        weights = (nbar / (1.0 + nbar)) ** np.arange(dim) if nbar > 0 else np.eye(dim)[0]
        rho0 = np.diag(weights / weights.sum()).astype(complex)
    else:
        raise ConfigError(f"{path}.initial_state", "expected \"ground\" or {\"thermal\": nbar}")

    model = QuantumModel(dim=dim, hamiltonian_builder=hamiltonian,
                         dissipators=tuple(dissipators), hbar=hbar, initial_state=rho0)
    nbar = float(init_cfg["thermal"]) if isinstance(init_cfg, dict) else 0.0
    meta = {"kind": "oscillator", "omega": omega, "hbar": hbar, "fock_dim": dim,
            "n_dissipators": len(dissipators), "thermal_nbar": nbar}
    return model, meta


def _build_classical(cfg, path="classical"):
    if not isinstance(cfg, dict):
        raise ConfigError(path, "expected an object")
    preset = cfg.get("preset")
    if preset is None:
        raise ConfigError(f"{path}.preset", "missing required key")
    common = {"preset": str, "initial_mean": float, "initial_cov": float}
    if preset == "ou":
        spec = _require(cfg, path, {**common, "rate": float, "noise": float})
        lam, sig = spec["rate"], spec["noise"]
        if lam <= 0:
            raise ConfigError(f"{path}.rate", "OU rate must be positive")
        model = linear_model(1, [[-lam]], [[sig]], [[1.0]], [spec["initial_mean"]], [[spec["initial_cov"]]])
        meta = {"preset": "ou", "A": [[-lam]], "BQBt": [[sig * sig]]}
    elif preset == "random_walk":
        spec = _require(cfg, path, {**common, "noise": float})
        sig = spec["noise"]
        model = linear_model(1, [[0.0]], [[sig]], [[1.0]], [spec["initial_mean"]], [[spec["initial_cov"]]])
        meta = {"preset": "random_walk", "A": [[0.0]], "BQBt": [[sig * sig]]}
    elif preset == "constant":
        spec = _require(cfg, path, common)
        model = linear_model(1, [[0.0]], [[0.0]], [[0.0]], [spec["initial_mean"]], [[spec["initial_cov"]]])
        meta = {"preset": "constant", "A": [[0.0]], "BQBt": [[0.0]]}
    else:
        raise ConfigError(f"{path}.preset", f"unknown classical preset {preset!r}")
    if spec["initial_cov"] < 0:
        raise ConfigError(f"{path}.initial_cov", "variance must be nonnegative")
    return model, meta


def _build_measurement(cfg, quantum_meta, quantum, path="measurement"):
    if not isinstance(cfg, dict):
        raise ConfigError(path, "expected an object")
    spec = _require(cfg, path, {"preset": str, "noise_rate": float})
    if spec["preset"] != "position":
        raise ConfigError(f"{path}.preset", f"unknown measurement preset {spec['preset']!r}")
    if spec["noise_rate"] <= 0:
        raise ConfigError(f"{path}.noise_rate", "noise rate must be positive")
    ops = build_fock_operators(quantum_meta["fock_dim"], quantum_meta["omega"], quantum_meta["hbar"])
    model = MeasurementModel(channels=(ops.q,), R=np.array([[spec["noise_rate"]]]))
    meta = {"preset": "position", "R": spec["noise_rate"]}
    return model, meta


def _build_grid(cfg, path="grid"):
    if not isinstance(cfg, dict):
        raise ConfigError(path, "expected an object")
    spec = _require(cfg, path, _GRID_KEYS)
    if spec["points"] < 3:
        raise ConfigError(f"{path}.points", "grids need at least 3 points")
    if spec["max"] <= spec["min"]:
        raise ConfigError(f"{path}.max", "grid max must exceed min")
    return ClassicalGrid.regular([(spec["min"], spec["max"], spec["points"])])


def canonical_config_json(config: dict) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def scenario_hash(config: dict) -> str:
    return hashlib.sha256(canonical_config_json(config).encode()).hexdigest()[:16]


def build_scenario(config: dict) -> Scenario:
    """Validate a config mapping and assemble the scenario it describes."""
    if not isinstance(config, dict):
        raise ConfigError("", "top-level config must be an object")
    top = {"quantum", "classical", "measurement", "grid", "time", "seed"}
    for key in config:
        if key not in top and key != "snapshot_stride":
            raise ConfigError(key, "unknown key")
    for key in top:
        if key not in config:
            raise ConfigError(key, "missing required key")
    quantum, qmeta = _build_quantum(config["quantum"])
    classical, cmeta = _build_classical(config["classical"])
    measurement, mmeta = _build_measurement(config["measurement"], qmeta, quantum)
    grid = _build_grid(config["grid"])
    tspec = _require(config["time"], "time", _TIME_KEYS)
    if not isinstance(config["seed"], int) or isinstance(config["seed"], bool):
        raise ConfigError("seed", "expected an integer")
    stride = config.get("snapshot_stride")
    if stride is not None and (not isinstance(stride, int) or stride < 1):
        raise ConfigError("snapshot_stride", "expected a positive integer")

    _warn_if_grid_narrow(classical, grid)
    try:
        scen = Scenario(
            quantum=quantum, classical=classical, measurement=measurement, grid=grid,
            t0=tspec["t0"], T=tspec["T"], dt=tspec["dt"], seed=config["seed"],
            snapshot_stride=stride, scenario_id=scenario_hash(config), config=config,
        )
    except ValueError as exc:
        raise ConfigError("time", str(exc)) from exc
    object.__setattr__(scen, "_meta", {"quantum": qmeta, "classical": cmeta, "measurement": mmeta})
    return scen


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"invalid JSON: {exc}") from exc
    return build_scenario(config)


def scenario_meta(scenario: Scenario) -> dict | None:
    return getattr(scenario, "_meta", None)


def with_resolution(scenario: Scenario, fock_dim=None, grid_points=None) -> Scenario:
    """Rebuild a config-based scenario at a different truncation/grid resolution.

    The scenario id is preserved so records from the base resolution replay."""
    if scenario.config is None:
        raise ValueError("with_resolution requires a config-built scenario")
    cfg = json.loads(canonical_config_json(scenario.config))
    if fock_dim is not None:
        cfg["quantum"]["fock_dim"] = int(fock_dim)
    if grid_points is not None:
        cfg["grid"]["points"] = int(grid_points)
    rebuilt = build_scenario(cfg)
    return replace(rebuilt, scenario_id=scenario.scenario_id)


def _warn_if_grid_narrow(classical: ClassicalModel, grid: ClassicalGrid):
    """Grids should span >= 5 prior standard deviations around the prior mean."""
    stds = np.sqrt(np.clip(np.diag(classical.initial_cov), 0.0, None))
    for dim in range(grid.ndim):
        lo = classical.initial_mean[dim] - 5.0 * stds[dim]
        hi = classical.initial_mean[dim] + 5.0 * stds[dim]
        if grid.mins[dim] > lo or grid.maxs[dim] < hi:
            warnings.warn(
                f"grid dimension {dim} spans less than 5 prior standard deviations "
                f"([{grid.mins[dim]}, {grid.maxs[dim]}] vs [{lo:.3g}, {hi:.3g}])",
                stacklevel=3,
            )
