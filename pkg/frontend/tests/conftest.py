import json
import subprocess
import sys

import pytest

DEMO_CONFIG = {
    "quantum": {"omega": 1.0, "hbar": 1.0, "fock_dim": 6},
    "classical": {"preset": "ou", "rate": 0.3, "noise": 0.45,
                  "initial_mean": 0.0, "initial_cov": 0.3375},
    "measurement": {"preset": "position", "noise_rate": 0.2},
    "grid": {"min": -2.95, "max": 2.95, "points": 41},
    "time": {"t0": 0.0, "T": 2.5, "dt": 0.002},
    "snapshot_stride": 5,
    "seed": 19,
}


def run_cli(*args):
    """Drive the estimation toolkit strictly through its command line."""
    proc = subprocess.run([sys.executable, "-m", "qsmooth.cli", *args],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="session")
def demo_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("demo")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(DEMO_CONFIG, indent=1))
    out = root / "run"
    run_cli("simulate", "--config", str(cfg), "--out", str(out))
    run_cli("estimate", "--config", str(cfg), "--record", str(out / "record.csv"),
            "--out", str(out), "--methods", "filter,smooth,kalman,kalman-smooth")
    run_cli("ensemble", "--config", str(cfg), "--out", str(out),
            "--runs", "8", "--seed", "100")
    return out
