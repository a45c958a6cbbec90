"""Command-line orchestration: simulate, estimate, ensemble, oracle-check,
derive-lg.

Truth generation and estimation run in separate invocations so the estimators
can never peek at the hidden path.  All outputs are deterministic functions of
(config, seed): floats are serialized with shortest round-trip formatting and
every file embeds the scenario hash.

Exit codes: 0 ok, 2 config error, 3 numerical degeneracy, 4 partial ensemble
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ._gridops import GridOps
from .backward import BackwardFilter
from .errors import (
    ConfigError,
    DegenerateRecordError,
    DegenerateSmoothingError,
    DegenerateUpdateError,
    InvalidGridError,
    NumericalInstabilityError,
    NumericalOverflowError,
    ScenarioMismatchError,
    TooLargeError,
    UnsupportedScenarioError,
)
from .forward import ForwardFilter, snapshot_indices, write_field_snapshot
from .kalman import derive_lg_model, kalman_bucy_backward, kalman_bucy_forward, mfp_series
from .oracle import (
    consistency_instance,
    enumerate_effect,
    enumerate_forward,
    exact_twin_errors,
    iterate_forward,
    observed_order,
    oracle_smooth,
    pairing,
    path_posterior,
    self_convergence_ladder,
)
from .scenario import TOOL_VERSION, build_scenario, load_scenario
from .smoothing import retrodict, smooth_series, smooth_with_effects
from .truth import read_record, record_paths, simulate_truth, simulate_truth_batch, write_record

METHODS = ("filter", "smooth", "retrodict", "kalman", "kalman-smooth")
ESTIMATE_SCHEMA_VERSION = "qsmooth-estimates-v1"
MAX_SNAPSHOT_FILES = 32

NUMERICAL_ERRORS = (DegenerateRecordError, DegenerateUpdateError, DegenerateSmoothingError,
                    NumericalOverflowError, NumericalInstabilityError, TooLargeError)
CONFIG_ERRORS = (ConfigError, ScenarioMismatchError, InvalidGridError,
                 UnsupportedScenarioError)


def _fmt(v) -> str:
    return repr(float(v))


def _write_estimates_csv(path, scenario_id, method, rows, n):
    """Shared estimate schema: method, t, x_mean_*, x_cov_*_*, log_likelihood."""
    cols = (["method", "t"] + [f"x_mean_{i}" for i in range(n)]
            + [f"x_cov_{i}_{j}" for i in range(n) for j in range(n)]
            + ["log_likelihood"])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {ESTIMATE_SCHEMA_VERSION} scenario={scenario_id} tool={TOOL_VERSION}\n")
        fh.write(",".join(cols) + "\n")
        for t, mean, cov, loglik in rows:
            vals = [t, *np.atleast_1d(mean), *np.atleast_2d(cov).reshape(-1), loglik]
            fh.write(method + "," + ",".join(_fmt(v) for v in vals) + "\n")


def _write_density_csv(path, scenario_id, series, grid):
    cols = ["t"] + [f"h_{k}" for k in range(grid.n_points)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# qsmooth-density-v1 scenario={scenario_id} tool={TOOL_VERSION}\n")
        fh.write(",".join(cols) + "\n")
        for s in series:
            fh.write(",".join(_fmt(v) for v in [s.t, *s.h]) + "\n")


def _file_indices(indices) -> set:
    """Thin a snapshot index set down to at most MAX_SNAPSHOT_FILES entries."""
    ordered = sorted(indices)
    if len(ordered) <= MAX_SNAPSHOT_FILES:
        return set(ordered)
    step = math.ceil(len(ordered) / MAX_SNAPSHOT_FILES)
    kept = set(ordered[::step])
    kept.add(ordered[-1])
    return kept


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.config)
    seed = scenario.seed if args.seed is None else args.seed
    record = simulate_truth(scenario, seed)
    os.makedirs(args.out, exist_ok=True)
    csv_path, meta_path = record_paths(args.out)
    write_record(record, csv_path, meta_path)
    rms = np.sqrt(np.mean(record.dy**2, axis=0)) if record.n_steps else np.zeros(0)
    print(f"record: {record.n_steps} steps, dt={record.dt}, seed={seed}")
    print("dy rms per channel:", " ".join(f"{v:.6g}" for v in rms))
    print(f"wrote {csv_path}")
    return 0


def _kalman_rows(run, skip_first=True):
    start = 1 if skip_first else 0
    x_slice = slice(2, None)   # classical block of the (q, p, x) state
    return [(run.times[i], run.means[i][x_slice],
             run.covs[i][x_slice, x_slice], run.log_likelihood[i])
            for i in range(start, len(run.times))]


def cmd_estimate(args) -> int:
    scenario = load_scenario(args.config)
    record_csv = args.record
    meta_path = os.path.splitext(record_csv)[0] + ".meta.json"
    record = read_record(record_csv, meta_path)
    if record.scenario_id != scenario.scenario_id:
        raise ScenarioMismatchError(
            f"record hash {record.scenario_id} does not match config hash "
            f"{scenario.scenario_id}; refusing to run")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise ConfigError("methods", f"unknown method {m!r} (choose from {METHODS})")
    os.makedirs(args.out, exist_ok=True)
    stride = args.stride if args.stride is not None else scenario.effective_stride()
    n = scenario.classical.n
    sid = scenario.scenario_id

    need_grid_fwd = {"filter", "smooth"} & set(methods)
    if need_grid_fwd or "retrodict" in methods:
        snap_dir = os.path.join(args.out, "snapshots")
        os.makedirs(snap_dir, exist_ok=True)

    run = None
    if "smooth" in methods:
        file_idx = _file_indices(snapshot_indices(record.n_steps, stride))
        series, run, effects = smooth_with_effects(scenario, record, stride=stride,
                                                   collect=file_idx)
        total_ll = run.final.log_weight
        rows = [(s.t, s.x_mean, s.x_cov, total_ll) for s in series]
        _write_estimates_csv(os.path.join(args.out, "smooth.csv"), sid, "smooth", rows, n)
        _write_density_csv(os.path.join(args.out, "smooth_density.csv"), sid, series,
                           scenario.grid)
        for i in sorted(effects):
            write_field_snapshot(effects[i],
                                 os.path.join(snap_dir, f"backward_{i:08d}.snap"),
                                 direction="backward", scenario_id=sid)
    if "filter" in methods and run is None:
        run = ForwardFilter(scenario).run_filter(record, stride=stride)
    if "filter" in methods:
        rows = [(e.t, e.x_mean, e.x_cov, e.log_likelihood) for e in run.estimates]
        _write_estimates_csv(os.path.join(args.out, "filter.csv"), sid, "filter", rows, n)
    if run is not None:
        for i in sorted(_file_indices(set(run.snapshots))):
            write_field_snapshot(run.snapshots[i],
                                 os.path.join(snap_dir, f"forward_{i:08d}.snap"),
                                 direction="forward", scenario_id=sid)
    if "retrodict" in methods:
        retro = retrodict(scenario, record, stride=stride)
        rows = [(s.t, s.x_mean, s.x_cov, 0.0) for s in retro]
        _write_estimates_csv(os.path.join(args.out, "retrodict.csv"), sid, "retrodict",
                             rows, n)
    if "kalman" in methods or "kalman-smooth" in methods:
        lg = derive_lg_model(scenario)
        fwd_run = kalman_bucy_forward(lg, record)
        if "kalman" in methods:
            _write_estimates_csv(os.path.join(args.out, "kalman.csv"), sid, "kalman",
                                 _kalman_rows(fwd_run), n)
        if "kalman-smooth" in methods:
            bwd_run = kalman_bucy_backward(lg, record)
            sm_means, sm_covs = mfp_series(fwd_run, bwd_run)
            xs = slice(2, None)
            rows = [(fwd_run.times[i], sm_means[i][xs], sm_covs[i][xs, xs],
                     fwd_run.log_likelihood[-1])
                    for i in range(len(fwd_run.times))]
            _write_estimates_csv(os.path.join(args.out, "kalman_smooth.csv"), sid,
                                 "kalman-smooth", rows, n)
    print(f"estimated methods: {', '.join(methods)} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Ensemble
# ---------------------------------------------------------------------------

def _mid_window(times, t0, T):
    lo, hi = t0 + 0.4 * (T - t0), t0 + 0.6 * (T - t0)
    return (times >= lo) & (times <= hi)


def _grid_ensemble_worker(payload):
    """One ensemble member; returns per-time squared x errors per method."""
    config, seed, methods, stride = payload
    scenario = build_scenario(config)
    record = simulate_truth(scenario, seed)
    truth = record.x_true[:, 0]
    times = record.times
    out = {}
    run = None
    if "smooth" in methods:
        series, run = smooth_series(scenario, record, stride=stride, return_filter=True)
        sm_t = np.array([s.t for s in series])
        sm_e = np.array([s.x_mean[0] for s in series])
        idx = np.round((sm_t - scenario.t0) / scenario.dt).astype(int)
        keep = idx >= 1
        out["smooth"] = (sm_t[keep], (sm_e[keep] - truth[idx[keep] - 1]) ** 2)
    elif "filter" in methods:
        run = ForwardFilter(scenario).run_filter(record, stride=stride)
    if "filter" in methods:
        f_e = np.array([e.x_mean[0] for e in run.estimates])
        out["filter"] = (times, (f_e - truth) ** 2)
    if "kalman" in methods or "kalman-smooth" in methods:
        lg = derive_lg_model(scenario)
        fwd_run = kalman_bucy_forward(lg, record)
        if "kalman" in methods:
            out["kalman"] = (times, (fwd_run.means[1:, 2] - truth) ** 2)
        if "kalman-smooth" in methods:
            bwd_run = kalman_bucy_backward(lg, record)
            sm_means, _ = mfp_series(fwd_run, bwd_run)
            out["kalman-smooth"] = (times, (sm_means[1:, 2] - truth) ** 2)
    return out


def cmd_ensemble(args) -> int:
    scenario = load_scenario(args.config)
    if args.runs < 2:
        raise ConfigError("runs", "ensembles need at least 2 runs")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise ConfigError("methods", f"unknown method {m!r}")
    seed0 = scenario.seed if args.seed is None else args.seed
    seeds = [seed0 + r for r in range(args.runs)]
    os.makedirs(args.out, exist_ok=True)

    times = scenario.times[1:]
    sq_errors = {}      # method -> (n_runs, n_times)
    pred_var = {}
    failures = []

    kalman_only = set(methods) <= {"kalman", "kalman-smooth"}
    if kalman_only:
        x_true, dys = simulate_truth_batch(scenario, seeds)
        truth = x_true[:, :, 0]
        lg = derive_lg_model(scenario)
        from .kalman import (backward_z_batch, forward_means_batch, information_schedule,
                             mfp_means_batch, riccati_schedule)

        covs, gains = riccati_schedule(lg, scenario.dt, scenario.n_steps)
        means = forward_means_batch(lg, dys, scenario.dt, gains=gains)
        if "kalman" in methods:
            sq_errors["kalman"] = (means[:, 1:, 2] - truth) ** 2
            pred_var["kalman"] = covs[1:, 2, 2]
        if "kalman-smooth" in methods:
            Ys = information_schedule(lg, scenario.dt, scenario.n_steps)
            zs = backward_z_batch(lg, dys, scenario.dt, Ys=Ys)
            sm_means, sm_covs = mfp_means_batch(means, covs, zs, Ys)
            sq_errors["kalman-smooth"] = (sm_means[:, 1:, 2] - truth) ** 2
            pred_var["kalman-smooth"] = sm_covs[1:, 2, 2]
        per_run_times = {m: times for m in methods}
    else:
        stride = args.stride if args.stride is not None else scenario.effective_stride()
        payloads = [(scenario.config, s, methods, stride) for s in seeds]
        results = []
        if args.parallelism > 1:
            with ProcessPoolExecutor(max_workers=args.parallelism) as pool:
                futures = [pool.submit(_grid_ensemble_worker, p) for p in payloads]
                for fut in futures:
                    try:
                        results.append(fut.result())
                    except Exception as exc:   # worker failures become run failures
                        results.append(exc)
        else:
            for p in payloads:
                try:
                    results.append(_grid_ensemble_worker(p))
                except NUMERICAL_ERRORS as exc:
                    results.append(exc)
        per_run_times = {}
        acc = {m: [] for m in methods}
        for seed, res in zip(seeds, results):
            if isinstance(res, Exception):
                failures.append((seed, str(res)))
                continue
            for m, (tt, sq) in res.items():
                acc[m].append(sq)
                per_run_times[m] = tt
        for m, rows in acc.items():
            if rows:
                sq_errors[m] = np.array(rows)

    # summary CSV: time-resolved ensemble MSE with standard errors
    sid = scenario.scenario_id
    with open(os.path.join(args.out, "summary.csv"), "w", encoding="utf-8") as fh:
        fh.write(f"# qsmooth-ensemble-v1 scenario={sid} tool={TOOL_VERSION}\n")
        fh.write("t,method,mse,se,pred_var,n_runs\n")
        for m in sorted(sq_errors):
            sq = sq_errors[m]
            tt = per_run_times[m]
            mse = sq.mean(axis=0)
            se = sq.std(axis=0, ddof=1) / math.sqrt(sq.shape[0])
            pv = pred_var.get(m)
            for j, t in enumerate(tt):
                pv_s = _fmt(pv[j]) if pv is not None else ""
                fh.write(f"{_fmt(t)},{m},{_fmt(mse[j])},{_fmt(se[j])},{pv_s},{sq.shape[0]}\n")

    with open(os.path.join(args.out, "runs.csv"), "w", encoding="utf-8") as fh:
        fh.write(f"# qsmooth-ensemble-runs-v1 scenario={sid} tool={TOOL_VERSION}\n")
        fh.write("run,seed,method,mse_mid,status\n")
        for r, seed in enumerate(seeds):
            if any(seed == s for s, _ in failures):
                fh.write(f"{r},{seed},,nan,failed\n")
                continue
            for m in sorted(sq_errors):
                win = _mid_window(per_run_times[m], scenario.t0, scenario.T)
                fh.write(f"{r},{seed},{m},{_fmt(sq_errors[m][r][win].mean())},ok\n")

    n_fail = len(failures)
    print(f"ensemble: {args.runs} runs, {n_fail} failed; methods {', '.join(methods)}")
    for m in sorted(sq_errors):
        win = _mid_window(per_run_times[m], scenario.t0, scenario.T)
        print(f"  {m}: mid-interval MSE {sq_errors[m].mean(axis=0)[win].mean():.6g}")
    if n_fail > 0.1 * args.runs:
        print(f"error: {n_fail}/{args.runs} runs failed", file=sys.stderr)
        return 4
    return 0


def cmd_oracle_check(args) -> int:
    ok = True
    ds, dys = consistency_instance()
    f_enum = enumerate_forward(ds, dys)
    f_iter = iterate_forward(ds, dys)
    res_recursion = float(np.max(np.abs(f_enum - f_iter)))
    eff = enumerate_effect(ds, dys)
    pair = pairing(f_enum, eff)
    res_pairing = float(np.max(np.abs(pair - pair[0])) / abs(pair[0]))
    res_joint = float(np.max(np.abs(oracle_smooth(ds, dys) - path_posterior(ds, dys))))
    for name, res in [("path-sum vs recursion", res_recursion),
                      ("pairing tau-invariance", res_pairing),
                      ("smoothing vs joint enumeration", res_joint)]:
        passed = res < 1e-12
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: residual {res:.3e}")

    dts = args.levels
    twin = exact_twin_errors(dts[:4])
    ratios = [twin[i][1] / twin[i + 1][1] for i in range(len(twin) - 1)]
    twin_ok = all(r >= 2.0 for r in ratios)
    ok &= twin_ok
    print(f"{'PASS' if twin_ok else 'FAIL'} exact-twin error halves per dt halving: "
          + " ".join(f"{r:.2f}x" for r in ratios))

    bug = 1.5 if args.inject_dt_mismatch else 1.0
    ladder = self_convergence_ladder(dts, dy_scale_bug=bug)
    for dt, err in ladder:
        print(f"  dt={dt:<10.6g} L1 error={err:.4e}")
    order = observed_order(ladder)
    order_ok = 0.75 <= order <= 1.25
    ok &= order_ok
    print(f"{'PASS' if order_ok else 'FAIL'} observed convergence order {order:.3f} "
          "(window 0.75..1.25)")
    return 0 if ok else 3


def cmd_derive_lg(args) -> int:
    scenario = load_scenario(args.config)
    lg = derive_lg_model(scenario)
    payload = {
        "scenario_hash": scenario.scenario_id,
        "state": ["q", "p"] + [f"x_{i}" for i in range(scenario.classical.n)],
        "F": lg.F.tolist(),
        "N": lg.N.tolist(),
        "H": lg.H.tolist(),
        "R": lg.R.tolist(),
        "prior_mean": lg.prior_mean.tolist(),
        "prior_cov": lg.prior_cov.tolist(),
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "lg_model.json"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsmooth",
        description="Hybrid classical-quantum filtering and time-symmetric smoothing.")
    parser.add_argument("--version", action="version", version=f"qsmooth {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a ground-truth record")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run estimation passes on a record")
    p.add_argument("--config", required=True)
    p.add_argument("--record", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--methods", default="filter")
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("ensemble", help="seeded ensemble study of estimator accuracy")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--runs", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--methods", default="kalman,kalman-smooth")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("oracle-check", help="exactness and convergence-order checks")
    p.add_argument("--levels", type=float, nargs="+",
                   default=[1e-2, 5e-3, 2.5e-3, 1.25e-3])
    p.add_argument("--inject-dt-mismatch", action="store_true",
                   help="test mode: corrupt increment bookkeeping; must exit nonzero")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("derive-lg", help="print the linear-Gaussian reduction")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_derive_lg)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
