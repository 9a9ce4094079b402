"""Command-line front end: ``ddsg {approx,solve,analyze,bench}``.

Configuration is an INI file whose sections mirror the library objects;
unknown sections or keys are rejected before any computation starts. Every
emitted CSV starts with a ``# config_sha256=<hex>`` comment line identifying
the effective configuration.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import math
import statistics
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import hdmr, irbc, solver, testfunctions
from . import sparse_grid as sg
from .runtime import WORKERS_ENV, default_workers

log = logging.getLogger("ddsg")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class ConfigError(ValueError):
    pass


def _opt_float(s):
    return None if s.strip().lower() in ("", "none") else float(s)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s):
    return [int(t) for t in s.replace(",", " ").split()]


# section -> key -> (parser, default as text)
SCHEMA = {
    "grid": {
        "level": (int, "4"),
        "eps_gamma": (float, "1e-3"),
        "boundary_mode": (str, sg.MODIFIED_LINEAR),
    },
    "hdmr": {
        "k_max": (int, "1"),
        "eps_eta": (float, "1e-4"),
        "eps_rho": (_opt_float, ""),
        "anchor": (str, "center"),
        "anchor_samples": (int, "1000"),
    },
    "model": {
        "countries": (int, "2"),
        "beta": (float, "0.99"),
        "gamma_base": (float, "0.25"),
        "gamma_spread": (float, "0.75"),
        "alpha": (float, "0.36"),
        "delta": (float, "0.01"),
        "sigma": (float, "0.01"),
        "rho_a": (float, "0.95"),
        "phi_adj": (float, "0.5"),
        "variant": (str, irbc.SMOOTH),
        "k_min": (float, "0.5"),
        "k_max": (float, "1.5"),
        "lna_half_width": (float, "0.4"),
    },
    "solver": {
        "newton_tol": (float, "1e-7"),
        "max_newton_iters": (int, "200"),
        "min_step": (float, str(2.0 ** -20)),
        "fd_epsilon": (float, "1e-7"),
        "jacobian": (str, "analytic"),
        "max_failure_fraction": (float, "1e-3"),
    },
    "time_iteration": {
        "euler_tol": (float, "1e-6"),
        "max_steps": (int, "300"),
        "policy_change_tol": (float, "1e-6"),
        "euler_samples": (int, "10000"),
        "policy_change_samples": (int, "1000"),
        "euler_every": (int, "1"),
    },
    "runtime": {
        "workers": (int, "0"),
    },
    "approx": {
        "function": (str, "sum_power"),
        "dims": (int, "4"),
        "power": (int, "1"),
        "exact_cuts": (_bool, "false"),
        "error_samples": (int, "1000"),
        "sg_max_points": (int, "200000"),
        "ratio_dims": (_int_list, ""),
        "ratio_k_max": (_int_list, "1 2"),
        "function_path": (str, ""),
    },
    "analyze": {
        "target": (str, "model"),
        "k_max": (int, "2"),
        "warmup_steps": (int, "0"),
        "policy_path": (str, ""),
        "eps_eta_sweep": (str, ""),
    },
    "bench": {
        "dims": (int, "8"),
        "k_max": (int, "2"),
        "level": (int, "4"),
        "points": (int, "1000"),
        "repetitions": (int, "5"),
        "function": (str, "product_peak"),
    },
}


@dataclass
class RunConfig:
    """Validated configuration: ``values[section][key]`` plus run-wide options."""

    values: dict
    seed: int = 0
    workers: int = 1

    def get(self, section, key):
        return self.values[section][key]

    def canonical_text(self, command: str) -> str:
        lines = [f"command={command}", f"seed={self.seed}"]
        for sec in sorted(self.values):
            for key in sorted(self.values[sec]):
                lines.append(f"{sec}.{key}={self.values[sec][key]!r}")
        return "\n".join(lines)

    def sha256(self, command: str) -> str:
        return hashlib.sha256(self.canonical_text(command).encode()).hexdigest()

    # -- library objects -------------------------------------------------

    def model(self) -> irbc.IrbcParameters:
        m = self.values["model"]
        return irbc.IrbcParameters(**m)

    def settings(self, **override) -> solver.DdsgSettings:
        g, h = self.values["grid"], self.values["hdmr"]
        kw = dict(k_max=h["k_max"], level=g["level"], eps_gamma=g["eps_gamma"], eps_eta=h["eps_eta"],
                  eps_rho=h["eps_rho"], boundary_mode=g["boundary_mode"], anchor=h["anchor"],
                  anchor_samples=h["anchor_samples"])
        kw.update(override)
        return solver.DdsgSettings(**kw)

    def solver_config(self) -> solver.SolverConfig:
        return solver.SolverConfig(**self.values["solver"])

    def tic(self) -> solver.TimeIterationConfig:
        return solver.TimeIterationConfig(rng_seed=self.seed, **self.values["time_iteration"])


def load_config(path=None, overrides=None, seed=0, workers=None) -> RunConfig:
    """Parse and validate an INI file (or defaults only when ``path`` is None)."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if path is not None:
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
    for (sec, key), val in (overrides or {}).items():
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key, str(val))
    values = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in section [{sec}]")
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (parse, default) in keys.items():
            raw = cp.get(sec, key, fallback=default)
            try:
                values[sec][key] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key} = {raw!r}: {exc}") from exc
    if workers is None:
        workers = values["runtime"]["workers"] or default_workers()
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    cfg = RunConfig(values=values, seed=seed, workers=workers)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    try:
        cfg.model()
        cfg.settings()
        cfg.solver_config()
        cfg.tic()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.get("grid", "boundary_mode") not in sg.BOUNDARY_MODES:
        raise ConfigError(f"boundary_mode must be one of {sg.BOUNDARY_MODES}")
    a = cfg.values["approx"]
    if a["function"] not in testfunctions.BUILTIN + ("serialized",):
        raise ConfigError(f"unknown approx function {a['function']!r}")
    if a["function"] == "serialized" and not a["function_path"]:
        raise ConfigError("approx function 'serialized' needs function_path")
    if a["dims"] < 1 or a["error_samples"] < 1:
        raise ConfigError("approx dims and error_samples must be >= 1")
    if cfg.get("analyze", "target") not in ("model", "separable"):
        raise ConfigError("analyze target must be 'model' or 'separable'")
    if cfg.get("analyze", "warmup_steps") < 0 or cfg.get("analyze", "k_max") < 1:
        raise ConfigError("analyze warmup_steps must be >= 0 and k_max >= 1")
    b = cfg.values["bench"]
    if b["repetitions"] < 5:
        raise ConfigError("bench repetitions must be >= 5")
    if b["points"] < 1 or b["dims"] < 1 or not 1 <= b["k_max"] <= b["dims"]:
        raise ConfigError("bench needs points >= 1 and 1 <= k_max <= dims")
    if b["function"] not in testfunctions.BUILTIN:
        raise ConfigError(f"unknown bench function {b['function']!r}")


# -- output helpers ------------------------------------------------------------------

def write_csv(path, header_hash, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_sha256={header_hash}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def read_csv(path):
    """Parse a CSV written by this module; returns ``(config_hash, header, rows)``."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# config_sha256="):
            raise ValueError(f"{path}: missing config hash header")
        rows = list(csv.reader(fh))
    return first.split("=", 1)[1], rows[0], rows[1:]


def _index_label(u):
    return "-".join(str(i) for i in u)


def _load_serialized(path):
    with open(path) as fh:
        doc = json.load(fh)
    kind = doc.get("kind")
    if kind == "ddsg":
        obj = hdmr.DdsgFunction.from_dict(doc)
        return obj.evaluate_batch, obj.d
    if kind == "sparse_grid":
        obj = sg.SparseGrid.from_dict(doc)
        return (lambda X: obj.interpolate(X)), obj.dim
    raise ConfigError(f"{path}: unsupported serialized function kind {kind!r}")


# -- commands --------------------------------------------------------------------------

def cmd_approx(cfg: RunConfig, out: Path) -> int:
    """Build SG and DDSG approximants of a test function; report counts, criteria and errors."""
    a = cfg.values["approx"]
    g, h = cfg.values["grid"], cfg.values["hdmr"]
    h_ = cfg.sha256("approx")
    if a["function"] == "serialized":
        f, d = _load_serialized(a["function_path"])
    else:
        d = a["dims"]
        f = testfunctions.by_name(a["function"], d, a["power"], cfg.seed)
    k_max = min(h["k_max"], d)
    anchor = hdmr.center_anchor(f, d) if h["anchor"] == "center" else None
    dd = hdmr.decompose(f, d, k_max, eps_rho=h["eps_rho"], eps_eta=h["eps_eta"], anchor=anchor,
                        level=g["level"], eps_gamma=g["eps_gamma"], boundary_mode=g["boundary_mode"],
                        workers=cfg.workers, exact_cuts=a["exact_cuts"], anchor_samples=h["anchor_samples"],
                        seed=cfg.seed)
    X = np.random.default_rng(cfg.seed).random((a["error_samples"], d))
    F = np.asarray(f(X), dtype=float).reshape(X.shape[0], -1)
    err = np.abs(dd.evaluate_batch(X) - F)
    sg_count = sg.regular_count(d, g["level"])
    sg_linf = sg_l2 = math.nan
    if sg_count <= a["sg_max_points"]:
        full = sg.build(f, d, g["level"], g["eps_gamma"], g["boundary_mode"], workers=cfg.workers)
        sg_count = full.num_points
        e2 = np.abs(full.interpolate(X) - F)
        sg_linf, sg_l2 = float(e2.max()), float(np.sqrt(np.mean(e2 ** 2)))
    ddsg_count = dd.num_points()
    write_csv(out / "approx_summary.csv", h_,
              ["function", "d", "level", "k_max", "eps_eta", "eps_rho", "eps_gamma", "exact_cuts", "sg_points",
               "ddsg_points", "sg_ddsg_ratio", "ddsg_linf_error", "ddsg_l2_error", "sg_linf_error",
               "sg_l2_error"],
              [[a["function"], d, g["level"], k_max, h["eps_eta"], dd.eps_rho, g["eps_gamma"], a["exact_cuts"],
                sg_count, ddsg_count, sg_count / ddsg_count, float(err.max()),
                float(np.sqrt(np.mean(err ** 2))), sg_linf, sg_l2]])
    write_csv(out / "approx_rho.csv", h_, ["order", "rho"], [[k, v] for k, v in sorted(dd.rho.items())])
    write_csv(out / "approx_eta.csv", h_, ["index", "order", "eta", "accepted"],
              [[_index_label(u), len(u), v, u in dd.accepted]
               for u, v in sorted(dd.eta.items(), key=lambda kv: (len(kv[0]), kv[0]))])
    if a["ratio_dims"]:
        rows = []
        for dd_ in a["ratio_dims"]:
            for km in a["ratio_k_max"]:
                if km > dd_:
                    continue
                n_sg = sg.regular_count(dd_, g["level"])
                n_dd = hdmr.grid_count(dd_, km, g["level"])
                rows.append([dd_, g["level"], km, n_sg, n_dd, n_sg / n_dd])
        write_csv(out / "approx_ratio.csv", h_, ["d", "level", "k_max", "sg_points", "ddsg_points",
                                                  "sg_ddsg_ratio"], rows)
    print(f"approx: d={d} ddsg_points={ddsg_count} linf={err.max():.3e}")
    return EXIT_OK


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    """Run time iteration on the configured IRBC model."""
    params = cfg.model()
    settings = cfg.settings()
    h_ = cfg.sha256("solve")
    try:
        policy, reports = solver.time_iterate(params, settings, cfg.tic(), cfg.solver_config(),
                                              workers=cfg.workers, dump_dir=str(out))
    except solver.SolverAbort as exc:
        print(f"solve aborted at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    solver.write_reports_csv(reports, out / "reports.csv", f"config_sha256={h_}")
    policy.save(out / "policy.json")
    row = solver.summary_row(params, settings, policy, reports)
    write_csv(out / "summary.csv", h_, list(row), [list(row.values())])
    print(f"solve: steps={row['steps']} points={row['ddsg_points']} "
          f"avg={row['avg_euler_log10']:.3f} max={row['max_euler_log10']:.3f}")
    return EXIT_OK


def analysis_step(cfg: RunConfig, eps_eta: float = 0.0):
    """One instrumented decomposition; returns the resulting expansion."""
    an = cfg.values["analyze"]
    if an["target"] == "separable":
        d = cfg.values["approx"]["dims"]
        f = testfunctions.additive_separable(d, cfg.seed)
        g = cfg.values["grid"]
        return hdmr.decompose(f, d, min(an["k_max"], d), eps_rho=0.0, eps_eta=eps_eta,
                              anchor=hdmr.center_anchor(f, d), level=g["level"], eps_gamma=g["eps_gamma"],
                              boundary_mode=g["boundary_mode"], workers=cfg.workers)
    params = cfg.model()
    quad = irbc.make_shock_quadrature(params.N, params)
    prev = irbc.steady_state_policy(params)
    if an["policy_path"]:
        prev = hdmr.DdsgFunction.load(an["policy_path"])
    elif an["warmup_steps"]:
        tic = solver.TimeIterationConfig(max_steps=an["warmup_steps"], euler_samples=1, euler_every=10 ** 9,
                                         rng_seed=cfg.seed)
        prev, _ = solver.time_iterate(params, cfg.settings(), tic, cfg.solver_config(), workers=cfg.workers)
    settings = cfg.settings(k_max=min(an["k_max"], params.d), eps_eta=eps_eta, eps_rho=0.0)
    policy, _ = solver.time_step(params, quad, prev, settings, cfg.solver_config(), cfg.workers, seed=cfg.seed)
    return policy


def cmd_analyze(cfg: RunConfig, out: Path) -> int:
    """Report importance values and expansion ratios of one untruncated time-iteration step."""
    h_ = cfg.sha256("analyze")
    try:
        dd = analysis_step(cfg)
    except solver.SolverAbort as exc:
        print(f"analyze aborted: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    summ = solver.eta_summary(dd)
    write_csv(out / "analyze_eta.csv", h_, ["index", "order", "eta"],
              [[_index_label(u), len(u), v] for u, v in sorted(dd.eta.items(), key=lambda kv: (len(kv[0]), kv[0]))])
    rows = []
    for order in sorted(dd.rho):
        lo, avg, hi = summ.get(order, (math.nan, math.nan, math.nan))
        n_acc = sum(1 for u in dd.accepted if len(u) == order)
        rows.append([order, dd.rho[order], lo, avg, hi, n_acc])
    write_csv(out / "analyze_orders.csv", h_, ["order", "rho", "eta_min", "eta_avg", "eta_max", "accepted"],
              rows)
    sweep = cfg.values["analyze"]["eps_eta_sweep"]
    if sweep.strip():
        thresholds = sorted(float(t) for t in sweep.replace(",", " ").split())
        srows = []
        for t in thresholds:
            n = sum(1 for u, v in dd.eta.items() if v >= t) + sum(1 for u in dd.accepted if len(u) == 1)
            srows.append([t, n])
        write_csv(out / "analyze_sweep.csv", h_, ["eps_eta", "accepted_indices"], srows)
    print(f"analyze: orders={sorted(dd.rho)} examined={len(dd.eta)}")
    return EXIT_OK


def _timed(fn, reps):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.mean(times), statistics.stdev(times)


def cmd_bench(cfg: RunConfig, out: Path) -> int:
    """Time naive against vectorized DDSG evaluation."""
    b = cfg.values["bench"]
    g = cfg.values["grid"]
    h_ = cfg.sha256("bench")
    d = b["dims"]
    f = testfunctions.by_name(b["function"], d, 2, cfg.seed)
    dd = hdmr.decompose(f, d, b["k_max"], eps_eta=0.0, anchor=hdmr.center_anchor(f, d), level=b["level"],
                        eps_gamma=0.0, boundary_mode=g["boundary_mode"], workers=cfg.workers)
    vec = dd.vectorized
    X = np.random.default_rng(cfg.seed).random((b["points"], d))
    diff = float(np.max(np.abs(vec.evaluate_batch(X) - vec.evaluate_naive(X))))
    if not diff <= 1e-12:
        print(f"bench: naive and vectorized evaluations differ by {diff:.3e}", file=sys.stderr)
        return EXIT_NUMERIC
    c0 = vec.interp_calls
    vec.evaluate_naive(X)
    naive_calls = (vec.interp_calls - c0) / b["points"]
    c0 = vec.interp_calls
    vec.evaluate_batch(X)
    vec_calls = (vec.interp_calls - c0) / b["points"]
    tn = _timed(lambda: vec.evaluate_naive(X), b["repetitions"])
    tv = _timed(lambda: vec.evaluate_batch(X), b["repetitions"])
    ratio = tv[0] / tn[0]
    write_csv(out / "bench.csv", h_,
              ["method", "mean_s", "std_s", "repetitions", "points", "interp_calls_per_point", "max_abs_diff",
               "vectorized_over_naive"],
              [["naive", tn[0], tn[1], b["repetitions"], b["points"], naive_calls, diff, ratio],
               ["vectorized", tv[0], tv[1], b["repetitions"], b["points"], vec_calls, diff, ratio]])
    print(f"bench: vectorized/naive time ratio={ratio:.3f} (speedup {1 / ratio:.2f}x)")
    return EXIT_OK


COMMANDS = {"approx": cmd_approx, "solve": cmd_solve, "analyze": cmd_analyze, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="INI configuration file")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS,
                        help=f"worker threads (default: [runtime] workers, ${WORKERS_ENV}, or all cores)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master RNG seed (u64)")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="ddsg", parents=[common],
                                description="Dimension-wise decomposed sparse grids and IRBC time iteration.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    ns = vars(args)
    logging.basicConfig(level=logging.INFO if ns.get("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    seed = ns.get("seed", 0)
    if not 0 <= seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(ns.get("config"), seed=seed, workers=ns.get("workers"))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(ns.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError, hdmr.DecompositionError, sg.SparseGridError,
            solver.FocSolveError, irbc.DomainError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
