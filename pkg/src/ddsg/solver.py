"""First-order-condition solves, time iteration and Euler-equation errors.

Grid points are solved in batches: a damped Newton iteration runs on all
points of a batch at once, each point with its own step length, so a batch
gives the same per-point answer as solving the points one by one.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import threading
import time
from dataclasses import dataclass

import numpy as np

from . import hdmr
from . import irbc
from . import sparse_grid as sg
from .runtime import default_workers, parallel_map

log = logging.getLogger(__name__)


# -- configuration ------------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    """Newton settings.

    ``newton_tol`` bounds the residual infinity norm. Steps are halved until
    the residual 2-norm decreases sufficiently or the step falls below
    ``min_step``. ``jacobian`` is ``"analytic"`` or ``"fd"`` (central
    differences with relative step ``fd_epsilon``).
    """

    newton_tol: float = 1e-7
    max_newton_iters: int = 200
    step_shrink: float = 0.5
    min_step: float = 2.0 ** -20
    sufficient_decrease: float = 1e-4
    fd_epsilon: float = 1e-7
    jacobian: str = "analytic"
    max_failure_fraction: float = 1e-3

    def __post_init__(self):
        if self.newton_tol <= 0 or self.fd_epsilon <= 0 or self.min_step <= 0:
            raise ValueError("tolerances must be > 0")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be >= 1")
        if not 0.0 < self.step_shrink < 1.0:
            raise ValueError("step_shrink must lie in (0, 1)")
        if self.jacobian not in ("analytic", "fd"):
            raise ValueError("jacobian must be 'analytic' or 'fd'")
        if not 0.0 <= self.max_failure_fraction <= 1.0:
            raise ValueError("max_failure_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class DdsgSettings:
    """Approximation settings of the policy (the ``DD^eta_k SG^gamma_level`` family)."""

    k_max: int = 1
    level: int = 4
    eps_gamma: float = 1e-3
    eps_eta: float = 1e-4
    eps_rho: float | None = None
    boundary_mode: str = sg.MODIFIED_LINEAR
    anchor: str = "center"
    anchor_samples: int = 1000

    def __post_init__(self):
        if self.k_max < 1 or self.level < 1:
            raise ValueError("k_max and level must be >= 1")
        if self.eps_gamma < 0 or self.eps_eta < 0 or (self.eps_rho is not None and self.eps_rho < 0):
            raise ValueError("thresholds must be >= 0")
        if self.anchor not in ("center", "sampled"):
            raise ValueError("anchor must be 'center' or 'sampled'")

    def label(self) -> str:
        return f"DD{self.eps_eta:g}_{self.k_max}SG{self.eps_gamma:g}_{self.level}"


@dataclass(frozen=True)
class TimeIterationConfig:
    """Outer-loop settings.

    Iteration stops once the mean Euler error drops below ``euler_tol``
    (unit-free), once the sup-norm policy change on a fixed sample drops
    below ``policy_change_tol``, or after ``max_steps``.
    """

    euler_tol: float = 1e-6
    max_steps: int = 300
    policy_change_tol: float = 1e-6
    euler_samples: int = 10_000
    policy_change_samples: int = 1000
    rng_seed: int = 0
    euler_every: int = 1

    def __post_init__(self):
        if self.euler_tol <= 0 or self.policy_change_tol <= 0:
            raise ValueError("tolerances must be > 0")
        if self.euler_samples < 1 or self.policy_change_samples < 1:
            raise ValueError("sample counts must be >= 1")
        if self.max_steps < 1 or self.euler_every < 1:
            raise ValueError("max_steps and euler_every must be >= 1")


# -- errors ------------------------------------------------------------------------------

class FocSolveError(RuntimeError):
    """Newton did not reach the tolerance; carries the best iterate found."""

    def __init__(self, message, best=None, residual=math.inf, state=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.state = state


class SolverAbort(RuntimeError):
    """Too many grid points failed in one time-iteration step."""

    def __init__(self, message, failures=None, step=None):
        super().__init__(message)
        self.failures = failures or []
        self.step = step


# -- batched Newton --------------------------------------------------------------------

@dataclass
class NewtonResult:
    Z: np.ndarray
    residual: np.ndarray     # infinity norm per point
    iterations: np.ndarray
    converged: np.ndarray


def _positive_columns(params):
    return list(range(params.N)) + [params.n_policy - 1]


def _residuals(params, quad, policy, a, k, Z, cfg, with_jac):
    R, J, clamped = irbc.residuals_batch(params, quad, policy, a, k, Z, with_jac=with_jac and cfg.jacobian == "analytic")
    if with_jac and cfg.jacobian == "fd":
        J = irbc.fd_jacobian(params, quad, policy, a, k, Z, step=cfg.fd_epsilon)
    return R, J


def _newton_direction(J, R):
    try:
        return np.linalg.solve(J, -R[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.empty_like(R)
        for p in range(R.shape[0]):
            out[p] = np.linalg.lstsq(J[p], -R[p], rcond=None)[0]
        return out


def newton_batch(params, quad, policy_next, a, k, Z0, cfg: SolverConfig) -> NewtonResult:
    """Damped (semismooth) Newton on the equilibrium residuals of every row independently."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    k = np.atleast_2d(np.asarray(k, dtype=float))
    Z = np.array(np.atleast_2d(Z0), dtype=float)
    P = Z.shape[0]
    pos = _positive_columns(params)
    best = Z.copy()
    best_res = np.full(P, math.inf)
    iters = np.zeros(P, dtype=np.int64)
    active = np.arange(P)
    R, J = _residuals(params, quad, policy_next, a, k, Z, cfg, True)
    for it in range(cfg.max_newton_iters + 1):
        rinf = np.max(np.abs(R), axis=1)
        rinf = np.where(np.isfinite(rinf), rinf, math.inf)
        better = rinf < best_res[active]
        best[active[better]] = Z[active[better]]
        best_res[active[better]] = rinf[better]
        keep = rinf > cfg.newton_tol
        if not np.any(keep) or it == cfg.max_newton_iters:
            break
        active, R, J = active[keep], R[keep], J[keep]
        Za, aa, ka = Z[active], a[active], k[active]
        dZ = _newton_direction(J, R)
        dZ = np.where(np.isfinite(dZ), dZ, 0.0)
        # fraction-to-boundary rule keeps capital and lambda positive
        t = np.ones(len(active))
        for c in pos:
            neg = dZ[:, c] < 0.0
            t[neg] = np.minimum(t[neg], 0.9 * Za[neg, c] / -dZ[neg, c])
        merit0 = np.linalg.norm(R, axis=1)
        Znew = Za.copy()
        Rnew = np.empty_like(R)
        pending = np.arange(len(active))
        while pending.size:
            trial = Za[pending] + t[pending, None] * dZ[pending]
            Rt, _ = _residuals(params, quad, policy_next, aa[pending], ka[pending], trial, cfg, False)
            mt = np.linalg.norm(Rt, axis=1)
            ok = (mt <= (1.0 - cfg.sufficient_decrease * t[pending]) * merit0[pending]) | (t[pending] <= cfg.min_step)
            ok &= np.all(np.isfinite(Rt), axis=1) | (t[pending] <= cfg.min_step)
            Znew[pending[ok]] = trial[ok]
            Rnew[pending[ok]] = Rt[ok]
            pending = pending[~ok]
            t[pending] *= cfg.step_shrink
        Z[active] = Znew
        iters[active] += 1
        R, J = _residuals(params, quad, policy_next, a[active], k[active], Znew, cfg, True)
    converged = best_res <= cfg.newton_tol
    return NewtonResult(Z=best, residual=best_res, iterations=iters, converged=converged)


def steady_guess(params, k) -> np.ndarray:
    """Newton start ``k' = k``, ``mu = 0``, ``lambda = lambda_ss``."""
    k = np.atleast_2d(k)
    Z = np.zeros((k.shape[0], params.n_policy))
    Z[:, :params.N] = k
    Z[:, -1] = params.steady_lambda()
    return Z


def solve_points(params, quad, policy_next, a, k, warm, cfg: SolverConfig) -> NewtonResult:
    """Solve every state of a batch; unconverged points are retried from the steady guess."""
    a = np.atleast_2d(a)
    k = np.atleast_2d(k)
    warm = np.array(np.atleast_2d(warm), dtype=float)
    ss = steady_guess(params, k)
    pos = _positive_columns(params)
    bad = ~np.all(np.isfinite(warm), axis=1) | np.any(warm[:, pos] <= 0.0, axis=1)
    warm[bad] = ss[bad]
    res = newton_batch(params, quad, policy_next, a, k, warm, cfg)
    retry = np.flatnonzero(~res.converged)
    if retry.size:
        r2 = newton_batch(params, quad, policy_next, a[retry], k[retry], ss[retry], cfg)
        take = r2.residual < res.residual[retry]
        idx = retry[take]
        res.Z[idx] = r2.Z[take]
        res.residual[idx] = r2.residual[take]
        res.converged[idx] = r2.converged[take]
        res.iterations[retry] += r2.iterations
    return res


def solve_foc_at_point(state, params, policy_next, warm_start, cfg: SolverConfig | None = None,
                       quad=None) -> irbc.PolicyValue:
    """Solve the equilibrium conditions at one state, starting from ``warm_start``.

    Raises :class:`FocSolveError` carrying the best iterate when Newton fails.
    """
    cfg = cfg or SolverConfig()
    quad = quad or irbc.make_shock_quadrature(params.N, params)
    if isinstance(state, irbc.EconomicState):
        a, k = state.a, state.k
    else:
        a, k = state
    a = np.asarray(a, dtype=float)[None, :]
    k = np.asarray(k, dtype=float)[None, :]
    if np.any(a <= 0) or np.any(k <= 0):
        raise irbc.DomainError("state must be positive")
    z0 = warm_start.to_vector() if isinstance(warm_start, irbc.PolicyValue) else np.asarray(warm_start, float)
    res = newton_batch(params, quad, policy_next, a, k, z0[None, :], cfg)
    z = res.Z[0]
    if not res.converged[0]:
        raise FocSolveError(f"Newton stopped at residual {res.residual[0]:.3e}", best=z,
                            residual=float(res.residual[0]), state=(a[0], k[0]))
    return irbc.PolicyValue.from_vector(z, params)


# -- the black-box evaluator fed to the decomposition ---------------------------------------

class FocEvaluator:
    """Maps canonical grid points to solved policies against a fixed next-period policy.

    Safe to call from several threads; the statistics are merged under a lock.
    """

    def __init__(self, params, quad, policy_next, cfg: SolverConfig, warm_policy=None):
        self.params = params
        self.quad = quad
        self.policy_next = policy_next
        self.warm_policy = warm_policy if warm_policy is not None else policy_next
        self.cfg = cfg
        self._lock = threading.Lock()
        self.points = 0
        self.failures = []
        self.max_residual = 0.0
        self.complementarity_max = 0.0
        self.complementarity_min = math.inf
        self.newton_iterations = 0

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        p = self.params
        a, k = irbc.from_canonical(X, p)
        warm = self.warm_policy.evaluate_batch(X)
        res = solve_points(p, self.quad, self.policy_next, a, k, warm, self.cfg)
        Z = res.Z
        fails = [(X[i].tolist(), float(res.residual[i])) for i in np.flatnonzero(~res.converged)]
        if p.nonsmooth:
            mu = Z[:, p.N:2 * p.N]
            slack = Z[:, :p.N] - (1.0 - p.delta) * k
            fb = np.max(np.abs(irbc.fischer_burmeister(mu, slack)))
            cmin = float(np.min(np.minimum(mu, slack)))
        else:
            fb, cmin = 0.0, math.inf
        with self._lock:
            self.points += X.shape[0]
            self.failures.extend(fails)
            self.max_residual = max(self.max_residual, float(np.max(res.residual)))
            self.complementarity_max = max(self.complementarity_max, float(fb))
            self.complementarity_min = min(self.complementarity_min, cmin)
            self.newton_iterations += int(res.iterations.sum())
        return Z


# -- Euler errors ----------------------------------------------------------------------------

def _euler_chunk(policy, params, quad, X):
    a, k = irbc.from_canonical(X, params)
    pol = policy.evaluate_batch(X)
    N = params.N
    kp = np.maximum(pol[:, :N], 1e-12)
    lam = pol[:, -1]
    nxt = irbc.next_period(params, quad, policy, a, kp)
    g1 = kp / k - 1.0
    lhs = lam[:, None] * (1.0 + params.phi_adj * g1)
    rhs = params.beta * nxt.expectation
    if params.nonsmooth:
        rhs = rhs + np.maximum(pol[:, N:2 * N], 0.0)
    err = np.abs(rhs / lhs - 1.0)
    return np.max(err, axis=1), nxt.clamped


def euler_errors(policy, params, n_samples: int = 10_000, seed: int = 0, quad=None, workers: int = 1,
                 chunk: int = 2048):
    """Unit-free Euler-equation errors at uniformly drawn canonical states.

    Per sample the error is ``max_j |beta E_j / (lambda (1 + phi g'_j)) - 1|``
    (plus ``mu_j`` in the numerator for the irreversible-investment model).
    Returns ``(log10 mean, log10 max, samples)``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    quad = quad or irbc.make_shock_quadrature(params.N, params)
    X = np.random.default_rng(seed).random((n_samples, params.d))
    chunks = [X[i:i + chunk] for i in range(0, n_samples, chunk)]
    parts = parallel_map(chunks, workers, lambda C: _euler_chunk(policy, params, quad, C))
    samples = np.concatenate([p[0] for p in parts])
    clamped = sum(p[1] for p in parts)
    if clamped:
        log.debug("euler errors: %d successor states clamped", clamped)
    with np.errstate(divide="ignore"):
        return float(np.log10(np.mean(samples))), float(np.log10(np.max(samples))), samples


# -- time iteration --------------------------------------------------------------------------

@dataclass
class IterationReport:
    step: int
    grid_points: int
    outputs: int
    accepted: list
    rejected: list
    rho: dict
    eta_summary: dict
    avg_euler_log10: float
    max_euler_log10: float
    policy_change: float
    clamp_count: int
    foc_failures: int
    max_foc_residual: float
    complementarity_max: float
    wall_time: float

    CSV_FIELDS = ("step", "grid_points", "outputs", "accepted", "rejected", "rho", "eta_summary",
                  "avg_euler_log10", "max_euler_log10", "policy_change", "clamp_count", "foc_failures",
                  "max_foc_residual", "complementarity_max", "wall_time_s")

    def metrics(self) -> tuple:
        """Run-determined numbers (everything except wall time)."""
        return (self.step, self.grid_points, len(self.accepted), len(self.rejected), self.avg_euler_log10,
                self.max_euler_log10, self.policy_change, self.clamp_count, self.foc_failures,
                self.max_foc_residual, self.complementarity_max)

    def csv_row(self) -> list:
        return [self.step, self.grid_points, self.outputs,
                ";".join("-".join(map(str, u)) for u in self.accepted),
                ";".join("-".join(map(str, u)) for u in self.rejected),
                json.dumps({str(k): v for k, v in self.rho.items()}),
                json.dumps({str(k): v for k, v in self.eta_summary.items()}),
                repr(self.avg_euler_log10), repr(self.max_euler_log10), repr(self.policy_change),
                self.clamp_count, self.foc_failures, repr(self.max_foc_residual),
                repr(self.complementarity_max), f"{self.wall_time:.6f}"]


def eta_summary(ddsg) -> dict:
    """``{order: (min, mean, max)}`` of the importance values of every examined index."""
    out = {}
    for order in sorted({len(u) for u in ddsg.eta}):
        vals = np.array([v for u, v in ddsg.eta.items() if len(u) == order], dtype=float)
        fin = vals[np.isfinite(vals)]
        if fin.size == 0:
            out[order] = (math.inf, math.inf, math.inf)
        else:
            out[order] = (float(fin.min()), float(fin.mean()), float(vals.max()))
    return out


def write_reports_csv(reports, path, header_comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(IterationReport.CSV_FIELDS)
        for r in reports:
            w.writerow(r.csv_row())


def _count_clamps(params, quad, policy, X):
    a, k = irbc.from_canonical(X, params)
    kp = np.maximum(policy.evaluate_batch(X)[:, :params.N], 1e-12)
    return irbc.next_period(params, quad, policy, a, kp).clamped


def time_step(params, quad, policy_prev, settings: DdsgSettings, cfg: SolverConfig, workers: int = 1,
              anchor_coords=None, eps_eta=None, seed: int = 0):
    """One time-iteration step: decompose the FOC solution map against ``policy_prev``.

    Returns ``(ddsg, evaluator)``; raises :class:`SolverAbort` when too many
    grid points fail.
    """
    ev = FocEvaluator(params, quad, policy_prev, cfg)
    d = params.d
    if anchor_coords is not None:
        c = np.asarray(anchor_coords, dtype=float)
        anchor = hdmr.AnchorPoint(c, ev(c[None, :])[0])
    elif settings.anchor == "sampled":
        anchor = hdmr.select_anchor(ev, d, settings.anchor_samples, seed)
    else:
        anchor = hdmr.center_anchor(ev, d)
    policy = hdmr.decompose(ev, d, min(settings.k_max, d),
                            eps_rho=settings.eps_rho,
                            eps_eta=settings.eps_eta if eps_eta is None else eps_eta,
                            anchor=anchor, level=settings.level, eps_gamma=settings.eps_gamma,
                            boundary_mode=settings.boundary_mode, workers=workers)
    if ev.points and len(ev.failures) > cfg.max_failure_fraction * ev.points:
        raise SolverAbort(f"{len(ev.failures)} of {ev.points} FOC solves failed", failures=ev.failures)
    return policy, ev


def time_iterate(params, settings: DdsgSettings | None = None, tic: TimeIterationConfig | None = None,
                 cfg: SolverConfig | None = None, workers: int | None = None, initial_policy=None,
                 callback=None, dump_dir=None):
    """Time iteration on the DDSG policy; returns ``(policy, reports)``.

    Starts from the constant steady-state guess unless ``initial_policy`` is
    given. ``callback(report, policy)`` is called after every step. On abort
    the failing states are written to ``dump_dir/foc_failures.json`` when a
    directory is given.
    """
    settings = settings or DdsgSettings()
    tic = tic or TimeIterationConfig()
    cfg = cfg or SolverConfig()
    workers = workers or default_workers()
    quad = irbc.make_shock_quadrature(params.N, params)
    prev = initial_policy if initial_policy is not None else irbc.steady_state_policy(params)
    probe = np.random.default_rng(tic.rng_seed + 1).random((tic.policy_change_samples, params.d))
    prev_on_probe = prev.evaluate_batch(probe)
    reports = []
    anchor_coords = None
    policy = None
    for step in range(1, tic.max_steps + 1):
        t0 = time.perf_counter()
        try:
            policy, ev = time_step(params, quad, prev, settings, cfg, workers, anchor_coords, seed=tic.rng_seed)
        except SolverAbort as exc:
            exc.step = step
            if dump_dir is not None:
                with open(f"{dump_dir}/foc_failures.json", "w") as fh:
                    json.dump({"step": step, "failures": exc.failures}, fh)
            raise
        if settings.anchor == "sampled" and anchor_coords is None:
            anchor_coords = policy.anchor.coords
        on_probe = policy.evaluate_batch(probe)
        change = float(np.max(np.abs(on_probe - prev_on_probe)))
        last = step == tic.max_steps or change < tic.policy_change_tol
        if step % tic.euler_every == 0 or last:
            avg, mx, _ = euler_errors(policy, params, tic.euler_samples, tic.rng_seed, quad, workers)
        else:
            avg, mx = math.nan, math.nan
        clamps = _count_clamps(params, quad, prev, probe)
        rep = IterationReport(
            step=step, grid_points=policy.num_points(), outputs=policy.out_dim,
            accepted=sorted(policy.accepted, key=lambda u: (len(u), u)),
            rejected=sorted(policy.rejected, key=lambda u: (len(u), u)),
            rho=dict(policy.rho), eta_summary=eta_summary(policy),
            avg_euler_log10=avg, max_euler_log10=mx, policy_change=change, clamp_count=clamps,
            foc_failures=len(ev.failures), max_foc_residual=ev.max_residual,
            complementarity_max=ev.complementarity_max, wall_time=time.perf_counter() - t0)
        reports.append(rep)
        log.info("step %d: points=%d avg=%.3f max=%.3f change=%.3e", step, rep.grid_points, avg, mx, change)
        if callback is not None:
            callback(rep, policy)
        prev, prev_on_probe = policy, on_probe
        if (math.isfinite(avg) and avg < math.log10(tic.euler_tol)) or change < tic.policy_change_tol:
            break
    return policy, reports


def summary_row(params, settings: DdsgSettings, policy, reports) -> dict:
    """Table-style summary of a finished run."""
    last = reports[-1]
    return {
        "d": params.d, "variant": params.variant, "k_max": settings.k_max,
        "eps_eta": settings.eps_eta,
        "eps_rho": settings.eps_eta if settings.eps_rho is None else settings.eps_rho,
        "level": settings.level, "eps_gamma": settings.eps_gamma, "ddsg_points": policy.num_points(),
        "steps": last.step, "avg_euler_log10": last.avg_euler_log10, "max_euler_log10": last.max_euler_log10,
    }


__all__ = [
    "SolverConfig", "DdsgSettings", "TimeIterationConfig", "IterationReport", "FocSolveError", "SolverAbort",
    "NewtonResult", "newton_batch", "solve_points", "solve_foc_at_point", "FocEvaluator", "euler_errors",
    "time_step", "time_iterate", "eta_summary", "write_reports_csv", "summary_row", "steady_guess",
]
