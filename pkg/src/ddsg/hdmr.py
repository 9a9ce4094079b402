"""Anchored (cut-) HDMR decomposition with sparse-grid component functions.

A function on ``[0, 1]^d`` is written as a sum of component functions
``f_u`` over index sets ``u``; the cut variant builds each ``f_u`` from
evaluations of ``f`` on the axis-aligned cut through an anchor point,

    f_u(x_u) = sum over v subset of u of (-1)**(|u|-|v|) f(anchor with x_v inserted).

Each cut function is replaced by a sparse-grid interpolant. Two adaptivity
criteria prune the expansion: the expansion ratio (``rho``) decides whether a
further order is worth building, and the per-index importance (``eta``)
rejects individual components of order >= 2 together with all of their
supersets.

Dimension ids are 0-based throughout.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import sparse_grid as sg
from .ddsg_eval import b_coefficients, compile_ddsg, subsets
from .runtime import TaskPlan

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class DecompositionError(RuntimeError):
    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class ZeroDenominatorError(ZeroDivisionError):
    """Lower-order quadrature mass is zero; treat the criterion as above threshold."""


@dataclass(frozen=True)
class AnchorPoint:
    coords: np.ndarray
    f_anchor: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if np.any(c < 0.0) or np.any(c > 1.0):
            raise ValueError("anchor must lie inside the unit cube")
        fa = np.atleast_1d(np.asarray(self.f_anchor, dtype=np.float64))
        if not np.all(np.isfinite(fa)):
            raise ValueError("anchor function value is not finite")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "f_anchor", fa)


def select_anchor(f, d: int, n_samples: int = 1000, seed: int = 0) -> AnchorPoint:
    """Pick the sampled point whose value is closest (L1) to the sample mean of ``f``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    X = np.random.default_rng(seed).random((n_samples, d))
    F = np.asarray(f(X), dtype=np.float64).reshape(n_samples, -1)
    if not np.all(np.isfinite(F)):
        raise ValueError("evaluator returned non-finite values while sampling the anchor")
    dist = np.abs(F - F.mean(axis=0)).sum(axis=1)
    best = int(np.argmin(dist))  # first minimum = lowest sample index
    return AnchorPoint(X[best], F[best])


def center_anchor(f, d: int) -> AnchorPoint:
    x = np.full(d, 0.5)
    return AnchorPoint(x, np.asarray(f(x[None, :]), dtype=np.float64)[0])


def cut_evaluator(f, anchor: AnchorPoint, u):
    """Restriction of ``f`` to the cut through ``anchor`` spanned by the dims ``u``."""
    u = list(u)
    if not u:
        raise ValueError("cut index must be non-empty")
    base = np.asarray(anchor.coords, dtype=np.float64)

    def g(Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        X = np.repeat(base[None, :], Y.shape[0], axis=0)
        X[:, u] = Y
        return f(X)

    return g


def component_quadrature(u, cut_quadratures: dict) -> np.ndarray:
    """Quadrature of ``f_u`` by telescoping the stored cut-interpolant quadratures."""
    q = 0.0
    for v in subsets(u):
        q = q + (-1) ** (len(u) - len(v)) * cut_quadratures[v]
    return np.asarray(q, dtype=np.float64)


def expansion_rho(cum_current, cum_previous) -> float:
    """Relative change between cumulative quadratures of consecutive orders."""
    den = np.linalg.norm(np.asarray(cum_previous, dtype=float))
    if den == 0.0:
        raise ZeroDenominatorError("zero cumulative quadrature at the previous order")
    return float(np.linalg.norm(np.asarray(cum_current, float) - np.asarray(cum_previous, float)) / den)


def eta(component_q, lower_order_sum) -> float:
    """Importance of one component relative to all lower-order quadrature mass."""
    den = np.linalg.norm(np.asarray(lower_order_sum, dtype=float))
    if den == 0.0:
        raise ZeroDenominatorError("zero lower-order quadrature mass")
    return float(np.linalg.norm(np.asarray(component_q, dtype=float)) / den)


def grid_count(d: int, k_max: int, level: int) -> int:
    """Node count of the non-adaptive truncated expansion, anchor included."""
    if d < 0 or k_max < 0 or level < 1:
        raise ValueError("invalid arguments")
    total = 1 + sum(math.comb(d, k) * sg.regular_count(k, level) for k in range(1, min(k_max, d) + 1))
    if total > 2**63 - 1:
        raise OverflowError(f"grid count for d={d}, k_max={k_max}, level={level} exceeds int64")
    return total


class ExactCut:
    """Stand-in for a component interpolant that evaluates the cut function directly.

    Quadrature still comes from a sparse grid of the cut.
    """

    def __init__(self, f, anchor, dims, grid):
        self.f = f
        self.anchor = anchor
        self.dims = tuple(dims)
        self.grid = grid
        self.boundary_mode = grid.boundary_mode
        self.levels = grid.levels

    def __len__(self):
        return len(self.grid)

    def quadrature(self):
        return self.grid.quadrature()


@dataclass
class DdsgFunction:
    """Truncated, adaptively pruned cut-HDMR expansion with sparse-grid components."""

    d: int
    out_dim: int
    anchor: AnchorPoint
    k_max: int
    level: int
    eps_gamma: float
    boundary_mode: str
    accepted: dict = field(default_factory=dict)
    rejected: set = field(default_factory=set)
    cut_quadratures: dict = field(default_factory=dict)
    component_quadratures: dict = field(default_factory=dict)
    eta: dict = field(default_factory=dict)
    rho: dict = field(default_factory=dict)
    eps_eta: float = 0.0
    eps_rho: float = 0.0
    exact_f: object = None
    coeff_b: dict = field(default_factory=dict)
    _vec: object = field(default=None, repr=False)

    @property
    def exact(self) -> bool:
        return self.exact_f is not None

    def finalize(self):
        self.coeff_b = b_coefficients(list(self.accepted) + [()])
        self._vec = None
        return self

    @property
    def vectorized(self):
        if self._vec is None:
            self._vec = compile_ddsg(self)
        return self._vec

    def __call__(self, X):
        return self.evaluate_batch(X)

    def evaluate(self, x):
        return self.vectorized.evaluate(x)

    def evaluate_batch(self, X):
        return self.vectorized.evaluate_batch(X)

    def evaluate_batch_grad(self, X, wrt):
        return self.vectorized.evaluate_batch_grad(X, wrt)

    def evaluate_naive(self, X):
        return self.vectorized.evaluate_naive(X)

    def num_points(self) -> int:
        return 1 + sum(len(g) for g in self.accepted.values())

    def orders(self):
        return sorted({len(u) for u in self.accepted})

    def cumulative_quadrature(self, max_order=None):
        q = np.array(self.anchor.f_anchor, dtype=float)
        for u, qu in self.component_quadratures.items():
            if u and u in self.accepted and (max_order is None or len(u) <= max_order):
                q = q + qu
        return q

    def check_invariants(self):
        acc = set(self.accepted)
        if acc & self.rejected:
            raise AssertionError("accepted and rejected overlap")
        for u in acc:
            for z in self.rejected:
                if set(z) <= set(u):
                    raise AssertionError(f"accepted {u} is a superset of rejected {z}")
            for r in range(1, len(u)):
                for v in combinations(u, r):
                    if v not in acc:
                        raise AssertionError(f"accepted {u} lacks subset {v}")

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        if self.exact:
            raise ValueError("exact-cut expansions hold a callable and cannot be serialized")
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "ddsg",
            "d": self.d,
            "out_dim": self.out_dim,
            "k_max": self.k_max,
            "level": self.level,
            "eps_gamma": self.eps_gamma,
            "eps_eta": self.eps_eta,
            "eps_rho": self.eps_rho,
            "boundary_mode": self.boundary_mode,
            "anchor": {"coords": self.anchor.coords.tolist(), "f_anchor": self.anchor.f_anchor.tolist()},
            "accepted": [[list(u), g.to_dict()] for u, g in sorted(self.accepted.items(),
                                                                   key=lambda kv: (len(kv[0]), kv[0]))],
            "rejected": sorted([list(z) for z in self.rejected], key=lambda z: (len(z), z)),
            "coeff_b": [[list(u), int(c)] for u, c in sorted(self.coeff_b.items(),
                                                             key=lambda kv: (len(kv[0]), kv[0]))],
            "cut_quadratures": [[list(u), np.asarray(q).tolist()] for u, q in sorted(
                self.cut_quadratures.items(), key=lambda kv: (len(kv[0]), kv[0]))],
            "eta": [[list(u), v] for u, v in sorted(self.eta.items(), key=lambda kv: (len(kv[0]), kv[0]))],
            "rho": [[k, v] for k, v in sorted(self.rho.items())],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DdsgFunction":
        if doc.get("schema_version") != SCHEMA_VERSION or doc.get("kind") != "ddsg":
            raise ValueError("not a DDSG document of a supported schema version")
        anchor = AnchorPoint(np.array(doc["anchor"]["coords"]), np.array(doc["anchor"]["f_anchor"]))
        out = cls(d=int(doc["d"]), out_dim=int(doc["out_dim"]), anchor=anchor, k_max=int(doc["k_max"]),
                  level=int(doc["level"]), eps_gamma=float(doc["eps_gamma"]),
                  boundary_mode=doc["boundary_mode"], eps_eta=float(doc["eps_eta"]),
                  eps_rho=float(doc["eps_rho"]))
        out.accepted = {tuple(u): sg.SparseGrid.from_dict(g) for u, g in doc["accepted"]}
        out.rejected = {tuple(z) for z in doc["rejected"]}
        out.cut_quadratures = {tuple(u): np.array(q) for u, q in doc["cut_quadratures"]}
        out.component_quadratures = {u: component_quadrature(u, out.cut_quadratures)
                                     for u in list(out.accepted) + [()]}
        out.eta = {tuple(u): float(v) for u, v in doc["eta"]}
        out.rho = {int(k): float(v) for k, v in doc["rho"]}
        out.finalize()
        stored = {tuple(u): int(c) for u, c in doc["coeff_b"]}
        if stored != out.coeff_b:
            raise ValueError("stored coefficient vector is inconsistent with the accepted family")
        return out

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "DdsgFunction":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def candidate_indices(d: int, k: int, rejected) -> list:
    """Order-``k`` indices that are not supersets of any rejected index."""
    rej = [set(z) for z in rejected]
    return [c for c in combinations(range(d), k) if not any(z <= set(c) for z in rej)]


def decompose(f, d: int, k_max: int, eps_rho: float | None = None, eps_eta: float = 0.0,
              anchor: AnchorPoint | None = None, level: int = 4, eps_gamma: float = 0.0,
              boundary_mode: str = sg.MODIFIED_LINEAR, workers: int = 1, exact_cuts: bool = False,
              anchor_samples: int = 1000, seed: int = 0) -> DdsgFunction:
    """Adaptive cut-HDMR decomposition of ``f`` with sparse-grid components.

    ``f`` maps ``(P, d)`` points to ``(P, m)`` values. Components of one order
    are built concurrently on ``workers`` threads (idle workers help inside the
    grid builds); acceptance bookkeeping happens in the calling thread once the
    whole order is done. A component of order >= 2 is accepted when its
    ``eta >= eps_eta``; the expansion stops after order ``k`` when
    ``rho < eps_rho`` or ``k == k_max``. ``eps_rho`` defaults to ``eps_eta``.

    With ``exact_cuts=True`` the returned expansion evaluates the cut functions
    of ``f`` directly instead of their interpolants (grids are still built for
    the quadratures).
    """
    if not 1 <= k_max <= d:
        raise ValueError(f"k_max must be in [1, d], got {k_max}")
    if eps_rho is None:
        eps_rho = eps_eta
    if eps_rho < 0 or eps_eta < 0 or eps_gamma < 0:
        raise ValueError("thresholds must be >= 0")
    if anchor is None:
        anchor = select_anchor(f, d, anchor_samples, seed)

    m = anchor.f_anchor.size
    out = DdsgFunction(d=d, out_dim=m, anchor=anchor, k_max=k_max, level=level, eps_gamma=eps_gamma,
                       boundary_mode=boundary_mode, eps_eta=eps_eta, eps_rho=eps_rho,
                       exact_f=f if exact_cuts else None)
    out.cut_quadratures[()] = anchor.f_anchor.copy()
    out.component_quadratures[()] = anchor.f_anchor.copy()
    cum_prev = anchor.f_anchor.copy()

    for k in range(1, k_max + 1):
        C = candidate_indices(d, k, out.rejected)
        if not C:
            break
        t0 = time.perf_counter()
        costs = [float(sg.regular_count(k, level))] * len(C)
        plan = TaskPlan.make(C, costs, workers)

        def build_one(u, _fine=plan.fine_workers):
            try:
                g = sg.build(cut_evaluator(f, anchor, u), k, level, eps_gamma, boundary_mode,
                             workers=_fine, out_dim=m)
            except Exception as exc:
                raise DecompositionError(f"building component {u} failed: {exc}", component=u) from exc
            return g, g.quadrature()

        try:
            built = plan.run(build_one)
        except Exception as exc:
            first = getattr(exc, "failures", [(None, exc)])[0][1]
            if isinstance(first, DecompositionError):
                raise first
            raise

        # synchronize: acceptance bookkeeping in task order
        lower = cum_prev
        order_sum = np.zeros(m)
        for u, (g, q) in zip(C, built):
            out.cut_quadratures[u] = q
            qu = component_quadrature(u, out.cut_quadratures)
            if k >= 2:
                try:
                    e = eta(qu, lower)
                except ZeroDenominatorError:
                    e = math.inf
                out.eta[u] = e
                if not e >= eps_eta:
                    out.rejected.add(u)
                    del out.cut_quadratures[u]
                    continue
            out.accepted[u] = ExactCut(f, anchor, u, g) if exact_cuts else g
            out.component_quadratures[u] = qu
            order_sum = order_sum + qu
        cum = cum_prev + order_sum
        try:
            r = expansion_rho(cum, cum_prev)
        except ZeroDenominatorError:
            log.info("order %d: zero cumulative quadrature, continuing expansion", k)
            r = math.inf
        out.rho[k] = r
        log.debug("order %d: %d candidates, %d rejected, rho=%.3e (%.2fs)", k, len(C),
                  sum(1 for u in C if u in out.rejected), r, time.perf_counter() - t0)
        cum_prev = cum
        if r < eps_rho:
            break
    return out.finalize()


def decompose_exact_truncation(f, d, k_max, anchor: AnchorPoint):
    """Evaluator of the truncated cut-HDMR of ``f`` with exact cut evaluations (no grids)."""
    fam = [u for k in range(k_max + 1) for u in combinations(range(d), k)]
    b = b_coefficients(fam)
    base = anchor.coords

    def g(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = 0.0
        for u, c in b.items():
            if c == 0:
                continue
            Z = np.repeat(base[None, :], X.shape[0], axis=0)
            Z[:, list(u)] = X[:, list(u)]
            out = out + c * np.asarray(f(Z), dtype=float)
        return out

    return g
