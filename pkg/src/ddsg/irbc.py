"""International real business cycle model, smooth and irreversible-investment variants.

The state of an ``N``-country economy is ``(a, k)`` (productivity levels and
capital stocks), mapped affinely onto the canonical cube ``[0, 1]^(2N)`` with
productivity coordinates first. A policy maps the state to

    smooth:     (k'_1 .. k'_N, lambda)
    nonsmooth:  (k'_1 .. k'_N, mu_1 .. mu_N, lambda)

where ``lambda`` is the multiplier on the aggregate resource constraint and
``mu`` the multipliers on irreversibility, ``k' >= (1 - delta) k``.
Complementarity is encoded with the Fischer-Burmeister function.

Policies passed to the residual functions must provide
``evaluate_batch(X)`` and ``evaluate_batch_grad(X, wrt)`` on canonical points,
returning values in model units (see :class:`FunctionPolicy`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

SMOOTH = "smooth"
NONSMOOTH = "nonsmooth"


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class IrbcParameters:
    """Calibration and state-space box.

    ``gamma_j = gamma_base + gamma_spread * (j - 1) / (N - 1)`` (``gamma_base``
    for a single country). ``rho_a`` is the autocorrelation of log
    productivity and ``phi_adj`` the adjustment-cost intensity.
    """

    countries: int = 2
    beta: float = 0.99
    gamma_base: float = 0.25
    gamma_spread: float = 0.75
    alpha: float = 0.36
    delta: float = 0.01
    sigma: float = 0.01
    rho_a: float = 0.95
    phi_adj: float = 0.5
    variant: str = SMOOTH
    k_min: float = 0.5
    k_max: float = 1.5
    lna_half_width: float = 0.4

    def __post_init__(self):
        if self.countries < 1:
            raise ValueError("countries must be >= 1")
        for name in ("beta", "delta", "alpha"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.sigma < 0.0:
            raise ValueError("sigma must be >= 0")
        if not 0.0 <= self.rho_a < 1.0:
            raise ValueError("rho_a must lie in [0, 1)")
        if self.phi_adj < 0.0:
            raise ValueError("phi_adj must be >= 0")
        if np.any(self.gamma <= 0.0):
            raise ValueError("all gamma_j must be > 0")
        if self.variant not in (SMOOTH, NONSMOOTH):
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0.0 < self.k_min < self.k_max:
            raise ValueError("need 0 < k_min < k_max")
        if self.lna_half_width <= 0.0:
            raise ValueError("lna_half_width must be > 0")

    @property
    def N(self) -> int:
        return self.countries

    @property
    def d(self) -> int:
        return 2 * self.countries

    @property
    def nonsmooth(self) -> bool:
        return self.variant == NONSMOOTH

    @property
    def n_policy(self) -> int:
        return 2 * self.N + 1 if self.nonsmooth else self.N + 1

    @property
    def A(self) -> float:
        return (1.0 - self.beta * (1.0 - self.delta)) / (self.alpha * self.beta)

    @property
    def gamma(self) -> np.ndarray:
        N = self.countries
        if N == 1:
            return np.array([self.gamma_base])
        return self.gamma_base + self.gamma_spread * np.arange(N) / (N - 1)

    @property
    def tau(self) -> np.ndarray:
        return self.A ** (1.0 / self.gamma)

    def with_(self, **changes) -> "IrbcParameters":
        return replace(self, **changes)

    # -- steady state --------------------------------------------------------

    def steady_lambda(self) -> float:
        """Resource-constraint multiplier at a = k = k' = 1."""
        g = self.gamma
        if np.all(g == g[0]):
            return (1.0 - self.delta / self.A) ** (-1.0 / g[0])
        target = self.N * (self.A - self.delta)
        fn = lambda lam: float(np.sum((lam / self.tau) ** (-g))) - target  # noqa: E731
        return brentq(fn, 1e-6, 1e6, xtol=1e-15)

    def steady_policy(self) -> np.ndarray:
        out = np.zeros(self.n_policy)
        out[: self.N] = 1.0
        out[-1] = self.steady_lambda()
        return out


@dataclass
class PolicyValue:
    k_next: np.ndarray
    lam: float
    mu: np.ndarray | None = None

    def __post_init__(self):
        self.k_next = np.asarray(self.k_next, dtype=float)
        if self.mu is not None:
            self.mu = np.asarray(self.mu, dtype=float)
        if np.any(self.k_next <= 0.0) or not self.lam > 0.0:
            raise ValueError("k_next and lambda must be positive")

    def to_vector(self) -> np.ndarray:
        parts = [self.k_next] + ([self.mu] if self.mu is not None else []) + [[self.lam]]
        return np.concatenate(parts).astype(float)

    @classmethod
    def from_vector(cls, z, params: IrbcParameters) -> "PolicyValue":
        z = np.asarray(z, dtype=float)
        N = params.N
        mu = z[N:2 * N] if params.nonsmooth else None
        return cls(k_next=z[:N], lam=float(z[-1]), mu=mu)


@dataclass(frozen=True)
class EconomicState:
    a: np.ndarray
    k: np.ndarray

    def canonical(self, params: IrbcParameters) -> np.ndarray:
        return to_canonical(self.a, self.k, params, strict=True)


@dataclass(frozen=True)
class ShockQuadrature:
    nodes: np.ndarray    # (Q, N + 1): country shocks then the global shock
    weights: np.ndarray  # (Q,)


# -- primitives ---------------------------------------------------------------

def production(a, k, params: IrbcParameters):
    a = np.asarray(a, dtype=float)
    k = np.asarray(k, dtype=float)
    if np.any(a <= 0) or np.any(k <= 0):
        raise DomainError("production needs positive productivity and capital")
    return params.A * a * k ** params.alpha


def adjustment_cost(k, k_next, params: IrbcParameters):
    k = np.asarray(k, dtype=float)
    if np.any(k <= 0):
        raise DomainError("adjustment cost needs positive capital")
    return 0.5 * params.phi_adj * k * (np.asarray(k_next, dtype=float) / k - 1.0) ** 2


def law_of_motion(a, shocks, params: IrbcParameters):
    """Next-period productivity levels; ``shocks = (e_country, e_global)``."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise DomainError("productivity must be positive")
    e_vec, e_global = shocks
    return np.exp(params.rho_a * np.log(a) + params.sigma * (np.asarray(e_vec, dtype=float) + e_global))


def stationary_lna_std(params: IrbcParameters) -> float:
    """Unconditional standard deviation of ``ln a_j`` (country plus global shock)."""
    return params.sigma * math.sqrt(2.0 / (1.0 - params.rho_a ** 2))


def make_shock_quadrature(N: int, params: IrbcParameters | None = None) -> ShockQuadrature:
    """Degree-3 monomial rule with ``2 (N + 1)`` nodes on the coordinate axes."""
    if N < 1:
        raise ValueError("N must be >= 1")
    D = N + 1
    r = math.sqrt(D)
    nodes = np.vstack([r * np.eye(D), -r * np.eye(D)])
    return ShockQuadrature(nodes=nodes, weights=np.full(2 * D, 1.0 / (2 * D)))


def fischer_burmeister(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a + b - np.hypot(a, b)


def fischer_burmeister_grad(a, b):
    """Generalized derivative; ``1 - 1/sqrt(2)`` in both arguments at the origin."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r = np.hypot(a, b)
    safe = np.where(r > 0.0, r, 1.0)
    c = 1.0 - 1.0 / math.sqrt(2.0)
    da = np.where(r > 0.0, 1.0 - a / safe, c)
    db = np.where(r > 0.0, 1.0 - b / safe, c)
    return da, db


# -- domain map -----------------------------------------------------------------

def to_canonical(a, k, params: IrbcParameters, strict: bool = False, return_flags: bool = False):
    """Map levels ``(a, k)`` (shape ``(..., N)``) to canonical coordinates ``(..., 2N)``.

    Out-of-box states raise with ``strict`` and are clamped otherwise.
    """
    a = np.asarray(a, dtype=float)
    k = np.asarray(k, dtype=float)
    w = params.lna_half_width
    xa = (np.log(a) + w) / (2.0 * w)
    xk = (k - params.k_min) / (params.k_max - params.k_min)
    x = np.concatenate([xa, xk], axis=-1)
    outside = (x < 0.0) | (x > 1.0)
    if strict and np.any(outside):
        raise DomainError("state outside the model domain")
    x = np.clip(x, 0.0, 1.0)
    if return_flags:
        return x, outside
    return x


def from_canonical(x, params: IrbcParameters):
    """Inverse of :func:`to_canonical`; returns ``(a, k)``."""
    x = np.asarray(x, dtype=float)
    N = params.N
    w = params.lna_half_width
    a = np.exp(x[..., :N] * 2.0 * w - w)
    k = params.k_min + x[..., N:] * (params.k_max - params.k_min)
    return a, k


# -- policies on the canonical domain -------------------------------------------

class FunctionPolicy:
    """Wrap a function of canonical points as a policy with finite-difference gradients."""

    def __init__(self, fn, grad_fn=None, fd_step=1e-7):
        self.fn = fn
        self.grad_fn = grad_fn
        self.fd_step = fd_step

    def evaluate_batch(self, X):
        return np.asarray(self.fn(np.atleast_2d(X)), dtype=float)

    def evaluate_batch_grad(self, X, wrt):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.grad_fn is not None:
            return self.evaluate_batch(X), self.grad_fn(X, wrt)
        f0 = self.evaluate_batch(X)
        grad = np.zeros(f0.shape + (len(wrt),))
        for g, c in enumerate(wrt):
            Xp = X.copy()
            Xm = X.copy()
            Xp[:, c] = np.minimum(X[:, c] + self.fd_step, 1.0)
            Xm[:, c] = np.maximum(X[:, c] - self.fd_step, 0.0)
            grad[:, :, g] = (self.evaluate_batch(Xp) - self.evaluate_batch(Xm)) / (Xp[:, c] - Xm[:, c])[:, None]
        return f0, grad


def steady_state_policy(params: IrbcParameters) -> FunctionPolicy:
    """The constant initial guess ``k' = k``, ``lambda = lambda_ss``, ``mu = 0``; exact gradient."""
    N = params.N
    lam = params.steady_lambda()
    width = params.k_max - params.k_min

    def fn(X):
        X = np.atleast_2d(X)
        out = np.zeros((X.shape[0], params.n_policy))
        out[:, :N] = params.k_min + X[:, N:] * width
        out[:, -1] = lam
        return out

    def grad(X, wrt):
        X = np.atleast_2d(X)
        G = np.zeros((X.shape[0], params.n_policy, len(wrt)))
        for g, c in enumerate(wrt):
            if c >= N:
                G[:, c - N, g] = width
        return G

    return FunctionPolicy(fn, grad)


# -- equilibrium conditions -------------------------------------------------------

@dataclass
class NextPeriod:
    """Expectation terms of the Euler equations, optionally with derivatives in k'."""

    expectation: np.ndarray            # (P, N)
    d_expectation: np.ndarray | None   # (P, N, N): d E_j / d k'_i
    clamped: int


def next_period(params: IrbcParameters, quad: ShockQuadrature, policy, a, kp, with_grad=False):
    """Expected marginal return terms ``E_j`` for candidate capital choices ``kp``.

    ``E_j = sum_q w_q [lambda' R_j - (1 - delta) mu'_j]`` with
    ``R_j = a'_j A alpha k'_j^(alpha-1) + 1 - delta + phi/2 g''_j (g''_j + 2)`` and
    ``g''_j = k''_j / k'_j - 1`` read from ``policy`` at the successor state.
    Successor states outside the box are clamped (and counted).
    """
    N = params.N
    P = a.shape[0]
    e = quad.nodes
    Q = e.shape[0]
    lna_next = params.rho_a * np.log(a)[:, None, :] + params.sigma * (e[None, :, :N] + e[None, :, N:])
    a_next = np.exp(lna_next)                                  # (P, Q, N)
    kp_b = np.broadcast_to(kp[:, None, :], (P, Q, N))
    x_next, outside = to_canonical(a_next, kp_b, params, return_flags=True)
    clamped = int(np.count_nonzero(np.any(outside, axis=-1)))
    Xf = np.ascontiguousarray(x_next.reshape(P * Q, 2 * N))
    wrt = np.arange(N, 2 * N)
    if with_grad:
        pol, dpol = policy.evaluate_batch_grad(Xf, wrt)
        width = params.k_max - params.k_min
        kmask = (~outside[..., N:]).reshape(P * Q, N).astype(float)
        dpol = dpol * (kmask / width)[:, None, :]
        dpol = dpol.reshape(P, Q, -1, N)
    else:
        pol = policy.evaluate_batch(Xf)
    pol = pol.reshape(P, Q, -1)
    k2 = pol[..., :N]
    lam1 = pol[..., -1]
    A, alpha, delta, phi = params.A, params.alpha, params.delta, params.phi_adj
    g2 = k2 / kp_b - 1.0
    R = a_next * A * alpha * kp_b ** (alpha - 1.0) + 1.0 - delta + 0.5 * phi * g2 * (g2 + 2.0)
    inner = lam1[..., None] * R
    if params.nonsmooth:
        mu1_raw = pol[..., N:2 * N]
        # multipliers are nonnegative; interpolation can undershoot near the kink
        mu1 = np.maximum(mu1_raw, 0.0)
        inner = inner - (1.0 - delta) * mu1
    w = quad.weights
    E = np.einsum("q,pqn->pn", w, inner)
    dE = None
    if with_grad:
        dk2 = dpol[:, :, :N, :]                # (P, Q, N_j, N_i)
        dlam1 = dpol[:, :, -1, :]              # (P, Q, N_i)
        dg2 = dk2 / kp_b[..., None]
        idx = np.arange(N)
        dg2[:, :, idx, idx] -= k2 / kp_b ** 2
        dR = phi * (g2 + 1.0)[..., None] * dg2
        dR[:, :, idx, idx] += a_next * A * alpha * (alpha - 1.0) * kp_b ** (alpha - 2.0)
        dinner = dlam1[:, :, None, :] * R[..., None] + lam1[..., None, None] * dR
        if params.nonsmooth:
            dmu1 = dpol[:, :, N:2 * N, :] * (mu1_raw > 0.0)[..., None]
            dinner = dinner - (1.0 - delta) * dmu1
        dE = np.einsum("q,pqji->pji", w, dinner)
    return NextPeriod(E, dE, clamped)


def residuals_batch(params: IrbcParameters, quad: ShockQuadrature, policy, a, k, Z, with_jac=False):
    """Equilibrium residuals for a batch of states and candidate policies.

    Rows of ``Z`` are policy vectors (see module docstring). Returns
    ``(R, J, clamped)``; ``J`` is ``None`` unless ``with_jac``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    k = np.atleast_2d(np.asarray(k, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    N = params.N
    P = Z.shape[0]
    kp = Z[:, :N]
    lam = Z[:, -1]
    beta, delta, phi = params.beta, params.delta, params.phi_adj
    gam, tau = params.gamma, params.tau
    nxt = next_period(params, quad, policy, a, kp, with_grad=with_jac)
    g1 = kp / k - 1.0
    euler = lam[:, None] * (1.0 + phi * g1) - beta * nxt.expectation
    cons = (lam[:, None] / tau) ** (-gam)
    resource = np.sum(production(a, k, params) + k * ((1.0 - delta) - 0.5 * phi * g1 ** 2) - kp - cons, axis=1)
    nv = params.n_policy
    R = np.zeros((P, nv))
    R[:, :N] = euler
    R[:, -1] = resource
    if params.nonsmooth:
        mu = Z[:, N:2 * N]
        R[:, :N] -= mu
        slack = kp - (1.0 - delta) * k
        R[:, N:2 * N] = fischer_burmeister(mu, slack)
    if not with_jac:
        return R, None, nxt.clamped
    J = np.zeros((P, nv, nv))
    idx = np.arange(N)
    J[:, :N, :N] = -beta * nxt.d_expectation
    J[:, idx, idx] += lam[:, None] * phi / k
    J[:, :N, -1] = 1.0 + phi * g1
    J[:, -1, :N] = -phi * g1 - 1.0
    J[:, -1, -1] = np.sum(gam * cons, axis=1) / lam
    if params.nonsmooth:
        J[:, idx, N + idx] = -1.0
        da, db = fischer_burmeister_grad(Z[:, N:2 * N], kp - (1.0 - delta) * k)
        J[:, N + idx, N + idx] = da
        J[:, N + idx, idx] = db
    return R, J, nxt.clamped


def _single(state, candidate):
    if isinstance(state, EconomicState):
        a, k = state.a, state.k
    else:
        a, k = state
    z = candidate.to_vector() if isinstance(candidate, PolicyValue) else np.asarray(candidate, float)
    return np.asarray(a, float)[None, :], np.asarray(k, float)[None, :], z[None, :]


def foc_smooth_residuals(state, candidate, policy_next, params: IrbcParameters, quad: ShockQuadrature):
    """``N`` Euler residuals followed by the aggregate resource constraint."""
    if params.nonsmooth:
        params = params.with_(variant=SMOOTH)
    a, k, z = _single(state, candidate)
    return residuals_batch(params, quad, policy_next, a, k, z)[0][0]


def foc_nonsmooth_residuals(state, candidate, policy_next, params: IrbcParameters, quad: ShockQuadrature):
    """``N`` Euler residuals, ``N`` Fischer-Burmeister residuals, then the resource constraint."""
    if not params.nonsmooth:
        params = params.with_(variant=NONSMOOTH)
    a, k, z = _single(state, candidate)
    return residuals_batch(params, quad, policy_next, a, k, z)[0][0]


def fd_jacobian(params, quad, policy, a, k, Z, step=1e-6):
    """Central finite-difference Jacobian of :func:`residuals_batch` (independent check)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    P, nv = Z.shape
    J = np.zeros((P, nv, nv))
    for c in range(nv):
        h = step * np.maximum(1.0, np.abs(Z[:, c]))
        Zp = Z.copy()
        Zm = Z.copy()
        Zp[:, c] += h
        Zm[:, c] -= h
        Rp = residuals_batch(params, quad, policy, a, k, Zp)[0]
        Rm = residuals_batch(params, quad, policy, a, k, Zm)[0]
        J[:, :, c] = (Rp - Rm) / (2.0 * h[:, None])
    return J
