"""Analytic test functions on the unit cube, vectorized over rows of ``X``."""

from __future__ import annotations

import numpy as np


def sum_power(power: int):
    """``(x_1 + ... + x_d) ** power``; its cut expansion is exact from order ``power`` on."""
    if power < 0:
        raise ValueError("power must be >= 0")

    def f(X):
        X = np.atleast_2d(X)
        return (X.sum(axis=1) ** power)[:, None]

    return f


def product_peak(d: int, width: float = 1.0, center: float = 0.5):
    """Genz product peak ``prod_i 1 / (width**-2 + (x_i - center)**2)``, scaled to 1 at the center."""

    def f(X):
        X = np.atleast_2d(X)
        return np.prod(1.0 / (1.0 + width ** 2 * (X - center) ** 2), axis=1)[:, None]

    return f


def sqrt_product(X):
    """``x_1 * sqrt(x_2)``; the remaining coordinates are ignored."""
    X = np.atleast_2d(X)
    return (X[:, 0] * np.sqrt(X[:, 1]))[:, None]


def smooth_bump(X):
    """Smooth 2-d function vanishing on the boundary: ``16 x y (1 - x)(1 - y) exp(x y)``."""
    X = np.atleast_2d(X)
    x, y = X[:, 0], X[:, 1]
    return (16.0 * x * y * (1.0 - x) * (1.0 - y) * np.exp(x * y))[:, None]


def additive_separable(d: int, seed: int = 0):
    """Sum of random one-dimensional smooth terms; every cut component of order >= 2 vanishes."""
    rng = np.random.default_rng(seed)
    amp = rng.uniform(0.5, 1.5, size=d)
    freq = rng.uniform(1.0, 3.0, size=d)

    def f(X):
        X = np.atleast_2d(X)
        return (1.0 + np.sum(amp * np.sin(freq * X) + 0.5 * X ** 2, axis=1))[:, None]

    return f


BUILTIN = ("sum_power", "product_peak", "sqrt_product", "smooth_bump", "additive_separable")


def by_name(name: str, d: int, power: int = 1, seed: int = 0):
    if name == "sum_power":
        return sum_power(power)
    if name == "product_peak":
        return product_peak(d)
    if name == "sqrt_product":
        if d < 2:
            raise ValueError("sqrt_product needs d >= 2")
        return sqrt_product
    if name == "smooth_bump":
        if d < 2:
            raise ValueError("smooth_bump needs d >= 2")
        return smooth_bump
    if name == "additive_separable":
        return additive_separable(d, seed)
    raise ValueError(f"unknown test function {name!r}; choose from {', '.join(BUILTIN)}")
