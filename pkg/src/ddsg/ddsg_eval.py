"""Vectorized evaluation of a truncated cut-HDMR expansion.

The telescoping double sum over component indices ``u`` and their subsets
``v`` repeats the same cut interpolant many times. Collecting the signs per
distinct cut index ``i`` gives an integer vector ``b`` with

    b_i = sum over accepted u containing i of (-1)**(|u| - |i|)

so the expansion collapses to a dot product ``a(x) . b`` where ``a_i(x)`` is
the cut interpolant of index ``i`` (``a_() = f(anchor)``). ``b`` depends only
on the accepted index family and is computed once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .sparse_grid import Bundle, grid_blocks


class CompileError(ValueError):
    pass


def subsets(u):
    for r in range(len(u) + 1):
        yield from combinations(u, r)


def slot_order(indices):
    """Empty index first, then by order, lexicographic within an order."""
    return sorted(set(indices), key=lambda u: (len(u), u))


def check_closure(family):
    """Raise unless every subset of every member is itself a member."""
    fam = set(family)
    for u in fam:
        for r in range(len(u)):
            for v in combinations(u, r):
                if v not in fam:
                    raise CompileError(f"accepted family not downward closed: {u} lacks {v}")


def b_coefficients(accepted) -> dict:
    """Integer telescoping coefficients for a downward-closed index family.

    ``accepted`` must contain the empty index ``()``.
    """
    fam = set(tuple(u) for u in accepted)
    fam.add(())
    check_closure(fam)
    b = {u: 0 for u in fam}
    for u in fam:
        for v in subsets(u):
            b[v] += (-1) ** (len(u) - len(v))
    return b


@dataclass
class VectorizedDdsg:
    """Compiled DDSG: slot list, integer coefficient vector and one fused kernel bundle."""

    d: int
    out_dim: int
    index_order: list
    grids: list
    b: np.ndarray
    anchor_value: np.ndarray
    bundle: Bundle | None = None
    exact_f: object = None
    anchor_coords: np.ndarray | None = None
    interp_calls: int = 0
    _sub_bundles: dict = field(default_factory=dict, repr=False)

    @property
    def active_slots(self):
        return [i for i, c in enumerate(self.b) if c != 0]

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.d:
            raise ValueError(f"expected points of dimension {self.d}, got {X.shape[1]}")
        if not np.all(np.isfinite(X)) or np.any(X < 0.0) or np.any(X > 1.0):
            raise ValueError("query point outside the unit cube")
        return np.ascontiguousarray(X)

    def evaluate(self, x, backend=None):
        """Value at a single point ``x`` of shape ``(d,)``."""
        return self.evaluate_batch(np.asarray(x, dtype=np.float64)[None, :], backend)[0]

    def evaluate_batch(self, X, backend=None):
        X = self._check(X)
        self.interp_calls += len(self.active_slots) * X.shape[0]
        if self.exact_f is not None:
            return self._evaluate_exact(X)
        return self.bundle.evaluate(X, backend)

    def evaluate_batch_grad(self, X, wrt, backend=None):
        """Values and gradient w.r.t. the input columns ``wrt``; shapes ``(P, m)``, ``(P, m, len(wrt))``."""
        X = self._check(X)
        if self.exact_f is not None:
            raise NotImplementedError("gradients are not available for exact-cut expansions")
        self.interp_calls += len(self.active_slots) * X.shape[0]
        return self.bundle.evaluate_grad(X, wrt, backend)

    def _cut_points(self, X, dims):
        Z = np.repeat(self.anchor_coords[None, :], X.shape[0], axis=0)
        Z[:, list(dims)] = X[:, list(dims)]
        return Z

    def _evaluate_exact(self, X):
        out = np.zeros((X.shape[0], self.out_dim))
        for i in self.active_slots:
            u = self.index_order[i]
            val = self.anchor_value[None, :] if not u else np.asarray(self.exact_f(self._cut_points(X, u)))
            out += self.b[i] * val
        return out

    def cut_value(self, u, X, backend=None):
        """Interpolant of the cut with index ``u`` at ``X`` (one kernel call, no caching)."""
        if not u:
            return np.repeat(self.anchor_value[None, :], X.shape[0], axis=0)
        if self.exact_f is not None:
            return np.asarray(self.exact_f(self._cut_points(X, u)))
        sub = self._sub_bundles.get(u)
        if sub is None:
            sub = self.grids[self.index_order.index(u)].bundle()
            self._sub_bundles[u] = sub
        return sub.evaluate(np.ascontiguousarray(X[:, list(u)]), backend)

    def evaluate_naive(self, X, accepted=None, backend=None):
        """Direct telescoping double sum; every (u, v) pair interpolates anew."""
        X = self._check(X)
        fam = self.index_order if accepted is None else slot_order(list(accepted) + [()])
        out = np.zeros((X.shape[0], self.out_dim))
        calls = 0
        for u in fam:
            for v in subsets(u):
                out += (-1) ** (len(u) - len(v)) * self.cut_value(v, X, backend)
                calls += 1
        self.interp_calls += calls * X.shape[0]
        return out

    def quadrature(self):
        """``sum_i b_i * Q(a_i)``; equals the cumulative expansion quadrature."""
        q = self.b[0] * self.anchor_value.astype(float)
        for i in range(1, len(self.index_order)):
            if self.b[i]:
                q = q + self.b[i] * self.grids[i].quadrature()
        return q


def compile_ddsg(ddsg) -> VectorizedDdsg:
    """Flatten a :class:`~ddsg.hdmr.DdsgFunction` into a :class:`VectorizedDdsg`."""
    order = slot_order(list(ddsg.accepted) + [()])
    bmap = b_coefficients(order)
    b = np.array([bmap[u] for u in order], dtype=np.int64)
    grids = [None] + [ddsg.accepted[u] for u in order[1:]]
    anchor_value = np.asarray(ddsg.anchor.f_anchor, dtype=np.float64)
    if ddsg.exact:
        return VectorizedDdsg(d=ddsg.d, out_dim=ddsg.out_dim, index_order=order, grids=grids, b=b,
                              anchor_value=anchor_value, exact_f=ddsg.exact_f,
                              anchor_coords=np.asarray(ddsg.anchor.coords, dtype=np.float64))
    return VectorizedDdsg(d=ddsg.d, out_dim=ddsg.out_dim, index_order=order, grids=grids, b=b,
                          anchor_value=anchor_value, bundle=_fuse(order, grids, b, anchor_value,
                                                                  ddsg.out_dim),
                          anchor_coords=np.asarray(ddsg.anchor.coords, dtype=np.float64))


def _fuse(order, grids, b, anchor_value, m) -> Bundle:
    """One contiguous kernel bundle holding every slot with a nonzero coefficient."""
    active = [i for i in range(len(order)) if b[i] != 0]
    K = max([len(order[i]) for i in active] + [1])
    S = len(active)
    slot_dims = np.full((S, K), -1, dtype=np.int64)
    slot_ndim = np.zeros(S, dtype=np.int64)
    slot_coef = np.zeros(S)
    slot_blocks = np.zeros((S, 2), dtype=np.int64)
    levels, strides, offsets, surpl = [], [], [], []
    nblocks = 0
    nrows = 0
    max_level = 1
    modified = True
    for s, i in enumerate(active):
        u = order[i]
        slot_dims[s, :len(u)] = u
        slot_ndim[s] = len(u)
        slot_coef[s] = float(b[i])
        if not u:
            bl = np.zeros((1, K), dtype=np.int64)
            bs = np.zeros((1, K), dtype=np.int64)
            bo = np.zeros(1, dtype=np.int64)
            flat = anchor_value[None, :].copy()
        else:
            g = grids[i]
            modified = g.boundary_mode == "modified_linear"
            max_level = max(max_level, int(g.levels.max()))
            bl0, bs0, bo, flat = grid_blocks(g.levels, g.indices, g.surplus)
            bl = np.zeros((bl0.shape[0], K), dtype=np.int64)
            bs = np.zeros((bl0.shape[0], K), dtype=np.int64)
            bl[:, :len(u)] = bl0[:, :len(u)]
            bs[:, :len(u)] = bs0[:, :len(u)]
        slot_blocks[s] = (nblocks, nblocks + bl.shape[0])
        levels.append(bl)
        strides.append(bs)
        offsets.append(bo + nrows)
        surpl.append(flat)
        nblocks += bl.shape[0]
        nrows += flat.shape[0]
    return Bundle(
        slot_dims=slot_dims, slot_ndim=slot_ndim, slot_coef=slot_coef, slot_blocks=slot_blocks,
        block_levels=np.vstack(levels) if levels else np.zeros((0, K), np.int64),
        block_strides=np.vstack(strides) if strides else np.zeros((0, K), np.int64),
        block_offset=np.concatenate(offsets) if offsets else np.zeros(0, np.int64),
        surplus=np.ascontiguousarray(np.vstack(surpl)) if surpl else np.zeros((0, m)),
        max_level=max_level, modified=modified,
    )
