"""Hot interpolation kernels.

Every kernel exists twice: a numba ``@njit`` loop version and a pure-numpy
version vectorized over query points. The numba path is used unless numba is
missing or ``DDSG_DISABLE_NUMBA`` is set to a truthy value before import.

Data layout
-----------
A *bundle* is a list of slots; each slot is one sparse grid acting on a subset
of the input columns and carrying a real coefficient. A slot owns a contiguous
range of *blocks*; a block is one hierarchical subspace W_l stored densely
(row-major over the per-dimension positions ``(i_j - 1) / 2``), so a query
touches exactly one entry per block. Absent nodes of adaptive grids are zero
rows of ``surplus``.

    slot_dims    (S, K) int64   input columns, -1 padded
    slot_ndim    (S,)   int64
    slot_coef    (S,)   float64
    slot_blocks  (S, 2) int64   [start, stop) into the block arrays
    block_levels (B, K) int64   level per slot dimension
    block_strides(B, K) int64
    block_offset (B,)   int64   first surplus row of the block
    surplus      (T, m) float64
"""

from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("DDSG_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:  # pragma: no cover - exercised implicitly
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLE


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------

def basis_1d_np(level, x, modified):
    """Value, derivative and 0-based level position of the active 1-d basis.

    ``level`` is a scalar, ``x`` an array. Exactly one basis function per level
    can be nonzero at ``x``; this returns it.
    """
    x = np.asarray(x, dtype=np.float64)
    n_cells = 1 << (level - 1)
    h = 1.0 / (1 << level)
    pos = np.clip((x * n_cells).astype(np.int64), 0, n_cells - 1)
    center = (2 * pos + 1) * h
    t = (x - center) / h
    val = 1.0 - np.abs(t)
    dval = np.where(t >= 0.0, -1.0 / h, 1.0 / h)
    if modified:
        if level == 1:
            return np.ones_like(x), np.zeros_like(x), pos
        left = pos == 0
        right = pos == n_cells - 1
        val = np.where(left, 2.0 - x / h, val)
        dval = np.where(left, -1.0 / h, dval)
        val = np.where(right, 2.0 - (1.0 - x) / h, val)
        dval = np.where(right, 1.0 / h, dval)
    neg = val <= 0.0
    val = np.where(neg, 0.0, val)
    dval = np.where(neg, 0.0, dval)
    return val, dval, pos


def eval_bundle_np(X, slot_dims, slot_ndim, slot_coef, slot_blocks, block_levels,
                   block_strides, block_offset, surplus, max_level, modified):
    X = np.ascontiguousarray(X, dtype=np.float64)
    P = X.shape[0]
    S = slot_dims.shape[0]
    m = surplus.shape[1]
    cache = {}

    def active(col, lev):
        key = (col, lev)
        if key not in cache:
            val, _, pos = basis_1d_np(lev, X[:, col], modified)
            cache[key] = (val, pos)
        return cache[key]

    slot_vals = np.zeros((S, P, m))
    for s in range(S):
        if slot_coef[s] == 0.0:
            continue
        nd = slot_ndim[s]
        acc = np.zeros((P, m))
        for b in range(slot_blocks[s, 0], slot_blocks[s, 1]):
            prod = np.ones(P)
            row = np.full(P, block_offset[b], dtype=np.int64)
            for j in range(nd):
                val, pos = active(slot_dims[s, j], block_levels[b, j])
                prod = prod * val
                row = row + pos * block_strides[b, j]
            acc += prod[:, None] * surplus[row]
        slot_vals[s] = slot_coef[s] * acc
    return _pairwise_sum_np(slot_vals)


def _pairwise_sum_np(vals):
    vals = vals.copy()
    n = vals.shape[0]
    if n == 0:
        return np.zeros(vals.shape[1:])
    step = 1
    while step < n:
        for i in range(0, n - step, 2 * step):
            vals[i] = vals[i] + vals[i + step]
        step *= 2
    return vals[0]


def eval_bundle_grad_np(X, wrt, slot_dims, slot_ndim, slot_coef, slot_blocks, block_levels,
                        block_strides, block_offset, surplus, max_level, modified):
    """Values and gradients w.r.t. the input columns listed in ``wrt``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    P = X.shape[0]
    m = surplus.shape[1]
    G = len(wrt)
    gpos = {int(c): g for g, c in enumerate(wrt)}
    out = np.zeros((P, m))
    grad = np.zeros((P, m, G))
    cache = {}

    def active(col, lev):
        key = (col, lev)
        if key not in cache:
            cache[key] = basis_1d_np(lev, X[:, col], modified)
        return cache[key]

    for s in range(slot_dims.shape[0]):
        c = slot_coef[s]
        if c == 0.0:
            continue
        nd = slot_ndim[s]
        for b in range(slot_blocks[s, 0], slot_blocks[s, 1]):
            vals, dvals = [], []
            row = np.full(P, block_offset[b], dtype=np.int64)
            for j in range(nd):
                val, dval, pos = active(slot_dims[s, j], block_levels[b, j])
                vals.append(val)
                dvals.append(dval)
                row = row + pos * block_strides[b, j]
            sur = surplus[row]
            prod = np.ones(P)
            for v in vals:
                prod = prod * v
            out += c * prod[:, None] * sur
            for j in range(nd):
                g = gpos.get(int(slot_dims[s, j]))
                if g is None:
                    continue
                part = dvals[j].copy()
                for i in range(nd):
                    if i != j:
                        part = part * vals[i]
                grad[:, :, g] += c * part[:, None] * sur
    return out, grad


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _basis(level, x, modified):
        n_cells = 1 << (level - 1)
        h = 1.0 / (1 << level)
        pos = int(x * n_cells)
        if pos < 0:
            pos = 0
        elif pos > n_cells - 1:
            pos = n_cells - 1
        if modified and level == 1:
            return 1.0, 0.0, pos
        t = (x - (2 * pos + 1) * h) / h
        if t >= 0.0:
            val = 1.0 - t
            dval = -1.0 / h
        else:
            val = 1.0 + t
            dval = 1.0 / h
        if modified:
            if pos == 0:
                val = 2.0 - x / h
                dval = -1.0 / h
            elif pos == n_cells - 1:
                val = 2.0 - (1.0 - x) / h
                dval = 1.0 / h
        if val <= 0.0:
            return 0.0, 0.0, pos
        return val, dval, pos

    @numba.njit(cache=True, nogil=True)
    def _fill_cache(x, max_level, modified, vals, dvals, poss):
        for c in range(x.shape[0]):
            for lev in range(1, max_level + 1):
                v, dv, p = _basis(lev, x[c], modified)
                vals[c, lev] = v
                dvals[c, lev] = dv
                poss[c, lev] = p

    @numba.njit(cache=True, nogil=True)
    def eval_bundle_nb(X, slot_dims, slot_ndim, slot_coef, slot_blocks, block_levels,
                       block_strides, block_offset, surplus, max_level, modified):
        P, D = X.shape
        S = slot_dims.shape[0]
        m = surplus.shape[1]
        out = np.zeros((P, m))
        vals = np.zeros((D, max_level + 1))
        dvals = np.zeros((D, max_level + 1))
        poss = np.zeros((D, max_level + 1), dtype=np.int64)
        buf = np.zeros((S, m))
        for p in range(P):
            _fill_cache(X[p], max_level, modified, vals, dvals, poss)
            for s in range(S):
                for q in range(m):
                    buf[s, q] = 0.0
                c = slot_coef[s]
                if c == 0.0:
                    continue
                nd = slot_ndim[s]
                for b in range(slot_blocks[s, 0], slot_blocks[s, 1]):
                    prod = 1.0
                    row = block_offset[b]
                    for j in range(nd):
                        col = slot_dims[s, j]
                        lev = block_levels[b, j]
                        prod *= vals[col, lev]
                        if prod == 0.0:
                            break
                        row += poss[col, lev] * block_strides[b, j]
                    if prod != 0.0:
                        for q in range(m):
                            buf[s, q] += prod * surplus[row, q]
                for q in range(m):
                    buf[s, q] *= c
            # pairwise reduction over slots, fixed order
            step = 1
            while step < S:
                i = 0
                while i + step < S:
                    for q in range(m):
                        buf[i, q] += buf[i + step, q]
                    i += 2 * step
                step *= 2
            if S > 0:
                for q in range(m):
                    out[p, q] = buf[0, q]
        return out

    @numba.njit(cache=True, nogil=True)
    def eval_bundle_grad_nb(X, wrt, slot_dims, slot_ndim, slot_coef, slot_blocks, block_levels,
                            block_strides, block_offset, surplus, max_level, modified):
        P, D = X.shape
        m = surplus.shape[1]
        G = wrt.shape[0]
        gpos = np.full(D, -1, dtype=np.int64)
        for g in range(G):
            gpos[wrt[g]] = g
        out = np.zeros((P, m))
        grad = np.zeros((P, m, G))
        vals = np.zeros((D, max_level + 1))
        dvals = np.zeros((D, max_level + 1))
        poss = np.zeros((D, max_level + 1), dtype=np.int64)
        K = slot_dims.shape[1]
        bv = np.zeros(K)
        bd = np.zeros(K)
        for p in range(P):
            _fill_cache(X[p], max_level, modified, vals, dvals, poss)
            for s in range(slot_dims.shape[0]):
                c = slot_coef[s]
                if c == 0.0:
                    continue
                nd = slot_ndim[s]
                for b in range(slot_blocks[s, 0], slot_blocks[s, 1]):
                    row = block_offset[b]
                    nzero = 0
                    for j in range(nd):
                        col = slot_dims[s, j]
                        lev = block_levels[b, j]
                        bv[j] = vals[col, lev]
                        bd[j] = dvals[col, lev]
                        if bv[j] == 0.0:
                            nzero += 1
                        row += poss[col, lev] * block_strides[b, j]
                    if nzero > 1:
                        continue
                    prod = 1.0
                    for j in range(nd):
                        prod *= bv[j]
                    if prod != 0.0:
                        for q in range(m):
                            out[p, q] += c * prod * surplus[row, q]
                    for j in range(nd):
                        g = gpos[slot_dims[s, j]]
                        if g < 0 or bd[j] == 0.0:
                            continue
                        part = bd[j]
                        for i in range(nd):
                            if i != j:
                                part *= bv[i]
                        if part != 0.0:
                            for q in range(m):
                                grad[p, q, g] += c * part * surplus[row, q]
        return out, grad

else:  # pragma: no cover
    eval_bundle_nb = None
    eval_bundle_grad_nb = None


if USE_NUMBA:
    eval_bundle = eval_bundle_nb
    eval_bundle_grad = eval_bundle_grad_nb
else:
    eval_bundle = eval_bundle_np
    eval_bundle_grad = eval_bundle_grad_np


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
