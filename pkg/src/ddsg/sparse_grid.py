"""Adaptive piecewise-linear sparse grids on the unit cube.

Nodes are identified by a level vector ``l`` and an odd index vector ``i``;
the node sits at ``x_j = i_j * 2**-l_j``. Two boundary treatments exist:

``zero_boundary``
    Plain hat functions; the interpolant vanishes on the cube boundary.
``modified_linear``
    Level 1 is the constant 1 and the outermost function of every finer level
    extrapolates linearly to the boundary (value 2 at the edge). Linear
    functions are reproduced exactly without boundary nodes.

Surpluses are obtained by residual hierarchization: a new node's surplus is
the function value minus the current interpolant at that node. Because a hat
function vanishes at every coarser node, the interpolant at a node depends only
on its ancestors, so this stays exact on adaptively pruned grids as long as
ancestors are inserted first.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement, product
from typing import Callable

import numpy as np

from . import _kernels
from .runtime import parallel_map

ZERO_BOUNDARY = "zero_boundary"
MODIFIED_LINEAR = "modified_linear"
BOUNDARY_MODES = (ZERO_BOUNDARY, MODIFIED_LINEAR)

SCHEMA_VERSION = 1

Evaluator = Callable[[np.ndarray], np.ndarray]


class SparseGridError(ValueError):
    pass


class GridBuildError(SparseGridError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


def _check_pair(level, index):
    if level < 1:
        raise SparseGridError(f"level must be >= 1, got {level}")
    if index < 1 or index >= (1 << level) or index % 2 == 0:
        raise SparseGridError(f"invalid index {index} for level {level}: need odd 1 <= i < 2**l")


def _check_mode(mode):
    if mode not in BOUNDARY_MODES:
        raise SparseGridError(f"unknown boundary mode {mode!r}")


def basis_1d(level: int, index: int, x: float, mode: str = ZERO_BOUNDARY) -> float:
    """Evaluate the 1-d hierarchical basis function ``phi_{level,index}`` at ``x``."""
    _check_pair(level, index)
    _check_mode(mode)
    h = 2.0 ** -level
    if mode == MODIFIED_LINEAR:
        if level == 1:
            return 1.0
        if index == 1:
            return max(2.0 - x / h, 0.0)
        if index == (1 << level) - 1:
            return max(2.0 - (1.0 - x) / h, 0.0)
    return max(1.0 - abs(x - index * h) / h, 0.0)


def basis_nd(levels, indices, x, mode: str = ZERO_BOUNDARY) -> float:
    """Tensor-product basis function of a node evaluated at ``x``."""
    levels = tuple(int(v) for v in levels)
    indices = tuple(int(v) for v in indices)
    x = np.asarray(x, dtype=float).ravel()
    if not (len(levels) == len(indices) == x.size):
        raise SparseGridError(
            f"dimension mismatch: levels {len(levels)}, indices {len(indices)}, x {x.size}"
        )
    value = 1.0
    for lv, ix, xj in zip(levels, indices, x):
        value *= basis_1d(lv, ix, float(xj), mode)
        if value == 0.0:
            return 0.0
    return value


def basis_integral_1d(level: int, index: int, mode: str = ZERO_BOUNDARY) -> float:
    """Integral over [0, 1] of a 1-d basis function."""
    _check_pair(level, index)
    h = 2.0 ** -level
    if mode == MODIFIED_LINEAR:
        if level == 1:
            return 1.0
        if index == 1 or index == (1 << level) - 1:
            return 2.0 * h
    return h


def node_coordinates(levels: np.ndarray, indices: np.ndarray) -> np.ndarray:
    return indices * np.exp2(-levels.astype(np.float64))


def subspace_count(n: int, level_sum_excess: int) -> int:
    """Number of nodes with ``|l|_1 = n + s`` in ``n`` dimensions."""
    s = level_sum_excess
    return (1 << s) * math.comb(n - 1 + s, n - 1)


def regular_count(n: int, level: int) -> int:
    """Node count of the non-adaptive sparse grid of dimension ``n``."""
    if n == 0:
        return 1
    return sum(subspace_count(n, s) for s in range(level))


def level_vectors(n: int, level: int):
    """All level vectors with ``|l|_1 <= level + n - 1``, ordered by level sum."""
    out = []
    for s in range(level):
        for combo in combinations_with_replacement(range(n), s):
            lv = [1] * n
            for j in combo:
                lv[j] += 1
            out.append(tuple(lv))
    return out


@dataclass(frozen=True)
class Bundle:
    """Flattened kernel input for one or more sparse-grid slots."""

    slot_dims: np.ndarray
    slot_ndim: np.ndarray
    slot_coef: np.ndarray
    slot_blocks: np.ndarray
    block_levels: np.ndarray
    block_strides: np.ndarray
    block_offset: np.ndarray
    surplus: np.ndarray
    max_level: int
    modified: bool

    def args(self):
        return (self.slot_dims, self.slot_ndim, self.slot_coef, self.slot_blocks,
                self.block_levels, self.block_strides, self.block_offset, self.surplus,
                self.max_level, self.modified)

    def evaluate(self, X, backend=None):
        X = np.ascontiguousarray(X, dtype=np.float64)
        fn = _select(backend, _kernels.eval_bundle_nb, _kernels.eval_bundle_np, _kernels.eval_bundle)
        return fn(X, *self.args())

    def evaluate_grad(self, X, wrt, backend=None):
        X = np.ascontiguousarray(X, dtype=np.float64)
        wrt = np.ascontiguousarray(wrt, dtype=np.int64)
        fn = _select(backend, _kernels.eval_bundle_grad_nb, _kernels.eval_bundle_grad_np,
                     _kernels.eval_bundle_grad)
        return fn(X, wrt, *self.args())


def _select(backend, nb_fn, np_fn, default):
    if backend is None:
        return default
    if backend == "numba":
        if nb_fn is None:
            raise RuntimeError("numba backend requested but numba is unavailable")
        return nb_fn
    if backend == "numpy":
        return np_fn
    raise ValueError(f"unknown backend {backend!r}")


def grid_blocks(levels: np.ndarray, indices: np.ndarray, surplus: np.ndarray):
    """Group nodes by level vector into dense, row-major blocks.

    Returns ``(block_levels, block_strides, block_offset, flat_surplus)`` where
    the blocks are sorted by level vector.
    """
    n = levels.shape[1]
    m = surplus.shape[1]
    groups: dict[tuple, list[int]] = {}
    for r in range(levels.shape[0]):
        groups.setdefault(tuple(levels[r]), []).append(r)
    keys = sorted(groups, key=lambda lv: (sum(lv), lv))
    B = len(keys)
    block_levels = np.zeros((B, max(n, 1)), dtype=np.int64)
    block_strides = np.zeros((B, max(n, 1)), dtype=np.int64)
    block_offset = np.zeros(B, dtype=np.int64)
    total = 0
    for b, lv in enumerate(keys):
        sizes = [1 << (v - 1) for v in lv]
        stride = 1
        for j in range(n - 1, -1, -1):
            block_strides[b, j] = stride
            stride *= sizes[j]
        block_levels[b, :n] = lv
        block_offset[b] = total
        total += stride
    flat = np.zeros((total, m))
    for b, lv in enumerate(keys):
        rows = np.asarray(groups[lv])
        pos = ((indices[rows] - 1) // 2) @ block_strides[b, :n] if n else np.zeros(len(rows), np.int64)
        flat[block_offset[b] + pos] = surplus[rows]
    return block_levels, block_strides, block_offset, flat


@dataclass
class SparseGrid:
    """A sparse-grid interpolant of an ``m``-valued function on ``[0, 1]^dim``.

    Node data are kept in parallel arrays (``levels``, ``indices``,
    ``surplus``, ``values``) plus a key -> row map for O(1) parent and child
    lookup. After :func:`build` returns, a grid is treated as immutable.
    """

    dim: int
    out_dim: int
    max_level: int
    boundary_mode: str = MODIFIED_LINEAR
    adaptivity_threshold: float = 0.0
    levels: np.ndarray = field(default=None, repr=False)
    indices: np.ndarray = field(default=None, repr=False)
    surplus: np.ndarray = field(default=None, repr=False)
    values: np.ndarray = field(default=None, repr=False)
    refined: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        _check_mode(self.boundary_mode)
        if self.levels is None:
            self.levels = np.zeros((0, self.dim), dtype=np.int64)
            self.indices = np.zeros((0, self.dim), dtype=np.int64)
            self.surplus = np.zeros((0, self.out_dim))
            self.values = np.zeros((0, self.out_dim))
            self.refined = np.zeros(0, dtype=bool)
        self._rows = {self._key(l, i): r for r, (l, i) in enumerate(zip(self.levels, self.indices))}
        self._bundle = None

    @staticmethod
    def _key(levels, indices):
        # (l, i) -> 2**(l-1) + (i-1)/2 is a bijection onto the positive integers
        return tuple(int((1 << (int(a) - 1)) + (int(b) - 1) // 2) for a, b in zip(levels, indices))

    def __len__(self):
        return self.levels.shape[0]

    @property
    def num_points(self) -> int:
        return len(self)

    def contains(self, levels, indices) -> bool:
        return self._key(levels, indices) in self._rows

    def points(self) -> np.ndarray:
        return node_coordinates(self.levels, self.indices)

    def bundle(self, coef: float = 1.0, dims=None) -> Bundle:
        """Kernel bundle with one slot; ``dims`` maps grid axes to input columns."""
        if dims is None and coef == 1.0 and self._bundle is not None:
            return self._bundle
        bl, bs, bo, flat = grid_blocks(self.levels, self.indices, self.surplus)
        n = self.dim
        K = max(n, 1)
        slot_dims = np.full((1, K), -1, dtype=np.int64)
        slot_dims[0, :n] = np.arange(n) if dims is None else np.asarray(dims)
        out = Bundle(
            slot_dims=slot_dims,
            slot_ndim=np.array([n], dtype=np.int64),
            slot_coef=np.array([coef], dtype=np.float64),
            slot_blocks=np.array([[0, bl.shape[0]]], dtype=np.int64),
            block_levels=bl, block_strides=bs, block_offset=bo, surplus=flat,
            max_level=int(max(self.levels.max(initial=1), 1)),
            modified=self.boundary_mode == MODIFIED_LINEAR,
        )
        if dims is None and coef == 1.0:
            self._bundle = out
        return out

    def interpolate(self, x, backend=None) -> np.ndarray:
        """Interpolant at one point (shape ``(dim,)``) or a batch ``(P, dim)``."""
        X = np.asarray(x, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise SparseGridError(f"expected points of dimension {self.dim}, got {X.shape[1]}")
        if np.any(X < 0.0) or np.any(X > 1.0) or not np.all(np.isfinite(X)):
            raise SparseGridError("query point outside the unit cube")
        if len(self) == 0:
            out = np.zeros((X.shape[0], self.out_dim))
        else:
            out = self.bundle().evaluate(X, backend)
        return out[0] if single else out

    def quadrature(self) -> np.ndarray:
        """Integral of the interpolant over the unit cube."""
        w = np.ones(len(self))
        for j in range(self.dim):
            w *= np.array([basis_integral_1d(int(l), int(i), self.boundary_mode)
                           for l, i in zip(self.levels[:, j], self.indices[:, j])])
        return w @ self.surplus if len(self) else np.zeros(self.out_dim)

    # -- mutation, used only while building -------------------------------

    def _append(self, levels, indices, surplus, values):
        start = len(self)
        self.levels = np.vstack([self.levels, levels])
        self.indices = np.vstack([self.indices, indices])
        self.surplus = np.vstack([self.surplus, surplus])
        self.values = np.vstack([self.values, values])
        self.refined = np.concatenate([self.refined, np.zeros(len(levels), dtype=bool)])
        for r in range(len(levels)):
            self._rows[self._key(levels[r], indices[r])] = start + r
        self._bundle = None

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "sparse_grid",
            "dim": self.dim,
            "out_dim": self.out_dim,
            "max_level": self.max_level,
            "boundary_mode": self.boundary_mode,
            "adaptivity_threshold": self.adaptivity_threshold,
            "nodes": [
                [self.levels[r].tolist(), self.indices[r].tolist(), self.surplus[r].tolist(),
                 self.values[r].tolist()]
                for r in range(len(self))
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SparseGrid":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise SparseGridError(f"unsupported schema_version {doc.get('schema_version')!r}")
        dim, m = int(doc["dim"]), int(doc["out_dim"])
        nodes = doc["nodes"]
        g = cls(dim=dim, out_dim=m, max_level=int(doc["max_level"]),
                boundary_mode=doc["boundary_mode"],
                adaptivity_threshold=float(doc.get("adaptivity_threshold", 0.0)))
        if nodes:
            g._append(
                np.array([n[0] for n in nodes], dtype=np.int64).reshape(-1, dim),
                np.array([n[1] for n in nodes], dtype=np.int64).reshape(-1, dim),
                np.array([n[2] for n in nodes], dtype=np.float64).reshape(-1, m),
                np.array([n[3] for n in nodes], dtype=np.float64).reshape(-1, m),
            )
        return g

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "SparseGrid":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _children(levels, indices, max_sum):
    n = len(levels)
    if sum(levels) + 1 > max_sum:
        return
    for j in range(n):
        lv = list(levels)
        lv[j] += 1
        for ix_j in (2 * indices[j] - 1, 2 * indices[j] + 1):
            ix = list(indices)
            ix[j] = ix_j
            yield tuple(lv), tuple(ix)


def _parents(levels, indices):
    for j in range(len(levels)):
        if levels[j] > 1:
            lv = list(levels)
            ix = list(indices)
            lv[j] -= 1
            # the unique odd index at level l-1 whose support contains x
            half = (indices[j] + 1) // 2
            ix[j] = half if half % 2 == 1 else (indices[j] - 1) // 2
            yield tuple(lv), tuple(ix)


def _evaluate_batch(f: Evaluator, X: np.ndarray, workers: int) -> np.ndarray:
    if workers <= 1 or X.shape[0] < 2 * workers:
        return np.asarray(f(X), dtype=np.float64)
    chunks = np.array_split(np.arange(X.shape[0]), workers)
    parts = parallel_map([X[c] for c in chunks], workers, f)
    return np.vstack([np.asarray(p, dtype=np.float64) for p in parts])


def build(f: Evaluator, dim: int, max_level: int, adaptivity_threshold: float = 0.0,
          boundary_mode: str = MODIFIED_LINEAR, workers: int = 1,
          out_dim: int | None = None) -> SparseGrid:
    """Build a (possibly adaptive) sparse-grid interpolant of ``f``.

    Parameters
    ----------
    f : callable
        Maps a ``(P, dim)`` array of points in the unit cube to a ``(P, m)``
        array of function values.
    dim, max_level : int
        Dimension and maximum refinement level; nodes satisfy
        ``|l|_1 <= max_level + dim - 1``.
    adaptivity_threshold : float
        A node is refined only if the infinity norm of its surplus exceeds this
        value. ``0`` builds the regular grid.
    boundary_mode : str
        ``"modified_linear"`` or ``"zero_boundary"``.
    workers : int
        Function evaluations of one refinement level are split into this many
        chunks and run concurrently.
    """
    if max_level < 1:
        raise SparseGridError("max_level must be >= 1")
    if adaptivity_threshold < 0:
        raise SparseGridError("adaptivity_threshold must be >= 0")
    _check_mode(boundary_mode)
    if dim < 1:
        raise SparseGridError("dim must be >= 1")
    max_sum = max_level + dim - 1
    adaptive = adaptivity_threshold > 0.0

    root = ((1,) * dim, (1,) * dim)
    grid = None
    frontier = [root]
    while frontier:
        # ancestor closure: force-insert missing parents before any surplus is computed
        pending = {}
        stack = list(frontier)
        while stack:
            lv, ix = stack.pop()
            key = SparseGrid._key(lv, ix)
            if key in pending or (grid is not None and key in grid._rows):
                continue
            pending[key] = (lv, ix)
            stack.extend(_parents(lv, ix))
        new = sorted(pending.values(), key=lambda node: (sum(node[0]), node[0], node[1]))
        levels = np.array([n[0] for n in new], dtype=np.int64).reshape(-1, dim)
        indices = np.array([n[1] for n in new], dtype=np.int64).reshape(-1, dim)
        X = node_coordinates(levels, indices)
        F = _evaluate_batch(f, X, workers)
        if F.ndim == 1:
            F = F[:, None]
        if F.shape[0] != X.shape[0]:
            raise GridBuildError(f"evaluator returned {F.shape[0]} rows for {X.shape[0]} points")
        bad = ~np.all(np.isfinite(F), axis=1)
        if np.any(bad):
            p = X[np.argmax(bad)]
            raise GridBuildError(f"evaluator returned a non-finite value at grid point {p.tolist()}",
                                 point=p)
        if grid is None:
            m = F.shape[1] if out_dim is None else out_dim
            grid = SparseGrid(dim=dim, out_dim=m, max_level=max_level, boundary_mode=boundary_mode,
                              adaptivity_threshold=adaptivity_threshold)
        sums = levels.sum(axis=1)
        first_new = len(grid)
        for s in np.unique(sums):
            sel = np.flatnonzero(sums == s)
            if len(grid):
                base = grid.bundle().evaluate(X[sel])
            else:
                base = np.zeros((len(sel), grid.out_dim))
            grid._append(levels[sel], indices[sel], F[sel] - base, F[sel])

        frontier = []
        seen = set()
        for r in range(first_new, len(grid)):
            if adaptive and not np.max(np.abs(grid.surplus[r])) > adaptivity_threshold:
                continue
            lv = tuple(int(v) for v in grid.levels[r])
            ix = tuple(int(v) for v in grid.indices[r])
            kids = [c for c in _children(lv, ix, max_sum)]
            if kids:
                grid.refined[r] = True
            for c in kids:
                key = SparseGrid._key(*c)
                if key not in grid._rows and key not in seen:
                    seen.add(key)
                    frontier.append(c)
    return grid


def enumerate_regular(n: int, level: int):
    """Brute-force list of ``(levels, indices)`` of the regular sparse grid."""
    out = []
    for lv in product(range(1, level + 1), repeat=n):
        if sum(lv) > level + n - 1:
            continue
        for ix in product(*[range(1, 1 << l, 2) for l in lv]):
            out.append((lv, ix))
    return out
