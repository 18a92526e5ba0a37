"""Extremely randomized trees for regression.

Every tree sees the full training sample. At each node up to ``k_features``
non-constant candidate features are drawn, each gets one threshold drawn
uniformly inside its range over the node's rows, and the candidate with the
largest variance reduction wins. Leaves predict the mean target of their
rows; the forest averages its trees.

Tree ``j`` draws from its own splitmix64 stream seeded from ``(seed, j)``, so
results do not depend on how many threads grow the trees.
"""

from __future__ import annotations

import io
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Mapping, Optional, Sequence

import numba as nb
import numpy as np

from rescast.errors import EmptyGrid, EmptyTraining, WidthMismatch

FOREST_FORMAT_VERSION = 1
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ExtParams:
    n_estimators: int = 300
    k_features: Optional[int] = None  # None: every feature
    min_samples_split: int = 2
    max_depth: Optional[int] = None
    seed: int = 0
    # testing aid: exhaustive midpoint search replaces random thresholds
    exhaustive: bool = False

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.k_features is not None and self.k_features < 1:
            raise ValueError("k_features must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if not 0 <= self.seed <= _MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return asdict(self)


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def tree_seed(seed: int, j: int) -> int:
    return splitmix64(splitmix64(seed) ^ splitmix64(j + 1))


# -- numba kernels ------------------------------------------------------------------

_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U11 = np.uint64(11)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@nb.njit(cache=True, nogil=True)
def _next_u64(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> _U30)) * _M1
    z = (z ^ (z >> _U27)) * _M2
    return z ^ (z >> _U31)


@nb.njit(cache=True, nogil=True)
def _uniform(state):
    return np.float64(_next_u64(state) >> _U11) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True, nogil=True)
def _randint(state, n):
    return np.int64(_uniform(state) * n)


@nb.njit(cache=True, nogil=True)
def _score(s, n, sl, nl):
    # parent variance minus size-weighted child variances, up to the 1/n factor
    sr = s - sl
    nr = n - nl
    if nl == 0 or nr == 0:
        return -np.inf
    return (sl * sl / nl + sr * sr / nr - s * s / n) / n


@nb.njit(cache=True, nogil=True)
def _random_split(X, y, idx, start, end, perm, k, state, s, lo, hi, thr, sl, nl, cand):
    n = end - start
    p = X.shape[1]
    # row-major sweeps keep memory access sequential within each row
    for f in range(p):
        lo[f] = np.inf
        hi[f] = -np.inf
    for r in range(start, end):
        row = X[idx[r]]
        for f in range(p):
            v = row[f]
            if v < lo[f]:
                lo[f] = v
            if v > hi[f]:
                hi[f] = v
    n_cand = 0
    i = 0
    while i < p and n_cand < k:
        j = i + _randint(state, p - i)
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
        f = perm[i]
        i += 1
        if hi[f] > lo[f]:
            cand[n_cand] = f
            n_cand += 1
    if n_cand == 0:
        return -1, 0.0
    for f in range(p):
        thr[f] = -np.inf
        sl[f] = 0.0
        nl[f] = 0
    for c in range(n_cand):
        f = cand[c]
        t = lo[f] + _uniform(state) * (hi[f] - lo[f])
        if t >= hi[f]:
            # range of a few ulps: the lower bound still separates lo from hi
            t = lo[f]
        thr[f] = t
    # branch-free sweep over all features; non-candidates never match -inf
    for r in range(start, end):
        row = X[idx[r]]
        yr = y[idx[r]]
        for f in range(p):
            hit = row[f] <= thr[f]
            sl[f] += yr * hit
            nl[f] += hit
    best = -np.inf
    best_f = -1
    best_t = 0.0
    for c in range(n_cand):
        f = cand[c]
        sc = _score(s, n, sl[f], nl[f])
        if sc > best:
            best = sc
            best_f = f
            best_t = thr[f]
    return best_f, best_t


@nb.njit(cache=True, nogil=True)
def _exhaustive_split(XT, y, idx, start, end, s, eps):
    n = end - start
    p = XT.shape[0]
    best_f = -1
    best_t = 0.0
    best = -np.inf
    vals = np.empty(n)
    ys = np.empty(n)
    for f in range(p):
        for r in range(n):
            vals[r] = XT[f, idx[start + r]]
        order = np.argsort(vals, kind="mergesort")
        for r in range(n):
            ys[r] = y[idx[start + order[r]]]
        sl = 0.0
        for r in range(n - 1):
            sl += ys[r]
            a = vals[order[r]]
            b = vals[order[r + 1]]
            if a < b:
                sc = _score(s, n, sl, r + 1)
                if sc > best + eps:
                    best = sc
                    best_f = f
                    best_t = (a + b) / 2
                    if best_t >= b:
                        best_t = a
    return best_f, best_t


@nb.njit(cache=True, nogil=True)
def _build_tree(X, XT, y, k, min_split, max_depth, seed, exhaustive):
    p = XT.shape[0]
    n = XT.shape[1]
    cap = 2 * n - 1
    if max_depth >= 0 and max_depth < 62:
        cap = min(cap, 2 ** (max_depth + 1) - 1)
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap)
    count = np.zeros(cap, dtype=np.int32)

    idx = np.arange(n)
    buf = np.empty(n, dtype=np.int64)
    perm = np.arange(p)
    lo = np.empty(p)
    hi = np.empty(p)
    thr = np.empty(p)
    sl = np.empty(p)
    nl = np.empty(p, dtype=np.int64)
    cand = np.empty(p, dtype=np.int64)
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed

    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    st_node = np.empty(cap, dtype=np.int64)
    top = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    st_node[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]
        node = st_node[top]
        m = end - start

        s = 0.0
        ymin = np.inf
        ymax = -np.inf
        for r in range(start, end):
            v = y[idx[r]]
            s += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v

        f = -1
        t = 0.0
        if m >= min_split and (max_depth < 0 or depth < max_depth) and ymax > ymin:
            if exhaustive:
                mean = s / m
                ss = 0.0
                for r in range(start, end):
                    d = y[idx[r]] - mean
                    ss += d * d
                f, t = _exhaustive_split(XT, y, idx, start, end, s, 1e-12 * ss / m)
            else:
                f, t = _random_split(X, y, idx, start, end, perm, k, state, s, lo, hi, thr, sl, nl, cand)

        count[node] = m
        if f < 0:
            # rows are in ascending order, so the sum order is canonical
            acc = 0.0
            for r in range(start, end):
                acc += y[idx[r]]
            mu = acc / m
            value[node] = min(max(mu, ymin), ymax)
            continue

        # stable partition (x <= t to the left) keeps each node's rows ascending
        col = XT[f]
        i = start
        nr = 0
        for r in range(start, end):
            row = idx[r]
            if col[row] <= t:
                idx[i] = row
                i += 1
            else:
                buf[nr] = row
                nr += 1
        for r in range(nr):
            idx[i + r] = buf[r]
        feature[node] = f
        threshold[node] = t
        value[node] = s / m
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        st_start[top] = i
        st_end[top] = end
        st_depth[top] = depth + 1
        st_node[top] = rc
        top += 1
        st_start[top] = start
        st_end[top] = i
        st_depth[top] = depth + 1
        st_node[top] = lc
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), count[:n_nodes].copy())


@nb.njit(cache=True, nogil=True)
def _predict(X, roots, feature, threshold, left, right, value):
    n = X.shape[0]
    n_trees = roots.shape[0]
    out = np.empty(n)
    for r in range(n):
        acc = 0.0
        lo = np.inf
        hi = -np.inf
        for j in range(n_trees):
            node = roots[j]
            while feature[node] >= 0:
                if X[r, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            v = value[node]
            acc += v
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        out[r] = min(max(acc / n_trees, lo), hi)
    return out


# -- public API ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def to_nested(self, node: int = 0):
        """``(feature, threshold, left, right)`` tuples with leaf values at the bottom."""
        if self.is_leaf(node):
            return float(self.value[node])
        return (
            int(self.feature[node]),
            float(self.threshold[node]),
            self.to_nested(int(self.left[node])),
            self.to_nested(int(self.right[node])),
        )


@dataclass(frozen=True, eq=False)
class Forest:
    trees: List[Tree]
    params: ExtParams
    n_features: int
    y_range: tuple

    def __post_init__(self):
        offsets = np.cumsum([0] + [t.n_nodes for t in self.trees])
        flat = {}
        for name in ("feature", "threshold", "left", "right", "value"):
            flat[name] = np.concatenate([getattr(t, name) for t in self.trees])
        for name in ("left", "right"):
            shift = np.concatenate([np.full(t.n_nodes, o) for t, o in zip(self.trees, offsets)])
            arr = flat[name].astype(np.int64)
            flat[name] = np.where(arr >= 0, arr + shift, -1)
        flat["feature"] = flat["feature"].astype(np.int64)
        object.__setattr__(self, "_flat", flat)
        object.__setattr__(self, "_roots", offsets[:-1].astype(np.int64))

    def predict(self, X) -> np.ndarray:
        return ext_predict(self, X)

    # -- persistence --

    def to_bytes(self) -> bytes:
        arrays = {}
        for j, t in enumerate(self.trees):
            for name in ("feature", "threshold", "left", "right", "value", "count"):
                arrays[f"t{j}_{name}"] = getattr(t, name)
        header = {
            "format": "rescast-forest",
            "version": FOREST_FORMAT_VERSION,
            "params": self.params.to_dict(),
            "n_features": self.n_features,
            "y_range": list(self.y_range),
            "n_trees": len(self.trees),
        }
        arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Forest":
        with np.load(io.BytesIO(data)) as z:
            header = json.loads(bytes(z["header"]).decode())
            if header.get("version") != FOREST_FORMAT_VERSION:
                raise ValueError(f"unsupported forest format {header.get('version')}")
            trees = [
                Tree(*(z[f"t{j}_{name}"] for name in
                       ("feature", "threshold", "left", "right", "value", "count")))
                for j in range(header["n_trees"])
            ]
        return cls(trees, ExtParams(**header["params"]), header["n_features"], tuple(header["y_range"]))


def _grow(X, XT, y, params: ExtParams, j: int) -> Tree:
    k = XT.shape[0] if params.k_features is None else min(params.k_features, XT.shape[0])
    depth = -1 if params.max_depth is None else params.max_depth
    arrays = _build_tree(X, XT, y, k, params.min_samples_split, depth,
                         np.uint64(tree_seed(params.seed, j)), params.exhaustive)
    return Tree(*arrays)


def ext_fit(X, y, params: ExtParams = ExtParams(), n_jobs: int = 1) -> Forest:
    X = np.ascontiguousarray(getattr(X, "X", X), dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyTraining("no training rows")
    if len(y) != len(X):
        raise ValueError("X and y lengths differ")
    if np.isnan(X).any() or np.isnan(y).any():
        raise ValueError("training data contains missing values")
    XT = np.ascontiguousarray(X.T)
    jobs = range(params.n_estimators)
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            trees = list(pool.map(lambda j: _grow(X, XT, y, params, j), jobs))
    else:
        trees = [_grow(X, XT, y, params, j) for j in jobs]
    return Forest(trees, params, X.shape[1], (float(y.min()), float(y.max())))


def ext_predict(f: Forest, X) -> np.ndarray:
    X = np.ascontiguousarray(getattr(X, "X", X), dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != f.n_features:
        raise WidthMismatch(f"expected {f.n_features} columns, got {X.shape[-1]}")
    fl = f._flat
    return _predict(X, f._roots, fl["feature"], fl["threshold"], fl["left"], fl["right"], fl["value"])


@dataclass(frozen=True)
class GridResult:
    best: ExtParams
    table: List[dict]

    def to_json(self) -> str:
        return json.dumps({"best": self.best.to_dict(), "table": self.table}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GridResult":
        d = json.loads(text)
        return cls(ExtParams(**d["best"]), d["table"])


def grid_search(grid: Mapping[str, Sequence], X, y, val_fraction: float = 0.2,
                base: ExtParams = ExtParams(), n_jobs: int = 1) -> GridResult:
    """Exhaustive search over the Cartesian product of ``grid`` on a chronological holdout.

    Ties keep the earliest combination in grid order.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise EmptyGrid("grid must have at least one value per axis")
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must lie in (0, 1)")
    X = np.asarray(getattr(X, "X", X), dtype=float)
    y = np.asarray(y, dtype=float)
    n_val = max(1, int(round(len(X) * val_fraction)))
    n_fit = len(X) - n_val
    if n_fit < 2:
        raise EmptyTraining("too few rows for a holdout split")
    keys = list(grid)
    table = []
    best, best_mse = None, np.inf
    for combo in itertools.product(*(grid[k] for k in keys)):
        params = replace(base, **dict(zip(keys, combo)))
        forest = ext_fit(X[:n_fit], y[:n_fit], params, n_jobs=n_jobs)
        mse = float(np.mean((ext_predict(forest, X[n_fit:]) - y[n_fit:]) ** 2))
        table.append({"params": dict(zip(keys, combo)), "val_mse": mse})
        if mse < best_mse:
            best, best_mse = params, mse
    return GridResult(best, table)


DEFAULT_GRID: Dict[str, list] = {
    "n_estimators": [100, 300, 500],
    "max_depth": [None, 10, 20],
    "min_samples_split": [2, 5],
}
