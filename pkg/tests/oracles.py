"""Independent reference implementations used as test oracles."""

import numpy as np


def ridge_oracle(X, y, lam):
    """Normal equations on [1, X]; a penalty λ on standardized weights is λ·sd² in raw units."""
    A = np.hstack([np.ones((len(X), 1)), X])
    P = np.diag(np.concatenate([[0.0], lam * X.var(axis=0)]))
    sol = np.linalg.solve(A.T @ A + P, A.T @ y)
    return sol[1:], sol[0]


def greedy_tree(X, y, rows, depth, min_split, max_depth):
    """Brute-force CART regression tree: every midpoint of every feature, first best wins."""
    m = len(rows)
    ys = [float(y[r]) for r in rows]
    s = 0.0
    for v in ys:
        s += v
    if m >= min_split and (max_depth is None or depth < max_depth) and max(ys) > min(ys):
        mean = s / m
        ss = 0.0
        for v in ys:
            ss += (v - mean) ** 2
        eps = 1e-12 * ss / m

        def sse(vals):
            mu = sum(vals) / len(vals)
            return sum((v - mu) ** 2 for v in vals)

        best, best_f, best_t = -np.inf, -1, 0.0
        parent = sse(ys)
        for f in range(X.shape[1]):
            order = sorted(rows, key=lambda r: X[r, f])
            for i in range(m - 1):
                a, b = X[order[i], f], X[order[i + 1], f]
                if not a < b:
                    continue
                left = [float(y[r]) for r in order[: i + 1]]
                right = [float(y[r]) for r in order[i + 1:]]
                gain = (parent - sse(left) - sse(right)) / m
                if gain > best + eps:
                    best, best_f = gain, f
                    best_t = (a + b) / 2
                    if best_t >= b:
                        best_t = a
        if best_f >= 0:
            lrows = [r for r in rows if X[r, best_f] <= best_t]
            rrows = [r for r in rows if X[r, best_f] > best_t]
            return (best_f, float(best_t),
                    greedy_tree(X, y, lrows, depth + 1, min_split, max_depth),
                    greedy_tree(X, y, rrows, depth + 1, min_split, max_depth))
    return float(min(max(s / m, min(ys)), max(ys)))


def random_dataset(rng, i):
    n = int(rng.integers(5, 51))
    p = int(rng.integers(1, 6))
    if i % 3 == 0:
        X = rng.integers(0, 4, size=(n, p)).astype(float)  # many ties
    else:
        X = rng.normal(size=(n, p))
    if i % 4 == 1 and p > 1:
        X[:, 1] = X[:, 0]  # duplicated column: equal gains across features
    if i % 5 == 2:
        y = rng.integers(0, 3, size=n).astype(float)
    else:
        y = np.sin(X[:, 0]) + rng.normal(0, 0.3, size=n)
    return X, y
