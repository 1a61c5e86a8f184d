"""Independent reference implementations used by the tests.

Nothing here imports the package's fitting code. The split search works in
exact rational arithmetic over every candidate threshold, and the tree is
traversed recursively rather than through the flat node arrays.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

MASK = (1 << 64) - 1


class PySplitMix:
    """Pure-Python SplitMix64 with the package's draw conventions."""

    def __init__(self, seed: int) -> None:
        self.state = seed & MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def index(self, n: int) -> int:
        threshold = ((1 << 64) - n) % n
        while True:
            x = self.next_u64()
            if x >= threshold:
                return x % n

    def unit(self) -> float:
        return (self.next_u64() >> 11) / 9007199254740992.0


def py_derive_seed(seed: int, *indices: int) -> int:
    s = seed & MASK
    for i in indices:
        s = (s + (i + 1) * 0x9E3779B97F4A7C15) & MASK
        z = s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        s = z ^ (z >> 31)
    return s


def bootstrap_weights(rng: PySplitMix, n: int) -> list[int]:
    w = [0] * n
    for _ in range(n):
        w[rng.index(n)] += 1
    return w


def exact_sse(ys, ws) -> Fraction:
    W = sum(Fraction(w) for w in ws)
    S = sum(Fraction(w) * Fraction(y) for y, w in zip(ys, ws))
    Q = sum(Fraction(w) * Fraction(y) ** 2 for y, w in zip(ys, ws))
    return Q - S * S / W


def midpoint(a: float, b: float) -> float:
    t = 0.5 * (a + b)
    return a if t >= b else t


def candidate_splits(X, y, w, rows, features, min_leaf):
    """Every valid (exact SSE, feature, threshold) for the node holding ``rows``."""
    out = []
    for f in features:
        vals = sorted({float(X[r, f]) for r in rows})
        for a, b in zip(vals, vals[1:]):
            thr = midpoint(a, b)
            left = [r for r in rows if X[r, f] <= thr]
            right = [r for r in rows if X[r, f] > thr]
            wl = sum(w[r] for r in left)
            wr = sum(w[r] for r in right)
            if wl < min_leaf or wr < min_leaf:
                continue
            sse = exact_sse([y[r] for r in left], [w[r] for r in left]) + exact_sse(
                [y[r] for r in right], [w[r] for r in right]
            )
            out.append((sse, f, thr))
    return out


def oracle_tree(X, y, w=None, *, mtry=None, min_split=2, min_leaf=1, max_depth=None, rng=None):
    """Recursive CART reference returning nested dicts.

    Rows with zero weight are out of the tree. Feature subsets are drawn from
    ``rng`` in preorder, only at nodes that pass the stopping checks.
    """
    X = np.asarray(X, dtype=np.float64)
    y = [float(v) for v in y]
    n, p = X.shape
    w = [1] * n if w is None else [int(v) for v in w]
    mtry = p if mtry is None else mtry

    def build(rows, depth):
        W = sum(w[r] for r in rows)
        s = 0.0
        Wf = 0.0
        for r in rows:
            Wf += float(w[r])
            s += float(w[r]) * y[r]
        ys = {y[r] for r in rows}
        value = min(max(s / Wf, min(ys)), max(ys))
        leaf = {"leaf": True, "value": value, "weight": W}
        if (
            W < min_split
            or (max_depth is not None and depth >= max_depth)
            or len(ys) == 1
            or W < 2 * min_leaf
        ):
            return leaf
        # partial Fisher-Yates, first mtry positions, sorted
        perm = list(range(p))
        for j in range(mtry):
            k = j + rng.index(p - j)
            perm[j], perm[k] = perm[k], perm[j]
        feats = sorted(perm[:mtry])
        cands = candidate_splits(X, y, w, rows, feats, min_leaf)
        if not cands:
            return leaf
        sse, f, thr = min(cands)
        left = [r for r in rows if X[r, f] <= thr]
        right = [r for r in rows if X[r, f] > thr]
        return {
            "leaf": False,
            "feature": f,
            "threshold": thr,
            "sse": sse,
            "left": build(left, depth + 1),
            "right": build(right, depth + 1),
        }

    rows = [r for r in range(n) if w[r] > 0]
    return build(rows, 0)


def oracle_predict(node, x) -> float:
    if node["leaf"]:
        return node["value"]
    branch = "left" if x[node["feature"]] <= node["threshold"] else "right"
    return oracle_predict(node[branch], x)


def oracle_preorder(node, out=None):
    """Flatten to the package's preorder (kind, feature, value) layout for comparison."""
    if out is None:
        out = []
    if node["leaf"]:
        out.append((0, 0, node["value"]))
    else:
        out.append((1, node["feature"], node["threshold"]))
        oracle_preorder(node["left"], out)
        oracle_preorder(node["right"], out)
    return out


def r2_reference(y, yhat) -> float:
    y = [Fraction(float(v)) for v in y]
    yhat = [Fraction(float(v)) for v in yhat]
    mean = sum(y) / len(y)
    ss_tot = sum((a - mean) ** 2 for a in y)
    ss_res = sum((a - b) ** 2 for a, b in zip(y, yhat))
    return float(1 - ss_res / ss_tot)
