"""numba kernels: CART growth on presorted columns, bootstrap, batch traversal.

Node arrays (one set per tree, preorder, root at 0, left child grown first):

    kind     uint8    0 leaf, 1 internal
    feature  int64    split column (0 for leaves)
    value    float64  threshold for internal nodes, mean target for leaves
    left     int64    left child id; for leaves the bootstrap sample count
    right    int64    right child id; 0 for leaves

``Xt`` is the training matrix transposed (features x rows, C-contiguous) so a
column scan stays in cache. Rows are addressed by their training index. ``order[f]`` lists
the rows with non-zero weight sorted by ``(Xt[f, row], row)``; ``order[p]`` lists
the same rows in index order. Partitioning is stable, so every node segment
keeps both orderings, which is what makes leaf means independent of which
feature produced the node.
"""

from __future__ import annotations

from fractions import Fraction

import numba
import numpy as np

from ..rng import uniform_index

LEAF = 0
INTERNAL = 1

# Candidates whose scanned score lies within this fraction of the node's
# total sum of squares of the best are compared again in exact arithmetic
# before the feature/threshold tie rule is applied.
NEAR_TIE_RTOL = 1e-12


def exact_tie_break(Xt, y, w, seg, feats, thrs) -> int:
    """Index of the candidate with the largest exact between-child sum of squares.

    Weights are integral (bootstrap counts) and every double is a dyadic
    rational, so scaling ``y`` by the largest denominator makes all sums
    integers. Ties go to the lowest feature, then the lowest threshold.
    """
    ratios = [v.as_integer_ratio() for v in y[seg].tolist()]
    den = max(d for _, d in ratios)
    Y = np.array([a * (den // d) for a, d in ratios], dtype=object)
    W = np.array([int(v) for v in w[seg].tolist()], dtype=object)
    WY = W * Y
    w_tot = int(W.sum())
    s_tot = WY.sum()
    best_key = None
    best = -1
    seen = {}
    for c in range(len(feats)):
        mask = Xt[feats[c], seg] <= thrs[c]
        sig = mask.tobytes()
        if sig not in seen:
            wl = int(W[mask].sum())
            sl = WY[mask].sum() if wl else 0
            wr = w_tot - wl
            sr = s_tot - sl
            seen[sig] = Fraction(sl * sl, wl) + Fraction(sr * sr, wr)
        key = (-seen[sig], int(feats[c]), float(thrs[c]))
        if best_key is None or key < best_key:
            best_key, best = key, c
    return best


@numba.njit(cache=True, nogil=True)
def presort(Xt):
    p, n = Xt.shape
    order = np.empty((p + 1, n), dtype=np.int32)
    for f in range(p):
        order[f] = np.argsort(Xt[f], kind="mergesort")
    order[p] = np.arange(n)
    return order


@numba.njit(cache=True, nogil=True)
def bootstrap_counts(state, n):
    counts = np.zeros(n, dtype=np.float64)
    for _ in range(n):
        counts[uniform_index(state, n)] += 1.0
    return counts


@numba.njit(cache=True, nogil=True)
def restrict_order(order, w):
    """Drop zero-weight rows from every ordering, preserving order."""
    q, n = order.shape
    m = 0
    for i in range(n):
        if w[i] > 0.0:
            m += 1
    out = np.empty((q, m), dtype=np.int32)
    for f in range(q):
        j = 0
        for i in range(n):
            r = order[f, i]
            if w[r] > 0.0:
                out[f, j] = r
                j += 1
    return out


@numba.njit(cache=True, nogil=True)
def _better(score, f, thr, bscore, bf, bthr):
    if score < bscore:
        return True
    if score == bscore:
        if f < bf:
            return True
        if f == bf and thr < bthr:
            return True
    return False


@numba.njit(cache=True)
def grow(Xt, y, w, order, mtry, min_split, min_leaf, max_depth, state):
    """Grow one tree; ``max_depth < 0`` means unlimited.

    Returns ``(kind, feature, value, left, right)`` trimmed to the node count.
    """
    p, n = Xt.shape
    q, m = order.shape
    order = order.copy()
    cap = 2 * m + 1
    kind = np.zeros(cap, dtype=np.uint8)
    feature = np.zeros(cap, dtype=np.int64)
    value = np.zeros(cap, dtype=np.float64)
    left = np.zeros(cap, dtype=np.int64)
    right = np.zeros(cap, dtype=np.int64)

    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    st_parent = np.empty(cap, dtype=np.int64)
    st_isleft = np.empty(cap, dtype=np.uint8)

    pre_w = np.empty(m, dtype=np.float64)
    pre_m2 = np.empty(m, dtype=np.float64)
    xs = np.empty(m, dtype=np.float64)
    c_score = np.empty(mtry * m + 1, dtype=np.float64)
    c_feat = np.empty(mtry * m + 1, dtype=np.int64)
    c_thr = np.empty(mtry * m + 1, dtype=np.float64)
    perm = np.empty(p, dtype=np.int64)
    chosen = np.empty(mtry, dtype=np.int64)
    goes_left = np.zeros(n, dtype=np.int64)
    tmp = np.empty(m, dtype=np.int32)

    sp = 0
    st_start[0] = 0
    st_end[0] = m
    st_depth[0] = 0
    st_parent[0] = -1
    st_isleft[0] = 0
    sp = 1
    n_nodes = 0

    while sp > 0:
        sp -= 1
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        parent = st_parent[sp]
        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if st_isleft[sp] == 1:
                left[parent] = node
            else:
                right[parent] = node

        # node totals in index order
        W = 0.0
        mean = 0.0
        m2 = 0.0
        s = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(start, end):
            r = order[p, i]
            wi = w[r]
            yi = y[r]
            W += wi
            s += wi * yi
            d = yi - mean
            mean += d * (wi / W)
            m2 += wi * d * (yi - mean)
            if yi < ymin:
                ymin = yi
            if yi > ymax:
                ymax = yi

        is_leaf = (
            W < min_split
            or (max_depth >= 0 and depth >= max_depth)
            or ymin == ymax
            or W < 2.0 * min_leaf
        )

        best_f = -1
        best_thr = 0.0
        if not is_leaf:
            # partial Fisher-Yates over all columns, take the first mtry
            for j in range(p):
                perm[j] = j
            for j in range(mtry):
                k = j + uniform_index(state, p - j)
                t = perm[j]
                perm[j] = perm[k]
                perm[k] = t
                chosen[j] = perm[j]
            chosen.sort()

            nc = 0
            nk = 0
            tol = NEAR_TIE_RTOL * m2
            best_score = np.inf
            for ci in range(mtry):
                f = chosen[ci]
                if Xt[f, order[f, start]] == Xt[f, order[f, end - 1]]:
                    continue
                cw = 0.0
                cmean = 0.0
                cm2 = 0.0
                for i in range(start, end):
                    r = order[f, i]
                    wi = w[r]
                    yi = y[r]
                    cw += wi
                    d = yi - cmean
                    cmean += d * (wi / cw)
                    cm2 += wi * d * (yi - cmean)
                    pre_w[i - start] = cw
                    pre_m2[i - start] = cm2
                    xs[i - start] = Xt[f, r]
                rw = 0.0
                rmean = 0.0
                rm2 = 0.0
                for i in range(end - 1, start, -1):
                    r = order[f, i]
                    wi = w[r]
                    yi = y[r]
                    rw += wi
                    d = yi - rmean
                    rmean += d * (wi / rw)
                    rm2 += wi * d * (yi - rmean)
                    xa = xs[i - 1 - start]
                    xb = xs[i - start]
                    if xa < xb and pre_w[i - 1 - start] >= min_leaf and rw >= min_leaf:
                        thr = 0.5 * (xa + xb)
                        if thr >= xb:
                            thr = xa
                        score = pre_m2[i - 1 - start] + rm2
                        nc += 1
                        # keep only scores that can still be near-ties of the final best
                        if score <= best_score + tol:
                            c_score[nk] = score
                            c_feat[nk] = f
                            c_thr[nk] = thr
                            nk += 1
                        if _better(score, f, thr, best_score, best_f, best_thr):
                            best_score = score
                            best_f = f
                            best_thr = thr

            if nc == 0:
                is_leaf = True
            else:
                n_near = 0
                for c in range(nk):
                    if c_score[c] <= best_score + tol:
                        n_near += 1
                if n_near > 1:
                    seg = order[p, start:end].copy()
                    nf = np.empty(n_near, dtype=np.int64)
                    nt = np.empty(n_near, dtype=np.float64)
                    j = 0
                    for c in range(nk):
                        if c_score[c] <= best_score + tol:
                            nf[j] = c_feat[c]
                            nt[j] = c_thr[c]
                            j += 1
                    # candidates splitting the node into the same two row sets (in
                    # either orientation) tie exactly; only distinct ones need arithmetic
                    same = True
                    f0 = nf[0]
                    t0 = nt[0]
                    for c in range(1, n_near):
                        fc = nf[c]
                        tc = nt[c]
                        flip = (Xt[fc, seg[0]] <= tc) != (Xt[f0, seg[0]] <= t0)
                        for r in seg:
                            if ((Xt[fc, r] <= tc) != (Xt[f0, r] <= t0)) != flip:
                                same = False
                                break
                        if not same:
                            break
                    if same:
                        pick = 0
                        for c in range(1, n_near):
                            if nf[c] < nf[pick] or (nf[c] == nf[pick] and nt[c] < nt[pick]):
                                pick = c
                    else:
                        with numba.objmode(pick="int64"):
                            pick = exact_tie_break(Xt, y, w, seg, nf, nt)
                    best_f = nf[pick]
                    best_thr = nt[pick]

        if is_leaf:
            kind[node] = LEAF
            feature[node] = 0
            # a rounded mean can land one ulp outside the node's targets
            value[node] = min(max(s / W, ymin), ymax)
            left[node] = np.int64(W)
            right[node] = 0
            continue

        kind[node] = INTERNAL
        feature[node] = best_f
        value[node] = best_thr

        nl = 0
        for i in range(start, end):
            r = order[p, i]
            if Xt[best_f, r] <= best_thr:
                goes_left[r] = 1
                nl += 1
            else:
                goes_left[r] = 0
        # branchless stable partition; the branch would be ~50% mispredicted
        for g in range(q):
            a = start
            b = 0
            for i in range(start, end):
                r = order[g, i]
                gl = goes_left[r]
                order[g, a] = r
                tmp[b] = r
                a += gl
                b += 1 - gl
            for i in range(b):
                order[g, a + i] = tmp[i]

        mid = start + nl
        # push right first so the left subtree is grown (and numbered) first
        st_start[sp] = mid
        st_end[sp] = end
        st_depth[sp] = depth + 1
        st_parent[sp] = node
        st_isleft[sp] = 0
        sp += 1
        st_start[sp] = start
        st_end[sp] = mid
        st_depth[sp] = depth + 1
        st_parent[sp] = node
        st_isleft[sp] = 1
        sp += 1

    return (
        kind[:n_nodes].copy(),
        feature[:n_nodes].copy(),
        value[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
    )


@numba.njit(cache=True, nogil=True)
def predict_batch(kind, feature, value, left, right, offsets, X):
    """Mean over trees of the reached leaf value, trees summed in order.

    The mean is clamped to the range of the reached leaf values so rounding
    never takes it outside them.
    """
    n = X.shape[0]
    t = offsets.shape[0] - 1
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        acc = 0.0
        lo = np.inf
        hi = -np.inf
        for k in range(t):
            base = offsets[k]
            j = base
            while kind[j] == 1:
                if X[i, feature[j]] <= value[j]:
                    j = base + left[j]
                else:
                    j = base + right[j]
            v = value[j]
            acc += v
            lo = min(lo, v)
            hi = max(hi, v)
        out[i] = min(max(acc / t, lo), hi)
    return out


@numba.njit(cache=True, nogil=True)
def fnv1a64(data):
    h = np.uint64(0xCBF29CE484222325)
    prime = np.uint64(0x100000001B3)
    for b in data:
        h = (h ^ np.uint64(b)) * prime
    return h
