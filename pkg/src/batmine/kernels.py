"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time: set ``BATMINE_NO_NUMBA=1`` to force
the numpy path (or if numba is not importable it is used automatically).
``set_backend`` exists for benchmarks and tests that want to compare both.

Both backends implement the same arithmetic, candidate enumeration order and
tie-breaking rule, so they produce the same splits and the same cluster
labels on the same input.
"""

from __future__ import annotations

import os

import numpy as np

_GAIN_REL_EPS = 1e-12

try:
    from numba import njit

    _NUMBA_OK = True
except ImportError:  # pragma: no cover - numba is an install-time dependency
    _NUMBA_OK = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


_BACKEND = "numpy"
if _NUMBA_OK and os.environ.get("BATMINE_NO_NUMBA", "").lower() not in ("1", "true", "yes"):
    _BACKEND = "numba"


def backend() -> str:
    """Name of the active kernel backend ("numba" or "numpy")."""
    return _BACKEND


def set_backend(name: str) -> None:
    """Switch backend at runtime. Only "numpy" and "numba" are accepted."""
    global _BACKEND
    if name not in ("numpy", "numba"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _NUMBA_OK:
        raise ValueError("numba is not available in this environment")
    _BACKEND = name


# ---------------------------------------------------------------------------
# CART best-split search
#
# Candidates are midpoints between consecutive distinct sorted feature values.
# Selection rule (shared with the brute-force oracle used in tests): take the
# maximum gain over all candidates, then the first candidate in (feature
# ascending, threshold ascending) order whose gain is >= max - eps, with
# eps = 1e-12 * max(1, |max gain|). Gains at or below the minimum-gain floor
# mean "no split".
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nb_split_regression(X, y, min_leaf):  # pragma: no cover - exercised via dispatcher
    n, d = X.shape
    best_gain = 0.0
    # pass 1: maximum gain over all candidates
    for f in range(d):
        order = np.argsort(X[:, f])
        s = 0.0
        s2 = 0.0
        tot = 0.0
        tot2 = 0.0
        for j in range(n):
            v = y[order[j]]
            tot += v
            tot2 += v * v
        sse_parent = tot2 - tot * tot / n
        min_gain = _GAIN_REL_EPS * max(1.0, sse_parent)
        for i in range(n - 1):
            v = y[order[i]]
            s += v
            s2 += v * v
            if X[order[i], f] == X[order[i + 1], f]:
                continue
            nl = i + 1
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            sse_l = s2 - s * s / nl
            sse_r = (tot2 - s2) - (tot - s) * (tot - s) / nr
            gain = sse_parent - sse_l - sse_r
            if gain > best_gain and gain > min_gain:
                best_gain = gain
    if best_gain <= 0.0:
        return -1, 0.0, 0.0
    # pass 2: first candidate within eps of the maximum
    eps = _GAIN_REL_EPS * max(1.0, abs(best_gain))
    for f in range(d):
        order = np.argsort(X[:, f])
        s = 0.0
        s2 = 0.0
        tot = 0.0
        tot2 = 0.0
        for j in range(n):
            v = y[order[j]]
            tot += v
            tot2 += v * v
        sse_parent = tot2 - tot * tot / n
        min_gain = _GAIN_REL_EPS * max(1.0, sse_parent)
        for i in range(n - 1):
            v = y[order[i]]
            s += v
            s2 += v * v
            if X[order[i], f] == X[order[i + 1], f]:
                continue
            nl = i + 1
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            sse_l = s2 - s * s / nl
            sse_r = (tot2 - s2) - (tot - s) * (tot - s) / nr
            gain = sse_parent - sse_l - sse_r
            if gain >= best_gain - eps and gain > min_gain:
                thr = (X[order[i], f] + X[order[i + 1], f]) * 0.5
                return f, thr, gain
    return -1, 0.0, 0.0


@njit(cache=True)
def _nb_split_gini(X, y, min_leaf):  # pragma: no cover - exercised via dispatcher
    n, d = X.shape
    n1_tot = 0.0
    for j in range(n):
        n1_tot += y[j]
    p1 = n1_tot / n
    p0 = 1.0 - p1
    gini_parent = 1.0 - p0 * p0 - p1 * p1
    min_gain = _GAIN_REL_EPS
    best_gain = 0.0
    for f in range(d):
        order = np.argsort(X[:, f])
        c1 = 0.0
        for i in range(n - 1):
            c1 += y[order[i]]
            if X[order[i], f] == X[order[i + 1], f]:
                continue
            nl = i + 1
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            p1l = c1 / nl
            p0l = 1.0 - p1l
            p1r = (n1_tot - c1) / nr
            p0r = 1.0 - p1r
            g_l = 1.0 - p0l * p0l - p1l * p1l
            g_r = 1.0 - p0r * p0r - p1r * p1r
            gain = gini_parent - (nl / n) * g_l - (nr / n) * g_r
            if gain > best_gain and gain > min_gain:
                best_gain = gain
    if best_gain <= 0.0:
        return -1, 0.0, 0.0
    eps = _GAIN_REL_EPS * max(1.0, abs(best_gain))
    for f in range(d):
        order = np.argsort(X[:, f])
        c1 = 0.0
        for i in range(n - 1):
            c1 += y[order[i]]
            if X[order[i], f] == X[order[i + 1], f]:
                continue
            nl = i + 1
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            p1l = c1 / nl
            p0l = 1.0 - p1l
            p1r = (n1_tot - c1) / nr
            p0r = 1.0 - p1r
            g_l = 1.0 - p0l * p0l - p1l * p1l
            g_r = 1.0 - p0r * p0r - p1r * p1r
            gain = gini_parent - (nl / n) * g_l - (nr / n) * g_r
            if gain >= best_gain - eps and gain > min_gain:
                thr = (X[order[i], f] + X[order[i + 1], f]) * 0.5
                return f, thr, gain
    return -1, 0.0, 0.0


def _np_candidate_gains_regression(x, y):
    order = np.argsort(x)
    xs = x[order]
    ys = y[order]
    n = xs.shape[0]
    cs = np.cumsum(ys)
    cs2 = np.cumsum(ys * ys)
    tot = cs[-1]
    tot2 = cs2[-1]
    sse_parent = tot2 - tot * tot / n
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    s = cs[:-1]
    s2 = cs2[:-1]
    sse_l = s2 - s * s / nl
    sse_r = (tot2 - s2) - (tot - s) * (tot - s) / nr
    gains = sse_parent - sse_l - sse_r
    return xs, gains, sse_parent


def _np_split_regression(X, y, min_leaf):
    n, d = X.shape
    per_feature = []
    best_gain = 0.0
    for f in range(d):
        xs, gains, sse_parent = _np_candidate_gains_regression(X[:, f], y)
        nl = np.arange(1, n)
        valid = (xs[:-1] != xs[1:]) & (nl >= min_leaf) & ((n - nl) >= min_leaf)
        min_gain = _GAIN_REL_EPS * max(1.0, sse_parent)
        ok = valid & (gains > min_gain)
        per_feature.append((xs, gains, ok))
        if ok.any():
            best_gain = max(best_gain, float(gains[ok].max()))
    if best_gain <= 0.0:
        return -1, 0.0, 0.0
    eps = _GAIN_REL_EPS * max(1.0, abs(best_gain))
    for f in range(d):
        xs, gains, ok = per_feature[f]
        hit = np.nonzero(ok & (gains >= best_gain - eps))[0]
        if hit.size:
            i = int(hit[0])
            thr = (xs[i] + xs[i + 1]) * 0.5
            return f, float(thr), float(gains[i])
    return -1, 0.0, 0.0


def _np_split_gini(X, y, min_leaf):
    n, d = X.shape
    n1_tot = float(np.cumsum(y)[-1])
    p1 = n1_tot / n
    p0 = 1.0 - p1
    gini_parent = 1.0 - p0 * p0 - p1 * p1
    per_feature = []
    best_gain = 0.0
    for f in range(d):
        order = np.argsort(X[:, f])
        xs = X[order, f]
        ys = y[order]
        c1 = np.cumsum(ys)[:-1]
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        p1l = c1 / nl
        p0l = 1.0 - p1l
        p1r = (n1_tot - c1) / nr
        p0r = 1.0 - p1r
        g_l = 1.0 - p0l * p0l - p1l * p1l
        g_r = 1.0 - p0r * p0r - p1r * p1r
        gains = gini_parent - (nl / n) * g_l - (nr / n) * g_r
        valid = (xs[:-1] != xs[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
        ok = valid & (gains > _GAIN_REL_EPS)
        per_feature.append((xs, gains, ok))
        if ok.any():
            best_gain = max(best_gain, float(gains[ok].max()))
    if best_gain <= 0.0:
        return -1, 0.0, 0.0
    eps = _GAIN_REL_EPS * max(1.0, abs(best_gain))
    for f in range(d):
        xs, gains, ok = per_feature[f]
        hit = np.nonzero(ok & (gains >= best_gain - eps))[0]
        if hit.size:
            i = int(hit[0])
            thr = (xs[i] + xs[i + 1]) * 0.5
            return f, float(thr), float(gains[i])
    return -1, 0.0, 0.0


def best_split_regression(X: np.ndarray, y: np.ndarray, min_leaf: int) -> tuple[int, float, float]:
    """Best variance-reduction split for a node. Returns (feature, threshold, gain);
    feature is -1 when no positive-gain split exists."""
    if _BACKEND == "numba":
        f, t, g = _nb_split_regression(
            np.ascontiguousarray(X, dtype=np.float64),
            np.ascontiguousarray(y, dtype=np.float64),
            min_leaf,
        )
        return int(f), float(t), float(g)
    return _np_split_regression(np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64), min_leaf)


def best_split_gini(X: np.ndarray, y: np.ndarray, min_leaf: int) -> tuple[int, float, float]:
    """Best Gini-decrease split for a binary-class node. Same contract as
    :func:`best_split_regression`; y must be 0/1 floats."""
    if _BACKEND == "numba":
        f, t, g = _nb_split_gini(
            np.ascontiguousarray(X, dtype=np.float64),
            np.ascontiguousarray(y, dtype=np.float64),
            min_leaf,
        )
        return int(f), float(t), float(g)
    return _np_split_gini(np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64), min_leaf)


# ---------------------------------------------------------------------------
# Weighted DBSCAN over unique RGB colors
#
# Pixels sharing an RGB value have identical eps-neighborhoods, so DBSCAN is
# run over unique colors with pixel counts as weights. A color is a core
# point when the summed pixel count within eps (itself included) reaches
# min_pts; clusters are connected components of core colors, labelled in
# order of their smallest color index.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nb_weighted_neighbor_counts(colors, counts, eps2):  # pragma: no cover
    u = colors.shape[0]
    out = np.zeros(u, dtype=np.int64)
    for i in range(u):
        w = 0
        for j in range(u):
            d2 = 0.0
            for k in range(3):
                diff = colors[i, k] - colors[j, k]
                d2 += diff * diff
            if d2 <= eps2:
                w += counts[j]
        out[i] = w
    return out


@njit(cache=True)
def _nb_core_labels(colors, core_idx, eps2):  # pragma: no cover
    m = core_idx.shape[0]
    labels = np.full(m, -1, dtype=np.int64)
    next_label = 0
    stack = np.empty(m, dtype=np.int64)
    for i in range(m):
        if labels[i] != -1:
            continue
        labels[i] = next_label
        top = 0
        stack[top] = i
        top += 1
        while top > 0:
            top -= 1
            a = stack[top]
            ca = core_idx[a]
            for b in range(m):
                if labels[b] != -1:
                    continue
                cb = core_idx[b]
                d2 = 0.0
                for k in range(3):
                    diff = colors[ca, k] - colors[cb, k]
                    d2 += diff * diff
                if d2 <= eps2:
                    labels[b] = next_label
                    stack[top] = b
                    top += 1
        next_label += 1
    return labels


def _np_weighted_neighbor_counts(colors, counts, eps2):
    d2 = ((colors[:, None, :] - colors[None, :, :]) ** 2).sum(axis=2)
    return (d2 <= eps2) @ counts


def _np_core_labels(colors, core_idx, eps2):
    core = colors[core_idx]
    d2 = ((core[:, None, :] - core[None, :, :]) ** 2).sum(axis=2)
    adj = d2 <= eps2
    m = core_idx.shape[0]
    labels = np.full(m, -1, dtype=np.int64)
    next_label = 0
    for i in range(m):
        if labels[i] != -1:
            continue
        stack = [i]
        labels[i] = next_label
        while stack:
            a = stack.pop()
            nb = np.nonzero(adj[a] & (labels == -1))[0]
            labels[nb] = next_label
            stack.extend(nb.tolist())
        next_label += 1
    return labels


def dbscan_unique_colors(
    colors: np.ndarray, counts: np.ndarray, eps: float, min_pts: int
) -> np.ndarray:
    """Cluster unique RGB colors (weighted by pixel counts) with DBSCAN.

    Returns one label per color: cluster ids 0..k-1 for core colors, -1 for
    non-core colors (border/noise assignment is done by the caller).
    """
    colors = np.ascontiguousarray(colors, dtype=np.float64)
    counts = np.ascontiguousarray(counts, dtype=np.int64)
    eps2 = float(eps) * float(eps)
    if _BACKEND == "numba":
        wcounts = _nb_weighted_neighbor_counts(colors, counts, eps2)
    else:
        wcounts = _np_weighted_neighbor_counts(colors, counts, eps2)
    core_idx = np.nonzero(wcounts >= min_pts)[0].astype(np.int64)
    labels = np.full(colors.shape[0], -1, dtype=np.int64)
    if core_idx.size == 0:
        return labels
    if _BACKEND == "numba":
        core_labels = _nb_core_labels(colors, core_idx, eps2)
    else:
        core_labels = _np_core_labels(colors, core_idx, eps2)
    labels[core_idx] = core_labels
    return labels
