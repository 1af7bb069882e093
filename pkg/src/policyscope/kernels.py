"""Hot numeric loops: split scoring, joint histograms and tree routing.

Every kernel has two implementations with identical signatures, a numba
``@njit`` loop and a vectorised numpy version.  The one exported under the
public name is chosen once at import time from ``POLICYSCOPE_BACKEND``
(``numba`` or ``numpy``).  When numba is missing the numpy path is used
regardless of the flag.

The two backends may disagree in the last few ulps of a split score; callers
select splits with a relative tolerance so this never changes a tree.
"""
from __future__ import annotations

import os
import warnings

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_requested = os.environ.get("POLICYSCOPE_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"POLICYSCOPE_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
if _requested == "numba" and not HAVE_NUMBA:  # pragma: no cover
    warnings.warn("numba is not available, falling back to numpy kernels", RuntimeWarning)
    _requested = "numpy"

BACKEND: str = _requested

NEG_INF = -np.inf


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------

def _np_mse_split_scores(x_sorted, y_sorted, min_leaf):
    n = x_sorted.shape[0]
    scores = np.full(max(n - 1, 0), NEG_INF)
    if n < 2:
        return scores
    csum = np.cumsum(y_sorted)[:-1]
    total = y_sorted.sum()
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    diff = csum / n_left - (total - csum) / n_right
    raw = n_left * n_right / n * diff * diff
    valid = (x_sorted[:-1] < x_sorted[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    scores[valid] = raw[valid]
    return scores


def _np_gini_split_scores(x_sorted, codes_sorted, n_classes, min_leaf):
    n = x_sorted.shape[0]
    scores = np.full(max(n - 1, 0), NEG_INF)
    if n < 2:
        return scores
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), codes_sorted] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]
    total = left[-1] + onehot[-1]
    right = total - left
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    raw = (
        (left * left).sum(axis=1) / n_left
        + (right * right).sum(axis=1) / n_right
        - (total * total).sum() / n
    )
    valid = (x_sorted[:-1] < x_sorted[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    scores[valid] = raw[valid]
    return scores


def _np_joint_counts(a, b, na, nb):
    flat = np.bincount(a * nb + b, minlength=na * nb)
    return flat.reshape(na, nb).astype(np.int64)


def _np_apply_tree(X, feature, threshold, left, right):
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = feature[node] >= 0
    while active.any():
        idx = np.nonzero(active)[0]
        cur = node[idx]
        go_left = X[idx, feature[cur]] <= threshold[cur]
        node[idx] = np.where(go_left, left[cur], right[cur])
        active[idx] = feature[node[idx]] >= 0
    return node


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _nb_mse_split_scores(x_sorted, y_sorted, min_leaf):
        n = x_sorted.shape[0]
        scores = np.full(max(n - 1, 0), -np.inf)
        if n < 2:
            return scores
        total = 0.0
        for i in range(n):
            total += y_sorted[i]
        acc = 0.0
        for i in range(n - 1):
            acc += y_sorted[i]
            nl = i + 1.0
            nr = n - nl
            if nl < min_leaf or nr < min_leaf or not x_sorted[i] < x_sorted[i + 1]:
                continue
            diff = acc / nl - (total - acc) / nr
            scores[i] = nl * nr / n * diff * diff
        return scores

    @numba.njit(cache=True, nogil=True)
    def _nb_gini_split_scores(x_sorted, codes_sorted, n_classes, min_leaf):
        n = x_sorted.shape[0]
        scores = np.full(max(n - 1, 0), -np.inf)
        if n < 2:
            return scores
        total = np.zeros(n_classes)
        for i in range(n):
            total[codes_sorted[i]] += 1.0
        sq_total = 0.0
        for c in range(n_classes):
            sq_total += total[c] * total[c]
        left = np.zeros(n_classes)
        sq_left = 0.0
        sq_right = sq_total
        for i in range(n - 1):
            c = codes_sorted[i]
            # incremental update of the squared-count sums
            sq_left += 2.0 * left[c] + 1.0
            r = total[c] - left[c]
            sq_right -= 2.0 * r - 1.0
            left[c] += 1.0
            nl = i + 1.0
            nr = n - nl
            if nl < min_leaf or nr < min_leaf or not x_sorted[i] < x_sorted[i + 1]:
                continue
            scores[i] = sq_left / nl + sq_right / nr - sq_total / n
        return scores

    @numba.njit(cache=True, nogil=True)
    def _nb_joint_counts(a, b, na, nb):
        out = np.zeros((na, nb), dtype=np.int64)
        for t in range(a.shape[0]):
            out[a[t], b[t]] += 1
        return out

    @numba.njit(cache=True, nogil=True)
    def _nb_apply_tree(X, feature, threshold, left, right):
        n = X.shape[0]
        out = np.empty(n, dtype=np.int64)
        for r in range(n):
            node = 0
            while feature[node] >= 0:
                if X[r, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[r] = node
        return out


# --------------------------------------------------------------------------
# public dispatch
# --------------------------------------------------------------------------

_IMPLS = {
    "numpy": {
        "mse_split_scores": _np_mse_split_scores,
        "gini_split_scores": _np_gini_split_scores,
        "joint_counts": _np_joint_counts,
        "apply_tree": _np_apply_tree,
    },
}
if HAVE_NUMBA:
    _IMPLS["numba"] = {
        "mse_split_scores": _nb_mse_split_scores,
        "gini_split_scores": _nb_gini_split_scores,
        "joint_counts": _nb_joint_counts,
        "apply_tree": _nb_apply_tree,
    }


def get_kernels(backend: str | None = None) -> dict:
    """Return the kernel table for ``backend`` (default: the active one)."""
    return _IMPLS[backend or BACKEND]


def available_backends() -> list[str]:
    return sorted(_IMPLS)


def mse_split_scores(x_sorted: np.ndarray, y_sorted: np.ndarray, min_leaf: int) -> np.ndarray:
    """Friedman improvement for every cut of a sorted column.

    Entry ``i`` scores the cut between rows ``i`` and ``i + 1``, i.e.
    ``n_l * n_r / n * (mean_l - mean_r) ** 2``.  Cuts between equal values or
    producing a child smaller than ``min_leaf`` are ``-inf``.
    """
    return _IMPLS[BACKEND]["mse_split_scores"](
        np.ascontiguousarray(x_sorted, dtype=np.float64),
        np.ascontiguousarray(y_sorted, dtype=np.float64),
        int(min_leaf),
    )


def gini_split_scores(
    x_sorted: np.ndarray, codes_sorted: np.ndarray, n_classes: int, min_leaf: int
) -> np.ndarray:
    """Count-weighted Gini decrease for every cut of a sorted column.

    The score is ``n * G(parent) - n_l * G(left) - n_r * G(right)``.
    """
    return _IMPLS[BACKEND]["gini_split_scores"](
        np.ascontiguousarray(x_sorted, dtype=np.float64),
        np.ascontiguousarray(codes_sorted, dtype=np.int64),
        int(n_classes),
        int(min_leaf),
    )


def joint_counts(a: np.ndarray, b: np.ndarray, na: int, nb: int) -> np.ndarray:
    """Contingency table of two non-negative integer code vectors."""
    return _IMPLS[BACKEND]["joint_counts"](
        np.ascontiguousarray(a, dtype=np.int64),
        np.ascontiguousarray(b, dtype=np.int64),
        int(na),
        int(nb),
    )


def apply_tree(X, feature, threshold, left, right) -> np.ndarray:
    """Leaf node index reached by every row of ``X``."""
    return _IMPLS[BACKEND]["apply_tree"](
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(feature, dtype=np.int64),
        np.ascontiguousarray(threshold, dtype=np.float64),
        np.ascontiguousarray(left, dtype=np.int64),
        np.ascontiguousarray(right, dtype=np.int64),
    )
