"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and ``C2T_NUMBA`` is not
set to ``0``. Both paths produce bitwise-identical results: selection and
summation order are the same, and every transcendental (log, exp) is
evaluated by numpy on both paths.
"""
import os

import numpy as np

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("C2T_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


def backend():
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# top-k selection: indices of the k largest entries, ordered by
# (value descending, index ascending)

def _topk_np(p, k):
    n = p.shape[0]
    k = min(k, n)
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    kth = np.partition(p, n - k)[n - k]
    above = np.flatnonzero(p > kth)
    ties = np.flatnonzero(p == kth)[: k - above.shape[0]]
    idx = np.concatenate((above, ties))
    order = np.lexsort((idx, -p[idx]))
    return idx[order].astype(np.int64)


if HAVE_NUMBA:
    @numba.njit(cache=True)
    def _topk_nb(p, k):
        n = p.shape[0]
        if k > n:
            k = n
        out = np.empty(k, dtype=np.int64)
        if k <= 0:
            return out
        vals = np.empty(k, dtype=np.float64)
        m = 0
        for i in range(n):
            v = p[i]
            # strictly better than the current worst; ties keep the earlier index
            if m == k and not v > vals[m - 1]:
                continue
            j = m if m < k else k - 1
            while j > 0 and v > vals[j - 1]:
                if j < k:
                    vals[j] = vals[j - 1]
                    out[j] = out[j - 1]
                j -= 1
            vals[j] = v
            out[j] = i
            if m < k:
                m += 1
        return out
else:  # pragma: no cover
    _topk_nb = None


def topk(p, k):
    """Indices of the ``k`` largest entries of ``p``, highest first.

    Ties go to the smaller index.
    """
    p = np.ascontiguousarray(p, dtype=np.float64)
    if USE_NUMBA:
        return _topk_nb(p, int(k))
    return _topk_np(p, int(k))


# ---------------------------------------------------------------------------
# top-M support mask for truncated entropy

def _topm_mask_np(p, m):
    # numpy's introselect beats a jitted quickselect here, so both backends use it
    n = p.shape[0]
    mask = np.zeros(n, dtype=np.bool_)
    if m >= n:
        mask[:] = True
        return mask
    mask[_topk_np(p, m)] = True
    return mask


if HAVE_NUMBA:
    @numba.njit(cache=True)
    def _seqsum_nb(x):
        s = 0.0
        for i in range(x.shape[0]):
            s += x[i]
        return s
else:  # pragma: no cover
    _seqsum_nb = None


def seqsum(x):
    """Left-to-right sum (no pairwise reduction), identical on both paths."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        return 0.0
    if USE_NUMBA:
        return float(_seqsum_nb(x))
    return float(np.cumsum(x)[-1])


def entropy_terms(p, m):
    """``-p log p`` over the top-``m`` positive entries, in rank order.

    Rank order (probability descending, index ascending) makes every
    truncation a prefix of the full sequence, so sequential sums are exactly
    monotone in ``m``.
    """
    p = np.ascontiguousarray(p, dtype=np.float64)
    mask = _topm_mask_np(p, int(m))
    mask &= p > 0.0
    idx = np.flatnonzero(mask)
    sel = p[idx[np.lexsort((idx, -p[idx]))]]
    return -(sel * np.log(sel))


def truncated_entropy_raw(p, m):
    return seqsum(entropy_terms(p, m))


# ---------------------------------------------------------------------------
# two-layer classifier forward: logits of  W2 . relu(W1 x + b1) + b2

def _mlp_logits_np(X, W1, b1, W2, b2):
    h = W1.shape[0]
    hidden = X[:, 0:1] * W1[:, 0] + X[:, 1:2] * W1[:, 1]
    hidden = hidden + X[:, 2:3] * W1[:, 2]
    hidden = hidden + b1
    hidden = np.maximum(hidden, 0.0)
    acc = np.zeros(X.shape[0], dtype=np.float64)
    for j in range(h):
        acc = acc + hidden[:, j] * W2[j]
    return acc + b2


if HAVE_NUMBA:
    @numba.njit(cache=True)
    def _mlp_logits_nb(X, W1, b1, W2, b2):
        n = X.shape[0]
        h = W1.shape[0]
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            acc = 0.0
            for j in range(h):
                z = X[i, 0] * W1[j, 0] + X[i, 1] * W1[j, 1]
                z = z + X[i, 2] * W1[j, 2]
                z = z + b1[j]
                if z < 0.0:
                    z = 0.0
                acc = acc + z * W2[j]
            out[i] = acc + b2
        return out
else:  # pragma: no cover
    _mlp_logits_nb = None


def mlp_logits(X, W1, b1, W2, b2):
    X = np.ascontiguousarray(X, dtype=np.float64)
    W1 = np.ascontiguousarray(W1, dtype=np.float64)
    b1 = np.ascontiguousarray(b1, dtype=np.float64)
    W2 = np.ascontiguousarray(W2, dtype=np.float64).reshape(-1)
    b2 = float(b2)
    if USE_NUMBA:
        return _mlp_logits_nb(X, W1, b1, W2, b2)
    return _mlp_logits_np(X, W1, b1, W2, b2)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return 1.0 / (1.0 + np.exp(-z))


# ---------------------------------------------------------------------------
# instrumented quickselect: partitions so the k largest values come first,
# counting every value comparison. Median-of-three pivot keeps counts
# deterministic for a given input.

def _counted_select_py(a, k):
    a = a.copy()
    n = a.shape[0]
    comps = 0
    if k <= 0 or k >= n:
        return a, comps
    lo, hi = 0, n - 1
    target = k - 1
    while lo < hi:
        mid = (lo + hi) // 2
        x, y, z = a[lo], a[mid], a[hi]
        comps += 3
        if (x >= y) == (y >= z):
            piv = y
        elif (y >= x) == (x >= z):
            piv = x
        else:
            piv = z
        # three-way partition, descending: [> piv | == piv | < piv]
        lt, i, gt = lo, lo, hi
        while i <= gt:
            v = a[i]
            comps += 1
            if v > piv:
                a[lt], a[i] = a[i], a[lt]
                lt += 1
                i += 1
            else:
                comps += 1
                if v < piv:
                    a[gt], a[i] = a[i], a[gt]
                    gt -= 1
                else:
                    i += 1
        if target < lt:
            hi = lt - 1
        elif target > gt:
            lo = gt + 1
        else:
            break
    return a, comps


if HAVE_NUMBA:
    @numba.njit(cache=True)
    def _counted_select_nb(a, k):
        a = a.copy()
        n = a.shape[0]
        comps = 0
        if k <= 0 or k >= n:
            return a, comps
        lo = 0
        hi = n - 1
        target = k - 1
        while lo < hi:
            mid = (lo + hi) // 2
            x = a[lo]
            y = a[mid]
            z = a[hi]
            comps += 3
            if (x >= y) == (y >= z):
                piv = y
            elif (y >= x) == (x >= z):
                piv = x
            else:
                piv = z
            lt = lo
            i = lo
            gt = hi
            while i <= gt:
                v = a[i]
                comps += 1
                if v > piv:
                    t = a[lt]
                    a[lt] = a[i]
                    a[i] = t
                    lt += 1
                    i += 1
                else:
                    comps += 1
                    if v < piv:
                        t = a[gt]
                        a[gt] = a[i]
                        a[i] = t
                        gt -= 1
                    else:
                        i += 1
            if target < lt:
                hi = lt - 1
            elif target > gt:
                lo = gt + 1
            else:
                break
        return a, comps
else:  # pragma: no cover
    _counted_select_nb = None


def counted_select(values, k):
    """Move the ``k`` largest values to the front; return (array, comparisons)."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if USE_NUMBA:
        a, c = _counted_select_nb(values, int(k))
    else:
        a, c = _counted_select_py(values, int(k))
    return a, int(c)


# ---------------------------------------------------------------------------
# synthetic model rows: relabelled pool rows and their draft mixtures

def _relabel_np(row, a, b):
    v = row.shape[0]
    return row[(a * np.arange(v, dtype=np.int64) + b) % v]


if HAVE_NUMBA:
    @numba.njit(cache=True)
    def _relabel_nb(row, a, b):
        v = row.shape[0]
        out = np.empty(v, dtype=np.float64)
        a = a % v
        j = b % v
        for t in range(v):
            out[t] = row[j]
            j += a
            if j >= v:
                j -= v
        return out

    @numba.njit(cache=True)
    def _mix_nb(x, y, eps):
        out = np.empty(x.shape[0], dtype=np.float64)
        w = 1.0 - eps
        for i in range(x.shape[0]):
            out[i] = w * x[i] + eps * y[i]
        return out
else:  # pragma: no cover
    _relabel_nb = None
    _mix_nb = None


def relabel(row, a, b):
    """``out[t] = row[(a*t + b) mod V]``; a bijection when gcd(a, V) = 1."""
    if USE_NUMBA:
        return _relabel_nb(row, int(a), int(b))
    return _relabel_np(row, int(a), int(b))


def mix(x, y, eps):
    """``(1 - eps) * x + eps * y`` elementwise."""
    if USE_NUMBA:
        return _mix_nb(x, y, float(eps))
    return (1.0 - eps) * x + eps * y
