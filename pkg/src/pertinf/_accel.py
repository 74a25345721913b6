"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``PERTINF_DISABLE_NUMBA`` is unset (or ``0``).  Both paths return the
same values up to floating-point summation order; each path on its own is
deterministic.
"""

import os

import numpy as np

_DISABLE = os.environ.get("PERTINF_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLE:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised through the env flag
    numba = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference implementations


def _score_moments_np(scores, third):
    n, p = scores.shape
    prod_sum = scores.T @ scores
    sq = scores * scores
    prod_sqsum = sq.T @ sq
    if third:
        trip_sum = np.empty((p, p, p))
        for i in range(p):
            trip_sum[i] = (scores * scores[:, i : i + 1]).T @ scores
    else:
        trip_sum = np.zeros((0, 0, 0))
    return prod_sum, prod_sqsum, trip_sum


def _connection_accel_np(ginv, gamma, v):
    # a_i = sum_s ginv[i, s] * sum_{j,k} gamma[j, k, s] v_j v_k
    return ginv @ np.einsum("jks,j,k->s", gamma, v, v)


def _rayleigh_batch_np(a, g, hs):
    num = np.einsum("ni,ij,nj->n", hs, a, hs)
    den = np.einsum("ni,ij,nj->n", hs, g, hs)
    return num, den


# ---------------------------------------------------------------------------
# numba kernels

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _score_moments_nb(scores, third):
        n, p = scores.shape
        prod_sum = np.zeros((p, p))
        prod_sqsum = np.zeros((p, p))
        if third:
            trip_sum = np.zeros((p, p, p))
        else:
            trip_sum = np.zeros((0, 0, 0))
        for r in range(n):
            for i in range(p):
                si = scores[r, i]
                for j in range(i, p):
                    pij = si * scores[r, j]
                    prod_sum[i, j] += pij
                    prod_sqsum[i, j] += pij * pij
                    if third:
                        for k in range(j, p):
                            trip_sum[i, j, k] += pij * scores[r, k]
        for i in range(p):
            for j in range(i + 1, p):
                prod_sum[j, i] = prod_sum[i, j]
                prod_sqsum[j, i] = prod_sqsum[i, j]
        if third:
            for i in range(p):
                for j in range(i, p):
                    for k in range(j, p):
                        val = trip_sum[i, j, k]
                        trip_sum[i, k, j] = val
                        trip_sum[j, i, k] = val
                        trip_sum[j, k, i] = val
                        trip_sum[k, i, j] = val
                        trip_sum[k, j, i] = val
        return prod_sum, prod_sqsum, trip_sum

    @numba.njit(cache=True)
    def _connection_accel_nb(ginv, gamma, v):
        p = v.shape[0]
        w = np.zeros(p)
        for s in range(p):
            acc = 0.0
            for j in range(p):
                vj = v[j]
                if vj == 0.0:
                    continue
                for k in range(p):
                    acc += gamma[j, k, s] * vj * v[k]
            w[s] = acc
        out = np.zeros(p)
        for i in range(p):
            acc = 0.0
            for s in range(p):
                acc += ginv[i, s] * w[s]
            out[i] = acc
        return out

    @numba.njit(cache=True)
    def _rayleigh_batch_nb(a, g, hs):
        n, p = hs.shape
        num = np.zeros(n)
        den = np.zeros(n)
        for r in range(n):
            sa = 0.0
            sg = 0.0
            for i in range(p):
                hi = hs[r, i]
                for j in range(p):
                    hij = hi * hs[r, j]
                    sa += a[i, j] * hij
                    sg += g[i, j] * hij
            num[r] = sa
            den[r] = sg
        return num, den


# ---------------------------------------------------------------------------
# public dispatchers


def score_moments(scores, third=True):
    """Sums of score products over draws.

    Returns ``(sum s_i s_j, sum (s_i s_j)^2, sum s_i s_j s_k)``; the third
    array is empty when ``third`` is false.
    """
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    if HAVE_NUMBA:
        return _score_moments_nb(scores, bool(third))
    return _score_moments_np(scores, third)


def connection_accel(ginv, gamma, v):
    """Contract ``g^{is} Gamma_{jks} v_j v_k`` over ``j, k, s``."""
    ginv = np.ascontiguousarray(ginv, dtype=np.float64)
    gamma = np.ascontiguousarray(gamma, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    if HAVE_NUMBA:
        return _connection_accel_nb(ginv, gamma, v)
    return _connection_accel_np(ginv, gamma, v)


def rayleigh_batch(a, g, hs):
    """Numerators ``h^T A h`` and denominators ``h^T G h`` for rows of ``hs``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    hs = np.ascontiguousarray(np.atleast_2d(hs), dtype=np.float64)
    if HAVE_NUMBA:
        return _rayleigh_batch_nb(a, g, hs)
    return _rayleigh_batch_np(a, g, hs)


# numpy implementations exposed for the benchmark and the backend-agreement tests
numpy_impl = {
    "score_moments": _score_moments_np,
    "connection_accel": _connection_accel_np,
    "rayleigh_batch": _rayleigh_batch_np,
}
numba_impl = (
    {
        "score_moments": _score_moments_nb,
        "connection_accel": _connection_accel_nb,
        "rayleigh_batch": _rayleigh_batch_nb,
    }
    if HAVE_NUMBA
    else {}
)
