# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled scoring kernels; same contract as :mod:`bmdl._pykernels`.

Whitened design rows are sparse (at most ``p+1`` season and ``p+1`` regime
entries per component), so Gram matrices are accumulated row by row from
merged sparse entries instead of forming dense ``(N-p) x k`` matrices.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt

from .errors import DegenerateDesign, SingularMatrix

cnp.import_array()

IMPLEMENTATION = "cython"

cdef double PIVOT_TOL = 1e-12


cdef int _chol(double[:, ::1] M, Py_ssize_t k, Py_ssize_t guarded) noexcept nogil:
    """In-place lower Cholesky of the leading ``k x k`` block.

    Pivots ``j < guarded`` must exceed ``PIVOT_TOL * M[j, j]``; later pivots
    are stored as raw (possibly non-positive) values in ``M[j, j]`` without
    the square root. Returns 0 on success, ``j + 1`` for a failing pivot.
    """
    cdef Py_ssize_t i, j, l
    cdef double d, acc
    for j in range(k):
        d = M[j, j]
        for l in range(j):
            d -= M[j, l] * M[j, l]
        if j >= guarded:
            M[j, j] = d
            continue
        if not (d > PIVOT_TOL * M[j, j]) or not (d > 0):
            return j + 1
        d = sqrt(d)
        M[j, j] = d
        for i in range(j + 1, k):
            acc = M[i, j]
            for l in range(j):
                acc -= M[i, l] * M[j, l]
            M[i, j] = acc / d
    return 0


cdef void _chol_solve(double[:, ::1] L, Py_ssize_t k, double[::1] b) noexcept nogil:
    cdef Py_ssize_t i, l
    cdef double acc
    for i in range(k):
        acc = b[i]
        for l in range(i):
            acc -= L[i, l] * b[l]
        b[i] = acc / L[i, i]
    for i in range(k - 1, -1, -1):
        acc = b[i]
        for l in range(i + 1, k):
            acc -= L[l, i] * b[l]
        b[i] = acc / L[i, i]


cdef void _regimes(Py_ssize_t n, const long[::1] cps, long[::1] reg) noexcept nogil:
    cdef Py_ssize_t i, r = 0, m = cps.shape[0]
    for i in range(n):
        while r < m and cps[r] - 1 <= i:
            r += 1
        reg[i] = r


cdef _ols_resid(const double[::1] x, const long[::1] season, const long[::1] reg,
                Py_ssize_t m, Py_ssize_t T, double[::1] out):
    cdef Py_ssize_t n = x.shape[0], i, v, r, q
    cdef double[::1] nv = np.zeros(T)
    cdef double[::1] sxv = np.zeros(T)
    cdef double[::1] lengths = np.zeros(m + 1)
    cdef double[::1] sxr = np.zeros(m + 1)
    cdef double[:, ::1] C = np.zeros((T, m + 1))
    cdef double[:, ::1] S
    cdef double[::1] mu = np.zeros(m + 1)
    cdef double[::1] s = np.zeros(T)
    cdef double acc
    for i in range(n):
        v = season[i]
        r = reg[i]
        nv[v] += 1.0
        sxv[v] += x[i]
        lengths[r] += 1.0
        sxr[r] += x[i]
        C[v, r] += 1.0
    for v in range(T):
        if nv[v] == 0:
            raise DegenerateDesign("a season has no observations")
    for r in range(m + 1):
        if lengths[r] == 0:
            raise DegenerateDesign("empty regime")
    if m > 0:
        S = np.zeros((m, m))
        for r in range(m):
            acc = sxr[r + 1]
            for v in range(T):
                acc -= C[v, r + 1] * sxv[v] / nv[v]
            mu[r + 1] = acc
            for q in range(r + 1):
                acc = lengths[r + 1] if q == r else 0.0
                for v in range(T):
                    acc -= C[v, r + 1] * C[v, q + 1] / nv[v]
                S[r, q] = acc
        if _chol(S, m, m) != 0:
            raise DegenerateDesign("regime design is numerically singular")
        _chol_solve(S, m, mu[1:])
    for v in range(T):
        acc = sxv[v]
        for r in range(1, m + 1):
            acc -= C[v, r] * mu[r]
        s[v] = acc / nv[v]
    for i in range(n):
        out[i] = x[i] - s[season[i]] - mu[reg[i]]


cdef double _autocov(const double[::1] e, Py_ssize_t h) noexcept nogil:
    cdef Py_ssize_t n = e.shape[0], t
    cdef double acc = 0.0
    for t in range(h, n):
        acc += e[t] * e[t - h]
    return acc / n


cdef double _levinson(const double[::1] g, Py_ssize_t p, double[::1] phi, double[::1] tmp) except? -1.0:
    cdef Py_ssize_t k, j
    cdef double v = g[0], acc, kap
    if not v > 0:
        raise SingularMatrix("zero residual autocovariance (constant residuals)")
    for k in range(p):
        acc = g[k + 1]
        for j in range(k):
            acc -= phi[j] * g[k - j]
        kap = acc / v
        for j in range(k):
            tmp[j] = phi[j]
        for j in range(k):
            phi[j] = tmp[j] - kap * tmp[k - 1 - j]
        phi[k] = kap
        v *= 1.0 - kap * kap
        if not v > 0:
            raise SingularMatrix("Toeplitz autocovariance matrix is singular")
    return v


cdef inline Py_ssize_t _add(long* idx, double* val, Py_ssize_t cnt, long col, double c) noexcept nogil:
    """Merge ``c`` into column ``col``, keeping ``idx[:cnt]`` sorted ascending."""
    cdef Py_ssize_t i = cnt, j
    while i > 0 and idx[i - 1] > col:
        i -= 1
    if i > 0 and idx[i - 1] == col:
        val[i - 1] += c
        return cnt
    j = cnt
    while j > i:
        idx[j] = idx[j - 1]
        val[j] = val[j - 1]
        j -= 1
    idx[i] = col
    val[i] = c
    return cnt + 1


cdef inline void _accumulate(double* G, Py_ssize_t k, const long* idx, const double* val,
                             Py_ssize_t cnt) noexcept nogil:
    # idx sorted ascending, so idx[b] <= idx[a] for b <= a
    cdef Py_ssize_t a, b
    cdef double va
    cdef double* row
    for a in range(cnt):
        va = val[a]
        row = G + idx[a] * k
        for b in range(a + 1):
            row[idx[b]] += va * val[b]


cdef tuple _profile(double[:, ::1] G, Py_ssize_t k, Py_ssize_t m, const double[::1] ridge):
    """Cholesky-profile of a lower-stored Gram of size ``k``; ``(logdet_m, rss)``."""
    cdef double[:, ::1] W = np.empty((k, k))
    cdef Py_ssize_t i, j
    cdef double logdet = 0.0
    for i in range(k):
        for j in range(i + 1):
            W[i, j] = G[i, j]
    for i in range(m):
        W[i, i] += ridge[i]
    if _chol(W, k, k - 1) != 0:
        raise SingularMatrix("whitened design is numerically singular")
    for i in range(m):
        logdet += 2.0 * log(W[i, i])
    return logdet, W[k - 1, k - 1]


def uni_terms(x, season, cps, Py_ssize_t T, Py_ssize_t p, double nu):
    """Return ``(sigma2, logdet, sigma2_inf, phi)`` for one univariate config."""
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const long[::1] sv = np.ascontiguousarray(season, dtype=np.int64)
    cdef const long[::1] cv = np.ascontiguousarray(cps, dtype=np.int64)
    cdef Py_ssize_t n = xv.shape[0], m = cv.shape[0], k = m + T + 1
    cdef Py_ssize_t t, j, cnt, u, h
    cdef long[::1] reg = np.empty(n, dtype=np.int64)
    cdef double[::1] e = np.empty(n)
    cdef double[::1] g = np.empty(p + 1)
    phi_arr = np.zeros(p)
    cdef double[::1] phi = phi_arr
    cdef double[::1] tmp = np.zeros(p + 1)
    cdef double[:, ::1] G = np.zeros((k, k))
    cdef long[::1] idx = np.empty(2 * p + 3, dtype=np.int64)
    cdef double[::1] val = np.empty(2 * p + 3)
    cdef double[::1] ridge = np.full(m, 1.0 / nu) if m else np.zeros(1)
    cdef double[::1] zero = np.zeros(m) if m else np.zeros(1)
    cdef double c, xw
    _regimes(n, cv, reg)
    _ols_resid(xv, sv, reg, m, T, e)
    for h in range(p + 1):
        g[h] = _autocov(e, h)
    _levinson(g, p, phi, tmp)
    with nogil:
        for t in range(p, n):
            cnt = 0
            xw = 0.0
            for j in range(p + 1):
                c = 1.0 if j == 0 else -phi[j - 1]
                u = t - j
                cnt = _add(&idx[0], &val[0], cnt, m + sv[u], c)
                if reg[u] > 0:
                    cnt = _add(&idx[0], &val[0], cnt, reg[u] - 1, c)
                xw += c * xv[u]
            idx[cnt] = k - 1
            val[cnt] = xw
            cnt += 1
            _accumulate(&G[0, 0], k, &idx[0], &val[0], cnt)
    logdet, rss = _profile(G, k, m, ridge)
    _, rss_inf = _profile(G, k, m, zero)
    if not (rss > 0 and rss_inf > 0):
        raise SingularMatrix("zero residual variance")
    return rss / (n - p), logdet, rss_inf / (n - p), phi_arr


# ---------------------------------------------------------------- bivariate


cdef _gls_resid(const double[::1] x1, const double[::1] x2, const long[::1] sv,
                const long[::1] reg1, const long[::1] reg2, Py_ssize_t m1, Py_ssize_t m2,
                Py_ssize_t T, double[:, ::1] Wt, double[::1] r1, double[::1] r2):
    cdef Py_ssize_t n = x1.shape[0], k1 = T + m1, k = 2 * T + m1 + m2
    cdef double[:, ::1] H = np.zeros((k, k))
    cdef double[::1] beta = np.zeros(k)
    cdef long ci[4]
    cdef int comp[4]
    cdef Py_ssize_t t, a, b, cnt
    cdef double y1, y2
    for t in range(n):
        cnt = 0
        ci[cnt] = sv[t]; comp[cnt] = 0; cnt += 1
        if reg1[t] > 0:
            ci[cnt] = T + reg1[t] - 1; comp[cnt] = 0; cnt += 1
        ci[cnt] = k1 + sv[t]; comp[cnt] = 1; cnt += 1
        if reg2[t] > 0:
            ci[cnt] = k1 + T + reg2[t] - 1; comp[cnt] = 1; cnt += 1
        y1 = Wt[0, 0] * x1[t] + Wt[0, 1] * x2[t]
        y2 = Wt[1, 0] * x1[t] + Wt[1, 1] * x2[t]
        for a in range(cnt):
            beta[ci[a]] += y1 if comp[a] == 0 else y2
            for b in range(cnt):
                if ci[b] <= ci[a]:
                    H[ci[a], ci[b]] += Wt[comp[a], comp[b]]
    if _chol(H, k, k) != 0:
        raise DegenerateDesign("GLS design is numerically singular")
    _chol_solve(H, k, beta)
    for t in range(n):
        r1[t] = x1[t] - beta[sv[t]] - (beta[T + reg1[t] - 1] if reg1[t] > 0 else 0.0)
        r2[t] = x2[t] - beta[k1 + sv[t]] - (beta[k1 + T + reg2[t] - 1] if reg2[t] > 0 else 0.0)


def bi_estimate(x1, x2, season, cps1, cps2, Py_ssize_t T, Py_ssize_t p):
    """Return ``(Phi, Sigma, flagged)`` from OLS -> GLS -> VAR Yule-Walker."""
    cdef const double[::1] a1 = np.ascontiguousarray(x1, dtype=np.float64)
    cdef const double[::1] a2 = np.ascontiguousarray(x2, dtype=np.float64)
    cdef const long[::1] sv = np.ascontiguousarray(season, dtype=np.int64)
    cdef const long[::1] c1 = np.ascontiguousarray(cps1, dtype=np.int64)
    cdef const long[::1] c2 = np.ascontiguousarray(cps2, dtype=np.int64)
    cdef Py_ssize_t n = a1.shape[0], m1 = c1.shape[0], m2 = c2.shape[0]
    cdef Py_ssize_t t, h, i, j, q
    cdef long[::1] reg1 = np.empty(n, dtype=np.int64)
    cdef long[::1] reg2 = np.empty(n, dtype=np.int64)
    cdef double[::1] e1 = np.empty(n)
    cdef double[::1] e2 = np.empty(n)
    cdef double g00 = 0.0, g01 = 0.0, g11 = 0.0, det
    _regimes(n, c1, reg1)
    _regimes(n, c2, reg2)
    _ols_resid(a1, sv, reg1, m1, T, e1)
    _ols_resid(a2, sv, reg2, m2, T, e2)
    for t in range(n):
        g00 += e1[t] * e1[t]
        g01 += e1[t] * e2[t]
        g11 += e2[t] * e2[t]
    g00 /= n; g01 /= n; g11 /= n
    det = g00 * g11 - g01 * g01
    if not (g00 > 0 and g11 > 0 and det > PIVOT_TOL * g00 * g11):
        raise SingularMatrix("OLS residual covariance is singular")
    cdef double[:, ::1] Wt = np.array([[g11 / det, -g01 / det], [-g01 / det, g00 / det]])
    _gls_resid(a1, a2, sv, reg1, reg2, m1, m2, T, Wt, e1, e2)
    gam_arr = np.zeros((p + 1, 2, 2))
    cdef double[:, :, ::1] gam = gam_arr
    for h in range(p + 1):
        for t in range(h, n):
            gam[h, 0, 0] += e1[t] * e1[t - h]
            gam[h, 0, 1] += e1[t] * e2[t - h]
            gam[h, 1, 0] += e2[t] * e1[t - h]
            gam[h, 1, 1] += e2[t] * e2[t - h]
        for i in range(2):
            for j in range(2):
                gam[h, i, j] /= n
    Phi_arr = np.zeros((p, 2, 2))
    cdef double[:, :, ::1] Phi = Phi_arr
    cdef double[:, ::1] R
    cdef double[::1] col
    if p > 0:
        R = np.zeros((2 * p, 2 * p))
        for j in range(p):
            for h in range(p):
                for i in range(2):
                    for q in range(2):
                        R[2 * j + i, 2 * h + q] = gam[h - j, i, q] if h >= j else gam[j - h, q, i]
        if _chol(R, 2 * p, 2 * p) != 0:
            raise SingularMatrix("block-Toeplitz autocovariance is singular")
        col = np.empty(2 * p)
        for i in range(2):
            # row i of (Phi_1..Phi_p) solves R col = (row i of Gamma(1..p))'
            for h in range(p):
                for q in range(2):
                    col[2 * h + q] = gam[h + 1, i, q]
            _chol_solve(R, 2 * p, col)
            for h in range(p):
                for q in range(2):
                    Phi[h, i, q] = col[2 * h + q]
    Sigma = gam_arr[0].copy()
    for j in range(p):
        Sigma -= Phi_arr[j] @ gam_arr[j + 1].T
    Sigma = 0.5 * (Sigma + Sigma.T)
    flagged = False
    if not (Sigma[0, 0] > 0 and Sigma[1, 1] > 0
            and Sigma[0, 0] * Sigma[1, 1] - Sigma[0, 1] ** 2 > 0):
        ratio = np.empty(2)
        tmp = np.zeros(p + 1)
        for i, e in enumerate((e1, e2)):
            g = np.array([_autocov(e, h) for h in range(p + 1)])
            ratio[i] = _levinson(g, p, np.zeros(p), tmp) / gam_arr[0, i, i]
        Sigma = gam_arr[0] * np.sqrt(np.outer(ratio, ratio))
        flagged = True
    return Phi_arr, Sigma, flagged


def bi_terms_given(x1, x2, season, cps1, cps2, Py_ssize_t T, Py_ssize_t p, double nu,
                   Phi_in, Sigma_in):
    """``(logdet_K, Q)`` for fixed VAR parameters ``Phi`` (p,2,2) and ``Sigma``."""
    cdef const double[::1] a1 = np.ascontiguousarray(x1, dtype=np.float64)
    cdef const double[::1] a2 = np.ascontiguousarray(x2, dtype=np.float64)
    cdef const long[::1] sv = np.ascontiguousarray(season, dtype=np.int64)
    cdef const long[::1] c1 = np.ascontiguousarray(cps1, dtype=np.int64)
    cdef const long[::1] c2 = np.ascontiguousarray(cps2, dtype=np.int64)
    cdef const double[:, :, ::1] Phi = np.ascontiguousarray(Phi_in, dtype=np.float64).reshape(p, 2, 2)
    Sig = np.asarray(Sigma_in, dtype=np.float64)
    Sinv = np.linalg.inv(Sig)
    cdef double[:, ::1] U = np.ascontiguousarray(np.linalg.cholesky(Sinv).T)
    cdef Py_ssize_t n = a1.shape[0], m1 = c1.shape[0], m2 = c2.shape[0]
    cdef Py_ssize_t m = m1 + m2, k = m + 2 * T + 1, t, j, i, kk, u, cnt1, cnt2, cz, a
    cdef long[::1] reg1 = np.empty(n, dtype=np.int64)
    cdef long[::1] reg2 = np.empty(n, dtype=np.int64)
    cdef double[:, ::1] G = np.zeros((k, k))
    cdef Py_ssize_t cap = 4 * p + 6
    cdef long[::1] idx1 = np.empty(cap, dtype=np.int64)
    cdef long[::1] idx2 = np.empty(cap, dtype=np.int64)
    cdef long[::1] idxz = np.empty(cap, dtype=np.int64)
    cdef double[::1] val1 = np.empty(cap)
    cdef double[::1] val2 = np.empty(cap)
    cdef double[::1] valz = np.empty(cap)
    cdef double[::1] ridge = np.empty(m) if m else np.zeros(1)
    cdef double c, xw
    cdef long[::1] regk
    cdef long offA = m, offD
    _regimes(n, c1, reg1)
    _regimes(n, c2, reg2)
    for i in range(m1):
        ridge[i] = 1.0 / (nu * Sig[0, 0])
    for i in range(m2):
        ridge[m1 + i] = 1.0 / (nu * Sig[1, 1])
    with nogil:
        for t in range(p, n):
            # component 0 row
            cnt1 = 0
            xw = 0.0
            for j in range(p + 1):
                u = t - j
                for kk in range(2):
                    if j == 0:
                        c = 1.0 if kk == 0 else 0.0
                    else:
                        c = -Phi[j - 1, 0, kk]
                    if c == 0.0:
                        continue
                    cnt1 = _add(&idx1[0], &val1[0], cnt1, offA + kk * T + sv[u], c)
                    if kk == 0:
                        if reg1[u] > 0:
                            cnt1 = _add(&idx1[0], &val1[0], cnt1, reg1[u] - 1, c)
                        xw += c * a1[u]
                    else:
                        if reg2[u] > 0:
                            cnt1 = _add(&idx1[0], &val1[0], cnt1, m1 + reg2[u] - 1, c)
                        xw += c * a2[u]
            idx1[cnt1] = k - 1
            val1[cnt1] = xw
            cnt1 += 1
            # component 1 row
            cnt2 = 0
            xw = 0.0
            for j in range(p + 1):
                u = t - j
                for kk in range(2):
                    if j == 0:
                        c = 1.0 if kk == 1 else 0.0
                    else:
                        c = -Phi[j - 1, 1, kk]
                    if c == 0.0:
                        continue
                    cnt2 = _add(&idx2[0], &val2[0], cnt2, offA + kk * T + sv[u], c)
                    if kk == 0:
                        if reg1[u] > 0:
                            cnt2 = _add(&idx2[0], &val2[0], cnt2, reg1[u] - 1, c)
                        xw += c * a1[u]
                    else:
                        if reg2[u] > 0:
                            cnt2 = _add(&idx2[0], &val2[0], cnt2, m1 + reg2[u] - 1, c)
                        xw += c * a2[u]
            idx2[cnt2] = k - 1
            val2[cnt2] = xw
            cnt2 += 1
            # z1 = U00*y1 + U01*y2 ; z2 = U11*y2
            cz = 0
            for a in range(cnt1):
                cz = _add(&idxz[0], &valz[0], cz, idx1[a], U[0, 0] * val1[a])
            for a in range(cnt2):
                cz = _add(&idxz[0], &valz[0], cz, idx2[a], U[0, 1] * val2[a])
            _accumulate(&G[0, 0], k, &idxz[0], &valz[0], cz)
            for a in range(cnt2):
                val2[a] *= U[1, 1]
            _accumulate(&G[0, 0], k, &idx2[0], &val2[0], cnt2)
    logdet, Q = _profile(G, k, m, ridge)
    return logdet, Q


def bi_terms(x1, x2, season, cps1, cps2, Py_ssize_t T, Py_ssize_t p, double nu):
    """Return ``(Phi, Sigma, flagged, logdet_K, Q)``."""
    Phi, Sigma, flagged = bi_estimate(x1, x2, season, cps1, cps2, T, p)
    logdet, Q = bi_terms_given(x1, x2, season, cps1, cps2, T, p, nu, Phi, Sigma)
    return Phi, Sigma, flagged, logdet, Q
