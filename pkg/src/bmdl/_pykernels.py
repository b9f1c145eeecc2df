"""Pure numpy implementation of the scoring kernels.

This module is the fallback for :mod:`bmdl._ckernels` and defines the
reference algorithm the compiled code mirrors:

1. OLS fit of seasonal + regime means from sufficient statistics (season
   counts, regime lengths, season-by-regime counts) via the Schur complement
   of the regime block.
2. Sample autocovariances of the OLS residuals (divisor ``N``) and
   Yule-Walker AR coefficients by Levinson-Durbin recursion.
3. Gram matrix of the whitened columns ``[D | A | X]``. A Cholesky factor of
   the Gram matrix with ``1/nu`` added to the regime block gives, at once,
   ``log|D'D + I/nu|`` (leading block) and the profiled residual sum of
   squares (square of the last pivot).

Times in ``cps`` are 1-based and sorted; ``season`` holds 0-based season
indices for rows ``0..N-1``.
"""
import numpy as np
from scipy.linalg import solve_triangular

from .errors import DegenerateDesign, SingularMatrix

PIVOT_TOL = 1e-12

IMPLEMENTATION = "python"


def regimes(n, cps):
    """0-based regime index of each row (0 = first regime)."""
    return np.searchsorted(np.asarray(cps, dtype=np.int64) - 1, np.arange(n), side="right")


def _chol(M, err=SingularMatrix, what="matrix"):
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise err(f"{what} is not positive definite") from None
    d = np.diag(M)
    if np.any(np.diag(L) ** 2 < PIVOT_TOL * d):
        raise err(f"{what} is numerically singular")
    return L


def _fwd(L, b):
    return solve_triangular(L, b, lower=True, check_finite=False)


def _chol_solve(L, b):
    return solve_triangular(L.T, _fwd(L, b), lower=False, check_finite=False)


def ols_fit(x, season, cps, T):
    """Seasonal + regime-mean OLS fit; returns ``(residuals, s, mu)``."""
    n = x.shape[0]
    m = len(cps)
    nv = np.bincount(season, minlength=T).astype(float)
    if np.any(nv == 0):
        raise DegenerateDesign("a season has no observations")
    sxv = np.bincount(season, weights=x, minlength=T)
    if m == 0:
        s = sxv / nv
        return x - s[season], s, np.zeros(0)
    reg = regimes(n, cps)
    lengths = np.bincount(reg, minlength=m + 1).astype(float)
    if np.any(lengths == 0):
        raise DegenerateDesign("empty regime")
    C = np.bincount(season * (m + 1) + reg, minlength=T * (m + 1)).reshape(T, m + 1)[:, 1:]
    sxr = np.bincount(reg, weights=x, minlength=m + 1)[1:]
    Cn = C / nv[:, None]
    S = np.diag(lengths[1:]) - C.T @ Cn
    rhs = sxr - Cn.T @ sxv
    L = _chol(S, DegenerateDesign, "regime design")
    mu = _chol_solve(L, rhs)
    s = (sxv - C @ mu) / nv
    return x - s[season] - np.concatenate(([0.0], mu))[reg], s, mu


def autocov(e, p):
    n = e.shape[0]
    return np.array([e[h:] @ e[:n - h] for h in range(p + 1)]) / n


def levinson(g, p):
    """Yule-Walker solve ``Gamma_p phi = gamma_p``; returns ``(phi, sigma2)``."""
    v = g[0]
    if not v > 0:
        raise SingularMatrix("zero residual autocovariance (constant residuals)")
    phi = np.zeros(p)
    for k in range(p):
        acc = g[k + 1] - phi[:k] @ g[k:0:-1]
        kap = acc / v
        prev = phi[:k].copy()
        phi[:k] = prev - kap * prev[::-1]
        phi[k] = kap
        v *= 1.0 - kap * kap
        if not v > 0:
            raise SingularMatrix("Toeplitz autocovariance matrix is singular")
    return phi, v


def _design_columns(n, season, cps, T, x):
    m = len(cps)
    Y = np.zeros((n, m + T + 1))
    reg = regimes(n, cps)
    rows = np.arange(n)
    mask = reg > 0
    Y[rows[mask], reg[mask] - 1] = 1.0
    Y[rows, m + season] = 1.0
    Y[:, -1] = x
    return Y


def _whiten_rows(Y, phi):
    p = len(phi)
    n = Y.shape[0]
    out = Y[p:].copy()
    for j in range(1, p + 1):
        out -= phi[j - 1] * Y[p - j:n - j]
    return out


def _profile(G, m, ridge):
    """Cholesky of ``G + ridge*I_m`` (design part guarded); ``(logdet_m, rss)``."""
    k = G.shape[0] - 1
    Gd = G[:k, :k].copy()
    if ridge:
        Gd[np.arange(m), np.arange(m)] += ridge
    L = _chol(Gd, SingularMatrix, "whitened design")
    l = _fwd(L, G[:k, k])
    rss = G[k, k] - l @ l
    logdet = 2.0 * float(np.sum(np.log(np.diag(L)[:m]))) if m else 0.0
    return logdet, rss


def uni_terms(x, season, cps, T, p, nu):
    """Return ``(sigma2, logdet, sigma2_inf, phi)`` for one univariate config."""
    x = np.asarray(x, dtype=float)
    season = np.asarray(season, dtype=np.int64)
    cps = np.asarray(cps, dtype=np.int64)
    n = x.shape[0]
    m = len(cps)
    e, _, _ = ols_fit(x, season, cps, T)
    phi, _ = levinson(autocov(e, p), p)
    Y = _whiten_rows(_design_columns(n, season, cps, T, x), phi)
    G = Y.T @ Y
    logdet, rss = _profile(G, m, 1.0 / nu)
    _, rss_inf = _profile(G, m, 0.0)
    if not (rss > 0 and rss_inf > 0):
        raise SingularMatrix("zero residual variance")
    return rss / (n - p), logdet, rss_inf / (n - p), phi


# ---------------------------------------------------------------- bivariate


def gls_fit(x1, x2, season, cps1, cps2, T, W):
    """GLS residuals of the block design under weight ``W (x) I_N``."""
    n = x1.shape[0]
    Z1 = _design_columns(n, season, cps1, T, x1)[:, :-1]
    Z2 = _design_columns(n, season, cps2, T, x2)[:, :-1]
    k1 = Z1.shape[1]
    H = np.block([[W[0, 0] * Z1.T @ Z1, W[0, 1] * Z1.T @ Z2],
                  [W[1, 0] * Z2.T @ Z1, W[1, 1] * Z2.T @ Z2]])
    rhs = np.concatenate([Z1.T @ (W[0, 0] * x1 + W[0, 1] * x2),
                          Z2.T @ (W[1, 0] * x1 + W[1, 1] * x2)])
    L = _chol(H, DegenerateDesign, "GLS design")
    beta = _chol_solve(L, rhs)
    return x1 - Z1 @ beta[:k1], x2 - Z2 @ beta[k1:]


def var_yule_walker(E, p):
    """Block-Toeplitz Yule-Walker for a bivariate residual matrix ``E (N x 2)``.

    Returns ``(Phi, Sigma, Gammas)`` with ``Phi`` of shape (p, 2, 2).
    """
    n = E.shape[0]
    gam = np.array([E[h:].T @ E[:n - h] for h in range(p + 1)]) / n
    if p == 0:
        return np.zeros((0, 2, 2)), gam[0].copy(), gam
    R = np.zeros((2 * p, 2 * p))
    for j in range(p):
        for h in range(p):
            R[2 * j:2 * j + 2, 2 * h:2 * h + 2] = gam[h - j] if h >= j else gam[j - h].T
    rhs = np.hstack([gam[h] for h in range(1, p + 1)])
    L = _chol(R, SingularMatrix, "block-Toeplitz autocovariance")
    Phis = _chol_solve(L, rhs.T).T
    Phi = np.stack([Phis[:, 2 * j:2 * j + 2] for j in range(p)])
    Sigma = gam[0] - sum(Phi[j] @ gam[j + 1].T for j in range(p))
    return Phi, Sigma, gam


def bi_estimate(x1, x2, season, cps1, cps2, T, p):
    """Return ``(Phi, Sigma, flagged)`` from OLS -> GLS -> VAR Yule-Walker."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    season = np.asarray(season, dtype=np.int64)
    cps1 = np.asarray(cps1, dtype=np.int64)
    cps2 = np.asarray(cps2, dtype=np.int64)
    n = x1.shape[0]
    e1, _, _ = ols_fit(x1, season, cps1, T)
    e2, _, _ = ols_fit(x2, season, cps2, T)
    g0 = np.array([[e1 @ e1, e1 @ e2], [e2 @ e1, e2 @ e2]]) / n
    det = g0[0, 0] * g0[1, 1] - g0[0, 1] * g0[1, 0]
    if not (g0[0, 0] > 0 and g0[1, 1] > 0 and det > PIVOT_TOL * g0[0, 0] * g0[1, 1]):
        raise SingularMatrix("OLS residual covariance is singular")
    W = np.array([[g0[1, 1], -g0[0, 1]], [-g0[1, 0], g0[0, 0]]]) / det
    r1, r2 = gls_fit(x1, x2, season, cps1, cps2, T, W)
    E = np.column_stack([r1, r2])
    Phi, Sigma, gam = var_yule_walker(E, p)
    Sigma = 0.5 * (Sigma + Sigma.T)
    flagged = False
    if not (Sigma[0, 0] > 0 and Sigma[1, 1] > 0
            and Sigma[0, 0] * Sigma[1, 1] - Sigma[0, 1] ** 2 > 0):
        ratio = np.array([levinson(autocov(E[:, i], p), p)[1] / gam[0][i, i] for i in range(2)])
        Sigma = gam[0] * np.sqrt(np.outer(ratio, ratio))
        flagged = True
    return Phi, Sigma, flagged


def bi_terms_given(x1, x2, season, cps1, cps2, T, p, nu, Phi, Sigma):
    """``(logdet_K, Q)`` for fixed VAR parameters ``Phi`` (p,2,2) and ``Sigma``."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    season = np.asarray(season, dtype=np.int64)
    cps1 = np.asarray(cps1, dtype=np.int64)
    cps2 = np.asarray(cps2, dtype=np.int64)
    n = x1.shape[0]
    m1, m2 = len(cps1), len(cps2)
    k = m1 + m2 + 2 * T + 1
    Y = np.zeros((2, n, k))
    reg1, reg2 = regimes(n, cps1), regimes(n, cps2)
    rows = np.arange(n)
    msk = reg1 > 0
    Y[0, rows[msk], reg1[msk] - 1] = 1.0
    msk = reg2 > 0
    Y[1, rows[msk], m1 + reg2[msk] - 1] = 1.0
    Y[0, rows, m1 + m2 + season] = 1.0
    Y[1, rows, m1 + m2 + T + season] = 1.0
    Y[0, :, -1] = x1
    Y[1, :, -1] = x2
    Yw = Y[:, p:].copy()
    for j in range(1, p + 1):
        Yw -= np.einsum("ik,knc->inc", Phi[j - 1], Y[:, p - j:n - j])
    S = np.linalg.inv(Sigma)
    G = (S[0, 0] * Yw[0].T @ Yw[0] + S[1, 1] * Yw[1].T @ Yw[1]
         + S[0, 1] * (Yw[0].T @ Yw[1] + Yw[1].T @ Yw[0]))
    kd = k - 1
    Gd = G[:kd, :kd].copy()
    idx = np.arange(m1 + m2)
    Gd[idx, idx] += np.concatenate([np.full(m1, 1.0 / (nu * Sigma[0, 0])),
                                    np.full(m2, 1.0 / (nu * Sigma[1, 1]))])
    L = _chol(Gd, SingularMatrix, "whitened bivariate design")
    l = _fwd(L, G[:kd, kd])
    Q = G[kd, kd] - l @ l
    logdet = 2.0 * float(np.sum(np.log(np.diag(L)[:m1 + m2]))) if m1 + m2 else 0.0
    return logdet, Q


def bi_terms(x1, x2, season, cps1, cps2, T, p, nu):
    """Return ``(Phi, Sigma, flagged, logdet_K, Q)``."""
    Phi, Sigma, flagged = bi_estimate(x1, x2, season, cps1, cps2, T, p)
    logdet, Q = bi_terms_given(x1, x2, season, cps1, cps2, T, p, nu, Phi, Sigma)
    return Phi, Sigma, flagged, logdet, Q
