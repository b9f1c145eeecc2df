"""Bivariate scoring: GLS residuals, VAR Yule-Walker, Dirichlet prior, BMDL.

Both components share the period ``T`` and the AR order ``p``. Stacked
vectors put component 1 first, then component 2, as in ``(x_1', x_2')'``.
As in :mod:`bmdl.univariate`, a dense route (explicit Kronecker algebra,
used for estimates and cross-checks) sits beside the sparse kernel route.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import lgamma, log

import numpy as np

from . import kernels
from .errors import DimensionMismatch, SingularMatrix
from .model import ChangepointConfig, FittedParams, Hyperparams, Metadata, SeriesData
from .univariate import (
    COND_LIMIT,
    ScoreBreakdown,
    _seasons,
    build_design,
    ols_residuals,
    sample_autocov,
    yule_walker,
)

__all__ = [
    "VarEstimates",
    "CategoryCounts",
    "block_design",
    "gls_residuals",
    "var_yule_walker",
    "estimate_var",
    "var_whiten",
    "category_counts",
    "bivariate_prior_code_length",
    "bivariate_bmdl_score",
    "bivariate_fit_params",
    "reference_bivariate_bmdl_score",
]

CATEGORIES = ((1, 1), (1, 0), (0, 1), (0, 0))


@dataclass(frozen=True, eq=False)
class VarEstimates:
    """VAR(p) Yule-Walker estimates.

    ``Phi`` has shape (p, 2, 2), ``Sigma`` (2, 2) and ``Gamma`` (p+1, 2, 2)
    with ``Gamma[h] = N^{-1} sum_t e_t e_{t-h}'``. ``flagged`` marks that
    ``Sigma`` came from the positive-definite fallback.
    """

    Phi: np.ndarray
    Sigma: np.ndarray
    Gamma: np.ndarray
    flagged: bool = False


@dataclass(frozen=True)
class CategoryCounts:
    """Counts ``m[k][l]`` of times in category ``l`` among class ``k``.

    Categories ``l`` are (1,1), (1,0), (0,1), (0,0); classes ``k`` are
    undocumented (0) and documented (1).
    """

    undoc: tuple[int, int, int, int]
    doc: tuple[int, int, int, int]


def _check(data: SeriesData, config: ChangepointConfig):
    if data.components != 2 or config.components != 2:
        raise DimensionMismatch("bivariate scoring needs two-component data and config")
    if config.n != data.n or config.p != data.ar_order:
        raise DimensionMismatch(
            f"config is for N={config.n}, p={config.p}; data has N={data.n}, p={data.ar_order}"
        )


def block_design(config: ChangepointConfig, period: int) -> np.ndarray:
    """``G = [[A1, D1, 0, 0], [0, 0, A2, D2]]`` of shape (2N, 2T + m1 + m2)."""
    d1 = build_design(config, period, 0)
    d2 = build_design(config, period, 1)
    top = np.hstack([d1.A, d1.D])
    bot = np.hstack([d2.A, d2.D])
    G = np.zeros((2 * config.n, top.shape[1] + bot.shape[1]))
    G[:config.n, :top.shape[1]] = top
    G[config.n:, top.shape[1]:] = bot
    return G


def _inv_sqrt_factor(S):
    """Upper ``U`` with ``U'U = S^{-1}``."""
    S = np.asarray(S, dtype=float)
    if not (S[0, 0] > 0 and S[1, 1] > 0) or np.linalg.cond(S) > COND_LIMIT:
        raise SingularMatrix("2x2 covariance is singular")
    return np.linalg.cholesky(np.linalg.inv(S)).T


def _kron_apply(U, y):
    """``(U (x) I) y`` for a stacked vector or matrix ``y``."""
    n = y.shape[0] // 2
    return np.concatenate([U[0, 0] * y[:n] + U[0, 1] * y[n:], U[1, 0] * y[:n] + U[1, 1] * y[n:]])


def gls_residuals(data: SeriesData, config: ChangepointConfig) -> np.ndarray:
    """Residuals (N x 2) of the block mean fit weighted by the inverse OLS covariance."""
    _check(data, config)
    X = data.values
    designs = [build_design(config, data.period, i) for i in range(2)]
    e = np.column_stack([ols_residuals(X[:, i], d.A, d.D) for i, d in enumerate(designs)])
    U = _inv_sqrt_factor(e.T @ e / data.n)
    G = block_design(config, data.period)
    x = np.concatenate([X[:, 0], X[:, 1]])
    beta = np.linalg.lstsq(_kron_apply(U, G), _kron_apply(U, x), rcond=None)[0]
    r = x - G @ beta
    return np.column_stack([r[:data.n], r[data.n:]])


def var_yule_walker(E, p: int) -> VarEstimates:
    """Block-Toeplitz Yule-Walker for residuals ``E`` (N x 2)."""
    E = np.asarray(E, dtype=float)
    n = E.shape[0]
    Gam = np.array([E[h:].T @ E[:n - h] for h in range(p + 1)]) / n
    if p == 0:
        Phi = np.zeros((0, 2, 2))
    else:
        R = np.zeros((2 * p, 2 * p))
        for j in range(p):
            for h in range(p):
                R[2 * j:2 * j + 2, 2 * h:2 * h + 2] = Gam[h - j] if h >= j else Gam[j - h].T
        if np.linalg.cond(R) > COND_LIMIT:
            raise SingularMatrix("block-Toeplitz autocovariance is singular")
        rhs = np.hstack(list(Gam[1:]))
        # (Phi_1..Phi_p) R = (Gamma(1)..Gamma(p))
        coef = np.linalg.solve(R.T, rhs.T).T
        Phi = np.stack([coef[:, 2 * j:2 * j + 2] for j in range(p)])
    Sigma = Gam[0] - sum((Phi[j] @ Gam[j + 1].T for j in range(p)), np.zeros((2, 2)))
    return VarEstimates(Phi, 0.5 * (Sigma + Sigma.T), Gam)


def _is_pd(S):
    return S[0, 0] > 0 and S[1, 1] > 0 and S[0, 0] * S[1, 1] - S[0, 1] ** 2 > 0


def estimate_var(data: SeriesData, config: ChangepointConfig) -> VarEstimates:
    """OLS -> GLS -> VAR Yule-Walker, with the positive-definite fallback.

    When the Yule-Walker ``Sigma`` is not positive definite it is replaced by
    ``Gamma(0)`` with entries scaled by ``sqrt(r_i r_j)``, where ``r_i`` is the
    ratio of component ``i``'s univariate Yule-Walker innovation variance to
    its lag-0 autocovariance.
    """
    E = gls_residuals(data, config)
    est = var_yule_walker(E, data.ar_order)
    if _is_pd(est.Sigma):
        return est
    ratio = np.array([
        yule_walker(sample_autocov(E[:, i], data.ar_order))[1] / est.Gamma[0, i, i]
        for i in range(2)
    ])
    Sigma = est.Gamma[0] * np.sqrt(np.outer(ratio, ratio))
    return VarEstimates(est.Phi, Sigma, est.Gamma, flagged=True)


def var_whiten(Y, Phi) -> np.ndarray:
    """Apply ``I - sum_j (Phi_j (x) I) B^j`` to a stacked vector/matrix; keep rows ``p+1..N``.

    Returns the stacked whitened object with ``2 (N - p)`` rows.
    """
    Y = np.asarray(Y, dtype=float)
    Phi = np.asarray(Phi, dtype=float)
    p = Phi.shape[0]
    n = Y.shape[0] // 2
    comps = (Y[:n], Y[n:])
    out = []
    for i in range(2):
        w = comps[i][p:].copy()
        for j in range(1, p + 1):
            for k in range(2):
                w -= Phi[j - 1, i, k] * comps[k][p - j:n - j]
        out.append(w)
    return np.concatenate(out)


# ------------------------------------------------------------------ prior


def category_counts(config: ChangepointConfig, metadata: Metadata | None) -> CategoryCounts:
    n, p = config.n, config.p
    e1 = config.indicators(0).astype(bool)
    e2 = config.indicators(1).astype(bool)
    doc = np.zeros(n - p, dtype=bool)
    if metadata is not None:
        for t in metadata.documented_times:
            doc[t - p - 1] = True
    out = []
    for mask in (~doc, doc):
        out.append(tuple(int(np.sum(mask & (e1 == bool(a)) & (e2 == bool(b))))
                         for a, b in CATEGORIES))
    return CategoryCounts(*out)


def bivariate_prior_code_length(config: ChangepointConfig, metadata: Metadata | None,
                                hp: Hyperparams, normalized: bool = False) -> float:
    """Negative log Dirichlet-Multinomial prior of the paired indicators (nats).

    The default keeps only ``-sum_k sum_l log Gamma(alpha_l^(k) + m_l^(k))``;
    ``normalized=True`` adds the configuration-free normalising terms.
    """
    counts = category_counts(config, metadata)
    total = 0.0
    for alpha, m in ((hp.alpha_undoc, counts.undoc), (hp.alpha_doc, counts.doc)):
        total += sum(lgamma(a + c) for a, c in zip(alpha, m))
        if normalized:
            total += lgamma(sum(alpha)) - lgamma(sum(alpha) + sum(m))
            total -= sum(lgamma(a) for a in alpha)
    return -total


# ------------------------------------------------------------------ scores


def _breakdown(config, metadata, hp, Sigma, logdet, Q, flagged, normalized):
    n_eff = config.n - config.p
    m1, m2 = config.counts
    det = Sigma[0, 0] * Sigma[1, 1] - Sigma[0, 1] * Sigma[1, 0]
    fit = 0.5 * n_eff * log(det) + 0.5 * Q
    mu_pen = 0.0
    if m1 + m2:
        mu_pen = 0.5 * (m1 * log(hp.nu * Sigma[0, 0]) + m2 * log(hp.nu * Sigma[1, 1])) + 0.5 * logdet
    return ScoreBreakdown(fit, mu_pen, bivariate_prior_code_length(config, metadata, hp, normalized),
                          "bmdl", flagged)


def bivariate_bmdl_score(data: SeriesData, config: ChangepointConfig,
                         metadata: Metadata | None = None, hp: Hyperparams | None = None,
                         normalized: bool = False) -> ScoreBreakdown:
    """Bivariate BMDL (nats, up to a constant)."""
    hp = hp or Hyperparams()
    _check(data, config)
    X = data.values
    c1 = np.asarray(config.times[0], dtype=np.int64)
    c2 = np.asarray(config.times[1], dtype=np.int64)
    _, Sigma, flagged, logdet, Q = kernels.bi_terms(
        np.ascontiguousarray(X[:, 0]), np.ascontiguousarray(X[:, 1]),
        _seasons(data.n, data.period), c1, c2, data.period, data.ar_order, hp.nu)
    return _breakdown(config, metadata, hp, Sigma, logdet, Q, flagged, normalized)


def _whitened_blocks(data, config, est):
    """Whitened, Cholesky-weighted response and design split into (A-part, D-part)."""
    G = block_design(config, data.period)
    x = np.concatenate([data.values[:, 0], data.values[:, 1]])
    U = _inv_sqrt_factor(est.Sigma)
    Gw = _kron_apply(U, var_whiten(G, est.Phi))
    xw = _kron_apply(U, var_whiten(x, est.Phi))
    T = data.period
    m1, m2 = config.counts
    a_cols = np.r_[0:T, T + m1:2 * T + m1]
    d_cols = np.r_[T:T + m1, 2 * T + m1:2 * T + m1 + m2]
    return xw, Gw[:, a_cols], Gw[:, d_cols]


def _solve(xw, Aw, Dw, prec):
    """Minimise ``||xw - Aw s - Dw mu||^2 + sum prec_i mu_i^2``; ``(s, mu, objective)``."""
    k, m = Aw.shape[1], Dw.shape[1]
    M = np.block([[Aw, Dw], [np.zeros((m, k)), np.diag(np.sqrt(prec))]]) if m else Aw
    rows = np.concatenate([xw, np.zeros(m)])
    sv = np.linalg.svd(M, compute_uv=False)
    if not sv[-1] > sv[0] / COND_LIMIT:
        raise SingularMatrix("whitened block design is numerically singular")
    coef = np.linalg.lstsq(M, rows, rcond=None)[0]
    r = rows - M @ coef
    return coef[:k], coef[k:], float(r @ r)


def _precisions(config, Sigma, nu):
    m1, m2 = config.counts
    return np.r_[np.full(m1, 1.0 / (nu * Sigma[0, 0])), np.full(m2, 1.0 / (nu * Sigma[1, 1]))]


def reference_bivariate_bmdl_score(data: SeriesData, config: ChangepointConfig,
                                   metadata: Metadata | None = None,
                                   hp: Hyperparams | None = None,
                                   normalized: bool = False) -> ScoreBreakdown:
    """Bivariate BMDL through the dense route; slow, used to cross-check the kernels."""
    hp = hp or Hyperparams()
    _check(data, config)
    est = estimate_var(data, config)
    xw, Aw, Dw = _whitened_blocks(data, config, est)
    prec = _precisions(config, est.Sigma, hp.nu)
    _, _, Q = _solve(xw, Aw, Dw, prec)
    logdet = 0.0
    if Dw.shape[1]:
        sign, logdet = np.linalg.slogdet(Dw.T @ Dw + np.diag(prec))
        if sign <= 0:
            raise SingularMatrix("regime information matrix is not positive definite")
    return _breakdown(config, metadata, hp, est.Sigma, logdet, Q, est.flagged, normalized)


def bivariate_fit_params(data: SeriesData, config: ChangepointConfig,
                         hp: Hyperparams | None = None) -> FittedParams:
    """Jointly weighted seasonal means and posterior-mean regime shifts for both components."""
    hp = hp or Hyperparams()
    _check(data, config)
    est = estimate_var(data, config)
    xw, Aw, Dw = _whitened_blocks(data, config, est)
    s, mu, _ = _solve(xw, Aw, Dw, _precisions(config, est.Sigma, hp.nu))
    T = data.period
    m1 = config.counts[0]
    notes = ("noise covariance from positive-definite fallback",) if est.flagged else ()
    return FittedParams(s.reshape(2, T), (mu[:m1], mu[m1:]), est.Phi, est.Sigma,
                        est.flagged, notes)
