"""Univariate scoring: design, whitening, Yule-Walker, closed forms and scores.

Two routes compute the same quantities:

* the dense route (``build_design`` -> ``ols_residuals`` -> ``sample_autocov``
  -> ``yule_walker`` -> ``whiten`` -> ``estimate_*``) works on explicit
  matrices with orthogonal-decomposition solves and is used for parameter
  estimates and as a reference;
* the kernel route (:mod:`bmdl.kernels`) exploits the sparsity of the
  whitened design and is what the scores and the search call.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import lgamma, log

import numpy as np

from . import kernels
from .errors import DegenerateDesign, DimensionMismatch, EmptyModel, SingularMatrix
from .model import (
    ChangepointConfig,
    FittedParams,
    Hyperparams,
    Metadata,
    SeriesData,
    classify_counts,
    regime_lengths,
    season_of,
)

__all__ = [
    "DesignPair",
    "WhitenedSystem",
    "AutocovEstimates",
    "ScoreBreakdown",
    "build_design",
    "whiten",
    "ols_residuals",
    "sample_autocov",
    "yule_walker",
    "whitened_system",
    "estimate_seasonal_means",
    "estimate_noise_variance",
    "estimate_regime_means",
    "prior_code_length",
    "bmdl_score",
    "mdl_score",
    "bic_score",
    "mdl_breakdown",
    "bic_breakdown",
    "fit_params",
    "reference_bmdl_score",
]

COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class DesignPair:
    """Seasonal indicators ``A`` (N x T) and regime indicators ``D`` (N x m).

    ``D`` has one column per regime after the first, so rows in the first
    regime are all zero.
    """

    A: np.ndarray
    D: np.ndarray


@dataclass(frozen=True, eq=False)
class WhitenedSystem:
    """AR-filtered rows ``p+1..N`` of the series and design, and the filter used."""

    X: np.ndarray
    A: np.ndarray
    D: np.ndarray
    phi: np.ndarray

    @property
    def rows(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.D.shape[1]


@dataclass(frozen=True, eq=False)
class AutocovEstimates:
    """Sample autocovariances ``gamma[0..p]`` (divisor N) and the Yule-Walker system."""

    gamma: np.ndarray

    @property
    def p(self) -> int:
        return self.gamma.shape[0] - 1

    @property
    def Gamma_p(self) -> np.ndarray:
        idx = np.arange(self.p)
        return self.gamma[np.abs(idx[:, None] - idx[None, :])]

    @property
    def gamma_p(self) -> np.ndarray:
        return self.gamma[1:]


@dataclass(frozen=True)
class ScoreBreakdown:
    """Additive decomposition of a score (nats).

    ``total`` is formed once at construction as
    ``fit_term + mu_penalty + config_penalty`` in that order.
    """

    fit_term: float
    mu_penalty: float
    config_penalty: float
    objective: str = "bmdl"
    flagged: bool = False
    total: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "fit_term", float(self.fit_term))
        object.__setattr__(self, "mu_penalty", float(self.mu_penalty))
        object.__setattr__(self, "config_penalty", float(self.config_penalty))
        object.__setattr__(self, "total", self.fit_term + self.mu_penalty + self.config_penalty)

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "fit_term": self.fit_term,
            "mu_penalty": self.mu_penalty,
            "config_penalty": self.config_penalty,
            "total": self.total,
            "flagged": self.flagged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreBreakdown":
        return cls(d["fit_term"], d["mu_penalty"], d["config_penalty"],
                   d.get("objective", "bmdl"), bool(d.get("flagged", False)))


# ------------------------------------------------------------------ dense route


def build_design(config: ChangepointConfig, period: int, component: int = 0) -> DesignPair:
    """Indicator design for one component of ``config``."""
    n = config.n
    t = np.arange(1, n + 1)
    A = np.zeros((n, period))
    A[t - 1, season_of(t, period) - 1] = 1.0
    cps = config.times[component]
    D = np.zeros((n, len(cps)))
    bounds = [*cps, n + 1]
    for r in range(len(cps)):
        D[bounds[r] - 1:bounds[r + 1] - 1, r] = 1.0
    return DesignPair(A, D)


def whiten(Y, phi) -> np.ndarray:
    """Apply ``1 - sum_j phi_j B^j`` and keep rows ``p+1..N``.

    Works on a vector or on the rows of a matrix.
    """
    Y = np.asarray(Y, dtype=float)
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if phi.ndim != 1:
        raise DimensionMismatch("phi must be a vector")
    p = phi.shape[0]
    n = Y.shape[0]
    if n <= p:
        raise DimensionMismatch(f"need more than p={p} rows, got {n}")
    out = Y[p:].copy()
    for j in range(1, p + 1):
        out -= phi[j - 1] * Y[p - j:n - j]
    return out


def _check_rank(M, what):
    if M.shape[1] == 0:
        return
    sv = np.linalg.svd(M, compute_uv=False)
    if not sv[-1] > sv[0] / COND_LIMIT:
        raise DegenerateDesign(f"{what} is rank deficient (condition number > {COND_LIMIT:g})")


def ols_residuals(X, A, D) -> np.ndarray:
    """Residuals of ``X`` after least squares on ``[A | D]``."""
    X = np.asarray(X, dtype=float)
    if D.shape[1] and np.any(D.sum(axis=0) == 0):
        raise DegenerateDesign("empty regime")
    Z = np.hstack([A, D])
    _check_rank(Z, "seasonal/regime design")
    beta = np.linalg.lstsq(Z, X, rcond=None)[0]
    return X - Z @ beta


def sample_autocov(e, p: int) -> AutocovEstimates:
    """Autocovariances at lags ``0..p`` with divisor ``N`` at every lag."""
    e = np.asarray(e, dtype=float)
    n = e.shape[0]
    if n <= p:
        raise DimensionMismatch(f"need more than p={p} residuals")
    return AutocovEstimates(np.array([e[h:] @ e[:n - h] for h in range(p + 1)]) / n)


def yule_walker(acov: AutocovEstimates) -> tuple[np.ndarray, float]:
    """Solve the Yule-Walker equations; returns ``(phi, innovation variance)``."""
    p = acov.p
    if not acov.gamma[0] > 0:
        raise SingularMatrix("zero residual autocovariance (constant residuals)")
    if p == 0:
        return np.zeros(0), float(acov.gamma[0])
    G = acov.Gamma_p
    if np.linalg.cond(G) > COND_LIMIT:
        raise SingularMatrix("Toeplitz autocovariance matrix is singular")
    phi = np.linalg.solve(G, acov.gamma_p)
    return phi, float(acov.gamma[0] - acov.gamma_p @ phi)


def _component_values(data: SeriesData, config: ChangepointConfig, component: int):
    if config.components != 1:
        raise DimensionMismatch("univariate scoring needs a one-component config")
    if config.n != data.n or config.p != data.ar_order:
        raise DimensionMismatch(
            f"config is for N={config.n}, p={config.p}; data has N={data.n}, p={data.ar_order}"
        )
    if not 0 <= component < data.components:
        raise DimensionMismatch("component index out of range")
    return np.ascontiguousarray(data.values[:, component])


def whitened_system(data: SeriesData, config: ChangepointConfig, component: int = 0,
                    phi=None) -> WhitenedSystem:
    """Whitened system, estimating ``phi`` from OLS residuals unless given."""
    x = _component_values(data, config, component)
    des = build_design(config, data.period)
    p = data.ar_order
    if phi is None:
        e = ols_residuals(x, des.A, des.D)
        phi, _ = yule_walker(sample_autocov(e, p))
    phi = np.asarray(phi, dtype=float).reshape(p)
    return WhitenedSystem(whiten(x, phi), whiten(des.A, phi), whiten(des.D, phi), phi)


def _ridge_lstsq(Z, D, y, nu):
    """Minimise ``||y - Z b - D mu||^2 + ||mu||^2 / nu``; returns ``(b, mu, objective)``.

    ``nu = inf`` drops the penalty; ``nu = 0`` forces ``mu = 0``.
    """
    k, m = Z.shape[1], D.shape[1]
    if m == 0 or nu == 0:
        M = Z
        rows = y
    elif np.isinf(nu):
        M = np.hstack([Z, D])
        rows = y
    else:
        M = np.block([[Z, D], [np.zeros((m, k)), np.eye(m) / np.sqrt(nu)]])
        rows = np.concatenate([y, np.zeros(m)])
    if M.shape[1]:
        sv = np.linalg.svd(M, compute_uv=False)
        if not sv[-1] > sv[0] / COND_LIMIT:
            raise SingularMatrix("whitened design is numerically singular")
        coef = np.linalg.lstsq(M, rows, rcond=None)[0]
    else:
        coef = np.zeros(0)
    resid = rows - M @ coef
    b = coef[:k]
    mu = coef[k:] if (m and nu != 0) else np.zeros(m)
    return b, mu, float(resid @ resid)


def estimate_seasonal_means(ws: WhitenedSystem, nu: float) -> np.ndarray:
    """Seasonal means after integrating the regime means out under prior scale ``nu``."""
    return _ridge_lstsq(ws.A, ws.D, ws.X, nu)[0]


def _quad_B(ws: WhitenedSystem, r, nu):
    """``r' B r`` with ``B = I - D (D'D + I/nu)^{-1} D'``."""
    return _ridge_lstsq(np.zeros((ws.rows, 0)), ws.D, r, nu)[2]


def estimate_noise_variance(ws: WhitenedSystem, s_hat, nu: float) -> float:
    """Profiled innovation variance (divisor ``N - p``) at seasonal means ``s_hat``."""
    r = ws.X - ws.A @ np.asarray(s_hat, dtype=float)
    return _quad_B(ws, r, nu) / ws.rows


def estimate_regime_means(ws: WhitenedSystem, s_hat, nu: float) -> np.ndarray:
    """Posterior mean of the regime means (regimes 2..m+1) given ``s_hat``."""
    if ws.m == 0:
        raise EmptyModel("no regime means in the empty model")
    if nu == 0:
        return np.zeros(ws.m)
    r = ws.X - ws.A @ np.asarray(s_hat, dtype=float)
    return _ridge_lstsq(np.zeros((ws.rows, 0)), ws.D, r, nu)[1]


# ------------------------------------------------------------------ prior


def _beta_binomial(a, b, n, m, normalized):
    val = lgamma(a + m) + lgamma(b + n - m)
    if normalized:
        val += -lgamma(a + b + n) - lgamma(a) - lgamma(b) + lgamma(a + b)
    return val


def prior_code_length(config: ChangepointConfig, metadata: Metadata | None,
                      hp: Hyperparams, component: int = 0, normalized: bool = False) -> float:
    """Negative log prior of one component's indicators (nats).

    The default drops the configuration-free normalising terms, leaving
    ``-sum_k log{Gamma(a + m_k) Gamma(b_k + N_k - m_k)}`` over the undocumented
    and documented classes. With ``normalized=True`` the full Beta-Binomial
    log mass is returned.
    """
    m1, m2, n1, n2 = classify_counts(config, metadata, component)
    total = _beta_binomial(hp.a, hp.b_undoc, n1, m1, normalized)
    total += _beta_binomial(hp.a, hp.b_doc, n2, m2, normalized)
    return -total


# ------------------------------------------------------------------ kernel route


_SEASON_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _seasons(n, period):
    key = (n, period)
    s = _SEASON_CACHE.get(key)
    if s is None:
        s = np.arange(n, dtype=np.int64) % period
        s.setflags(write=False)
        _SEASON_CACHE[key] = s
    return s


def _terms(data, config, component, nu):
    x = _component_values(data, config, component)
    cps = np.asarray(config.times[0], dtype=np.int64)
    return kernels.uni_terms(x, _seasons(data.n, data.period), cps, data.period,
                             data.ar_order, nu)


def bmdl_breakdown_from_terms(config, metadata, hp, sigma2, logdet, normalized=False,
                              objective="bmdl"):
    n_eff = config.n - config.p
    m = config.m
    fit = 0.5 * n_eff * log(sigma2)
    mu_pen = 0.5 * m * log(hp.nu) + 0.5 * logdet if m else 0.0
    return ScoreBreakdown(fit, mu_pen, prior_code_length(config, metadata, hp, 0, normalized),
                          objective)


def bmdl_score(data: SeriesData, config: ChangepointConfig, metadata: Metadata | None = None,
               hp: Hyperparams | None = None, component: int = 0,
               normalized: bool = False) -> ScoreBreakdown:
    """BMDL of a single-component configuration (nats, up to a constant).

    ``normalized=True`` uses the full Beta-Binomial prior mass so that
    scores are comparable across series lengths.
    """
    hp = hp or Hyperparams()
    sigma2, logdet, _, _ = _terms(data, config, component, hp.nu)
    return bmdl_breakdown_from_terms(config, metadata, hp, sigma2, logdet, normalized)


def mdl_breakdown_from_terms(config, sigma2_inf):
    n_eff = config.n - config.p
    m = config.m
    lengths = regime_lengths(config)[1:]
    return ScoreBreakdown(0.5 * n_eff * log(sigma2_inf), 0.5 * float(np.sum(np.log(lengths))),
                          log(m + 1) + (m + 1) * log(n_eff), "mdl")


def bic_breakdown_from_terms(config, sigma2_inf):
    n_eff = config.n - config.p
    return ScoreBreakdown(0.5 * n_eff * log(sigma2_inf), 0.0, config.m * log(n_eff), "bic")


def mdl_breakdown(data: SeriesData, config: ChangepointConfig, component: int = 0) -> ScoreBreakdown:
    _, _, sigma2_inf, _ = _terms(data, config, component, 1.0)
    return mdl_breakdown_from_terms(config, sigma2_inf)


def bic_breakdown(data: SeriesData, config: ChangepointConfig, component: int = 0) -> ScoreBreakdown:
    _, _, sigma2_inf, _ = _terms(data, config, component, 1.0)
    return bic_breakdown_from_terms(config, sigma2_inf)


def mdl_score(data: SeriesData, config: ChangepointConfig, component: int = 0) -> float:
    """Two-part MDL with ``log N_r / 2`` per regime mean (nats)."""
    return mdl_breakdown(data, config, component).total


def bic_score(data: SeriesData, config: ChangepointConfig, component: int = 0) -> float:
    """BIC with ``log(N - p)`` per changepoint (nats)."""
    return bic_breakdown(data, config, component).total


# ------------------------------------------------------------------ estimates


def fit_params(data: SeriesData, config: ChangepointConfig, hp: Hyperparams | None = None,
               component: int = 0) -> FittedParams:
    """Seasonal means, posterior-mean regime shifts, AR coefficients, noise variance."""
    hp = hp or Hyperparams()
    ws = whitened_system(data, config, component)
    s_hat = estimate_seasonal_means(ws, hp.nu)
    sigma2 = estimate_noise_variance(ws, s_hat, hp.nu)
    mu = estimate_regime_means(ws, s_hat, hp.nu) if ws.m else np.zeros(0)
    return FittedParams(s_hat[None, :], (mu,), ws.phi, sigma2)


def reference_bmdl_score(data: SeriesData, config: ChangepointConfig,
                         metadata: Metadata | None = None, hp: Hyperparams | None = None,
                         component: int = 0, normalized: bool = False) -> ScoreBreakdown:
    """BMDL through the dense route; slow, used to cross-check the kernels."""
    hp = hp or Hyperparams()
    ws = whitened_system(data, config, component)
    s_hat = estimate_seasonal_means(ws, hp.nu)
    sigma2 = estimate_noise_variance(ws, s_hat, hp.nu)
    if ws.m:
        sign, logdet = np.linalg.slogdet(ws.D.T @ ws.D + np.eye(ws.m) / hp.nu)
        if sign <= 0:
            raise SingularMatrix("regime information matrix is not positive definite")
    else:
        logdet = 0.0
    return bmdl_breakdown_from_terms(config, metadata, hp, sigma2, logdet, normalized)
