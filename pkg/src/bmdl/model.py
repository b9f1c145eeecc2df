"""Domain types: series, changepoint configurations, metadata, hyperparameters.

Times are absolute and 1-based throughout (``t = 1..N``); changepoints may
only occur at ``t = p+1..N`` where ``p`` is the autoregressive order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, Duplicate, OutOfRange

__all__ = [
    "SeriesData",
    "ChangepointConfig",
    "Metadata",
    "Hyperparams",
    "FittedParams",
    "config_from_times",
    "regime_partition",
    "regime_lengths",
    "classify_counts",
    "season_of",
]


def season_of(t, period):
    """Season ``v(t) = t - T*floor((t-1)/T)`` in ``1..T`` (works on arrays)."""
    t = np.asarray(t)
    return t - period * ((t - 1) // period)


@dataclass(frozen=True, eq=False)
class SeriesData:
    """Observed series with ``c`` in {1, 2} components.

    Parameters
    ----------
    values : array_like, shape (N,) or (N, c)
    period : int
        Seasons per cycle ``T``.
    ar_order : int
        Known autoregressive order ``p``.
    start : (year, month), optional
        Calendar label of ``t = 1``; only used for reporting.
    names : tuple of str, optional
        Component names (e.g. ``("tmax", "tmin")``).
    """

    values: np.ndarray
    period: int = 12
    ar_order: int = 0
    start: tuple[int, int] | None = None
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[1] not in (1, 2):
            raise DimensionMismatch(f"values must be N x 1 or N x 2, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("series contains missing or non-finite values")
        if self.period < 1:
            raise ValueError("period must be a positive integer")
        if self.ar_order < 0:
            raise ValueError("ar_order must be non-negative")
        if v.shape[0] < 2 * self.period + self.ar_order:
            raise ValueError(
                f"N={v.shape[0]} is too short for T={self.period}, p={self.ar_order} "
                f"(need N >= 2T + p)"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.names is None:
            object.__setattr__(self, "names", tuple(f"x{i + 1}" for i in range(v.shape[1])))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def components(self) -> int:
        return self.values.shape[1]

    def component(self, i: int) -> "SeriesData":
        """Univariate view of component ``i``."""
        return SeriesData(self.values[:, i], self.period, self.ar_order, self.start,
                          (self.names[i],))

    def swapped(self) -> "SeriesData":
        if self.components != 2:
            raise DimensionMismatch("swapped() needs a bivariate series")
        return SeriesData(self.values[:, ::-1], self.period, self.ar_order, self.start,
                          self.names[::-1])

    def label(self, t: int) -> tuple[int, int] | None:
        """(year, month) for time ``t`` when a monthly start date is known."""
        if self.start is None:
            return None
        k = self.start[1] - 1 + t - 1
        return self.start[0] + k // 12, k % 12 + 1


@dataclass(frozen=True)
class ChangepointConfig:
    """A changepoint model: sorted changepoint times per component.

    The indicator vector over ``t = p+1..N`` is derived on demand, so two
    configurations with the same bits compare (and hash) equal.
    """

    times: tuple[tuple[int, ...], ...]
    n: int
    p: int

    @property
    def components(self) -> int:
        return len(self.times)

    @property
    def m(self) -> int:
        return sum(len(c) for c in self.times)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.times)

    def indicators(self, component: int = 0) -> np.ndarray:
        eta = np.zeros(self.n - self.p, dtype=np.int8)
        for t in self.times[component]:
            eta[t - self.p - 1] = 1
        return eta

    def swapped(self) -> "ChangepointConfig":
        return ChangepointConfig(self.times[::-1], self.n, self.p)

    def __str__(self):
        inner = "; ".join(",".join(map(str, c)) for c in self.times)
        return f"ChangepointConfig([{inner}], N={self.n}, p={self.p})"


def config_from_times(times, n: int, p: int, component_count: int | None = None) -> ChangepointConfig:
    """Build a configuration from changepoint times.

    ``times`` is either a flat sequence of ints (one component) or a sequence
    of per-component sequences. Raises :class:`OutOfRange` for a time outside
    ``p+1..N`` and :class:`Duplicate` for a repeat within a component.
    """
    times = list(times)
    nested = bool(times) and not np.isscalar(times[0])
    if component_count is None:
        component_count = len(times) if nested else 1
    if not nested:
        if component_count != 1:
            if times:
                raise DimensionMismatch("flat time list given for a multi-component config")
            times = [[] for _ in range(component_count)]
        else:
            times = [times]
    if len(times) != component_count:
        raise DimensionMismatch(f"expected {component_count} components, got {len(times)}")
    out = []
    for comp in times:
        comp = [int(t) for t in comp]
        for t in comp:
            if t <= p or t > n:
                raise OutOfRange(f"changepoint time {t} outside {p + 1}..{n}")
        if len(set(comp)) != len(comp):
            dup = sorted(t for t in set(comp) if comp.count(t) > 1)
            raise Duplicate(f"repeated changepoint time(s) {dup}")
        out.append(tuple(sorted(comp)))
    return ChangepointConfig(tuple(out), n, p)


def regime_partition(config: ChangepointConfig, component: int = 0) -> list[tuple[int, int]]:
    """Inclusive ``(start, end)`` ranges of the ``m+1`` regimes covering ``1..N``."""
    bounds = [1, *config.times[component], config.n + 1]
    return [(bounds[r], bounds[r + 1] - 1) for r in range(len(bounds) - 1)]


def regime_lengths(config: ChangepointConfig, component: int = 0) -> np.ndarray:
    bounds = np.array([1, *config.times[component], config.n + 1])
    return np.diff(bounds)


@dataclass(frozen=True)
class Metadata:
    """Documented (station-history) times, all within ``p+1..N``."""

    documented_times: frozenset[int]
    n: int
    p: int

    def __post_init__(self):
        times = frozenset(int(t) for t in self.documented_times)
        bad = sorted(t for t in times if t <= self.p or t > self.n)
        if bad:
            raise OutOfRange(f"metadata time(s) {bad} outside {self.p + 1}..{self.n}")
        object.__setattr__(self, "documented_times", times)

    @classmethod
    def empty(cls, n: int, p: int) -> "Metadata":
        return cls(frozenset(), n, p)

    @classmethod
    def from_times(cls, times: Iterable[int], n: int, p: int) -> "Metadata":
        return cls(frozenset(times), n, p)

    @property
    def n_doc(self) -> int:
        return len(self.documented_times)

    @property
    def n_undoc(self) -> int:
        return self.n - self.p - self.n_doc

    def mask(self) -> np.ndarray:
        """Boolean array over ``t = 1..N`` (index ``t-1``) marking documented times."""
        out = np.zeros(self.n, dtype=bool)
        for t in self.documented_times:
            out[t - 1] = True
        return out


def classify_counts(config: ChangepointConfig, metadata: Metadata | None, component: int = 0):
    """Return ``(m_undoc, m_doc, N_undoc, N_doc)`` for one component."""
    times = config.times[component]
    if metadata is None:
        return len(times), 0, config.n - config.p, 0
    doc = metadata.documented_times
    m_doc = sum(1 for t in times if t in doc)
    return len(times) - m_doc, m_doc, metadata.n_undoc, metadata.n_doc


@dataclass(frozen=True)
class Hyperparams:
    """Prior hyperparameters.

    ``a``, ``b_undoc``, ``b_doc`` parametrise the Beta-Binomial changepoint
    prior (undocumented / documented times); ``nu`` scales the regime-mean
    prior variance; ``alpha_undoc`` and ``alpha_doc`` are the Dirichlet
    parameters over the categories (1,1), (1,0), (0,1), (0,0) of a bivariate
    indicator.
    """

    a: float = 1.0
    b_undoc: float = 239.0
    b_doc: float = 47.0
    nu: float = 5.0
    alpha_undoc: tuple[float, float, float, float] = (3 / 7, 2 / 7, 2 / 7, 239.0)
    alpha_doc: tuple[float, float, float, float] = (3 / 7, 2 / 7, 2 / 7, 47.0)

    def __post_init__(self):
        scalars = {"a": self.a, "b_undoc": self.b_undoc, "b_doc": self.b_doc, "nu": self.nu}
        for name, v in scalars.items():
            if not v > 0:
                raise ValueError(f"hyperparameter {name} must be positive, got {v}")
        for name in ("alpha_undoc", "alpha_doc"):
            alpha = tuple(float(x) for x in getattr(self, name))
            if len(alpha) != 4 or min(alpha) <= 0:
                raise ValueError(f"{name} must be 4 positive reals")
            object.__setattr__(self, name, alpha)

    @classmethod
    def default(cls) -> "Hyperparams":
        return cls()

    @classmethod
    def objective(cls, nu: float = 5.0) -> "Hyperparams":
        """``a = b = 1``: uniform prior on the number of changepoints."""
        return cls(a=1.0, b_undoc=1.0, b_doc=1.0, nu=nu)

    @classmethod
    def six_per_century(cls, nu: float = 5.0) -> "Hyperparams":
        """``a = 1, b = 199``: 0.005 changepoints per month a priori."""
        return cls(a=1.0, b_undoc=199.0, b_doc=199.0, nu=nu)

    def prior_rate(self, documented: bool = False) -> float:
        """Prior mean changepoint probability ``a / (a + b)``."""
        b = self.b_doc if documented else self.b_undoc
        return self.a / (self.a + b)

    def to_dict(self) -> dict:
        return {
            "a": self.a, "b_undoc": self.b_undoc, "b_doc": self.b_doc, "nu": self.nu,
            "alpha_undoc": list(self.alpha_undoc), "alpha_doc": list(self.alpha_doc),
        }


PRESETS = {
    "default": Hyperparams.default,
    "objective": Hyperparams.objective,
    "six-per-century": Hyperparams.six_per_century,
}


@dataclass(frozen=True, eq=False)
class FittedParams:
    """Parameter estimates at a fixed configuration.

    Univariate: ``seasonal_means`` has shape (1, T), ``ar_coeffs`` shape (p,),
    ``noise_var`` is a float. Bivariate: shapes (2, T), (p, 2, 2) and (2, 2).
    ``regime_means`` holds one array per component (``mu_1 = 0`` omitted).
    """

    seasonal_means: np.ndarray
    regime_means: tuple[np.ndarray, ...]
    ar_coeffs: np.ndarray
    noise_var: float | np.ndarray
    flagged: bool = False
    notes: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        nv = self.noise_var
        return {
            "seasonal_means": np.asarray(self.seasonal_means).tolist(),
            "regime_means": [np.asarray(mu).tolist() for mu in self.regime_means],
            "ar_coeffs": np.asarray(self.ar_coeffs).tolist(),
            "noise_var": np.asarray(nv).tolist() if np.ndim(nv) else float(nv),
            "flagged": self.flagged,
            "notes": list(self.notes),
        }


def times_of(config: ChangepointConfig) -> Sequence:
    """Inverse of :func:`config_from_times` (nested when bivariate)."""
    if config.components == 1:
        return list(config.times[0])
    return [list(c) for c in config.times]
