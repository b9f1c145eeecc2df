"""Synthetic seasonal series with mean shifts and replication studies.

A scenario fixes the generator (seasonal means, changepoints, regime levels,
AR/VAR errors) and the study settings (replications, search length,
detectors). Detector names are ``"<objective>"`` or ``"<objective>+meta"``
with objective in ``bmdl``, ``obmdl``, ``mdl``, ``bic`` (univariate, applied to
each component listed in ``components``), ``bi-bmdl`` (bivariate), or
``truth`` (returns the generating configuration; a plumbing check).
"""
from __future__ import annotations

import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BMDLError, NonStationary
from .model import ChangepointConfig, Hyperparams, Metadata, SeriesData
from .search import SearchOptions, fit

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "Scenario",
    "DetectionRow",
    "DetectionTable",
    "load_scenario",
    "simulate_series",
    "simulate_errors",
    "detection_rates",
    "run_study",
    "BURN_IN",
]

BURN_IN = 500
UNIVARIATE = ("bmdl", "obmdl", "mdl", "bic")


@dataclass(frozen=True)
class Scenario:
    """Generator and study settings.

    ``levels`` are regime means in units of the shift size ``delta``
    (``kappa * sigma`` unless ``delta`` is given). ``phi`` has shape
    (q, c, c) and ``noise_cov`` (c, c); ``q`` may differ from the AR order
    ``ar_order`` assumed when fitting.
    """

    n: int
    seasonal_means: tuple[tuple[float, ...], ...]
    changepoints: tuple[tuple[int, ...], ...]
    levels: tuple[tuple[float, ...], ...]
    phi: tuple
    noise_cov: tuple[tuple[float, ...], ...]
    period: int = 12
    ar_order: int = 3
    kappa: float = 2.0
    sigma: float = 3.0
    delta: float | None = None
    metadata: tuple[int, ...] = ()
    name: str = "scenario"
    replications: int = 200
    iterations: int = 20000
    chains: int = 1
    detectors: tuple[str, ...] = ("bmdl+meta", "bmdl")
    components: tuple[int, ...] = (0,)
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    start: tuple[int, int] | None = None

    def __post_init__(self):
        c = len(self.changepoints)
        if c not in (1, 2):
            raise ValueError("a scenario has one or two components")
        if len(self.levels) != c or len(self.seasonal_means) != c:
            raise ValueError("seasonal_means, changepoints and levels need one entry per component")
        for cps, lv in zip(self.changepoints, self.levels):
            if len(lv) != len(cps) + 1:
                raise ValueError("each component needs one more level than changepoints")
        for s in self.seasonal_means:
            if len(s) != self.period:
                raise ValueError(f"seasonal means need {self.period} entries")
        phi = np.asarray(self.phi, dtype=float).reshape(-1, c, c)
        cov = np.asarray(self.noise_cov, dtype=float).reshape(c, c)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "noise_cov", cov)
        for d in self.detectors:
            if _parse_detector(d)[0] == "bi-bmdl" and c != 2:
                raise ValueError("the bi-bmdl detector needs a two-component scenario")
        if any(k >= c for k in self.components):
            raise ValueError("component index out of range")

    @property
    def c(self) -> int:
        return len(self.changepoints)

    @property
    def shift(self) -> float:
        return self.kappa * self.sigma if self.delta is None else self.delta

    def metadata_obj(self) -> Metadata:
        return Metadata.from_times(self.metadata, self.n, self.ar_order)

    def true_config(self) -> ChangepointConfig:
        return ChangepointConfig(tuple(tuple(c) for c in self.changepoints), self.n, self.ar_order)

    def mean_path(self) -> np.ndarray:
        """Deterministic part ``s_v(t) + mu_r(t)`` (N x c)."""
        t = np.arange(self.n)
        out = np.empty((self.n, self.c))
        for i in range(self.c):
            s = np.asarray(self.seasonal_means[i], dtype=float)
            reg = np.searchsorted(np.asarray(self.changepoints[i]) - 1, t, side="right")
            out[:, i] = s[t % self.period] + self.shift * np.asarray(self.levels[i])[reg]
        return out


def _parse_detector(name: str):
    base, _, tag = name.partition("+")
    if tag not in ("", "meta") or base not in (*UNIVARIATE, "bi-bmdl", "truth"):
        raise ValueError(f"unknown detector {name!r}")
    return base, tag == "meta"


def load_scenario(path, **overrides) -> Scenario:
    """Read a TOML scenario file; keyword overrides replace top-level fields."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    study = raw.pop("study", {})
    hp = raw.pop("hyperparams", {})
    kw = dict(raw)
    kw.update(study)
    if "seasonal_means" in kw and np.ndim(kw["seasonal_means"]) == 1:
        kw["seasonal_means"] = [kw["seasonal_means"]] * len(kw["changepoints"])
    for key in ("seasonal_means", "changepoints", "levels", "noise_cov"):
        if key in kw:
            kw[key] = tuple(tuple(v) for v in kw[key])
    for key in ("metadata", "detectors", "components", "start"):
        if key in kw:
            kw[key] = tuple(kw[key])
    if hp:
        for key in ("alpha_undoc", "alpha_doc"):
            if key in hp:
                hp[key] = tuple(hp[key])
        kw["hyperparams"] = Hyperparams(**hp)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return Scenario(**kw)


# ------------------------------------------------------------------ generator


def _check_stationary(phi, cov):
    q, c, _ = phi.shape
    if not np.allclose(cov, cov.T) or np.any(np.linalg.eigvalsh(cov) <= 0):
        raise NonStationary("noise covariance must be symmetric positive definite")
    if q == 0:
        return
    comp = np.zeros((q * c, q * c))
    comp[:c] = np.hstack(list(phi))
    comp[c:, :-c] = np.eye((q - 1) * c)
    rho = np.max(np.abs(np.linalg.eigvals(comp)))
    if rho >= 1:
        raise NonStationary(f"companion spectral radius {rho:.4f} >= 1")


def simulate_errors(phi, cov, n: int, rng: np.random.Generator, burn_in: int = BURN_IN):
    """Gaussian VAR/AR path of length ``n`` after discarding ``burn_in`` steps."""
    phi = np.asarray(phi, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    c = cov.shape[0]
    phi = phi.reshape(-1, c, c)
    _check_stationary(phi, cov)
    q = phi.shape[0]
    total = n + burn_in
    z = rng.standard_normal((total, c)) @ np.linalg.cholesky(cov).T
    e = np.zeros((total + q, c))
    for t in range(total):
        acc = z[t].copy()
        for j in range(q):
            acc += phi[j] @ e[q + t - 1 - j]
        e[q + t] = acc
    return e[q + burn_in:]


def simulate_series(scenario: Scenario, seed) -> SeriesData:
    """One synthetic record: mean path plus AR/VAR errors."""
    rng = np.random.default_rng(seed)
    e = simulate_errors(scenario.phi, scenario.noise_cov, scenario.n, rng)
    names = ("tmax", "tmin") if scenario.c == 2 else ("x1",)
    return SeriesData(scenario.mean_path() + e, scenario.period, scenario.ar_order,
                      scenario.start, names)


# ------------------------------------------------------------------ tables


@dataclass(frozen=True)
class DetectionRow:
    """Detection statistics of one detector on one component.

    Rates are percentages. ``flag_frequency[t - p - 1]`` is the percentage of
    successful replications flagging time ``t`` (``p`` is ``ar_order``).
    """

    detector: str
    component: int
    replications: int
    failures: int
    true_times: tuple[int, ...]
    tp_rates: tuple[float, ...]
    fp_rate: float
    m_hat_mean: float
    m_hat_sd: float
    m_hat_se: float
    flag_frequency: tuple[float, ...] = ()
    ar_order: int = 0

    def tp(self, t: int) -> float:
        return self.tp_rates[self.true_times.index(t)]


def detection_rates(outcomes, true_times, n: int, p: int, detector: str = "",
                    component: int = 0) -> DetectionRow:
    """Aggregate fitted changepoint sets of one component over replications.

    ``outcomes`` holds one sorted time tuple per replication, or ``None`` for
    a failed replication (excluded from the rates, counted in ``failures``).
    A true positive at ``t`` requires ``t`` itself to be flagged. The false
    positive rate averages flag frequencies over the times in ``p+1..N`` that
    are not true changepoints.
    """
    good = [o for o in outcomes if o is not None]
    if not good:
        raise ValueError("no successful replications")
    flags = np.zeros(n - p)
    for o in good:
        for t in o:
            flags[t - p - 1] += 1
    freq = 100.0 * flags / len(good)
    true_times = tuple(true_times)
    tp = tuple(float(freq[t - p - 1]) for t in true_times)
    mask = np.ones(n - p, dtype=bool)
    for t in true_times:
        mask[t - p - 1] = False
    fp = float(freq[mask].mean()) if mask.any() else 0.0
    m = np.array([len(o) for o in good], dtype=float)
    sd = float(m.std(ddof=1)) if len(m) > 1 else 0.0
    return DetectionRow(detector, component, len(outcomes), len(outcomes) - len(good), true_times,
                        tp, fp, float(m.mean()), sd, sd / np.sqrt(len(m)), tuple(freq.tolist()), p)


def _fmt(v: float) -> str:
    return f"{v:.4f}"


@dataclass(frozen=True)
class DetectionTable:
    scenario: str
    seed: int
    rows: tuple[DetectionRow, ...]

    def row(self, detector: str, component: int = 0) -> DetectionRow:
        for r in self.rows:
            if r.detector == detector and r.component == component:
                return r
        raise KeyError((detector, component))

    def to_csv(self) -> str:
        """Long format: one line per (detector, component, statistic, time)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["detector", "component", "statistic", "time", "value"])
        for r in self.rows:
            base = [r.detector, r.component]
            w.writerow(base + ["replications", "", r.replications])
            w.writerow(base + ["failures", "", r.failures])
            for t, v in zip(r.true_times, r.tp_rates):
                w.writerow(base + ["tp_rate", t, _fmt(v)])
            w.writerow(base + ["fp_rate", "", _fmt(r.fp_rate)])
            w.writerow(base + ["m_hat_mean", "", _fmt(r.m_hat_mean)])
            w.writerow(base + ["m_hat_sd", "", _fmt(r.m_hat_sd)])
            w.writerow(base + ["m_hat_se", "", _fmt(r.m_hat_se)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "schema": "bmdl.detectiontable/1",
            "scenario": self.scenario,
            "seed": self.seed,
            "rows": [
                {
                    "detector": r.detector, "component": r.component,
                    "replications": r.replications, "failures": r.failures,
                    "true_times": list(r.true_times), "tp_rates": list(r.tp_rates),
                    "fp_rate": r.fp_rate, "m_hat_mean": r.m_hat_mean, "m_hat_sd": r.m_hat_sd,
                    "m_hat_se": r.m_hat_se, "flag_frequency": list(r.flag_frequency),
                    "ar_order": r.ar_order,
                }
                for r in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionTable":
        rows = tuple(
            DetectionRow(r["detector"], r["component"], r["replications"], r["failures"],
                         tuple(r["true_times"]), tuple(r["tp_rates"]), r["fp_rate"],
                         r["m_hat_mean"], r["m_hat_sd"], r["m_hat_se"],
                         tuple(r["flag_frequency"]), r["ar_order"])
            for r in d["rows"]
        )
        return cls(d["scenario"], d["seed"], rows)


# ------------------------------------------------------------------ studies


def _columns(scenario: Scenario):
    """``(detector, component)`` pairs in table order."""
    out = []
    for d in scenario.detectors:
        base, _ = _parse_detector(d)
        comps = range(scenario.c) if base in ("bi-bmdl", "truth") else scenario.components
        out.extend((d, k) for k in comps)
    return out


def _replicate(scenario: Scenario, data_seed: int, fit_seed: int):
    """Fit every detector on one simulated record; returns {(detector, comp): times or None}."""
    data = simulate_series(scenario, data_seed)
    meta = scenario.metadata_obj()
    hp = scenario.hyperparams
    out = {}
    for d in scenario.detectors:
        base, use_meta = _parse_detector(d)
        md = meta if use_meta else None
        if base == "truth":
            for k in range(scenario.c):
                out[(d, k)] = tuple(scenario.changepoints[k])
            continue
        if base == "bi-bmdl":
            opts = SearchOptions(iterations=scenario.iterations, chains=scenario.chains,
                                 seed=fit_seed, objective="bmdl")
            try:
                res = fit(data, md, hp, opts)
                for k in range(2):
                    out[(d, k)] = res.best_config.times[k]
            except BMDLError:
                for k in range(2):
                    out[(d, k)] = None
            continue
        opts = SearchOptions(iterations=scenario.iterations, chains=scenario.chains,
                             seed=fit_seed, objective=base)
        for k in scenario.components:
            try:
                res = fit(data.component(k), md, hp, opts)
                out[(d, k)] = res.best_config.times[0]
            except BMDLError:
                out[(d, k)] = None
    return out


def _rep_seeds(seed, reps):
    children = np.random.SeedSequence(seed).spawn(reps)
    return [tuple(int(v) for v in c.generate_state(2, dtype=np.uint64)) for c in children]


def _replicate_task(args):
    scenario, data_seed, fit_seed = args
    return _replicate(scenario, data_seed, fit_seed)


def run_study(scenario: Scenario, seed: int, workers: int = 1, replications: int | None = None,
              iterations: int | None = None, progress=None) -> DetectionTable:
    """Simulate, fit and aggregate.

    Replication ``i`` draws its data and search seeds from the ``i``-th child
    of ``SeedSequence(seed)``, so the table does not depend on ``workers``.
    """
    if replications is not None or iterations is not None:
        scenario = replace(scenario,
                           replications=replications or scenario.replications,
                           iterations=iterations or scenario.iterations)
    seeds = _rep_seeds(seed, scenario.replications)
    tasks = [(scenario, ds, fs) for ds, fs in seeds]
    results = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, r in enumerate(pool.map(_replicate_task, tasks)):
                results.append(r)
                if progress:
                    progress(i + 1, len(tasks))
    else:
        for i, task in enumerate(tasks):
            results.append(_replicate_task(task))
            if progress:
                progress(i + 1, len(tasks))
    rows = []
    for d, k in _columns(scenario):
        outcomes = [r[(d, k)] for r in results]
        rows.append(detection_rates(outcomes, scenario.changepoints[k], scenario.n,
                                    scenario.ar_order, d, k))
    return DetectionTable(scenario.name, seed, tuple(rows))
