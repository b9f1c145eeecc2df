"""Metropolis-Hastings search over changepoint configurations.

A configuration is handled inside the chain as a tuple of sorted per-component
time tuples, which is also the cache key of :class:`Scorer`. Scores are code
lengths (negative log posterior up to a constant), so the chain targets
``exp(-score)`` and the reported model is the lowest score ever evaluated.
"""
from __future__ import annotations

import json
import os
import random
from bisect import insort
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from math import inf, log

import numpy as np

from . import kernels
from .bivariate import _breakdown as _bi_breakdown
from .bivariate import bivariate_fit_params
from .errors import BMDLError, SearchFailed
from .model import ChangepointConfig, FittedParams, Hyperparams, Metadata, SeriesData
from .univariate import (
    ScoreBreakdown,
    _seasons,
    bic_breakdown_from_terms,
    bmdl_breakdown_from_terms,
    fit_params,
    mdl_breakdown_from_terms,
)

__all__ = [
    "OBJECTIVES",
    "SearchOptions",
    "Scorer",
    "ChainResult",
    "FitResult",
    "propose",
    "mcmc_chain",
    "fit",
    "default_workers",
]

OBJECTIVES = ("bmdl", "obmdl", "mdl", "bic")
SCHEMA = "bmdl.fitresult/1"


def default_workers() -> int:
    """Worker count from ``BMDL_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("BMDL_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SearchOptions:
    """Settings of a multi-chain search.

    ``max_changepoints`` caps each component (``None``: ``(N - p) // 20``);
    ``min_spacing`` is the minimum regime length, first and last regimes
    included. ``init`` is ``"empty"`` or ``"random"``. Traces keep every
    ``trace_thin``-th iteration.
    """

    iterations: int = 20000
    chains: int = 1
    seed: int = 0
    flip_probability: float = 0.5
    max_changepoints: int | None = None
    min_spacing: int = 1
    objective: str = "bmdl"
    init: str = "empty"
    trace_thin: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if not 0 < self.flip_probability < 1:
            raise ValueError("flip_probability must lie in (0, 1)")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.init not in ("empty", "random"):
            raise ValueError("init must be 'empty' or 'random'")
        if self.min_spacing < 1:
            raise ValueError("min_spacing must be >= 1")
        if self.max_changepoints is not None and self.max_changepoints < 0:
            raise ValueError("max_changepoints must be >= 0")
        if self.trace_thin < 1 or self.workers < 1:
            raise ValueError("trace_thin and workers must be >= 1")

    def cap(self, n: int, p: int) -> int:
        return (n - p) // 20 if self.max_changepoints is None else self.max_changepoints

    def to_dict(self) -> dict:
        # worker count never changes results, so it is not part of the record
        d = asdict(self)
        del d["workers"]
        return d


class Scorer:
    """Memoised objective for one series.

    Calling the scorer with a tuple of sorted per-component time tuples
    returns the total score; :meth:`breakdown` returns the decomposition.
    Bivariate series support only the ``"bmdl"`` objective.
    """

    def __init__(self, data: SeriesData, metadata: Metadata | None = None,
                 hp: Hyperparams | None = None, objective: str = "bmdl",
                 normalized: bool = False):
        if objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if data.components == 2 and objective != "bmdl":
            raise ValueError("bivariate series support only the 'bmdl' objective")
        hp = hp or Hyperparams()
        if objective == "obmdl":
            hp = Hyperparams.objective(hp.nu)
        self.data = data
        self.metadata = metadata
        self.hp = hp
        self.objective = objective
        self.normalized = normalized
        self.n, self.p, self.period = data.n, data.ar_order, data.period
        self._x = [np.ascontiguousarray(data.values[:, i]) for i in range(data.components)]
        self._season = _seasons(data.n, data.period)
        self._cache: dict[tuple, float] = {}
        self.evaluations = 0

    def config(self, times) -> ChangepointConfig:
        return ChangepointConfig(tuple(tuple(c) for c in times), self.n, self.p)

    def breakdown(self, times) -> ScoreBreakdown:
        config = self.config(times)
        self.evaluations += 1
        cps = [np.asarray(c, dtype=np.int64) for c in config.times]
        if self.data.components == 2:
            _, Sigma, flagged, logdet, Q = kernels.bi_terms(
                self._x[0], self._x[1], self._season, cps[0], cps[1], self.period, self.p,
                self.hp.nu)
            return _bi_breakdown(config, self.metadata, self.hp, Sigma, logdet, Q, flagged,
                                 self.normalized)
        sigma2, logdet, sigma2_inf, _ = kernels.uni_terms(
            self._x[0], self._season, cps[0], self.period, self.p, self.hp.nu)
        if self.objective == "mdl":
            return mdl_breakdown_from_terms(config, sigma2_inf)
        if self.objective == "bic":
            return bic_breakdown_from_terms(config, sigma2_inf)
        return bmdl_breakdown_from_terms(config, self.metadata, self.hp, sigma2, logdet,
                                         self.normalized, self.objective)

    def __call__(self, times) -> float:
        val = self._cache.get(times)
        if val is None:
            val = self.breakdown(times).total
            self._cache[times] = val
        return val

    @property
    def cache_size(self) -> int:
        return len(self._cache)


# ------------------------------------------------------------------ proposals


def _can_swap(times, width):
    return any(0 < len(c) < width for c in times)


def _propose_times(times, rng, width, p, flip_probability):
    """One proposal on a times tuple; returns ``(new_times, log_ratio, kind)``.

    A flip picks a location uniformly. With one component its indicator is
    toggled; with two, the pair of indicators moves to one of the other three
    categories uniformly, so a concurrent change can appear in one step.
    """
    pf = flip_probability if _can_swap(times, width) else 1.0
    if rng.random() < pf:
        t = p + 1 + rng.randrange(width)
        if len(times) == 1:
            toggle = (0,)
        else:
            toggle = ((0,), (1,), (0, 1))[rng.randrange(3)]
        out = list(times)
        for comp in toggle:
            cur = out[comp]
            if t in cur:
                out[comp] = tuple(x for x in cur if x != t)
            else:
                lst = list(cur)
                insort(lst, t)
                out[comp] = tuple(lst)
        out = tuple(out)
        pf_new = flip_probability if _can_swap(out, width) else 1.0
        return out, log(pf_new) - log(pf), "flip"
    eligible = [(ci, t) for ci, c in enumerate(times) if 0 < len(c) < width for t in c]
    comp, t_old = eligible[rng.randrange(len(eligible))]
    cur = set(times[comp])
    while True:
        t_new = p + 1 + rng.randrange(width)
        if t_new not in cur:
            break
    cur.discard(t_old)
    cur.add(t_new)
    out = times[:comp] + (tuple(sorted(cur)),) + times[comp + 1:]
    return out, 0.0, "swap"


def propose(config: ChangepointConfig, rng: random.Random,
            flip_probability: float = 0.5) -> tuple[ChangepointConfig, float]:
    """Flip the indicators at one location or swap a changepoint with a non-changepoint.

    A flip picks a location uniformly (see :func:`_propose_times` for the
    two-component case); a swap picks a changepoint uniformly (among
    components that have a free time) and a non-changepoint of the same
    component uniformly. When no swap is
    possible the move is always a flip. Returns the proposal and the log
    ratio ``log q(new -> old) - log q(old -> new)``.
    """
    times, lr, _ = _propose_times(config.times, rng, config.n - config.p, config.p,
                                  flip_probability)
    return ChangepointConfig(times, config.n, config.p), lr


def _feasible(comp_times, n, cap, spacing):
    if len(comp_times) > cap:
        return False
    if spacing <= 1:
        # only a changepoint at t = 1 (possible when p = 0) leaves an empty regime
        return not comp_times or comp_times[0] > 1
    prev = 1
    for t in comp_times:
        if t - prev < spacing:
            return False
        prev = t
    return n + 1 - prev >= spacing


def _feasible_all(times, n, cap, spacing):
    return all(_feasible(c, n, cap, spacing) for c in times)


# ------------------------------------------------------------------ chains


@dataclass(eq=False)
class ChainResult:
    """Outcome of one chain.

    ``trace`` columns are (iteration, current score, current m) at every
    ``trace_thin``-th iteration; ``best_trace`` holds the running minimum
    over evaluated configurations at the same iterations.
    """

    seed: int
    status: str = "ok"
    message: str = ""
    iterations_done: int = 0
    trace_iteration: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    trace_score: np.ndarray = field(default_factory=lambda: np.zeros(0))
    trace_m: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    best_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    best_times: tuple | None = None
    best_score: float = inf
    accepted: int = 0
    proposed: int = 0
    constraint_rejections: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "status": self.status,
            "message": self.message,
            "iterations_done": self.iterations_done,
            "accepted": self.accepted,
            "proposed": self.proposed,
            "constraint_rejections": self.constraint_rejections,
            "best_times": None if self.best_times is None else [list(c) for c in self.best_times],
            "best_score": self.best_score,
            "trace": {
                "iteration": self.trace_iteration.tolist(),
                "score": self.trace_score.tolist(),
                "m": self.trace_m.tolist(),
                "best": self.best_trace.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChainResult":
        tr = d["trace"]
        bt = d["best_times"]
        return cls(
            d["seed"], d["status"], d["message"], d["iterations_done"],
            np.asarray(tr["iteration"], dtype=np.int64), np.asarray(tr["score"], dtype=float),
            np.asarray(tr["m"], dtype=np.int64), np.asarray(tr["best"], dtype=float),
            None if bt is None else tuple(tuple(c) for c in bt), d["best_score"],
            d["accepted"], d["proposed"], d["constraint_rejections"],
        )


def mcmc_chain(score_fn, init: ChangepointConfig, opts: SearchOptions,
               chain_seed: int) -> ChainResult:
    """Run one Metropolis-Hastings chain from ``init``.

    Proposals violating the changepoint cap or the spacing constraint are
    rejected without being scored. A scoring error stops the chain and is
    reported in the returned status; the partial trace is kept.
    """
    rng = random.Random(chain_seed)
    n, p = init.n, init.p
    width = n - p
    cap = opts.cap(n, p)
    spacing = opts.min_spacing
    f = opts.flip_probability
    thin = opts.trace_thin
    size = opts.iterations // thin + 1
    tr_it = np.zeros(size, dtype=np.int64)
    tr_sc = np.zeros(size)
    tr_m = np.zeros(size, dtype=np.int64)
    tr_best = np.zeros(size)
    res = ChainResult(chain_seed)
    cur_times = init.times
    try:
        cur = score_fn(cur_times)
    except (BMDLError, ArithmeticError, ValueError) as exc:
        res.status, res.message = "aborted", f"initial configuration: {type(exc).__name__}: {exc}"
        return res
    cur_m = init.m
    best, best_times = cur, cur_times
    tr_best[0], tr_sc[0], tr_m[0] = best, cur, cur_m
    rec = 1
    accepted = proposed = rejected = 0
    it = 0
    try:
        for it in range(1, opts.iterations + 1):
            new_times, lr, _ = _propose_times(cur_times, rng, width, p, f)
            u = 1.0 - rng.random()
            proposed += 1
            if _feasible_all(new_times, n, cap, spacing):
                new = score_fn(new_times)
                if new < best:
                    best, best_times = new, new_times
                if log(u) < cur - new + lr:
                    cur, cur_times = new, new_times
                    cur_m = sum(len(c) for c in new_times)
                    accepted += 1
            else:
                rejected += 1
            if it % thin == 0:
                tr_it[rec], tr_sc[rec], tr_m[rec], tr_best[rec] = it, cur, cur_m, best
                rec += 1
    except (BMDLError, ArithmeticError, ValueError) as exc:
        res.status = "aborted"
        res.message = f"iteration {it}: {type(exc).__name__}: {exc}"
        it -= 1
    res.iterations_done = it
    res.trace_iteration, res.trace_score = tr_it[:rec].copy(), tr_sc[:rec].copy()
    res.trace_m, res.best_trace = tr_m[:rec].copy(), tr_best[:rec].copy()
    res.best_times, res.best_score = best_times, best
    res.accepted, res.proposed, res.constraint_rejections = accepted, proposed, rejected
    return res


def _random_init(components, n, p, opts, rng):
    cap = opts.cap(n, p)
    out = []
    for _ in range(components):
        k = rng.randint(0, cap)
        for _attempt in range(1000):
            times = tuple(sorted(rng.sample(range(p + 1, n + 1), k)))
            if _feasible(times, n, cap, opts.min_spacing):
                break
        else:
            times = ()
        out.append(times)
    return ChangepointConfig(tuple(out), n, p)


def _chain_seeds(seed, chains):
    """``(init_seed, chain_seed)`` per chain, derived from one root seed."""
    children = np.random.SeedSequence(seed).spawn(chains)
    return [tuple(int(v) for v in c.generate_state(2, dtype=np.uint64)) for c in children]


def _chain_task(data, metadata, hp, opts, init, chain_seed):
    return mcmc_chain(Scorer(data, metadata, hp, opts.objective), init, opts, chain_seed)


# ------------------------------------------------------------------ fit


@dataclass(frozen=True, eq=False)
class FitResult:
    """Winner of a multi-chain search with per-chain diagnostics."""

    best_config: ChangepointConfig
    best_score: ScoreBreakdown
    best_params: FittedParams | None
    chains: tuple[ChainResult, ...]
    comparators: dict
    options: SearchOptions
    hyperparams: Hyperparams
    metadata_times: tuple[int, ...] = ()
    period: int = 12
    start: tuple[int, int] | None = None
    names: tuple[str, ...] | None = None

    @property
    def aborted(self) -> list[int]:
        return [i for i, c in enumerate(self.chains) if not c.ok]

    def labelled_times(self) -> list[list]:
        """Per-component changepoints as ``[t, "YYYY-MM"]`` (label ``None`` without a start date)."""
        out = []
        for comp in self.best_config.times:
            row = []
            for t in comp:
                if self.start is None:
                    row.append([t, None])
                else:
                    k = self.start[1] - 1 + t - 1
                    row.append([t, f"{self.start[0] + k // 12:04d}-{k % 12 + 1:02d}"])
            out.append(row)
        return out

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "n": self.best_config.n,
            "p": self.best_config.p,
            "period": self.period,
            "start": None if self.start is None else list(self.start),
            "names": None if self.names is None else list(self.names),
            "best_times": [list(c) for c in self.best_config.times],
            "best_labels": self.labelled_times(),
            "best_score": self.best_score.to_dict(),
            "best_params": None if self.best_params is None else self.best_params.to_dict(),
            "comparators": dict(self.comparators),
            "options": self.options.to_dict(),
            "hyperparams": self.hyperparams.to_dict(),
            "metadata_times": list(self.metadata_times),
            "chains": [c.to_dict() for c in self.chains],
        }

    def to_json(self, indent: int | None = 1) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported fit result schema {d.get('schema')!r}")
        config = ChangepointConfig(tuple(tuple(c) for c in d["best_times"]), d["n"], d["p"])
        bp = d["best_params"]
        params = None
        if bp is not None:
            nv = bp["noise_var"]
            params = FittedParams(np.asarray(bp["seasonal_means"]),
                                  tuple(np.asarray(mu) for mu in bp["regime_means"]),
                                  np.asarray(bp["ar_coeffs"]),
                                  np.asarray(nv) if isinstance(nv, list) else nv,
                                  bp["flagged"], tuple(bp["notes"]))
        hpd = dict(d["hyperparams"])
        hpd["alpha_undoc"] = tuple(hpd["alpha_undoc"])
        hpd["alpha_doc"] = tuple(hpd["alpha_doc"])
        return cls(
            config, ScoreBreakdown.from_dict(d["best_score"]), params,
            tuple(ChainResult.from_dict(c) for c in d["chains"]), dict(d["comparators"]),
            SearchOptions(**d["options"]), Hyperparams(**hpd), tuple(d["metadata_times"]),
            d["period"], None if d["start"] is None else tuple(d["start"]),
            None if d["names"] is None else tuple(d["names"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        return cls.from_dict(json.loads(text))


def comparator_scores(data: SeriesData, config: ChangepointConfig,
                      metadata: Metadata | None, hp: Hyperparams) -> dict:
    """Totals of every objective available for ``data`` at ``config``."""
    objectives = OBJECTIVES if data.components == 1 else ("bmdl",)
    return {obj: Scorer(data, metadata, hp, obj).breakdown(config.times).total
            for obj in objectives}


def fit(data: SeriesData, metadata: Metadata | None = None, hp: Hyperparams | None = None,
        opts: SearchOptions | None = None) -> FitResult:
    """Run ``opts.chains`` chains and report the lowest-scoring configuration.

    Chain ``i`` is seeded from the ``i``-th child of ``SeedSequence(opts.seed)``,
    so results do not depend on ``opts.workers``. Raises
    :class:`~bmdl.errors.SearchFailed` only when every chain aborts.
    """
    hp = hp or Hyperparams()
    opts = opts or SearchOptions()
    scorer = Scorer(data, metadata, hp, opts.objective)
    n, p, c = data.n, data.ar_order, data.components
    seeds = _chain_seeds(opts.seed, opts.chains)
    inits = []
    for init_seed, _ in seeds:
        if opts.init == "random":
            inits.append(_random_init(c, n, p, opts, random.Random(init_seed)))
        else:
            inits.append(ChangepointConfig(tuple(() for _ in range(c)), n, p))
    if opts.workers > 1 and opts.chains > 1:
        with ProcessPoolExecutor(max_workers=opts.workers) as pool:
            futs = [pool.submit(_chain_task, data, metadata, hp, opts, init, cs)
                    for init, (_, cs) in zip(inits, seeds)]
            chains = tuple(fu.result() for fu in futs)
    else:
        chains = tuple(mcmc_chain(scorer, init, opts, cs) for init, (_, cs) in zip(inits, seeds))
    done = [ch for ch in chains if ch.best_times is not None]
    if not done:
        raise SearchFailed("; ".join(f"chain {i}: {ch.message}" for i, ch in enumerate(chains)))
    winner = min(done, key=lambda ch: ch.best_score)
    config = ChangepointConfig(winner.best_times, n, p)
    best_score = scorer.breakdown(config.times)
    params_hp = hp if opts.objective in ("bmdl", "obmdl") else replace(hp, nu=inf)
    if c == 2:
        params = bivariate_fit_params(data, config, params_hp)
    else:
        params = fit_params(data, config, params_hp)
    meta = tuple(sorted(metadata.documented_times)) if metadata is not None else ()
    return FitResult(config, best_score, params, chains,
                     comparator_scores(data, config, metadata, hp), opts, hp, meta,
                     data.period, data.start, data.names)
