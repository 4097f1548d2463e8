"""Synthetic designs with known truth, and the rate / selection experiments.

Truth is exact on finite covariate grids: population welfare is the finite
sum over grid points of p(x) tau(x) for the treated points.  Continuous laws
are handled by a large held-out sample and flagged as approximate.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .data import Dataset, ScoreTable, compute_scores
from .errors import ConfigError, DataError, SolverError
from .policies import (
    UNIFORM_SHARE,
    FiniteClass,
    LinearRule,
    Policy,
    PolicyClassSpec,
    assign_all,
    serialize_policy,
    weighted_welfare,
)
from .posterior import run_nbpl
from .seeding import derive_seed, rng_for
from .solvers import SolveResult, solve_class

LEMMA_SLACK = 1e-12
_KAPPA = 0.01
_GRID_MATCH_TOL = 1e-9

__all__ = [
    "LEMMA_SLACK",
    "ConstantFn",
    "DgpSpec",
    "FiniteGrid",
    "GridLookupFn",
    "LinearFn",
    "ProductUniform",
    "RatePoint",
    "RateReport",
    "SelectionPoint",
    "SelectionReport",
    "TruthOracle",
    "make_dataset",
    "one_hot_grid",
    "one_hot_subset_class",
    "regret_experiment",
    "selection_experiment",
    "true_regret",
]


# ---- covariate laws ----


@dataclass(frozen=True)
class FiniteGrid:
    """Discrete law: support points (m, d) with probabilities (m,)."""

    points: np.ndarray
    probs: np.ndarray

    def __post_init__(self) -> None:
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        probs = np.asarray(self.probs, dtype=float)
        if pts.shape[0] == 0:
            raise ConfigError("grid needs at least one point")
        if probs.shape != (pts.shape[0],):
            raise ConfigError("probs must have one entry per grid point")
        if np.any(probs < 0.0) or abs(float(probs.sum()) - 1.0) > 1e-9:
            raise ConfigError("grid probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "probs", probs)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(cum, rng.random(n), side="right")
        idx = np.minimum(idx, self.probs.size - 1)
        return self.points[idx]


@dataclass(frozen=True)
class ProductUniform:
    """Independent uniforms on [low_k, high_k] per coordinate."""

    lows: tuple
    highs: tuple

    def __post_init__(self) -> None:
        lo = np.asarray(self.lows, dtype=float)
        hi = np.asarray(self.highs, dtype=float)
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size == 0:
            raise ConfigError("lows and highs must be equal-length vectors")
        if np.any(hi <= lo):
            raise ConfigError("each high must exceed its low")
        object.__setattr__(self, "lows", tuple(float(v) for v in lo))
        object.__setattr__(self, "highs", tuple(float(v) for v in hi))

    @property
    def d(self) -> int:
        return len(self.lows)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo = np.asarray(self.lows)
        hi = np.asarray(self.highs)
        return lo + (hi - lo) * rng.random((n, self.d))


CovariateLaw = Union[FiniteGrid, ProductUniform]


# ---- picklable effect functions ----
# Plain closures would break the process pool, so the standard shapes are
# small frozen callables.


@dataclass(frozen=True)
class ConstantFn:
    value: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.full(x.shape[0], float(self.value))


@dataclass(frozen=True)
class LinearFn:
    coef: tuple
    intercept: float = 0.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ np.asarray(self.coef, dtype=float) + float(self.intercept)


@dataclass(frozen=True)
class GridLookupFn:
    """x -> value by exact match against a table of grid rows."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (pts.shape[0],):
            raise ConfigError("lookup needs one value per grid row")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty(x.shape[0])
        for start in range(0, x.shape[0], 4096):
            block = x[start : start + 4096]
            gap = np.abs(block[:, None, :] - self.points[None, :, :]).max(axis=2)
            hit = np.argmin(gap, axis=1)
            if np.any(gap[np.arange(block.shape[0]), hit] > _GRID_MATCH_TOL):
                raise DataError("covariate row is not on the lookup grid")
            out[start : start + 4096] = self.values[hit]
        return out


# ---- the design itself ----


@dataclass(frozen=True)
class DgpSpec:
    """Binary synthetic design: X ~ law, T ~ Bernoulli(e), additive noise.

    tau(x) = E[Y(1) - Y(0) | x] and baseline(x) = E[Y(0) | x] are vectorized
    callables; noise_sd scales an additive standard-normal disturbance.
    """

    law: CovariateLaw
    cate: object
    baseline: object
    noise_sd: float
    propensity: float
    n_arms: int = 2

    def __post_init__(self) -> None:
        if self.n_arms != 2:
            raise ConfigError("synthetic designs are binary; n_arms must be 2")
        if not _KAPPA <= self.propensity <= 1.0 - _KAPPA:
            raise ConfigError(
                f"propensity {self.propensity} violates the overlap margin {_KAPPA}"
            )
        if self.noise_sd < 0.0:
            raise ConfigError("noise_sd must be >= 0")


def _eval_fn(fn, x: np.ndarray, what: str) -> np.ndarray:
    out = np.asarray(fn(x), dtype=float)
    if out.shape != (x.shape[0],):
        raise ConfigError(f"{what} must return one value per row")
    return out


def make_dataset(spec: DgpSpec, n: int, seed: int) -> Dataset:
    """Draw a dataset from the design, deterministic in the seed.

    RNG consumption order is fixed (covariates, then assignments, then
    disturbances) so the same seed always yields the same rows.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = rng_for(seed)
    x = spec.law.sample(n, rng)
    t = (rng.random(n) < spec.propensity).astype(np.int64)
    y = _eval_fn(spec.baseline, x, "baseline") + t * _eval_fn(spec.cate, x, "cate")
    if spec.noise_sd > 0.0:
        y = y + spec.noise_sd * rng.standard_normal(n)
    return Dataset(y=y, t=t, x=x, propensity=float(spec.propensity))


# ---- exact truth ----


@dataclass(frozen=True)
class TruthOracle:
    """Population welfare as an exact finite sum over the support.

    The support is scored as a table with contrast tau(x) per point, so the
    production solvers and welfare functions apply verbatim with the point
    probabilities as weights.  Never-treat has welfare 0 by construction.
    exact is False when the support is a Monte Carlo draw from a continuous
    law; regret is then approximate.
    """

    points: np.ndarray
    probs: np.ndarray
    tau: np.ndarray
    exact: bool = True
    table: Optional[ScoreTable] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        probs = np.asarray(self.probs, dtype=float)
        tau = np.asarray(self.tau, dtype=float)
        m = pts.shape[0]
        if probs.shape != (m,) or tau.shape != (m,):
            raise ConfigError("points, probs, and tau must align")
        if np.any(probs < 0.0) or abs(float(probs.sum()) - 1.0) > 1e-9:
            raise ConfigError("support probabilities must be nonnegative and sum to 1")
        z = np.column_stack([np.zeros(m), tau])
        table = ScoreTable(z=z, g=z.copy(), x=pts, g_binary=tau.copy())
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "_welfare_cache", {})

    @classmethod
    def from_dgp(cls, spec: DgpSpec) -> "TruthOracle":
        if not isinstance(spec.law, FiniteGrid):
            raise ConfigError(
                "exact oracles need a finite grid; use from_sample for continuous laws"
            )
        tau = _eval_fn(spec.cate, spec.law.points, "cate")
        return cls(points=spec.law.points, probs=spec.law.probs, tau=tau, exact=True)

    @classmethod
    def from_sample(cls, spec: DgpSpec, m: int = 10**6, seed: int = 0) -> "TruthOracle":
        """Approximate oracle on a held-out sample from a continuous law."""
        if m < 1:
            raise ConfigError("m must be >= 1")
        x = spec.law.sample(m, rng_for(seed))
        tau = _eval_fn(spec.cate, x, "cate")
        return cls(points=x, probs=np.full(m, 1.0 / m), tau=tau, exact=False)

    def welfare(self, p: Policy) -> float:
        key = serialize_policy(p)
        cache = self._welfare_cache
        if key not in cache:
            cache[key] = weighted_welfare(self.table, self.probs, p)
        return cache[key]

    def _check_capacity_basis(self, spec: PolicyClassSpec) -> None:
        # A uniform-share capacity counts support points, which is not the
        # population treated share unless the support is equiprobable.
        if spec.capacity is None or spec.capacity_basis != UNIFORM_SHARE:
            return
        if not np.allclose(self.probs, self.probs[0]):
            raise ConfigError(
                "uniform-share capacity is a sample notion; population solves on a "
                "weighted support need the weighted-share basis"
            )

    def optimum(self, spec: PolicyClassSpec) -> SolveResult:
        self._check_capacity_basis(spec)
        return solve_class(self.table, self.probs, spec)

    def member_welfares(self, members: Sequence[Policy]) -> np.ndarray:
        return np.array([self.welfare(p) for p in members])


def true_regret(oracle: TruthOracle, spec: PolicyClassSpec, p: Policy) -> float:
    """W*_class(P0) minus W(P0; p); nonnegative whenever p is in the class."""
    r = oracle.optimum(spec).value - oracle.welfare(p)
    if r < -1e-9:
        raise SolverError(f"population optimum beaten by {-r:.3e}; oracle solve is inexact")
    return max(r, 0.0)


# ---- canned designs used across tests and docs ----


def one_hot_grid(
    taus: Sequence[float],
    probs: Optional[Sequence[float]] = None,
    noise_sd: float = 1.0,
    propensity: float = 0.5,
) -> DgpSpec:
    """Design on m one-hot points in R^m with per-point effects taus."""
    taus = np.asarray(taus, dtype=float)
    m = taus.size
    if m == 0:
        raise ConfigError("need at least one point")
    p = np.full(m, 1.0 / m) if probs is None else np.asarray(probs, dtype=float)
    pts = np.eye(m)
    return DgpSpec(
        law=FiniteGrid(points=pts, probs=p),
        cate=GridLookupFn(points=pts, values=taus),
        baseline=ConstantFn(0.0),
        noise_sd=noise_sd,
        propensity=propensity,
    )


def one_hot_subset_class(m: int) -> PolicyClassSpec:
    """All 2^m subset rules over m one-hot points, as sign-vector rules."""
    if not 1 <= m <= 16:
        raise ConfigError("subset classes are enumerable for 1 <= m <= 16 points")
    members = []
    for mask in range(2**m):
        beta = tuple(1.0 if mask >> j & 1 else -1.0 for j in range(m))
        members.append(LinearRule(beta=beta, c=0.0))
    return PolicyClassSpec(kind=FiniteClass(policies=tuple(members)))


# ---- experiments ----


@dataclass(frozen=True)
class RatePoint:
    n: int
    median_regret: float
    q90_regret: float
    rep_medians: tuple
    rep_q90s: tuple

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "median_regret": self.median_regret,
            "q90_regret": self.q90_regret,
            "rep_medians": list(self.rep_medians),
            "rep_q90s": list(self.rep_q90s),
        }


@dataclass(frozen=True)
class RateReport:
    """Per-n medians of posterior regret and the fitted log-log slope."""

    points: tuple
    slope: Optional[float]
    intercept: Optional[float]
    lemma_checked: int
    lemma_violations: int
    exact_oracle: bool

    def to_dict(self) -> dict:
        return {
            "points": [pt.to_dict() for pt in self.points],
            "slope": self.slope,
            "intercept": self.intercept,
            "lemma": {"checked": self.lemma_checked, "violations": self.lemma_violations},
            "exact_oracle": self.exact_oracle,
        }

    def csv_rows(self) -> list:
        rows = [["n", "median_regret", "q90_regret"]]
        for pt in self.points:
            rows.append([str(pt.n), repr(pt.median_regret), repr(pt.q90_regret)])
        return rows

    @classmethod
    def from_dict(cls, d: dict) -> "RateReport":
        points = tuple(
            RatePoint(
                n=int(p["n"]),
                median_regret=float(p["median_regret"]),
                q90_regret=float(p["q90_regret"]),
                rep_medians=tuple(p.get("rep_medians", ())),
                rep_q90s=tuple(p.get("rep_q90s", ())),
            )
            for p in d["points"]
        )
        return cls(
            points=points,
            slope=d.get("slope"),
            intercept=d.get("intercept"),
            lemma_checked=int(d.get("lemma", {}).get("checked", 0)),
            lemma_violations=int(d.get("lemma", {}).get("violations", 0)),
            exact_oracle=bool(d.get("exact_oracle", True)),
        )


def _rate_task(args):
    dgp, class_spec, n, S, data_seed, run_seed, uniform = args
    ds = make_dataset(dgp, n, data_seed)
    run = run_nbpl(
        ds, [("g", class_spec)], S=S, seed=run_seed, uniform_weights=uniform
    )
    return ds, run


def _treat_matrix(members: Sequence[Policy], x: np.ndarray) -> np.ndarray:
    return np.stack([(assign_all(p, x) != 0).astype(float) for p in members])


def _lemma_counts(
    ds: Dataset,
    run,
    members: Sequence[Policy],
    w0_members: np.ndarray,
    regrets: np.ndarray,
) -> tuple[int, int]:
    """Count draws violating R <= rho(P0, Pn) + rho(Pn, P) by exhaustive scan."""
    g = compute_scores(ds).g_binary
    t_mat = _treat_matrix(members, ds.x)
    w_n = t_mat @ (g / ds.n)
    w_s = (run.weights * g) @ t_mat.T
    rho1 = float(np.max(np.abs(w0_members - w_n)))
    rho2 = np.max(np.abs(w_n[None, :] - w_s), axis=1)
    bad = int(np.count_nonzero(regrets > rho1 + rho2 + LEMMA_SLACK))
    return regrets.size, bad


def regret_experiment(
    dgp: DgpSpec,
    class_spec: PolicyClassSpec,
    ns: Sequence[int],
    S: int,
    reps: int,
    seed: int,
    workers: int = 1,
    check_lemma: bool = False,
    uniform_weights: bool = False,
    oracle: Optional[TruthOracle] = None,
) -> RateReport:
    """Posterior regret against exact truth across sample sizes.

    Per (n, rep): draw data, run the posterior, map every draw's policy to
    its true regret, and record that run's median and 0.9 quantile.  Per n
    the report carries the across-rep medians of both; the slope is a least
    squares fit of log median regret on log n over the n with positive
    median.  check_lemma additionally scans every draw for the regret
    decomposition bound, which needs an uncapacitated finite class.
    """
    ns = [int(n) for n in ns]
    if len(ns) == 0 or any(b <= a for a, b in zip(ns, ns[1:])):
        raise ConfigError("ns must be strictly increasing")
    if reps < 1 or S < 1:
        raise ConfigError("reps and S must be >= 1")
    if check_lemma:
        if not isinstance(class_spec.kind, FiniteClass) or class_spec.capacity is not None:
            raise ConfigError(
                "the decomposition scan needs a finite class without capacity"
            )
    if oracle is None:
        if isinstance(dgp.law, FiniteGrid):
            oracle = TruthOracle.from_dgp(dgp)
        else:
            oracle = TruthOracle.from_sample(dgp, seed=derive_seed(seed, 2, 0))
    w_star = oracle.optimum(class_spec).value

    members: tuple = ()
    w0_members = np.empty(0)
    if check_lemma:
        members = class_spec.kind.policies
        w0_members = oracle.member_welfares(members)

    tasks = [
        (dgp, class_spec, n, S, derive_seed(seed, 0, i, r), derive_seed(seed, 1, i, r), uniform_weights)
        for i, n in enumerate(ns)
        for r in range(reps)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_rate_task, tasks, chunksize=1))
    else:
        outputs = [_rate_task(t) for t in tasks]

    checked = 0
    violations = 0
    med = np.empty((len(ns), reps))
    q90 = np.empty((len(ns), reps))
    for (ds, run), (i, r) in zip(
        outputs, ((i, r) for i in range(len(ns)) for r in range(reps))
    ):
        regrets = np.array(
            [max(w_star - oracle.welfare(p), 0.0) for p in run.policies("g")]
        )
        med[i, r] = np.quantile(regrets, 0.5)
        q90[i, r] = np.quantile(regrets, 0.9)
        if check_lemma:
            c, b = _lemma_counts(ds, run, members, w0_members, regrets)
            checked += c
            violations += b

    points = tuple(
        RatePoint(
            n=n,
            median_regret=float(np.median(med[i])),
            q90_regret=float(np.median(q90[i])),
            rep_medians=tuple(float(v) for v in med[i]),
            rep_q90s=tuple(float(v) for v in q90[i]),
        )
        for i, n in enumerate(ns)
    )
    slope = intercept = None
    keep = [(pt.n, pt.median_regret) for pt in points if pt.median_regret > 0.0]
    if len(keep) >= 2:
        ln = np.log([k[0] for k in keep])
        lm = np.log([k[1] for k in keep])
        coef = np.polyfit(ln, lm, 1)
        slope, intercept = float(coef[0]), float(coef[1])
    return RateReport(
        points=points,
        slope=slope,
        intercept=intercept,
        lemma_checked=checked,
        lemma_violations=violations,
        exact_oracle=oracle.exact,
    )


@dataclass(frozen=True)
class SelectionPoint:
    n: int
    correct_fraction: Optional[float]
    rep_fractions: tuple
    near_zero_fraction: Optional[float]
    rep_near_fractions: tuple

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "correct_fraction": self.correct_fraction,
            "rep_fractions": list(self.rep_fractions),
            "near_zero_fraction": self.near_zero_fraction,
            "rep_near_fractions": list(self.rep_near_fractions),
        }


@dataclass(frozen=True)
class SelectionReport:
    """Sign agreement between posterior and true class ranking, per n."""

    label_a: str
    label_b: str
    delta: float
    eps: float
    points: tuple

    def to_dict(self) -> dict:
        return {
            "label_a": self.label_a,
            "label_b": self.label_b,
            "delta": self.delta,
            "eps": self.eps,
            "points": [pt.to_dict() for pt in self.points],
        }

    def csv_rows(self) -> list:
        rows = [["n", "correct_sign_fraction", "near_zero_fraction"]]
        for pt in self.points:
            rows.append(
                [
                    str(pt.n),
                    "" if pt.correct_fraction is None else repr(pt.correct_fraction),
                    "" if pt.near_zero_fraction is None else repr(pt.near_zero_fraction),
                ]
            )
        return rows

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionReport":
        points = tuple(
            SelectionPoint(
                n=int(p["n"]),
                correct_fraction=p.get("correct_fraction"),
                rep_fractions=tuple(p.get("rep_fractions", ())),
                near_zero_fraction=p.get("near_zero_fraction"),
                rep_near_fractions=tuple(p.get("rep_near_fractions", ())),
            )
            for p in d["points"]
        )
        return cls(
            label_a=str(d.get("label_a", "a")),
            label_b=str(d.get("label_b", "b")),
            delta=float(d["delta"]),
            eps=float(d["eps"]),
            points=points,
        )


def _selection_task(args):
    dgp, class_a, class_b, n, S, data_seed, run_seed = args
    ds = make_dataset(dgp, n, data_seed)
    run = run_nbpl(ds, [("a", class_a), ("b", class_b)], S=S, seed=run_seed)
    return run.values("a"), run.values("b")


def selection_experiment(
    dgp: DgpSpec,
    class_a: PolicyClassSpec,
    class_b: PolicyClassSpec,
    ns: Sequence[int],
    S: int,
    reps: int,
    seed: int,
    workers: int = 1,
    eps: Optional[float] = None,
    oracle: Optional[TruthOracle] = None,
    labels: tuple = ("a", "b"),
) -> SelectionReport:
    """Fraction of draws ranking the two classes the same way the truth does.

    The true gap is Delta = W*_a(P0) - W*_b(P0).  When Delta is zero to
    solver precision the sign fraction is undefined and the report instead
    carries Pr(|difference| < eps); eps defaults to ten times the machine
    scale of the observed values.
    """
    ns = [int(n) for n in ns]
    if len(ns) == 0 or any(b <= a for a, b in zip(ns, ns[1:])):
        raise ConfigError("ns must be strictly increasing")
    if reps < 1 or S < 1:
        raise ConfigError("reps and S must be >= 1")
    if oracle is None:
        if isinstance(dgp.law, FiniteGrid):
            oracle = TruthOracle.from_dgp(dgp)
        else:
            oracle = TruthOracle.from_sample(dgp, seed=derive_seed(seed, 2, 0))
    delta = oracle.optimum(class_a).value - oracle.optimum(class_b).value
    delta_zero = abs(delta) <= 1e-12

    tasks = [
        (dgp, class_a, class_b, n, S, derive_seed(seed, 0, i, r), derive_seed(seed, 1, i, r))
        for i, n in enumerate(ns)
        for r in range(reps)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_selection_task, tasks, chunksize=1))
    else:
        outputs = [_selection_task(t) for t in tasks]

    diffs = [va - vb for va, vb in outputs]
    if eps is None:
        scale = max(
            [1.0]
            + [float(np.max(np.abs(v))) for v, _ in outputs]
            + [float(np.max(np.abs(v))) for _, v in outputs]
        )
        eps = 10.0 * np.finfo(float).eps * scale

    points = []
    for i, n in enumerate(ns):
        block = diffs[i * reps : (i + 1) * reps]
        fracs = []
        nears = []
        for d in block:
            if not delta_zero:
                fracs.append(float(np.mean(d > 0.0) if delta > 0 else np.mean(d < 0.0)))
            nears.append(float(np.mean(np.abs(d) < eps)))
        pooled = np.concatenate(block)
        points.append(
            SelectionPoint(
                n=n,
                correct_fraction=None
                if delta_zero
                else float(np.mean(pooled > 0.0) if delta > 0 else np.mean(pooled < 0.0)),
                rep_fractions=tuple(fracs),
                near_zero_fraction=float(np.mean(np.abs(pooled) < eps))
                if delta_zero
                else None,
                rep_near_fractions=tuple(nears),
            )
        )
    return SelectionReport(
        label_a=labels[0],
        label_b=labels[1],
        delta=float(delta),
        eps=float(eps),
        points=tuple(points),
    )
