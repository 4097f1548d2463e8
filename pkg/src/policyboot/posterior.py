"""Posterior draws of the data distribution and the full learning loop.

The posterior over the reduced-form distribution is sampled two ways: the
Bayesian bootstrap (normalized unit-exponential weights on the observed
rows) and truncated stick-breaking for a Dirichlet prior with a general
base measure.  Each bootstrap draw is pushed through the welfare maximizer
for every requested class under the same weight vector, which is what makes
cross-class statements joint posterior statements.

Reproducibility contract: draw s uses the generator seeded by
derive_seed(seed, s), so results are identical for any worker count.
Exponential variates come from the inverse CDF, -log(1 - U).
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Dataset, ScoreTable, compute_scores
from .errors import ConfigError, DataError
from .policies import (
    Policy,
    PolicyClassSpec,
    policy_from_dict,
    policy_to_dict,
)
from .seeding import derive_seed
from .solvers import solve_class

_TINY = np.finfo(float).tiny
_WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True)
class WeightDraw:
    """One normalized Bayesian-bootstrap weight vector."""

    w: np.ndarray
    draw_index: int
    seed_path: tuple[int, ...]

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ConfigError("weight draw must be a nonempty vector")
        if np.any(w <= 0.0):
            raise ConfigError("weight draw entries must be strictly positive")
        if abs(w.sum() - 1.0) > _WEIGHT_SUM_TOL:
            raise ConfigError(f"weight draw sums to {w.sum()}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)


def bb_weights(n: int, rng: np.random.Generator) -> np.ndarray:
    """Normalized unit-exponential weights from the supplied generator.

    A uniform variate of exactly 0 (probability 2**-53 per entry) would map
    to a zero weight; it is clamped to the smallest positive double so the
    weights stay strictly positive.
    """
    if n < 1:
        raise ConfigError("need at least one row to draw weights")
    u = rng.random(n)
    omega = -np.log1p(-u)
    omega[omega == 0.0] = _TINY
    return omega / omega.sum()


def draw_bb_weights(n: int, seed: int, draw_index: int = 1) -> WeightDraw:
    """Weight draw for one posterior index under the seeding contract."""
    derived = derive_seed(seed, draw_index)
    rng = np.random.default_rng(derived)
    return WeightDraw(
        w=bb_weights(n, rng),
        draw_index=draw_index,
        seed_path=(seed, draw_index, derived),
    )


# ---- Stick-breaking under a general base measure ----


@dataclass(frozen=True)
class BaseMeasure:
    """Base measure alpha: total mass plus a sampler for its normalized law.

    The sampler returns one reduced-form row (y, t, x).  Alternatively the
    measure can carry explicit scored atoms (z, x), in which case sampling
    picks one uniformly.
    """

    total_mass: float
    sampler: Optional[Callable[[np.random.Generator], tuple]] = None
    atom_z: Optional[np.ndarray] = field(default=None, repr=False)
    atom_x: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.total_mass < 0.0:
            raise ConfigError("base measure mass must be >= 0")
        if self.total_mass > 0.0 and self.sampler is None and self.atom_z is None:
            raise ConfigError("positive-mass base measure needs a sampler or atoms")

    @classmethod
    def empty(cls) -> "BaseMeasure":
        return cls(total_mass=0.0)

    @classmethod
    def from_sampler(
        cls, total_mass: float, sampler: Callable[[np.random.Generator], tuple]
    ) -> "BaseMeasure":
        return cls(total_mass=total_mass, sampler=sampler)

    @classmethod
    def from_scored_atoms(
        cls, total_mass: float, z: np.ndarray, x: np.ndarray
    ) -> "BaseMeasure":
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if z.shape[0] != x.shape[0] or z.shape[0] == 0:
            raise ConfigError("atom arrays must be nonempty and aligned")
        return cls(total_mass=total_mass, atom_z=z, atom_x=x)


@dataclass(frozen=True)
class StickBreakDraw:
    """Truncated stick-breaking draw: K atoms with masses summing to 1.

    Atoms are stored scored: z rows and covariates, plus the welfare
    contrast g = z - z[:, 0:1].  residual_bound bounds the mass the
    truncation discarded before the last stick absorbed it.
    """

    masses: np.ndarray
    z: np.ndarray
    g: np.ndarray
    x: np.ndarray
    truncation: int
    residual_bound: float

    def __post_init__(self) -> None:
        masses = np.asarray(self.masses, dtype=float)
        if np.any(masses < 0.0):
            raise ConfigError("stick-breaking masses must be nonnegative")
        if abs(masses.sum() - 1.0) > 1e-9:
            raise ConfigError(f"stick-breaking masses sum to {masses.sum()}")

    def welfare(self, policy: Policy) -> float:
        from .policies import assign_all

        arms = assign_all(policy, self.x)
        return float(self.masses @ self.g[np.arange(self.g.shape[0]), arms])


def default_truncation(total_mass: float, n: int, tol: float = 1e-3) -> int:
    """Smallest K whose residual bound (M/(M+1))**(K-1) is below tol."""
    m = total_mass + n
    return int(np.ceil(1.0 + np.log(tol) / np.log(m / (m + 1.0))))


def draw_stick_breaking(
    ds: Dataset,
    base: BaseMeasure,
    K: Optional[int],
    rng: np.random.Generator,
) -> StickBreakDraw:
    """One truncated stick-breaking draw from the posterior Dirichlet.

    Stick fractions V_k follow Beta(1, M_n) with M_n the posterior mass
    (base mass + n), drawn by inverse CDF 1 - (1-U)**(1/M_n); the final
    stick absorbs the leftover mass exactly.  Atom locations follow the
    normalized posterior base: with probability n/M_n a uniformly chosen
    data row, otherwise a base-measure sample.  The generator is consumed
    in a fixed order (stick uniforms, selector uniforms, data indices,
    then base samples) so draws are reproducible by seed.
    """
    n = ds.n
    m_n = base.total_mass + n
    if K is None:
        K = default_truncation(base.total_mass, n)
    if K < 1:
        raise ConfigError("truncation must be at least 1")

    if K > 1:
        u = rng.random(K - 1)
        v = 1.0 - np.power(1.0 - u, 1.0 / m_n)
        log_remaining = np.concatenate(([0.0], np.cumsum(np.log1p(-v))))
        masses = np.empty(K)
        masses[: K - 1] = v * np.exp(log_remaining[: K - 1])
        masses[K - 1] = max(0.0, 1.0 - masses[: K - 1].sum())
    else:
        masses = np.ones(1)

    take_data = rng.random(K) < (n / m_n)
    data_idx = rng.integers(0, n, size=K)

    data_scores = compute_scores(ds)
    k_arms = data_scores.n_arms
    z = np.zeros((K, k_arms))
    x = np.zeros((K, ds.d))
    z[take_data] = data_scores.z[data_idx[take_data]]
    x[take_data] = data_scores.x[data_idx[take_data]]

    n_base = int(np.count_nonzero(~take_data))
    if n_base:
        if base.atom_z is not None:
            pick = rng.integers(0, base.atom_z.shape[0], size=n_base)
            bz = base.atom_z[pick]
            bx = base.atom_x[pick]
            if bz.shape[1] != k_arms or bx.shape[1] != ds.d:
                raise DataError("base atoms do not match the dataset shape")
        elif base.sampler is not None:
            rows = [base.sampler(rng) for _ in range(n_base)]
            bz, bx = _score_base_rows(rows, ds)
        else:
            raise ConfigError("base measure has mass but no way to sample")
        z[~take_data] = bz
        x[~take_data] = bx

    g = z - z[:, [0]]
    g[:, 0] = 0.0
    residual = float((m_n / (m_n + 1.0)) ** (K - 1))
    return StickBreakDraw(
        masses=masses, z=z, g=g, x=x, truncation=K, residual_bound=residual
    )


def _score_base_rows(rows: Sequence[tuple], ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Score sampled base rows with the dataset's constant propensity."""
    if ds.constant_propensity is None:
        raise DataError(
            "base-measure rows need a constant-propensity dataset; "
            "supply scored atoms instead"
        )
    e = ds.constant_propensity
    k_arms = e.shape[0]
    z = np.zeros((len(rows), k_arms))
    x = np.zeros((len(rows), ds.d))
    for i, row in enumerate(rows):
        y, t, xv = row
        t = int(t)
        if not (0 <= t < k_arms):
            raise DataError(f"base-measure arm {t} out of range")
        xv = np.asarray(xv, dtype=float).reshape(-1)
        if xv.shape[0] != ds.d:
            raise DataError("base-measure covariates have the wrong length")
        z[i, t] = float(y) / float(e[t])
        x[i] = xv
    return z, x


# ---- The full loop ----


@dataclass(frozen=True)
class DrawResult:
    """One class's maximizer under one weight draw."""

    s: int
    policy: Policy
    value: float
    shares: np.ndarray


@dataclass(frozen=True)
class NbplRun:
    """Posterior draws of (policy, welfare, shares) per class.

    Every class's draw s was solved under the same weight vector, so
    cross-class functionals of a draw are jointly coherent.  weights is the
    (S, n) matrix of draws, None for runs loaded from disk.
    """

    labels: tuple[str, ...]
    results: dict[str, tuple[DrawResult, ...]]
    weights: Optional[np.ndarray]
    config: dict

    @property
    def n_draws(self) -> int:
        return len(self.results[self.labels[0]])

    def values(self, label: str) -> np.ndarray:
        if label not in self.results:
            raise ConfigError(f"no class labeled '{label}' in this run")
        return np.array([r.value for r in self.results[label]])

    def treated_shares(self, label: str) -> np.ndarray:
        if label not in self.results:
            raise ConfigError(f"no class labeled '{label}' in this run")
        return np.array([float(r.shares[1:].sum()) for r in self.results[label]])

    def policies(self, label: str) -> list[Policy]:
        if label not in self.results:
            raise ConfigError(f"no class labeled '{label}' in this run")
        return [r.policy for r in self.results[label]]

    def to_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            header = {"record": "header", **self.config}
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for s in range(1, self.n_draws + 1):
                for label in self.labels:
                    r = self.results[label][s - 1]
                    rec = {
                        "record": "draw",
                        "s": r.s,
                        "class": label,
                        "value": r.value,
                        "shares": [float(v) for v in r.shares],
                        "policy": policy_to_dict(r.policy),
                    }
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path: str) -> "NbplRun":
        try:
            fh = open(path, "r", encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        with fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        if not lines or lines[0].get("record") != "header":
            raise DataError(f"{path} is not a posterior run file")
        config = {k: v for k, v in lines[0].items() if k != "record"}
        results: dict[str, list[DrawResult]] = {}
        labels: list[str] = []
        for rec in lines[1:]:
            if rec.get("record") != "draw":
                continue
            label = rec["class"]
            if label not in results:
                results[label] = []
                labels.append(label)
            results[label].append(
                DrawResult(
                    s=int(rec["s"]),
                    policy=policy_from_dict(rec["policy"]),
                    value=float(rec["value"]),
                    shares=np.asarray(rec["shares"], dtype=float),
                )
            )
        counts = {len(v) for v in results.values()}
        if not results or len(counts) != 1:
            raise DataError(f"{path} has unbalanced draw records")
        return cls(
            labels=tuple(labels),
            results={k: tuple(v) for k, v in results.items()},
            weights=None,
            config=config,
        )


def _solve_chunk(
    scores: ScoreTable,
    classes: Sequence[tuple[str, PolicyClassSpec]],
    seed: int,
    s_range: Sequence[int],
    uniform_weights: bool,
) -> tuple[list[list[DrawResult]], np.ndarray]:
    n = scores.n
    weights = np.empty((len(s_range), n))
    out: list[list[DrawResult]] = [[] for _ in classes]
    for row, s in enumerate(s_range):
        if uniform_weights:
            w = np.full(n, 1.0 / n)
        else:
            rng = np.random.default_rng(derive_seed(seed, s))
            w = bb_weights(n, rng)
        weights[row] = w
        for ci, (_, spec) in enumerate(classes):
            res = solve_class(scores, w, spec)
            out[ci].append(
                DrawResult(s=s, policy=res.policy, value=res.value, shares=res.shares)
            )
    return out, weights


def run_nbpl(
    ds: Dataset,
    classes: Sequence[tuple[str, PolicyClassSpec]],
    S: int,
    seed: int,
    workers: int = 1,
    uniform_weights: bool = False,
    progress: Optional[Callable[[int, int], None]] = None,
) -> NbplRun:
    """Posterior policy learning: S weight draws, each pushed through every
    class's welfare maximizer.

    Results are bit-identical for a fixed seed regardless of workers; the
    uniform_weights override replaces every draw's weights with 1/n, which
    reduces draw 1 to the plain empirical maximizer.
    """
    if S < 1:
        raise ConfigError("S must be >= 1")
    if not classes:
        raise ConfigError("need at least one policy class")
    labels = [label for label, _ in classes]
    if len(set(labels)) != len(labels):
        raise ConfigError("class labels must be unique")
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    scores = compute_scores(ds)

    all_s = list(range(1, S + 1))
    if workers == 1 or S < 4:
        chunks = [all_s]
    else:
        size = (S + workers - 1) // workers
        chunks = [all_s[i : i + size] for i in range(0, S, size)]

    partials: list[tuple[list[list[DrawResult]], np.ndarray]] = []
    if len(chunks) == 1:
        partials.append(_solve_chunk(scores, classes, seed, chunks[0], uniform_weights))
        if progress is not None:
            progress(S, S)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_solve_chunk, scores, classes, seed, chunk, uniform_weights)
                for chunk in chunks
            ]
            done = 0
            for chunk, fut in zip(chunks, futures):
                partials.append(fut.result())
                done += len(chunk)
                if progress is not None:
                    progress(done, S)

    results: dict[str, tuple[DrawResult, ...]] = {}
    for ci, label in enumerate(labels):
        merged: list[DrawResult] = []
        for part, _ in partials:
            merged.extend(part[ci])
        results[label] = tuple(merged)
    weights = np.concatenate([wts for _, wts in partials], axis=0)

    from .policies import class_spec_to_dict

    config = {
        "S": S,
        "seed": seed,
        "uniform_weights": uniform_weights,
        "classes": [
            {"label": label, **class_spec_to_dict(spec)} for label, spec in classes
        ],
    }
    return NbplRun(
        labels=tuple(labels), results=results, weights=weights, config=config
    )
