"""Exact weighted-welfare maximization over policy classes.

Three search engines sit behind one dispatcher:

* threshold rules on one covariate, enumerated exactly (all orientations
  and cut points),
* half-space rules on two covariates with intercept, enumerated exactly
  through every boundary line defined by a pair of data points (O(n^3)
  evaluations via per-normal prefix sweeps) while n stays below the class's
  n_exact, with a multi-start local search fallback above it,
* depth-bounded trees, enumerated exactly over the candidate split grids
  with per-leaf label optimization, using per-axis sort orders and prefix
  sums so each split combination costs amortized O(1).

Ties within VALUE_TIE_TOL of the best value prefer the smaller weighted
treated share, then the lexicographically smaller serialized policy, so
output is deterministic for fixed input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .data import ScoreTable
from .errors import SolverError
from .policies import (
    FiniteClass,
    Leaf,
    LinearClass,
    LinearRule,
    Policy,
    PolicyClassSpec,
    Split,
    TreeClass,
    TreeRule,
    UNIFORM_SHARE,
    assign_all,
    serialize_policy,
)
from .seeding import derive_seed

VALUE_TIE_TOL = 1e-12
CAPACITY_TOL = 1e-12
_RECHECK_TOL = 1e-10
_MAX_TIE_CANDIDATES = 10_000
_LOCAL_SEARCH_SEED = 0x9B5E_11D0


@dataclass(frozen=True)
class SolveResult:
    """Outcome of one class maximization.

    value is recomputed from the returned policy; exact marks searches that
    provably cover the class (restricted to its candidate grid).
    """

    policy: Policy
    value: float
    shares: np.ndarray
    exact: bool
    candidates_evaluated: int

    def to_dict(self) -> dict:
        from .policies import policy_to_dict

        return {
            "policy": policy_to_dict(self.policy),
            "value": self.value,
            "shares": [float(s) for s in self.shares],
            "exact": self.exact,
            "candidates_evaluated": self.candidates_evaluated,
        }


class _Incumbent:
    """Tracks the best candidate under the deterministic tie rule."""

    __slots__ = ("value", "wshare", "serial", "policy", "offers")

    def __init__(self) -> None:
        self.value = -np.inf
        self.wshare = np.inf
        self.serial = ""
        self.policy: Optional[Policy] = None
        self.offers = 0

    def offer(self, value: float, wshare: float, policy: Policy) -> None:
        self.offers += 1
        if self.policy is None or value > self.value + VALUE_TIE_TOL:
            self._take(value, wshare, policy)
            return
        if value < self.value - VALUE_TIE_TOL:
            return
        serial = serialize_policy(policy)
        if (wshare, serial) < (self.wshare, self.serial):
            self._take(value, wshare, policy, serial)

    def _take(
        self, value: float, wshare: float, policy: Policy, serial: Optional[str] = None
    ) -> None:
        self.value = value
        self.wshare = wshare
        self.policy = policy
        self.serial = serial if serial is not None else serialize_policy(policy)


def _basis_weights(w: np.ndarray, basis: str) -> np.ndarray:
    """Weights the capacity constraint is measured against."""
    if basis == UNIFORM_SHARE:
        return np.full(w.shape[0], 1.0 / w.shape[0])
    return w


def _finalize(
    scores: ScoreTable,
    w: np.ndarray,
    policy: Policy,
    exact: bool,
    evaluated: int,
    spec: PolicyClassSpec,
    expected_value: float,
) -> SolveResult:
    """Recompute value and shares from the chosen policy and sanity-check."""
    n, k = scores.n, scores.n_arms
    arms = assign_all(policy, scores.x)
    value = float(w @ scores.g[np.arange(n), arms])
    if abs(value - expected_value) > _RECHECK_TOL:
        raise SolverError(
            f"solver value {expected_value} does not recompute: got {value}"
        )
    shares = np.bincount(arms, weights=w, minlength=k)
    if spec.capacity is not None:
        bshare = float(_basis_weights(w, spec.capacity_basis) @ (arms != 0))
        if bshare > spec.capacity + CAPACITY_TOL:
            raise SolverError(
                f"chosen policy treats share {bshare}, capacity {spec.capacity}"
            )
    return SolveResult(
        policy=policy,
        value=value,
        shares=shares,
        exact=exact,
        candidates_evaluated=evaluated,
    )


def _check_solver_inputs(scores: ScoreTable, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (scores.n,):
        raise SolverError(f"weights shape {w.shape} does not match {scores.n} rows")
    if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-9:
        raise SolverError("weights must be nonnegative and sum to 1")
    return w


# ---- Linear classes ----


def solve_linear(
    scores: ScoreTable, w: np.ndarray, spec: PolicyClassSpec
) -> SolveResult:
    """Maximize weighted welfare over half-space rules.

    One covariate: exact enumeration of every threshold and orientation.
    Two covariates with intercept: exact enumeration of boundary lines
    through point pairs while n <= n_exact.  Anything else falls back to a
    deterministic multi-start local search with exact=False.
    """
    if not isinstance(spec.kind, LinearClass):
        raise SolverError("solve_linear requires a linear class spec")
    if scores.n_arms != 2:
        raise SolverError("linear rules support binary treatment only")
    w = _check_solver_inputs(scores, w)
    kind = spec.kind
    d = scores.x.shape[1]
    dims = kind.dims if kind.dims is not None else tuple(range(d))
    if any(dim < 0 or dim >= d for dim in dims):
        raise SolverError(f"covariate index out of range in dims {dims}")
    if len(dims) == 0:
        raise SolverError("linear class needs at least one covariate")

    if len(dims) == 1 and kind.include_intercept:
        return _solve_linear_1d(scores, w, dims[0], spec)
    if len(dims) == 2 and kind.include_intercept and scores.n <= kind.n_exact:
        return _solve_linear_pairs(scores, w, dims, spec)
    return _solve_linear_local(scores, w, dims, spec)


def _embed_beta(coeffs: Sequence[float], dims: Sequence[int], d: int) -> tuple:
    beta = [0.0] * d
    for dim, coef in zip(dims, coeffs):
        beta[dim] = float(coef)
    return tuple(beta)


def _never_rule(d: int) -> LinearRule:
    return LinearRule(beta=(0.0,) * d, c=1.0)


def _sweep_cuts(
    proj: np.ndarray, u: np.ndarray, w: np.ndarray, bw: np.ndarray
) -> dict:
    """Evaluate every boundary-inclusive cut {proj >= v} for one normal.

    Returns arrays over distinct projection values v: welfare, weighted
    treated share, capacity-basis share, and the cut values themselves.
    """
    order = np.argsort(proj, kind="stable")
    ps = proj[order]
    cum_u = np.concatenate(([0.0], np.cumsum(u[order])))
    cum_w = np.concatenate(([0.0], np.cumsum(w[order])))
    cum_b = np.concatenate(([0.0], np.cumsum(bw[order])))
    first = np.ones(ps.shape[0], dtype=bool)
    first[1:] = ps[1:] > ps[:-1]
    starts = np.nonzero(first)[0]
    return {
        "cuts": ps[starts],
        "value": cum_u[-1] - cum_u[starts],
        "wshare": cum_w[-1] - cum_w[starts],
        "bshare": cum_b[-1] - cum_b[starts],
    }


def _solve_linear_1d(
    scores: ScoreTable, w: np.ndarray, dim: int, spec: PolicyClassSpec
) -> SolveResult:
    g1 = scores.g[:, 1]
    u = w * g1
    bw = _basis_weights(w, spec.capacity_basis)
    xd = scores.x[:, dim]
    d = scores.x.shape[1]
    q = spec.capacity

    # Orientation +1 treats {x >= c}; orientation -1 treats {x <= c} via -x.
    sweeps = [
        (1.0, _sweep_cuts(xd, u, w, bw)),
        (-1.0, _sweep_cuts(-xd, u, w, bw)),
    ]
    evaluated = 1 + sum(s["cuts"].shape[0] for _, s in sweeps)

    vstar = 0.0  # never-treat is always feasible
    for _, s in sweeps:
        vals = s["value"]
        if q is not None:
            vals = np.where(s["bshare"] <= q + CAPACITY_TOL, vals, -np.inf)
        if vals.size:
            vstar = max(vstar, float(vals.max()))

    inc = _Incumbent()
    if 0.0 >= vstar - VALUE_TIE_TOL:
        inc.offer(0.0, 0.0, _never_rule(d))
    for sign, s in sweeps:
        ok = s["value"] >= vstar - VALUE_TIE_TOL
        if q is not None:
            ok &= s["bshare"] <= q + CAPACITY_TOL
        for i in np.nonzero(ok)[0]:
            # The cut lives in projection space: treat iff sign * x >= cut.
            rule = LinearRule(
                beta=_embed_beta([sign], [dim], d), c=float(s["cuts"][i])
            )
            inc.offer(float(s["value"][i]), float(s["wshare"][i]), rule)
    return _finalize(scores, w, inc.policy, True, evaluated, spec, inc.value)


def _pair_normals(points: np.ndarray, batch: int) -> Iterator[np.ndarray]:
    """Yield batches of candidate normals: 90-degree rotations of pairwise
    differences, both signs, plus the axis directions."""
    axes = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    yield axes
    n = points.shape[0]
    buf = []
    for i in range(n - 1):
        diff = points[i + 1 :] - points[i]
        keep = np.any(diff != 0.0, axis=1)
        if not np.any(keep):
            continue
        diff = diff[keep]
        normals = np.column_stack([-diff[:, 1], diff[:, 0]])
        buf.append(normals)
        buf.append(-normals)
        if sum(b.shape[0] for b in buf) >= batch:
            yield np.concatenate(buf)
            buf = []
    if buf:
        yield np.concatenate(buf)


def _solve_linear_pairs(
    scores: ScoreTable, w: np.ndarray, dims: tuple[int, int], spec: PolicyClassSpec
) -> SolveResult:
    points = scores.x[:, list(dims)]
    u = w * scores.g[:, 1]
    bw = _basis_weights(w, spec.capacity_basis)
    d = scores.x.shape[1]
    q = spec.capacity
    batch = max(1, 2_000_000 // max(scores.n, 1))

    # Pass 1: best feasible value over every normal and cut.
    vstar = 0.0
    evaluated = 1
    for normals in _pair_normals(points, batch):
        for nu in normals:
            s = _sweep_cuts(points @ nu, u, w, bw)
            evaluated += s["cuts"].shape[0]
            vals = s["value"]
            if q is not None:
                vals = np.where(s["bshare"] <= q + CAPACITY_TOL, vals, -np.inf)
            if vals.size:
                vstar = max(vstar, float(vals.max()))

    # Pass 2: materialize candidates tied with the best.
    inc = _Incumbent()
    if 0.0 >= vstar - VALUE_TIE_TOL:
        inc.offer(0.0, 0.0, _never_rule(d))
    for normals in _pair_normals(points, batch):
        for nu in normals:
            if inc.offers >= _MAX_TIE_CANDIDATES:
                break
            s = _sweep_cuts(points @ nu, u, w, bw)
            ok = s["value"] >= vstar - VALUE_TIE_TOL
            if q is not None:
                ok &= s["bshare"] <= q + CAPACITY_TOL
            for i in np.nonzero(ok)[0]:
                rule = LinearRule(
                    beta=_embed_beta(nu, dims, d), c=float(s["cuts"][i])
                )
                inc.offer(float(s["value"][i]), float(s["wshare"][i]), rule)
    return _finalize(scores, w, inc.policy, True, evaluated, spec, inc.value)


def _solve_linear_local(
    scores: ScoreTable, w: np.ndarray, dims: tuple[int, ...], spec: PolicyClassSpec
) -> SolveResult:
    """Multi-start local search over boundary normals; exact=False.

    Starts come from hyperplanes through sampled point subsets (a fixed
    internal seed keeps the search deterministic); each normal is scored by
    an exact cut sweep along its projections, and the best normal is refined
    coordinate by coordinate.
    """
    kind = spec.kind
    points = scores.x[:, list(dims)]
    u = w * scores.g[:, 1]
    bw = _basis_weights(w, spec.capacity_basis)
    d = scores.x.shape[1]
    k = len(dims)
    q = spec.capacity
    with_intercept = kind.include_intercept
    rng = np.random.default_rng(derive_seed(_LOCAL_SEARCH_SEED, scores.n, k))

    inc = _Incumbent()
    inc.offer(0.0, 0.0, _never_rule(d))
    evaluated = 1

    def try_normal(nu: np.ndarray) -> float:
        nonlocal evaluated
        norm = float(np.linalg.norm(nu))
        if norm == 0.0 or not np.all(np.isfinite(nu)):
            return -np.inf
        nu = nu / norm
        best_here = -np.inf
        for sign in (1.0, -1.0):
            snu = sign * nu
            if with_intercept:
                s = _sweep_cuts(points @ snu, u, w, bw)
                evaluated += s["cuts"].shape[0]
                ok = np.ones(s["cuts"].shape[0], dtype=bool)
                if q is not None:
                    ok = s["bshare"] <= q + CAPACITY_TOL
                for i in np.nonzero(ok)[0]:
                    val = float(s["value"][i])
                    best_here = max(best_here, val)
                    if val >= inc.value - VALUE_TIE_TOL:
                        inc.offer(
                            val,
                            float(s["wshare"][i]),
                            LinearRule(
                                beta=_embed_beta(snu, dims, d),
                                c=float(s["cuts"][i]),
                            ),
                        )
            else:
                treated = points @ snu >= 0.0
                evaluated += 1
                if q is None or float(bw @ treated) <= q + CAPACITY_TOL:
                    val = float(u @ treated)
                    best_here = max(best_here, val)
                    if val >= inc.value - VALUE_TIE_TOL:
                        inc.offer(
                            val,
                            float(w @ treated),
                            LinearRule(beta=_embed_beta(snu, dims, d), c=0.0),
                        )
        return best_here

    for j in range(k):
        nu = np.zeros(k)
        nu[j] = 1.0
        try_normal(nu)

    n_subset = k if with_intercept else max(k - 1, 1)
    for _ in range(kind.n_starts):
        idx = rng.choice(scores.n, size=min(n_subset, scores.n), replace=False)
        sub = points[idx]
        if with_intercept:
            a = np.column_stack([sub, -np.ones(sub.shape[0])])
        else:
            a = sub
        # Nullspace of the subset system gives a boundary through the points.
        _, _, vt = np.linalg.svd(a, full_matrices=True)
        nu = vt[-1][:k]
        try_normal(nu)

    # Coordinate refinement around the best normal found so far.
    for _ in range(3):
        if not isinstance(inc.policy, LinearRule):
            break
        base = np.array([inc.policy.beta[dim] for dim in dims])
        if not np.any(base != 0.0):
            break
        improved = False
        scale = float(np.linalg.norm(base))
        for j in range(k):
            for step in (0.5, 0.25, 0.1, 0.05, -0.5, -0.25, -0.1, -0.05):
                nu = base.copy()
                nu[j] += step * scale
                before = inc.value
                try_normal(nu)
                if inc.value > before + VALUE_TIE_TOL:
                    improved = True
        if not improved:
            break

    return _finalize(scores, w, inc.policy, False, evaluated, spec, inc.value)


# ---- Tree classes ----


def _build_grids(x: np.ndarray, kind: TreeClass) -> dict[int, np.ndarray]:
    d = x.shape[1]
    if kind.split_grid is not None:
        grids = {}
        for axis, grid in kind.split_grid.items():
            if axis < 0 or axis >= d:
                raise SolverError(f"split grid coordinate {axis} out of range")
            grids[axis] = np.asarray(grid, dtype=float)
        return grids
    grids = {}
    for axis in range(d):
        col = x[:, axis]
        distinct = np.unique(col)
        if distinct.shape[0] <= kind.grid_size:
            grids[axis] = distinct
        else:
            levels = (np.arange(kind.grid_size) + 0.5) / kind.grid_size
            grids[axis] = np.unique(np.quantile(col, levels))
    return grids


class _SubsetStructs:
    """Per-axis sorted orders, grid positions, and prefix sums for a row
    subset; everything the leaf decomposition needs."""

    __slots__ = ("total", "count", "wtotal", "btotal", "axes")

    def __init__(
        self,
        rows_by_axis: dict[int, np.ndarray],
        grids: dict[int, np.ndarray],
        x: np.ndarray,
        U: np.ndarray,
        w: np.ndarray,
        bw: np.ndarray,
    ) -> None:
        self.axes = {}
        total = None
        for axis, rows in rows_by_axis.items():
            xs = x[rows, axis]
            pos = np.searchsorted(xs, grids[axis], side="right")
            cum_u = np.concatenate(
                [np.zeros((1, U.shape[1])), np.cumsum(U[rows], axis=0)]
            )
            cum_w = np.concatenate(([0.0], np.cumsum(w[rows])))
            cum_b = np.concatenate(([0.0], np.cumsum(bw[rows])))
            self.axes[axis] = (pos, cum_u, cum_w, cum_b)
            if total is None:
                total = cum_u[-1]
                self.count = rows.shape[0]
                self.wtotal = float(cum_w[-1])
                self.btotal = float(cum_b[-1])
        if total is None:
            raise SolverError("tree class has no usable split coordinate")
        self.total = total


@dataclass
class _Options:
    """Flat candidate subtrees for one child: leaves and single splits with
    every labeling.  Parallel arrays; desc rows are (axis, cut index, left
    label, right label) with axis -1 for a bare leaf."""

    value: np.ndarray
    wshare: np.ndarray
    bshare: np.ndarray
    desc: np.ndarray


def _subtree_options(st: _SubsetStructs, budget: int, n_arms: int) -> _Options:
    values = [st.total.copy()]
    arms = np.arange(n_arms)
    wshares = [np.where(arms != 0, st.wtotal, 0.0)]
    bshares = [np.where(arms != 0, st.btotal, 0.0)]
    descs = [
        np.column_stack(
            [np.full(n_arms, -1), np.zeros(n_arms, dtype=int), arms, arms]
        )
    ]
    if budget >= 1:
        nz = (arms != 0).astype(float)
        for axis, (pos, cum_u, cum_w, cum_b) in st.axes.items():
            m = pos.shape[0]
            if m == 0:
                continue
            left = cum_u[pos]
            right = st.total - left
            lw = cum_w[pos]
            lb = cum_b[pos]
            val = left[:, :, None] + right[:, None, :]
            wsh = (
                lw[:, None, None] * nz[None, :, None]
                + (st.wtotal - lw)[:, None, None] * nz[None, None, :]
            )
            bsh = (
                lb[:, None, None] * nz[None, :, None]
                + (st.btotal - lb)[:, None, None] * nz[None, None, :]
            )
            cut_idx, jj, ll = np.meshgrid(
                np.arange(m), arms, arms, indexing="ij"
            )
            values.append(val.reshape(-1))
            wshares.append(wsh.reshape(-1))
            bshares.append(bsh.reshape(-1))
            descs.append(
                np.column_stack(
                    [
                        np.full(m * n_arms * n_arms, axis),
                        cut_idx.reshape(-1),
                        jj.reshape(-1),
                        ll.reshape(-1),
                    ]
                )
            )
    return _Options(
        value=np.concatenate(values),
        wshare=np.concatenate(wshares),
        bshare=np.concatenate(bshares),
        desc=np.concatenate(descs),
    )


def _materialize_subtree(desc_row: np.ndarray, grids: dict[int, np.ndarray]) -> tuple:
    """Build the child node and prune splits whose leaves share a label."""
    axis, cut, j, l = (int(v) for v in desc_row)
    if axis < 0 or j == l:
        return Leaf(j)
    return Split(
        axis=axis,
        threshold=float(grids[axis][cut]),
        left=Leaf(j),
        right=Leaf(l),
    )


def _best_combined(
    left: _Options, right: _Options, q: Optional[float]
) -> float:
    """Best feasible left+right option value for one root split."""
    if left.value.size == 0 or right.value.size == 0:
        return -np.inf
    if q is None:
        return float(left.value.max() + right.value.max())
    lkeep = left.bshare <= q + CAPACITY_TOL
    rkeep = right.bshare <= q + CAPACITY_TOL
    if not np.any(lkeep) or not np.any(rkeep):
        return -np.inf
    lb = left.bshare[lkeep]
    lv = left.value[lkeep]
    order = np.argsort(lb, kind="stable")
    lb = lb[order]
    lv = np.maximum.accumulate(lv[order])
    rb = right.bshare[rkeep]
    rv = right.value[rkeep]
    allowed = q + CAPACITY_TOL - rb
    idx = np.searchsorted(lb, allowed, side="right") - 1
    ok = idx >= 0
    if not np.any(ok):
        return -np.inf
    return float((lv[idx[ok]] + rv[ok]).max())


def solve_tree(scores: ScoreTable, w: np.ndarray, spec: PolicyClassSpec) -> SolveResult:
    """Exact search over depth-bounded trees on the candidate split grids.

    Enumerates (root split) x (left child) x (right child); each child is a
    bare leaf or one split with any labeling, evaluated from per-axis
    prefix sums over the root partition.  When a capacity is set the
    per-child labelings are matched across the two sides by share, which
    is the joint labeling enumeration organized as a sorted scan.
    """
    if not isinstance(spec.kind, TreeClass):
        raise SolverError("solve_tree requires a tree class spec")
    w = _check_solver_inputs(scores, w)
    kind = spec.kind
    x = scores.x
    n, n_arms = scores.n, scores.n_arms
    U = w[:, None] * scores.g
    bw = _basis_weights(w, spec.capacity_basis)
    q = spec.capacity
    grids = _build_grids(x, kind)
    axes = sorted(grids)
    if not axes:
        raise SolverError("tree class has no usable split coordinate")

    orders = {a: np.argsort(x[:, a], kind="stable") for a in axes}
    full = _SubsetStructs({a: orders[a] for a in axes}, grids, x, U, w, bw)

    # Depth-0 candidates are shared by every depth budget.
    leaf_values = full.total
    arms = np.arange(n_arms)
    leaf_bshares = np.where(arms != 0, full.btotal, 0.0)
    leaf_feasible = (
        np.ones(n_arms, dtype=bool)
        if q is None
        else leaf_bshares <= q + CAPACITY_TOL
    )
    vstar = float(leaf_values[leaf_feasible].max()) if np.any(leaf_feasible) else 0.0
    vstar = max(vstar, 0.0)
    evaluated = int(n_arms)

    root_cuts: list[tuple[int, int]] = []
    root_best: list[float] = []
    if kind.max_depth >= 1:
        child_budget = kind.max_depth - 1
        for a in axes:
            for ci in range(grids[a].shape[0]):
                thr = grids[a][ci]
                left_opts, right_opts = _root_options(
                    x, a, thr, axes, orders, grids, U, w, bw, child_budget, n_arms
                )
                best = _best_combined(left_opts, right_opts, q)
                evaluated += left_opts.value.size + right_opts.value.size
                root_cuts.append((a, ci))
                root_best.append(best)
                if best > vstar:
                    vstar = best

    inc = _Incumbent()
    if 0.0 >= vstar - VALUE_TIE_TOL:
        inc.offer(0.0, 0.0, TreeRule(Leaf(0)))
    for j in range(n_arms):
        if leaf_feasible[j] and leaf_values[j] >= vstar - VALUE_TIE_TOL:
            inc.offer(
                float(leaf_values[j]),
                float(full.wtotal if j != 0 else 0.0),
                TreeRule(Leaf(j)),
            )
    for (a, ci), best in zip(root_cuts, root_best):
        if best < vstar - VALUE_TIE_TOL or inc.offers >= _MAX_TIE_CANDIDATES:
            continue
        thr = grids[a][ci]
        left_opts, right_opts = _root_options(
            x, a, thr, axes, orders, grids, U, w, bw, kind.max_depth - 1, n_arms
        )
        _offer_root_ties(inc, left_opts, right_opts, q, vstar, a, float(thr), grids)

    return _finalize(scores, w, inc.policy, True, evaluated, spec, inc.value)


def _root_options(
    x: np.ndarray,
    root_axis: int,
    thr: float,
    axes: list[int],
    orders: dict[int, np.ndarray],
    grids: dict[int, np.ndarray],
    U: np.ndarray,
    w: np.ndarray,
    bw: np.ndarray,
    child_budget: int,
    n_arms: int,
) -> tuple[_Options, _Options]:
    in_left = x[:, root_axis] <= thr
    left_rows = {a: orders[a][in_left[orders[a]]] for a in axes}
    right_rows = {a: orders[a][~in_left[orders[a]]] for a in axes}
    left_st = _SubsetStructs(left_rows, grids, x, U, w, bw)
    right_st = _SubsetStructs(right_rows, grids, x, U, w, bw)
    return (
        _subtree_options(left_st, child_budget, n_arms),
        _subtree_options(right_st, child_budget, n_arms),
    )


def _offer_root_ties(
    inc: _Incumbent,
    left: _Options,
    right: _Options,
    q: Optional[float],
    vstar: float,
    root_axis: int,
    thr: float,
    grids: dict[int, np.ndarray],
) -> None:
    need = vstar - VALUE_TIE_TOL
    lmax = float(left.value.max()) if left.value.size else -np.inf
    rmax = float(right.value.max()) if right.value.size else -np.inf
    lkeep = np.nonzero(left.value >= need - rmax)[0]
    rkeep = np.nonzero(right.value >= need - lmax)[0]
    for li in lkeep:
        if inc.offers >= _MAX_TIE_CANDIDATES:
            return
        lv = float(left.value[li])
        for ri in rkeep:
            total = lv + float(right.value[ri])
            if total < need:
                continue
            if q is not None and (
                float(left.bshare[li] + right.bshare[ri]) > q + CAPACITY_TOL
            ):
                continue
            policy = TreeRule(
                Split(
                    axis=root_axis,
                    threshold=thr,
                    left=_materialize_subtree(left.desc[li], grids),
                    right=_materialize_subtree(right.desc[ri], grids),
                )
            )
            inc.offer(
                total, float(left.wshare[li] + right.wshare[ri]), policy
            )
            if inc.offers >= _MAX_TIE_CANDIDATES:
                return


# ---- Finite classes and dispatch ----


def _solve_finite(
    scores: ScoreTable, w: np.ndarray, spec: PolicyClassSpec
) -> SolveResult:
    w = _check_solver_inputs(scores, w)
    policies = spec.kind.policies
    assign = _finite_assignments(spec.kind, scores.x)
    n = scores.n
    sel = scores.g[np.arange(n)[None, :], assign]
    values = sel @ w
    treated = assign != 0
    wshares = treated @ w
    bw = _basis_weights(w, spec.capacity_basis)
    bshares = treated @ bw
    feasible = (
        np.ones(len(policies), dtype=bool)
        if spec.capacity is None
        else bshares <= spec.capacity + CAPACITY_TOL
    )
    inc = _Incumbent()
    if np.any(feasible):
        vstar = float(values[feasible].max())
        for i in np.nonzero(feasible & (values >= vstar - VALUE_TIE_TOL))[0]:
            inc.offer(float(values[i]), float(wshares[i]), policies[i])
    else:
        # Capacity excludes every member; never-treat remains feasible.
        inc.offer(0.0, 0.0, TreeRule(Leaf(0)))
    return _finalize(
        scores, w, inc.policy, True, len(policies), spec, inc.value
    )


_FINITE_CACHE: dict[int, tuple[object, object, np.ndarray]] = {}


def _finite_assignments(kind: FiniteClass, x: np.ndarray) -> np.ndarray:
    """Assignment matrix for a finite class, cached per (class, data) pair."""
    key = id(kind)
    hit = _FINITE_CACHE.get(key)
    if hit is not None and hit[0] is kind and hit[1] is x:
        return hit[2]
    assign = np.stack([assign_all(p, x) for p in kind.policies])
    if len(_FINITE_CACHE) > 64:
        _FINITE_CACHE.clear()
    _FINITE_CACHE[key] = (kind, x, assign)
    return assign


def solve_class(scores: ScoreTable, w: np.ndarray, spec: PolicyClassSpec) -> SolveResult:
    """Dispatch to the matching engine; capacity handling is uniform.

    Infeasible candidates are discarded inside each engine; never-treat is
    always feasible so the search space is never empty.
    """
    if isinstance(spec.kind, LinearClass):
        return solve_linear(scores, w, spec)
    if isinstance(spec.kind, TreeClass):
        return solve_tree(scores, w, spec)
    if isinstance(spec.kind, FiniteClass):
        return _solve_finite(scores, w, spec)
    raise SolverError(f"unknown policy class kind: {spec.kind!r}")
