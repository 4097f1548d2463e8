"""Treatment rules, policy classes, and weighted welfare evaluation.

Rules are immutable values.  A rule maps a covariate vector to an arm index;
welfare under a weight vector is the weighted sum of the IPW contrasts the
rule selects, so the never-treat rule scores exactly 0 (status quo).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .data import ScoreTable
from .errors import ConfigError, DataError

WEIGHT_SUM_TOL = 1e-9

UNIFORM_SHARE = "uniform-share"
WEIGHTED_SHARE = "weighted-share"


# ---- Rules ----


@dataclass(frozen=True)
class LinearRule:
    """Half-space rule: assign treat_arm iff beta . x >= c, else arm 0.

    The boundary is treated.  The all-zero rule with c <= 0 treats everyone
    and is a valid class member.
    """

    beta: tuple[float, ...]
    c: float
    treat_arm: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "c", float(self.c))
        if self.treat_arm < 1:
            raise ConfigError("treat_arm must be a nonzero arm index")


@dataclass(frozen=True)
class Leaf:
    arm: int

    def __post_init__(self) -> None:
        if self.arm < 0:
            raise ConfigError("leaf arm must be nonnegative")


@dataclass(frozen=True)
class Split:
    """Internal tree node; x[axis] <= threshold goes left."""

    axis: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"

    def __post_init__(self) -> None:
        if self.axis < 0:
            raise ConfigError("split axis must be nonnegative")
        object.__setattr__(self, "threshold", float(self.threshold))


TreeNode = Union[Leaf, Split]


@dataclass(frozen=True)
class TreeRule:
    """Axis-aligned decision tree with per-leaf arm labels."""

    root: TreeNode

    @property
    def depth(self) -> int:
        return _node_depth(self.root)


def _node_depth(node: TreeNode) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(_node_depth(node.left), _node_depth(node.right))


Policy = Union[LinearRule, TreeRule]


def never_treat() -> TreeRule:
    return TreeRule(Leaf(0))


def treat_all(arm: int = 1) -> TreeRule:
    return TreeRule(Leaf(arm))


# ---- Assignment ----


def assign(p: Policy, x: Sequence[float]) -> int:
    """Arm assigned to a single covariate vector."""
    xv = np.asarray(x, dtype=float).reshape(-1)
    return int(assign_all(p, xv.reshape(1, -1))[0])


def assign_all(p: Policy, xs: np.ndarray) -> np.ndarray:
    """Vectorized assignment over an (m, d) covariate matrix."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs.reshape(-1, 1)
    if isinstance(p, LinearRule):
        beta = np.asarray(p.beta, dtype=float)
        if beta.shape[0] != xs.shape[1]:
            raise DataError(
                f"rule expects {beta.shape[0]} covariates, data has {xs.shape[1]}"
            )
        treated = xs @ beta >= p.c
        return np.where(treated, p.treat_arm, 0).astype(np.int64)
    if isinstance(p, TreeRule):
        out = np.empty(xs.shape[0], dtype=np.int64)
        _assign_node(p.root, xs, np.arange(xs.shape[0]), out)
        return out
    raise ConfigError(f"not a policy: {p!r}")


def _assign_node(node: TreeNode, xs: np.ndarray, idx: np.ndarray, out: np.ndarray) -> None:
    if isinstance(node, Leaf):
        out[idx] = node.arm
        return
    if node.axis >= xs.shape[1]:
        raise DataError(
            f"split axis {node.axis} out of range for {xs.shape[1]} covariates"
        )
    goes_left = xs[idx, node.axis] <= node.threshold
    _assign_node(node.left, xs, idx[goes_left], out)
    _assign_node(node.right, xs, idx[~goes_left], out)


# ---- Welfare and shares ----


def _check_weights(w: np.ndarray, n: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise DataError(f"weight vector has shape {w.shape}, expected ({n},)")
    if np.any(w < 0.0):
        raise DataError("negative weight")
    if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise DataError(f"weights sum to {w.sum()}, expected 1")
    return w


def weighted_welfare(scores: ScoreTable, w: np.ndarray, p: Policy) -> float:
    """Weighted welfare of a rule relative to the never-treat status quo.

    Returns sum_i w_i g[i, assign(p, x_i)].
    """
    w = _check_weights(w, scores.n)
    arms = assign_all(p, scores.x)
    return float(w @ scores.g[np.arange(scores.n), arms])


def weighted_share(
    w: np.ndarray, xs: np.ndarray, p: Policy, arm: int = 1
) -> float:
    """Weighted fraction of rows the rule assigns to the given arm."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs.reshape(-1, 1)
    w = _check_weights(w, xs.shape[0])
    return float(w @ (assign_all(p, xs) == arm))


def arm_shares(w: np.ndarray, xs: np.ndarray, p: Policy, n_arms: int) -> np.ndarray:
    """Weighted share per arm; sums to 1 for any rule."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs.reshape(-1, 1)
    w = _check_weights(w, xs.shape[0])
    arms = assign_all(p, xs)
    return np.bincount(arms, weights=w, minlength=n_arms)


def treated_share(w: np.ndarray, xs: np.ndarray, p: Policy) -> float:
    """Weighted share assigned to any arm other than the status quo."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs.reshape(-1, 1)
    w = _check_weights(w, xs.shape[0])
    return float(w @ (assign_all(p, xs) != 0))


# ---- Policy classes ----


@dataclass(frozen=True)
class LinearClass:
    """Half-space rules over a covariate subset.

    dims selects covariate indices (None means all).  include_intercept
    frees the threshold; without it the boundary passes through the origin
    (c = 0).  n_exact bounds the sample size for the exact two-covariate
    search; n_starts controls the fallback local search.
    """

    dims: Optional[tuple[int, ...]] = None
    include_intercept: bool = True
    n_exact: int = 2000
    n_starts: int = 64

    def __post_init__(self) -> None:
        if self.dims is not None:
            object.__setattr__(self, "dims", tuple(int(i) for i in self.dims))
            if len(set(self.dims)) != len(self.dims):
                raise ConfigError("duplicate covariate index in dims")
        if self.n_exact < 0 or self.n_starts < 1:
            raise ConfigError("n_exact must be >= 0 and n_starts >= 1")


@dataclass(frozen=True)
class TreeClass:
    """Depth-bounded axis-aligned trees with per-leaf arm labels.

    split_grid maps covariate index to candidate thresholds; None builds
    empirical-quantile grids (grid_size per continuous coordinate, all
    observed values when a coordinate has at most grid_size distinct ones).
    """

    max_depth: int = 2
    split_grid: Optional[Mapping[int, tuple[float, ...]]] = None
    grid_size: int = 64

    def __post_init__(self) -> None:
        if not (0 <= self.max_depth <= 2):
            raise ConfigError("tree depth must be 0, 1, or 2")
        if self.grid_size < 1:
            raise ConfigError("grid_size must be >= 1")
        if self.split_grid is not None:
            frozen = {}
            for axis, grid in dict(self.split_grid).items():
                g = tuple(float(v) for v in grid)
                if any(b <= a for a, b in zip(g, g[1:])):
                    raise ConfigError(
                        f"split grid for axis {axis} must be strictly increasing"
                    )
                frozen[int(axis)] = g
            object.__setattr__(self, "split_grid", frozen)


@dataclass(frozen=True)
class FiniteClass:
    """Explicit list of candidate rules, scanned exhaustively."""

    policies: tuple[Policy, ...]

    def __post_init__(self) -> None:
        if not self.policies:
            raise ConfigError("finite class must contain at least one policy")
        object.__setattr__(self, "policies", tuple(self.policies))


ClassKind = Union[LinearClass, TreeClass, FiniteClass]


@dataclass(frozen=True)
class PolicyClassSpec:
    """A feasible policy class, optionally capacity constrained.

    capacity bounds the share of rows assigned to any non-status-quo arm;
    the default basis measures that share on the unweighted sample, the
    weighted basis uses the current weight vector.
    """

    kind: ClassKind
    capacity: Optional[float] = None
    capacity_basis: str = UNIFORM_SHARE

    def __post_init__(self) -> None:
        if self.capacity is not None and not (0.0 < self.capacity <= 1.0):
            raise ConfigError(f"capacity must be in (0, 1], got {self.capacity}")
        if self.capacity_basis not in (UNIFORM_SHARE, WEIGHTED_SHARE):
            raise ConfigError(f"unknown capacity basis '{self.capacity_basis}'")


# ---- JSON serialization ----


def policy_to_dict(p: Policy) -> dict:
    if isinstance(p, LinearRule):
        d = {"beta": list(p.beta), "c": p.c}
        if p.treat_arm != 1:
            d["treat_arm"] = p.treat_arm
        return d
    if isinstance(p, TreeRule):
        return _node_to_dict(p.root)
    raise ConfigError(f"not a policy: {p!r}")


def _node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"arm": node.arm}
    return {
        "axis": node.axis,
        "threshold": node.threshold,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def policy_from_dict(d: Mapping) -> Policy:
    if "beta" in d:
        return LinearRule(
            beta=tuple(d["beta"]), c=float(d["c"]), treat_arm=int(d.get("treat_arm", 1))
        )
    return TreeRule(_node_from_dict(d))


def _node_from_dict(d: Mapping) -> TreeNode:
    if "arm" in d:
        return Leaf(int(d["arm"]))
    return Split(
        axis=int(d["axis"]),
        threshold=float(d["threshold"]),
        left=_node_from_dict(d["left"]),
        right=_node_from_dict(d["right"]),
    )


def serialize_policy(p: Policy) -> str:
    """Canonical JSON string; the lexicographic key of the solver tie rule."""
    return json.dumps(policy_to_dict(p), sort_keys=True, separators=(",", ":"))


def class_spec_to_dict(spec: PolicyClassSpec) -> dict:
    kind = spec.kind
    if isinstance(kind, LinearClass):
        d: dict = {
            "kind": "linear",
            "dims": list(kind.dims) if kind.dims is not None else None,
            "include_intercept": kind.include_intercept,
            "n_exact": kind.n_exact,
            "n_starts": kind.n_starts,
        }
    elif isinstance(kind, TreeClass):
        d = {
            "kind": "tree",
            "max_depth": kind.max_depth,
            "split_grid": (
                {str(a): list(g) for a, g in kind.split_grid.items()}
                if kind.split_grid is not None
                else None
            ),
            "grid_size": kind.grid_size,
        }
    elif isinstance(kind, FiniteClass):
        d = {
            "kind": "finite",
            "policies": [policy_to_dict(p) for p in kind.policies],
        }
    else:
        raise ConfigError(f"unknown class kind: {kind!r}")
    d["capacity"] = spec.capacity
    d["capacity_basis"] = spec.capacity_basis
    return d


def class_spec_from_dict(d: Mapping) -> PolicyClassSpec:
    kind_name = d.get("kind")
    if kind_name == "linear":
        dims = d.get("dims")
        kind: ClassKind = LinearClass(
            dims=tuple(dims) if dims is not None else None,
            include_intercept=bool(d.get("include_intercept", True)),
            n_exact=int(d.get("n_exact", 2000)),
            n_starts=int(d.get("n_starts", 64)),
        )
    elif kind_name == "tree":
        grid = d.get("split_grid")
        kind = TreeClass(
            max_depth=int(d.get("max_depth", 2)),
            split_grid=(
                {int(a): tuple(g) for a, g in grid.items()} if grid is not None else None
            ),
            grid_size=int(d.get("grid_size", 64)),
        )
    elif kind_name == "finite":
        kind = FiniteClass(
            policies=tuple(policy_from_dict(p) for p in d["policies"])
        )
    else:
        raise ConfigError(f"unknown class kind '{kind_name}'")
    capacity = d.get("capacity")
    return PolicyClassSpec(
        kind=kind,
        capacity=float(capacity) if capacity is not None else None,
        capacity_basis=str(d.get("capacity_basis", UNIFORM_SHARE)),
    )
