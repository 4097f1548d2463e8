"""Data layer: validated experiment datasets and IPW welfare scores.

Everything downstream (rule search, posterior draws, inference) consumes the
per-row scores computed here; the raw outcomes never leave this module.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, DataError

_ROW_SUM_TOL = 1e-9
_BINARY_MATCH_TOL = 1e-12

PropensitySpec = Union[float, Sequence[float], str, Sequence[str]]


@dataclass(frozen=True)
class OverlapConfig:
    """Overlap requirement for propensities.

    Parameters
    ----------
    kappa : float
        Every arm probability must lie in [kappa, 1 - kappa].  Must be in
        (0, 0.5).
    strict : bool
        When True a nonempty violation list marks the report as failing;
        when False violations are reported but the report still passes.
    """

    kappa: float = 0.01
    strict: bool = True

    def __post_init__(self) -> None:
        if not (0.0 < self.kappa < 0.5):
            raise ConfigError(f"kappa must be in (0, 0.5), got {self.kappa}")


@dataclass(frozen=True)
class OverlapViolation:
    row: int
    arm: int
    value: float


@dataclass(frozen=True)
class OverlapReport:
    """Result of an overlap validation pass.  Never raised, always returned."""

    passed: bool
    violations: tuple[OverlapViolation, ...]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "violations": [
                {"row": v.row, "arm": v.arm, "value": v.value} for v in self.violations
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class Dataset:
    """Immutable experiment data with known assignment probabilities.

    Parameters
    ----------
    y : array of shape (n,)
        Observed outcomes.
    t : integer array of shape (n,)
        Assigned arm per row, in 0..n_arms-1.  Arm 0 is the status quo.
    x : array of shape (n, d)
        Covariates, d >= 1.
    propensity : float, (n_arms,) array, or (n, n_arms) array
        Known assignment probabilities.  A scalar e means a binary design
        with arm probabilities (1 - e, e); a vector applies to every row;
        a matrix gives per-row probabilities.  Rows must sum to 1 within
        1e-9 and every entry must lie strictly inside (0, 1).
    covariate_names : sequence of str, optional
        Defaults to x1..xd.
    n_arms : int, optional
        Number of arms.  Inferred from the propensity shape when omitted.

    Notes
    -----
    Construction validates every invariant and freezes the arrays; instances
    are safe to share across worker processes.  The overlap margin kappa is
    not checked here, it is policy of `validate_overlap`.
    """

    y: np.ndarray
    t: np.ndarray
    x: np.ndarray
    propensity: np.ndarray
    covariate_names: tuple[str, ...] = ()
    n_arms: int = 0
    constant_propensity: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float)
        t = np.asarray(self.t)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        n = y.shape[0]
        if n == 0:
            raise DataError("no data rows")
        if t.shape != (n,):
            raise DataError(f"arm vector has shape {t.shape}, expected ({n},)")
        if not np.issubdtype(t.dtype, np.integer):
            ti = t.astype(int)
            if not np.array_equal(ti, np.asarray(t, dtype=float)):
                raise DataError("arm indices must be integers")
            t = ti
        t = t.astype(np.int64)
        if x.shape[0] != n or x.ndim != 2 or x.shape[1] < 1:
            raise DataError(f"covariate matrix has shape {x.shape}, expected ({n}, d>=1)")
        if not np.all(np.isfinite(y)):
            raise DataError("non-finite outcome value")
        if not np.all(np.isfinite(x)):
            raise DataError("non-finite covariate value")

        prop, const = _expand_propensity(self.propensity, n, self.n_arms or None)
        n_arms = prop.shape[1]
        if t.min() < 0 or t.max() >= n_arms:
            raise DataError(
                f"arm index out of range: found {int(t.min())}..{int(t.max())}, "
                f"expected 0..{n_arms - 1}"
            )
        if not np.all(np.isfinite(prop)):
            raise DataError("non-finite propensity value")
        if np.any(prop <= 0.0) or np.any(prop >= 1.0):
            bad = np.argwhere((prop <= 0.0) | (prop >= 1.0))[0]
            raise DataError(
                f"propensity outside (0, 1) at row {int(bad[0])}, arm {int(bad[1])}: "
                f"{prop[bad[0], bad[1]]}"
            )
        sums = prop.sum(axis=1)
        off = np.abs(sums - 1.0)
        if off.max() > _ROW_SUM_TOL:
            bad_row = int(np.argmax(off))
            raise DataError(
                f"propensities at row {bad_row} sum to {sums[bad_row]}, expected 1"
            )

        names = tuple(self.covariate_names) or tuple(
            f"x{j + 1}" for j in range(x.shape[1])
        )
        if len(names) != x.shape[1]:
            raise DataError(
                f"{len(names)} covariate names for {x.shape[1]} covariates"
            )

        for arr in (y, t, x, prop):
            arr.setflags(write=False)
        if const is not None:
            const.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "propensity", prop)
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "n_arms", n_arms)
        object.__setattr__(self, "constant_propensity", const)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


def _expand_propensity(
    spec: Union[float, np.ndarray], n: int, n_arms: Optional[int]
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Normalize a propensity spec to an (n, n_arms) matrix.

    Returns the matrix and, when the input was constant, the constant vector.
    """
    if np.isscalar(spec):
        e = float(spec)
        const = np.array([1.0 - e, e], dtype=float)
    else:
        arr = np.asarray(spec, dtype=float)
        if arr.ndim == 1:
            const = arr.copy()
        elif arr.ndim == 2:
            if arr.shape[0] != n:
                raise DataError(
                    f"per-row propensity has {arr.shape[0]} rows, expected {n}"
                )
            if n_arms is not None and arr.shape[1] != n_arms:
                raise DataError(
                    f"propensity has {arr.shape[1]} arms, expected {n_arms}"
                )
            return arr.copy(), None
        else:
            raise DataError(f"propensity array must be 1-D or 2-D, got {arr.ndim}-D")
    if n_arms is not None and const.shape[0] != n_arms:
        raise DataError(f"propensity has {const.shape[0]} arms, expected {n_arms}")
    return np.tile(const, (n, 1)), const


@dataclass(frozen=True)
class ScoreTable:
    """Per-row IPW welfare scores, the sufficient statistic for rule search.

    Fields
    ------
    z : array of shape (n, n_arms)
        Per-arm scores z_ij = y_i 1{t_i = j} / e_j(x_i); at most one nonzero
        entry per row.
    g : array of shape (n, n_arms)
        Welfare contrasts against arm 0: g_ij = z_ij - z_i0, so g_i0 = 0
        exactly and a rule's weighted welfare is the weighted sum of the
        g entries it selects.
    x : array of shape (n, d)
        Covariates passed through for rule evaluation.
    g_binary : array of shape (n,), only when n_arms == 2
        The two-arm score y t / e1 - y (1 - t) / (1 - e1), computed from the
        binary formula as an independent route and checked against g[:, 1]
        at construction.
    """

    z: np.ndarray
    g: np.ndarray
    x: np.ndarray
    g_binary: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=float)
        g = np.asarray(self.g, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        n, k = z.shape
        if g.shape != (n, k) or x.shape[0] != n:
            raise DataError("score table shapes disagree")
        if np.any(g[:, 0] != 0.0):
            raise DataError("contrast against arm 0 must be exactly zero")
        if np.any(np.count_nonzero(z, axis=1) > 1):
            raise DataError("more than one nonzero per-arm score in a row")
        gb = self.g_binary
        if gb is not None:
            gb = np.asarray(gb, dtype=float)
            if k != 2:
                raise DataError("binary score vector requires exactly two arms")
            if np.max(np.abs(gb - g[:, 1]), initial=0.0) > _BINARY_MATCH_TOL:
                raise DataError("binary and contrast score routes disagree")
        for arr in (z, g, x) if gb is None else (z, g, x, gb):
            arr.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "g_binary", gb)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def n_arms(self) -> int:
        return self.z.shape[1]


def load_dataset(
    path: str,
    schema: Mapping[str, object],
    propensity_spec: PropensitySpec,
) -> Dataset:
    """Load a CSV file into a validated Dataset.

    Parameters
    ----------
    path : str
        CSV file: UTF-8, header row, comma separator, '.' decimal point.
    schema : mapping
        Keys "outcome" and "arm" name single columns; "covariates" is a
        list of column names used in order.
    propensity_spec : float | sequence of float | str | sequence of str
        A scalar is the binary treatment probability; a float sequence is
        the constant arm-probability vector; a column name is a per-row
        binary treatment probability; a sequence of column names gives one
        column per arm.

    Raises
    ------
    DataError
        Missing file or column, unparseable cell (reported with its data
        row number, first data row = 1), arm out of range, propensity
        outside (0, 1), or an empty file.
    """
    outcome_col = str(schema["outcome"])
    arm_col = str(schema["arm"])
    cov_cols = [str(c) for c in schema["covariates"]]
    if not cov_cols:
        raise DataError("schema lists no covariate columns")

    prop_cols: Optional[list[str]] = None
    if isinstance(propensity_spec, str):
        prop_cols = [propensity_spec]
    elif isinstance(propensity_spec, Sequence) and not np.isscalar(propensity_spec):
        items = list(propensity_spec)
        if items and all(isinstance(it, str) for it in items):
            prop_cols = [str(it) for it in items]

    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise DataError("no data rows")
        needed = [outcome_col, arm_col, *cov_cols, *(prop_cols or [])]
        missing = [c for c in needed if c not in header]
        if missing:
            raise DataError(f"missing column(s): {', '.join(missing)}")

        ys: list[float] = []
        ts: list[int] = []
        xs: list[list[float]] = []
        props: list[list[float]] = []
        for rownum, rec in enumerate(reader, start=1):
            ys.append(_parse_float(rec[outcome_col], outcome_col, rownum))
            ts.append(_parse_arm(rec[arm_col], arm_col, rownum))
            xs.append([_parse_float(rec[c], c, rownum) for c in cov_cols])
            if prop_cols is not None:
                props.append([_parse_float(rec[c], c, rownum) for c in prop_cols])

    if not ys:
        raise DataError("no data rows")

    propensity: Union[float, np.ndarray]
    if prop_cols is None:
        propensity = (
            float(propensity_spec)
            if np.isscalar(propensity_spec)
            else np.asarray(propensity_spec, dtype=float)
        )
    elif len(prop_cols) == 1:
        e1 = np.asarray([p[0] for p in props], dtype=float)
        propensity = np.column_stack([1.0 - e1, e1])
    else:
        propensity = np.asarray(props, dtype=float)

    return Dataset(
        y=np.asarray(ys, dtype=float),
        t=np.asarray(ts, dtype=np.int64),
        x=np.asarray(xs, dtype=float),
        propensity=propensity,
        covariate_names=tuple(cov_cols),
    )


def _parse_float(raw: Optional[str], col: str, rownum: int) -> float:
    if raw is None or raw.strip() == "":
        raise DataError(f"row {rownum}: missing value in column '{col}'")
    try:
        val = float(raw)
    except ValueError as exc:
        raise DataError(f"row {rownum}: cannot parse '{raw}' in column '{col}'") from exc
    if not math.isfinite(val):
        raise DataError(f"row {rownum}: non-finite value in column '{col}'")
    return val


def _parse_arm(raw: Optional[str], col: str, rownum: int) -> int:
    if raw is None or raw.strip() == "":
        raise DataError(f"row {rownum}: missing value in column '{col}'")
    try:
        val = int(raw)
    except ValueError as exc:
        raise DataError(
            f"row {rownum}: arm '{raw}' in column '{col}' is not an integer"
        ) from exc
    if val < 0:
        raise DataError(f"row {rownum}: arm {val} is negative")
    return val


def validate_overlap(ds: Dataset, cfg: OverlapConfig) -> OverlapReport:
    """List every (row, arm) whose propensity falls outside [kappa, 1-kappa].

    Validation never raises; the outcome is data in the report.  Under
    cfg.strict a nonempty list marks the report as failing.
    """
    lo, hi = cfg.kappa, 1.0 - cfg.kappa
    bad = (ds.propensity < lo) | (ds.propensity > hi)
    rows, arms = np.nonzero(bad)
    violations = tuple(
        OverlapViolation(int(r), int(a), float(ds.propensity[r, a]))
        for r, a in zip(rows, arms)
    )
    passed = not (cfg.strict and violations)
    return OverlapReport(passed=passed, violations=violations)


def compute_scores(ds: Dataset) -> ScoreTable:
    """Compute IPW scores for every row.

    The per-arm score divides the observed outcome by the probability of
    the arm actually assigned; contrasts subtract the arm-0 column.  For
    binary designs the classical two-arm formula is evaluated as a second
    route and the table construction cross-checks the two.
    """
    n, k = ds.n, ds.n_arms
    e_assigned = ds.propensity[np.arange(n), ds.t]
    if np.any(e_assigned == 0.0):
        raise DataError("zero propensity for an assigned arm")
    z = np.zeros((n, k), dtype=float)
    z[np.arange(n), ds.t] = ds.y / e_assigned
    g = z - z[:, [0]]
    g[:, 0] = 0.0

    g_binary = None
    if k == 2:
        e1 = ds.propensity[:, 1]
        treated = ds.t == 1
        g_binary = np.where(
            treated, ds.y / e1, -ds.y / (1.0 - e1)
        )
        g_binary[ds.y == 0.0] = 0.0
    return ScoreTable(z=z, g=g, x=ds.x, g_binary=g_binary)
