"""Variable preparation: binning, regrouping and derived categories.

Rules are small frozen dataclasses so they can be declared in a schema file
and applied to plain numpy vectors. Missing values are NaN throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import RecodeError

# Age bands used when a schema asks for age banding without breakpoints:
# 16-25, 26-35, ..., 76-85, 86+ (values below 26 fall in the first band).
DEFAULT_AGE_BREAKPOINTS = (26.0, 36.0, 46.0, 56.0, 66.0, 76.0, 86.0)

# Self-defined economic status (11 source codes) -> activity status.
ACTIVITY_STATUS_GROUPS = {
    1: 1, 2: 1, 3: 1, 4: 1,  # working
    5: 2,                    # unemployed
    7: 3,                    # retired
    10: 4,                   # domestic tasks
    8: 5,                    # permanently disabled
    6: 9, 9: 9, 11: 9,       # not specified
}

# Component income variables -> auxiliary source, in tie-break order.
INCOME_SOURCE_GROUPS = (
    (("PY010G", "PY020G"), 1),  # wages or salary
    (("PY050G",), 1),           # self-employment
    (("PY080G",), 1),           # property income
    (("PY100G",), 2),           # pensions
    (("PY090G",), 2),           # unemployment benefits
    (("PY110G", "PY120G", "PY130G", "PY140G"), 2),  # other benefits
)

# Degree of urbanisation shares for random generation.
DENSITY_LEVELS = (1, 2, 3)
DENSITY_SHARES = (0.358, 0.418, 0.224)


@dataclass(frozen=True)
class QuantileBin:
    k: int

    def __post_init__(self):
        if self.k < 2:
            raise RecodeError(f"QuantileBin needs k >= 2, got {self.k}")

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(range(1, self.k + 1))


@dataclass(frozen=True)
class IntervalBin:
    breakpoints: tuple[float, ...]

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        if bp.size == 0 or np.any(np.diff(bp) <= 0):
            raise RecodeError("IntervalBin breakpoints must be non-empty and strictly increasing")

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(range(1, len(self.breakpoints) + 2))


@dataclass(frozen=True)
class MapGroups:
    code_map: Mapping[int, int]
    default: int | None = None
    # level assigned to NaN inputs; None means NaN stays missing
    missing: int | None = None

    @property
    def levels(self) -> tuple[int, ...]:
        out = set(self.code_map.values())
        for extra in (self.default, self.missing):
            if extra is not None:
                out.add(extra)
        return tuple(sorted(out))


@dataclass(frozen=True)
class RandomCategory:
    levels: tuple[int, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if len(self.levels) != p.size or p.size == 0:
            raise RecodeError("RandomCategory needs one probability per level")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise RecodeError(f"RandomCategory probabilities must sum to 1, got {p.sum()!r}")


@dataclass(frozen=True)
class MaxOfColumns:
    groups: tuple[tuple[tuple[str, ...], int], ...]
    all_zero: int = 9

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(c for cols, _ in self.groups for c in cols)

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(sorted({lvl for _, lvl in self.groups} | {self.all_zero}))


RecodeRule = QuantileBin | IntervalBin | MapGroups | RandomCategory | MaxOfColumns

ACTIVITY_STATUS_RULE = MapGroups(ACTIVITY_STATUS_GROUPS, missing=9)
MAIN_SOURCE_RULE = MaxOfColumns(INCOME_SOURCE_GROUPS, all_zero=9)
DENSITY_RULE = RandomCategory(DENSITY_LEVELS, DENSITY_SHARES)


def quantile_bin(values, k: int) -> np.ndarray:
    """Code values 1..k by empirical quantile membership.

    Bins are left-closed on the empirical CDF: an observation at sorted rank
    ``r`` (0-based, ties sharing their lowest rank) lands in bin
    ``floor(r * k / n) + 1``. Tied values therefore never straddle a bin
    boundary, and bin sizes differ only where ties force it.
    """
    x = np.asarray(values, dtype=float)
    QuantileBin(k)
    if x.size == 0:
        return np.empty(0)
    if not np.all(np.isfinite(x)):
        raise RecodeError("quantile_bin requires finite values")
    if np.all(x == x[0]):
        raise RecodeError("cannot bin a constant vector; treat the variable as categorical")
    n = x.size
    sorted_x = np.sort(x)
    rank = np.searchsorted(sorted_x, x, side="left")
    return (np.floor(rank * k / n) + 1).astype(float)


def interval_bin(values, breakpoints: Sequence[float]) -> np.ndarray:
    """Code values by right-open intervals ``[b_{i-1}, b_i)``; NaN stays NaN."""
    IntervalBin(tuple(breakpoints))
    x = np.asarray(values, dtype=float)
    out = np.searchsorted(np.asarray(breakpoints, dtype=float), x, side="right") + 1.0
    out[np.isnan(x)] = np.nan
    return out


def map_groups(values, rule: MapGroups) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    out = np.empty_like(x)
    for i, v in enumerate(x):
        if np.isnan(v):
            if rule.missing is not None:
                out[i] = rule.missing
            elif rule.default is not None:
                out[i] = rule.default
            else:
                out[i] = np.nan
            continue
        code = int(v)
        if code in rule.code_map:
            out[i] = rule.code_map[code]
        elif rule.default is not None:
            out[i] = rule.default
        else:
            raise RecodeError(f"level {code} is not covered by the grouping rule and no default is set")
    return out


def random_category(n: int, rule: RandomCategory, rng) -> np.ndarray:
    """I.i.d. category draws. ``rng`` is a numpy Generator or an int seed."""
    rng = np.random.default_rng(rng)
    if n == 0:
        return np.empty(0)
    idx = rng.choice(len(rule.levels), size=n, p=np.asarray(rule.probabilities, dtype=float))
    return np.asarray(rule.levels, dtype=float)[idx]


def max_of_columns(table, rule: MaxOfColumns) -> np.ndarray:
    """Level of the column group holding each row's maximum value.

    Rows with no positive referenced value (all zero, or only losses) get
    ``rule.all_zero``. On ties the first group in declared order wins.
    """
    for col in rule.columns:
        if col not in table:
            raise RecodeError(f"max_of_columns: column {col!r} missing")
    n = table.n_rows
    if n == 0:
        return np.empty(0)
    # per-group maxima, shape (groups, n)
    gmax = np.vstack([np.max(np.vstack([table.column(c) for c in cols]), axis=0) for cols, _ in rule.groups])
    if np.any(np.isnan(gmax)):
        raise RecodeError("max_of_columns: referenced columns contain missing values")
    winner = np.argmax(gmax, axis=0)  # argmax returns the first maximum
    levels = np.array([lvl for _, lvl in rule.groups], dtype=float)
    out = levels[winner]
    out[np.all(gmax <= 0, axis=0)] = rule.all_zero
    return out


def apply_rule(values, rule: RecodeRule, *, table=None) -> np.ndarray:
    """Apply a deterministic recode rule to one column's values."""
    if isinstance(rule, QuantileBin):
        return quantile_bin(values, rule.k)
    if isinstance(rule, IntervalBin):
        return interval_bin(values, rule.breakpoints)
    if isinstance(rule, MapGroups):
        return map_groups(values, rule)
    if isinstance(rule, MaxOfColumns):
        if table is None:
            raise RecodeError("MaxOfColumns needs the full table")
        return max_of_columns(table, rule)
    raise RecodeError(f"{type(rule).__name__} is not a deterministic column recode")


def rule_from_dict(spec: Mapping[str, Any]) -> RecodeRule:
    """Build a rule from its schema-file form, e.g. ``{"type": "quantile", "k": 5}``."""
    kind = spec.get("type")
    if kind == "quantile":
        return QuantileBin(int(spec["k"]))
    if kind == "interval":
        bp = spec.get("breakpoints")
        return IntervalBin(tuple(float(b) for b in (bp if bp is not None else DEFAULT_AGE_BREAKPOINTS)))
    if kind == "age_bands":
        return IntervalBin(DEFAULT_AGE_BREAKPOINTS)
    if kind == "map":
        if spec.get("preset") == "activity_status":
            return ACTIVITY_STATUS_RULE
        cmap = {int(k): int(v) for k, v in spec["map"].items()}
        default = spec.get("default")
        missing = spec.get("missing")
        return MapGroups(cmap, None if default is None else int(default), None if missing is None else int(missing))
    if kind == "random":
        if spec.get("preset") == "population_density":
            return DENSITY_RULE
        return RandomCategory(tuple(int(v) for v in spec["levels"]),
                              tuple(float(p) for p in spec["probabilities"]))
    if kind == "max_of_columns":
        if spec.get("preset") == "main_source_of_income":
            return MAIN_SOURCE_RULE
        groups = tuple((tuple(g["columns"]), int(g["level"])) for g in spec["groups"])
        return MaxOfColumns(groups, int(spec.get("all_zero", 9)))
    raise RecodeError(f"unknown recode rule type {kind!r}")


def rule_to_dict(rule: RecodeRule) -> dict[str, Any]:
    if isinstance(rule, QuantileBin):
        return {"type": "quantile", "k": rule.k}
    if isinstance(rule, IntervalBin):
        return {"type": "interval", "breakpoints": list(rule.breakpoints)}
    if isinstance(rule, MapGroups):
        out: dict[str, Any] = {"type": "map", "map": {int(k): int(v) for k, v in rule.code_map.items()}}
        if rule.default is not None:
            out["default"] = rule.default
        if rule.missing is not None:
            out["missing"] = rule.missing
        return out
    if isinstance(rule, RandomCategory):
        return {"type": "random", "levels": list(rule.levels), "probabilities": list(rule.probabilities)}
    return {"type": "max_of_columns", "all_zero": rule.all_zero,
            "groups": [{"columns": list(cols), "level": lvl} for cols, lvl in rule.groups]}
