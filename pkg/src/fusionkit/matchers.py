"""Unconstrained donor-recipient matching engines.

* :func:`rhd_match`  - random hot deck within strata of categorised common
  variables, with the donor-pressure check and subset-size reduction loop.
* :func:`pmm_match`  - multivariate predictive mean matching with a
  Mahalanobis distance weighted by the residual covariance.
* :func:`gower_match` - nearest neighbour on Gower dissimilarity of the
  common variables on their original scales.

All three return a :class:`MatchAssignment`; :func:`impute` copies donor
values into the recipient block. Donors may be reused without limit.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data_model import DataTable, FusionSchema, StackedFrame
from .errors import MatchingError
from .regression import backward_select, dummy_expand, max_subset_select, ols_fit

log = logging.getLogger(__name__)

KEY_SEP = "|"

# fallback flags carried per pair
PRIMARY = ""
SECOND_ROUND = "second_round"
EMERGENCY = "emergency"


@dataclass(frozen=True)
class RhdConfig:
    c_primary: float = 3.0
    c_secondary: float = 2.0
    tolerance: float = 0.10
    criterion: str = "bic"

    def __post_init__(self):
        if not (self.c_primary >= self.c_secondary >= 1):
            raise MatchingError("need c_primary >= c_secondary >= 1")
        if not (0 <= self.tolerance < 1):
            raise MatchingError("tolerance must lie in [0, 1)")


@dataclass(frozen=True)
class PmmConfig:
    criterion: str = "bic"
    # Mahalanobis distances within this of the minimum count as ties
    tie_epsilon: float = 1e-10

    def __post_init__(self):
        if self.tie_epsilon < 0:
            raise MatchingError("tie_epsilon must be non-negative")


@dataclass
class MatchAssignment:
    """Recipient -> donor pairs, indexed by position within each block."""

    method: str
    donor_index: np.ndarray
    recipient_ids: np.ndarray
    donor_ids: np.ndarray
    distance: np.ndarray | None = None
    stratum: list[str] | None = None
    fallback: list[str] | None = None
    selected: dict[str, list[str]] = field(default_factory=dict)
    targets: tuple[str, ...] = ()
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        n = self.donor_index.size
        if self.fallback is None:
            self.fallback = [PRIMARY] * n
        if self.distance is not None and np.any(self.distance < 0):
            raise MatchingError("negative match distance")

    @property
    def n_rec(self) -> int:
        return int(self.donor_index.size)

    @property
    def fallback_rate(self) -> float:
        return sum(1 for f in self.fallback if f) / max(self.n_rec, 1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["recipient_id", "donor_id", "method", "targets", "distance", "stratum", "fallback"])
            for i in range(self.n_rec):
                dist = "" if self.distance is None else repr(float(self.distance[i]))
                stratum = "" if self.stratum is None else self.stratum[i]
                w.writerow([int(self.recipient_ids[i]), int(self.donor_ids[int(self.donor_index[i])]),
                            self.method, KEY_SEP.join(self.targets), dist, stratum, self.fallback[i]])


def build_stratum_keys(table: DataTable, variables: Sequence[str], schema: FusionSchema | None = None
                       ) -> list[str]:
    """Concatenate category codes of ``variables`` into one key per row."""
    if schema is not None:
        for v in variables:
            if not schema[v].scale.is_categorical:
                raise MatchingError(f"{v!r} is metric; categorise it before building strata")
    if not variables:
        return [""] * table.n_rows
    cols = []
    for v in variables:
        x = table.column(v)
        if np.isnan(x).any():
            raise MatchingError(f"stratum variable {v!r} has missing values")
        cols.append([str(int(c)) for c in x])
    return [KEY_SEP.join(parts) for parts in zip(*cols)]


def _check_target(frame: StackedFrame, target: str) -> None:
    if frame.n_don == 0:
        raise MatchingError("donor block is empty")
    if target not in frame.table:
        raise MatchingError(f"target {target!r} not in frame")
    if np.isnan(frame.table.column(target)[frame.donor_rows]).any():
        raise MatchingError(f"target {target!r} not fully observed on donor rows")


def _tie_break(dist_row: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Index of the minimum; ties within ``eps`` broken uniformly at random.

    The generator is consumed only when there is more than one candidate,
    so callers that mirror this rule draw identical streams.
    """
    best = dist_row.min()
    ties = np.flatnonzero(dist_row <= best + eps)
    if ties.size == 1:
        return int(ties[0])
    return int(ties[rng.integers(ties.size)])


def _nearest(dist: np.ndarray, eps: float, rng: np.random.Generator) -> np.ndarray:
    return np.array([_tie_break(row, eps, rng) for row in dist], dtype=np.int64)


# ---------------------------------------------------------------------------
# Random hot deck

@dataclass
class StratumCheck:
    """Outcome of the donor-pressure check for one candidate selection."""

    selected: list[str]
    rec_keys: list[str]
    don_keys: list[str]
    violating: set[str]
    n_violating: int
    passed: bool


def stratum_check(rec_keys: Sequence[str], don_keys: Sequence[str], c: float, tolerance: float,
                  n_rec_total: int | None = None, n_don_total: int | None = None) -> tuple[set[str], int, bool]:
    """Flag strata whose recipient/donor ratio exceeds ``c`` times the overall ratio.

    Strata with no donors always violate. Returns the violating keys, the
    number of recipients inside them and whether that number stays within
    ``tolerance`` times the recipient count.
    """
    s_rec = len(rec_keys) if n_rec_total is None else n_rec_total
    s_don = len(don_keys) if n_don_total is None else n_don_total
    rec_counts: dict[str, int] = {}
    for k in rec_keys:
        rec_counts[k] = rec_counts.get(k, 0) + 1
    don_counts: dict[str, int] = {}
    for k in don_keys:
        don_counts[k] = don_counts.get(k, 0) + 1
    bound = c * s_rec / s_don
    violating = set()
    for key, n_l in rec_counts.items():
        d_l = don_counts.get(key, 0)
        if d_l == 0 or n_l / d_l > bound:
            violating.add(key)
    n_viol = sum(rec_counts[k] for k in violating)
    return violating, n_viol, n_viol <= tolerance * len(rec_keys)


def _rhd_selection_round(rec: DataTable, don: DataTable, target: str, common: list[str],
                         schema: FusionSchema, c: float, tolerance: float, criterion: str,
                         n_rec_total: int | None = None) -> StratumCheck:
    """Select stratum variables, shrinking the subset cap until the check passes."""
    cap = len(common)
    while True:
        if cap > 0:
            selected = max_subset_select(don, target, common, schema, cap, criterion)
        else:
            selected = []
        rk = build_stratum_keys(rec, selected)
        dk = build_stratum_keys(don, selected)
        violating, n_viol, ok = stratum_check(rk, dk, c, tolerance, n_rec_total)
        if ok or not selected:
            return StratumCheck(selected, rk, dk, violating, n_viol, ok)
        # a cap at or above the current size reproduces the same selection
        cap = len(selected) - 1


def rhd_match(frame: StackedFrame, schema: FusionSchema, target: str,
              config: RhdConfig | None = None, rng=None) -> MatchAssignment:
    """Stratified random hot deck for one donor-specific variable.

    Round one selects stratum variables by backward deletion on the donor
    block and accepts the selection once at most ``tolerance`` of the
    recipients sit in strata breaking the ``c_primary`` bound; the subset
    cap drops by one otherwise. Recipients in strata without donors go to a
    second round that repeats the search with ``c_secondary`` and no
    tolerance. Anything still unmatched draws from the whole donor block.
    """
    config = config or RhdConfig()
    rng = np.random.default_rng(rng)
    _check_target(frame, target)
    common = schema.common
    for v in common:
        if not schema[v].scale.is_categorical:
            raise MatchingError(f"common variable {v!r} is metric; random hot deck needs it "
                                "categorised (declare a recode rule or bin it first)")
    rec = frame.recipient(common)
    don = frame.donor(common + [target])
    donor_idx = np.full(rec.n_rows, -1, dtype=np.int64)
    strata = [""] * rec.n_rows
    flags = [PRIMARY] * rec.n_rows
    selected = {}

    first = _rhd_selection_round(rec, don, target, common, schema, config.c_primary,
                                 config.tolerance, config.criterion)
    selected["round1"] = first.selected
    log.debug("rhd %s round 1: %s, %d recipients in violating strata",
              target, first.selected, first.n_violating)
    pending = _assign_within_strata(first.rec_keys, first.don_keys, np.arange(rec.n_rows),
                                    donor_idx, strata, rng)

    if pending.size:
        sub = rec.take(pending)
        second = _rhd_selection_round(sub, don, target, common, schema, config.c_secondary,
                                      0.0, config.criterion)
        selected["round2"] = second.selected
        still = _assign_within_strata(second.rec_keys, second.don_keys, pending,
                                      donor_idx, strata, rng)
        for i in pending:
            flags[i] = SECOND_ROUND
        for i in still:
            donor_idx[i] = rng.integers(don.n_rows)
            strata[i] = ""
            flags[i] = EMERGENCY

    return MatchAssignment("rhd", donor_idx, rec.row_ids, don.row_ids,
                           stratum=strata, fallback=flags, selected=selected, targets=(target,))


def _assign_within_strata(rec_keys, don_keys, rec_positions, donor_idx, strata, rng) -> np.ndarray:
    """Uniform draws with replacement inside each stratum; returns unmatched positions."""
    members: dict[str, list[int]] = {}
    for j, k in enumerate(don_keys):
        members.setdefault(k, []).append(j)
    unmatched = []
    for local, pos in enumerate(rec_positions):
        key = rec_keys[local]
        pool = members.get(key)
        if not pool:
            unmatched.append(pos)
            continue
        donor_idx[pos] = pool[int(rng.integers(len(pool)))]
        strata[pos] = key
    return np.asarray(unmatched, dtype=np.int64)


# ---------------------------------------------------------------------------
# Predictive mean matching

def predictive_means(frame: StackedFrame, schema: FusionSchema, targets: Sequence[str],
                     variables: Sequence[str]):
    """Joint OLS of ``targets`` on ``variables`` over donor rows.

    Returns ``(zhat_rec, zhat_don, fit)``. Predictions for both blocks come
    from the same coefficients.
    """
    table = frame.table
    don = table.take(frame.donor_rows)
    design = dummy_expand(don, variables, schema)
    fit = ols_fit(design, don.matrix(list(targets)))
    rec_design = _design_like(table.take(frame.recipient_rows), design, schema)
    zhat_rec = _rowwise_product(rec_design, fit.coefficients)
    zhat_don = _rowwise_product(design.matrix, fit.coefficients)
    return zhat_rec, zhat_don, fit


def _rowwise_product(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``x @ b`` accumulated column by column in a fixed order.

    Equal rows give bit-identical results whatever the array layout, which
    BLAS and einsum kernels do not guarantee.
    """
    out = np.zeros((x.shape[0], b.shape[1]))
    for j in range(x.shape[1]):
        out += x[:, j:j + 1] * b[j]
    return out


def _design_like(table: DataTable, design, schema: FusionSchema) -> np.ndarray:
    """Rebuild ``design``'s columns (same pruning) on another block."""
    cols = []
    for name in design.column_names:
        if name == "(intercept)":
            cols.append(np.ones(table.n_rows))
        elif "=" in name:
            var, level = name.rsplit("=", 1)
            cols.append((table.column(var) == float(level)).astype(float))
        else:
            cols.append(table.column(name))
    return np.column_stack(cols)


def mahalanobis_weight(cov: np.ndarray, notes: list[str]) -> np.ndarray:
    """Whitening matrix ``W`` with ``W.T @ W`` equal to the (pseudo-)inverse of ``cov``."""
    cov = np.atleast_2d(cov)
    vals, vecs = np.linalg.eigh(cov)
    top = vals.max(initial=0.0)
    if top <= 0:
        notes.append("residual covariance is zero; using identity weighting")
        return np.eye(cov.shape[0])
    keep = vals > top * 1e-12
    if not keep.all():
        notes.append("residual covariance is singular; using pseudo-inverse")
    return (vecs[:, keep] / np.sqrt(vals[keep])).T


def mahalanobis_matrix(zhat_rec: np.ndarray, zhat_don: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """All recipient-donor distances ``(zi - zj)' S^-1 (zi - zj)``."""
    a = _rowwise_product(zhat_rec, weight.T)
    b = _rowwise_product(zhat_don, weight.T)
    out = np.zeros((a.shape[0], b.shape[0]))
    for k in range(a.shape[1]):
        d = a[:, k:k + 1] - b[:, k][None, :]
        out += d * d
    return out


def pmm_match(frame: StackedFrame, schema: FusionSchema, targets: Sequence[str],
              config: PmmConfig | None = None, rng=None) -> MatchAssignment:
    """Multivariate predictive mean matching.

    Common variables are selected per target by backward deletion on the
    donor block; the union of the selections enters one joint regression of
    all targets. Each recipient gets the donor whose predictive-mean vector
    is nearest in Mahalanobis distance under the inverse residual
    covariance of that joint fit.
    """
    config = config or PmmConfig()
    rng = np.random.default_rng(rng)
    targets = list(targets)
    if not targets:
        raise MatchingError("no targets given")
    for t in targets:
        _check_target(frame, t)
        if not schema[t].scale.is_metric:
            raise MatchingError(f"predictive mean matching needs metric targets; {t!r} is categorical")
    common = schema.common
    don = frame.donor(common + targets)
    notes: list[str] = []
    per_target = {t: backward_select(don, t, common, schema, config.criterion) for t in targets}
    union = [v for v in common if any(v in sel for sel in per_target.values())]
    if not union:
        notes.append("no common variable selected; predictive means are intercept-only")
    zhat_rec, zhat_don, fit = predictive_means(frame, schema, targets, union)
    weight = mahalanobis_weight(fit.residual_covariance, notes)
    dist = mahalanobis_matrix(zhat_rec, zhat_don, weight)
    idx = _nearest(dist, config.tie_epsilon, rng)
    for msg in notes:
        log.info("pmm: %s", msg)
    per_target["union"] = union
    return MatchAssignment("pmm", idx, frame.table.row_ids[frame.recipient_rows],
                           frame.table.row_ids[frame.donor_rows],
                           distance=dist[np.arange(idx.size), idx], selected=per_target,
                           targets=tuple(targets), notes=notes)


# ---------------------------------------------------------------------------
# Gower nearest neighbour

GOWER_TIE_EPS = 1e-12


def gower_matrix(rec: DataTable, don: DataTable, variables: Sequence[str], schema: FusionSchema,
                 notes: list[str] | None = None) -> np.ndarray:
    """Mean per-variable Gower dissimilarity between every recipient and donor.

    Metric variables are scaled by their range pooled over both blocks;
    a zero-range metric variable contributes zero.
    """
    if not variables:
        raise MatchingError("gower matching needs at least one variable")
    total = np.zeros((rec.n_rows, don.n_rows))
    for v in variables:
        a, b = rec.column(v), don.column(v)
        if np.isnan(a).any() or np.isnan(b).any():
            raise MatchingError(f"gower variable {v!r} has missing values")
        if schema[v].scale.is_metric:
            both = np.concatenate([a, b])
            span = both.max() - both.min()
            if span == 0:
                if notes is not None:
                    notes.append(f"{v} has zero range and is ignored")
                continue
            total += np.abs(a[:, None] - b[None, :]) / span
        else:
            total += (a[:, None] != b[None, :]).astype(float)
    return total / len(variables)


def gower_match(frame: StackedFrame, schema: FusionSchema, variables: Sequence[str] | None = None,
                rng=None, targets: Sequence[str] | None = None) -> MatchAssignment:
    rng = np.random.default_rng(rng)
    variables = list(schema.common if variables is None else variables)
    targets = list(schema.specific_donor if targets is None else targets)
    for t in targets:
        _check_target(frame, t)
    rec, don = frame.recipient(variables), frame.donor(variables)
    notes: list[str] = []
    dist = gower_matrix(rec, don, variables, schema, notes)
    idx = _nearest(dist, GOWER_TIE_EPS, rng)
    return MatchAssignment("gower", idx, rec.row_ids, don.row_ids,
                           distance=dist[np.arange(idx.size), idx],
                           selected={"variables": variables}, targets=tuple(targets), notes=notes)


# ---------------------------------------------------------------------------

def impute(frame: StackedFrame, assignment: MatchAssignment, targets: Sequence[str] | None = None
           ) -> DataTable:
    """Recipient block with ``targets`` copied from each assigned donor row."""
    targets = list(assignment.targets if targets is None else targets)
    if assignment.n_rec != frame.n_rec:
        raise MatchingError("assignment does not cover every recipient row")
    idx = assignment.donor_index
    if np.any(idx < 0) or np.any(idx >= frame.n_don):
        raise MatchingError("assignment references a donor row out of range")
    rec = frame.recipient()
    donor_rows = frame.donor_rows[idx]
    filled = {t: frame.table.column(t)[donor_rows] for t in targets}
    return rec.with_columns(filled)


def fuse(frame: StackedFrame, schema: FusionSchema, method: str, targets: Sequence[str] | None = None,
         rng=None, rhd_config: RhdConfig | None = None, pmm_config: PmmConfig | None = None,
         rhd_schema: FusionSchema | None = None, rhd_frame: StackedFrame | None = None):
    """Impute every target with one method; returns ``(table, assignments)``.

    Random hot deck runs per target on ``rhd_frame``/``rhd_schema`` (the
    categorised versions) when given; PMM and Gower use one donor per
    recipient for all targets.
    """
    rng = np.random.default_rng(rng)
    targets = list(schema.specific_donor if targets is None else targets)
    if method == "rhd":
        cframe, cschema = rhd_frame or frame, rhd_schema or schema
        assignments = [rhd_match(cframe, cschema, t, rhd_config, rng) for t in targets]
        out = frame.recipient()
        for t, a in zip(targets, assignments):
            out = out.with_columns({t: frame.table.column(t)[frame.donor_rows[a.donor_index]]})
        return out, assignments
    if method == "pmm":
        a = pmm_match(frame, schema, targets, pmm_config, rng)
    elif method == "gower":
        a = gower_match(frame, schema, None, rng, targets)
    else:
        raise MatchingError(f"unknown method {method!r}")
    return impute(frame, a, targets), [a]
