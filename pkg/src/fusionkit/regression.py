"""OLS with dummy expansion and group-wise backward deletion.

Both matchers select common variables by regressing a donor-specific
variable on the candidates within the donor file. Categorical regressors
enter and leave the model as whole dummy groups.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .errors import RegressionError

log = logging.getLogger(__name__)

# relative residual norm below which a column counts as collinear
_RANK_TOL = 1e-9


@dataclass(frozen=True)
class DesignMatrix:
    matrix: np.ndarray
    column_names: tuple[str, ...]
    # original variable -> column positions in ``matrix`` (possibly empty after pruning)
    groups: dict[str, tuple[int, ...]]
    pruned: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def q(self) -> int:
        return self.matrix.shape[1]

    @property
    def variables(self) -> list[str]:
        return list(self.groups)


@dataclass(frozen=True)
class OlsFit:
    coefficients: np.ndarray        # (q, m)
    fitted: np.ndarray              # (n, m)
    residuals: np.ndarray           # (n, m)
    residual_covariance: np.ndarray  # (m, m)
    selected_variables: tuple[str, ...] = ()
    column_names: tuple[str, ...] = ()

    @property
    def rss(self) -> np.ndarray:
        return np.einsum("ij,ij->j", self.residuals, self.residuals)


def _expand_columns(table, variables, schema):
    """Raw (unpruned) columns: intercept, metric as-is, one-hot minus reference."""
    cols = [np.ones(table.n_rows)]
    names = ["(intercept)"]
    owner = [None]
    for var in variables:
        if var not in table:
            raise RegressionError(f"regressor {var!r} not in table")
        x = table.column(var)
        if np.isnan(x).all():
            raise RegressionError(f"regressor {var!r} is entirely missing")
        if np.isnan(x).any():
            raise RegressionError(f"regressor {var!r} has missing values")
        scale = schema[var].scale
        if scale.is_metric:
            cols.append(x)
            names.append(var)
            owner.append(var)
        else:
            # first declared level is the reference category
            for level in scale.levels[1:]:
                cols.append((x == level).astype(float))
                names.append(f"{var}={level}")
                owner.append(var)
    return np.column_stack(cols), names, owner


def dummy_expand(table, variables: Sequence[str], schema) -> DesignMatrix:
    """Design matrix for ``variables`` with constant and collinear columns pruned.

    Columns are visited in order and kept only if they add rank, so the
    intercept always survives and a dummy for an absent level (all zeros) is
    dropped. Pruned column names are recorded in ``pruned``.
    """
    raw, names, owner = _expand_columns(table, list(variables), schema)
    n = raw.shape[0]
    keep = []
    pruned = []
    basis = np.empty((n, 0))
    for j in range(raw.shape[1]):
        col = raw[:, j]
        norm = np.linalg.norm(col)
        if norm == 0.0:
            pruned.append(names[j])
            continue
        resid = col - basis @ (basis.T @ col)
        # second pass keeps Gram-Schmidt stable
        resid -= basis @ (basis.T @ resid)
        rnorm = np.linalg.norm(resid)
        if rnorm <= _RANK_TOL * norm:
            pruned.append(names[j])
            continue
        basis = np.column_stack([basis, resid / rnorm])
        keep.append(j)
    if pruned:
        log.debug("dummy_expand pruned %s", pruned)
    groups = {v: tuple(i for i, j in enumerate(keep) if owner[j] == v) for v in variables}
    return DesignMatrix(raw[:, keep], tuple(names[j] for j in keep), groups, tuple(pruned))


def _solve_normal(design: np.ndarray, responses: np.ndarray) -> np.ndarray:
    # equilibrate columns so income-scale regressors do not wreck conditioning
    scale = np.linalg.norm(design, axis=0)
    scale[scale == 0] = 1.0
    xs = design / scale
    gram = xs.T @ xs
    try:
        factor = linalg.cho_factor(gram, lower=False, check_finite=False)
    except linalg.LinAlgError as exc:
        raise RegressionError("design matrix is rank deficient") from exc
    beta = linalg.cho_solve(factor, xs.T @ responses, check_finite=False)
    # one step of iterative refinement
    r = responses - xs @ beta
    beta += linalg.cho_solve(factor, xs.T @ r, check_finite=False)
    return beta / scale[:, None]


def ols_fit(design: DesignMatrix | np.ndarray, responses) -> OlsFit:
    """Least-squares fit of one or several responses on a design matrix.

    Residual covariance uses the ``n - q`` divisor.
    """
    if isinstance(design, DesignMatrix):
        x, names, variables = design.matrix, design.column_names, tuple(design.groups)
    else:
        x, names, variables = np.asarray(design, dtype=float), (), ()
    y = np.asarray(responses, dtype=float)
    vector = y.ndim == 1
    if vector:
        y = y[:, None]
    n, q = x.shape
    if y.shape[0] != n:
        raise RegressionError("design and responses have different row counts")
    if n <= q:
        raise RegressionError(f"need more rows than columns (n={n}, q={q})")
    if np.isnan(y).any():
        raise RegressionError("responses contain missing values")
    beta = _solve_normal(x, y)
    fitted = x @ beta
    resid = y - fitted
    cov = resid.T @ resid / (n - q)
    cov = (cov + cov.T) / 2
    return OlsFit(beta, fitted, resid, cov, variables, names)


def bic(fit: OlsFit, n: int, q: int) -> float:
    rss = max(float(fit.rss[0]), np.finfo(float).tiny)
    return n * np.log(rss / n) + q * np.log(n)


def neg_adjusted_r2(fit: OlsFit, n: int, q: int) -> float:
    y = fit.fitted[:, 0] + fit.residuals[:, 0]
    tss = float(np.sum((y - y.mean()) ** 2))
    if q >= n or tss == 0:
        return np.inf
    return -(1 - (float(fit.rss[0]) / (n - q)) / (tss / (n - 1)))


CRITERIA: dict[str, Callable[[OlsFit, int, int], float]] = {
    "bic": bic,
    "adjr2": neg_adjusted_r2,
}


@dataclass
class _SubsetScorer:
    """Scores variable subsets for one response; designs are expanded per subset."""

    table: object
    schema: object
    y: np.ndarray
    criterion: Callable[[OlsFit, int, int], float]
    cache: dict = field(default_factory=dict)

    def score(self, subset: tuple[str, ...]) -> float:
        if subset not in self.cache:
            if subset:
                x = dummy_expand(self.table, subset, self.schema).matrix
            else:
                x = np.ones((self.y.size, 1))
            n, q = x.shape
            self.cache[subset] = np.inf if n <= q else self.criterion(ols_fit(x, self.y), n, q)
        return self.cache[subset]


def _prepare(table, response, candidates, schema, criterion):
    if not candidates:
        raise RegressionError("empty candidate list")
    if response not in table:
        raise RegressionError(f"response {response!r} not in table")
    y = table.column(response)
    if np.isnan(y).any():
        raise RegressionError(f"response {response!r} has missing values")
    for var in candidates:
        if var not in table:
            raise RegressionError(f"regressor {var!r} not in table")
    fn = CRITERIA[criterion] if isinstance(criterion, str) else criterion
    return _SubsetScorer(table, schema, y, fn)


def backward_select(table, response: str, candidates: Sequence[str], schema,
                    criterion="bic", max_size: int | None = None) -> list[str]:
    """Backward deletion of whole variables, starting from all candidates.

    While more than ``max_size`` variables remain, the variable whose removal
    gives the best criterion value is dropped regardless of whether the
    criterion improves. After that, deletion continues only while it
    improves the criterion. Returns survivors in candidate order.
    """
    candidates = list(candidates)
    scorer = _prepare(table, response, candidates, schema, criterion)
    if np.var(scorer.y) == 0:
        return []
    cap = len(candidates) if max_size is None else max_size
    current = tuple(candidates)
    current_score = scorer.score(current)
    while current:
        trials = [(scorer.score(tuple(v for v in current if v != drop)), i)
                  for i, drop in enumerate(current)]
        best_score, best_i = min(trials)
        if len(current) > cap or best_score < current_score:
            current = current[:best_i] + current[best_i + 1:]
            current_score = best_score
        else:
            break
    return list(current)


def max_subset_select(table, response: str, candidates: Sequence[str], schema,
                      max_size: int, criterion="bic") -> list[str]:
    if max_size < 1:
        raise RegressionError("max_size must be at least 1")
    if max_size > len(candidates):
        raise RegressionError("max_size exceeds the number of candidates")
    return backward_select(table, response, candidates, schema, criterion, max_size)
