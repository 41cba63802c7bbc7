"""Correlation targets, CIA benchmark and bias/MSE summaries."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import DataError
from .regression import dummy_expand, ols_fit


@dataclass(frozen=True)
class CorrelationTarget:
    a: str
    b: str
    true_value: float
    cia_value: float | None = None

    def __post_init__(self):
        if not -1 <= self.true_value <= 1:
            raise ValueError("true correlation outside [-1, 1]")
        if self.cia_value is not None and not -1 <= self.cia_value <= 1:
            raise ValueError("CIA correlation outside [-1, 1]")

    @property
    def label(self) -> str:
        return pair_label(self.a, self.b)


def pair_label(a: str, b: str) -> str:
    return f"{a}~{b}"


@dataclass(frozen=True)
class EstimateSummary:
    n: int
    mean: float
    bias: float
    mse: float
    min: float
    q25: float
    median: float
    q75: float
    max: float

    def to_dict(self) -> dict:
        return asdict(self)


def pearson_corr(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise DataError("pearson_corr needs two vectors of equal length >= 2")
    da = a - a.mean()
    db = b - b.mean()
    saa = float(da @ da)
    sbb = float(db @ db)
    if saa == 0 or sbb == 0:
        raise DataError("correlation undefined for a constant vector")
    r = float(da @ db) / np.sqrt(saa * sbb)
    return min(1.0, max(-1.0, r))


def cia_corr(pop, y: str, z: str, x: Sequence[str], schema) -> float:
    """Y-Z correlation implied by conditional independence given ``x``.

    Under the CIA with linear conditional means, Cov(Y, Z) equals the
    covariance of the fitted values of Y and Z on the common variables, so
    the benchmark is ``cov(yhat, zhat) / (sd(Y) * sd(Z))``, fitted over the
    whole population.
    """
    design = dummy_expand(pop, list(x), schema)
    yz = pop.matrix([y, z])
    fit = ols_fit(design, yz)
    fy, fz = fit.fitted[:, 0], fit.fitted[:, 1]
    sy, sz = yz[:, 0].std(), yz[:, 1].std()
    if sy == 0 or sz == 0:
        raise DataError("CIA benchmark undefined for a constant variable")
    cov = float(np.mean((fy - fy.mean()) * (fz - fz.mean())))
    return min(1.0, max(-1.0, cov / (sy * sz)))


def summarize(estimates, true_value: float) -> EstimateSummary:
    """Bias, MSE and inclusive empirical quantiles of MC estimates."""
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise ValueError("no estimates to summarise")
    dev = est - true_value
    q = np.quantile(est, [0.0, 0.25, 0.5, 0.75, 1.0])
    return EstimateSummary(
        n=int(est.size),
        mean=float(est.mean()),
        bias=float(dev.mean()),
        mse=float(np.mean(dev ** 2)),
        min=float(q[0]), q25=float(q[1]), median=float(q[2]), q75=float(q[3]), max=float(q[4]),
    )
