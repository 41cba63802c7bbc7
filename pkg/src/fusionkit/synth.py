"""Gaussian-copula synthetic populations.

A multivariate standard normal with a given latent correlation is drawn and
each margin is transformed: normal and lognormal variables by their quantile
map, categorical ones by cutting the latent normal at thresholds.

:func:`calibrate` turns Pearson targets on the transformed scale into latent
correlations (closed form for normal/lognormal pairs) and then corrects the
sampling error of one fixed-seed draw, so the drawn population hits the
targets closely.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .data_model import DataTable, FusionSchema, ScaleLevel, Variable, VariableRole
from .errors import DataError
from .recode import DEFAULT_AGE_BREAKPOINTS, DENSITY_SHARES, IntervalBin, QuantileBin

log = logging.getLogger(__name__)

PSD_REPAIR_TOL = 1e-6


@dataclass(frozen=True)
class Margin:
    kind: str  # "normal" | "lognormal" | "categorical"
    mu: float = 0.0
    sigma: float = 1.0
    thresholds: tuple[float, ...] = ()
    codes: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("normal", "lognormal", "categorical"):
            raise DataError(f"unknown margin {self.kind!r}")
        if self.kind == "categorical":
            if np.any(np.diff(self.thresholds) <= 0):
                raise DataError("categorical thresholds must be strictly increasing")
            if len(self.codes) != len(self.thresholds) + 1:
                raise DataError("categorical margin needs one code per latent bin")
        elif self.sigma <= 0:
            raise DataError("sigma must be positive")

    @classmethod
    def from_shares(cls, shares: Sequence[float], codes: Sequence[int]) -> "Margin":
        """Categorical margin whose latent bins carry ``shares`` (ascending latent order)."""
        cum = np.cumsum(shares)[:-1]
        return cls("categorical", thresholds=tuple(float(t) for t in stats.norm.ppf(cum)),
                   codes=tuple(int(c) for c in codes))

    @property
    def is_metric(self) -> bool:
        return self.kind != "categorical"

    def transform(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "normal":
            return self.mu + self.sigma * z
        if self.kind == "lognormal":
            return np.exp(self.mu + self.sigma * z)
        codes = np.asarray(self.codes, dtype=float)
        return codes[np.searchsorted(np.asarray(self.thresholds), z, side="right")]


@dataclass(frozen=True)
class SynthSpec:
    n: int
    names: tuple[str, ...]
    margins: tuple[Margin, ...]
    latent: np.ndarray
    seed: int = 0

    def __post_init__(self):
        p = len(self.names)
        lat = np.asarray(self.latent, dtype=float)
        if len(self.margins) != p or lat.shape != (p, p):
            raise DataError("latent matrix and margins must match the variable list")
        if not np.allclose(lat, lat.T):
            raise DataError("latent correlation must be symmetric")
        if not np.allclose(np.diag(lat), 1.0):
            raise DataError("latent correlation must have a unit diagonal")
        object.__setattr__(self, "latent", lat)

    def index(self, name: str) -> int:
        return self.names.index(name)


def repair_psd(mat: np.ndarray, tol: float = PSD_REPAIR_TOL) -> np.ndarray:
    """Clip slightly negative eigenvalues and renormalise to unit diagonal.

    Raises if the most negative eigenvalue is below ``-tol``.
    """
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2)
    if vals.min() >= 0:
        return mat
    if vals.min() < -tol:
        raise DataError(f"latent correlation is not positive semi-definite (min eigenvalue {vals.min():.3g})")
    log.info("repairing latent correlation (min eigenvalue %.3g)", vals.min())
    fixed = (vecs * np.clip(vals, 0, None)) @ vecs.T
    d = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(d, d)
    np.fill_diagonal(fixed, 1.0)
    return fixed


def _latent_draw(spec: SynthSpec) -> np.ndarray:
    lat = repair_psd(spec.latent)
    try:
        # Cholesky is continuous in the entries, which calibration relies on
        root = np.linalg.cholesky(lat)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(lat)
        root = vecs * np.sqrt(np.clip(vals, 0, None))
    rng = np.random.default_rng(spec.seed)
    return rng.standard_normal((spec.n, len(spec.names))) @ root.T


def synth_population(spec: SynthSpec) -> DataTable:
    z = _latent_draw(spec)
    return DataTable({name: m.transform(z[:, j]) for j, (name, m) in enumerate(zip(spec.names, spec.margins))})


def achieved_correlations(table: DataTable, pairs: Sequence[tuple[str, str]]) -> dict[tuple[str, str], float]:
    return {(a, b): float(np.corrcoef(table.column(a), table.column(b))[0, 1]) for a, b in pairs}


def pearson_from_latent(rho, m1: Margin, m2: Margin):
    """Pearson correlation of two transformed margins given their latent correlation."""
    rho = np.asarray(rho, dtype=float)
    logn1, logn2 = m1.kind == "lognormal", m2.kind == "lognormal"
    if not logn1 and not logn2:
        return rho
    if logn1 and logn2:
        s1, s2 = m1.sigma, m2.sigma
        return np.expm1(rho * s1 * s2) / np.sqrt(np.expm1(s1 ** 2) * np.expm1(s2 ** 2))
    s = m1.sigma if logn1 else m2.sigma
    return rho * s / np.sqrt(np.expm1(s ** 2))


def latent_from_pearson(r, m1: Margin, m2: Margin):
    """Inverse of :func:`pearson_from_latent` for metric margins."""
    r = np.asarray(r, dtype=float)
    logn1, logn2 = m1.kind == "lognormal", m2.kind == "lognormal"
    if not logn1 and not logn2:
        out = r
    elif logn1 and logn2:
        s1, s2 = m1.sigma, m2.sigma
        arg = 1 + r * np.sqrt(np.expm1(s1 ** 2) * np.expm1(s2 ** 2))
        if np.any(arg <= 0):
            raise DataError("Pearson target below the attainable range for these lognormal margins")
        out = np.log(arg) / (s1 * s2)
    else:
        s = m1.sigma if logn1 else m2.sigma
        out = r * np.sqrt(np.expm1(s ** 2)) / s
    if np.any(np.abs(out) > 1):
        raise DataError("Pearson target not attainable for these margins")
    return out


def calibrate(spec: SynthSpec, targets: Mapping[tuple[str, str], float], iterations: int = 25,
              tol: float = 1e-4) -> SynthSpec:
    """Adjust latent entries so the drawn population meets Pearson ``targets``.

    Only the targeted metric pairs are changed. The first pass uses the
    closed-form inversion; later passes shift each pair's effective target
    by the error observed on the fixed-seed draw.
    """
    lat = spec.latent.copy()
    idx = []
    for (a, b), r in targets.items():
        i, j = spec.index(a), spec.index(b)
        if not (spec.margins[i].is_metric and spec.margins[j].is_metric):
            raise DataError(f"calibration target {a}~{b} involves a categorical margin")
        idx.append((i, j, a, b, float(r)))
    effective = {(a, b): r for _, _, a, b, r in idx}
    best, best_err = None, np.inf
    for step in range(iterations):
        lat = lat.copy()
        for i, j, a, b, _r in idx:
            lat[i, j] = lat[j, i] = latent_from_pearson(effective[(a, b)], spec.margins[i], spec.margins[j])
        # the closed-form start must be near-PSD; later corrections chase
        # sampling noise and may be clipped harder
        lat = repair_psd(lat, tol=1e-2 if step == 0 else np.inf)
        current = replace(spec, latent=lat)
        got = achieved_correlations(synth_population(current), [(a, b) for _, _, a, b, _ in idx])
        worst = 0.0
        for _, _, a, b, r in idx:
            err = r - got[(a, b)]
            worst = max(worst, abs(err))
            effective[(a, b)] = float(np.clip(effective[(a, b)] + err, -0.999, 0.999))
        if worst < best_err:
            best, best_err = current, worst
        if worst < tol:
            break
    log.info("calibration finished with max abs error %.2e", best_err)
    return best


# ---------------------------------------------------------------------------
# Calibrated stand-in for the income/consumption surrogate population

COMMON = ("X1", "X2", "X3", "X4", "X5", "X6", "X7")
SPEC_Y = ("Y1", "Y2")
SPEC_Z = ("Z1", "Z2")

# true correlations to reproduce (Y-Z and metric X-Z)
SURVEY_TARGETS = {
    ("Y1", "Z1"): 0.8665, ("Y1", "Z2"): 0.8515, ("Y2", "Z1"): 0.4211, ("Y2", "Z2"): 0.4734,
    ("X2", "Z1"): -0.1314, ("X2", "Z2"): -0.0413, ("X7", "Z1"): 0.9695, ("X7", "Z2"): 0.9735,
}

TRACKED_PAIRS = (("Y1", "Z1"), ("Y1", "Z2"), ("Y2", "Z1"), ("Y2", "Z2"),
                 ("X2", "Z1"), ("X2", "Z2"), ("X7", "Z1"), ("X7", "Z2"))

# latent loadings on (income, age, capital-income) factors; pairs not in
# SURVEY_TARGETS keep the factor-model correlation
_LOADINGS = {
    "X1": (0.45, -0.40, 0.0), "X2": (-0.08, 0.96, 0.0), "X3": (0.0, 0.0, 0.0),
    "X4": (0.25, 0.20, 0.0), "X5": (0.35, 0.30, 0.0), "X6": (0.50, -0.45, 0.0),
    "X7": (1.0, 0.0, 0.0),
    "Y1": (0.92, -0.05, 0.0), "Y2": (0.63, 0.10, 0.35),
    "Z1": (0.978, -0.09, 0.0), "Z2": (0.982, 0.025, 0.10),
}

_MARGINS = {
    # activity status: disabled, unemployed, domestic, retired, working (ascending latent)
    "X1": Margin.from_shares((0.05, 0.07, 0.10, 0.25, 0.53), (5, 2, 4, 3, 1)),
    "X2": Margin("normal", 50.0, 17.0),
    "X3": Margin.from_shares(DENSITY_SHARES, (1, 2, 3)),
    "X4": Margin.from_shares((0.35, 0.30, 0.25, 0.10), (1, 2, 3, 4)),
    "X5": Margin.from_shares((0.30, 0.10, 0.15, 0.15, 0.30), (5, 4, 3, 2, 1)),
    # main source of income: all-zero (9), transfers (2), market income (1)
    "X6": Margin.from_shares((0.02, 0.33, 0.65), (9, 2, 1)),
    "X7": Margin("lognormal", np.log(30000.0), 0.9),
    "Y1": Margin("lognormal", np.log(28000.0), 0.95),
    "Y2": Margin("lognormal", np.log(1500.0), 1.4),
    "Z1": Margin("lognormal", np.log(40000.0), 0.9),
    "Z2": Margin("lognormal", np.log(27000.0), 0.95),
}

_LEVELS = {"X1": (1, 2, 3, 4, 5), "X3": (1, 2, 3), "X4": (1, 2, 3, 4), "X5": (1, 2, 3, 4, 5), "X6": (1, 2, 9)}


def survey_schema() -> FusionSchema:
    """Schema of the calibrated population: X1..X7 common, Y recipient, Z donor."""
    variables = []
    for name in COMMON:
        if name == "X2":
            variables.append(Variable(name, VariableRole.COMMON, ScaleLevel.metric(),
                                      IntervalBin(DEFAULT_AGE_BREAKPOINTS)))
        elif name == "X7":
            variables.append(Variable(name, VariableRole.COMMON, ScaleLevel.metric(), QuantileBin(5)))
        else:
            variables.append(Variable(name, VariableRole.COMMON, ScaleLevel.categorical(_LEVELS[name])))
    variables += [Variable(n, VariableRole.SPECIFIC_RECIPIENT, ScaleLevel.metric()) for n in SPEC_Y]
    variables += [Variable(n, VariableRole.SPECIFIC_DONOR, ScaleLevel.metric()) for n in SPEC_Z]
    return FusionSchema(tuple(variables))


def survey_spec(n: int = 20000, seed: int = 2015) -> SynthSpec:
    """Uncalibrated copula spec (factor-model latent matrix)."""
    names = COMMON + SPEC_Y + SPEC_Z
    lam = np.array([_LOADINGS[v] for v in names])
    lat = lam @ lam.T
    np.fill_diagonal(lat, 1.0)
    return SynthSpec(n, names, tuple(_MARGINS[v] for v in names), lat, seed)


def survey_population(n: int = 20000, seed: int = 2015) -> tuple[DataTable, SynthSpec]:
    """Calibrated population hitting the Y-Z and X-Z correlation targets."""
    spec = calibrate(survey_spec(n, seed), SURVEY_TARGETS)
    return synth_population(spec), spec


def spec_from_dict(d: Mapping) -> SynthSpec:
    """Build a spec from its config-file form.

    ``variables`` lists ``{name, margin: normal|lognormal|categorical, mu,
    sigma, shares | thresholds, codes}``; ``latent`` is a full matrix or a
    list of ``[a, b, rho]`` entries (others zero).
    """
    names, margins = [], []
    for v in d["variables"]:
        kind = v["margin"]
        if kind == "categorical":
            if "shares" in v:
                m = Margin.from_shares(v["shares"], v["codes"])
            else:
                m = Margin("categorical", thresholds=tuple(v["thresholds"]), codes=tuple(v["codes"]))
        else:
            m = Margin(kind, float(v.get("mu", 0.0)), float(v.get("sigma", 1.0)))
        names.append(str(v["name"]))
        margins.append(m)
    p = len(names)
    raw = d.get("latent", [])
    if raw and isinstance(raw[0], (list, tuple)) and len(raw) == p and len(raw[0]) == p:
        lat = np.asarray(raw, dtype=float)
    else:
        lat = np.eye(p)
        for a, b, r in raw:
            i, j = names.index(a), names.index(b)
            lat[i, j] = lat[j, i] = float(r)
    spec = SynthSpec(int(d["n"]), tuple(names), tuple(margins), lat, int(d.get("seed", 0)))
    if d.get("targets"):
        targets = {(a, b): float(r) for a, b, r in d["targets"]}
        spec = calibrate(spec, targets)
    return spec
