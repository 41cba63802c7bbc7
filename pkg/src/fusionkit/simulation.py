"""Monte Carlo harness: sample, mask, fuse, correlate, summarise.

Every replication draws from streams keyed by ``(master seed, replication,
stream name)``, so results do not depend on execution order or on which
other methods are configured.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from .data_model import DataTable, FusionSchema, categorise_frame, load_schema, load_table, stack, split_population
from .errors import FusionError, SimulationAborted
from .evaluation import CorrelationTarget, EstimateSummary, cia_corr, pair_label, pearson_corr, summarize
from .matchers import PmmConfig, RhdConfig, fuse
from . import synth

log = logging.getLogger(__name__)

METHODS = ("rhd", "pmm", "gower")
STREAMS = {"sample": 0, "rhd": 1, "pmm": 2, "gower": 3}


def stream(master_seed: int, rep: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(rep, STREAMS[name])))


@dataclass(frozen=True)
class McConfig:
    schema: FusionSchema
    k: int
    n_rec: int
    n_don: int
    methods: tuple[str, ...] = ("rhd", "pmm")
    seed: int = 0
    pairs: tuple[tuple[str, str], ...] = ()
    name: str = "scenario"
    # donor block is a copy of the recipient rows (sanity check)
    self_fusion: bool = False
    rhd: RhdConfig = field(default_factory=RhdConfig)
    pmm: PmmConfig = field(default_factory=PmmConfig)
    max_failure_rate: float = 0.05

    def __post_init__(self):
        if self.k < 1:
            raise FusionError("k must be at least 1")
        if self.n_rec < 10 or self.n_don < 10:
            raise FusionError("n_rec and n_don must be at least 10")
        if not self.methods:
            raise FusionError("at least one method is required")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise FusionError(f"unknown methods: {sorted(unknown)}")


@dataclass
class MCResult:
    name: str
    config: McConfig
    targets: dict[str, CorrelationTarget]
    # (method, pair label) -> estimates ordered by replication; NaN marks a failure
    estimates: dict[tuple[str, str], np.ndarray]
    failures: list[tuple[int, str, str]]
    summaries: dict[tuple[str, str], EstimateSummary]

    def summary_dict(self) -> dict:
        out = {"scenario": self.name, "k": self.config.k, "n_rec": self.config.n_rec,
               "n_don": self.config.n_don, "seed": self.config.seed,
               "methods": list(self.config.methods), "pairs": {}, "failures": len(self.failures)}
        for label, t in self.targets.items():
            entry = {"true": t.true_value, "cia": t.cia_value, "methods": {}}
            for m in self.config.methods:
                s = self.summaries.get((m, label))
                entry["methods"][m] = None if s is None else s.to_dict()
            out["pairs"][label] = entry
        return out


def _sample(pop: DataTable, config: McConfig, rep: int):
    rng = stream(config.seed, rep, "sample")
    schema = config.schema
    if config.self_fusion:
        idx = rng.choice(pop.n_rows, size=config.n_rec, replace=False)
        sample = pop.take(idx)
        return sample.drop(schema.specific_donor), sample.drop(schema.specific_recipient)
    return split_population(pop, config.n_rec, config.n_don, rng, schema)


def run_replication(pop: DataTable, config: McConfig, rep: int) -> dict[str, dict[str, float] | str]:
    """One draw: split, stack, fuse with each method, correlate tracked pairs.

    Returns ``{method: {pair label: estimate}}``; a method that raised maps
    to its error message instead.
    """
    schema = config.schema
    rec, don = _sample(pop, config, rep)
    frame = stack(rec, don, schema)
    targets = [z for z in schema.specific_donor if z in don]
    out: dict[str, dict[str, float] | str] = {}
    cframe = cschema = None
    for method in config.methods:
        rng = stream(config.seed, rep, method)
        try:
            if method == "rhd" and cframe is None:
                cframe, cschema = categorise_frame(frame, schema)
            fused, _ = fuse(frame, schema, method, targets, rng, rhd_config=config.rhd,
                            pmm_config=config.pmm, rhd_schema=cschema, rhd_frame=cframe)
            out[method] = {pair_label(a, b): pearson_corr(fused.column(a), fused.column(b))
                           for a, b in config.pairs}
        except FusionError as exc:
            out[method] = f"{type(exc).__name__}: {exc}"
    return out


def true_targets(pop: DataTable, config: McConfig) -> dict[str, CorrelationTarget]:
    schema = config.schema
    specific = set(schema.specific_recipient) | set(schema.specific_donor)
    targets = {}
    for a, b in config.pairs:
        true = pearson_corr(pop.column(a), pop.column(b))
        cia = None
        if a in specific and b in specific:
            cia = cia_corr(pop, a, b, schema.common, schema)
        targets[pair_label(a, b)] = CorrelationTarget(a, b, true, cia)
    return targets


def _worker(args):
    pop, config, rep = args
    return run_replication(pop, config, rep)


def run_mc(pop: DataTable, config: McConfig, threads: int = 1, progress=None) -> MCResult:
    targets = true_targets(pop, config)
    labels = list(targets)
    reps = range(config.k)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_worker, [(pop, config, r) for r in reps], chunksize=4))
    else:
        results = []
        for r in reps:
            results.append(run_replication(pop, config, r))
            if progress is not None:
                progress(r + 1, config.k)

    estimates = {(m, lab): np.full(config.k, np.nan) for m in config.methods for lab in labels}
    failures = []
    for r, res in enumerate(results):
        for m in config.methods:
            val = res[m]
            if isinstance(val, str):
                failures.append((r, m, val))
                continue
            for lab in labels:
                estimates[(m, lab)][r] = val[lab]
    for m in config.methods:
        n_fail = sum(1 for _, fm, _ in failures if fm == m)
        if n_fail > config.max_failure_rate * config.k:
            first = next(msg for _, fm, msg in failures if fm == m)
            raise SimulationAborted(f"{config.name}: {n_fail}/{config.k} replications failed for {m} "
                                    f"(first error: {first})")
    summaries = {}
    for (m, lab), est in estimates.items():
        ok = est[~np.isnan(est)]
        if ok.size:
            summaries[(m, lab)] = summarize(ok, targets[lab].true_value)
    return MCResult(config.name, config, targets, estimates, failures, summaries)


# ---------------------------------------------------------------------------
# scenario files and outputs

DEFAULT_PAIRS = synth.TRACKED_PAIRS


def load_population(spec: Mapping, base: Path) -> tuple[DataTable, FusionSchema]:
    """Population block of a scenario file.

    ``{synthetic: survey, n, seed}`` builds the calibrated stand-in;
    ``{synth_spec: file, schema: file}`` a custom copula population;
    ``{csv: file, schema: file}`` reads a fully observed population.
    """
    if spec.get("synthetic") == "survey":
        pop, _ = synth.survey_population(int(spec.get("n", 20000)), int(spec.get("seed", 2015)))
        return pop, synth.survey_schema()
    schema = load_schema(base / spec["schema"])
    if "synth_spec" in spec:
        with open(base / spec["synth_spec"], encoding="utf-8") as fh:
            sspec = synth.spec_from_dict(yaml.safe_load(fh))
        return synth.synth_population(sspec), schema
    if "csv" in spec:
        return load_table(base / spec["csv"], schema), schema
    raise FusionError("population block needs 'synthetic', 'synth_spec' or 'csv'")


def scenario_has_seed(path) -> bool:
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return isinstance(doc, Mapping) and ("seed" in doc or any("seed" in sc for sc in doc.get("scenarios", [])))


def load_scenarios(path, seed: int | None = None) -> tuple[DataTable, list[McConfig]]:
    """Population and per-scenario configs; ``seed`` overrides every scenario seed."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, Mapping):
        raise FusionError(f"{path}: scenario file must contain a mapping")
    pop, schema = load_population(doc.get("population", {"synthetic": "survey"}), path.parent)
    pairs = tuple(tuple(p) for p in doc.get("pairs", DEFAULT_PAIRS))
    rhd = RhdConfig(**doc.get("rhd", {}))
    pmm = PmmConfig(**doc.get("pmm", {}))
    base = {"k": int(doc.get("k", 50)), "methods": tuple(doc.get("methods", ("rhd", "pmm"))),
            "seed": int(doc.get("seed", 0)), "n_rec": int(doc.get("n_rec", 400)),
            "n_don": int(doc.get("n_don", 400)), "self_fusion": bool(doc.get("self_fusion", False))}
    configs = []
    for sc in doc.get("scenarios", [{"name": doc.get("name", "scenario")}]):
        merged = dict(base)
        merged.update({k: v for k, v in sc.items() if k != "name"})
        if seed is not None:
            merged["seed"] = seed
        configs.append(McConfig(schema=schema, k=int(merged["k"]), n_rec=int(merged["n_rec"]),
                                n_don=int(merged["n_don"]), methods=tuple(merged["methods"]),
                                seed=int(merged["seed"]), pairs=pairs, name=str(sc.get("name", "scenario")),
                                self_fusion=bool(merged["self_fusion"]), rhd=rhd, pmm=pmm))
    return pop, configs


def _num(x) -> str:
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))


def write_outputs(results: Sequence[MCResult], out_dir) -> dict[str, Path]:
    """Long-format estimates, JSON summary and boxplot quantile table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"estimates": out / "estimates.csv", "summary": out / "summary.json",
             "quantiles": out / "quantiles.csv"}
    with open(paths["estimates"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "method", "pair", "replication", "estimate"])
        for res in results:
            for (m, lab), est in res.estimates.items():
                for r, v in enumerate(est):
                    w.writerow([res.name, m, lab, r, _num(v)])
    with open(paths["quantiles"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "method", "pair", "true", "cia", "n", "mean", "bias", "mse",
                    "min", "q25", "median", "q75", "max"])
        for res in results:
            for (m, lab), s in res.summaries.items():
                t = res.targets[lab]
                w.writerow([res.name, m, lab, _num(t.true_value), _num(t.cia_value), s.n, _num(s.mean),
                            _num(s.bias), _num(s.mse), _num(s.min), _num(s.q25), _num(s.median),
                            _num(s.q75), _num(s.max)])
    with open(paths["summary"], "w", encoding="utf-8") as fh:
        json.dump({"scenarios": [r.summary_dict() for r in results]}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def format_table(results: Sequence[MCResult], stat: str) -> str:
    """Plain-text Bias or MSE table: rows scenario x method, columns pairs."""
    lines = []
    for res in results:
        labels = list(res.targets)
        width = max(11, *(len(l) for l in labels))
        lines.append(f"{stat.upper()} [{res.name}: n_rec={res.config.n_rec}, n_don={res.config.n_don}, "
                     f"k={res.config.k}]")
        lines.append(f"{'method':<8}" + "".join(f"{l:>{width + 2}}" for l in labels))
        for m in res.config.methods:
            cells = []
            for l in labels:
                s = res.summaries.get((m, l))
                cells.append("n/a" if s is None else f"{getattr(s, stat):.4f}")
            lines.append(f"{m.upper():<8}" + "".join(f"{c:>{width + 2}}" for c in cells))
        lines.append("")
    return "\n".join(lines)
