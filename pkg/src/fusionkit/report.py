"""Reads simulate outputs back and renders tables and boxplot figures."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from .errors import DataError
from . import plotting


def read_results(result_dir):
    """Return ``(summary, estimates)`` where estimates maps scenario -> (method, pair) -> array."""
    d = Path(result_dir)
    try:
        with open(d / "summary.json", encoding="utf-8") as fh:
            summary = json.load(fh)
        rows = defaultdict(lambda: defaultdict(dict))
        with open(d / "estimates.csv", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                val = float(row["estimate"]) if row["estimate"] else np.nan
                rows[row["scenario"]][(row["method"], row["pair"])][int(row["replication"])] = val
    except FileNotFoundError as exc:
        raise DataError(f"{result_dir}: not a simulate output directory ({exc.filename} missing)") from None
    estimates = {}
    for sc, cells in rows.items():
        estimates[sc] = {key: np.array([v[r] for r in sorted(v)]) for key, v in cells.items()}
    return summary, estimates


def _groups(pairs):
    """Split pairs into Y-Z and X-Z panels by the prefix of the first variable."""
    yz = [p for p in pairs if p.startswith("Y")]
    rest = [p for p in pairs if not p.startswith("Y")]
    out = []
    if yz:
        out.append(("yz", yz))
    if rest:
        out.append(("xz", rest))
    return out


def write_report(result_dir, out_dir) -> list[Path]:
    summary, estimates = read_results(result_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for stat in ("bias", "mse"):
        path = out / f"{stat}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for sc in summary["scenarios"]:
                pairs = list(sc["pairs"])
                w.writerow(["scenario", "method"] + pairs)
                for m in sc["methods"]:
                    cells = []
                    for p in pairs:
                        s = sc["pairs"][p]["methods"].get(m)
                        cells.append("" if s is None else f"{s[stat]:.4f}")
                    w.writerow([sc["scenario"], m] + cells)
        written.append(path)
    for sc in summary["scenarios"]:
        pairs = list(sc["pairs"])
        true = {p: sc["pairs"][p]["true"] for p in pairs}
        cia = {p: sc["pairs"][p]["cia"] for p in pairs}
        for tag, group in _groups(pairs):
            fig = plotting.boxplot_pairs(
                estimates.get(sc["scenario"], {}), group, sc["methods"], true, cia,
                title=f"{sc['scenario']}: n_rec={sc['n_rec']}, n_don={sc['n_don']}, k={sc['k']}")
            path = out / f"boxplot_{tag}_{sc['scenario']}.png"
            plotting.save(fig, path)
            written.append(path)
    return written
