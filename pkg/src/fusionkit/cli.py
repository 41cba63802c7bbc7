"""Command-line entry points.

Exit codes: 0 ok, 1 usage, 2 data/validation error, 3 runtime error.
Errors are also written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import secrets
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import synth
from .data_model import categorise_frame, load_schema, load_table, stack
from .errors import FusionError
from .matchers import PmmConfig, RhdConfig, fuse
from .report import write_report
from .simulation import format_table, load_scenarios, run_mc, scenario_has_seed, write_outputs

log = logging.getLogger("fusionkit")

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _report_error("UsageError", message)
        sys.exit(EXIT_USAGE)


def _report_error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    seed = secrets.randbelow(2 ** 31)
    print(f"seed: {seed}")
    return seed


def cmd_validate(args) -> int:
    schema = load_schema(args.schema)
    tables = [load_table(p, schema) for p in args.data]
    for path, t in zip(args.data, tables):
        print(f"{path}: {t.n_rows} rows, columns {', '.join(t.names)}")
    if len(tables) == 2:
        frame = stack(tables[0], tables[1], schema)
        print(f"stacked frame: {frame.n_rec} recipients + {frame.n_don} donors")
    return 0


def cmd_fuse(args) -> int:
    schema = load_schema(args.schema)
    cfg = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh) or {}
    seed = _seed(args)
    rec = load_table(args.recipient, schema)
    don = load_table(args.donor, schema)
    frame = stack(rec, don, schema)
    targets = cfg.get("targets") or [z for z in schema.specific_donor if z in don]
    cframe = cschema = None
    if args.method == "rhd":
        cframe, cschema = categorise_frame(frame, schema)
    fused, assignments = fuse(frame, schema, args.method, targets, seed,
                              rhd_config=RhdConfig(**cfg.get("rhd", {})),
                              pmm_config=PmmConfig(**cfg.get("pmm", {})),
                              rhd_schema=cschema, rhd_frame=cframe)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fused.to_csv(out, schema.missing_token, with_row_id=True)
    audit_paths = []
    for a in assignments:
        suffix = f".{a.targets[0]}" if args.method == "rhd" else ""
        audit = out.with_name(f"{out.stem}{suffix}.assignment.csv")
        a.to_csv(audit)
        audit_paths.append(audit)
        print(f"{a.method} {'/'.join(a.targets)}: fallback rate {a.fallback_rate:.3f}")
        for note in a.notes:
            print(f"  note: {note}")
    print(f"wrote {out} and {', '.join(str(p) for p in audit_paths)}")
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.spec == "survey":
        pop, spec = synth.survey_population(args.n, _seed(args))
        schema = synth.survey_schema()
        pairs = list(synth.SURVEY_TARGETS)
        with open(out.with_suffix(".schema.yaml"), "w", encoding="utf-8") as fh:
            yaml.safe_dump(schema.to_dict(), fh, sort_keys=False)
    else:
        with open(args.spec, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
        if args.seed is not None or "seed" not in doc:
            doc["seed"] = _seed(args)
        spec = synth.spec_from_dict(doc)
        pop = synth.synth_population(spec)
        pairs = [(a, b) for a, b, _ in doc.get("targets", [])]
    pop.to_csv(out, with_row_id=True)
    for (a, b), r in synth.achieved_correlations(pop, pairs).items():
        print(f"{a}~{b}: {r:.4f}")
    print(f"wrote {out} ({pop.n_rows} rows)")
    return 0


def cmd_simulate(args) -> int:
    seed = args.seed
    if seed is None and not scenario_has_seed(args.scenario):
        seed = _seed(args)
    pop, configs = load_scenarios(args.scenario, seed)
    if args.k is not None:
        configs = [replace(c, k=args.k) for c in configs]
    results = []
    for cfg in configs:
        print(f"scenario {cfg.name}: k={cfg.k}, n_rec={cfg.n_rec}, n_don={cfg.n_don}, "
              f"methods={','.join(cfg.methods)}, seed={cfg.seed}")
        results.append(run_mc(pop, cfg, threads=args.threads))
    paths = write_outputs(results, args.out)
    print()
    print(format_table(results, "bias"))
    print(format_table(results, "mse"))
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    return 0


def cmd_report(args) -> int:
    written = write_report(args.results, args.out)
    for p in written:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fusionkit", description="Statistical matching of two survey files.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="check data files against a schema")
    v.add_argument("--schema", required=True)
    v.add_argument("data", nargs="+", help="one file, or recipient and donor files")
    v.set_defaults(func=cmd_validate)

    f = sub.add_parser("fuse", help="impute donor variables into a recipient file")
    f.add_argument("--recipient", required=True)
    f.add_argument("--donor", required=True)
    f.add_argument("--schema", required=True)
    f.add_argument("--method", choices=("rhd", "pmm", "gower"), required=True)
    f.add_argument("--config", help="YAML with rhd/pmm settings and targets")
    f.add_argument("--seed", type=int)
    f.add_argument("--out", required=True, help="fused CSV path")
    f.set_defaults(func=cmd_fuse)

    s = sub.add_parser("synth", help="draw a synthetic population")
    s.add_argument("--spec", required=True, help="copula spec YAML, or 'survey' for the calibrated default")
    s.add_argument("--n", type=int, default=20000, help="population size for --spec survey")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    m = sub.add_parser("simulate", help="run a Monte Carlo scenario file")
    m.add_argument("--scenario", required=True)
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--seed", type=int, help="overrides the scenario seeds; random if neither is given")
    m.add_argument("--k", type=int, help="overrides the replication count")
    m.add_argument("--threads", type=int, default=1)
    m.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="tables and boxplots from simulate output")
    r.add_argument("--results", required=True, help="simulate output directory")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FusionError as exc:
        _report_error(type(exc).__name__, str(exc))
        return exc.exit_code
    except (OSError, yaml.YAMLError) as exc:
        _report_error(type(exc).__name__, str(exc))
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        _report_error(type(exc).__name__, str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
