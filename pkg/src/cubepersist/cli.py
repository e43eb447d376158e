"""Command line entry point (``cubepersist``).

Exit status: 0 on success, 2 for configuration or usage errors, 3 when the
computation itself fails.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from .estimator import Bandwidth, block_average
from .grid import PersistenceDiagram, ScalarField, read_field
from .harness import ConfigError, ExperimentConfig, emit_report, run
from .metrics import bottleneck, bottleneck_all_degrees
from .persistence import build_filtration, cell_table, compute_persistence, persistence_pairing

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# subcommand -> experiment kinds it accepts (first one is the default)
_CONFIG_KINDS = {
    "simulate": ("convergence", "concentration", "timing"),
    "lowerbound": ("lower_bound_kl",),
    "noise-tail": ("noise_tail",),
    "sandwich": ("sandwich",),
}


def _load_config(path: str, command: str, out: str | None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    allowed = _CONFIG_KINDS[command]
    doc.setdefault("kind", allowed[0])
    if doc["kind"] not in allowed:
        raise ConfigError(f"'{command}' runs kinds {allowed}, config asks for {doc['kind']!r}")
    if out is not None:
        doc["output_dir"] = out
    return ExperimentConfig.from_dict(doc)


def _cmd_experiment(args) -> int:
    cfg = _load_config(args.config, args.command, args.out)
    report = run(cfg)
    out_dir = cfg.output_dir or f"results-{cfg.kind}"
    emit_report(report, out_dir)
    for s in report.summary():
        print(f"alpha={s['alpha']:g} N={s['N']} reps={s['count']} "
              f"bottleneck={s['mean_bottleneck']:.4g}±{s['se_bottleneck']:.2g} "
              f"supnorm={s['mean_supnorm']:.4g}")
    for name in ("tail_fit", "kl_average", "noise_tail", "sandwich_summary"):
        for row in report.tables.get(name, []):
            print(name, " ".join(f"{k}={v}" for k, v in row.items()))
    print(f"wrote {out_dir}")
    return EXIT_OK


def _cmd_diagram(args) -> int:
    values, _ = read_field(args.field)
    fld = ScalarField.from_array(values)
    try:
        bw = Bandwidth(args.block, fld.grid.N)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    filt = build_filtration(block_average(fld, bw))
    dgm = compute_persistence(filt)
    text = dgm.to_csv(args.out)
    if args.out is None:
        sys.stdout.write(text)
    if args.cells:
        with open(args.cells, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell_id", "dim", "value", "pair_id"])
            w.writerows(cell_table(filt, persistence_pairing(filt)))
    return EXIT_OK


def _cmd_bottleneck(args) -> int:
    a = PersistenceDiagram.from_csv(Path(args.a))
    b = PersistenceDiagram.from_csv(Path(args.b))
    v = bottleneck(a, b, args.degree) if args.degree is not None else bottleneck_all_degrees(a, b)
    print("inf" if math.isinf(v) else f"{v:.12g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cubepersist",
                                description="Persistence diagram estimation from noisy grid samples.")
    sub = p.add_subparsers(dest="command", required=True)

    for name, help_ in (("simulate", "run a convergence, concentration or timing experiment"),
                        ("lowerbound", "sweep KL divergences of the lower-bound hypotheses"),
                        ("noise-tail", "Monte Carlo tail of the N_h noise statistic"),
                        ("sandwich", "check sublevel-set inclusions of the estimator")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="experiment JSON")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.set_defaults(func=_cmd_experiment)

    sp = sub.add_parser("diagram", help="diagram of the block estimator of a stored field")
    sp.add_argument("--field", required=True, help="CPF1 field file")
    sp.add_argument("--block", required=True, type=int, help="block side in grid points")
    sp.add_argument("--out", help="diagram CSV (stdout if omitted)")
    sp.add_argument("--cells", help="also dump cell id, dim, value and partner to this CSV")
    sp.set_defaults(func=_cmd_diagram)

    sp = sub.add_parser("bottleneck", help="bottleneck distance between two diagram CSVs")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--degree", type=int, help="homology degree (default: max over degrees)")
    sp.set_defaults(func=_cmd_bottleneck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
