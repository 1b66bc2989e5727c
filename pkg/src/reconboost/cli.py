"""Command-line entry point: ``reconboost <subcommand>`` or ``python -m reconboost``.

Exit codes: 0 ok, 1 verification failure, 2 usage or config error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .datagen import canonical_dominance_spec, corrupt_gaussian, generate_synthetic, load_feature_table, save_feature_table
from .ensemble import load_ensemble
from .errors import FormatError, InvalidInputError, NumericalFailureError
from .evalkit import ProbeConfig, probe_encoder
from .experiment import ConfigError, execute, load_config, write_outputs
from .report import emit_plot_data, validate_report
from .verify import DEFAULT_TOLERANCES, run_verify as _run_checks

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


def _err(msg: str) -> None:
    print(f"reconboost: {msg}", file=sys.stderr)


def run_experiment(config_path, seed=None, output_dir=None) -> int:
    """Train per the config file and write report.json + history.csv."""
    try:
        cfg, settings, raw = load_config(config_path)
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if output_dir is not None:
            settings = replace(settings, output_dir=str(output_dir))
        result = execute(cfg, settings, raw)
        validate_report(json.loads(json.dumps(result["report"])))
        out = write_outputs(result, settings.output_dir)
    except NumericalFailureError as exc:
        _err(f"numerical failure: {exc} at {json.dumps(exc.diagnostics, default=str)}")
        return EXIT_NUMERIC
    except (ConfigError, InvalidInputError, FormatError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    print(f"wrote {out / 'report.json'} and {out / 'history.csv'}")
    return EXIT_OK


def run_verify(overrides=None, tolerance=None, only=None, stream=None) -> int:
    stream = stream or sys.stdout
    try:
        results = _run_checks(overrides, tolerance, only)
    except KeyError as exc:
        _err(str(exc.args[0]))
        return EXIT_USAGE
    for r in results:
        print(r.line(), file=stream)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}", file=stream)
        return EXIT_VERIFY
    print(f"all {len(results)} checks passed", file=stream)
    return EXIT_OK


def _cmd_gen_data(a) -> int:
    data = generate_synthetic(canonical_dominance_spec(a.num_samples), a.seed)
    save_feature_table(data, a.out)
    print(f"wrote {data.num_samples} samples to {a.out}")
    return EXIT_OK


def _cmd_corrupt(a) -> int:
    if a.variance < 0:
        raise InvalidInputError("variance must be >= 0")
    data = load_feature_table(a.data)
    save_feature_table(corrupt_gaussian(data, a.modality, a.fraction, math.sqrt(a.variance), a.seed), a.out)
    print(f"wrote corrupted copy to {a.out}")
    return EXIT_OK


def _seed_list(text: str) -> list:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise InvalidInputError(f"bad seed list {text!r}") from None


def _one_seed(args) -> int:
    config, seed, out = args
    return run_experiment(config, seed, out)


def _cmd_train(a) -> int:
    if not a.seeds:
        return run_experiment(a.config)
    _, settings, _ = load_config(a.config)
    jobs = [(a.config, s, Path(settings.output_dir) / f"seed_{s}") for s in _seed_list(a.seeds)]
    if a.jobs > 1:
        # one process per seed; each writes only its own directory
        with ProcessPoolExecutor(max_workers=a.jobs) as pool:
            codes = list(pool.map(_one_seed, jobs))
    else:
        codes = [_one_seed(j) for j in jobs]
    return max(codes)


def _cmd_probe(a) -> int:
    data = load_feature_table(a.data)
    ens = load_ensemble(a.model)
    cfg = ProbeConfig(seed=a.seed, epochs=a.epochs)
    out = {}
    for l in ens.learners:
        out[data.names[l.modality_id]] = probe_encoder(l.net, data.features[l.modality_id], data.labels, data.num_classes, cfg)
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _parse_tols(items) -> dict:
    out = {}
    for item in items or []:
        name, _, value = item.partition("=")
        if name not in DEFAULT_TOLERANCES or not value:
            raise InvalidInputError(f"bad tolerance override {item!r}; known checks: {', '.join(DEFAULT_TOLERANCES)}")
        out[name] = float(value)
    return out


def _cmd_verify(a) -> int:
    return run_verify(_parse_tols(a.tol), a.tolerance, a.only)


def _cmd_report(a) -> int:
    paths = emit_plot_data(a.reports, a.out)
    for p in paths.values():
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reconboost", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write the canonical dominance benchmark as a feature table")
    g.add_argument("--out", required=True)
    g.add_argument("--num-samples", type=int, default=3000)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=_cmd_gen_data)

    c = sub.add_parser("corrupt", help="add Gaussian noise to a fraction of one modality")
    c.add_argument("--data", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--modality", type=int, required=True)
    c.add_argument("--fraction", type=float, default=0.5)
    c.add_argument("--variance", type=float, required=True, help="noise variance sigma^2")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=_cmd_corrupt)

    t = sub.add_parser("train", help="run an experiment from a key = value config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seeds", help="comma-separated seeds; each run goes to output_dir/seed_<s>")
    t.add_argument("--jobs", type=int, default=1, help="run seeds in this many processes")
    t.set_defaults(fn=_cmd_train)

    pr = sub.add_parser("probe", help="linear-probe the encoders of a saved model")
    pr.add_argument("--data", required=True)
    pr.add_argument("--model", required=True)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--epochs", type=int, default=200)
    pr.set_defaults(fn=_cmd_probe)

    v = sub.add_parser("verify", help="run the gradient and identity checks")
    v.add_argument("--tolerance", type=float, help="one tolerance for every check")
    v.add_argument("--tol", action="append", metavar="CHECK=VALUE", help="per-check tolerance")
    v.add_argument("--only", action="append", metavar="CHECK")
    v.set_defaults(fn=_cmd_verify)

    r = sub.add_parser("report", help="turn report.json files into plot-ready CSVs")
    r.add_argument("reports", nargs="*")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=_cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except NumericalFailureError as exc:
        _err(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    except (InvalidInputError, FormatError) as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
