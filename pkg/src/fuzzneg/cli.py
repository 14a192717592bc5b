"""``fuzzneg`` command line: negotiate, gen-dataset, batch, calibrate, train, eval.

Exit codes: 0 on success, 2 when a single negotiation fails, 1 on any error.
Every command that writes files also writes ``manifest.json`` next to them.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
import warnings
from importlib import metadata
from pathlib import Path

import numpy as np
import sklearn

from .exceptions import BudgetExhausted
from .experiments import (
    REFERENCE_ANCHORS,
    calibrate_membership,
    export_dataset,
    export_pairs,
    export_report,
    generate_dataset,
    import_dataset,
    import_pairs,
    monotonicity_penalty,
    run_batch,
)
from .fuzzy import FuzzySystem, default_system
from .negotiation import Case, NegotiationConfig, NegotiationEngine, negotiate
from .surrogate import PRESETS, SurrogateRegressor
from .tariff import PricingMode, Tariff

EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2

DEFAULT_CONFIG = {
    "tariff": Tariff(mode=PricingMode.PROGRESSIVE).to_dict(),
    "negotiation": NegotiationConfig().to_dict(),
    "fuzzy": {"mf_kind": "triangular", "system": None},
    "dataset": {"n": 200, "seed": 42},
    "training": {
        "architecture": "model4",
        "n_pairs": 10_000,
        "epochs": 200,
        "batch_size": 32,
        "learning_rate": 0.01,
        "momentum": 0.9,
    },
    "calibration": {"budget": 4000, "monotone": True},
}


class CliError(Exception):
    pass


def _version() -> str:
    try:
        return metadata.version("fuzzneg")
    except metadata.PackageNotFoundError:  # pragma: no cover - source checkout
        return "unknown"


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if key not in base:
            raise CliError(f"unknown config section or key: {key!r}")
        out[key] = _merge(base[key], value) if isinstance(base[key], dict) and isinstance(value, dict) else value
    return out


def load_config(args) -> dict:
    config = json.loads(json.dumps(DEFAULT_CONFIG))
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise CliError(f"config file not found: {path}")
        try:
            config = _merge(config, json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise CliError(f"{path}: invalid JSON ({exc})") from None
    neg = config["negotiation"]
    if args.seed is not None:
        neg["seed"] = args.seed
        config["dataset"]["seed"] = args.seed
    if getattr(args, "case", None) is not None:
        neg["case"] = args.case
    if getattr(args, "mode", None) is not None:
        config["tariff"]["mode"] = args.mode
    if getattr(args, "mf", None) is not None:
        config["fuzzy"]["mf_kind"] = args.mf
    if getattr(args, "rules", None) is not None:
        config["fuzzy"]["system"] = args.rules
    if getattr(args, "priorities", None) is not None:
        neg["priorities"] = args.priorities
    return config


def build_tariff(config) -> Tariff:
    return Tariff.from_dict(config["tariff"])


def build_system(config) -> FuzzySystem:
    fz = config["fuzzy"]
    source = fz.get("system")
    if source is None:
        return default_system(fz.get("mf_kind", "triangular"))
    system = FuzzySystem.from_dict(source) if isinstance(source, dict) else FuzzySystem.from_json(_existing(source))
    if fz.get("mf_kind") == "gaussian" and system.mf_kind != "gaussian":
        system = system.to_gaussian()
    return system


def build_negotiation(config) -> NegotiationConfig:
    return NegotiationConfig.from_dict(config["negotiation"])


def _existing(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise CliError(f"file not found: {path}")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, command: str, config: dict, outputs) -> Path:
    blob = json.dumps(config, sort_keys=True).encode()
    manifest = {
        "command": command,
        "config": config,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "seed": config["negotiation"]["seed"],
        # relative to the output directory so reruns elsewhere compare byte-for-byte
        "outputs": sorted(Path(p).relative_to(out).as_posix() for p in outputs),
        "versions": {
            "fuzzneg": _version(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scikit-learn": sklearn.__version__,
        },
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


# -- commands -----------------------------------------------------------------


def cmd_negotiate(args, config) -> int:
    tariff = build_tariff(config)
    outcome = negotiate(tuple(args.requirement), tariff, build_system(config), build_negotiation(config))
    print(f"original   {tuple(outcome.original)}")
    print(f"final      {tuple(outcome.final)}")
    print(f"accepted   {outcome.accepted}")
    print(f"score      {outcome.score:.4f}")
    print(f"rounds     {outcome.rounds}")
    print(f"fee_ratio  {outcome.fee_ratio:.6f}")
    if args.out:
        out = _out_dir(args)
        trace = out / "trace.csv"
        with trace.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "vcpu", "ram", "storage", "score", "advice"])
            for row in outcome.trace:
                writer.writerow([row.round, *row.offer, repr(row.score), "" if row.advice is None else str(row.advice)])
        write_manifest(out, "negotiate", config, [trace])
    return EXIT_OK if outcome.success else EXIT_FAILED


def cmd_gen_dataset(args, config) -> int:
    tariff = build_tariff(config)
    exclude = import_dataset(_existing(args.exclude), tariff).records if args.exclude else ()
    ds = generate_dataset(args.n or config["dataset"]["n"], config["dataset"]["seed"], tariff, exclude)
    out = _out_dir(args)
    path = out / (args.name or "dataset.csv")
    export_dataset(ds, path)
    write_manifest(out, "gen-dataset", config, [path])
    print(f"wrote {len(ds)} records to {path}")
    return EXIT_OK


def cmd_batch(args, config) -> int:
    tariff = build_tariff(config)
    if args.dataset:
        ds = import_dataset(_existing(args.dataset), tariff)
    else:
        ds = generate_dataset(config["dataset"]["n"], config["dataset"]["seed"], tariff)
    report = run_batch(ds, tariff, build_system(config), build_negotiation(config), workers=args.workers)
    out = _out_dir(args)
    path = out / "report.csv"
    sidecar = export_report(report, path)
    write_manifest(out, "batch", config, [path, sidecar])
    _print_json({k: v for k, v in report.aggregate().items() if k != "config"})
    return EXIT_OK


def cmd_calibrate(args, config) -> int:
    cal = config["calibration"]
    penalty = monotonicity_penalty if cal.get("monotone", True) else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", BudgetExhausted)
        result = calibrate_membership(
            REFERENCE_ANCHORS, args.budget or cal["budget"], config["negotiation"]["seed"], penalty=penalty
        )
    for w in caught:
        if issubclass(w.category, BudgetExhausted):
            print(f"warning: {w.message}", file=sys.stderr)
    out = _out_dir(args)
    path = out / "fuzzy_system.json"
    path.write_text(json.dumps(result.system().to_dict(), indent=2) + "\n")
    write_manifest(out, "calibrate", config, [path])
    _print_json({"residuals": list(result.residuals), "loss": result.loss, "evaluations": result.evaluations})
    return EXIT_OK


def _engine_pairs(config, n, seed, exclude=()):
    tariff = build_tariff(config)
    ds = generate_dataset(n, seed, tariff, exclude)
    neg = build_negotiation(config)
    engine = NegotiationEngine(
        case=int(neg.case),
        d_max=neg.d_max,
        steps=neg.steps,
        priorities=neg.priorities,
        threshold=neg.threshold,
        max_rounds=neg.max_rounds,
        tariff=tariff,
        fuzzy_system=build_system(config),
        random_state=neg.seed,
    ).fit()
    X = ds.to_array()
    return X, engine.predict(X)


def cmd_train(args, config) -> int:
    tr = config["training"]
    out = _out_dir(args)
    outputs = []
    if args.pairs:
        X, y = import_pairs(_existing(args.pairs))
    else:
        # the default eval set is the config dataset; keep training pairs disjoint from it
        ds = config["dataset"]
        held_out = generate_dataset(ds["n"], ds["seed"], build_tariff(config)).records
        X, y = _engine_pairs(config, tr["n_pairs"], ds["seed"] + 1, exclude=held_out)
        pairs = out / "train_pairs.csv"
        export_pairs(X, y, pairs)
        outputs.append(pairs)
    arch = args.arch or tr["architecture"]
    if arch not in PRESETS:
        raise CliError(f"unknown architecture {arch!r}; choose from {sorted(PRESETS)}")
    model = SurrogateRegressor(
        arch,
        epochs=args.epochs or tr["epochs"],
        batch_size=tr["batch_size"],
        learning_rate=tr["learning_rate"],
        momentum=tr["momentum"],
        random_state=config["negotiation"]["seed"],
    ).fit(X, y)
    path = out / f"{arch}.json"
    model.save(path)
    outputs.append(path)
    write_manifest(out, "train", config, outputs)
    print(f"trained {arch} on {len(X)} pairs; final loss {model.loss_history_[-1]:.6g}; saved {path}")
    return EXIT_OK


def cmd_eval(args, config) -> int:
    model = SurrogateRegressor.load(_existing(args.model))
    if args.pairs:
        X, y = import_pairs(_existing(args.pairs))
    else:
        X, y = _engine_pairs(config, config["dataset"]["n"], config["dataset"]["seed"])
    _print_json(model.evaluate(X, y))
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _common(p):
    p.add_argument("--config", help="JSON file overriding the default configuration")
    p.add_argument("--seed", type=int, help="seed for negotiation and dataset generation")
    p.add_argument("--out", help="output directory (created if absent)")
    p.add_argument("--dump-config", action="store_true", help="print the effective configuration and exit")


def _fuzzy_opts(p):
    p.add_argument("--case", type=int, choices=[int(c) for c in Case])
    p.add_argument("--mode", choices=[m.value for m in PricingMode], help="tariff pricing mode")
    p.add_argument("--mf", choices=["triangular", "gaussian"], help="membership function family")
    p.add_argument("--rules", help="fuzzy system JSON (membership functions and rules)")
    p.add_argument("--priorities", type=float, nargs=3, metavar=("VCPU", "RAM", "STORAGE"), help="case 3 only")


class _Parser(argparse.ArgumentParser):
    # usage errors share exit code 1 with every other error; 2 means "negotiation failed"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fuzzneg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("negotiate", help="run one negotiation")
    p.add_argument("requirement", type=int, nargs=3, metavar="QTY", help="VCPU count, RAM GB, storage GB")
    _common(p)
    _fuzzy_opts(p)
    p.set_defaults(func=cmd_negotiate)

    p = sub.add_parser("gen-dataset", help="sample a requirement dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--exclude", help="dataset CSV whose records must not be drawn")
    p.add_argument("--name", help="output file name inside --out")
    _common(p)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("batch", help="negotiate every record of a dataset")
    p.add_argument("--dataset", help="dataset CSV; generated from the config when omitted")
    p.add_argument("--workers", type=int, default=1)
    _common(p)
    _fuzzy_opts(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("calibrate", help="search membership breakpoints for the anchor scores")
    p.add_argument("--budget", type=int)
    _common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train", help="train a surrogate network")
    p.add_argument("--pairs", help="6-column pair CSV; engine-generated when omitted")
    p.add_argument("--arch", help=f"one of {sorted(PRESETS)}")
    p.add_argument("--epochs", type=int)
    _common(p)
    _fuzzy_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved surrogate")
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", help="6-column pair CSV; engine-generated test set when omitted")
    _common(p)
    _fuzzy_opts(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args)
        if args.dump_config:
            _print_json(config)
            return EXIT_OK
        return args.func(args, config)
    except (CliError, ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
