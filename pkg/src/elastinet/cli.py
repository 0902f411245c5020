"""Command-line entry point wiring the pipeline end to end.

Exit codes: 0 success, 2 usage/config error, 3 artifact mismatch,
4 numeric failure. Every command writes its resolved configuration as JSON
next to its outputs; re-running with the same inputs and seed reproduces
outputs byte-identically (timing goes to stderr, never into artifacts).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as dt
from . import synth
from .elasticity import (
    ElasticityEntry,
    ElasticityQuery,
    evaluate_elasticities,
    loglog_baseline,
    mae_elasticity,
    wmape,
)
from .errors import (
    ConfigError,
    DomainError,
    ElastinetError,
    IntegrityError,
    MetricError,
    ModelIOError,
    NumericError,
    ParseError,
    SchemaMismatchError,
)
from .gradcheck import gradcheck
from .model import ArchConfig, load_model, save_model
from .tensor import Tensor, mse_loss, sum_sq
from .training import TrainConfig, prepare_model, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISMATCH = 3
EXIT_NUMERIC = 4

GRADCHECK_TOLERANCE = 1e-5


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolved_config(out_dir: Path, command: str, values: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / f"{command}_config.json", {"command": command, **values})


def _merge_config_file(args: argparse.Namespace, parser_keys: set[str]) -> None:
    """Fill argparse values from --config JSON; explicit flags win."""
    if not getattr(args, "config", None):
        return
    with open(args.config, encoding="utf-8") as fh:
        file_cfg = json.load(fh)
    unknown = set(file_cfg) - parser_keys
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, value in file_cfg.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    world = synth.SyntheticWorld(
        n_items=args.items,
        n_months=args.months,
        start_month=args.start_month,
        seed=args.seed,
        noise_sigma=args.sigma,
        epsilon_range=(args.epsilon_min, args.epsilon_max),
        kinked=args.world == "kinked",
        stockout_rate=args.stockout_rate,
    )
    records, truths = synth.generate(world)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dt.write_transactions(records, out / "transactions.csv")
    synth.write_truth(truths, out / "truth.csv")
    _resolved_config(
        out,
        "synth",
        {
            "items": args.items,
            "months": args.months,
            "start_month": args.start_month,
            "seed": args.seed,
            "sigma": args.sigma,
            "epsilon_min": args.epsilon_min,
            "epsilon_max": args.epsilon_max,
            "world": args.world,
            "stockout_rate": args.stockout_rate,
        },
    )
    print(f"wrote {len(records)} records for {args.items} items to {out}")
    return EXIT_OK


def cmd_build(args) -> int:
    records = dt.ingest(args.transactions)
    pairs = dt.build_pairs(records)
    ds = dt.split(pairs, seed=args.seed, by_item=args.by_item)
    out = Path(args.out)
    dt.save_dataset(ds, out)
    _resolved_config(
        out,
        "build",
        {"transactions": str(args.transactions), "seed": args.seed, "by_item": args.by_item},
    )
    counts = ds.manifest["row_counts"]
    print(f"pairs: train={counts['train']} validation={counts['validation']} out_of_time={counts['out_of_time']}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        l2_decay=args.l2_decay,
        seed=args.seed,
    )


def cmd_train(args) -> int:
    ds = dt.load_dataset(args.dataset)
    config = _train_config(args)
    arch = ArchConfig()
    model = prepare_model(ds, arch, seed=args.seed)
    report = train(model, ds, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.mdnm")
    _write_json(out / "train_report.json", report.to_json_dict())
    with open(out / "losses.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for i, (t, v) in enumerate(zip(report.train_losses, report.val_losses), start=1):
            fh.write(f"{i},{t!r},{v!r}\n")
    _resolved_config(
        out,
        "train",
        {
            "dataset": str(args.dataset),
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "learning_rate": config.learning_rate,
            "l2_decay": config.l2_decay,
            "seed": config.seed,
        },
    )
    print(
        f"trained {config.epochs} epochs; final train loss {report.train_losses[-1]:.6f}, "
        f"val loss {report.val_losses[-1]:.6f} ({report.wall_time_seconds:.1f}s)",
        file=sys.stderr,
    )
    print(f"model written to {out / 'model.mdnm'}")
    return EXIT_OK


def _check_schema(model, ds) -> None:
    if model.dataset_schema_hash != ds.schema_hash:
        raise SchemaMismatchError(
            f"model was trained on schema {model.dataset_schema_hash}, dataset has {ds.schema_hash}"
        )


def cmd_evaluate(args) -> int:
    ds = dt.load_dataset(args.dataset)
    model = load_model(args.model)
    _check_schema(model, ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    metrics = {}
    for name, pairs in (("validation", ds.validation), ("out_of_time", ds.out_of_time)):
        if not pairs:
            continue
        actual = np.array([p.target for p in pairs], dtype=np.float64)
        pred = model.predict_batch(pairs)
        metrics[name] = {"wmape_pct": wmape(actual, pred), "rows": len(pairs)}
    _write_json(out / "metrics.json", metrics)
    _resolved_config(out, "evaluate", {"dataset": str(args.dataset), "model": str(args.model)})
    for name, m in metrics.items():
        print(f"{name}: WMAPE {m['wmape_pct']:.2f}% over {m['rows']} rows")
    return EXIT_OK


def cmd_elasticity(args) -> int:
    records = dt.ingest(args.transactions)
    model = load_model(args.model)
    as_of = args.as_of if args.as_of is not None else max(r.year_month for r in records)
    inference, skipped = dt.build_inference_set(records, as_of)
    queries = None
    if args.dp_pct is not None:
        queries = [
            ElasticityQuery(p.item_id, dp=args.dp_pct / 100.0 * p.lead_price) for p in inference
        ]
    report = evaluate_elasticities(model, inference, queries)
    for item_id, reason in skipped:
        report.entries.append(ElasticityEntry(item_id, None, None, None, None, None, reason))
    report.entries.sort(key=lambda e: e.item_id)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "elasticity.csv")

    extra = {"as_of_month": as_of}
    if args.truth:
        truths = {t.item_id: t for t in synth.read_truth(args.truth)}
        predicted = report.elasticities()
        truth_arcs = {}
        for e in report.valid_entries():
            t = truths.get(e.item_id)
            if t is not None:
                truth_arcs[e.item_id] = t.arc_elasticity(e.p, e.dp)
        if truth_arcs:
            mae, coverage = mae_elasticity(truth_arcs, predicted)
            extra["mae_vs_truth"] = mae
            extra["truth_coverage"] = coverage
    report.write_summary_json(out / "elasticity_summary.json", extra)
    _resolved_config(
        out,
        "elasticity",
        {
            "transactions": str(args.transactions),
            "model": str(args.model),
            "as_of": as_of,
            "dp_pct": args.dp_pct,
            "truth": str(args.truth) if args.truth else None,
        },
    )
    summary = report.summary()
    print(f"elasticities: {summary['valid']} valid, {summary['skipped']} skipped; report in {out}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    ds = dt.load_dataset(args.dataset)
    slopes, skipped = loglog_baseline(ds.train + ds.validation)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "baseline.csv", "w", encoding="utf-8") as fh:
        fh.write("item_id,elasticity\n")
        for item_id in sorted(slopes):
            fh.write(f"{item_id},{slopes[item_id]!r}\n")
    _resolved_config(out, "baseline", {"dataset": str(args.dataset)})
    print(f"baseline: {len(slopes)} items fitted, {len(skipped)} skipped")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    # small fixed architecture exercising every layer type, incl. the L2 term
    from .model import CategoricalSpec, DemandModel, FeatureSchema

    schema = FeatureSchema(
        (CategoricalSpec("item_id", 6, 3), CategoricalSpec("brand", 4, 2)),
        ("lag_price", "lag_units"),
        (("lead_price", -1), ("price_change_pct", -1)),
    )
    arch = ArchConfig(trunk_widths=(8,), injection_width=8, post_widths=(4,), encoder_width=3)
    model = DemandModel(schema, arch, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    n = 12
    cat = np.column_stack([rng.integers(0, 6, n), rng.integers(0, 4, n)])
    cont = rng.normal(size=(n, 2))
    mono = rng.normal(size=(n, 2))
    target = Tensor(rng.normal(size=(n, 1)))

    def loss_fn():
        loss = mse_loss(model.forward(cat, cont, mono), target)
        for w in model.decayed_parameters():
            loss = loss + 1e-4 * sum_sq(w)
        return loss

    report = gradcheck(
        loss_fn,
        model.parameters(),
        probes_per_param=args.probes,
        seed=args.seed,
        probe_filter=lambda p, r, c: not p.name.endswith(".w") or abs(p.data[r, c]) > 1e-3,
    )
    payload = {
        "max_rel_error": report.max_rel_error,
        "tolerance": GRADCHECK_TOLERANCE,
        "probes": report.probes,
        "per_param": dict(sorted(report.per_param.items())),
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "gradcheck.json", payload)
        _resolved_config(out, "gradcheck", {"seed": args.seed, "probes": args.probes})
    print(json.dumps({"max_rel_error": report.max_rel_error, "probes": report.probes}))
    if not report.passed(GRADCHECK_TOLERANCE):
        print(f"gradcheck FAILED: max relative error {report.max_rel_error:.3e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elastinet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic transaction world")
    p.add_argument("--items", type=int, default=200)
    p.add_argument("--months", type=int, default=27)
    p.add_argument("--start-month", type=int, default=202301)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--epsilon-min", type=float, default=-3.0)
    p.add_argument("--epsilon-max", type=float, default=-0.5)
    p.add_argument("--world", choices=["constant", "kinked"], default="constant")
    p.add_argument("--stockout-rate", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build", help="build the lead/lag pair dataset and splits")
    p.add_argument("--transactions", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--by-item", action="store_true", help="split 80/20 by item instead of by pair")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="train the demand model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="JSON config file merged under explicit flags")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--l2-decay", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(
        func=cmd_train,
        _defaults={"epochs": 25, "batch_size": 128, "learning_rate": 0.01, "l2_decay": 1e-4, "seed": 0},
        _config_keys={"epochs", "batch_size", "learning_rate", "l2_decay", "seed"},
    )

    p = sub.add_parser("evaluate", help="WMAPE of a trained model on the held-out splits")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("elasticity", help="counterfactual elasticity report")
    p.add_argument("--transactions", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--as-of", type=int, default=None, help="lag month YYYYMM; default latest")
    p.add_argument("--dp-pct", type=float, default=None, help="price change in percent; default -5")
    p.add_argument("--truth", default=None, help="truth table CSV for MAE reporting")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_elasticity)

    p = sub.add_parser("baseline", help="log-log OLS elasticity baseline per item")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer type")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probes", type=int, default=5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "_config_keys"):
            _merge_config_file(args, args._config_keys)
            for key, value in args._defaults.items():
                if getattr(args, key) is None:
                    setattr(args, key, value)
        return args.func(args)
    except (ConfigError, DomainError, ParseError, IntegrityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaMismatchError, ModelIOError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (NumericError, MetricError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ElastinetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
