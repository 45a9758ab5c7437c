"""Command-line entry point: ``odmn <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data/config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .codec import fit_bucketing
from .data import SyntheticConfig, generate_synthetic, load_delimited, load_schema, save_schema, write_delimited
from .errors import OdmnError
from .train import ABLATIONS, Checkpoint, RunConfig, Trainer, evaluate, load_config, predict

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _schema_path(args):
    return args.schema or args.data + ".schema.json"


def _run_config(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "ablation", None):
        cfg = cfg.with_ablation(args.ablation)
    if getattr(args, "baseline", False):
        cfg = replace(cfg, baseline=True)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, epochs=args.epochs)
    return cfg


def cmd_generate(args):
    horizons = tuple(int(h) for h in args.horizons.split(","))
    cfg = SyntheticConfig(n_users=args.n_users, horizons=horizons, zero_rate=args.zero_rate,
                          seed=0 if args.seed is None else args.seed)
    ds = generate_synthetic(cfg)
    write_delimited(ds, args.out)
    save_schema(ds.schema, args.schema or args.out + ".schema.json")
    print(f"wrote {len(ds)} rows to {args.out}")


def cmd_fit_buckets(args):
    schema = load_schema(_schema_path(args))
    ds = load_delimited(args.data, schema)
    cfg = _run_config(args)
    scheme = fit_bucketing(ds.labels, cfg.bucket)
    scheme.save(args.out)
    print(f"wrote scheme for {scheme.n_tasks} task(s) to {args.out}")


def cmd_train(args):
    schema = load_schema(_schema_path(args))
    ds = load_delimited(args.data, schema)
    tr = Trainer(_run_config(args), ds)
    for _ in range(tr.config.epochs):
        entry = tr.run_epoch()
        print(f"epoch {entry['epoch']}: loss {entry['loss']['total']:.6f}")
    tr.checkpoint().save(args.out)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            json.dump({"format_version": 1, "history": tr.history}, fh, indent=1)
    print(f"wrote checkpoint to {args.out}")


def cmd_eval(args):
    ck = Checkpoint.load(args.checkpoint)
    schema = load_schema(_schema_path(args))
    ds = load_delimited(args.data, schema)
    rep = evaluate(ck, ds, expected_scheme_hash=args.scheme_hash)
    text = rep.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def cmd_predict(args):
    ck = Checkpoint.load(args.checkpoint)
    schema = load_schema(_schema_path(args))
    ds = load_delimited(args.data, schema, require_labels=False)
    preds = predict(ck, ds)
    names = [f"ltv{schema.horizons[t]}_pred" for t in ck.task_index]
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("#odmn-predictions/1\n")
        fh.write(",".join(["row"] + names) + "\n")
        for i, row in enumerate(preds):
            fh.write(",".join([str(i)] + [repr(float(v)) for v in row]) + "\n")
    print(f"wrote {preds.shape[0]} predictions to {args.out}")


def cmd_lorenz_export(args):
    ck = Checkpoint.load(args.checkpoint)
    schema = load_schema(_schema_path(args))
    ds = load_delimited(args.data, schema)
    rep = evaluate(ck, ds)
    os.makedirs(args.out_dir, exist_ok=True)
    for h, (true_curve, model_curve, gain_curve) in rep.curves.items():
        for tag, curve in (("true", true_curve), ("model", model_curve), ("gain", gain_curve)):
            path = os.path.join(args.out_dir, f"lorenz_ltv{h}_{tag}.csv")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(curve.to_text())
    print(f"wrote {3 * len(rep.curves)} curves to {args.out_dir}")


def build_parser():
    p = _Parser(prog="odmn", description="Multi-horizon LTV prediction with order-dependency monotonic networks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument("--seed", type=int, default=None)
        if data:
            sp.add_argument("--data", required=True, help="dataset file (comma-delimited)")
            sp.add_argument("--schema", help="schema JSON (default: <data>.schema.json)")

    g = sub.add_parser("generate", help="write a synthetic dataset")
    common(g, data=False)
    g.add_argument("--out", required=True)
    g.add_argument("--schema", help="schema output path (default: <out>.schema.json)")
    g.add_argument("--n-users", type=int, default=10_000)
    g.add_argument("--zero-rate", type=float, default=0.3)
    g.add_argument("--horizons", default="30,90,180,365")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit-buckets", help="fit a bucketing scheme from labels")
    common(f)
    f.add_argument("--config")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit_buckets)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    common(t)
    t.add_argument("--config")
    t.add_argument("--epochs", type=int)
    t.add_argument("--ablation", choices=list(ABLATIONS))
    t.add_argument("--baseline", action="store_true", help="train the plain-MSE baseline instead")
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="write the per-epoch training log (JSON)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scheme-hash", help="refuse to evaluate unless the checkpoint scheme has this hash")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="write per-horizon estimates for a feature file")
    common(r)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    le = sub.add_parser("lorenz-export", help="write Lorenz curve points per horizon")
    common(le)
    le.add_argument("--checkpoint", required=True)
    le.add_argument("--out-dir", required=True)
    le.set_defaults(func=cmd_lorenz_export)
    return p


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError(parser.format_help())
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (OdmnError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"odmn: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
