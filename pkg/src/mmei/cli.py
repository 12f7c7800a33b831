"""Command-line entry point: ``mmei <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data/schema error, 3 numerical failure.
Each subcommand writes its files and prints one JSON summary line on stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dataio
from .errors import DataError, MmeiError, NumericalError, ParameterError, ShapeError
from .gradcheck import check_gradients
from .plotting import plot_feedback, plot_loss_curves
from .recommender import rank_top_k, simulate_feedback, write_trace
from .trainer import (TrainConfig, evaluate, load_checkpoint, report_json, save_checkpoint, train,
                      write_loss_csv)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _prepare_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def cmd_synth_data(args) -> int:
    manifest = dataio.load_manifest(args.manifest) if args.manifest else dataio.DatasetManifest()
    try:
        samples, catalog, manifest = dataio.synthesize(
            manifest, args.n, args.seed, args.separation, d_content=args.d_content,
            items_per_pair=args.items_per_pair)
    except ParameterError as exc:
        raise UsageError(str(exc)) from None
    out = _prepare_dir(args.out_dir)
    try:
        dataio.write_dataset(out / "samples.jsonl", samples)
        dataio.write_catalog(out / "catalog.jsonl", catalog)
        dataio.write_manifest(out / "manifest.json", manifest)
    except OSError as exc:
        raise DataError(f"cannot write to {out}: {exc.strerror}") from None
    _emit({"samples": str(out / "samples.jsonl"), "catalog": str(out / "catalog.jsonl"),
           "manifest": str(out / "manifest.json"), "n": len(samples), "items": len(catalog)})
    return EXIT_OK


def _load_config(path) -> TrainConfig:
    if not path:
        return TrainConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc.msg}") from None
    try:
        return TrainConfig.from_dict(obj)
    except (ParameterError, TypeError) as exc:
        raise UsageError(f"bad config {path}: {exc}") from None


def cmd_train(args) -> int:
    config = _load_config(args.config)
    manifest = dataio.load_manifest(args.manifest)
    samples = dataio.load_dataset(args.data, manifest)
    catalog = dataio.load_catalog(args.catalog, config.d)
    train_set, val_set, test_set = dataio.split(samples, dataio.SplitSpec(seed=config.seed), manifest.emotion_space)
    out = _prepare_dir(args.out)
    ckpt, records = train(train_set, val_set, config, manifest, catalog)
    save_checkpoint(ckpt, out / "checkpoint.json")
    write_loss_csv(out / "loss_curve.csv", records)
    plot_loss_curves(records, out / "loss_curve.png")
    for name, part in (("train", train_set), ("val", val_set), ("test", test_set)):
        dataio.write_dataset(out / f"{name}.jsonl", part)
    last = records[-1]
    _emit({"epoch": last.epoch, "train_total": last.train_total, "val_total": last.val_total,
           "best_epoch": ckpt.epoch, "best_val_loss": ckpt.best_val_loss,
           "checkpoint": str(out / "checkpoint.json")})
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    samples = dataio.load_dataset(args.data, ckpt.model.manifest)
    catalog = dataio.load_catalog(args.catalog, ckpt.model.d)
    text = report_json(evaluate(ckpt, samples, catalog, args.k))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    _emit(json.loads(text))
    return EXIT_OK


def _read_single_sample(path, manifest):
    """Accept either one JSON object or a JSON Lines file (first record used)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        lines = [line for line in text.splitlines() if line.strip()]
        try:
            obj = json.loads(lines[0])
        except (json.JSONDecodeError, IndexError) as exc:
            raise dataio.ParseError(f"{path}: cannot decode sample ({exc})") from None
    return dataio.parse_sample(obj, manifest, str(path))


def cmd_recommend(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    sample = _read_single_sample(args.sample, ckpt.model.manifest)
    items = ckpt.model.content_catalog(dataio.load_catalog(args.catalog, ckpt.model.d))
    ranked = rank_top_k(ckpt.model.encode(sample).F, items, args.k)
    _emit({"sample": sample.id, **ranked.to_dict()})
    return EXIT_OK


def cmd_simulate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    samples = dataio.load_dataset(args.data, ckpt.model.manifest)
    items = ckpt.model.content_catalog(dataio.load_catalog(args.catalog, ckpt.model.d))
    tensors = ckpt.model.tensors()
    users = [(s.id, ckpt.model.encode(s, tensors).F.data) for s in samples]
    result = simulate_feedback(users, items, args.rounds, args.seed, args.k, args.step)
    out = _prepare_dir(args.out_dir)
    write_trace(out / "feedback_trace.csv", result.trace)
    summary = result.summary(args.k)
    (out / "feedback_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    plot_feedback(result.mean_rank_history, out / "feedback_rank.png", result.favored)
    _emit(summary)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    worst, ok = 0.0, True
    for seed in range(args.seed, args.seed + args.n_seeds):
        result = check_gradients(seed, d=args.d, tol=args.tol)
        worst = max(worst, result.max_rel_error)
        ok = ok and result.passed
    _emit({"seeds": args.n_seeds, "d": args.d, "tol": args.tol, "max_rel_error": worst, "passed": ok})
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmei", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", help="write a synthetic dataset, catalog and manifest")
    p.add_argument("--manifest", help="manifest JSON with label spaces and dims (default: built-in)")
    p.add_argument("--n", type=int, default=210, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--separation", type=float, default=10.0, help="minimum distance between class centers")
    p.add_argument("--d-content", type=int, default=16, help="content embedding width (model d)")
    p.add_argument("--items-per-pair", type=int, default=4, help="catalog items per emotion/intent pair")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train on a dataset; writes checkpoint, loss CSV/PNG and splits")
    p.add_argument("--data", required=True, help="samples JSONL")
    p.add_argument("--manifest", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--config", help="TrainConfig JSON (missing keys take defaults)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print (and optionally write) the metrics JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", help="write the metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("recommend", help="rank the catalog for one sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", required=True, help="file holding one sample record")
    p.add_argument("--catalog", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("simulate-feedback", help="run the implicit-feedback loop; writes trace CSV and summary")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="samples whose fused states act as users")
    p.add_argument("--catalog", required=True)
    p.add_argument("--rounds", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--step", type=float, default=0.05, help="feedback learning rate")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("grad-check", help="finite-difference gradient check; exit 0 iff all pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--n-seeds", type=int, default=1, help="check seeds seed..seed+n-1")
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mmei {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"mmei {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, KeyError, OSError) as exc:
        print(f"mmei {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MmeiError as exc:
        print(f"mmei {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
