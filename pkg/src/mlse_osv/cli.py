"""Command-line entry point.

Subcommands: gen-data, train, extract, enroll, verify, eval-wd, eval-wi.
Every subcommand takes ``--config``, ``--seed`` and ``--out``; flags override
config values. Exit status is 0 on success, 1 on domain errors and 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .container import atomic_write_text, save_feature_matrix
from .corpus import MANIFEST_NAME, generate_corpus, load_manifest, split_wd
from .errors import DataError, MLSEError
from .evaluation import (
    ImageCache,
    enroll_users,
    evaluate_wd,
    evaluate_wi,
    snapshot_features,
    sweep_csv,
    train_snapshots,
)
from .mlse import load_snapshot
from .preprocess import read_pgm
from .verification import load_user_model, save_user_model, verify_query

log = logging.getLogger("mlse_osv")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--corpus", help="corpus directory holding manifest.tsv (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="mlse-osv", description="Multi-loss snapshot ensemble signature verification")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    sub.add_parser("gen-data", parents=[common], help="generate the synthetic corpus into --out")
    sub.add_parser("train", parents=[common], help="train the snapshot ensemble on the WD feature-learning split")
    p = sub.add_parser("extract", parents=[common], help="write per-snapshot feature matrices for every corpus image")
    p.add_argument("--snapshots", required=True, help="directory with snapshot_*.mlse")
    p = sub.add_parser("enroll", parents=[common], help="train and select per-user SVM ensembles")
    p.add_argument("--snapshots", required=True)
    p = sub.add_parser("verify", parents=[common], help="score one image against a claimed user")
    p.add_argument("--snapshots", required=True)
    p.add_argument("--models", required=True, help="directory with user_*.mlsv")
    p.add_argument("--user", type=int, required=True)
    p.add_argument("--image", required=True, help="PGM (P5) image")
    p.add_argument("--combiner", choices=["usmg", "mv"], help="overrides config")
    for name in ("eval-wd", "eval-wi"):
        p = sub.add_parser(name, parents=[common], help=f"{name[5:].upper()} protocol report")
        p.add_argument("--runs", type=int, help="WD runs (overrides config)")
        p.add_argument("--reps", type=int, help="WI repetitions (overrides config)")
        p.add_argument("--sweep", action="store_true", help="also write per-run threshold sweep CSVs")
        p.add_argument("--baselines", action="store_true", help="also train and score single-loss baseline networks")
    return parser


def resolve_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
    for key in ("seed", "out", "corpus", "runs", "reps", "combiner"):
        value = getattr(args, key, None)
        if value is not None:
            cfg = cfgmod.replace_path(cfg, key, value)
    return cfg


def write_run_manifest(out: Path, cfg: cfgmod.RunConfig, argv):
    manifest = {"command": list(argv), "config": cfgmod.to_dict(cfg), "seed": cfg.seed}
    atomic_write_text(out / "run-manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _snapshot_paths(directory) -> list[Path]:
    paths = sorted(Path(directory).glob("snapshot_*.mlse"), key=lambda p: int(p.stem.split("_")[1]))
    if not paths:
        raise DataError(f"no snapshot_*.mlse files in {directory}")
    return paths


def _seeds(seed: int):
    return np.random.SeedSequence(seed).spawn(2)


def cmd_gen_data(cfg, args, out):
    records = generate_corpus(out, cfg.generator, cfg.seed)
    print(f"wrote {len(records)} images and {MANIFEST_NAME} to {out}")


def cmd_train(cfg, args, out):
    records = load_manifest(Path(cfg.corpus) / MANIFEST_NAME)
    split = split_wd(records, cfg.pipeline.protocol, cfg.seed)
    images = ImageCache(cfg.corpus, cfg.pipeline.network.input_shape)
    train_ss, _ = _seeds(cfg.seed)
    snaps = train_snapshots(split, images, cfg.pipeline, train_ss, checkpoint_dir=out)
    lines = ["trial,dominant,epochs,accuracy,checkpoint"]
    lines += [f"{r.trial_index},{r.dominant},{r.epochs_run},{r.accuracy!r},{Path(r.checkpoint).name}" for r in snaps.records]
    atomic_write_text(out / "trials.csv", "\n".join(lines) + "\n")
    print(f"trained {len(snaps)} snapshots into {out}")


def cmd_extract(cfg, args, out):
    records = load_manifest(Path(cfg.corpus) / MANIFEST_NAME)
    snapshots = [load_snapshot(p) for p in _snapshot_paths(args.snapshots)]
    images = ImageCache(cfg.corpus, snapshots[0].config.input_shape)
    paths = [r.path for r in records]
    feats = snapshot_features(snapshots, images, paths)
    for s, f in enumerate(feats):
        save_feature_matrix(out / f"features_s{s}.mlsf", np.array([f[p] for p in paths]))
    index = "".join(f"{i}\t{r.path}\t{r.user_id}\t{r.kind}\n" for i, r in enumerate(records))
    atomic_write_text(out / "features_index.tsv", index)
    print(f"wrote {len(feats)} feature matrices of {len(paths)} rows to {out}")


def cmd_enroll(cfg, args, out):
    records = load_manifest(Path(cfg.corpus) / MANIFEST_NAME)
    split = split_wd(records, cfg.pipeline.protocol, cfg.seed)
    snapshots = [load_snapshot(p) for p in _snapshot_paths(args.snapshots)]
    images = ImageCache(cfg.corpus, snapshots[0].config.input_shape)
    paths = sorted({r.path for u in split.eval_users for r in split.enrollment(u)})
    feats = snapshot_features(snapshots, images, paths)
    _, enroll_ss = _seeds(cfg.seed)
    models = enroll_users(split, feats, cfg.pipeline, enroll_ss)
    for u, m in models.items():
        save_user_model(m, out / f"user_{u}.mlsv")
    test = "".join(f"{r.path}\t{r.user_id}\t{r.kind}\n" for u in split.eval_users for r in split.test_genuine[u] + split.test_skilled[u])
    atomic_write_text(out / "test_split.tsv", test)
    print(f"enrolled {len(models)} users into {out}")


def cmd_verify(cfg, args, out):
    snapshots = [load_snapshot(p) for p in _snapshot_paths(args.snapshots)]
    model_path = Path(args.models) / f"user_{args.user}.mlsv"
    if not model_path.exists():
        raise DataError(f"no enrolled model for user {args.user} at {model_path}")
    model = load_user_model(model_path)
    score, decision = verify_query(model, read_pgm(args.image), snapshots, args.combiner or cfg.combiner)
    print(f"{decision}\t{score!r}")


def _write_report(report, out, sweep):
    atomic_write_text(out / "report.csv", report.to_csv())
    details = [
        {"run": r.run, "combiner_eer": r.combiner_eer, "epochs": r.epochs, "first_trial_accuracy": r.first_trial_accuracy}
        for r in report.runs
    ]
    atomic_write_text(out / "details.json", json.dumps({"mode": report.mode, "runs": details}, sort_keys=True, indent=2) + "\n")
    if sweep:
        for r, scores in zip(report.runs, report.score_sets):
            atomic_write_text(out / f"sweep_run{r.run}.csv", sweep_csv(scores))
    mean = report.mean
    print(f"{report.mode}: {len(report.runs)} evaluations, mean EER(SF) {mean['eer_sf']:.4f}, report in {out / 'report.csv'}")


def cmd_eval_wd(cfg, args, out):
    records = load_manifest(Path(cfg.corpus) / MANIFEST_NAME)
    report = evaluate_wd(records, cfg.corpus, cfg.pipeline, cfg.runs, cfg.seed, cfg.combiner, args.baselines)
    _write_report(report, out, args.sweep)


def cmd_eval_wi(cfg, args, out):
    records = load_manifest(Path(cfg.corpus) / MANIFEST_NAME)
    report = evaluate_wi(records, cfg.corpus, cfg.pipeline, cfg.reps, cfg.seed, cfg.combiner, args.baselines)
    _write_report(report, out, args.sweep)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "extract": cmd_extract,
    "enroll": cmd_enroll,
    "verify": cmd_verify,
    "eval-wd": cmd_eval_wd,
    "eval-wi": cmd_eval_wi,
}


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_run_manifest(out, cfg, [args.command, *argv[1:]])
        COMMANDS[args.command](cfg, args, out)
    except (MLSEError, OSError, KeyError) as exc:
        print(f"mlse-osv {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
