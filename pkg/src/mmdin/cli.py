"""Command-line surface: extract-features, build-dataset, train, evaluate, compare.

Exit codes: 0 success, 2 input error, 3 training failure, 4 evaluation
mismatch (checkpoint incompatible with the dataset or its config).

Model settings come from defaults < config file < command-line flags.
Config files are line-oriented ``key = value`` with ``#`` comments; the
seed additionally falls back to the MMDIN_SEED environment variable when
neither a flag nor the file provides one.  Every command writes a
run_manifest.txt recording its config and input digests.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import metrics as me
from . import models as mo
from . import pipeline as pl
from . import plots
from . import posters as po
from .optim import OptimizerError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_TRAINING = 3
EXIT_MISMATCH = 4

_INPUT_ERRORS = (
    pl.CsvFormatError, pl.PipelineError, po.PpmFormatError, po.FeatureCsvError,
    po.DegenerateImageError, mo.ConfigError, FileNotFoundError, IsADirectoryError,
    NotADirectoryError, PermissionError, ValueError,
)


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except mo.CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (mo.TrainingError, OptimizerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mmdin",
        description="Train and evaluate click/rating prediction models on MovieLens-style data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-features", help="poster directory -> poster_features.csv")
    p.add_argument("--posters", required=True, help="directory of <movieId>.ppm files")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("build-dataset", help="ratings + movies (+ posters) -> train/test sample CSVs")
    p.add_argument("--ratings", required=True)
    p.add_argument("--movies", required=True)
    p.add_argument("--poster-features", default=None,
                   help="poster_features.csv; omitted -> zero-filled poster columns")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="split seed")
    p.add_argument("--num-buckets", type=int, default=2048,
                   help="hash bucket count for user and movie ids")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="fit one variant on a built dataset")
    p.add_argument("--data", required=True, help="build-dataset output directory")
    p.add_argument("--variant", required=True, choices=mo.VARIANTS)
    p.add_argument("--config", default=None, help="key = value settings file")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="scatter subsample seed")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="train and evaluate every variant over N seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=1, help="number of seeds per variant")
    p.add_argument("--jobs", type=int, default=1, help="parallel variant x seed jobs")
    _add_config_flags(p)
    p.set_defaults(func=cmd_compare)

    return parser


def _add_config_flags(p):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)


# -- configuration plumbing ------------------------------------------------------

def parse_config_file(path):
    """Line-oriented 'key = value' settings; '#' starts a comment."""
    values = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise mo.ConfigError(f"{path}: line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise mo.ConfigError(f"{path}: line {lineno}: empty key or value")
        values[key] = value
    return values


def _coerce(field, raw, source):
    if field.type in ("int", int):
        try:
            return int(raw)
        except ValueError:
            raise mo.ConfigError(f"{source}: {field.name} must be an integer, got {raw!r}") from None
    if field.type in ("float", float):
        try:
            return float(raw)
        except ValueError:
            raise mo.ConfigError(f"{source}: {field.name} must be a number, got {raw!r}") from None
    if field.type in ("bool", bool):
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise mo.ConfigError(f"{source}: {field.name} must be true/false, got {raw!r}")
    return raw


def resolve_config(variant, config_path=None, flag_values=None):
    """Build a validated ModelConfig from defaults, file, then flags."""
    config = mo.ModelConfig(variant=variant)
    config_fields = {f.name: f for f in fields(mo.ModelConfig)}
    seed_set = False
    if config_path is not None:
        for key, raw in parse_config_file(config_path).items():
            if key not in config_fields:
                known = ", ".join(sorted(config_fields))
                raise mo.ConfigError(f"{config_path}: unknown setting {key!r} (known: {known})")
            if key == "variant":
                if raw not in mo.VARIANTS:
                    raise mo.ConfigError(
                        f"{config_path}: unknown variant {raw!r}; choose one of {', '.join(mo.VARIANTS)}"
                    )
                continue  # the --variant flag owns variant selection
            config = replace(config, **{key: _coerce(config_fields[key], raw, config_path)})
            if key == "seed":
                seed_set = True
    for key, value in (flag_values or {}).items():
        if value is None:
            continue
        config = replace(config, **{key: value})
        if key == "seed":
            seed_set = True
    if not seed_set:
        env_seed = os.environ.get("MMDIN_SEED")
        if env_seed is not None:
            try:
                config = replace(config, seed=int(env_seed))
            except ValueError:
                raise mo.ConfigError(f"MMDIN_SEED must be an integer, got {env_seed!r}") from None
    return config.validate()


def _flag_values(args):
    return {
        "seed": args.seed,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.learning_rate,
    }


def _resolve_plain_seed(flag_seed, default=42):
    if flag_seed is not None:
        return flag_seed
    env_seed = os.environ.get("MMDIN_SEED")
    if env_seed is not None:
        try:
            return int(env_seed)
        except ValueError:
            raise mo.ConfigError(f"MMDIN_SEED must be an integer, got {env_seed!r}") from None
    return default


# -- manifests and small file helpers ----------------------------------------------

def _sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, command, inputs, settings):
    """Record what produced this directory: command, settings, input digests."""
    lines = [f"command = {command}",
             f"created_utc = {datetime.now(timezone.utc).isoformat()}"]
    for key in sorted(settings):
        lines.append(f"{key} = {settings[key]}")
    for name, path in inputs:
        lines.append(f"input {name} sha256={_sha256_file(path)} bytes={Path(path).stat().st_size}")
    path = Path(out_dir) / "run_manifest.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_meta(path):
    meta = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, value = (part.strip() for part in line.split("=", 1))
            meta[key] = value
    return meta


# -- commands ------------------------------------------------------------------------

def cmd_extract_features(args):
    posters_dir = Path(args.posters)
    if not posters_dir.is_dir():
        raise NotADirectoryError(f"{posters_dir} is not a directory")
    files = sorted(posters_dir.glob("*.ppm"), key=lambda p: p.name)
    features, failures = {}, []
    for path in files:
        try:
            movie_id = int(path.stem)
        except ValueError:
            failures.append(f"{path.name}: file name is not a movie id")
            continue
        try:
            features[movie_id] = po.extract_poster_features(po.load_ppm(path))
        except (po.PpmFormatError, po.DegenerateImageError) as exc:
            failures.append(f"{path.name}: {exc}")
    po.write_poster_features_csv(args.out, features)
    out_dir = Path(args.out).parent
    report = [f"posters_seen = {len(files)}",
              f"features_written = {len(features)}",
              f"failures = {len(failures)}"] + failures
    (out_dir / "extract_report.txt").write_text("\n".join(report) + "\n", encoding="utf-8")
    write_manifest(out_dir, "extract-features",
                   [(p.name, p) for p in files],
                   {"posters_dir": posters_dir, "out": args.out})
    if not files:
        print(f"warning: no .ppm files under {posters_dir}; wrote a header-only CSV")
    print(f"extract-features: {len(features)} feature rows, {len(failures)} failures -> {args.out}")
    return EXIT_OK


def cmd_build_dataset(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = _resolve_plain_seed(args.seed)
    if args.num_buckets < 1:
        raise mo.ConfigError(f"--num-buckets must be >= 1, got {args.num_buckets}")

    ratings, rating_rejects = pl.load_ratings_csv(args.ratings)
    movies, movie_rejects = pl.load_movies_csv(args.movies)
    poster_features = {}
    poster_note = "poster features absent; poster columns zero-filled"
    if args.poster_features is not None:
        poster_features = po.read_poster_features_csv(args.poster_features)
        poster_note = f"poster features loaded for {len(poster_features)} movies"

    samples, stats = pl.build_profiles_and_samples(
        ratings, movies, poster_features,
        num_buckets_users=args.num_buckets, num_buckets_movies=args.num_buckets,
    )
    split = pl.split_train_test(samples, ratio=0.8, seed=seed)
    pl.write_samples(out / "train.csv", split.train)
    pl.write_samples(out / "test.csv", split.test)

    rejects = [f"ratings: {r}" for r in rating_rejects] + [f"movies: {r}" for r in movie_rejects]
    (out / "rejects.txt").write_text("\n".join(rejects) + ("\n" if rejects else ""), encoding="utf-8")

    report = [
        f"ratings_read = {len(ratings)}",
        f"ratings_rejected = {len(rating_rejects)}",
        f"movies_read = {len(movies)}",
        f"movies_rejected = {len(movie_rejects)}",
        f"samples_built = {stats.samples_built}",
        f"skipped_missing_movie = {stats.skipped_missing_movie}",
        f"positive_rate = {stats.positive_rate:.6f}",
        f"train_rows = {len(split.train)}",
        f"test_rows = {len(split.test)}",
        poster_note,
    ]
    (out / "pipeline_report.txt").write_text("\n".join(report) + "\n", encoding="utf-8")

    meta = [
        f"num_buckets_users = {args.num_buckets}",
        f"num_buckets_movies = {args.num_buckets}",
        f"split_seed = {seed}",
        f"train_rows = {len(split.train)}",
        f"test_rows = {len(split.test)}",
    ]
    (out / "dataset_meta.txt").write_text("\n".join(meta) + "\n", encoding="utf-8")

    inputs = [("ratings.csv", args.ratings), ("movies.csv", args.movies)]
    if args.poster_features is not None:
        inputs.append(("poster_features.csv", args.poster_features))
    write_manifest(out, "build-dataset", inputs,
                   {"seed": seed, "num_buckets": args.num_buckets})
    print(f"build-dataset: {stats.samples_built} samples "
          f"({len(split.train)} train / {len(split.test)} test), "
          f"positive rate {stats.positive_rate:.4f} -> {out}")
    return EXIT_OK


def _load_built_dataset(data_dir, which):
    data = Path(data_dir)
    meta_path = data / "dataset_meta.txt"
    if not meta_path.exists():
        raise pl.PipelineError(f"{data}: missing dataset_meta.txt; run build-dataset first")
    meta = read_meta(meta_path)
    samples = pl.read_samples(data / f"{which}.csv")
    return samples, meta


def cmd_train(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples, meta = _load_built_dataset(args.data, "train")
    config = resolve_config(args.variant, args.config, _flag_values(args))
    config = replace(config,
                     num_buckets_users=int(meta["num_buckets_users"]),
                     num_buckets_movies=int(meta["num_buckets_movies"]))

    model = mo.build_model(config)
    log = mo.train(model, samples)
    mo.save_checkpoint(model, out / "checkpoint.bin")
    log.write_csv(out / "training_log.csv")

    settings = {f"config.{k}": v for k, v in sorted(vars(config).items())}
    settings["parameter_count"] = model.parameter_count()
    if log.rows:
        settings["final_mean_loss"] = f"{log.rows[-1][1]:.9g}"
    write_manifest(out, "train", [("train.csv", Path(args.data) / "train.csv")], settings)
    final = f", final mean loss {log.rows[-1][1]:.4f}" if log.rows else ""
    print(f"train: {config.variant} on {len(samples)} samples, "
          f"{model.parameter_count()} parameters{final} -> {out / 'checkpoint.bin'}")
    return EXIT_OK


def _scored_from_model(model, samples):
    pairs = mo.predict(model, samples)
    return me.ScoredSet([s for s, _ in pairs], [l for _, l in pairs])


def _check_compat(model, meta, source):
    cfg = model.config
    if (cfg.num_buckets_users != int(meta["num_buckets_users"])
            or cfg.num_buckets_movies != int(meta["num_buckets_movies"])):
        raise mo.CheckpointError(
            f"{source}: checkpoint expects {cfg.num_buckets_users}/{cfg.num_buckets_movies} "
            f"user/movie buckets but the dataset was built with "
            f"{meta['num_buckets_users']}/{meta['num_buckets_movies']}"
        )


def cmd_evaluate(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = mo.load_checkpoint(args.checkpoint)
    samples, meta = _load_built_dataset(args.data, "test")
    _check_compat(model, meta, args.checkpoint)
    seed = _resolve_plain_seed(args.seed)

    scored = _scored_from_model(model, samples)
    report = me.evaluate_scored(scored)
    name = model.config.variant
    me.export_reports(out, [(name, scored, report)], jitter_seed=seed)

    fpr, tpr = me.roc_curve(scored)
    plots.save_roc_plot([(name, fpr, tpr)], out / f"roc_{name}.png")
    (recalls, precisions), _ = me.pr_curve_and_auc(scored)
    plots.save_pr_plot([(name, recalls, precisions)], out / f"pr_{name}.png")
    jitter, sub_scores, sub_labels = _scatter_arrays(out / f"scatter_{name}.csv")
    plots.save_scatter_plot(jitter, sub_scores, sub_labels, out / f"scatter_{name}.png",
                            threshold=report.best.threshold, title=f"{name} predictions")

    write_manifest(out, "evaluate",
                   [("checkpoint.bin", args.checkpoint),
                    ("test.csv", Path(args.data) / "test.csv")],
                   {"seed": seed, "variant": name, "test_rows": len(samples)})
    print(f"evaluate: {name} ROC-AUC {report.roc_auc:.4f}, PR-AUC {report.pr_auc:.4f}, "
          f"best F1 {report.best.f1:.4f} at threshold {report.best.threshold:.4f} -> {out}")
    return EXIT_OK


def _scatter_arrays(scatter_csv):
    jitter, scores, labels = [], [], []
    with open(scatter_csv, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            j, s, l = line.rstrip("\n").split(",")
            jitter.append(float(j))
            scores.append(float(s))
            labels.append(int(l))
    return jitter, scores, labels


def cmd_compare(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.seeds < 1:
        raise mo.ConfigError(f"--seeds must be >= 1, got {args.seeds}")
    if args.jobs < 1:
        raise mo.ConfigError(f"--jobs must be >= 1, got {args.jobs}")
    train_samples, meta = _load_built_dataset(args.data, "train")
    test_samples, _ = _load_built_dataset(args.data, "test")
    train_arrays = mo.SampleArrays.from_samples(train_samples)
    test_arrays = mo.SampleArrays.from_samples(test_samples)

    base = resolve_config("MMDIN", args.config, _flag_values(args))
    base = replace(base,
                   num_buckets_users=int(meta["num_buckets_users"]),
                   num_buckets_movies=int(meta["num_buckets_movies"]))

    jobs = [(variant, base.seed + k) for variant in mo.VARIANTS for k in range(args.seeds)]

    def run_job(job):
        variant, seed = job
        config = replace(base, variant=variant, seed=seed).validate()
        model = mo.build_model(config)
        log = mo.train(model, train_arrays)
        job_dir = out / "jobs" / f"{variant}_seed{seed}"
        job_dir.mkdir(parents=True, exist_ok=True)
        mo.save_checkpoint(model, job_dir / "checkpoint.bin")
        log.write_csv(job_dir / "training_log.csv")
        scored = _scored_from_model(model, test_arrays)
        return variant, seed, scored, me.evaluate_scored(scored)

    results, failures = {}, []
    if args.jobs == 1:
        for job in jobs:
            try:
                variant, seed, scored, report = run_job(job)
                results[(variant, seed)] = (scored, report)
            except (mo.TrainingError, OptimizerError) as exc:
                failures.append(f"{job[0]} seed {job[1]}: {exc}")
    else:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            futures = {pool.submit(run_job, job): job for job in jobs}
            for future, job in futures.items():
                try:
                    variant, seed, scored, report = future.result()
                    results[(variant, seed)] = (scored, report)
                except (mo.TrainingError, OptimizerError) as exc:
                    failures.append(f"{job[0]} seed {job[1]}: {exc}")
    failures.sort()

    per_seed_lines = ["model,seed,roc_auc,pr_auc,f1,precision,recall,threshold"]
    mean_rows = []
    first_seed_entries = []
    for variant in mo.VARIANTS:
        reports = []
        for k in range(args.seeds):
            seed = base.seed + k
            if (variant, seed) not in results:
                continue
            scored, report = results[(variant, seed)]
            reports.append(report)
            if k == 0:
                first_seed_entries.append((variant, scored, report))
            per_seed_lines.append(
                f"{variant},{seed},{report.roc_auc:.6f},{report.pr_auc:.6f},"
                f"{report.best.f1:.6f},{report.best.precision:.6f},"
                f"{report.best.recall:.6f},{report.best.threshold:.6f}"
            )
        if reports:
            mean_rows.append((
                variant,
                float(np.mean([r.roc_auc for r in reports])),
                float(np.mean([r.pr_auc for r in reports])),
                float(np.mean([r.best.f1 for r in reports])),
                float(np.mean([r.best.precision for r in reports])),
                float(np.mean([r.best.recall for r in reports])),
                float(np.mean([r.best.threshold for r in reports])),
            ))
    mean_rows.sort(key=lambda row: -row[1])

    (out / "per_seed_metrics.csv").write_text("\n".join(per_seed_lines) + "\n", encoding="utf-8")
    me.write_metrics_csv(out / "metrics.csv", mean_rows)
    if failures:
        (out / "failures.txt").write_text("\n".join(failures) + "\n", encoding="utf-8")
        print(f"compare: {len(failures)} job(s) failed; see failures.txt", file=sys.stderr)

    if first_seed_entries:
        me.export_reports(out / "detail", first_seed_entries, jitter_seed=base.seed)
        roc_curves, pr_curves = [], []
        for name, scored, _ in first_seed_entries:
            fpr, tpr = me.roc_curve(scored)
            roc_curves.append((name, fpr, tpr))
            (recalls, precisions), _ = me.pr_curve_and_auc(scored)
            pr_curves.append((name, recalls, precisions))
        plots.save_roc_plot(roc_curves, out / "roc_overlay.png")
        plots.save_pr_plot(pr_curves, out / "pr_overlay.png")
        plots.save_metric_bars([row[:6] for row in mean_rows], out / "indicators.png")

    settings = {f"config.{k}": v for k, v in sorted(vars(base).items()) if k != "variant"}
    settings["seeds"] = args.seeds
    settings["jobs"] = args.jobs
    write_manifest(out, "compare",
                   [("train.csv", Path(args.data) / "train.csv"),
                    ("test.csv", Path(args.data) / "test.csv")],
                   settings)
    if not results:
        raise mo.TrainingError("every compare job failed; see failures.txt")
    for row in mean_rows:
        print(f"compare: {row[0]:<12} mean ROC-AUC {row[1]:.4f}, PR-AUC {row[2]:.4f}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
