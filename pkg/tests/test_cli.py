"""End-to-end command-line tests: exit codes, artifacts, config precedence."""

import subprocess
import sys

import numpy as np
import pytest

from mmdin import cli
from mmdin import models as mo
from mmdin import pipeline as pl
from mmdin import posters as po

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def manifest_settings(out_dir):
    return cli.read_meta(out_dir / "run_manifest.txt")


# -- extract-features ---------------------------------------------------------------


def test_extract_features_writes_csv_and_report(corpus_dir, tmp_path):
    out_csv = tmp_path / "features.csv"
    code = cli.main(["extract-features",
                     "--posters", str(corpus_dir / "posters"),
                     "--out", str(out_csv)])
    assert code == 0
    table = po.read_poster_features_csv(out_csv)
    assert sorted(table) == [1, 2, 3, 4, 5, 6]
    direct = po.extract_poster_features(po.load_ppm(corpus_dir / "posters" / "3.ppm"))
    assert np.allclose(table[3].as_tuple(), direct.as_tuple(), rtol=1e-8)

    report = (tmp_path / "extract_report.txt").read_text().splitlines()
    assert report[0] == "posters_seen = 8"
    assert report[1] == "features_written = 6"
    assert report[2] == "failures = 2"
    assert report[3].startswith("7.ppm: ")
    assert report[4] == "cover.ppm: file name is not a movie id"
    assert (tmp_path / "run_manifest.txt").exists()


def test_extract_features_empty_dir_warns(tmp_path, capsys):
    empty = tmp_path / "nothing"
    empty.mkdir()
    out_csv = tmp_path / "features.csv"
    code = cli.main(["extract-features", "--posters", str(empty), "--out", str(out_csv)])
    assert code == 0
    assert "warning: no .ppm files" in capsys.readouterr().out
    assert po.read_poster_features_csv(out_csv) == {}


def test_extract_features_rejects_non_directory(tmp_path, capsys):
    target = tmp_path / "afile"
    target.write_text("not a directory")
    code = cli.main(["extract-features", "--posters", str(target),
                     "--out", str(tmp_path / "f.csv")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


# -- build-dataset ------------------------------------------------------------------


def test_build_dataset_artifacts(dataset_dir):
    for name in ("train.csv", "test.csv", "dataset_meta.txt",
                 "pipeline_report.txt", "rejects.txt", "run_manifest.txt"):
        assert (dataset_dir / name).exists(), name

    meta = cli.read_meta(dataset_dir / "dataset_meta.txt")
    assert meta["num_buckets_users"] == "2048"
    assert meta["num_buckets_movies"] == "2048"
    assert meta["split_seed"] == "0"

    train = pl.read_samples(dataset_dir / "train.csv")
    test = pl.read_samples(dataset_dir / "test.csv")
    assert len(train) == int(meta["train_rows"])
    assert len(test) == int(meta["test_rows"])

    report = cli.read_meta(dataset_dir / "pipeline_report.txt")
    assert int(report["samples_built"]) == len(train) + len(test)
    assert 0.0 <= float(report["positive_rate"]) <= 1.0
    assert (dataset_dir / "rejects.txt").read_text() == ""


def test_build_dataset_without_posters_zero_fills(corpus_dir, tmp_path):
    out = tmp_path / "data"
    code = cli.main(["build-dataset",
                     "--ratings", str(corpus_dir / "ratings.csv"),
                     "--movies", str(corpus_dir / "movies.csv"),
                     "--out", str(out), "--seed", "0"])
    assert code == 0
    assert "zero-filled" in (out / "pipeline_report.txt").read_text()
    for sample in pl.read_samples(out / "train.csv")[:20]:
        assert not np.any(sample.history_poster_agg)
        assert not np.any(sample.candidate_poster)


def test_build_dataset_missing_ratings_is_input_error(corpus_dir, tmp_path):
    code = cli.main(["build-dataset",
                     "--ratings", str(corpus_dir / "no_such.csv"),
                     "--movies", str(corpus_dir / "movies.csv"),
                     "--out", str(tmp_path / "d")])
    assert code == 2


def test_build_dataset_bad_header_is_input_error(corpus_dir, tmp_path):
    bad = tmp_path / "ratings.csv"
    bad.write_text("user,item,score\n1,2,3.0\n")
    code = cli.main(["build-dataset", "--ratings", str(bad),
                     "--movies", str(corpus_dir / "movies.csv"),
                     "--out", str(tmp_path / "d")])
    assert code == 2


def test_build_dataset_rejects_zero_buckets(corpus_dir, tmp_path):
    code = cli.main(["build-dataset",
                     "--ratings", str(corpus_dir / "ratings.csv"),
                     "--movies", str(corpus_dir / "movies.csv"),
                     "--out", str(tmp_path / "d"), "--num-buckets", "0"])
    assert code == 2


def test_build_dataset_env_seed_fallback(corpus_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("MMDIN_SEED", "123")
    out = tmp_path / "data"
    code = cli.main(["build-dataset",
                     "--ratings", str(corpus_dir / "ratings.csv"),
                     "--movies", str(corpus_dir / "movies.csv"),
                     "--out", str(out)])
    assert code == 0
    assert cli.read_meta(out / "dataset_meta.txt")["split_seed"] == "123"


def test_build_dataset_bad_env_seed_is_input_error(corpus_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("MMDIN_SEED", "lots")
    code = cli.main(["build-dataset",
                     "--ratings", str(corpus_dir / "ratings.csv"),
                     "--movies", str(corpus_dir / "movies.csv"),
                     "--out", str(tmp_path / "d")])
    assert code == 2


# -- train --------------------------------------------------------------------------


def test_train_artifacts_and_manifest(trained_dir, dataset_dir):
    assert (trained_dir / "checkpoint.bin").exists()
    log_lines = (trained_dir / "training_log.csv").read_text().splitlines()
    assert log_lines[0] == "epoch,mean_loss,wall_ms"
    assert len(log_lines) == 3  # header + two epochs

    settings = manifest_settings(trained_dir)
    assert settings["command"] == "train"
    assert settings["config.variant"] == "EmbeddingMLP"
    assert settings["config.seed"] == "1"
    assert settings["config.num_buckets_users"] == "2048"

    model = mo.load_checkpoint(trained_dir / "checkpoint.bin")
    assert settings["parameter_count"] == str(model.parameter_count())


def test_train_config_file_and_flag_precedence(dataset_dir, tmp_path):
    cfg = tmp_path / "settings.cfg"
    cfg.write_text(
        "# reduced run\n"
        "embedding_dim = 8\n"
        "epochs = 1\n"
        "seed = 7  # flag below wins\n"
        "learning_rate = 2e-3\n"
        "variant = DeepFM\n"
    )
    out = tmp_path / "run"
    code = cli.main(["train", "--data", str(dataset_dir),
                     "--variant", "EmbeddingMLP", "--config", str(cfg),
                     "--out", str(out), "--seed", "5"])
    assert code == 0
    settings = manifest_settings(out)
    assert settings["config.embedding_dim"] == "8"
    assert settings["config.epochs"] == "1"
    assert settings["config.seed"] == "5"  # flag beats file
    assert settings["config.learning_rate"] == "0.002"
    assert settings["config.variant"] == "EmbeddingMLP"  # --variant owns the choice


def test_train_unknown_config_key_is_input_error(dataset_dir, tmp_path, capsys):
    cfg = tmp_path / "settings.cfg"
    cfg.write_text("embeding_dim = 8\n")
    code = cli.main(["train", "--data", str(dataset_dir), "--variant", "DIN",
                     "--config", str(cfg), "--out", str(tmp_path / "run")])
    assert code == 2
    assert "unknown setting" in capsys.readouterr().err


def test_train_non_numeric_config_value_is_input_error(dataset_dir, tmp_path):
    cfg = tmp_path / "settings.cfg"
    cfg.write_text("epochs = three\n")
    code = cli.main(["train", "--data", str(dataset_dir), "--variant", "DIN",
                     "--config", str(cfg), "--out", str(tmp_path / "run")])
    assert code == 2


def test_train_missing_config_file_is_input_error(dataset_dir, tmp_path):
    code = cli.main(["train", "--data", str(dataset_dir), "--variant", "DIN",
                     "--config", str(tmp_path / "absent.cfg"),
                     "--out", str(tmp_path / "run")])
    assert code == 2


def test_train_unbuilt_data_dir_is_input_error(tmp_path, capsys):
    code = cli.main(["train", "--data", str(tmp_path), "--variant", "DIN",
                     "--out", str(tmp_path / "run")])
    assert code == 2
    assert "dataset_meta.txt" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_is_training_error(dataset_dir, tmp_path, capsys):
    code = cli.main(["train", "--data", str(dataset_dir),
                     "--variant", "EmbeddingMLP", "--out", str(tmp_path / "run"),
                     "--epochs", "1", "--learning-rate", "1e155"])
    assert code == 3
    assert "non-finite loss" in capsys.readouterr().err


def test_train_unknown_variant_is_usage_error(dataset_dir, tmp_path):
    with pytest.raises(SystemExit) as excinfo:
        cli.main(["train", "--data", str(dataset_dir), "--variant", "Transformer",
                  "--out", str(tmp_path / "run")])
    assert excinfo.value.code == 2


# -- evaluate -----------------------------------------------------------------------


def test_evaluate_artifacts(trained_dir, dataset_dir, tmp_path):
    out = tmp_path / "eval"
    code = cli.main(["evaluate", "--checkpoint", str(trained_dir / "checkpoint.bin"),
                     "--data", str(dataset_dir), "--out", str(out), "--seed", "0"])
    assert code == 0
    for name in ("metrics.csv", "metrics_at_0.5.csv", "roc_EmbeddingMLP.csv",
                 "pr_EmbeddingMLP.csv", "scatter_EmbeddingMLP.csv", "run_manifest.txt"):
        assert (out / name).exists(), name
    for name in ("roc_EmbeddingMLP.png", "pr_EmbeddingMLP.png", "scatter_EmbeddingMLP.png"):
        blob = (out / name).read_bytes()
        assert blob.startswith(PNG_MAGIC) and len(blob) > 1000, name

    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "model,roc_auc,pr_auc,f1,precision,recall,threshold"
    cells = lines[1].split(",")
    assert cells[0] == "EmbeddingMLP"
    assert 0.0 <= float(cells[1]) <= 1.0


def test_evaluate_bucket_mismatch_is_exit_4(corpus_dir, trained_dir, tmp_path, capsys):
    other = tmp_path / "data64"
    assert cli.main(["build-dataset",
                     "--ratings", str(corpus_dir / "ratings.csv"),
                     "--movies", str(corpus_dir / "movies.csv"),
                     "--out", str(other), "--seed", "0", "--num-buckets", "64"]) == 0
    code = cli.main(["evaluate", "--checkpoint", str(trained_dir / "checkpoint.bin"),
                     "--data", str(other), "--out", str(tmp_path / "eval")])
    assert code == 4
    assert "buckets" in capsys.readouterr().err


def test_evaluate_missing_checkpoint_is_input_error(dataset_dir, tmp_path):
    code = cli.main(["evaluate", "--checkpoint", str(tmp_path / "absent.bin"),
                     "--data", str(dataset_dir), "--out", str(tmp_path / "eval")])
    assert code == 2


def test_evaluate_corrupt_checkpoint_is_exit_4(dataset_dir, tmp_path):
    bad = tmp_path / "checkpoint.bin"
    bad.write_bytes(b"JUNKJUNKJUNK" * 4)
    code = cli.main(["evaluate", "--checkpoint", str(bad),
                     "--data", str(dataset_dir), "--out", str(tmp_path / "eval")])
    assert code == 4


# -- compare ------------------------------------------------------------------------

COMPARE_FLAGS = ["--seeds", "1", "--epochs", "1",
                 "--batch-size", "256", "--learning-rate", "3e-3"]


def run_compare(dataset_dir, out, extra=()):
    return cli.main(["compare", "--data", str(dataset_dir), "--out", str(out),
                     *COMPARE_FLAGS, *extra])


def test_compare_artifacts_and_summary(dataset_dir, tmp_path, capsys):
    out = tmp_path / "cmp"
    assert run_compare(dataset_dir, out) == 0

    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "model,roc_auc,pr_auc,f1,precision,recall,threshold"
    assert sorted(line.split(",")[0] for line in lines[1:]) == sorted(mo.VARIANTS)
    aucs = [float(line.split(",")[1]) for line in lines[1:]]
    assert aucs == sorted(aucs, reverse=True)  # rows ranked by mean ROC-AUC

    per_seed = (out / "per_seed_metrics.csv").read_text().splitlines()
    assert per_seed[0] == "model,seed,roc_auc,pr_auc,f1,precision,recall,threshold"
    assert len(per_seed) == 1 + len(mo.VARIANTS)
    assert all(line.split(",")[1] == "42" for line in per_seed[1:])  # default seed

    for variant in mo.VARIANTS:
        job = out / "jobs" / f"{variant}_seed42"
        assert (job / "checkpoint.bin").exists()
        assert (job / "training_log.csv").exists()
    assert (out / "detail" / "metrics.csv").exists()
    for name in ("roc_overlay.png", "pr_overlay.png", "indicators.png"):
        assert (out / name).read_bytes().startswith(PNG_MAGIC), name
    assert not (out / "failures.txt").exists()
    assert capsys.readouterr().out.count("compare: ") == len(mo.VARIANTS)


def test_compare_is_deterministic_and_parallel_matches(dataset_dir, tmp_path):
    first = tmp_path / "first"
    second = tmp_path / "second"
    threaded = tmp_path / "threaded"
    assert run_compare(dataset_dir, first) == 0
    assert run_compare(dataset_dir, second) == 0
    assert run_compare(dataset_dir, threaded, extra=["--jobs", "3"]) == 0

    reference = (first / "metrics.csv").read_bytes()
    assert (second / "metrics.csv").read_bytes() == reference
    assert (threaded / "metrics.csv").read_bytes() == reference
    per_seed = (first / "per_seed_metrics.csv").read_bytes()
    assert (second / "per_seed_metrics.csv").read_bytes() == per_seed
    assert (threaded / "per_seed_metrics.csv").read_bytes() == per_seed


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_compare_all_jobs_failing_is_training_error(dataset_dir, tmp_path, capsys):
    out = tmp_path / "cmp"
    code = cli.main(["compare", "--data", str(dataset_dir), "--out", str(out),
                     "--seeds", "1", "--epochs", "1", "--learning-rate", "1e155"])
    assert code == 3
    failures = (out / "failures.txt").read_text().splitlines()
    assert len(failures) == len(mo.VARIANTS)
    assert all("non-finite loss" in line for line in failures)
    assert "failed" in capsys.readouterr().err


def test_compare_rejects_bad_counts(dataset_dir, tmp_path):
    assert cli.main(["compare", "--data", str(dataset_dir),
                     "--out", str(tmp_path / "a"), "--seeds", "0"]) == 2
    assert cli.main(["compare", "--data", str(dataset_dir),
                     "--out", str(tmp_path / "b"), "--jobs", "0"]) == 2


# -- module entry point ---------------------------------------------------------------


def test_module_help_via_subprocess():
    proc = subprocess.run([sys.executable, "-m", "mmdin.cli", "--help"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0
    for command in ("extract-features", "build-dataset", "train", "evaluate", "compare"):
        assert command in proc.stdout
