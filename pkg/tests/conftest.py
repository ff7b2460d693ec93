"""Shared fixtures: a small end-to-end corpus and a built dataset."""

import numpy as np
import pytest

from synthml import make_corpus, write_corpus_csv


@pytest.fixture(autouse=True)
def _isolate_seed_env(monkeypatch):
    monkeypatch.delenv("MMDIN_SEED", raising=False)


def write_ppm_file(path, pixels):
    arr = np.asarray(pixels, dtype=np.uint8)
    h, w, _ = arr.shape
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + arr.tobytes())
    return path


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """ratings.csv / movies.csv / poster_features.csv plus a posters directory."""
    root = tmp_path_factory.mktemp("corpus")
    corpus = make_corpus(seed=3, n_users=40, n_movies=60, n_ratings=1500)
    write_corpus_csv(corpus, root)
    posters = root / "posters"
    posters.mkdir()
    rng = np.random.default_rng(0)
    for movie_id in range(1, 7):
        write_ppm_file(posters / f"{movie_id}.ppm",
                       rng.integers(0, 256, size=(6, 4, 3), dtype=np.uint8))
    write_ppm_file(posters / "cover.ppm",
                   rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8))
    (posters / "7.ppm").write_bytes(b"P6\n4 4\n255\nshort")
    return root


@pytest.fixture(scope="session")
def dataset_dir(corpus_dir, tmp_path_factory):
    """A built dataset the training-side tests can share (read-only)."""
    from mmdin import cli

    out = tmp_path_factory.mktemp("dataset")
    code = cli.main([
        "build-dataset",
        "--ratings", str(corpus_dir / "ratings.csv"),
        "--movies", str(corpus_dir / "movies.csv"),
        "--poster-features", str(corpus_dir / "poster_features.csv"),
        "--out", str(out),
        "--seed", "0",
    ])
    assert code == 0
    return out


@pytest.fixture(scope="session")
def trained_dir(dataset_dir, tmp_path_factory):
    """A quick EmbeddingMLP checkpoint over the shared dataset."""
    from mmdin import cli

    out = tmp_path_factory.mktemp("trained")
    code = cli.main([
        "train",
        "--data", str(dataset_dir),
        "--variant", "EmbeddingMLP",
        "--out", str(out),
        "--epochs", "2",
        "--seed", "1",
    ])
    assert code == 0
    return out
