"""MovieLens-style ratings to model-ready training samples.

Every rating becomes one sample whose user-side features are computed
only from that user's strictly earlier ratings, so nothing a sample
predicts can leak into its own inputs.  Movie-side statistics use all
ratings of the movie except the sample's own row (leave-one-out).
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from itertools import groupby
from pathlib import Path

import numpy as np

from .posters import (
    HISTORY_AGG_WIDTH,
    POSTER_FIELDS,
    POSTER_WIDTH,
    aggregate_history_poster_features,
)

GENRES = (
    "Action", "Adventure", "Animation", "Children", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "IMAX",
    "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War",
    "Western", "(no genres listed)",
)
GENRE_TO_INDEX = {name: i + 1 for i, name in enumerate(GENRES)}  # 0 is padding
GENRE_VOCAB_SIZE = len(GENRES) + 1

HISTORY_LEN = 5          # most recent liked movies kept per sample
MAX_GENRES = 4           # genre slots per movie
POSITIVE_THRESHOLD = 3.5  # rating at or above this counts as a like
SCENE_CAP = 50.0          # years; movie-age feature is clipped to [0, cap]

VALID_RATINGS = frozenset(k / 2.0 for k in range(1, 11))  # 0.5 .. 5.0

RATINGS_HEADER = ["userId", "movieId", "rating", "timestamp"]
MOVIES_HEADER = ["movieId", "title", "genres"]

_MASK64 = (1 << 64) - 1


class CsvFormatError(ValueError):
    """Input or sample CSV does not match the documented layout."""


class PipelineError(RuntimeError):
    """Dataset-level failure (e.g. too many malformed rows)."""


@dataclass(frozen=True)
class RatingRecord:
    user_id: int
    movie_id: int
    rating: float
    timestamp: int


@dataclass(frozen=True)
class MovieRecord:
    movie_id: int
    title: str
    genres: tuple
    release_year: int | None


@dataclass(frozen=True)
class Sample:
    """One model-ready example; all id fields are already bucketized."""

    label: int
    user_id: int
    movie_id: int
    user_stats: tuple      # (rating_count, avg_rating, avg_year_watched, std_year_watched)
    user_has_history: int  # 0 marks a cold-start user whose stats are sentinel zeros
    movie_stats: tuple     # (rating_count, avg_rating, std_rating, release_year)
    candidate_genres: tuple    # MAX_GENRES indices, 0-padded
    history_movie_ids: tuple   # HISTORY_LEN bucketized ids, newest first, 0-padded
    history_genres: tuple      # HISTORY_LEN * MAX_GENRES indices, 0-padded
    history_poster_agg: tuple  # HISTORY_AGG_WIDTH floats, zeros if no history posters
    candidate_poster: tuple    # POSTER_WIDTH floats, zeros if the movie has no poster
    scene: float               # movie age in years at rating time, clipped


@dataclass
class DatasetSplit:
    train: list
    test: list
    seed: int


@dataclass
class BuildStats:
    ratings_seen: int = 0
    samples_built: int = 0
    skipped_missing_movie: int = 0
    positive_count: int = 0

    @property
    def positive_rate(self):
        return self.positive_count / self.samples_built if self.samples_built else 0.0


# -- input parsing ---------------------------------------------------------

def parse_year_from_title(title):
    """Release year from a trailing '(YYYY)' in the title, else None."""
    m = re.search(r"\((\d{4})\)\s*$", title)
    if not m:
        return None
    year = int(m.group(1))
    return year if 1870 <= year <= 2100 else None


def label_of(rating):
    """1 for a liked movie (rating >= POSITIVE_THRESHOLD), else 0."""
    return 1 if rating >= POSITIVE_THRESHOLD else 0


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def bucketize_id(raw_id, num_buckets):
    """Deterministic hash of a raw id into [1, num_buckets]; 0 stays padding."""
    if num_buckets < 1:
        raise ValueError(f"num_buckets must be >= 1, got {num_buckets}")
    if raw_id < 0:
        raise ValueError(f"ids must be non-negative, got {raw_id}")
    return int(_splitmix64(raw_id) % num_buckets) + 1


def load_ratings_csv(path):
    """Read a ratings CSV -> (records, rejects).

    Malformed rows go to the rejects list as 'line N: reason' strings.
    If more than 1% of the data rows are malformed the whole file is
    refused.  An empty file (header only) yields an empty record list.
    """
    records, rejects = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RATINGS_HEADER:
            raise CsvFormatError(
                f"{path}: expected header {','.join(RATINGS_HEADER)!r}, got {header!r}"
            )
        total = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            total += 1
            if len(row) != 4:
                rejects.append(f"line {lineno}: expected 4 fields, got {len(row)}")
                continue
            try:
                user_id = int(row[0])
                movie_id = int(row[1])
                rating = float(row[2])
                timestamp = int(row[3])
            except ValueError:
                rejects.append(f"line {lineno}: non-numeric field in {row!r}")
                continue
            if rating not in VALID_RATINGS:
                rejects.append(f"line {lineno}: rating {row[2]} outside the 0.5..5.0 half-star scale")
                continue
            if timestamp < 0 or user_id < 0 or movie_id < 0:
                rejects.append(f"line {lineno}: negative id or timestamp in {row!r}")
                continue
            records.append(RatingRecord(user_id, movie_id, rating, timestamp))
    if total and len(rejects) > 0.01 * total:
        raise PipelineError(
            f"{path}: {len(rejects)} of {total} rows malformed (> 1%); refusing the file"
        )
    return records, rejects


def load_movies_csv(path):
    """Read a movies CSV -> (records, rejects). Titles may contain commas."""
    records, rejects = [], []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MOVIES_HEADER:
            raise CsvFormatError(
                f"{path}: expected header {','.join(MOVIES_HEADER)!r}, got {header!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                rejects.append(f"line {lineno}: expected 3 fields, got {len(row)}")
                continue
            try:
                movie_id = int(row[0])
            except ValueError:
                rejects.append(f"line {lineno}: bad movie id {row[0]!r}")
                continue
            if movie_id in seen:
                rejects.append(f"line {lineno}: duplicate movie id {movie_id}, keeping the first")
                continue
            seen.add(movie_id)
            genres = tuple(g for g in row[2].split("|") if g)
            records.append(
                MovieRecord(movie_id, row[1], genres, parse_year_from_title(row[1]))
            )
    return records, rejects


# -- profile accumulation -----------------------------------------------------

def _population_std(total, sumsq, n):
    if n <= 0:
        return 0.0
    var = sumsq / n - (total / n) ** 2
    return float(np.sqrt(max(var, 0.0)))


class _UserState:
    """Running aggregates over one user's already-seen ratings."""

    __slots__ = ("count", "rating_sum", "year_count", "year_sum", "year_sumsq", "liked")

    def __init__(self):
        self.count = 0
        self.rating_sum = 0.0
        self.year_count = 0
        self.year_sum = 0.0
        self.year_sumsq = 0.0
        self.liked = []  # movie ids in chronological order, known movies only

    def absorb(self, record, movie):
        self.count += 1
        self.rating_sum += record.rating
        if movie is not None:
            if movie.release_year is not None:
                self.year_count += 1
                self.year_sum += movie.release_year
                self.year_sumsq += movie.release_year ** 2
            if label_of(record.rating) == 1:
                self.liked.append(movie.movie_id)

    def profile(self):
        if self.count == 0:
            return (0.0, 0.0, 0.0, 0.0), 0
        avg_rating = self.rating_sum / self.count
        avg_year = self.year_sum / self.year_count if self.year_count else 0.0
        std_year = _population_std(self.year_sum, self.year_sumsq, self.year_count)
        return (float(self.count), avg_rating, avg_year, std_year), 1

    def recent_liked(self):
        return self.liked[-HISTORY_LEN:][::-1]  # newest first


def _rating_year(timestamp):
    return datetime.fromtimestamp(timestamp, tz=timezone.utc).year


def _genre_rank_table(movies):
    """Per-movie MAX_GENRES genre indices, most frequent corpus-wide first."""
    freq = {}
    for m in movies:
        for tag in m.genres:
            if tag in GENRE_TO_INDEX:
                freq[tag] = freq.get(tag, 0) + 1
    table = {}
    for m in movies:
        tags = [t for t in m.genres if t in GENRE_TO_INDEX]
        tags.sort(key=lambda t: (-freq[t], GENRE_TO_INDEX[t]))
        idx = [GENRE_TO_INDEX[t] for t in tags[:MAX_GENRES]]
        table[m.movie_id] = tuple(idx + [0] * (MAX_GENRES - len(idx)))
    return table


def _assemble(user_id, movie, timestamp, label, loo_exclude, state,
              movie_acc, genre_table, poster_features,
              num_buckets_users, num_buckets_movies):
    """Feature assembly shared by the bulk builder and the probe path.

    ``loo_exclude`` is the sample's own rating value when it exists in
    the movie's accumulator (leave-one-out), else None.
    """
    user_stats, has_history = state.profile()

    n, total, sumsq = movie_acc.get(movie.movie_id, (0, 0.0, 0.0))
    if loo_exclude is not None:
        n, total, sumsq = n - 1, total - loo_exclude, sumsq - loo_exclude ** 2
    if n > 0:
        movie_stats = (
            float(n),
            total / n,
            _population_std(total, sumsq, n),
            float(movie.release_year or 0),
        )
    else:
        movie_stats = (0.0, 0.0, 0.0, float(movie.release_year or 0))

    if movie.release_year is None:
        scene = 0.0
    else:
        scene = float(min(max(_rating_year(timestamp) - movie.release_year, 0), SCENE_CAP))

    recent = state.recent_liked()
    hist_ids = [bucketize_id(mid, num_buckets_movies) for mid in recent]
    hist_ids += [0] * (HISTORY_LEN - len(hist_ids))
    hist_genres = []
    for mid in recent:
        hist_genres.extend(genre_table[mid])
    hist_genres += [0] * (HISTORY_LEN * MAX_GENRES - len(hist_genres))

    hist_vectors = [poster_features[mid] for mid in recent if mid in poster_features]
    if hist_vectors:
        agg = tuple(float(x) for x in aggregate_history_poster_features(hist_vectors))
    else:
        agg = (0.0,) * HISTORY_AGG_WIDTH

    cand_vec = poster_features.get(movie.movie_id)
    cand_poster = cand_vec.as_tuple() if cand_vec is not None else (0.0,) * POSTER_WIDTH

    return Sample(
        label=label,
        user_id=bucketize_id(user_id, num_buckets_users),
        movie_id=bucketize_id(movie.movie_id, num_buckets_movies),
        user_stats=user_stats,
        user_has_history=has_history,
        movie_stats=movie_stats,
        candidate_genres=genre_table[movie.movie_id],
        history_movie_ids=tuple(hist_ids),
        history_genres=tuple(hist_genres),
        history_poster_agg=agg,
        candidate_poster=cand_poster,
        scene=scene,
    )


def build_profiles_and_samples(ratings, movies, poster_features=None,
                               num_buckets_users=2048, num_buckets_movies=2048):
    """Turn ratings into samples -> (samples, BuildStats).

    Per user, ratings are folded in timestamp order; a sample sees only
    state from strictly earlier timestamps, so same-second rows of one
    user never see each other.  Ratings of movies absent from the movie
    table still count toward user rating statistics but are skipped as
    candidates and never enter the liked-history (their genres are
    unknown).  Output order is (user_id, timestamp, movie_id).
    """
    movies_by_id = {m.movie_id: m for m in movies}
    genre_table = _genre_rank_table(movies)
    poster_features = poster_features or {}

    movie_acc = {}
    for r in ratings:
        n, total, sumsq = movie_acc.get(r.movie_id, (0, 0.0, 0.0))
        movie_acc[r.movie_id] = (n + 1, total + r.rating, sumsq + r.rating ** 2)

    ordered = sorted(ratings, key=lambda r: (r.user_id, r.timestamp, r.movie_id))
    samples = []
    stats = BuildStats(ratings_seen=len(ratings))
    for _, group_iter in groupby(ordered, key=lambda r: r.user_id):
        group = list(group_iter)
        state = _UserState()
        i = 0
        while i < len(group):
            j = i
            while j < len(group) and group[j].timestamp == group[i].timestamp:
                j += 1
            for r in group[i:j]:
                movie = movies_by_id.get(r.movie_id)
                if movie is None:
                    stats.skipped_missing_movie += 1
                    continue
                label = label_of(r.rating)
                samples.append(
                    _assemble(r.user_id, movie, r.timestamp, label, r.rating, state,
                              movie_acc, genre_table, poster_features,
                              num_buckets_users, num_buckets_movies)
                )
                stats.samples_built += 1
                stats.positive_count += label
            for r in group[i:j]:
                state.absorb(r, movies_by_id.get(r.movie_id))
            i = j
    return samples, stats


def probe_sample_features(ratings, movies, poster_features, user_id, movie_id,
                          timestamp, num_buckets_users=2048, num_buckets_movies=2048):
    """Recompute one sample's features from scratch (label fixed at 0).

    Uses the same assembly path as the bulk builder: user state folds
    only strictly earlier ratings, and if a rating row exactly matching
    (user_id, movie_id, timestamp) exists, that one row is excluded from
    the movie's leave-one-out statistics.
    """
    movies_by_id = {m.movie_id: m for m in movies}
    movie = movies_by_id.get(movie_id)
    if movie is None:
        raise PipelineError(f"movie {movie_id} not in the movie table")
    genre_table = _genre_rank_table(movies)
    poster_features = poster_features or {}

    movie_acc = {}
    for r in ratings:
        n, total, sumsq = movie_acc.get(r.movie_id, (0, 0.0, 0.0))
        movie_acc[r.movie_id] = (n + 1, total + r.rating, sumsq + r.rating ** 2)

    own = [r for r in ratings
           if r.user_id == user_id and r.movie_id == movie_id and r.timestamp == timestamp]
    loo_exclude = own[0].rating if own else None

    mine = sorted(
        (r for r in ratings if r.user_id == user_id and r.timestamp < timestamp),
        key=lambda r: (r.timestamp, r.movie_id),
    )
    state = _UserState()
    for r in mine:
        state.absorb(r, movies_by_id.get(r.movie_id))

    return _assemble(user_id, movie, timestamp, 0, loo_exclude, state,
                     movie_acc, genre_table, poster_features,
                     num_buckets_users, num_buckets_movies)


# -- split ------------------------------------------------------------------

def split_train_test(samples, ratio=0.8, seed=0):
    """Seeded uniform shuffle split; |train| = round(ratio * n)."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    n_train = int(round(ratio * len(samples)))
    train = [samples[i] for i in order[:n_train]]
    test = [samples[i] for i in order[n_train:]]
    return DatasetSplit(train=train, test=test, seed=seed)


# -- sample CSV round trip -----------------------------------------------------

def _sample_columns():
    cols = [
        "label", "user_id", "movie_id",
        "user_rating_count", "user_avg_rating", "user_avg_year", "user_std_year",
        "user_has_history",
        "movie_rating_count", "movie_avg_rating", "movie_std_rating", "movie_release_year",
        "scene",
    ]
    cols += [f"cand_genre_{i}" for i in range(1, MAX_GENRES + 1)]
    cols += [f"hist_movie_{i}" for i in range(1, HISTORY_LEN + 1)]
    cols += [f"hist_genre_{i}" for i in range(1, HISTORY_LEN * MAX_GENRES + 1)]
    cols += [f"cand_poster_{name}" for name in POSTER_FIELDS]
    cols += [f"hist_poster_{name}_mean" for name in POSTER_FIELDS]
    cols += [f"hist_poster_{name}_std" for name in POSTER_FIELDS]
    return cols


SAMPLE_COLUMNS = _sample_columns()


def _f17(x):
    return f"{x:.17g}"


def _sample_row(s):
    row = [str(s.label), str(s.user_id), str(s.movie_id)]
    row += [_f17(x) for x in s.user_stats]
    row.append(str(s.user_has_history))
    row += [_f17(x) for x in s.movie_stats]
    row.append(_f17(s.scene))
    row += [str(i) for i in s.candidate_genres]
    row += [str(i) for i in s.history_movie_ids]
    row += [str(i) for i in s.history_genres]
    row += [_f17(x) for x in s.candidate_poster]
    row += [_f17(x) for x in s.history_poster_agg]
    return row


def write_samples(path, samples):
    """Write samples as CSV with the fixed SAMPLE_COLUMNS header.

    Floats are printed with 17 significant digits so a read-back is
    value-exact; byte-identical output is guaranteed for equal input.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SAMPLE_COLUMNS)
        for s in samples:
            writer.writerow(_sample_row(s))


def read_samples(path):
    """Inverse of write_samples; any header deviation is refused."""
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SAMPLE_COLUMNS:
            raise CsvFormatError(f"{path}: sample header does not match the documented layout")
        ncols = len(SAMPLE_COLUMNS)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != ncols:
                raise CsvFormatError(f"{path}: line {lineno}: expected {ncols} columns, got {len(row)}")
            try:
                samples.append(_parse_sample_row(row))
            except ValueError as exc:
                raise CsvFormatError(f"{path}: line {lineno}: {exc}") from None
    return samples


def _parse_sample_row(row):
    it = iter(row)

    def take(n):
        return [next(it) for _ in range(n)]

    label, user_id, movie_id = int(next(it)), int(next(it)), int(next(it))
    user_stats = tuple(float(x) for x in take(4))
    has_history = int(next(it))
    movie_stats = tuple(float(x) for x in take(4))
    scene = float(next(it))
    cand_genres = tuple(int(x) for x in take(MAX_GENRES))
    hist_ids = tuple(int(x) for x in take(HISTORY_LEN))
    hist_genres = tuple(int(x) for x in take(HISTORY_LEN * MAX_GENRES))
    cand_poster = tuple(float(x) for x in take(POSTER_WIDTH))
    agg = tuple(float(x) for x in take(HISTORY_AGG_WIDTH))
    return Sample(
        label=label, user_id=user_id, movie_id=movie_id,
        user_stats=user_stats, user_has_history=has_history,
        movie_stats=movie_stats, candidate_genres=cand_genres,
        history_movie_ids=hist_ids, history_genres=hist_genres,
        history_poster_agg=agg, candidate_poster=cand_poster, scene=scene,
    )
