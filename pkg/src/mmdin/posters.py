"""Poster color and clarity features from binary PPM images.

A poster is summarized by 13 numbers: saturation / value / chroma means
and population standard deviations over all pixels, one spatial-frequency
clarity score computed on the luminance plane, and per-channel RGB means
and deviations.  All statistics treat the image as a bag of pixels; only
the spatial-frequency score depends on pixel adjacency.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

POSTER_FIELDS = (
    "sat_mean", "sat_std", "val_mean", "val_std", "chroma_mean", "chroma_std",
    "sf", "r_mean", "r_std", "g_mean", "g_std", "b_mean", "b_std",
)
POSTER_WIDTH = len(POSTER_FIELDS)          # 13
HISTORY_AGG_WIDTH = 2 * POSTER_WIDTH       # 26: all field means, then all field stds
POSTER_CSV_HEADER = "movieId," + ",".join(POSTER_FIELDS)

_WHITESPACE = b" \t\r\n\x0b\x0c"


class PpmFormatError(ValueError):
    """Malformed PPM input; the message names the failing byte offset."""


class DegenerateImageError(ValueError):
    """Image too small for the requested statistic."""


class FeatureCsvError(ValueError):
    """Poster feature CSV does not match the documented layout."""


class RgbImage:
    """8-bit RGB raster. ``pixels`` is a (height, width, 3) uint8 array."""

    __slots__ = ("width", "height", "pixels")

    def __init__(self, width, height, pixels):
        if width < 1 or height < 1:
            raise ValueError(f"image extent must be >= 1x1, got {width}x{height}")
        arr = np.asarray(pixels, dtype=np.uint8)
        try:
            arr = arr.reshape(height, width, 3)
        except ValueError:
            raise ValueError(
                f"pixel buffer of size {arr.size} does not fit {width}x{height}x3"
            ) from None
        self.width = int(width)
        self.height = int(height)
        self.pixels = arr


def load_ppm(path):
    """Parse a binary (P6, maxval 255) PPM file into an RgbImage."""
    raw = Path(path).read_bytes()
    pos = 0

    def skip_filler(p):
        while p < len(raw):
            if raw[p] in _WHITESPACE:
                p += 1
            elif raw[p : p + 1] == b"#":
                while p < len(raw) and raw[p] not in b"\n":
                    p += 1
            else:
                break
        return p

    def read_token(p):
        p = skip_filler(p)
        start = p
        while p < len(raw) and raw[p] not in _WHITESPACE and raw[p : p + 1] != b"#":
            p += 1
        if start == p:
            raise PpmFormatError(f"{path}: expected a header token at byte {start}")
        return raw[start:p], start, p

    magic, start, pos = read_token(pos)
    if magic != b"P6":
        raise PpmFormatError(
            f"{path}: expected binary PPM magic 'P6' at byte {start}, found {magic!r}"
        )
    header = []
    for name in ("width", "height", "maxval"):
        token, start, pos = read_token(pos)
        if not re.fullmatch(rb"\d+", token):
            raise PpmFormatError(
                f"{path}: {name} must be a decimal integer at byte {start}, found {token!r}"
            )
        header.append((int(token), start))
    (width, wpos), (height, hpos), (maxval, mpos) = header
    if width < 1 or height < 1:
        raise PpmFormatError(
            f"{path}: image extent must be positive, got {width}x{height} (byte {wpos})"
        )
    if maxval != 255:
        raise PpmFormatError(f"{path}: only maxval 255 is supported, got {maxval} at byte {mpos}")
    if pos >= len(raw) or raw[pos] not in _WHITESPACE:
        raise PpmFormatError(f"{path}: expected single whitespace after maxval at byte {pos}")
    pos += 1
    need = width * height * 3
    payload = raw[pos : pos + need]
    if len(payload) < need:
        raise PpmFormatError(
            f"{path}: truncated pixel payload at byte {pos + len(payload)}: "
            f"need {need} bytes, have {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()
    return RgbImage(width, height, pixels)


# -- per-pixel color components ---------------------------------------------

def rgb_to_hsv_components(pixel):
    """(saturation, value, chroma) of one 8-bit RGB pixel, each in [0, 1].

    value = max channel / 255, chroma = (max - min) / 255, and
    saturation = chroma / value, defined as 0 for a black pixel.
    """
    r, g, b = (float(c) / 255.0 for c in pixel)
    v = max(r, g, b)
    c = v - min(r, g, b)
    s = c / v if v > 0 else 0.0
    return s, v, c


def _hsv_planes(img):
    scaled = img.pixels.astype(np.float64) / 255.0
    v = scaled.max(axis=2)
    c = v - scaled.min(axis=2)
    s = np.divide(c, v, out=np.zeros_like(c), where=v > 0)
    return s, v, c


def luminance_matrix(img):
    """Weighted luminance plane on the [0, 255] scale: 0.299 R + 0.587 G + 0.114 B."""
    px = img.pixels.astype(np.float64)
    return 0.299 * px[:, :, 0] + 0.587 * px[:, :, 1] + 0.114 * px[:, :, 2]


# -- spatial frequency ---------------------------------------------------------

def _check_extent(F):
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2:
        raise DegenerateImageError(f"luminance matrix must be 2-D, got shape {F.shape}")
    if F.shape[0] < 2 or F.shape[1] < 2:
        raise DegenerateImageError(
            f"spatial frequency needs at least 2x2 pixels, got {F.shape[0]}x{F.shape[1]}"
        )
    return F

# The frequency scores below sum squared neighbor differences over rows
# 1..I-1 and columns 1..J-1 only (the last row/column never contributes),
# yet normalize by the full I*J pixel count.  That truncated form is the
# contract; tests compare against a literal double loop.

def row_frequency(lum):
    """Horizontal-difference energy of a luminance matrix."""
    F = _check_extent(lum)
    i_ext, j_ext = F.shape
    d = F[: i_ext - 1, : j_ext - 1] - F[: i_ext - 1, 1:j_ext]
    return float(np.sqrt(np.sum(d * d) / (i_ext * j_ext)))


def column_frequency(lum):
    """Vertical-difference energy of a luminance matrix."""
    F = _check_extent(lum)
    i_ext, j_ext = F.shape
    d = F[: i_ext - 1, : j_ext - 1] - F[1:i_ext, : j_ext - 1]
    return float(np.sqrt(np.sum(d * d) / (i_ext * j_ext)))


def spatial_frequency(lum):
    """Combined clarity score: sqrt(row_frequency^2 + column_frequency^2)."""
    return float(np.sqrt(row_frequency(lum) ** 2 + column_frequency(lum) ** 2))


# -- feature vectors -----------------------------------------------------------

@dataclass(frozen=True)
class PosterFeatureVector:
    """The 13 poster features, ordered as in POSTER_FIELDS."""

    sat_mean: float
    sat_std: float
    val_mean: float
    val_std: float
    chroma_mean: float
    chroma_std: float
    sf: float
    r_mean: float
    r_std: float
    g_mean: float
    g_std: float
    b_mean: float
    b_std: float

    def as_tuple(self):
        return tuple(getattr(self, f.name) for f in fields(self))


def extract_poster_features(img):
    """Compute the 13-field feature vector for one poster.

    Color statistics are population moments over all pixels; the clarity
    score uses the luminance plane.  Images smaller than 2x2 are refused
    because the clarity score is undefined there.
    """
    if img.width < 2 or img.height < 2:
        raise DegenerateImageError(
            f"posters must be at least 2x2 pixels, got {img.width}x{img.height}"
        )
    s, v, c = _hsv_planes(img)
    px = img.pixels.astype(np.float64)
    return PosterFeatureVector(
        sat_mean=float(s.mean()),
        sat_std=float(s.std()),
        val_mean=float(v.mean()),
        val_std=float(v.std()),
        chroma_mean=float(c.mean()),
        chroma_std=float(c.std()),
        sf=spatial_frequency(luminance_matrix(img)),
        r_mean=float(px[:, :, 0].mean()),
        r_std=float(px[:, :, 0].std()),
        g_mean=float(px[:, :, 1].mean()),
        g_std=float(px[:, :, 1].std()),
        b_mean=float(px[:, :, 2].mean()),
        b_std=float(px[:, :, 2].std()),
    )


def aggregate_history_poster_features(feature_list):
    """Summarize a non-empty list of poster vectors into 26 numbers.

    Output layout: the 13 per-field means (POSTER_FIELDS order) followed
    by the 13 per-field population standard deviations.  Callers with an
    empty history substitute the all-zeros vector instead of calling this.
    """
    if not feature_list:
        raise ValueError("aggregate needs at least one poster vector; pad with zeros instead")
    m = np.array([f.as_tuple() for f in feature_list], dtype=np.float64)
    return np.concatenate([m.mean(axis=0), m.std(axis=0)])


# -- CSV round trip -------------------------------------------------------------

def _fmt9(x):
    return f"{x:.9g}"


def write_poster_features_csv(path, features_by_movie):
    """Write ``{movie_id: PosterFeatureVector}`` sorted by movie id."""
    lines = [POSTER_CSV_HEADER]
    for movie_id in sorted(features_by_movie):
        vec = features_by_movie[movie_id]
        lines.append(f"{movie_id}," + ",".join(_fmt9(x) for x in vec.as_tuple()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_poster_features_csv(path):
    """Inverse of write_poster_features_csv; header must match exactly."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != POSTER_CSV_HEADER:
        raise FeatureCsvError(
            f"{path}: bad poster feature header, expected {POSTER_CSV_HEADER!r}"
        )
    out = {}
    for n, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 1 + POSTER_WIDTH:
            raise FeatureCsvError(f"{path}: line {n}: expected {1 + POSTER_WIDTH} columns")
        try:
            movie_id = int(parts[0])
            values = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise FeatureCsvError(f"{path}: line {n}: {exc}") from None
        out[movie_id] = PosterFeatureVector(*values)
    return out
