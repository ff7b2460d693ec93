"""Click/rating prediction models over the sample features.

Five variants share one parameter container and one forward entry point:

* ``MMDIN``       attention-pooled history, multi-head residual tower,
                  poster features appended when ``use_multimodal`` is on.
* ``DIN``         same attention pooling, single plain head (no residual
                  adds), never sees poster features.
* ``EmbeddingMLP`` mean-pooled history through a 3-layer MLP.
* ``NeuralCF``    user/movie embeddings only, small MLP.
* ``DeepFM``      EmbeddingMLP deep part + pairwise FM term + linear term,
                  summed before the sigmoid.

All dense weights start uniform in +-sqrt(6 / (fan_in + fan_out)), biases
at zero, embeddings normal(0, 0.01) with row 0 (the padding row) zeroed,
and PReLU slopes at 0.25.  Training keeps padding rows at zero by erasing
their gradients before each optimizer step.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .optim import Adam
from .pipeline import GENRE_VOCAB_SIZE, HISTORY_LEN, MAX_GENRES
from .posters import HISTORY_AGG_WIDTH, POSTER_WIDTH

VARIANTS = ("MMDIN", "DIN", "EmbeddingMLP", "NeuralCF", "DeepFM")

NUMERIC_WIDTH = 10                                # user stats 4 + flag + movie stats 4 + scene
MULTIMODAL_WIDTH = POSTER_WIDTH + HISTORY_AGG_WIDTH  # 39

_CKPT_MAGIC = b"MMDN1\n"


class ConfigError(ValueError):
    """Rejected model configuration."""


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or parameters)."""


class CheckpointError(RuntimeError):
    """Checkpoint unreadable or incompatible with its stated config."""


@dataclass
class ModelConfig:
    variant: str = "MMDIN"
    embedding_dim: int = 16
    num_heads: int = 4
    blocks_per_head: int = 2
    head_width: int = 64
    attention_hidden: int = 32
    use_multimodal: bool = True
    num_buckets_users: int = 2048
    num_buckets_movies: int = 2048
    learning_rate: float = 1e-3
    batch_size: int = 512
    epochs: int = 5
    seed: int = 42

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"unknown variant {self.variant!r}; choose one of {', '.join(VARIANTS)}"
            )
        for name in ("embedding_dim", "num_heads", "head_width", "attention_hidden",
                     "num_buckets_users", "num_buckets_movies", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.blocks_per_head < 0:
            raise ConfigError(f"blocks_per_head must be >= 0, got {self.blocks_per_head}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        return self


@dataclass
class SampleArrays:
    """Column-major view of a sample list, ready for batch slicing."""

    labels: np.ndarray       # (N,) float64 in {0, 1}
    user_ids: np.ndarray     # (N,) int64
    movie_ids: np.ndarray    # (N,) int64
    cand_genres: np.ndarray  # (N, MAX_GENRES) int64
    hist_ids: np.ndarray     # (N, HISTORY_LEN) int64
    hist_genres: np.ndarray  # (N, HISTORY_LEN * MAX_GENRES) int64
    numeric: np.ndarray      # (N, NUMERIC_WIDTH) float64
    poster: np.ndarray       # (N, MULTIMODAL_WIDTH) float64

    def __len__(self):
        return self.labels.shape[0]

    @classmethod
    def from_samples(cls, samples):
        n = len(samples)
        labels = np.empty(n)
        user_ids = np.empty(n, dtype=np.int64)
        movie_ids = np.empty(n, dtype=np.int64)
        cand_genres = np.empty((n, MAX_GENRES), dtype=np.int64)
        hist_ids = np.empty((n, HISTORY_LEN), dtype=np.int64)
        hist_genres = np.empty((n, HISTORY_LEN * MAX_GENRES), dtype=np.int64)
        numeric = np.empty((n, NUMERIC_WIDTH))
        poster = np.empty((n, MULTIMODAL_WIDTH))
        for i, s in enumerate(samples):
            labels[i] = s.label
            user_ids[i] = s.user_id
            movie_ids[i] = s.movie_id
            cand_genres[i] = s.candidate_genres
            hist_ids[i] = s.history_movie_ids
            hist_genres[i] = s.history_genres
            numeric[i, 0:4] = s.user_stats
            numeric[i, 4] = s.user_has_history
            numeric[i, 5:9] = s.movie_stats
            numeric[i, 9] = s.scene
            poster[i, :POSTER_WIDTH] = s.candidate_poster
            poster[i, POSTER_WIDTH:] = s.history_poster_agg
        return cls(labels, user_ids, movie_ids, cand_genres, hist_ids,
                   hist_genres, numeric, poster)

    def take(self, idx):
        return SampleArrays(
            self.labels[idx], self.user_ids[idx], self.movie_ids[idx],
            self.cand_genres[idx], self.hist_ids[idx], self.hist_genres[idx],
            self.numeric[idx], self.poster[idx],
        )


def _as_arrays(samples):
    if isinstance(samples, SampleArrays):
        return samples
    return SampleArrays.from_samples(samples)


# -- construction --------------------------------------------------------------

def _dense(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _embedding(rng, vocab, dim):
    table = rng.normal(0.0, 0.01, size=(vocab, dim))
    table[0, :] = 0.0  # padding row stays zero
    return table


class MmdinModel:
    """Parameter container plus forward pass for one variant."""

    def __init__(self, config):
        config.validate()
        self.config = config
        self.params = {}
        self._embedding_names = []
        # Identity until fit_normalizer runs; stored with checkpoints.
        self.numeric_mean = np.zeros(NUMERIC_WIDTH)
        self.numeric_std = np.ones(NUMERIC_WIDTH)
        self.poster_mean = np.zeros(MULTIMODAL_WIDTH)
        self.poster_std = np.ones(MULTIMODAL_WIDTH)
        self._init_params(np.random.default_rng(config.seed))

    # parameter creation order is fixed; same seed -> identical model
    def _init_params(self, rng):
        cfg = self.config
        d = cfg.embedding_dim

        def param(name, data):
            self.params[name] = Tensor(data, requires_grad=True)

        param("emb_user", _embedding(rng, cfg.num_buckets_users + 1, d))
        param("emb_movie", _embedding(rng, cfg.num_buckets_movies + 1, d))
        param("emb_genre", _embedding(rng, GENRE_VOCAB_SIZE, d))
        self._embedding_names = ["emb_user", "emb_movie", "emb_genre"]

        if cfg.variant == "NeuralCF":
            param("ncf1_w", _dense(rng, 2 * d, cfg.head_width))
            param("ncf1_b", np.zeros(cfg.head_width))
            param("ncf1_alpha", np.full(1, 0.25))
            param("ncf2_w", _dense(rng, cfg.head_width, 1))
            param("ncf2_b", np.zeros(1))
            return

        feat = self.feature_width()
        if cfg.variant in ("MMDIN", "DIN"):
            att_in = 2 * d + d * d
            param("att_w1", _dense(rng, att_in, cfg.attention_hidden))
            param("att_b1", np.zeros(cfg.attention_hidden))
            param("att_alpha", np.full(1, 0.25))
            param("att_w2", _dense(rng, cfg.attention_hidden, 1))
            param("att_b2", np.zeros(1))
            param("compress_w", _dense(rng, feat, cfg.head_width))
            param("compress_b", np.zeros(cfg.head_width))
            param("compress_alpha", np.full(1, 0.25))
            for h in range(self.effective_heads()):
                for b in range(cfg.blocks_per_head):
                    param(f"head{h}_block{b}_w", _dense(rng, cfg.head_width, cfg.head_width))
                    param(f"head{h}_block{b}_b", np.zeros(cfg.head_width))
                    param(f"head{h}_block{b}_alpha", np.full(1, 0.25))
            param("out_w", _dense(rng, cfg.head_width, 1))
            param("out_b", np.zeros(1))
            return

        # EmbeddingMLP deep stack, shared by DeepFM
        h1 = cfg.head_width
        h2 = max(cfg.head_width // 2, 1)
        param("mlp1_w", _dense(rng, feat, h1))
        param("mlp1_b", np.zeros(h1))
        param("mlp1_alpha", np.full(1, 0.25))
        param("mlp2_w", _dense(rng, h1, h2))
        param("mlp2_b", np.zeros(h2))
        param("mlp2_alpha", np.full(1, 0.25))
        param("mlp3_w", _dense(rng, h2, 1))
        param("mlp3_b", np.zeros(1))
        if cfg.variant == "DeepFM":
            param("lin_w", _dense(rng, feat, 1))
            param("lin_b", np.zeros(1))

    def effective_heads(self):
        return self.config.num_heads if self.config.variant == "MMDIN" else 1

    def multimodal_active(self):
        return self.config.variant == "MMDIN" and self.config.use_multimodal

    def feature_width(self):
        """Width of the concatenated tower input for this variant."""
        d = self.config.embedding_dim
        if self.config.variant == "NeuralCF":
            return 2 * d
        width = 5 * d + NUMERIC_WIDTH
        if self.multimodal_active():
            width += MULTIMODAL_WIDTH
        return width

    def parameters(self):
        return list(self.params.values())

    def parameter_count(self):
        return int(sum(p.data.size for p in self.params.values()))

    def zero_padding_grads(self):
        """Erase gradient flow into embedding padding rows (index 0)."""
        for name in self._embedding_names:
            g = self.params[name].grad
            if g is not None:
                g[0, :] = 0.0

    # -- feature normalization -----------------------------------------------
    def fit_normalizer(self, arrays):
        """Store train-set mean/std for the continuous feature blocks."""
        arrays = _as_arrays(arrays)
        if len(arrays) == 0:
            raise TrainingError("cannot fit the feature normalizer on an empty set")

        def moments(block):
            mean = block.mean(axis=0)
            std = block.std(axis=0)
            std[std < 1e-12] = 1.0
            return mean, std

        self.numeric_mean, self.numeric_std = moments(arrays.numeric)
        self.poster_mean, self.poster_std = moments(arrays.poster)

    # -- forward -----------------------------------------------------------------
    def forward(self, arrays):
        """Probability of a positive label for each row -> Tensor (B,)."""
        arrays = _as_arrays(arrays)
        b = len(arrays)
        if b == 0:
            raise ag.DimensionError("forward needs a non-empty batch")
        cfg = self.config
        d = cfg.embedding_dim
        p = self.params

        user_e = ag.embedding_lookup(p["emb_user"], arrays.user_ids)
        movie_e = ag.embedding_lookup(p["emb_movie"], arrays.movie_ids)

        if cfg.variant == "NeuralCF":
            x = ag.concat([user_e, movie_e], axis=1)
            hid = ag.prelu(ag.add(ag.matmul(x, p["ncf1_w"]), p["ncf1_b"]), p["ncf1_alpha"])
            logit = ag.add(ag.matmul(hid, p["ncf2_w"]), p["ncf2_b"])
            return ag.reshape(ag.sigmoid(logit), (b,))

        cand_ge = ag.tensor_mean(ag.embedding_lookup(p["emb_genre"], arrays.cand_genres), axis=1)
        hist_ge = ag.tensor_mean(ag.embedding_lookup(p["emb_genre"], arrays.hist_genres), axis=1)
        hist_e = ag.embedding_lookup(p["emb_movie"], arrays.hist_ids)

        if cfg.variant in ("MMDIN", "DIN"):
            pooled = self._attention_pooled(hist_e, movie_e, b, d)
        else:
            pooled = ag.tensor_mean(hist_e, axis=1)

        numeric = Tensor((arrays.numeric - self.numeric_mean) / self.numeric_std)
        feats = [user_e, movie_e, cand_ge, hist_ge, pooled, numeric]
        if self.multimodal_active():
            feats.append(Tensor((arrays.poster - self.poster_mean) / self.poster_std))
        x = ag.concat(feats, axis=1)
        if x.shape[1] != self.feature_width():
            raise ag.DimensionError(
                f"tower input width {x.shape[1]} != expected {self.feature_width()}"
            )

        if cfg.variant in ("MMDIN", "DIN"):
            logit = self._tower(x, residual=cfg.variant == "MMDIN")
        elif cfg.variant == "EmbeddingMLP":
            logit = self._deep_stack(x)
        else:  # DeepFM
            deep = self._deep_stack(x)
            fm = fm_pairwise([user_e, movie_e, cand_ge, pooled])
            linear = ag.add(ag.matmul(x, p["lin_w"]), p["lin_b"])
            logit = ag.add(ag.add(deep, fm), linear)
        return ag.reshape(ag.sigmoid(logit), (b,))

    def _attention_pooled(self, hist_e, cand_e, b, d):
        p = self.params
        k = HISTORY_LEN
        flat_h = ag.reshape(hist_e, (b * k, d))
        flat_c = ag.reshape(ag.repeat_middle(cand_e, k), (b * k, d))
        inter = ag.reshape(ag.batched_outer(flat_h, flat_c), (b * k, d * d))
        a_in = ag.concat([flat_h, flat_c, inter], axis=1)
        hid = ag.prelu(ag.add(ag.matmul(a_in, p["att_w1"]), p["att_b1"]), p["att_alpha"])
        raw = ag.add(ag.matmul(hid, p["att_w2"]), p["att_b2"])
        weights = ag.reshape(raw, (b, k))
        return ag.weighted_sum_pool(hist_e, weights)

    def _tower(self, x, residual):
        p = self.params
        x = ag.prelu(ag.add(ag.matmul(x, p["compress_w"]), p["compress_b"]), p["compress_alpha"])
        total = None
        for h in range(self.effective_heads()):
            xh = x
            for blk in range(self.config.blocks_per_head):
                t = ag.prelu(
                    ag.add(ag.matmul(xh, p[f"head{h}_block{blk}_w"]), p[f"head{h}_block{blk}_b"]),
                    p[f"head{h}_block{blk}_alpha"],
                )
                xh = ag.add(xh, t) if residual else t
            total = xh if total is None else ag.add(total, xh)
        return ag.add(ag.matmul(total, p["out_w"]), p["out_b"])

    def _deep_stack(self, x):
        p = self.params
        x = ag.prelu(ag.add(ag.matmul(x, p["mlp1_w"]), p["mlp1_b"]), p["mlp1_alpha"])
        x = ag.prelu(ag.add(ag.matmul(x, p["mlp2_w"]), p["mlp2_b"]), p["mlp2_alpha"])
        return ag.add(ag.matmul(x, p["mlp3_w"]), p["mlp3_b"])


def build_model(config, seed=None):
    """Construct a model; an explicit ``seed`` overrides ``config.seed``."""
    if seed is not None:
        config = replace(config, seed=seed)
    return MmdinModel(config)


def attention_weights(history_embs, candidate_emb, params):
    """Unnormalized relevance weight of each history item to the candidate.

    ``history_embs`` is (K, d), ``candidate_emb`` is (d,); ``params`` is a
    mapping with att_w1 / att_b1 / att_alpha / att_w2 / att_b2 tensors.
    The per-item input is [item, candidate, flattened outer product]; no
    softmax is applied, so weights may be negative and do not sum to 1.
    """
    if history_embs.ndim != 2 or candidate_emb.ndim != 1:
        raise ag.DimensionError(
            f"expected (K,d) history and (d,) candidate, got "
            f"{history_embs.shape} and {candidate_emb.shape}"
        )
    k, d = history_embs.shape
    if candidate_emb.shape[0] != d:
        raise ag.DimensionError(
            f"candidate width {candidate_emb.shape[0]} != history width {d}"
        )
    cand = ag.tile_to_rows(candidate_emb, k)
    inter = ag.reshape(ag.batched_outer(history_embs, cand), (k, d * d))
    a_in = ag.concat([history_embs, cand, inter], axis=1)
    hid = ag.prelu(ag.add(ag.matmul(a_in, params["att_w1"]), params["att_b1"]),
                   params["att_alpha"])
    raw = ag.add(ag.matmul(hid, params["att_w2"]), params["att_b2"])
    return ag.reshape(raw, (k,))


def fm_pairwise(field_embs):
    """Factorization-machine pairwise term: sum over field pairs of dot products.

    Input: list of (B, d) tensors. Output: (B, 1). Uses the identity
    sum_{i<j} <e_i, e_j> = 0.5 * ((sum e)^2 - sum e^2) summed over dims.
    """
    if len(field_embs) < 2:
        raise ag.DimensionError("fm_pairwise needs at least two fields")
    total = field_embs[0]
    squares = ag.mul(field_embs[0], field_embs[0])
    for e in field_embs[1:]:
        total = ag.add(total, e)
        squares = ag.add(squares, ag.mul(e, e))
    diff = ag.sub(ag.mul(total, total), squares)
    return ag.tensor_sum(ag.mul(diff, 0.5), axis=1, keepdims=True)


# -- training and inference ------------------------------------------------------

@dataclass
class TrainingLog:
    rows: list  # (epoch, mean_loss, wall_ms)

    def write_csv(self, path):
        lines = ["epoch,mean_loss,wall_ms"]
        for epoch, mean_loss, wall_ms in self.rows:
            lines.append(f"{epoch},{mean_loss:.9g},{wall_ms:.3f}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def train(model, samples):
    """Fit the model in place; returns the per-epoch TrainingLog.

    Batch order comes from a generator seeded with ``config.seed``, so a
    rerun with the same inputs reproduces the loss curve exactly.  A
    non-finite loss or parameter aborts with TrainingError.
    """
    arrays = _as_arrays(samples)
    if len(arrays) == 0:
        raise TrainingError("training needs at least one sample")
    cfg = model.config
    model.fit_normalizer(arrays)
    optimizer = Adam(model.parameters(), learning_rate=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    n = len(arrays)
    rows = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        loss_sum = 0.0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            batch = arrays.take(idx)
            optimizer.zero_grad()
            probs = model.forward(batch)
            loss = ag.bce_loss(probs, batch.labels)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            loss.backward()
            model.zero_padding_grads()
            optimizer.step()
            loss_sum += value * len(idx)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        rows.append((epoch, loss_sum / n, wall_ms))
    for name, p in model.params.items():
        if not np.all(np.isfinite(p.data)):
            raise TrainingError(f"parameter {name} became non-finite during training")
    return TrainingLog(rows)


def predict(model, samples, batch_size=None):
    """Score samples without touching parameters -> list of (score, label)."""
    arrays = _as_arrays(samples)
    bs = batch_size or model.config.batch_size
    scores = np.empty(len(arrays))
    for start in range(0, len(arrays), bs):
        idx = np.arange(start, min(start + bs, len(arrays)))
        scores[idx] = model.forward(arrays.take(idx)).data
    return list(zip(scores.tolist(), arrays.labels.astype(int).tolist()))


# -- checkpoint io -----------------------------------------------------------------

_NORM_BLOCKS = ("norm/numeric_mean", "norm/numeric_std", "norm/poster_mean", "norm/poster_std")


def save_checkpoint(model, path):
    """Flat binary dump: magic, config JSON, then named float64 blocks.

    Blocks are sorted by name and written raw (little-endian), so equal
    models produce byte-identical files and a load reproduces predictions
    bit-exactly.
    """
    blocks = {name: p.data for name, p in model.params.items()}
    blocks["norm/numeric_mean"] = model.numeric_mean
    blocks["norm/numeric_std"] = model.numeric_std
    blocks["norm/poster_mean"] = model.poster_mean
    blocks["norm/poster_std"] = model.poster_std
    config_bytes = json.dumps(asdict(model.config), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(config_bytes)))
        fh.write(config_bytes)
        fh.write(struct.pack("<I", len(blocks)))
        for name in sorted(blocks):
            data = np.ascontiguousarray(blocks[name], dtype="<f8")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path):
    """Rebuild a model from ``save_checkpoint`` output."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(_CKPT_MAGIC):
        raise CheckpointError(f"{path}: not a model checkpoint (bad magic)")
    pos = len(_CKPT_MAGIC)

    def unpack(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint at byte {pos}")
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    (config_len,) = unpack("<I")
    try:
        config_dict = json.loads(raw[pos:pos + config_len].decode("utf-8"))
        config = ModelConfig(**config_dict)
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad config block: {exc}") from None
    pos += config_len

    (n_blocks,) = unpack("<I")
    blocks = {}
    for _ in range(n_blocks):
        (name_len,) = unpack("<H")
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = unpack("<B")
        shape = unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if pos + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated block {name!r} at byte {pos}")
        blocks[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += nbytes

    try:
        model = MmdinModel(config)
    except ConfigError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    expected = set(model.params) | set(_NORM_BLOCKS)
    if set(blocks) != expected:
        missing = sorted(expected - set(blocks))
        extra = sorted(set(blocks) - expected)
        raise CheckpointError(
            f"{path}: parameter blocks do not match the config "
            f"(missing {missing}, unexpected {extra})"
        )
    for name, p in model.params.items():
        if blocks[name].shape != p.data.shape:
            raise CheckpointError(
                f"{path}: block {name!r} has shape {blocks[name].shape}, "
                f"config implies {p.data.shape}"
            )
        p.data = blocks[name]
    model.numeric_mean = blocks["norm/numeric_mean"]
    model.numeric_std = blocks["norm/numeric_std"]
    model.poster_mean = blocks["norm/poster_mean"]
    model.poster_std = blocks["norm/poster_std"]
    return model
