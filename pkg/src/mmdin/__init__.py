"""Click/rating prediction models with attention-pooled history and
poster features, built on a small self-contained autodiff core."""

from .autograd import Tensor, bce_loss, sigmoid
from .metrics import EvalReport, ScoredSet, evaluate_scored, pr_curve_and_auc, roc_auc
from .models import (
    VARIANTS,
    ModelConfig,
    build_model,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .optim import Adam
from .pipeline import (
    Sample,
    build_profiles_and_samples,
    load_movies_csv,
    load_ratings_csv,
    read_samples,
    split_train_test,
    write_samples,
)
from .posters import PosterFeatureVector, extract_poster_features, load_ppm

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "EvalReport",
    "ModelConfig",
    "PosterFeatureVector",
    "Sample",
    "ScoredSet",
    "Tensor",
    "VARIANTS",
    "bce_loss",
    "build_model",
    "build_profiles_and_samples",
    "evaluate_scored",
    "extract_poster_features",
    "load_checkpoint",
    "load_movies_csv",
    "load_ppm",
    "load_ratings_csv",
    "pr_curve_and_auc",
    "predict",
    "read_samples",
    "roc_auc",
    "save_checkpoint",
    "sigmoid",
    "split_train_test",
    "train",
    "write_samples",
]
