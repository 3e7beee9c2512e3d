"""Distribution regression on bags of samples.

Learn a real or binary label per bag of i.i.d. points via kernel mean
embeddings, with label uncertainty that grows as bags shrink: small bags give
noisy embeddings, a conjugate shrinkage layer turns the bag size into a
posterior over the true embedding, and the regression weights propagate that
posterior into the predictive distribution (optionally integrating over the
weights themselves by HMC).
"""

from .errors import DataFormatError, InvalidArgumentError, NumericalError
from .kernels import (
    KernelParams,
    LandmarkSet,
    build_grams,
    conv_kernel,
    kmeans_landmarks,
    median_heuristic,
    rbf_kernel,
    sample_landmarks,
)
from .embeddings import (
    Bag,
    BagDataset,
    EmbeddingPosterior,
    EmbeddingStats,
    NoiseModel,
    embed_dataset,
    empirical_embedding,
    frequentist_shrinkage,
    pooled_covariance,
    shrinkage_posterior,
)
from .predictive import (
    PredictiveDistribution,
    bernoulli_predictive,
    gaussian_predictive,
    grid_predictive,
    mixture_predictive,
    point_predictive,
)
from .datagen import (
    GammaConfig,
    bayes_optimal_predict,
    gamma_generate,
    load_splits,
    read_dataset,
    write_dataset,
    write_splits,
)
from .models import (
    BDRConfig,
    FitConfig,
    RegressionModel,
    ShrinkFitConfig,
    load_model,
    predict_bag,
    predict_dataset,
    save_model,
)
from .evaluation import (
    MetricReport,
    aggregate,
    classification_error,
    dump_predictions,
    mse,
    nll,
    rmse,
)
from .experiment import SeedContext, TrainSettings, evaluate_model, tune_and_fit

__version__ = "0.1.0"

__all__ = [
    "DataFormatError",
    "InvalidArgumentError",
    "NumericalError",
    "KernelParams",
    "LandmarkSet",
    "build_grams",
    "conv_kernel",
    "kmeans_landmarks",
    "median_heuristic",
    "rbf_kernel",
    "sample_landmarks",
    "Bag",
    "BagDataset",
    "EmbeddingPosterior",
    "EmbeddingStats",
    "NoiseModel",
    "embed_dataset",
    "empirical_embedding",
    "frequentist_shrinkage",
    "pooled_covariance",
    "shrinkage_posterior",
    "PredictiveDistribution",
    "bernoulli_predictive",
    "gaussian_predictive",
    "grid_predictive",
    "mixture_predictive",
    "point_predictive",
    "GammaConfig",
    "bayes_optimal_predict",
    "gamma_generate",
    "load_splits",
    "read_dataset",
    "write_dataset",
    "write_splits",
    "BDRConfig",
    "FitConfig",
    "RegressionModel",
    "ShrinkFitConfig",
    "load_model",
    "predict_bag",
    "predict_dataset",
    "save_model",
    "MetricReport",
    "aggregate",
    "classification_error",
    "dump_predictions",
    "mse",
    "nll",
    "rmse",
    "SeedContext",
    "TrainSettings",
    "evaluate_model",
    "tune_and_fit",
    "__version__",
]
