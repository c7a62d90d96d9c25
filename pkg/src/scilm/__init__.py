"""Class-balanced zero-shot classification with semantics-guided prototypes."""

from .data import Dataset, SyntheticSpec, class_stats, load_dataset, make_synthetic_longtail, save_dataset
from .evaluation import gzsc_metrics, harmonic_mean, predict, tzsc_accuracy
from .loss import LossBreakdown, total_loss
from .model import ModelConfig, SenParams, SharedParams, build_prototypes, init_params, sen_forward
from .sampler import make_rng, sample_balanced_batch
from .train import gradcheck, train, train_baseline_dem

__version__ = "0.1.0"
