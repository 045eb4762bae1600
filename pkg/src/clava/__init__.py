"""Multi-table relational synthesis with cluster-latent-guided Gaussian diffusion."""

from .cluster import augment_tables, fit_gmm
from .diffusion import make_schedule, sample, train_denoiser
from .guidance import guided_sample, train_classifier
from .metrics import evaluate
from .schema import load_database, write_database
from .synthesis import singlet_baseline, synthesize, train_all

__version__ = "0.1.0"

__all__ = [
    "augment_tables",
    "evaluate",
    "fit_gmm",
    "guided_sample",
    "load_database",
    "make_schedule",
    "sample",
    "singlet_baseline",
    "synthesize",
    "train_all",
    "train_classifier",
    "train_denoiser",
    "write_database",
]
