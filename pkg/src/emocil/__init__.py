"""Exemplar-free class-incremental emotion classification with per-class Gaussian mixtures."""
from .config import FitConfig, class_seed
from .engine import MULTI_EXPERT, SINGLE_SPACE, EnsembleModel
from .gaussian import Covariance, GaussianComponent, log_density, log_sum_exp, regularize, softmax
from .gmm import GmmModel, aic_score, fit_em, gmm_log_likelihood, select_by_aic
from .modelio import load_model, save_model
from .schedule import TaskSchedule, load_task_schedule
from .vb import BgmmModel, BgmmPriors, bgmm_log_likelihood, fit_vb

__version__ = "0.1.0"

__all__ = [
    "BgmmModel",
    "BgmmPriors",
    "Covariance",
    "EnsembleModel",
    "FitConfig",
    "GaussianComponent",
    "GmmModel",
    "MULTI_EXPERT",
    "SINGLE_SPACE",
    "TaskSchedule",
    "aic_score",
    "bgmm_log_likelihood",
    "class_seed",
    "fit_em",
    "fit_vb",
    "gmm_log_likelihood",
    "load_model",
    "load_task_schedule",
    "log_density",
    "log_sum_exp",
    "regularize",
    "save_model",
    "select_by_aic",
    "softmax",
]
