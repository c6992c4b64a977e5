"""Dirichlet evidential heads trained in two stages for worst-group robustness."""

from .bounds import GroupRiskProfile, empirical_bound_check, pac_bayes_bound, reweighted_risk
from .data import Dataset, SpuriousSpec, generate_synthetic, load_csv, load_mnist_idx, make_colored_mnist, split_calibration
from .evaluation import GroupMetrics, evaluate, report
from .experiments import PRESETS, Splits, build_splits, run_pipeline
from .kernels import BACKEND
from .losses import AnnealSchedule, calib_weight, elbo_gap_check, lambda_at, loss_stage1, loss_stage2
from .mathcore import DirichletParams, digamma, expected_probs, kl_to_uniform, lgamma, trigamma, uncertainty
from .model import EvidentialHead, forward, forward_batch, grad_stage1, grad_stage2, load_checkpoint, save_checkpoint
from .training import TrainConfig, calibrate, run_stage1, run_stage2, score_calibration, select_model

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AnnealSchedule",
    "Dataset",
    "DirichletParams",
    "EvidentialHead",
    "GroupMetrics",
    "GroupRiskProfile",
    "PRESETS",
    "Splits",
    "SpuriousSpec",
    "TrainConfig",
    "build_splits",
    "calib_weight",
    "calibrate",
    "digamma",
    "elbo_gap_check",
    "empirical_bound_check",
    "evaluate",
    "expected_probs",
    "forward",
    "forward_batch",
    "generate_synthetic",
    "grad_stage1",
    "grad_stage2",
    "kl_to_uniform",
    "lambda_at",
    "lgamma",
    "load_checkpoint",
    "load_csv",
    "load_mnist_idx",
    "loss_stage1",
    "loss_stage2",
    "make_colored_mnist",
    "pac_bayes_bound",
    "report",
    "reweighted_risk",
    "run_pipeline",
    "run_stage1",
    "run_stage2",
    "save_checkpoint",
    "score_calibration",
    "select_model",
    "split_calibration",
    "trigamma",
    "uncertainty",
]
