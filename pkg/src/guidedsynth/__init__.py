"""Classifier-guided diffusion synthesis on a synthetic phone-conditioned speech domain."""

__version__ = "0.1.0"

from .classifier import FrameWeights, PhoneClassifier, frame_logprob, guidance_gradient, train_classifier
from .data import (
    PhoneDictionary,
    PhoneInventory,
    build_duration_table,
    build_phone_dictionary,
    generate_corpus,
    length_regulate,
    predict_durations,
)
from .evaluation import EvalReport, frame_error_rate, oracle_classify
from .sampler import GuidanceConfig, Trajectory, guided_step, reverse_ode_step, reverse_sde_step, sample_prior, synthesize
from .schedule import NoiseSchedule, beta_at, beta_integral, forward_sample, moments_at, true_score_gaussian
from .score_model import ScoreNet, dsm_loss, score_forward, train_score

__all__ = [
    "EvalReport",
    "FrameWeights",
    "GuidanceConfig",
    "NoiseSchedule",
    "PhoneClassifier",
    "PhoneDictionary",
    "PhoneInventory",
    "ScoreNet",
    "Trajectory",
    "beta_at",
    "beta_integral",
    "build_duration_table",
    "build_phone_dictionary",
    "dsm_loss",
    "forward_sample",
    "frame_error_rate",
    "frame_logprob",
    "generate_corpus",
    "guidance_gradient",
    "guided_step",
    "length_regulate",
    "moments_at",
    "oracle_classify",
    "predict_durations",
    "reverse_ode_step",
    "reverse_sde_step",
    "sample_prior",
    "score_forward",
    "synthesize",
    "train_classifier",
    "train_score",
    "true_score_gaussian",
]
