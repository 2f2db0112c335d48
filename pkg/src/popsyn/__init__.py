"""Synthetic travel-survey populations from tabular GAN and VAE models."""
from popsyn.codec import build_layout, decode, encode
from popsyn.eval_stats import ExperimentPlan, eval_vector, run_experiment
from popsyn.generators import TrainConfig, init_model, synthesize, train_model
from popsyn.survey_data import SurveySchema, SurveyTable, generate_surrogate, load_csv

__version__ = "0.1.0"

__all__ = [
    "ExperimentPlan", "SurveySchema", "SurveyTable", "TrainConfig",
    "build_layout", "decode", "encode", "eval_vector", "generate_surrogate",
    "init_model", "load_csv", "run_experiment", "synthesize", "train_model",
]
