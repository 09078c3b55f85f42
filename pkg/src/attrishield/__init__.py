"""Defending user public data against attribute inference.

Phase I (``evade``) finds a minimum-L0 evasion noise for every attribute
value; Phase II (``mechanism``) picks one of them at random so that the
defender classifier's output follows a target distribution under an
expected utility-loss budget.
"""
from .core import (
    Dataset,
    NoiseTypePolicy,
    RatingGrid,
    SeedSpec,
    apply_noise,
    kl_divergence,
    l0_norm,
    l2_norm,
    read_dataset,
    split_overlap,
    synth_generate,
    write_dataset,
)
from .classify import LinearSoftmaxModel, MlpModel, TrainConfig, accuracy, predict, train_linear, train_mlp
from .evade import PandaConfig, find_all_noises, fgsm, jsma, panda
from .mechanism import defend_user, solve_mechanism, target_empirical, target_uniform

__version__ = "0.1.0"

__all__ = [
    "Dataset", "NoiseTypePolicy", "RatingGrid", "SeedSpec", "apply_noise", "kl_divergence", "l0_norm",
    "l2_norm", "read_dataset", "split_overlap", "synth_generate", "write_dataset", "LinearSoftmaxModel",
    "MlpModel", "TrainConfig", "accuracy", "predict", "train_linear", "train_mlp", "PandaConfig",
    "find_all_noises", "fgsm", "jsma", "panda", "defend_user", "solve_mechanism", "target_empirical",
    "target_uniform",
]
