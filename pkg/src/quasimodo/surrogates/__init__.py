"""Per-control one-step surrogate models and their relaxed rollouts."""
from .base import InterpolatedEnsemble, OdeEnsemble, multi_step_predict, one_hot, relaxed_rollout
from .edmd import DictionarySpec, EdmdModel, edmd_fit, edmd_predict, monomial_features
from .esn import (AugmentedEsnModel, EsnModel, Reservoir, esn_fit, esn_fit_augmented,
                  esn_init, esn_predict, spectral_radius)
from .io import load_model, model_from_dict, model_to_dict, save_model
from .pod import PerturbedModel, PodModel, pod_fit, pod_predict

__all__ = [
    "AugmentedEsnModel", "DictionarySpec", "EdmdModel", "EsnModel", "InterpolatedEnsemble",
    "OdeEnsemble", "PerturbedModel", "PodModel", "Reservoir", "edmd_fit", "edmd_predict",
    "esn_fit", "esn_fit_augmented", "esn_init", "esn_predict", "load_model", "model_from_dict",
    "model_to_dict", "monomial_features", "multi_step_predict", "one_hot", "pod_fit",
    "pod_predict", "relaxed_rollout", "save_model", "spectral_radius",
]
