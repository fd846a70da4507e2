"""Gradient-guided asymmetric context windows for reverberant frame classification."""
from .acoustics import ImpulseResponse, RoomSpec, Signal, exp_decay_ir, image_method_ir, xcorr
from .compose import SearchConfig, SearchResult, autocw_search, compose_window, grid_search
from .features import ContextWindowSpec, FeatureConfig, FrameMatrix, extract_features, rho_cw
from .nn import MlpConfig, MlpModel, TrainConfig, init_model, train_sgd
from .probe import GradientProfile, gradient_profile
from .synthdata import Condition, CorpusConfig, contaminate, gen_corpus

__version__ = "0.1.0"

__all__ = [
    "Condition", "ContextWindowSpec", "CorpusConfig", "FeatureConfig", "FrameMatrix",
    "GradientProfile", "ImpulseResponse", "MlpConfig", "MlpModel", "RoomSpec", "SearchConfig",
    "SearchResult", "Signal", "TrainConfig", "autocw_search", "compose_window", "contaminate",
    "exp_decay_ir", "extract_features", "gen_corpus", "gradient_profile", "grid_search",
    "image_method_ir", "init_model", "rho_cw", "train_sgd", "xcorr",
]
