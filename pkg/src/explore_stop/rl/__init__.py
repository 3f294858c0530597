"""Model-free TD training of per-timestep value networks."""

from .checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from .net import (NetLayout, ValueNet, backward, default_layouts, feature_dim, features, forward,
                  init_valuenet, policy_from_value, value)
from .train import (Adam, LearningCurve, Problem, TrainConfig, evaluate_net, fit_normalization,
                    sweep, td_loss, td_residual, train)

__all__ = [
    "Adam", "FORMAT_VERSION", "LearningCurve", "NetLayout", "Problem", "TrainConfig", "ValueNet",
    "backward", "default_layouts", "evaluate_net", "feature_dim", "features", "fit_normalization",
    "forward", "init_valuenet", "load_checkpoint", "policy_from_value", "save_checkpoint", "sweep",
    "td_loss", "td_residual", "train", "value",
]
