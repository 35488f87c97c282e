from .conditioning import ObservationSpec, build_condition, condition_for
from .flow import ActionScaler, SampleConfig, TrainConfig, TrainingSet, fm_loss, integrate_flow, sample_actions, train
from .network import Adam, PolicyNet, WeightsFormatError, dump_weights, load_weights
from .policy import Policy
from .sampler import DiffusionEdgeSampler, diffusion_edge_sampler
from .windows import MapMismatchError, training_set

__all__ = [
    "ActionScaler", "Adam", "DiffusionEdgeSampler", "ObservationSpec", "Policy", "PolicyNet", "SampleConfig",
    "TrainConfig", "TrainingSet", "WeightsFormatError", "build_condition", "condition_for",
    "diffusion_edge_sampler", "dump_weights", "fm_loss", "integrate_flow", "load_weights", "MapMismatchError", "training_set",
    "sample_actions", "train",
]
