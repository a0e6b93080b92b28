"""Learned sensitivity surrogates for closed-loop dynamical systems.

Simulate benchmark systems, harvest forward/inverse sensitivity records from
trajectory corpora, train feedforward approximators, and use them to steer
trajectories to targets, predict neighborhoods, and falsify safety boxes.
"""

__version__ = "0.1.0"

from .data import (
    Dataset,
    SensRecord,
    dataset_to_csv,
    generate_corpus,
    load_dataset,
    make_records,
    save_dataset,
    split,
)
from .errors import (
    ConfigError,
    DimensionError,
    DivergenceError,
    DomainWarning,
    NotFoundError,
    ParseError,
    RangeError,
    TrainingError,
    TrajsensError,
    UnsupportedError,
)
from .explore import (
    PredictedTrajectory,
    ReachResult,
    predict_batch,
    predict_trajectory,
    random_vector_eval,
    reach_target,
    reach_target_interval,
    reach_targets,
)
from .falsify import (
    FalsifyReport,
    SafetySpec,
    box_distance,
    falsify_forward_density,
    falsify_inverse,
    falsify_random_baseline,
    inverse_density_map,
)
from .net import Mlp, TrainConfig, evaluate, forward, gradient, load_model, make_mlp, save_model, train
from .sim import (
    OraclePredictor,
    SensOracle,
    Trajectory,
    empirical_sensitivity,
    expm,
    linear_sensitivity,
    oracle_for,
    simulate,
    simulate_backward,
)
from .systems import (
    ControllerSpec,
    ModeSpec,
    SystemSpec,
    available_systems,
    builtin_system,
    controller_forward,
    eval_field,
    load_controller,
)
