"""Exact queueing analysis of coded transmissions over binary channels with memory."""

from .channel import ChannelModel, from_fading, joint_error_distribution, occupancy_distribution
from .coding import CodeSpec, FailureProfile, Scheme, failure_profile
from .errors import (
    CodedQueueError,
    ConfigurationError,
    InstabilityError,
    NumericalError,
    ParameterError,
    PrecisionError,
    SolverError,
    UnsupportedOperationError,
)
from .optimizer import SweepSpec, find_min_nu, run_sweep, scenario_presets
from .queueing import build_chain, service_rate, solve_g, solve_stationary, tail_probability
from .simulator import SimConfig, first_passage_check, simulate
from .traffic import MMPP, TrafficModel, arrivals

__version__ = "0.1.0"
