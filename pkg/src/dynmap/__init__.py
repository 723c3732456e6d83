"""Cooperative dynamic maps over a slotted vehicular broadcast channel.

Each vehicle tracks itself with an unscented Kalman filter (CTRA motion model)
and broadcasts its estimate either periodically (PB) or when a purely
predictive replica of that estimate drifts past an error threshold (ETB).
Channel load is kept in check either by channel-busy-ratio feedback (CSCC,
LIMERIC-style) or by a neighbour-count model of hidden-terminal collisions
(NACC).
"""

__version__ = "0.1.0"

from .config import ConfigError, SimConfig, load_config
from .congestion import (ErrorPeriodMap, build_error_period_map, mean_phi, nacc_rho, p_coll, phi,
                         steady_state, transition_matrix)
from .engine import calibrate_error_distribution, make_trace, monte_carlo, run_seed, run_sim
from .metrics import RichardsParams, RunMetrics, richards_weight
from .mobility import GridMapSpec, TraceSet, load_fcd_trace, synth_trips
from .model import EuclideanGraph, VehicleState, build_graph
from .motion import NoiseModel, StateEstimate, UKFParams, ctra_predict, ukf_predict, ukf_update

__all__ = [
    "ConfigError", "SimConfig", "load_config",
    "ErrorPeriodMap", "build_error_period_map", "mean_phi", "nacc_rho", "p_coll", "phi", "steady_state",
    "transition_matrix",
    "calibrate_error_distribution", "make_trace", "monte_carlo", "run_seed", "run_sim",
    "RichardsParams", "RunMetrics", "richards_weight",
    "GridMapSpec", "TraceSet", "load_fcd_trace", "synth_trips",
    "EuclideanGraph", "VehicleState", "build_graph",
    "NoiseModel", "StateEstimate", "UKFParams", "ctra_predict", "ukf_predict", "ukf_update",
]
