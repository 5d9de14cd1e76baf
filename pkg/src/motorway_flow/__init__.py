"""Graph-based short-term motorway flow forecasting.

Forecasts the vehicle count at a mainline detector from an upstream
detector plus the entry and exit ramps in between, with a constant-speed
vehicle simulator that produces ground-truth data to test against.
"""

from .cleaning import CleaningConfig, OutlierMask, clean_store, detect_outliers, impute
from .evaluation import EvaluationPlan, MetricsReport, r_squared, rmse, run_evaluation, smape
from .flowdata import (DailyProfile, FlowStore, TimeGrid, TimePoint, blend, compute_daily_profile,
                       compute_profiles, ingest_flows, interpolate_flow, write_flows)
from .graph import (MotorwayGraph, StationKind, align_offset, build_graph, find_optimal_upstream,
                    load_graph, path_distance, traverse_collect)
from .predictors import (Forecast, Method, PredictionRequest, feasible_targets, predict,
                         predict_bktr, predict_dpp, predict_intr)
from .simulator import Scenario, SimulationResult, simulate, synthetic_topology

__version__ = "0.1.0"

__all__ = [
    "CleaningConfig", "OutlierMask", "clean_store", "detect_outliers", "impute",
    "EvaluationPlan", "MetricsReport", "r_squared", "rmse", "run_evaluation", "smape",
    "DailyProfile", "FlowStore", "TimeGrid", "TimePoint", "blend", "compute_daily_profile",
    "compute_profiles", "ingest_flows", "interpolate_flow", "write_flows",
    "MotorwayGraph", "StationKind", "align_offset", "build_graph", "find_optimal_upstream",
    "load_graph", "path_distance", "traverse_collect",
    "Forecast", "Method", "PredictionRequest", "feasible_targets", "predict",
    "predict_bktr", "predict_dpp", "predict_intr",
    "Scenario", "SimulationResult", "simulate", "synthetic_topology",
]
