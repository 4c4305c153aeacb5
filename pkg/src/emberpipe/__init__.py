"""Perception, localization and autonomy for fire-fighting UAV and UGV, with a deterministic simulator."""
from .geometry import DegenerateInputError, PinholeCamera, PlaneModel, PointCloud, Pose
from .mission import MissionAbort, MissionReport, run_mission
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario

__version__ = "0.1.0"

__all__ = [
    "DegenerateInputError", "PinholeCamera", "PlaneModel", "PointCloud", "Pose",
    "MissionAbort", "MissionReport", "run_mission",
    "Scenario", "ScenarioError", "load_scenario", "parse_scenario",
]
