"""Probe-method reconstruction of conductivity inclusions from localized DtN data."""

__version__ = "0.1.0"

from .geometry import Mesh2D, Needle, build_domain_mesh, impact_parameter_oracle, needle_family
from .scenario import CoefficientField, ConductivityScenario, load_config, scenario_from_config
from .shapes import Disk, Polygon

__all__ = [
    "CoefficientField",
    "ConductivityScenario",
    "Disk",
    "Mesh2D",
    "Needle",
    "Polygon",
    "build_domain_mesh",
    "impact_parameter_oracle",
    "load_config",
    "needle_family",
    "scenario_from_config",
]
