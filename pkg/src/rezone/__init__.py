"""Ranked-priority school attendance boundary engine.

Turns a community member's ranked policy priorities into a generated
boundary scenario, quantifies impacts across the four policy pillars, and
collects structured, revisable feedback through an HTTP service and CLI.
"""

from .model import (
    Assignment,
    District,
    DistrictConfig,
    GeoUnit,
    Pillar,
    PillarRanking,
    PillarWeights,
    Scenario,
    School,
    SchoolLevel,
    SESCounts,
    TravelTimeMatrix,
    validate_district,
)
from .weights import softmax_weights

__all__ = [
    "Assignment",
    "District",
    "DistrictConfig",
    "GeoUnit",
    "Pillar",
    "PillarRanking",
    "PillarWeights",
    "Scenario",
    "School",
    "SchoolLevel",
    "SESCounts",
    "TravelTimeMatrix",
    "validate_district",
    "softmax_weights",
]
