"""Local hotspot detection and hierarchical arrangement analysis on metric grids."""

from .arrangement import (ArrangementAnalyzer, PatternConfig, coverage_curve, coverage_ratio, inhibit_curve,
                          knn_curve, mean_knn_distance, normalized_density_pairs, null_model_random1,
                          null_model_random2, pattern_report)
from .detection import (DetectionParams, Hotspot, LocalHotspotDetector, detect, find_local_maxima,
                        reshape_neighborhoods, select_radius_elbow, threshold_popular)
from .levels import LoubarClassifier, classify_levels, lorenz_curve, loubar_threshold
from .simulation import (CascadeSimulator, MechanismParams, attraction, background_split, mechanism_experiment,
                         rmse_compare, simulate_cascade, simulate_level)
from .spatial_core import (CellPointSet, DensityRaster, GridSpec, RoadMask, bin_points, count_within,
                           knn_distances, project_to_meters, rasterize_roads, unproject_from_meters)
from .synth import SyntheticCitySpec, synth_city

__version__ = "0.1.0"

__all__ = [
    "ArrangementAnalyzer", "CascadeSimulator", "CellPointSet", "DensityRaster", "DetectionParams", "GridSpec",
    "Hotspot", "LocalHotspotDetector", "LoubarClassifier", "MechanismParams", "PatternConfig", "RoadMask",
    "SyntheticCitySpec", "attraction", "background_split", "bin_points", "classify_levels", "count_within",
    "coverage_curve", "coverage_ratio", "detect", "find_local_maxima", "inhibit_curve", "knn_curve",
    "knn_distances", "lorenz_curve", "loubar_threshold", "mean_knn_distance", "mechanism_experiment",
    "normalized_density_pairs", "null_model_random1", "null_model_random2", "pattern_report",
    "project_to_meters", "rasterize_roads", "reshape_neighborhoods", "rmse_compare", "select_radius_elbow",
    "simulate_cascade", "simulate_level", "synth_city", "threshold_popular", "unproject_from_meters",
]
