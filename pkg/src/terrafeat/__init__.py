"""Terrain-aware and local geometric features for large outdoor point clouds.

The package computes a digital surface model (DSM), extracts a digital
terrain model (DTM) by minimum filtering plus a robust L1 spline fit,
derives per-point relative elevation, per-cell statistics, and
structure-tensor features, and evaluates semantic-segmentation
predictions (overall accuracy, IoU, F1).
"""

from terrafeat.cloud import BoundingBox, PointCloud, compute_bbox, grid_subsample
from terrafeat.errors import FileFormatError, NumericalError, TerrafeatError
from terrafeat.io import load_cloud, save_cloud
from terrafeat.raster import (
    CellIndexMap,
    RasterGrid,
    assign_cell_values,
    build_cell_index,
    export_raster,
    grid_feature_count,
    grid_feature_zvar,
    inpaint_heat,
    load_asc,
    rasterize_dsm,
)
from terrafeat.ground import (
    GroundCandidates,
    Plane,
    SplineConfig,
    extract_ground_candidates,
    fit_dtm_spline,
    ndsm,
    ransac_ground_plane,
    relative_elevation,
    relative_elevation_plane,
)
from terrafeat.features import (
    LocalFeatureSet,
    NeighborIndex,
    append_local_features,
    build_neighbor_index,
    structure_tensor_features,
)
from terrafeat.evaluation import (
    ConfusionMatrix,
    MetricsReport,
    ProbeConfig,
    ProbeModel,
    confusion,
    metrics,
    probe_ablation,
    train_probe,
)
from terrafeat.synth import BoxSpec, RoadSpec, SceneSpec, TreeSpec, generate_scene
from terrafeat.pipeline import PipelineConfig, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "BoxSpec",
    "CellIndexMap",
    "ConfusionMatrix",
    "FileFormatError",
    "GroundCandidates",
    "LocalFeatureSet",
    "MetricsReport",
    "NeighborIndex",
    "NumericalError",
    "Plane",
    "PipelineConfig",
    "PointCloud",
    "ProbeConfig",
    "ProbeModel",
    "RasterGrid",
    "RoadSpec",
    "SceneSpec",
    "SplineConfig",
    "TerrafeatError",
    "TreeSpec",
    "append_local_features",
    "assign_cell_values",
    "build_cell_index",
    "build_neighbor_index",
    "compute_bbox",
    "confusion",
    "export_raster",
    "extract_ground_candidates",
    "fit_dtm_spline",
    "generate_scene",
    "grid_feature_count",
    "grid_feature_zvar",
    "grid_subsample",
    "inpaint_heat",
    "load_asc",
    "load_cloud",
    "metrics",
    "ndsm",
    "probe_ablation",
    "ransac_ground_plane",
    "rasterize_dsm",
    "relative_elevation",
    "relative_elevation_plane",
    "run_pipeline",
    "save_cloud",
    "train_probe",
]
