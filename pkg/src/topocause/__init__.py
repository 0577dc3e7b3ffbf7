"""Topological causal effects: filtrations, persistence, silhouettes and TATE estimators."""

__version__ = "0.1.0"

from .complexes import (
    FilteredComplex,
    ImageGrid,
    NodeWeightedGraph,
    PointCloud,
    build_alpha_2d,
    build_cubical_sublevel,
    build_graph_sublevel,
    build_rips,
)
from .estimators import (
    EffectEstimate,
    covariance,
    estimate_aipw,
    estimate_all,
    estimate_ipw,
    estimate_pi,
    sup_test,
)
from .metrics import stability_check, wasserstein
from .persistence import PersistenceDiagram, cap_infinite_deaths, compute_h0_unionfind, compute_persistence
from .summaries import PipelineConfig, SilhouetteCurve, SummaryGrid, landscape, pipeline_silhouette, silhouette

__all__ = [
    "FilteredComplex",
    "ImageGrid",
    "NodeWeightedGraph",
    "PointCloud",
    "build_alpha_2d",
    "build_cubical_sublevel",
    "build_graph_sublevel",
    "build_rips",
    "EffectEstimate",
    "covariance",
    "estimate_aipw",
    "estimate_all",
    "estimate_ipw",
    "estimate_pi",
    "sup_test",
    "stability_check",
    "wasserstein",
    "PersistenceDiagram",
    "cap_infinite_deaths",
    "compute_h0_unionfind",
    "compute_persistence",
    "PipelineConfig",
    "SilhouetteCurve",
    "SummaryGrid",
    "landscape",
    "pipeline_silhouette",
    "silhouette",
]
