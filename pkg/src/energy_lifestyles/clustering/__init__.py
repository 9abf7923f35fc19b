"""Clustering methods, validity indices and the load-shape dictionary."""
from .dictionary import (
    CountMatrix,
    DictConfig,
    ShapeDictionary,
    bin_partition,
    build_dictionary,
    encode_counts,
    encode_days,
)
from .hierarchy import barycenter, dbscan_fit, ward_fit, ward_merge_cost
from .kcenter import Clustering, assign_points, clustering_inertia, kcenter_fit
from .validity import chi_score, dbi_score

__all__ = [
    "Clustering", "CountMatrix", "DictConfig", "ShapeDictionary", "assign_points", "barycenter",
    "bin_partition", "build_dictionary", "chi_score", "clustering_inertia", "dbi_score", "dbscan_fit",
    "encode_counts", "encode_days", "kcenter_fit", "ward_fit", "ward_merge_cost",
]
