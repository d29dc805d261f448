from fedcore.cluster.core import ClusterGroup, ClusteringResult, centroid_of, nearest_member
from fedcore.cluster.hdbscan import HdbscanConfig, hdbscan
from fedcore.cluster.kmeans import KMeansResult, kmeans

__all__ = [
    "ClusterGroup",
    "ClusteringResult",
    "HdbscanConfig",
    "KMeansResult",
    "centroid_of",
    "hdbscan",
    "kmeans",
    "nearest_member",
]
