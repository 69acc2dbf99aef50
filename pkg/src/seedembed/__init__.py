"""Embedding-based instance segmentation for 2D and 3D grids.

Per-voxel offsets, bandwidths and seediness maps are clustered into
instances by greedy seed selection under a Gaussian membership model. The
package also carries the training losses with analytic gradients, a
network-free direct fitter, test-time augmentation and AP evaluation.
"""

__version__ = "0.1.0"

from .augment import group_2d, group_3d, transform_fieldstack, transform_scalar, tta_average
from .centers import CenterKind, center_of, centroid, geometric_median, medoid
from .embedding import (ClusteringParams, Instance, aggregate_sigma, cluster, embed_all, gaussian_phi,
                        ideal_fieldstack, instances_to_labels)
from .evaluation import ap_dsb, average_runs, match_at, pairwise_iou
from .fitting import FitSchedule, direct_fit, lr_at
from .grid import FieldStack, GridShape, coords_of_label, interior_voxel_count
from .losses import LossWeights, lovasz_jaccard_loss, seed_loss, total_loss, variance_loss, w_fg_from_data

__all__ = [
    "CenterKind", "ClusteringParams", "FieldStack", "FitSchedule", "GridShape", "Instance", "LossWeights",
    "aggregate_sigma", "ap_dsb", "average_runs", "center_of", "centroid", "cluster", "coords_of_label",
    "direct_fit", "embed_all", "gaussian_phi", "geometric_median", "group_2d", "group_3d",
    "ideal_fieldstack", "instances_to_labels", "interior_voxel_count", "lovasz_jaccard_loss", "lr_at",
    "match_at", "medoid", "pairwise_iou", "seed_loss", "total_loss", "transform_fieldstack",
    "transform_scalar", "tta_average", "variance_loss", "w_fg_from_data",
]
