"""Spectral non-rigid shape correspondence toolkit.

Functional-map solving with resolvent-mask regularization, Sinkhorn-based
soft correspondence from feature similarity, the self-supervised loss suite
(complete and partial variants), handcrafted or external per-vertex features,
and a geodesic-error evaluation harness.
"""

from .config import PipelineConfig, load_config
from .correspondence import SoftCorrespondence, column_softmax, quantize, similarity, sinkhorn
from .descriptors import FeatureMatrix, hks, load_external_features, save_features, wks, xyz_features
from .errors import (
    ConfigError,
    EigensolverError,
    LoadError,
    RefinementError,
    ShapeMatchError,
    SolverError,
    UserInputError,
)
from .evaluation import MatchReport, aggregate, build_match_report, geodesic_error, pck_curve
from .fmap import (
    FmapProblem,
    FunctionalMap,
    PointMap,
    build_fmap_problem,
    fmap_to_pointmap,
    pointmap_to_fmap,
    resolvent_mask,
    solve_fmap,
)
from .geometry import (
    GeodesicTable,
    PointCloud,
    TriangleMesh,
    geodesic_distances,
    load_shape,
    mesh_to_point_cloud,
    save_shape,
    surface_area,
)
from .losses import (
    LossReport,
    LossWeights,
    RefinePair,
    RefineResult,
    e_align,
    e_bij,
    e_nce,
    e_orth,
    e_total,
    estimate_r,
    fd_gradient,
    refine_features,
)
from .spectral import LaplaceOperator, SpectralBasis, cotan_laplacian, eigenbasis, pointcloud_laplacian
from .synth import SynthPair, bent_plane_pair, isosphere_pair, make_pair, partial_cut_pair

__version__ = "0.1.0"
