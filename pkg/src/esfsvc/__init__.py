"""Spatially varying coefficient regression with Moran eigenvector bases,
estimated by restricted maximum likelihood, and a scalable aggregated
variant that fuses independently fitted local and global sub-models by a
generalized product of experts.
"""

__version__ = "0.1.0"

from .errors import (
    ArchiveError,
    BasisEmptyError,
    ConfigError,
    CoverageError,
    DegenerateGeometryError,
    EsfError,
    InputError,
    InsufficientSampleError,
    NonFiniteLikelihoodError,
    NumericalError,
    ProfileDegenerateError,
    SingularSystemError,
    UndefinedStatisticError,
)
from .geometry import (
    ClusterPartition,
    Dataset,
    choose_cluster_count,
    kmeans_partition,
    mst_range,
    pairwise_distance,
)
from .basis import (
    ConnectivityConfig,
    MoranBasis,
    connectivity_matrix,
    moran_basis,
    moran_coefficient,
)
from .estimator import (
    FitOptions,
    SubModelDesign,
    SubModelFit,
    VarianceParams,
    build_design,
    estimate_sigma2,
    fit_esf,
    fit_submodel,
    predict_sub_svc,
    restricted_loglik,
    solve_coefficients,
    variance_diagonal,
)
from .aggregate import (
    AggregateConfig,
    AggregatedFit,
    WeightMatrix,
    WeightScheme,
    aggregate_constant,
    aggregate_svc,
    aggregate_variance,
    fit_aggregated,
    posterior_weights,
    prior_weights,
    total_loglik_and_bic,
    variant_scheme,
)
from .simulate import (
    SimConfig,
    SimTruth,
    generate_covariate,
    generate_scenario,
    grid_sites,
    sample_gp,
    score,
)

__all__ = [name for name in dir() if not name.startswith("_")]
