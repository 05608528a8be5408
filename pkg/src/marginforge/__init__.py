"""marginforge: maximum-margin gait feature learning and evaluation.

The package learns linear feature transforms from labeled gait cycles,
matches templates with a Mahalanobis metric, and evaluates both class
separability and rank/threshold recognition metrics under a nested
cross-validation protocol.
"""

from .dataset import (
    FlatSample,
    GaitSample,
    LabeledDataset,
    SyntheticSpec,
    flatten,
    generate_synthetic,
    load_dataset,
    save_dataset,
    unflatten,
)
from .errors import (
    AlignmentError,
    ContractError,
    DegenerateDataError,
    DegenerateMetricWarning,
    MarginforgeError,
    ParseError,
    SchemaError,
    StaleGalleryError,
    ValidationError,
)
from .learners import (
    EigenSelection,
    FeatureTransform,
    identity_transform,
    learn_mmc,
    learn_pcalda,
    load_transform,
    margin_trace,
    mmc_objective,
    oracle_eigen,
    save_transform,
    select_margin_columns,
)
from .metrics_classification import (
    CurveSeries,
    DistanceRecord,
    classify_wta,
    cmc_curve,
    far_frr_curves,
    rcl_pcn_curve,
    roc_curve,
)
from .metrics_separability import (
    SeparabilityReport,
    compute_separability,
    davies_bouldin,
    dunn,
    fisher_ratio,
    silhouette,
)
from .preprocess import (
    align_walk_direction,
    average_length,
    center_on_root,
    dtw_distance,
    filter_gait_cycles,
    resample_time,
)
from .protocol import (
    EvaluationReport,
    FoldPlan,
    ProtocolConfig,
    curve_csv_text,
    plan_folds,
    run_protocol,
)
from .scatter import ScatterStatistics, compute_scatter
from .template_space import (
    GaitTemplate,
    GalleryStore,
    MatchingContext,
    build_gallery,
    build_matching_context,
    extract_template,
    load_gallery,
    mahalanobis,
    save_gallery,
)

__version__ = "0.1.0"
