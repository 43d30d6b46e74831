"""Multilevel functional PCA reference models, normative projection scoring,
and clinical-validation workflows for hierarchical curve data."""

__version__ = "0.1.0"

from .curves import (
    CurveSet,
    Grid,
    load_curves,
    resample_to_grid,
    save_curves,
    subject_mean_curves,
)
from .basis import BasisSystem, build_basis, inner_product, penalized_smooth
from .preprocess import (
    LandmarkSet,
    QcReport,
    boxplot_outliers,
    landmark_register,
    locate_landmarks,
    mbd_depths,
    template_qc,
)
from .mfpca import (
    CovariancePair,
    MfpcaModel,
    estimate_covariances,
    eigendecompose_operator,
    fit_fpca,
    fit_mfpca,
    load_model,
    save_model,
)
from .project import (
    FittedDecomposition,
    ScoreTable,
    fpca_project,
    mfpca_project,
    reconstruct,
)
from .valmetrics import (
    GroupTestResult,
    IccResult,
    OlsResult,
    auc,
    correlation,
    icc,
    mann_whitney,
    ols_simple,
)
from .simgen import (
    Bump,
    PopulationSpec,
    ScenarioSpec,
    apply_scenario,
    empirical_score_moments,
    gaussian_bump,
    synthesize_population,
    synthetic_reference_model,
)
from .harness import (
    ReferenceSet,
    StudyConfig,
    StudyResult,
    SummaryDefinition,
    default_summaries,
    mean_peak,
    reference_from_curves,
    run_study,
    scalar_summaries,
    synthetic_reference,
    validate_workflow,
)

__all__ = [name for name in dir() if not name.startswith("_")]
