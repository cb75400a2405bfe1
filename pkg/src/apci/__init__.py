"""Age-period-cohort analysis with cohort effects modeled as age-by-period
interactions: sum-to-zero coded GLM fitting, per-cohort deviation tests,
life-course trend contrasts, and a non-identifiability demo for the additive
accounting model.
"""

from .design import (
    AccountingLayout,
    Coding,
    DesignMatrix,
    DUMMY,
    EFFECT,
    TermLayout,
    apci_layout,
    build_accounting_design,
    build_apci_design,
    cell_contrast,
    rank_and_nullspace,
)
from .glm import (
    ConvergenceError,
    Family,
    FitResult,
    GAUSSIAN,
    LOGIT,
    RankDeficientError,
    SeparationError,
    TestResult,
    contrast_t_test,
    deviance_f_test,
    fit,
    predict,
    wald_chi2_test,
)
from .grid import (
    CellIndex,
    CellTable,
    CohortScheme,
    DIAGONAL,
    Dataset,
    GridSpec,
    MicroRecord,
    aggregate,
    bin_record,
    cohort_index,
    diagonal_cells,
)
from .model import (
    ApciFit,
    ApciResult,
    CLASSIFICATIONS,
    CohortReport,
    EmptyCellError,
    classify_cohort,
    diagonal_average,
    diagonal_trend,
    diagonal_values,
    extract_patterns,
    fit_apci,
    polynomial_contrast,
    run_analysis,
    step1_global_test,
    step2_cohort_test,
    step3_average_deviation,
    step3_life_course_contrast,
    tukey_additivity_test,
)
from .sim import (
    PolyDemoSpec,
    TrueEffects,
    accounting_demo,
    default_scenario,
    generate,
    poly_demo,
    simulate_dataset,
)

__version__ = "0.1.0"
