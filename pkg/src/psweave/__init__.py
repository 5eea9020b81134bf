"""Trial-based partitioned survival cost-utility analysis.

Quality-adjusted survival derivation, Bayesian joint hurdle models fitted by
Hamiltonian Monte Carlo, convergence diagnostics, predictive model assessment
and cost-effectiveness summaries.
"""

from .qas import (
    SeriesError,
    UtilitySeries,
    auc_qaly,
    qas,
    partition_qas,
    read_series_csv,
    derive_outcomes,
)
from .data import (
    DataError,
    PatientRecord,
    TrialDataset,
    make_dataset,
    load_trial_csv,
    save_trial_csv,
    missingness_patterns,
    summarize as describe,
)
from .model import (
    ModelSpec,
    ModelInstance,
    build_model,
    log_posterior,
)
from .sampler import (
    SamplerConfig,
    Chains,
    sample,
    write_draws_csv,
    read_draws_csv,
)
from .diagnostics import (
    split_rhat,
    ess,
    hpd,
    summary_rows,
    write_summary_csv,
    trace_density_export,
)
from .assess import (
    pointwise_loglik,
    waic,
    psis_loo,
    gpd_fit,
    assess_fit,
    write_assessment_csv,
    ppc_replicate,
)
from .econ import (
    ArmMeans,
    EconSummary,
    marginal_means,
    icer,
    cep,
    ceac,
    default_k_grid,
    summarize,
    write_econ_csv,
    write_ceac_csv,
    cep_plot,
    ceac_plot,
)
from .synth import generate, amputate, default_truth, truth_config

__version__ = "0.1.0"

__all__ = [
    "SeriesError",
    "UtilitySeries",
    "auc_qaly",
    "qas",
    "partition_qas",
    "read_series_csv",
    "derive_outcomes",
    "DataError",
    "PatientRecord",
    "TrialDataset",
    "make_dataset",
    "load_trial_csv",
    "save_trial_csv",
    "missingness_patterns",
    "describe",
    "ModelSpec",
    "ModelInstance",
    "build_model",
    "log_posterior",
    "SamplerConfig",
    "Chains",
    "sample",
    "write_draws_csv",
    "read_draws_csv",
    "split_rhat",
    "ess",
    "hpd",
    "summary_rows",
    "write_summary_csv",
    "trace_density_export",
    "pointwise_loglik",
    "waic",
    "psis_loo",
    "gpd_fit",
    "assess_fit",
    "write_assessment_csv",
    "ppc_replicate",
    "ArmMeans",
    "EconSummary",
    "marginal_means",
    "icer",
    "cep",
    "ceac",
    "default_k_grid",
    "summarize",
    "write_econ_csv",
    "write_ceac_csv",
    "cep_plot",
    "ceac_plot",
    "generate",
    "amputate",
    "default_truth",
    "truth_config",
    "__version__",
]
