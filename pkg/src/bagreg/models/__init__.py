from .common import (
    BASELINE,
    BDR,
    BLR,
    FREQ_SHRINK,
    KINDS,
    OPTIMAL,
    PROBABILISTIC_KINDS,
    PROBIT_BLR,
    PROBIT_SHRINK,
    SHRINK_MAP,
    FitConfig,
    RegressionModel,
    load_model,
    minibatch_fit,
    model_from_dict,
    model_to_dict,
    save_model,
)
from .baseline import baseline_fit, baseline_loss, baseline_predict
from .bdr import BDRConfig, BDRData, bdr_data, bdr_fit, bdr_log_post_and_grad, bdr_predict
from .blr import (
    EvidenceData,
    blr_fit,
    blr_predict,
    design_matrix,
    log_evidence_and_grad,
    optimize_evidence,
    reduce_design,
)
from .predict import predict_bag, predict_dataset
from .probit import (
    empirical_probit_data,
    probit_map_fit,
    probit_map_objective,
    probit_objective_and_grad,
    probit_predictive,
)
from .shrinkage import (
    ShrinkageWorkspace,
    ShrinkFitConfig,
    shrinkage_nll_objective,
    shrinkage_predictive,
    shrinkmap_fit,
)

__all__ = [
    "BASELINE",
    "BDR",
    "BLR",
    "FREQ_SHRINK",
    "KINDS",
    "OPTIMAL",
    "PROBABILISTIC_KINDS",
    "PROBIT_BLR",
    "PROBIT_SHRINK",
    "SHRINK_MAP",
    "FitConfig",
    "RegressionModel",
    "load_model",
    "minibatch_fit",
    "model_from_dict",
    "model_to_dict",
    "save_model",
    "baseline_fit",
    "baseline_loss",
    "baseline_predict",
    "BDRConfig",
    "BDRData",
    "bdr_data",
    "bdr_fit",
    "bdr_log_post_and_grad",
    "bdr_predict",
    "EvidenceData",
    "blr_fit",
    "blr_predict",
    "design_matrix",
    "log_evidence_and_grad",
    "optimize_evidence",
    "reduce_design",
    "predict_bag",
    "predict_dataset",
    "empirical_probit_data",
    "probit_map_fit",
    "probit_map_objective",
    "probit_objective_and_grad",
    "probit_predictive",
    "ShrinkageWorkspace",
    "ShrinkFitConfig",
    "shrinkage_nll_objective",
    "shrinkage_predictive",
    "shrinkmap_fit",
]
