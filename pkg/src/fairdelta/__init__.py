"""fairdelta: bias mitigation strategies and prediction-level debiasing audits.

Train a biased tabular classifier, derive fair counterparts with five
mitigation strategies (fair representations, adversarial training in two
modes, reject option classification, per-group threshold optimization), and
audit exactly which predictions the debiasing changes.
"""

from .adversarial_debias import AdvConfig, AdvResult, adversary_accuracy, train_adversarial
from .data_ingest import (BinarizeRule, DataIngestError, DataSplit, DatasetManifest,
                          binarize_sensitive, load_dataset, load_split, save_split)
from .delta_audit import (AuditReport, DeltaSet, DirectionTable, StabilitySummary,
                          compute_delta, direction_table, group_outcome_rates,
                          impact_fraction, iou, stability)
from .fairness_metrics import (DegenerateGroupError, FairnessScores, accuracy,
                               compute_fairness_scores, demographic_parity_rates,
                               disparate_mistreatment, p_rule)
from .lfr import LfrConfig, LfrParams, fit_lfr, lfr_assign, lfr_loss, lfr_predict
from .mlp_core import (MlpParams, PredictionSet, TrainConfig, TrainedModel,
                       TrainingDivergedError, forward, loss_and_grads, predict,
                       predict_split, train_biased)
from .plsda import (PlsModel, discriminant_auc, feature_correlations, fit_plsda,
                    project)
from .postprocessing import (GroupThreshold, GroupThresholds, RocConfig,
                             apply_group_thresholds, fit_group_thresholds, roc_flip,
                             roc_search)
from .experiment_cli import ExperimentConfig, run_experiment

__version__ = "0.1.0"
