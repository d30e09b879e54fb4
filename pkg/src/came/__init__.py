"""Context-aware mixture-of-experts head for long-tailed relation
classification: model, imbalance-aware losses, training recipe, and the
unbiased evaluation suite (R@K, mR@K, balance mean, var/m, group recalls).
"""

from .config import AblateConfig, ConfigError, DataConfig, EvalConfig, RunConfig, load_config
from .data import (
    ClassPartition,
    DatasetSplit,
    DumpFormatError,
    PredicateVocabulary,
    RelationInstance,
    generate_synthetic,
    load_feature_dump,
    partition_classes,
    save_feature_dump,
    stratified_split,
    zipf_counts,
)
from .gradcheck import run_gradcheck_suite
from .losses import (
    ContextAwareLossResult,
    LossConfig,
    ce_loss,
    class_balanced_loss,
    context_aware_loss,
    focal_loss,
    ldam_loss,
)
from .metrics import (
    EvalReport,
    ImagePredictions,
    evaluate,
    evaluate_predictions,
    group_mean_recall,
    load_prediction_dump,
    mean_metric,
    mean_recall_at_k,
    recall_at_k,
    save_prediction_dump,
    top1_accuracy,
    var_over_mean,
)
from .model import (
    CameConfig,
    CameParams,
    Checkpoint,
    ForwardTrace,
    backward,
    came_ensemble,
    edge_embedding,
    expert_forward,
    expert_weights,
    forward,
    init_params,
    load_checkpoint,
    moe_average,
    predicate_weights,
    save_checkpoint,
    shared_forward,
)
from .numerics import (
    GradCheckReport,
    check_gradients,
    finite_diff_gradient,
    log_sum_exp,
    make_rng,
    stable_softmax,
)
from .train import (
    FitResult,
    OptimizerState,
    TrainConfig,
    TrainingError,
    clip_grad_norm,
    fit,
    init_optimizer_state,
    sgd_step,
    warmup_lr,
)

__version__ = "0.1.0"
