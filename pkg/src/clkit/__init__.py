"""clkit: coreset-free continual learning for dense classifiers.

Single-headed classifiers are trained over a sequence of tasks without
revisiting earlier data.  Each new task's objective is the task's
negative log likelihood plus a penalty that stands in for everything
learned before, either an exact accumulated-Hessian quadratic, a neural
surrogate of the previous loss surface, or one of the classic diagonal
approximations (EWC, synaptic intelligence).  Reference upper and lower
baselines (joint training, fine-tuning) and an experiment harness with a
CLI round out the toolkit.
"""

from .harness import (
    accuracy,
    export_prob_grid,
    final_average_accuracy,
    grid_search,
    load_config,
    run_experiment,
)
from .methods import (
    EWCClassifier,
    FineTuneClassifier,
    JointClassifier,
    NeuralConsolidationClassifier,
    QuadraticConsolidationClassifier,
    SynapticIntelligenceClassifier,
    fit_sequence,
    sample_uniform_ball,
)
from .nn import ModelSpec, init_params, predict_class, predict_proba
from .tasks import (
    Dataset,
    TaskSequence,
    load_builtin,
    load_feature_file,
    relabel_binary,
    split_by_class,
    split_train_val_test,
    write_feature_file,
)

__version__ = "0.1.0"

__all__ = [
    "ModelSpec",
    "Dataset",
    "TaskSequence",
    "FineTuneClassifier",
    "JointClassifier",
    "QuadraticConsolidationClassifier",
    "NeuralConsolidationClassifier",
    "EWCClassifier",
    "SynapticIntelligenceClassifier",
    "fit_sequence",
    "sample_uniform_ball",
    "init_params",
    "predict_proba",
    "predict_class",
    "load_builtin",
    "load_feature_file",
    "write_feature_file",
    "split_train_val_test",
    "split_by_class",
    "relabel_binary",
    "accuracy",
    "final_average_accuracy",
    "run_experiment",
    "grid_search",
    "export_prob_grid",
    "load_config",
    "__version__",
]
