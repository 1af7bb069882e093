"""Decision-tree interpreters and interpretability metrics for neural policy rollouts."""
from .data import TrajectoryDataset, flatten, load_dataset, make_dataset, save_dataset
from .interpret import PolicyInterpretation, build, interpret_response, interpret_timestep
from .logic import LogicProgram, Predicate, conflict_rate, parse, reduce, render
from .metrics import MetricsReport, compute_metrics, hyperparameter_sweep, mutual_information
from .tree import CLASSIFIER_CONFIG, SURROGATE_CONFIG, DecisionTree, TreeConfig, fit_classification, fit_regression

__version__ = "0.1.0"
