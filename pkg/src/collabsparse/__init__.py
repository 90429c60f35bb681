"""Collaborative multi-sensor sparse representation classifiers.

Joint and group sparse coding across sensors, with optional sparse-error and
low-rank interference terms, linear or kernelized, all solved by one
linearized ADMM engine; plus cepstral feature extraction, a synthetic data
generator and an experiment harness.
"""

from .admm import max_gram_eigen, objective_value, solve, solve_many
from .classify import ClassDecision, classify_kernel, classify_linear, majority_vote_baseline
from .core import (CoefficientBlocks, Decomposition, MultiSensorObservation, SolverConfig,
                   SolveTrace, StructuredDictionary, Variant, build_dictionary, validate_pair)
from .errors import CollabSparseError, ConfigError, DatasetIOError, DimensionError, NumericalError
from .features import SegmentPlan, detect_event, power_cepstrum, segment
from .kernels import GramSystem, KernelSpec, build_gram, kernel_class_residual, kernel_eval, solve_kernel
from .prox import entry_shrink, group_row_shrink, row_shrink, soft_threshold, svt

__version__ = "0.1.0"
