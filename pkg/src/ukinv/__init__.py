"""Derivative-free Kalman inversion with low-rank and reduced-order accelerations."""
from .base import InverseProblem, LinearModel, RunRecord, misfit, relative_error
from .ensemble import (Ensemble, eaki_analysis, eaki_step, eki_analysis, eki_step, ensemble_run,
                       etki_analysis, etki_step, init_ensemble)
from .errors import (BatchError, ConfigError, DecompositionError, DimensionError, FormatError,
                     InputError, InversionError, NumericError, RankError, VerificationError)
from .forward import BatchResult, EvaluationPolicy, Fidelity, FunctionModel, evaluate_batch
from .kernels import BACKEND
from .linalg import TsvdFactors, canonical_signs, sym_eig_psd, tsvd, woodbury_solve
from .tuki import SquareRootState, TukiHyper, column_space_angle, tuki_analyze, tuki_hyper, tuki_predict, tuki_run
from .uki import (GaussianState, Reparameterization, UkiHyper, default_hyper, reparam_lift, reparam_wrap,
                  uki_analyze, uki_predict, uki_run)
from .unscented import SigmaEnsemble, sigma_points_full, sigma_points_truncated, ut_estimate, ut_weights

__version__ = "0.1.0"
