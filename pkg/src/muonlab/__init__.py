"""
Spectral optimizers (Muon, Spectral GD) next to classical baselines on deep
linear and gated routing networks, with closed-form dynamics oracles.
"""

from .errors import ConfigError, InvalidInputError, NumericalDivergenceError
from .linalg import (SvdResult, effective_rank, frobenius_norm, newton_schulz_orthogonalize,
                     nuclear_norm, operator_norm, orthogonalize_exact, svd_compact)
from .optim import Hyperparams, make_optimizer

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "InvalidInputError", "NumericalDivergenceError",
    "SvdResult", "svd_compact", "orthogonalize_exact", "newton_schulz_orthogonalize",
    "operator_norm", "frobenius_norm", "nuclear_norm", "effective_rank",
    "Hyperparams", "make_optimizer",
]
