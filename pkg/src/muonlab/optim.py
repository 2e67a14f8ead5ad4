"""
Optimizer update rules for lists of matrix parameters.

Each optimizer is a small stateful object with a ``step(params, grads)``
method returning the updated parameters. Spectral variants orthogonalize
every matrix independently.
"""

from dataclasses import dataclass, asdict

import numpy as np

from .errors import InvalidInputError
from .linalg import DEFAULT_RANK_CUTOFF, newton_schulz_orthogonalize, orthogonalize_exact

KINDS = ("gd", "momentum_gd", "spectral_gd", "spectral_momentum_gd", "muon", "adam")


@dataclass
class Hyperparams:
    learning_rate: float = 1e-3
    momentum: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    ns_iterations: int = 5
    rank_cutoff: float = DEFAULT_RANK_CUTOFF
    svd_method: str = "jacobi"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidInputError("momentum must lie in [0, 1)")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise InvalidInputError("adam_eps must be positive")
        if int(self.ns_iterations) != self.ns_iterations or self.ns_iterations < 1:
            raise InvalidInputError("ns_iterations must be a positive integer")
        if self.rank_cutoff < 0:
            raise InvalidInputError("rank_cutoff must be non-negative")
        if self.svd_method not in ("jacobi", "lapack"):
            raise InvalidInputError(f"unknown svd_method {self.svd_method!r}")

    def to_dict(self):
        return asdict(self)


class Optimizer:
    """Base class holding hyperparameters, buffers and the step counter."""

    kind = None

    def __init__(self, hyperparams=None, **kwargs):
        self.hp = hyperparams if hyperparams is not None else Hyperparams(**kwargs)
        self.step_count = 0
        self.buffers = None

    def _check(self, params, grads):
        params = [np.asarray(p, dtype=np.float64) for p in params]
        grads = [np.asarray(g, dtype=np.float64) for g in grads]
        if len(params) != len(grads):
            raise InvalidInputError("params and grads differ in length")
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape:
                raise InvalidInputError(f"param {i} has shape {p.shape} but grad {g.shape}")
        if not np.isfinite(sum(float(np.sum(g)) for g in grads)):
            bad = next(i for i, g in enumerate(grads) if not np.all(np.isfinite(g)))
            raise InvalidInputError(f"grad {bad} is not finite")
        if self.buffers is None:
            self.buffers = [np.zeros_like(p) for p in params]
        elif [b.shape for b in self.buffers] != [p.shape for p in params]:
            raise InvalidInputError("parameter shapes changed between steps")
        return params, grads

    def step(self, params, grads):
        """Return new parameter arrays after one update (inputs are not modified)."""
        params, grads = self._check(params, grads)
        self.step_count += 1
        return [p - d for p, d in zip(params, self.directions(grads))]

    def directions(self, grads):
        """Per-parameter displacement ``W_old - W_new``."""
        raise NotImplementedError

    def _accumulate(self, grads):
        mu = self.hp.momentum
        for i, g in enumerate(grads):
            self.buffers[i] = mu * self.buffers[i] + g
        return self.buffers


class GD(Optimizer):
    kind = "gd"

    def directions(self, grads):
        return [self.hp.learning_rate * g for g in grads]


class MomentumGD(Optimizer):
    """Heavy-ball: ``g <- mu g + grad``; ``W <- W - lr g``."""

    kind = "momentum_gd"

    def directions(self, grads):
        return [self.hp.learning_rate * b for b in self._accumulate(grads)]


class SpectralGD(Optimizer):
    kind = "spectral_gd"

    def _orth(self, g):
        # Exactly-zero input: skip the update rather than invent a direction.
        if not np.any(g):
            return np.zeros_like(g)
        return orthogonalize_exact(g, self.hp.rank_cutoff, self.hp.svd_method)

    def directions(self, grads):
        return [self.hp.learning_rate * self._orth(g) for g in grads]


class SpectralMomentumGD(SpectralGD):
    kind = "spectral_momentum_gd"

    def directions(self, grads):
        return [self.hp.learning_rate * self._orth(b) for b in self._accumulate(grads)]


class Muon(Optimizer):
    """Heavy-ball momentum followed by Newton-Schulz orthogonalization."""

    kind = "muon"

    def directions(self, grads):
        out = []
        for b in self._accumulate(grads):
            if not np.any(b):
                out.append(np.zeros_like(b))
            else:
                out.append(self.hp.learning_rate
                           * newton_schulz_orthogonalize(b, self.hp.ns_iterations))
        return out


class Adam(Optimizer):
    """Bias-corrected Adam, no weight decay."""

    kind = "adam"

    def directions(self, grads):
        hp = self.hp
        if getattr(self, "second", None) is None:
            self.second = [np.zeros_like(g) for g in grads]
        t = self.step_count
        out = []
        for i, g in enumerate(grads):
            self.buffers[i] = hp.adam_beta1 * self.buffers[i] + (1 - hp.adam_beta1) * g
            self.second[i] = hp.adam_beta2 * self.second[i] + (1 - hp.adam_beta2) * g * g
            m_hat = self.buffers[i] / (1 - hp.adam_beta1 ** t)
            v_hat = self.second[i] / (1 - hp.adam_beta2 ** t)
            out.append(hp.learning_rate * m_hat / (np.sqrt(v_hat) + hp.adam_eps))
        return out


_REGISTRY = {cls.kind: cls for cls in (GD, MomentumGD, SpectralGD, SpectralMomentumGD, Muon, Adam)}


def make_optimizer(kind, hyperparams=None, **kwargs):
    """Instantiate an optimizer by its kind name (see ``KINDS``)."""
    try:
        cls = _REGISTRY[kind]
    except KeyError:
        raise InvalidInputError(f"unknown optimizer kind {kind!r}; expected one of {KINDS}") from None
    return cls(hyperparams, **kwargs)
