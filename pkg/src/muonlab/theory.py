"""
Closed-form trajectories for two-layer linear networks under gradient flow
and spectral gradient flow, plus an RK4 integrator for the gating-race ODEs.

All spectra are given in the whitened-input setting (``sigma_xx = I``) with
the product map aligned to the singular vectors of ``sigma_yx``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalDivergenceError


@dataclass(frozen=True)
class SpectrumSpec:
    """Target singular values (non-increasing) and a common initial value per mode."""

    singular_values: tuple
    init_scale: float = 1e-4

    def __post_init__(self):
        s = np.asarray(self.singular_values, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise InvalidInputError("singular_values must be a non-empty sequence")
        if np.any(s < 0) or np.any(np.diff(s) > 0):
            raise InvalidInputError("singular_values must be non-negative and non-increasing")
        if not self.init_scale > 0:
            raise InvalidInputError("init_scale must be positive")
        positive = s[s > 0]
        if positive.size and self.init_scale >= positive.min():
            raise InvalidInputError("init_scale must be below the smallest positive singular value")
        object.__setattr__(self, "singular_values", tuple(float(x) for x in s))

    @property
    def s(self):
        return np.asarray(self.singular_values)


def gd_sigma_trajectory(s, sigma0, t):
    """
    Logistic solution of ``d sigma/dt = 2 sigma (s - sigma)``.

    ``sigma(t) = s / (1 + (s / sigma0 - 1) exp(-2 s t))``. ``s = 0`` leaves
    ``sigma0`` unchanged and ``sigma0 = 0`` is a fixed point.
    """
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise InvalidInputError("t must be non-negative")
    if s < 0 or sigma0 < 0:
        raise InvalidInputError("s and sigma0 must be non-negative")
    if s == 0 or sigma0 == 0:
        return np.full_like(t, float(sigma0)) if t.ndim else float(sigma0)
    out = s / (1.0 + (s / sigma0 - 1.0) * np.exp(-2.0 * s * t))
    return out if t.ndim else float(out)


def gd_learn_time(s, sigma0, fraction=0.99):
    """Time at which the logistic trajectory reaches ``fraction * s``.

    Zero when ``sigma0`` already meets the target.
    """
    if not 0.0 < fraction < 1.0:
        raise InvalidInputError("fraction must lie in (0, 1)")
    if not s > 0 or not sigma0 > 0:
        raise InvalidInputError("s and sigma0 must be positive")
    if sigma0 >= fraction * s:
        return 0.0
    return float(np.log((s / sigma0 - 1.0) * fraction / (1.0 - fraction)) / (2.0 * s))


def gd_phase_schedule(spec, fraction=0.99):
    """
    Per-mode learn times under gradient flow, in mode order.

    Larger singular values are learned first; modes sharing a singular
    value share a time. After the ``r``-th escape the product map sits
    near ``critical_point(stats, r)``.
    """
    times = np.array([gd_learn_time(sk, spec.init_scale, fraction) if sk > 0 else np.inf
                      for sk in spec.s])
    # Times are non-decreasing because the spectrum is non-increasing.
    assert np.all(np.diff(times[np.isfinite(times)]) >= -1e-12)
    return times


def spectral_sigma_trajectory(s, t, offset=0.0):
    """``min((t + offset)^2, s)``: zero-init spectral gradient flow, shifted by ``offset``."""
    t = np.asarray(t, dtype=np.float64)
    out = np.minimum((t + offset) ** 2, s)
    return out if t.ndim else float(out)


def spectral_learn_time(s, offset=0.0):
    """Saturation time ``sqrt(s) - offset`` of the spectral trajectory."""
    return float(max(np.sqrt(s) - offset, 0.0))


def fit_spectral_offset(t_fit, sigma_fit):
    """Offset making ``(t_fit + offset)^2`` equal an observed early value."""
    return float(np.sqrt(max(sigma_fit, 0.0)) - t_fit)


def fit_logistic_init(s, t_fit, sigma_fit):
    """Effective initial value making the logistic pass through ``(t_fit, sigma_fit)``."""
    if not 0 < sigma_fit < s:
        raise InvalidInputError("sigma_fit must lie strictly between 0 and s")
    c = (s / sigma_fit - 1.0) * np.exp(2.0 * s * t_fit)
    return float(s / (1.0 + c))


def spectral_phase_schedule(spec):
    """
    Phases of zero-init spectral gradient flow.

    Returns
    -------
    list of (r, active, entry, exit)
        ``r`` is the number of still-growing modes, ``active`` their indices,
        and the phase runs from ``entry`` to ``exit``. Tied singular values
        saturate together.
    """
    s = spec.s
    levels = sorted({float(x) for x in s if x > 0})
    phases = []
    entry = 0.0
    for level in levels:
        active = tuple(int(i) for i in np.flatnonzero(s >= level))
        exit_time = float(np.sqrt(level))
        phases.append((len(active), active, entry, exit_time))
        entry = exit_time
    return phases


def critical_point(q, s, r, rank):
    """``W_rank = sum_{k < rank} s_k q_k r_k^T`` from SVD factors of ``sigma_yx``."""
    return (q[:, :rank] * np.asarray(s)[:rank]) @ r[:, :rank].T


@dataclass(frozen=True)
class GatingParams:
    """Parameters of the two-mode gating race (``s_stat``/``d_stat`` are data statistics)."""

    p: int
    m: int
    s_stat: float = 1.0
    d_stat: float = 1.0
    b1_0: float = 1e-3
    b2_0: float = 1e-3

    def __post_init__(self):
        if self.p < 1 or self.m < 1 or self.p > self.m ** 2:
            raise InvalidInputError("need 1 <= P <= M^2")
        if not (self.s_stat > 0 and self.d_stat > 0):
            raise InvalidInputError("s_stat and d_stat must be positive")

    @property
    def equilibrium(self):
        return self.s_stat / self.d_stat


def gating_derivatives(params, b1, b2):
    bracket = params.s_stat - b2 * b1 * b1 * params.d_stat
    scale = 1.0 / params.m ** 2
    db1 = np.sqrt(params.p) * scale * b2 * b1 * bracket
    db2 = params.p * scale * b1 * b1 * bracket
    return db1, db2


def gating_race_integrate(params, dt=1e-3, t_max=100.0, tol=1e-9):
    """
    RK4 integration of the gating ODEs.

    Stops at ``t_max`` or once ``B2 B1^2`` is within ``tol`` of ``S/D``.

    Returns
    -------
    t, b1, b2 : ndarray
    """
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    n_max = int(np.ceil(t_max / dt))
    ts = np.empty(n_max + 1)
    b1s = np.empty(n_max + 1)
    b2s = np.empty(n_max + 1)
    b1, b2 = float(params.b1_0), float(params.b2_0)
    ts[0], b1s[0], b2s[0] = 0.0, b1, b2
    target = params.equilibrium
    i = 0
    while i < n_max and abs(b2 * b1 * b1 - target) > tol:
        k1 = gating_derivatives(params, b1, b2)
        k2 = gating_derivatives(params, b1 + 0.5 * dt * k1[0], b2 + 0.5 * dt * k1[1])
        k3 = gating_derivatives(params, b1 + 0.5 * dt * k2[0], b2 + 0.5 * dt * k2[1])
        k4 = gating_derivatives(params, b1 + dt * k3[0], b2 + dt * k3[1])
        b1 += dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        b2 += dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if not (np.isfinite(b1) and np.isfinite(b2)):
            raise NumericalDivergenceError("gating ODE state became non-finite")
        i += 1
        ts[i], b1s[i], b2s[i] = i * dt, b1, b2
    return ts[:i + 1], b1s[:i + 1], b2s[:i + 1]


def time_to_fraction(t, b1, b2, equilibrium, fraction=0.5):
    """First time ``B2 B1^2`` reaches ``fraction * equilibrium`` (linear interpolation); inf if never."""
    prod = b2 * b1 * b1
    goal = fraction * equilibrium
    hit = np.flatnonzero(prod >= goal)
    if hit.size == 0:
        return np.inf
    i = hit[0]
    if i == 0:
        return float(t[0])
    w = (goal - prod[i - 1]) / (prod[i] - prod[i - 1])
    return float(t[i - 1] + w * (t[i] - t[i - 1]))
