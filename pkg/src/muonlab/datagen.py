"""
Seeded data generators and initializations.

Randomness flows through :class:`Rng`, a thin wrapper around numpy's
counter-based Philox generator. ``Rng.substream(key)`` derives an
independent stream from the seed and a path of keys, so adding a draw in
one substream never shifts another.
"""

import zlib
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError
from .models import DeepLinearNet, PopulationStats, RoutingNet

# One target vector per number (rows), dimension 7: orthonormal +-1/2
# patterns on the first four coordinates. Equal target strengths keep
# every shared mode ahead of the non-shared ones in the learning race.
DEFAULT_ROUTING_TARGETS = 0.5 * np.array([
    [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, -1.0, 1.0, -1.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, -1.0, -1.0, 0.0, 0.0, 0.0],
    [1.0, -1.0, -1.0, 1.0, 0.0, 0.0, 0.0],
])


def _key_to_int(key):
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise InvalidInputError("substream keys must be non-negative")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


class Rng:
    """Seeded, splittable random source."""

    def __init__(self, seed, path=()):
        seed = int(seed)
        if not 0 <= seed < 2 ** 64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self.path = tuple(path)
        ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(_key_to_int(k) for k in self.path))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def substream(self, *keys):
        """Independent stream identified by this stream's path extended with ``keys``."""
        return Rng(self.seed, self.path + keys)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path!r})"


def random_orthogonal(rng, n):
    """Haar-distributed n x n orthogonal matrix (QR with sign fix)."""
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))


@dataclass
class RegressionData:
    xs: np.ndarray
    ys: np.ndarray
    stats: PopulationStats
    q: np.ndarray          # left singular vectors of the teacher (columns)
    r: np.ndarray          # right singular vectors of the teacher (columns)
    spectrum: np.ndarray


def gaussian_regression(rng, n, d_in, d_out, teacher_spectrum, noise=0.0):
    """
    Standard Gaussian inputs and a noisy linear teacher with a designed spectrum.

    The teacher is ``A = Q diag(spectrum) R^T`` with random orthogonal
    ``Q, R``; ``ys = xs A^T + noise * eps``. The returned ``stats`` are the
    exact population statistics (``sigma_xx = I``, ``sigma_yx = A``).
    """
    spectrum = np.asarray(teacher_spectrum, dtype=np.float64)
    if min(n, d_in, d_out) < 1:
        raise InvalidInputError("n, d_in and d_out must be positive")
    if spectrum.ndim != 1 or spectrum.size > min(d_in, d_out) or spectrum.size == 0:
        raise InvalidInputError("teacher_spectrum length must be in [1, min(d_in, d_out)]")
    if np.any(spectrum < 0) or noise < 0:
        raise InvalidInputError("spectrum and noise must be non-negative")
    k = spectrum.size
    q = random_orthogonal(rng.substream("teacher_q"), d_out)[:, :k]
    r = random_orthogonal(rng.substream("teacher_r"), d_in)[:, :k]
    a = (q * spectrum) @ r.T
    xs = rng.substream("inputs").normal(size=(n, d_in))
    ys = xs @ a.T
    if noise > 0:
        ys = ys + noise * rng.substream("noise").normal(size=(n, d_out))
    return RegressionData(xs, ys, PopulationStats(np.eye(d_in), a), q, r, spectrum)


def balanced_small_init(rng, d_in, hidden, d_out, scale=0.01, exact_balance=False):
    """
    Gaussian initialization with standard deviation ``scale``.

    With ``exact_balance`` the factors are replaced by a balanced
    factorization of the same product ``V U``: ``U = Z S^{1/2} R^T``,
    ``V = P S^{1/2} Z^T`` where ``Z`` is the polar factor of ``U R``.
    """
    if not scale > 0:
        raise InvalidInputError("scale must be positive")
    u = rng.substream("u").normal(0.0, scale, size=(hidden, d_in))
    v = rng.substream("v").normal(0.0, scale, size=(d_out, hidden))
    if exact_balance:
        p, s, rt = np.linalg.svd(v @ u, full_matrices=False)
        k = int(np.sum(s > 1e-14 * s[0])) if s.size and s[0] > 0 else 0
        p, s, r = p[:, :k], s[:k], rt[:k].T
        a, _, bt = np.linalg.svd(u @ r, full_matrices=False)
        z = a @ bt
        root = np.sqrt(s)
        u = (z * root) @ r.T
        v = (p * root) @ z.T
    return DeepLinearNet(u, v)


def aligned_init(rng, q, r, hidden, sigma0):
    """
    Balanced initialization aligned with teacher factors ``q``, ``r``.

    Every teacher mode starts with product singular value ``sigma0``; each
    layer carries ``sqrt(sigma0)`` along a random orthonormal hidden frame.
    """
    k = q.shape[1]
    if hidden < k:
        raise InvalidInputError("hidden width must be at least the teacher rank")
    z = random_orthogonal(rng.substream("hidden_frame"), hidden)[:, :k]
    root = np.sqrt(sigma0)
    return DeepLinearNet(root * z @ r.T, root * q @ z.T)


class RoutingSample(NamedTuple):
    in_src: int
    out_src: int
    x: np.ndarray
    y: np.ndarray
    number: int


def make_source_encodings(rng, m, n_numbers, dim=4):
    """
    Independent random orthonormal encodings per input source.

    Returns
    -------
    ndarray, shape (m, n_numbers, dim)
        ``enc[j, i]`` is the vector encoding number ``i`` in source ``j``.
    """
    if n_numbers > dim:
        raise InvalidInputError(f"cannot fit {n_numbers} orthonormal vectors in dimension {dim}")
    out = np.empty((m, n_numbers, dim))
    for j in range(m):
        out[j] = random_orthogonal(rng.substream("encoding", j), dim)[:, :n_numbers].T
    return out


def check_encodings(encodings, tol=1e-10):
    encodings = np.asarray(encodings, dtype=np.float64)
    gram = np.einsum("jni,jki->jnk", encodings, encodings)
    err = np.abs(gram - np.eye(encodings.shape[1])).reshape(len(encodings), -1).max(axis=1)
    bad = np.flatnonzero(err > tol)
    if bad.size:
        raise InvalidInputError(f"encodings for source {bad[0]} are not orthonormal")


def routing_sample_batch(rng, m, k, encodings, targets):
    """
    One training batch: for every input source ``j`` and shift ``s < k`` a
    single sample routed to ``o = (j + s) mod m`` with a uniformly drawn number.
    """
    encodings = np.asarray(encodings, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if encodings.shape[0] != m or not 1 <= k <= m:
        raise InvalidInputError("need m encodings and 1 <= k <= m")
    check_encodings(encodings)
    n_numbers = encodings.shape[1]
    if targets.shape[0] != n_numbers:
        raise InvalidInputError("need one target per encoded number")
    batch = []
    for j in range(m):
        for s in range(k):
            o = (j + s) % m
            i = int(rng.integers(0, n_numbers))
            batch.append(RoutingSample(j, o, encodings[j, i], targets[i], i))
    return batch


def allowed_pairs(m, k):
    return {(j, (j + s) % m) for j in range(m) for s in range(k)}


def routing_small_init(rng, m, in_dim=4, hidden=64, out_dim=7, scale=1e-3, hidden_scale=None):
    """Independent Gaussian layers; decoders are drawn separately (not tied)."""
    hidden_scale = scale if hidden_scale is None else hidden_scale
    enc = [rng.substream("encoder", j).normal(0.0, scale, size=(hidden, in_dim)) for j in range(m)]
    dec = [rng.substream("decoder", o).normal(0.0, scale, size=(out_dim, hidden)) for o in range(m)]
    hid = rng.substream("hidden").normal(0.0, hidden_scale, size=(hidden, hidden))
    return RoutingNet(enc, dec, hid)


@dataclass(frozen=True)
class SpuriousSpec:
    """
    Knobs of the synthetic spurious-feature task.

    The label ``z`` (dimension ``d_out``) is visible through noisy core
    features on the first ``d_in - 1`` coordinates and through one clean
    spurious coordinate (the last) that copies ``z[0]`` scaled by
    ``spurious_strength``.
    """

    core_strength: float = 1.0
    spurious_strength: float = 1.0
    noise_level: float = 1.0
    d_in: int = 6
    d_out: int = 2

    def __post_init__(self):
        if not self.core_strength > 0:
            raise InvalidInputError("core_strength must be positive")
        # Zero is allowed: it makes the two evaluation sets identical.
        if not self.spurious_strength >= 0:
            raise InvalidInputError("spurious_strength must be non-negative")
        if not self.noise_level >= 0:
            raise InvalidInputError("noise_level must be non-negative")
        if self.d_out < 1 or self.d_in - 1 < self.d_out:
            raise InvalidInputError("need 1 <= d_out <= d_in - 1")


@dataclass
class SpuriousData:
    xs: np.ndarray
    ys: np.ndarray
    eval_with: tuple        # (xs, ys) carrying the spurious coordinate
    eval_without: tuple     # same samples with the spurious coordinate zeroed
    stats: PopulationStats  # exact population statistics of the training law
    sigma_yy: np.ndarray


def spurious_mixing(rng, spec):
    """Input map ``A`` with ``x = A z + noise``; the last row is the spurious pixel."""
    core = random_orthogonal(rng.substream("core_frame"), spec.d_in - 1)[:, :spec.d_out]
    a = np.zeros((spec.d_in, spec.d_out))
    a[:-1] = spec.core_strength * core
    a[-1, 0] = spec.spurious_strength
    return a


def spurious_dataset(rng, spec, n, n_eval=None):
    """
    Training set and two evaluation sets for the spurious-feature task.

    Returns
    -------
    SpuriousData
        ``eval_without`` shares inputs and labels with ``eval_with`` except
        that the last input coordinate is zero.
    """
    if n < 1:
        raise InvalidInputError("n must be positive")
    n_eval = n if n_eval is None else n_eval
    a = spurious_mixing(rng, spec)
    noise_var = np.full(spec.d_in, spec.noise_level ** 2)
    noise_var[-1] = 0.0

    def draw(stream, count):
        z = stream.substream("labels").normal(size=(count, spec.d_out))
        eps = stream.substream("noise").normal(size=(count, spec.d_in))
        eps[:, -1] = 0.0
        return z @ a.T + spec.noise_level * eps, z

    xs, ys = draw(rng.substream("train"), n)
    ex, ey = draw(rng.substream("eval"), n_eval)
    ex0 = ex.copy()
    ex0[:, -1] = 0.0
    stats = PopulationStats(a @ a.T + np.diag(noise_var), a.T.copy())
    return SpuriousData(xs, ys, (ex, ey), (ex0, ey.copy()), stats, np.eye(spec.d_out))
