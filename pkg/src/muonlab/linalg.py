"""
Dense small-matrix linear algebra.

Matrices are plain two-dimensional ``float64`` numpy arrays. The module
provides a one-sided Jacobi SVD (deterministic cyclic sweeps), exact and
Newton-Schulz orthogonalization, the three matrix norms used by the
optimizers, effective-rank diagnostics and a plain-text matrix format.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, NumericalDivergenceError

# Quintic Newton-Schulz coefficients (a, b, c).
NS_COEFFICIENTS = (3.4445, -4.7750, 2.0315)

DEFAULT_RANK_CUTOFF = 1e-12
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def as_matrix(a, name="a"):
    """Validate ``a`` as a finite 2-D float64 array and return it.

    Raises
    ------
    InvalidInputError
        If ``a`` is not two-dimensional or holds NaN/Inf.
    """
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class SvdResult:
    """Compact SVD ``a = u @ diag(s) @ vt`` keeping only positive singular values."""

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    @property
    def rank(self):
        return int(self.s.shape[0])

    def reconstruct(self):
        return (self.u * self.s) @ self.vt


def _round_robin_rounds(n):
    # Chess-tournament schedule: n-1 rounds of n/2 disjoint pairs covering
    # every pair exactly once. Odd n gets a dummy column index n.
    players = list(range(n + (n % 2)))
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = []
        for i in range(size // 2):
            p, q = players[i], players[size - 1 - i]
            if p < n and q < n:
                pairs.append((min(p, q), max(p, q)))
        if pairs:
            rounds.append(np.array(pairs, dtype=np.intp).T)
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _jacobi_tall(a, tol, max_sweeps):
    """One-sided Jacobi on a tall matrix (m >= n); returns (work, v) with work = a @ v."""
    work = a.copy()
    n = work.shape[1]
    v = np.eye(n)
    if n < 2:
        return work, v
    rounds = _round_robin_rounds(n)
    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            ap = work[:, p]
            aq = work[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not np.any(active):
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            # t = sign(zeta) / (|zeta| + sqrt(1 + zeta^2)) with zeta = d / g2,
            # rearranged so tiny gamma cannot overflow.
            d, g2 = beta - alpha, 2.0 * gamma
            sign = np.where(d == 0, 1.0, np.sign(d) * np.sign(g2))
            t = sign * np.abs(g2) / (np.abs(d) + np.hypot(g2, d))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for mat in (work, v):
                mp = mat[:, p].copy()
                mq = mat[:, q]
                mat[:, p] = c * mp - s * mq
                mat[:, q] = s * mp + c * mq
        if not rotated:
            break
    return work, v


def _apply_sign_convention(u, vt):
    # First entry of each u column that is clearly nonzero becomes non-negative.
    if u.shape[1] == 0:
        return u, vt
    mask = np.abs(u) > 1e-12
    first = np.argmax(mask, axis=0)
    signs = np.sign(u[first, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, vt * signs[:, None]


def _truncate(u, s, vt, rank_cutoff, shape):
    order = np.argsort(-s, kind="stable")
    u, s, vt = u[:, order], s[order], vt[order, :]
    if s.size == 0 or s[0] == 0.0:
        m, n = shape
        return np.zeros((m, 0)), np.zeros(0), np.zeros((0, n))
    floor = max(shape) * np.finfo(np.float64).eps
    keep = s > max(rank_cutoff, floor) * s[0]
    return u[:, keep], s[keep], vt[keep, :]


def svd_compact(a, rank_cutoff=DEFAULT_RANK_CUTOFF, method="jacobi"):
    """
    Compact singular value decomposition.

    Parameters
    ----------
    a : array_like, shape (m, n)
        Finite real matrix.
    rank_cutoff : float
        Singular values ``<= rank_cutoff * max(s)`` are dropped. With 0 only
        values at machine-precision level relative to ``max(s)`` are dropped.
    method : {"jacobi", "lapack"}
        ``"jacobi"`` is the deterministic one-sided Jacobi sweep used as the
        reference path; ``"lapack"`` defers to ``numpy.linalg.svd`` and is the
        fast path for large training runs. Both apply the same truncation,
        ordering and sign convention.

    Returns
    -------
    SvdResult
        ``u`` has orthonormal columns, ``s`` is non-increasing and positive,
        ``vt`` has orthonormal rows. The first clearly nonzero entry of every
        column of ``u`` is non-negative.
    """
    a = as_matrix(a)
    if rank_cutoff < 0:
        raise InvalidInputError("rank_cutoff must be non-negative")
    m, n = a.shape
    if method == "lapack":
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    elif method == "jacobi":
        transposed = m < n
        tall = a.T if transposed else a
        work, v = _jacobi_tall(tall, JACOBI_TOL, JACOBI_MAX_SWEEPS)
        s = np.linalg.norm(work, axis=0)
        safe = np.where(s > 0, s, 1.0)
        uu = work / safe
        if transposed:
            u, vt = v, uu.T
        else:
            u, vt = uu, v.T
    else:
        raise InvalidInputError(f"unknown svd method {method!r}")
    u, s, vt = _truncate(u, s, vt, rank_cutoff, a.shape)
    u, vt = _apply_sign_convention(u, vt)
    return SvdResult(np.ascontiguousarray(u), s, np.ascontiguousarray(vt))


def orthogonalize_exact(g, rank_cutoff=DEFAULT_RANK_CUTOFF, method="jacobi"):
    """Replace every nonzero singular value of ``g`` by one (``u @ vt``).

    The zero matrix maps to the zero matrix of the same shape.
    """
    res = svd_compact(g, rank_cutoff=rank_cutoff, method=method)
    return res.u @ res.vt


def newton_schulz_orthogonalize(g, iterations=5, coefficients=NS_COEFFICIENTS):
    """
    Approximate orthogonalization by the quintic Newton-Schulz iteration.

    ``g`` is scaled to unit Frobenius norm and then iterated
    ``X <- a X + b (X X^T) X + c (X X^T)^2 X``. The output singular values
    approximate one but are not driven to it exactly; with the default
    coefficients they land in a band around one.

    Raises
    ------
    InvalidInputError
        If ``g`` is the zero matrix or ``iterations < 1``.
    NumericalDivergenceError
        If an intermediate iterate becomes non-finite.
    """
    x = as_matrix(g, "g")
    if iterations < 1:
        raise InvalidInputError("iterations must be a positive integer")
    norm = np.linalg.norm(x)
    if norm == 0.0:
        raise InvalidInputError("cannot orthogonalize the zero matrix")
    a, b, c = coefficients
    transposed = x.shape[0] > x.shape[1]
    if transposed:
        x = x.T
    x = x / norm
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(iterations):
            gram = x @ x.T
            x = a * x + (b * gram + c * (gram @ gram)) @ x
            if not np.all(np.isfinite(x)):
                raise NumericalDivergenceError("Newton-Schulz iterate became non-finite")
    return x.T if transposed else x


def singular_values(a, method="jacobi"):
    """All singular values of ``a`` (no truncation), non-increasing."""
    a = as_matrix(a)
    if a.size == 0:
        return np.zeros(0)
    if method == "lapack":
        return np.linalg.svd(a, compute_uv=False)
    tall = a.T if a.shape[0] < a.shape[1] else a
    work, _ = _jacobi_tall(tall, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    return np.sort(np.linalg.norm(work, axis=0))[::-1]


def operator_norm(a):
    """Largest singular value."""
    s = singular_values(a)
    return float(s[0]) if s.size else 0.0


def frobenius_norm(a):
    return float(np.sqrt(np.sum(as_matrix(a) ** 2)))


def nuclear_norm(a):
    """Sum of singular values."""
    return float(np.sum(singular_values(a)))


def effective_rank(a, threshold_ratio=0.01):
    """
    Two effective-rank measures of ``a``.

    Returns
    -------
    threshold_rank : int
        Number of singular values ``>= threshold_ratio * sigma_max``.
    entropy_rank : float
        ``exp(H(p))`` with ``p_i = s_i / sum(s)``, the spectral-entropy rank.
    """
    if not 0.0 < threshold_ratio < 1.0:
        raise InvalidInputError("threshold_ratio must lie in (0, 1)")
    s = singular_values(a)
    if s.size == 0 or s[0] == 0.0:
        raise InvalidInputError("effective rank of the zero matrix is undefined")
    threshold_rank = int(np.sum(s >= threshold_ratio * s[0]))
    p = s[s > 0] / np.sum(s)
    entropy_rank = float(np.exp(-np.sum(p * np.log(p))))
    return threshold_rank, entropy_rank


def format_matrix(a):
    """Serialize to the text format: ``rows cols`` header, one row per line."""
    a = as_matrix(a)
    lines = [f"{a.shape[0]} {a.shape[1]}"]
    for row in a:
        lines.append(" ".join(f"{x:.17g}" for x in row))
    return "\n".join(lines) + "\n"


def parse_matrix(text):
    """Inverse of :func:`format_matrix`."""
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise InvalidInputError("empty matrix file")
    try:
        rows, cols = (int(tok) for tok in lines[0].split())
    except ValueError as exc:
        raise InvalidInputError(f"bad matrix header {lines[0]!r}") from exc
    if rows < 0 or cols < 0 or len(lines) - 1 != rows:
        raise InvalidInputError(f"expected {rows} data rows, found {len(lines) - 1}")
    data = np.zeros((rows, cols))
    for i, line in enumerate(lines[1:]):
        vals = line.split()
        if len(vals) != cols:
            raise InvalidInputError(f"row {i} has {len(vals)} entries, expected {cols}")
        data[i] = [float(v) for v in vals]
    return as_matrix(data)


def save_matrix(path, a):
    Path(path).write_text(format_matrix(a))


def load_matrix(path):
    return parse_matrix(Path(path).read_text())
