"""Small dense linear algebra and statistics kit.

Matrices are plain 2-D ``float64`` numpy arrays (row-major). Everything here
is a pure function of its inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-9
NEG_EIG_TOL = 1e-9
JACOBI_TOL = 1e-12
MAX_SWEEPS = 100


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class InputError(ValueError):
    pass


def as_dense(a) -> np.ndarray:
    """Validate and return ``a`` as a finite 2-D float64 array."""
    m = np.array(a, dtype=np.float64, ndmin=2)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError("matrix has non-finite entries")
    return m


def _check_symmetric(a: np.ndarray) -> None:
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"matrix must be square, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ShapeError("matrix is not symmetric")


def _round_robin(d: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: d-1 (or d) rounds of disjoint index pairs."""
    players = list(range(d)) + ([-1] if d % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        if pairs:
            rounds.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def sym_eig(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations on disjoint index pairs commute, so each round of a
    round-robin ordering is applied as one orthogonal similarity transform.

    Returns
    -------
    eigenvalues : ndarray, shape (d,)
        Sorted in descending order.
    eigenvectors : ndarray, shape (d, d)
        Orthonormal columns; ``a ~= V @ diag(w) @ V.T``.
    """
    a = as_dense(a)
    _check_symmetric(a)
    d = a.shape[0]
    A = 0.5 * (a + a.T)
    V = np.eye(d)
    rounds = _round_robin(d)
    off_mask = ~np.eye(d, dtype=bool)

    for _ in range(MAX_SWEEPS):
        off = math.sqrt(float(np.sum(A[off_mask] ** 2)))
        diag = math.sqrt(float(np.sum(np.diag(A) ** 2)))
        if off == 0.0 or off < JACOBI_TOL * diag:
            break
        for p, q in rounds:
            apq = A[p, q]
            app = A[p, p]
            aqq = A[q, q]
            nz = apq != 0.0
            theta = np.where(nz, (aqq - app) / np.where(nz, 2.0 * apq, 1.0), 0.0)
            t = np.where(nz, np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0)), 0.0)
            t = np.where(nz & (theta == 0.0), 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            J = np.eye(d)
            J[p, p] = c
            J[q, q] = c
            J[p, q] = s
            J[q, p] = -s
            A = J.T @ A @ J
            A = 0.5 * (A + A.T)
            V = V @ J
    else:
        raise DomainError("Jacobi iteration did not converge")

    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def _clamped_eigs(w: np.ndarray) -> np.ndarray:
    tol = NEG_EIG_TOL * max(1.0, float(np.max(np.abs(w), initial=0.0)))
    if np.any(w < -tol):
        raise DomainError(f"matrix is not positive semi-definite (min eigenvalue {w.min():.3e})")
    return np.clip(w, 0.0, None)


def psd_sqrt(s) -> np.ndarray:
    """Symmetric square root of a PSD matrix."""
    w, V = sym_eig(s)
    return (V * np.sqrt(_clamped_eigs(w))) @ V.T


def trace_sqrt_product(s1, s2) -> float:
    """Tr((s1 s2)^(1/2)) for symmetric PSD s1, s2.

    Computed as Tr((h s2 h)^(1/2)) with h = s1^(1/2), which is symmetric
    and shares its spectrum with s1 s2.
    """
    s1 = as_dense(s1)
    s2 = as_dense(s2)
    if s1.shape != s2.shape:
        raise ShapeError(f"dimension mismatch: {s1.shape} vs {s2.shape}")
    _check_symmetric(s2)
    h = psd_sqrt(s1)
    m = h @ s2 @ h
    w, _ = sym_eig(0.5 * (m + m.T))
    return float(np.sum(np.sqrt(_clamped_eigs(w))))


def _betacf(x: float, a: float, b: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise DomainError(f"incomplete beta continued fraction did not converge (x={x}, a={a}, b={b})")


def reg_incomplete_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if not (a > 0 and b > 0) or not (0.0 <= x <= 1.0):
        raise DomainError(f"reg_incomplete_beta out of domain: x={x}, a={a}, b={b}")
    if x == 0.0 or x == 1.0:
        return float(x)
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        val = front * _betacf(x, a, b) / a
    else:
        val = 1.0 - front * _betacf(1.0 - x, b, a) / b
    return min(1.0, max(0.0, val))


def f_sf(f: float, df1: float, df2: float) -> float:
    """Upper tail P(F > f) of the F distribution."""
    if f <= 0.0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return reg_incomplete_beta(df2 / (df2 + df1 * f), df2 / 2.0, df1 / 2.0)


@dataclass(frozen=True)
class AnovaResult:
    f_stat: float
    p_value: float
    df_between: int
    df_within: int
    degenerate: bool


def one_way_anova(groups) -> AnovaResult:
    """One-way ANOVA across ``groups`` (each a sequence of reals).

    Zero within-group variance is not an error: the result is flagged
    ``degenerate`` with p = 0 when the group means differ (p = 1 when they
    do not).
    """
    arrs = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(arrs) < 2:
        raise InputError("one_way_anova needs at least 2 groups")
    if any(len(g) < 2 for g in arrs):
        raise InputError("every group needs at least 2 observations")
    if not all(np.all(np.isfinite(g)) for g in arrs):
        raise InputError("non-finite observation")

    k = len(arrs)
    n = sum(len(g) for g in arrs)
    grand = np.concatenate(arrs).mean()
    means = [g.mean() for g in arrs]
    ssb = float(sum(len(g) * (m - grand) ** 2 for g, m in zip(arrs, means)))
    ssw = float(sum(np.sum((g - m) ** 2) for g, m in zip(arrs, means)))
    dfb, dfw = k - 1, n - k

    if ssw == 0.0:
        if ssb == 0.0:
            return AnovaResult(0.0, 1.0, dfb, dfw, True)
        return AnovaResult(math.inf, 0.0, dfb, dfw, True)
    f = (ssb / dfb) / (ssw / dfw)
    return AnovaResult(f, f_sf(f, dfb, dfw), dfb, dfw, False)
