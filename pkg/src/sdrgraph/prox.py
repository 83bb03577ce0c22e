"""Proximal maps used by the splitting solver.

Every operator returns exact zeros (entries, singular values, eigenvalues or
columns) where the penalty is active, so structure can be read directly from
its output.  The ``*_subdiff_distance`` helpers measure how far a candidate
dual element lies from the subdifferential of the corresponding penalty; they
back both :class:`ProxReport` and the solver's KKT certificate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure


@dataclass(frozen=True, eq=False)
class ProxReport:
    input: np.ndarray
    threshold: float
    zeros: int
    residual: float


def _check_t(t: float) -> float:
    t = float(t)
    if not t >= 0:
        raise ValueError("threshold must be nonnegative")
    return t


def _eigh(m: np.ndarray):
    try:
        return np.linalg.eigh(0.5 * (m + m.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc


def _svd(m: np.ndarray):
    try:
        return np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD failed: {exc}") from exc


# -- operators ---------------------------------------------------------------


def soft_threshold(m, t: float, penalize_diagonal: bool = True) -> np.ndarray:
    """Entrywise ``sign(m) * max(|m| - t, 0)``."""
    t = _check_t(t)
    m = np.asarray(m, dtype=float)
    out = np.sign(m) * np.maximum(np.abs(m) - t, 0.0)
    if not penalize_diagonal and m.ndim == 2:
        np.fill_diagonal(out, np.diag(m))
    return out


def svt_with_rank(m, t: float) -> tuple[np.ndarray, int]:
    t = _check_t(t)
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return m.copy(), 0
    u, s, vt = _svd(m)
    s = np.maximum(s - t, 0.0)
    r = int(np.count_nonzero(s))
    return (u[:, :r] * s[:r]) @ vt[:r], r


def svt(m, t: float) -> np.ndarray:
    """Singular value thresholding, the prox of ``t * ||.||_*``."""
    return svt_with_rank(m, t)[0]


def psd_trace_factors(m, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvectors and shrunk eigenvalues kept by :func:`psd_trace_prox`."""
    t = _check_t(t)
    w, v = _eigh(np.asarray(m, dtype=float))
    w = np.maximum(w - t, 0.0)
    keep = w > 0
    return v[:, keep], w[keep]


def psd_trace_prox(m, t: float) -> np.ndarray:
    """Prox of ``t * trace(L)`` restricted to ``L >= 0``."""
    v, w = psd_trace_factors(m, t)
    return (v * w) @ v.T


def group_column_prox(m, t: float) -> np.ndarray:
    """Column-wise group shrinkage, the prox of ``t * sum_j ||m[:, j]||_2``."""
    t = _check_t(t)
    m = np.asarray(m, dtype=float)
    norms = np.linalg.norm(m, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > t, 1.0 - t / norms, 0.0)
    return m * scale


def logdet_update(b, sigma_n, rho: float) -> np.ndarray:
    """argmin over Theta of ``-logdet Theta + <Sigma_n, Theta> + rho/2 ||Theta - B||^2``."""
    return logdet_update_eig(b, sigma_n, rho)[0]


def logdet_update_eig(b, sigma_n, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """As :func:`logdet_update`, also returning the eigenvalues of the result."""
    rho = float(rho)
    if not rho > 0:
        raise ValueError("rho must be positive")
    g = np.asarray(b, dtype=float) - np.asarray(sigma_n, dtype=float) / rho
    lam, q = _eigh(g)
    theta = 0.5 * (lam + np.sqrt(lam * lam + 4.0 / rho))
    out = (q * theta) @ q.T
    return 0.5 * (out + out.T), theta


def diagonal_projection(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.diag(np.diag(m))


# -- subdifferential distances -------------------------------------------------


def l1_subdiff_distance(z, x, t: float, penalize_diagonal: bool = True) -> float:
    """Distance from ``z`` to ``t * d||x||_1`` (Frobenius)."""
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    nz = x != 0
    d = np.where(nz, z - t * np.sign(x), np.maximum(np.abs(z) - t, 0.0))
    if not penalize_diagonal and z.ndim == 2:
        # unpenalised diagonal: the subgradient there is {0}
        np.fill_diagonal(d, np.diag(z))
    return float(np.linalg.norm(d))


def _split_svd(x: np.ndarray, tol: float | None = None):
    u, s, vt = np.linalg.svd(x, full_matrices=True)
    if tol is None:
        tol = 10.0 * max(x.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    r = int(np.sum(s > tol))
    return u, vt.T, r


def nuclear_subdiff_distance(z, x, t: float) -> float:
    """Distance from ``z`` to ``t * d||x||_*``."""
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    if z.size == 0:
        return 0.0
    u, v, r = _split_svd(x)
    u2, v2 = u[:, r:], v[:, r:]
    zt = u.T @ z @ v
    err = zt.copy()
    err[r:, r:] = 0.0
    err[:r, :r] -= t * np.eye(r)
    # the block on (ker x')x(ker x) must lie in the spectral ball of radius t
    w = u2.T @ z @ v2
    excess = 0.0
    if w.size:
        sw = np.linalg.svd(w, compute_uv=False)
        excess = float(np.sum(np.maximum(sw - t, 0.0) ** 2))
    return float(np.sqrt(np.sum(err * err) + excess))


def psd_trace_subdiff_distance(z, x, t: float) -> float:
    """Distance from ``z`` to the subdifferential of ``t*trace + indicator(PSD)`` at ``x``.

    That set is ``{t I - P : P >= 0, P x = 0}``.
    """
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    if z.size == 0:
        return 0.0
    w, v = np.linalg.eigh(0.5 * (x + x.T))
    tol = 10.0 * x.shape[0] * np.finfo(float).eps * max(np.abs(w).max(), 0.0)
    pos = w > tol
    neg_part = float(np.sum(np.minimum(w, 0.0) ** 2))  # x itself infeasible
    d = v.T @ (t * np.eye(z.shape[0]) - z) @ v  # must equal P in this basis
    a = d[np.ix_(pos, pos)]
    b = d[np.ix_(pos, ~pos)]
    c = d[np.ix_(~pos, ~pos)]
    cneg = 0.0
    if c.size:
        cneg = float(np.sum(np.minimum(np.linalg.eigvalsh(0.5 * (c + c.T)), 0.0) ** 2))
    return float(np.sqrt(np.sum(a * a) + 2.0 * np.sum(b * b) + cneg + neg_part))


def group_subdiff_distance(z, x, t: float) -> float:
    """Distance from ``z`` to ``t * d(sum of column norms)`` at ``x``."""
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    total = 0.0
    for j in range(x.shape[1] if x.ndim == 2 else 0):
        nx = np.linalg.norm(x[:, j])
        if nx > 0:
            total += float(np.sum((z[:, j] - t * x[:, j] / nx) ** 2))
        else:
            total += max(np.linalg.norm(z[:, j]) - t, 0.0) ** 2
    return float(np.sqrt(total))


def diagonal_normal_distance(z) -> float:
    """Distance from ``z`` to the normal cone of the diagonal subspace (off-diagonal matrices)."""
    return float(np.linalg.norm(np.diag(np.asarray(z, dtype=float))))


# -- reports -------------------------------------------------------------------


def prox_report(kind: str, m, t: float = 0.0, **kw) -> tuple[np.ndarray, ProxReport]:
    """Apply a prox and certify it through the inclusion ``m - x in t*df(x)``."""
    m = np.asarray(m, dtype=float)
    if kind == "soft_threshold":
        pd = kw.get("penalize_diagonal", True)
        x = soft_threshold(m, t, pd)
        res = l1_subdiff_distance(m - x, x, t, pd)
        zeros = int(np.sum(x == 0))
    elif kind == "svt":
        x, r = svt_with_rank(m, t)
        res = nuclear_subdiff_distance(m - x, x, t)
        zeros = min(m.shape) - r
    elif kind == "psd_trace_prox":
        v, w = psd_trace_factors(m, t)
        x = (v * w) @ v.T
        res = psd_trace_subdiff_distance(m - x, x, t)
        zeros = m.shape[0] - w.size
    elif kind == "group_column_prox":
        x = group_column_prox(m, t)
        res = group_subdiff_distance(m - x, x, t)
        zeros = int(np.sum(np.all(x == 0, axis=0)))
    elif kind == "diagonal_projection":
        x = diagonal_projection(m)
        res = diagonal_normal_distance(m - x)
        zeros = int(np.sum(x == 0))
    elif kind == "logdet_update":
        sigma_n, rho = kw["sigma_n"], kw["rho"]
        x = logdet_update(m, sigma_n, rho)
        res = float(np.linalg.norm(-np.linalg.inv(x) + sigma_n + rho * (x - m)))
        zeros = 0
    else:
        raise ValueError(f"unknown prox {kind!r}")
    return x, ProxReport(m.copy(), float(t), zeros, res)
