"""Block algebra for joint precision matrices over (responses, covariates).

The joint precision is partitioned as

    Theta = [[Theta_Y,    Theta_YX],
             [Theta_YX',  Theta_X ]]

with ``p`` responses and ``q`` covariates.  The structured parametrisation
``(S_Y, L_Y, Theta_YX, Theta_X)`` maps onto it through :func:`assemble`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from .errors import NumericalFailure

LOG_2PI = float(np.log(2.0 * np.pi))

SYMMETRY_RTOL = 1e-8


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def symmetrize(m, name: str = "matrix") -> np.ndarray:
    """Return ``(M + M')/2``; reject inputs that are not nearly symmetric."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    scale = max(np.abs(m).max(initial=0.0), 1e-300)
    if np.abs(m - m.T).max(initial=0.0) > SYMMETRY_RTOL * scale:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (m + m.T)


def rank_tolerance(m: np.ndarray, sv: np.ndarray | None = None) -> float:
    if sv is None:
        sv = np.linalg.svd(m, compute_uv=False)
    smax = sv[0] if sv.size else 0.0
    return 10.0 * max(m.shape) * np.finfo(float).eps * smax


def numerical_rank(m, tol: float | None = None) -> int:
    """Rank with the threshold ``10 * max(shape) * eps * sigma_max``."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        return 0
    sv = np.linalg.svd(m, compute_uv=False)
    if tol is None:
        tol = rank_tolerance(m, sv)
    return int(np.sum(sv > tol))


class Variant(str, Enum):
    SDR_FM = "sdr-fm"
    SDR_GM = "sdr-gm"
    SDR_LVGM = "sdr-lvgm"
    CS_LVGM = "cs-lvgm"
    CS_GM = "cs-gm"

    @property
    def has_latent(self) -> bool:
        return self in (Variant.SDR_FM, Variant.SDR_LVGM, Variant.CS_LVGM)

    @property
    def uses_delta(self) -> bool:
        return self in (Variant.SDR_LVGM, Variant.CS_LVGM)

    @property
    def column_sparse(self) -> bool:
        return self in (Variant.CS_LVGM, Variant.CS_GM)

    @property
    def is_factor(self) -> bool:
        return self is Variant.SDR_FM


@dataclass(frozen=True)
class RegConfig:
    """Estimator variant and its regularisation weights.

    ``delta`` only matters for the latent-variable graphical variants; the
    factor and graphical variants ignore it.
    """

    variant: Variant
    lambda_n: float
    gamma: float = 1.0
    delta: float = 1.0
    penalize_diagonal: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not self.lambda_n >= 0:
            raise ValueError("lambda_n must be nonnegative")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.variant.uses_delta and not self.delta > 0:
            raise ValueError("delta must be positive for latent-variable variants")

    @property
    def sparse_weight(self) -> float:
        """Multiplier of the l1 term inside the bracket (delta or 1)."""
        return self.delta if self.variant.uses_delta else 1.0


@dataclass(frozen=True, eq=False)
class JointPrecision:
    """Symmetric ``(p+q) x (p+q)`` precision with named blocks."""

    p: int
    q: int
    theta: np.ndarray

    def __post_init__(self):
        theta = symmetrize(self.theta, "theta")
        if theta.shape != (self.p + self.q,) * 2:
            raise ValueError(
                f"theta has shape {theta.shape}, expected {(self.p + self.q,) * 2}"
            )
        object.__setattr__(self, "theta", _frozen(theta))

    @property
    def dim(self) -> int:
        return self.p + self.q

    @property
    def theta_Y(self) -> np.ndarray:
        return self.theta[: self.p, : self.p]

    @property
    def theta_YX(self) -> np.ndarray:
        return self.theta[: self.p, self.p :]

    @property
    def theta_X(self) -> np.ndarray:
        return self.theta[self.p :, self.p :]

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.theta)

    @property
    def is_pd(self) -> bool:
        return self.dim == 0 or bool(self.eigenvalues[0] > 0)

    @cached_property
    def sigma(self) -> np.ndarray:
        if not self.is_pd:
            raise NumericalFailure("theta is not positive definite")
        s = np.linalg.inv(self.theta)
        return _frozen(0.5 * (s + s.T))

    @property
    def sigma_Y(self) -> np.ndarray:
        return self.sigma[: self.p, : self.p]

    @property
    def sigma_YX(self) -> np.ndarray:
        return self.sigma[: self.p, self.p :]

    @property
    def sigma_X(self) -> np.ndarray:
        return self.sigma[self.p :, self.p :]


@dataclass(frozen=True, eq=False)
class StructuredParams:
    """Quadruple ``(S_Y, L_Y, Theta_YX, Theta_X)``.

    Also used for error elements (differences of two quadruples), so no
    definiteness is enforced here; ``latent`` marks ``l_Y`` as a latent
    effect that is expected to be PSD.
    """

    s_Y: np.ndarray
    l_Y: np.ndarray
    theta_YX: np.ndarray
    theta_X: np.ndarray
    latent: bool = field(default=False)

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.s_Y, dtype=float))
        l = np.atleast_2d(np.asarray(self.l_Y, dtype=float))
        p = s.shape[0]
        k = np.asarray(self.theta_YX, dtype=float).reshape(p, -1) if p else np.zeros((0, 0))
        q = k.shape[1]
        o = np.asarray(self.theta_X, dtype=float).reshape(q, q)
        if s.shape != (p, p) or l.shape != (p, p):
            raise ValueError("s_Y and l_Y must both be p x p")
        s = symmetrize(s, "s_Y")
        l = symmetrize(l, "l_Y")
        o = symmetrize(o, "theta_X") if q else o
        if self.latent and p and np.linalg.eigvalsh(l)[0] < -1e-10 * max(1.0, np.abs(l).max()):
            raise ValueError("l_Y flagged latent but is not PSD")
        for name, v in (("s_Y", s), ("l_Y", l), ("theta_YX", k), ("theta_X", o)):
            object.__setattr__(self, name, _frozen(v))

    @property
    def p(self) -> int:
        return self.s_Y.shape[0]

    @property
    def q(self) -> int:
        return self.theta_X.shape[0]

    def blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.s_Y, self.l_Y, self.theta_YX, self.theta_X

    def __sub__(self, other: StructuredParams) -> StructuredParams:
        return StructuredParams(*(a - b for a, b in zip(self.blocks(), other.blocks())))

    def __add__(self, other: StructuredParams) -> StructuredParams:
        return StructuredParams(*(a + b for a, b in zip(self.blocks(), other.blocks())))

    def scale(self, c: float) -> StructuredParams:
        return StructuredParams(*(c * a for a in self.blocks()))

    def inner(self, other: StructuredParams) -> float:
        return float(sum(np.sum(a * b) for a, b in zip(self.blocks(), other.blocks())))

    @classmethod
    def zeros(cls, p: int, q: int) -> StructuredParams:
        return cls(np.zeros((p, p)), np.zeros((p, p)), np.zeros((p, q)), np.zeros((q, q)))


@dataclass(frozen=True)
class ComplexitySummary:
    node_params: int
    edge_params: int
    latent_rank_params: int
    cross_rank_params: int

    @property
    def total(self) -> int:
        return self.node_params + self.edge_params + self.latent_rank_params + self.cross_rank_params


def assemble(params: StructuredParams) -> np.ndarray:
    """Map ``(M, N, K, O)`` to ``[[M - N, K], [K', O]]``."""
    s, l, k, o = params.blocks()
    p, q = params.p, params.q
    if k.shape != (p, q):
        raise ValueError(f"theta_YX has shape {k.shape}, expected {(p, q)}")
    out = np.empty((p + q, p + q))
    out[:p, :p] = s - l
    out[:p, p:] = k
    out[p:, :p] = k.T
    out[p:, p:] = o
    return out


def split_adjoint(z, p: int, q: int) -> StructuredParams:
    """Map a symmetric ``(p+q)`` matrix to ``(Z_Y, Z_Y, Z_YX, Z_X)``.

    This is the block-splitting map paired with :func:`assemble`; because of
    the minus sign on the second argument of ``assemble`` it is not the
    Frobenius adjoint, and no adjointness is claimed.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (p + q, p + q):
        raise ValueError(f"expected a {(p + q, p + q)} matrix, got {z.shape}")
    z = symmetrize(z, "Z")
    zy = z[:p, :p]
    return StructuredParams(zy, zy, z[:p, p:], z[p:, p:])


def _cond(m: np.ndarray) -> float:
    try:
        return float(np.linalg.cond(m))
    except np.linalg.LinAlgError:
        return float("inf")


def sdr_map(theta: JointPrecision) -> np.ndarray:
    """Regression map ``B = -Theta_Y^{-1} Theta_YX`` (equal to ``Sigma_YX Sigma_X^{-1}``).

    The row space of ``B`` is the sufficient linear reduction of the
    covariates.
    """
    ty = theta.theta_Y
    c = _cond(ty)
    if not np.isfinite(c) or c > 1.0 / np.finfo(float).eps:
        raise NumericalFailure(f"Theta_Y is singular (condition number {c:.3g})")
    return -np.linalg.solve(ty, theta.theta_YX)


def _check_pd_cholesky(m: np.ndarray, name: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} is not positive definite") from None


def conditional_loglik(theta_Y, theta_YX, y, x) -> float:
    """Log density of ``y`` under ``N(-Theta_Y^{-1} Theta_YX x, Theta_Y^{-1})``."""
    ty = symmetrize(np.atleast_2d(theta_Y), "theta_Y")
    p = ty.shape[0]
    y = np.asarray(y, dtype=float).reshape(p)
    x = np.asarray(x, dtype=float).ravel()
    k = np.asarray(theta_YX, dtype=float).reshape(p, x.size)
    chol = _check_pd_cholesky(ty, "theta_Y")
    # y - mu = y + Theta_Y^{-1} K x;  quadratic form (y-mu)' Theta_Y (y-mu)
    r = ty @ y + k @ x
    w = np.linalg.solve(chol, r)
    quad = float(w @ w)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return 0.5 * logdet - 0.5 * p * LOG_2PI - 0.5 * quad


def count_parameters(
    p: int,
    q: int = 0,
    edges: int = 0,
    latent_rank: int = 0,
    cross_rank: int = 0,
    cross_columns: int | None = None,
) -> ComplexitySummary:
    """Parameter count of a structured model.

    Nodes contribute ``p``, each edge one parameter, a symmetric rank-``h``
    component ``h*p - h(h-1)/2`` and a rank-``k`` cross block
    ``k(p+q) - k^2``.  For column-sparse cross blocks pass
    ``cross_columns``; every selected column then costs ``p`` parameters.
    """
    if min(p, q, edges, latent_rank, cross_rank) < 0:
        raise ValueError("counts must be nonnegative")
    if latent_rank > p:
        raise ValueError("latent rank exceeds p")
    if cross_rank > min(p, q):
        raise ValueError("cross rank exceeds min(p, q)")
    h, k = latent_rank, cross_rank
    latent = h * p - h * (h - 1) // 2
    if cross_columns is not None:
        if not 0 <= cross_columns <= q:
            raise ValueError("cross_columns must lie in [0, q]")
        cross = cross_columns * p
    else:
        cross = k * (p + q) - k * k
    return ComplexitySummary(p, edges, latent, cross)


def orthonormal_basis(u, name: str = "basis") -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[1] == 0 or numerical_rank(u) < u.shape[1]:
        raise ValueError(f"{name} has linearly dependent columns")
    q, _ = np.linalg.qr(u)
    return q


def principal_angles(u1, u2) -> np.ndarray:
    """Principal angles (degrees, ascending) between two column spaces."""
    q1 = orthonormal_basis(u1, "first basis")
    q2 = orthonormal_basis(u2, "second basis")
    if q1.shape[0] != q2.shape[0]:
        raise ValueError("bases live in different ambient dimensions")
    if q1.shape[1] < q2.shape[1]:
        q1, q2 = q2, q1
    c = q1.T @ q2
    cos = np.clip(np.linalg.svd(c, compute_uv=False), 0.0, 1.0)
    ang = np.arccos(cos)
    # arccos is ill-conditioned near zero angles; take those from the sines
    mask = cos**2 >= 0.5
    if np.any(mask):
        sin = np.linalg.svd(q2 - q1 @ c, compute_uv=False)[::-1]
        ang[mask] = np.arcsin(np.clip(sin[mask], 0.0, 1.0))
    return np.degrees(ang)


def sample_covariance(data) -> np.ndarray:
    """Mean-centred second moment divided by ``n``."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n = data.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    c = data - data.mean(axis=0)
    s = c.T @ c / n
    return 0.5 * (s + s.T)


@dataclass(frozen=True, eq=False)
class FactorReport:
    noise: np.ndarray
    loadings: np.ndarray

    @property
    def low_rank(self) -> np.ndarray:
        return self.loadings @ self.loadings.T

    @property
    def covariance(self) -> np.ndarray:
        return np.diag(self.noise) + self.low_rank


def fm_factor_report(d, l) -> FactorReport:
    """Factor form of ``(D - L)^{-1}`` via Woodbury.

    Returns the diagonal noise ``D^{-1}`` and loadings ``F`` such that
    ``(D - L)^{-1} = diag(noise) + F F'`` with ``rank(F) = rank(L)``.
    """
    d = np.asarray(d, dtype=float)
    dvec = np.diag(d) if d.ndim == 2 else d
    if d.ndim == 2 and np.abs(d - np.diag(dvec)).max(initial=0.0) > 0:
        raise ValueError("D must be diagonal")
    l = symmetrize(np.atleast_2d(l), "L")
    p = dvec.size
    w, v = np.linalg.eigh(l)
    if w.size and w[0] < -1e-10 * max(1.0, abs(w[-1])):
        raise ValueError("L must be PSD")
    if np.any(dvec <= 0):
        raise ValueError("D - L is not positive definite")
    keep = w > rank_tolerance(l, np.sort(np.abs(w))[::-1]) if w.size else np.zeros(0, bool)
    u, lam = v[:, keep], w[keep]
    dinv = 1.0 / dvec
    if lam.size == 0:
        return FactorReport(_frozen(dinv), _frozen(np.zeros((p, 0))))
    du = dinv[:, None] * u
    core = np.diag(1.0 / lam) - u.T @ du
    try:
        cchol = np.linalg.cholesky(0.5 * (core + core.T))
    except np.linalg.LinAlgError:
        raise ValueError("D - L is not positive definite") from None
    # (core)^{-1} = C^{-T} C^{-1}; loadings F = D^{-1} U C^{-T}
    f = np.linalg.solve(cchol, du.T).T
    return FactorReport(_frozen(dinv), _frozen(f))
