"""Splitting solver for the regularised log-determinant programs.

All five estimators share the form

    minimise  -logdet(Theta) + <Sigma_n, Theta> + lambda_n * R(S_Y, L_Y, Theta_YX)
    subject to Theta = A(S_Y, L_Y, Theta_YX, Theta_X),

and differ only in the regulariser ``R``.  The sparse and low-rank parts
share the ``Theta_Y`` block, which makes a direct proximal step on
``(S_Y, L_Y)`` inseparable.  We introduce a copy ``La`` of ``L_Y`` and run a
two-block ADMM on

    x = (Theta, La),   z = (S_Y, L_Y, Theta_YX, Theta_X),
    Theta_Y + La - S_Y = 0,   La - L_Y = 0,   offdiag(Theta - A(0, 0, K, O)) = 0.

Minimising over ``La`` in closed form leaves an isotropic quadratic in
``Theta``, so the x-step is a single :func:`~sdrgraph.prox.logdet_update`;
the z-step separates into the proximal maps of the individual penalties.
Two-block ADMM converges for any ``rho > 0``, and every step is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    JointPrecision,
    RegConfig,
    StructuredParams,
    Variant,
    assemble,
    count_parameters,
    ComplexitySummary,
)
from .prox import (
    diagonal_normal_distance,
    diagonal_projection,
    group_column_prox,
    group_subdiff_distance,
    l1_subdiff_distance,
    logdet_update_eig,
    nuclear_subdiff_distance,
    psd_trace_factors,
    psd_trace_subdiff_distance,
    soft_threshold,
    svt_with_rank,
)

# weight of the off-diagonal consensus block; makes the x-step isotropic
_W = 0.5


@dataclass(frozen=True)
class SolverOptions:
    """Tuning knobs for :func:`fit`.

    ``relaxed_latent`` replaces the PSD-constrained trace penalty on ``L_Y``
    by an unconstrained nuclear norm, the relaxation used in the consistency
    proofs.
    """

    rho_admm: float = 1.0
    max_iters: int = 5000
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    over_relaxation: float = 1.6
    adaptive_rho: bool = True
    rho_freeze_iter: int = 1000
    relaxed_latent: bool = False

    def __post_init__(self):
        if not self.rho_admm > 0:
            raise ValueError("rho_admm must be positive")
        if not (self.tol_primal > 0 and self.tol_dual > 0):
            raise ValueError("tolerances must be positive")
        if not 1.0 <= self.over_relaxation <= 1.8:
            raise ValueError("over_relaxation must lie in [1.0, 1.8]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True, eq=False)
class FitResult:
    """Output of :func:`fit`.

    ``params_hat.s_Y`` holds the diagonal ``D_Y`` for the factor variant.
    Structure fields are read from the exact zeros of the final proximal
    outputs.
    """

    theta_hat: JointPrecision
    params_hat: StructuredParams
    reg: RegConfig
    sign_pattern: np.ndarray
    latent_rank: int
    cross_rank: int
    column_support: tuple[int, ...]
    objective: float
    iterations: int
    history: dict = field(repr=False)
    converged: bool
    relaxed_latent: bool = False

    @property
    def p(self) -> int:
        return self.theta_hat.p

    @property
    def q(self) -> int:
        return self.theta_hat.q

    @property
    def variant(self) -> Variant:
        return self.reg.variant

    @property
    def d_Y(self) -> np.ndarray | None:
        return np.diag(self.params_hat.s_Y).copy() if self.variant.is_factor else None

    @property
    def edges(self) -> int:
        """Number of nonzero off-diagonal pairs in the sparse component."""
        if self.variant.is_factor:
            return 0
        return int(np.count_nonzero(np.triu(self.sign_pattern, 1)))

    @property
    def complexity(self) -> ComplexitySummary:
        cols = len(self.column_support) if self.variant.column_sparse else None
        return count_parameters(
            self.p,
            self.q,
            edges=self.edges,
            latent_rank=self.latent_rank,
            cross_rank=min(self.cross_rank, self.p, self.q),
            cross_columns=cols,
        )


@dataclass(frozen=True)
class KKTReport:
    """Optimality certificate of a fit.

    ``gradient`` is ``||[Sigma_n - Theta^{-1}]_X||_F``; the ``*_inclusion``
    fields are distances from the required dual elements to the
    subdifferentials of the penalised blocks; ``consensus`` is
    ``||Theta - A(params)||_F``.
    """

    gradient: float
    sparse_inclusion: float
    latent_inclusion: float
    cross_inclusion: float
    consensus: float

    @property
    def max(self) -> float:
        return max(
            self.gradient,
            self.sparse_inclusion,
            self.latent_inclusion,
            self.cross_inclusion,
            self.consensus,
        )

    def as_dict(self) -> dict:
        return {
            "gradient": self.gradient,
            "sparse_inclusion": self.sparse_inclusion,
            "latent_inclusion": self.latent_inclusion,
            "cross_inclusion": self.cross_inclusion,
            "consensus": self.consensus,
        }


# -- objective -----------------------------------------------------------------


def _l1(s: np.ndarray, penalize_diagonal: bool) -> float:
    v = float(np.abs(s).sum())
    if not penalize_diagonal:
        v -= float(np.abs(np.diag(s)).sum())
    return v


def _cross_norm(k: np.ndarray, column_sparse: bool) -> float:
    if k.size == 0:
        return 0.0
    if column_sparse:
        return float(np.linalg.norm(k, axis=0).sum())
    return float(np.linalg.svd(k, compute_uv=False).sum())


def _latent_norm(l: np.ndarray, relaxed: bool) -> float:
    if relaxed:
        return float(np.abs(np.linalg.eigvalsh(l)).sum()) if l.size else 0.0
    return float(np.trace(l))


def penalty(reg: RegConfig, params: StructuredParams, relaxed_latent: bool = False) -> float:
    """Bracketed regulariser, without the ``lambda_n`` factor."""
    v = reg.variant
    s, l, k, _ = params.blocks()
    out = reg.gamma * _cross_norm(k, v.column_sparse)
    if v.has_latent:
        out += _latent_norm(l, relaxed_latent)
    if not v.is_factor:
        out += reg.sparse_weight * _l1(s, reg.penalize_diagonal)
    return out


def objective(
    reg: RegConfig,
    params: StructuredParams,
    theta,
    sigma_n,
    relaxed_latent: bool = False,
) -> float:
    """Negative log-likelihood of ``theta`` plus the penalty evaluated on ``params``."""
    th = theta.theta if isinstance(theta, JointPrecision) else np.asarray(theta, dtype=float)
    try:
        chol = np.linalg.cholesky(th)
    except np.linalg.LinAlgError:
        raise ValueError("theta is not positive definite") from None
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    loss = -logdet + float(np.sum(np.asarray(sigma_n) * th))
    return loss + reg.lambda_n * penalty(reg, params, relaxed_latent)


# -- solver --------------------------------------------------------------------


def _check_sigma(sigma_n, p: int, q: int) -> np.ndarray:
    s = np.asarray(sigma_n, dtype=float)
    if p < 1 or q < 0:
        raise ValueError("need p >= 1 and q >= 0")
    if s.shape != (p + q, p + q):
        raise ValueError(f"Sigma_n has shape {s.shape}, expected {(p + q, p + q)}")
    if not np.all(np.isfinite(s)):
        raise ValueError("Sigma_n has non-finite entries")
    scale = max(np.abs(s).max(initial=0.0), 1e-300)
    if np.abs(s - s.T).max(initial=0.0) > 1e-8 * scale:
        raise ValueError("Sigma_n is not symmetric")
    s = 0.5 * (s + s.T)
    ev = np.linalg.eigvalsh(s)
    if ev[0] < -1e-10 * max(1.0, ev[-1]):
        raise ValueError("Sigma_n is not positive semidefinite")
    return s


def _initial_theta(sigma: np.ndarray) -> np.ndarray:
    d = sigma.shape[0]
    m = sigma + 1e-3 * np.eye(d)
    if np.linalg.eigvalsh(sigma)[0] <= 1e-12 * max(1.0, np.trace(sigma)):
        m += 1e-6 * np.trace(sigma) / d * np.eye(d)
    th = np.linalg.inv(m)
    return 0.5 * (th + th.T)


class _Proxes:
    """Per-variant z-step maps; each returns the new block and its structure."""

    def __init__(self, reg: RegConfig, relaxed: bool):
        self.reg = reg
        self.v = reg.variant
        self.relaxed = relaxed

    def sparse(self, m, rho):
        if self.v.is_factor:
            return diagonal_projection(m)
        t = self.reg.lambda_n * self.reg.sparse_weight / rho
        return soft_threshold(m, t, self.reg.penalize_diagonal)

    def latent(self, m, rho):
        if not self.v.has_latent:
            return np.zeros_like(m), 0
        t = self.reg.lambda_n / rho
        if self.relaxed:
            out, r = svt_with_rank(0.5 * (m + m.T), t)
            return 0.5 * (out + out.T), r
        vecs, vals = psd_trace_factors(m, t)
        return (vecs * vals) @ vecs.T, vals.size

    def cross(self, m, rho):
        t = self.reg.lambda_n * self.reg.gamma / rho
        if self.v.column_sparse:
            out = group_column_prox(m, t)
            cols = np.flatnonzero(np.any(out != 0, axis=0))
            return out, len(cols)
        return svt_with_rank(m, t)


def fit(
    reg: RegConfig,
    sigma_n,
    p: int,
    q: int,
    options: SolverOptions | None = None,
) -> FitResult:
    """Solve the variant's convex program for the sample covariance ``sigma_n``.

    Parameters
    ----------
    reg : RegConfig
        Variant and regularisation weights.
    sigma_n : ndarray, shape (p+q, p+q)
        Symmetric PSD sample covariance, responses first.
    p, q : int
        Response and covariate counts; ``q = 0`` fits a response-only model.
    options : SolverOptions, optional

    Returns
    -------
    FitResult
        ``converged`` is False when ``max_iters`` was exhausted; the last
        iterate is still returned.
    """
    opt = options or SolverOptions()
    sigma = _check_sigma(sigma_n, p, q)
    n = p + q
    prox = _Proxes(reg, opt.relaxed_latent)
    alpha = opt.over_relaxation
    rho = float(opt.rho_admm)

    th0 = _initial_theta(sigma)
    S = th0[:p, :p].copy()
    L = np.zeros((p, p))
    K = th0[:p, p:].copy()
    O = th0[p:, p:].copy()
    U1 = np.zeros((p, p))
    U2 = np.zeros((p, p))
    U3k = np.zeros((p, q))
    U3o = np.zeros((q, q))
    T = np.empty((n, n))
    lrank, krank = 0, min(p, q)

    dual_floor = max(float(np.linalg.norm(sigma)), 1e-300)
    rho_lo, rho_hi = 1e-6 * rho, 1e6 * rho
    hist_obj, hist_r, hist_s, hist_rho = [], [], [], []
    converged = False
    it = 0
    for it in range(1, opt.max_iters + 1):
        # x-step: Theta from an isotropic log-det prox, then La in closed form
        a = S - U1
        b = L - U2
        T[:p, :p] = a - b
        T[:p, p:] = K - U3k
        T[p:, :p] = T[:p, p:].T
        T[p:, p:] = O - U3o
        theta, ev = logdet_update_eig(T, sigma, 0.5 * rho)
        ty, tk, to = theta[:p, :p], theta[:p, p:], theta[p:, p:]
        La = 0.5 * (a - ty + b)

        # over-relaxed x-terms
        h1 = alpha * (ty + La) + (1.0 - alpha) * S
        h2 = alpha * La + (1.0 - alpha) * L
        hk = alpha * tk + (1.0 - alpha) * K
        ho = alpha * to + (1.0 - alpha) * O

        # z-step
        S_old, L_old, K_old, O_old = S, L, K, O
        S = prox.sparse(h1 + U1, rho)
        L, lrank = prox.latent(h2 + U2, rho)
        K, krank = prox.cross(hk + U3k, rho)
        O = ho + U3o

        U1 += h1 - S
        U2 += h2 - L
        U3k += hk - K
        U3o += ho - O

        # residuals in the weighted metric of the constraints
        c1 = ty + La - S
        c2 = La - L
        r = np.sqrt(
            np.sum(c1 * c1) + np.sum(c2 * c2)
            + _W * (2.0 * np.sum((tk - K) ** 2) + np.sum((to - O) ** 2))
        )
        dS, dL = S - S_old, L - L_old
        s = rho * np.sqrt(
            np.sum(dS * dS)
            + _W**2 * (2.0 * np.sum((K - K_old) ** 2) + np.sum((O - O_old) ** 2))
            + np.sum((dS + dL) ** 2)
        )
        ax = np.sqrt(
            np.sum((ty + La) ** 2) + np.sum(La * La)
            + _W * (2.0 * np.sum(tk * tk) + np.sum(to * to))
        )
        bz = np.sqrt(
            np.sum(S * S) + np.sum(L * L) + _W * (2.0 * np.sum(K * K) + np.sum(O * O))
        )
        aty = rho * np.sqrt(
            np.sum(U1 * U1)
            + _W**2 * (2.0 * np.sum(U3k * U3k) + np.sum(U3o * U3o))
            + np.sum((U1 + U2) ** 2)
        )
        r_rel = r / max(ax, bz, 1e-300)
        # the dual variable estimates Sigma_n - Theta^{-1}; floor its scale by Sigma_n
        s_rel = s / max(aty, dual_floor)

        loss = -float(np.sum(np.log(ev))) + float(np.sum(sigma * theta))
        pen = penalty(reg, _Params(S, L, K, O), opt.relaxed_latent)
        hist_obj.append(loss + reg.lambda_n * pen)
        hist_r.append(r_rel)
        hist_s.append(s_rel)
        hist_rho.append(rho)

        if r_rel <= opt.tol_primal and s_rel <= opt.tol_dual:
            converged = True
            break

        if opt.adaptive_rho and it < opt.rho_freeze_iter:
            if r_rel > 10.0 * s_rel and rho < rho_hi:
                rho *= 2.0
                U1 /= 2.0
                U2 /= 2.0
                U3k /= 2.0
                U3o /= 2.0
            elif s_rel > 10.0 * r_rel and rho > rho_lo:
                rho /= 2.0
                U1 *= 2.0
                U2 *= 2.0
                U3k *= 2.0
                U3o *= 2.0

    params = StructuredParams(S, L, K, O, latent=reg.variant.has_latent and not opt.relaxed_latent)
    sign = np.sign(params.s_Y).astype(np.int8)
    if reg.variant.column_sparse:
        cols = tuple(int(j) for j in np.flatnonzero(np.any(params.theta_YX != 0, axis=0)))
        krank_out = int(np.linalg.matrix_rank(params.theta_YX)) if cols else 0
    else:
        cols = tuple(range(q)) if krank else ()
        krank_out = int(krank)
    return FitResult(
        theta_hat=JointPrecision(p, q, theta),
        params_hat=params,
        reg=reg,
        sign_pattern=sign,
        latent_rank=int(lrank),
        cross_rank=krank_out,
        column_support=cols,
        objective=hist_obj[-1],
        iterations=it,
        history={
            "objective": np.array(hist_obj),
            "primal": np.array(hist_r),
            "dual": np.array(hist_s),
            "rho": np.array(hist_rho),
        },
        converged=converged,
        relaxed_latent=opt.relaxed_latent,
    )


class _Params:
    """Light stand-in for StructuredParams inside the iteration loop."""

    __slots__ = ("s_Y", "l_Y", "theta_YX", "theta_X")

    def __init__(self, s, l, k, o):
        self.s_Y, self.l_Y, self.theta_YX, self.theta_X = s, l, k, o

    def blocks(self):
        return self.s_Y, self.l_Y, self.theta_YX, self.theta_X


def kkt_residuals(fit_result: FitResult, reg: RegConfig, sigma_n) -> KKTReport:
    """Stationarity and subgradient-inclusion violations of a fit.

    With ``G = Sigma_n - Theta^{-1}`` the optimality conditions read
    ``G_X = 0``, ``-G_Y in lambda*delta*d||S||_1``, ``G_Y in lambda*d(trace + PSD)(L)``
    and ``-2 G_YX in lambda*gamma*d||K||``.
    """
    th = fit_result.theta_hat
    p = th.p
    g = np.asarray(sigma_n, dtype=float) - th.sigma
    gy, gk, gx = g[:p, :p], g[:p, p:], g[p:, p:]
    v = reg.variant
    s, l, k, _ = fit_result.params_hat.blocks()
    lam = reg.lambda_n

    if v.is_factor:
        sparse = diagonal_normal_distance(gy)
    else:
        sparse = l1_subdiff_distance(-gy, s, lam * reg.sparse_weight, reg.penalize_diagonal)

    if v.has_latent:
        if fit_result.relaxed_latent:
            latent = nuclear_subdiff_distance(gy, l, lam)
        else:
            latent = psd_trace_subdiff_distance(gy, l, lam)
    else:
        latent = 0.0

    if v.column_sparse:
        cross = group_subdiff_distance(-2.0 * gk, k, lam * reg.gamma)
    else:
        cross = nuclear_subdiff_distance(-2.0 * gk, k, lam * reg.gamma)

    consensus = float(np.linalg.norm(th.theta - assemble(fit_result.params_hat)))
    return KKTReport(float(np.linalg.norm(gx)), sparse, latent, cross, consensus)
