"""Tangent spaces, Fisher-information gains and theorem constants.

Quadruples ``(S, L, K, O)`` in ``S^p x S^p x R^{p x q} x S^q`` are handled in
orthonormal coordinates: symmetric blocks use the basis ``E_ii`` and
``(E_ij + E_ji)/sqrt(2)``, the cross block its entries.  Every subspace is
then a matrix with orthonormal columns and every linear map a dense matrix,
which gives exact Frobenius-geometry answers.  Quantities defined through the
non-Euclidean norm ``Phi`` have no closed form; they are estimated by random
restarts plus local search and returned with a certificate level:

``exact``
    computed in closed form or by an exact finite procedure;
``bound``
    a proven bound, not the value itself;
``sampled``
    the best value found by search (a one-sided estimate).
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog, minimize

from .errors import DegenerateModelError
from .model import Variant

CERTIFICATES = ("exact", "bound", "sampled")


# -- symmetric coordinates ---------------------------------------------------


@lru_cache(maxsize=None)
def _sym_index(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    i, j = np.triu_indices(n)
    w = np.where(i == j, 1.0, np.sqrt(2.0))
    for a in (i, j, w):
        a.setflags(write=False)
    return i, j, w


def svec(m: np.ndarray) -> np.ndarray:
    """Orthonormal coordinates of a symmetric matrix (upper triangle, row-major)."""
    i, j, w = _sym_index(m.shape[0])
    return m[i, j] * w


def smat(v: np.ndarray, n: int) -> np.ndarray:
    i, j, w = _sym_index(n)
    w = 1.0 / w
    m = np.zeros((n, n))
    m[i, j] = v * w
    m[j, i] = v * w
    return m


def _sym_dim(n: int) -> int:
    return n * (n + 1) // 2


# -- subspaces ----------------------------------------------------------------


@dataclass(frozen=True)
class SupportSpace:
    """Symmetric matrices supported on ``indices`` (closed under transposition)."""

    indices: frozenset
    p: int

    def __post_init__(self):
        idx = set()
        for i, j in self.indices:
            if not (0 <= i < self.p and 0 <= j < self.p):
                raise ValueError(f"index {(i, j)} outside a {self.p} x {self.p} matrix")
            idx.add((int(i), int(j)))
            idx.add((int(j), int(i)))
        object.__setattr__(self, "indices", frozenset(idx))

    @classmethod
    def from_matrix(cls, m, tol: float = 0.0) -> SupportSpace:
        m = np.asarray(m, dtype=float)
        ii, jj = np.nonzero(np.abs(m) > tol)
        return cls(frozenset(zip(ii.tolist(), jj.tolist())), m.shape[0])

    @classmethod
    def full(cls, p: int) -> SupportSpace:
        return cls(frozenset(itertools.product(range(p), range(p))), p)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros((self.p, self.p), dtype=bool)
        for i, j in self.indices:
            m[i, j] = True
        return m

    @property
    def degree(self) -> int:
        return int(self.mask.sum(axis=1).max(initial=0))

    def project(self, m) -> np.ndarray:
        return np.where(self.mask, np.asarray(m, dtype=float), 0.0)

    def basis(self) -> np.ndarray:
        """Orthonormal basis in symmetric coordinates."""
        i, j, _ = _sym_index(self.p)
        sel = np.flatnonzero(self.mask[i, j])
        b = np.zeros((i.size, sel.size))
        b[sel, np.arange(sel.size)] = 1.0
        return b


@dataclass(frozen=True, eq=False)
class LowRankTangent:
    """Tangent space ``{U Y1' + Y2 V'}`` of the rank variety at ``U D V'``."""

    U: np.ndarray
    V: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.U, dtype=float))
        v = u if self.symmetric else np.atleast_2d(np.asarray(self.V, dtype=float))
        if u.shape[1] != v.shape[1]:
            raise ValueError("U and V must have the same number of columns")
        for name, b in (("U", u), ("V", v)):
            if b.shape[1] and np.abs(b.T @ b - np.eye(b.shape[1])).max() > 1e-10:
                raise ValueError(f"{name} must have orthonormal columns")
        object.__setattr__(self, "U", u)
        object.__setattr__(self, "V", v)

    @classmethod
    def from_matrix(cls, m, symmetric: bool = False, tol: float | None = None) -> LowRankTangent:
        m = np.atleast_2d(np.asarray(m, dtype=float))
        if symmetric:
            w, vecs = np.linalg.eigh(0.5 * (m + m.T))
            scale = np.abs(w).max(initial=0.0)
            t = 10.0 * m.shape[0] * np.finfo(float).eps * scale if tol is None else tol
            u = vecs[:, np.abs(w) > t]
            return cls(u, u, True)
        if m.size == 0:
            return cls(np.zeros((m.shape[0], 0)), np.zeros((m.shape[1], 0)))
        u, s, vt = np.linalg.svd(m, full_matrices=False)
        t = 10.0 * max(m.shape) * np.finfo(float).eps * s[0] if tol is None else tol
        r = int(np.sum(s > t))
        return cls(u[:, :r], vt[:r].T)

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    def project(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        pu = self.U @ self.U.T
        pv = self.V @ self.V.T
        return pu @ n + n @ pv - pu @ n @ pv

    def basis(self) -> np.ndarray:
        """Orthonormal basis (symmetric coordinates when ``symmetric``)."""
        p1, p2 = self.shape
        if self.symmetric:
            d = _sym_dim(p1)
            cols = [svec(self.project(smat(e, p1))) for e in np.eye(d)]
        else:
            d = p1 * p2
            cols = [self.project(e.reshape(p1, p2)).ravel() for e in np.eye(d)]
        if d == 0:
            return np.zeros((0, 0))
        pm = np.array(cols).T
        w, v = np.linalg.eigh(0.5 * (pm + pm.T))
        return v[:, w > 0.5]


@dataclass(frozen=True)
class ColumnSupport:
    columns: frozenset
    shape: tuple[int, int]

    def __post_init__(self):
        cols = frozenset(int(c) for c in self.columns)
        if any(not 0 <= c < self.shape[1] for c in cols):
            raise ValueError("column index out of range")
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    @classmethod
    def from_matrix(cls, m) -> ColumnSupport:
        m = np.atleast_2d(np.asarray(m, dtype=float))
        return cls(frozenset(np.flatnonzero(np.any(m != 0, axis=0)).tolist()), m.shape)

    def project(self, n) -> np.ndarray:
        n = np.array(n, dtype=float)
        keep = np.zeros(self.shape[1], dtype=bool)
        keep[list(self.columns)] = True
        n[:, ~keep] = 0.0
        return n

    def basis(self) -> np.ndarray:
        p, q = self.shape
        keep = np.zeros((p, q), dtype=bool)
        keep[:, list(self.columns)] = True
        sel = np.flatnonzero(keep.ravel())
        b = np.zeros((p * q, sel.size))
        b[sel, np.arange(sel.size)] = 1.0
        return b


def project_support(space: SupportSpace, m) -> np.ndarray:
    return space.project(m)


def project_lowrank_tangent(t: LowRankTangent, n) -> np.ndarray:
    """``P_U N + N P_V - P_U N P_V``."""
    return t.project(n)


def project_column_support(f: ColumnSupport, n) -> np.ndarray:
    return f.project(n)


@dataclass(frozen=True, eq=False)
class SubspaceProduct:
    """``H = Omega x T_Y x T_YX x S^q`` (``t_YX`` may be a column support).

    ``None`` components stand for the zero subspace.
    """

    p: int
    q: int
    omega: SupportSpace | None
    t_Y: LowRankTangent | None
    t_YX: LowRankTangent | ColumnSupport | None
    x_block: bool = True

    def __post_init__(self):
        if self.omega is not None and self.omega.p != self.p:
            raise ValueError("support space has the wrong dimension")
        if self.t_Y is not None and (self.t_Y.shape != (self.p, self.p) or not self.t_Y.symmetric):
            raise ValueError("t_Y must be a symmetric p x p tangent space")
        if self.t_YX is not None and tuple(self.t_YX.shape) != (self.p, self.q):
            raise ValueError("t_YX has the wrong shape")

    @classmethod
    def from_components(cls, s, l, k, column_sparse: bool = False) -> SubspaceProduct:
        s = np.asarray(s, dtype=float)
        k = np.atleast_2d(np.asarray(k, dtype=float)).reshape(s.shape[0], -1)
        p, q = k.shape
        t_yx = ColumnSupport.from_matrix(k) if column_sparse else LowRankTangent.from_matrix(k)
        return cls(
            p, q, SupportSpace.from_matrix(s), LowRankTangent.from_matrix(l, symmetric=True), t_yx
        )

    @classmethod
    def full(cls, p: int, q: int) -> SubspaceProduct:
        return cls(
            p, q, SupportSpace.full(p),
            LowRankTangent(np.eye(p), np.eye(p), True),
            LowRankTangent(np.eye(p)[:, : min(p, q)], np.eye(q)[:, : min(p, q)])
            if min(p, q) else None,
        )

    def component_bases(self) -> list[np.ndarray]:
        p, q = self.p, self.q
        sp, sq = _sym_dim(p), _sym_dim(q)
        return [
            self.omega.basis() if self.omega is not None else np.zeros((sp, 0)),
            self.t_Y.basis() if self.t_Y is not None and self.t_Y.rank else np.zeros((sp, 0)),
            _cross_basis(self.t_YX, p, q),
            np.eye(sq) if self.x_block else np.zeros((sq, 0)),
        ]

    def basis(self, components=(0, 1, 2, 3)) -> np.ndarray:
        """Orthonormal basis in quadruple coordinates, restricted to ``components``."""
        blocks = self.component_bases()
        sizes = [b.shape[0] for b in blocks]
        offs = np.concatenate([[0], np.cumsum(sizes)])
        cols = []
        for c in components:
            b = blocks[c]
            full = np.zeros((offs[-1], b.shape[1]))
            full[offs[c] : offs[c + 1]] = b
            cols.append(full)
        return np.hstack(cols) if cols else np.zeros((offs[-1], 0))


def _cross_basis(t, p, q) -> np.ndarray:
    if t is None or p * q == 0:
        return np.zeros((p * q, 0))
    if isinstance(t, LowRankTangent) and t.rank == 0:
        return np.zeros((p * q, 0))
    if isinstance(t, LowRankTangent) and t.rank == min(p, q):
        return np.eye(p * q)
    return t.basis()


# -- quadruple coordinates and the Fisher operator ------------------------------


class QuadCoords:
    """Vectorisation of ``(S, L, K, O)`` with an orthonormal coordinate system."""

    def __init__(self, p: int, q: int):
        self.p, self.q = p, q
        sp, sq = _sym_dim(p), _sym_dim(q)
        self.sizes = (sp, sp, p * q, sq)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.dim = int(self.offsets[-1])

    def to_vec(self, s, l, k, o) -> np.ndarray:
        return np.concatenate([svec(np.asarray(s)), svec(np.asarray(l)), np.asarray(k).ravel(), svec(np.asarray(o))])

    def from_vec(self, v) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        o = self.offsets
        p, q = self.p, self.q
        return (
            smat(v[o[0] : o[1]], p),
            smat(v[o[1] : o[2]], p),
            v[o[2] : o[3]].reshape(p, q),
            smat(v[o[3] : o[4]], q),
        )


def fisher_apply(sigma_star, m) -> np.ndarray:
    """Action ``Sigma M Sigma`` of ``Sigma (x) Sigma`` on a symmetric matrix."""
    s = np.asarray(sigma_star, dtype=float)
    return s @ np.asarray(m, dtype=float) @ s


def _assemble_blocks(s, l, k, o) -> np.ndarray:
    return np.block([[s - l, k], [k.T, o]])


def _fisher_quad(sigma, s, l, k, o):
    p = s.shape[0]
    z = sigma @ _assemble_blocks(s, l, k, o) @ sigma
    zy = z[:p, :p]
    return zy, zy, z[:p, p:], z[p:, p:]


def fisher_operator_matrix(sigma_star, p: int, q: int) -> np.ndarray:
    """Dense matrix of ``A_dagger I* A`` in quadruple coordinates."""
    qc = QuadCoords(p, q)
    sigma = np.asarray(sigma_star, dtype=float)
    cols = np.empty((qc.dim, qc.dim))
    for j in range(qc.dim):
        e = np.zeros(qc.dim)
        e[j] = 1.0
        cols[:, j] = qc.to_vec(*_fisher_quad(sigma, *qc.from_vec(e)))
    return cols


# -- norms -------------------------------------------------------------------


def _spec(m: np.ndarray) -> float:
    if not m.size:
        return 0.0
    if min(m.shape) == 1:
        return float(np.sqrt(np.sum(m * m)))
    return float(np.linalg.svd(m, compute_uv=False)[0])


def phi_norm(params, delta: float, gamma: float, tilde: bool = False) -> float:
    """``max{||S||_inf/delta, ||L||_2, ||K||/gamma, ||O||_2}``.

    ``||K||`` is the spectral norm, or the largest column norm when ``tilde``.
    """
    if not (delta > 0 and gamma > 0):
        raise ValueError("delta and gamma must be positive")
    s, l, k, o = params.blocks() if hasattr(params, "blocks") else params
    s, l, k, o = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (s, l, k, o))
    if tilde:
        kn = float(np.linalg.norm(k, axis=0).max(initial=0.0)) if k.size else 0.0
    else:
        kn = _spec(k)
    return max(
        float(np.abs(s).max(initial=0.0)) / delta, _spec(l), kn / gamma, _spec(o)
    )


def phi_tilde_norm(params, delta: float, gamma: float) -> float:
    return phi_norm(params, delta, gamma, tilde=True)


# -- generic search over ratio functions ----------------------------------------


def _ratio_search(num, den, dim: int, rng, restarts: int, maximize: bool, starts=(), maxfev: int = 300):
    """Extremise ``num(c)/den(c)`` over ``c != 0`` by restarted local search.

    Low dimensions use Nelder-Mead to near full precision; above eight
    coordinates each local search is capped at ``maxfev`` evaluations.
    """
    if dim == 0:
        return 0.0, np.zeros(0)
    sign = -1.0 if maximize else 1.0

    def f(c):
        d = den(c)
        if d <= 1e-14 * max(1.0, np.abs(c).max()):
            return np.inf
        return sign * num(c) / d

    x0s = [np.asarray(s, dtype=float) for s in starts]
    x0s += [rng.standard_normal(dim) for _ in range(restarts)]
    best_val, best_x = np.inf, None
    method = "Nelder-Mead" if dim <= 8 else "Powell"
    if method == "Nelder-Mead":
        opts = {"xatol": 1e-8, "fatol": 1e-10, "maxiter": 400 * dim, "adaptive": dim > 3}
    else:
        opts = {"xtol": 1e-6, "ftol": 1e-8, "maxfev": maxfev}
    scored = sorted(((f(x0), i) for i, x0 in enumerate(x0s)), key=lambda t: t[0])
    if scored and scored[0][0] < best_val:
        best_val, best_x = scored[0][0], x0s[scored[0][1]]
    if method == "Powell":
        # refine only the most promising starts
        x0s = [x0s[i] for _, i in scored[: max(restarts, 1)]]
    for x0 in x0s:
        res = minimize(f, x0, method=method, options=opts)
        if res.fun < best_val:
            best_val, best_x = float(res.fun), res.x
    return sign * best_val, best_x


@dataclass(frozen=True)
class Estimate:
    """A reported quantity with its certificate level."""

    name: str
    value: float
    mode: str
    certificate: str

    def __post_init__(self):
        if self.certificate not in CERTIFICATES:
            raise ValueError(f"certificate must be one of {CERTIFICATES}")

    def as_dict(self) -> dict:
        return asdict(self)


# -- chi and varphi ------------------------------------------------------------


def _quad_phi(qc: QuadCoords, delta, gamma, tilde):
    return lambda v: phi_norm(qc.from_vec(v), delta, gamma, tilde)


def _restricted(h: SubspaceProduct, sigma_star):
    qc = QuadCoords(h.p, h.q)
    m = fisher_operator_matrix(sigma_star, h.p, h.q)
    b = h.basis()
    return qc, m, b


def chi_min_gain(
    h: SubspaceProduct,
    sigma_star,
    delta: float = 1.0,
    gamma: float = 1.0,
    mode: str = "exact-frobenius",
    restarts: int = 20,
    seed=0,
    tilde: bool = False,
) -> Estimate:
    """Minimum gain of ``P_H A_dagger I* A P_H`` on ``H``.

    ``exact-frobenius`` returns the smallest singular value of the restricted
    operator (a Frobenius surrogate, exact).  ``phi-sampled`` searches the
    unit ``Phi`` sphere of ``H`` and returns the smallest ratio found, which
    is an upper bound on the ``Phi``-geometry gain.
    """
    qc, m, b = _restricted(h, sigma_star)
    if b.shape[1] == 0:
        raise ValueError("H is the zero subspace")
    mh = b.T @ m @ b
    if mode == "exact-frobenius":
        return Estimate("chi", float(np.linalg.svd(mh, compute_uv=False)[-1]), mode, "exact")
    if mode != "phi-sampled":
        raise ValueError(f"unknown mode {mode!r}")
    phi = _quad_phi(qc, delta, gamma, tilde)
    rng = np.random.default_rng(seed)
    val, _ = _ratio_search(
        lambda c: phi(b @ (mh @ c)), lambda c: phi(b @ c), b.shape[1], rng, restarts, False,
        starts=list(np.eye(b.shape[1])),
    )
    return Estimate("chi", float(val), mode, "sampled")


def varphi_operator(h: SubspaceProduct, sigma_star) -> tuple[QuadCoords, np.ndarray, np.ndarray]:
    """Matrix of ``P_{H^perp} A_dagger I* A P_H (P_H A_dagger I* A P_H)^{-1}`` from H coordinates."""
    qc, m, b = _restricted(h, sigma_star)
    mh = b.T @ m @ b
    sv = np.linalg.svd(mh, compute_uv=False) if mh.size else np.zeros(0)
    if sv.size and sv[-1] <= 1e-12 * sv[0]:
        raise DegenerateModelError("restricted Fisher operator is singular on H")
    perp = np.eye(qc.dim) - b @ b.T
    n = perp @ m @ b @ np.linalg.inv(mh) if mh.size else np.zeros((qc.dim, 0))
    return qc, n, b


def varphi_irrepresentability(
    h: SubspaceProduct,
    sigma_star,
    delta: float = 1.0,
    gamma: float = 1.0,
    mode: str = "exact-frobenius",
    restarts: int = 20,
    seed=0,
    tilde: bool = False,
) -> Estimate:
    """Irrepresentability of ``H`` against its complement.

    ``exact-frobenius`` returns the Frobenius operator norm of the coupling
    map (exact); ``phi-sampled`` the largest ``Phi`` ratio found (a lower
    bound on the ``Phi``-induced norm).
    """
    qc, n, b = varphi_operator(h, sigma_star)
    if b.shape[1] == qc.dim or b.shape[1] == 0:
        return Estimate("varphi", 0.0, mode, "exact")
    if mode == "exact-frobenius":
        return Estimate("varphi", float(np.linalg.norm(n, 2)), mode, "exact")
    if mode != "phi-sampled":
        raise ValueError(f"unknown mode {mode!r}")
    phi = _quad_phi(qc, delta, gamma, tilde)
    rng = np.random.default_rng(seed)
    val, _ = _ratio_search(
        lambda c: phi(n @ c), lambda c: phi(b @ c), b.shape[1], rng, restarts, True,
        starts=list(np.eye(b.shape[1])),
    )
    return Estimate("varphi", float(val), mode, "sampled")


# -- tangent-space distortion ---------------------------------------------------


def _polar(g: np.ndarray, symmetric: bool) -> np.ndarray:
    """Maximiser of ``<G, N>`` over the unit spectral ball."""
    if symmetric:
        w, v = np.linalg.eigh(0.5 * (g + g.T))
        return (v * np.where(w >= 0, 1.0, -1.0)) @ v.T
    u, _, vt = np.linalg.svd(g, full_matrices=False)
    return u @ vt


def _top_dual(d: np.ndarray, symmetric: bool) -> np.ndarray:
    """Unit spectral-dual element ``Y`` with ``<Y, D> = ||D||_2``."""
    if symmetric:
        w, v = np.linalg.eigh(0.5 * (d + d.T))
        i = int(np.argmax(np.abs(w)))
        return np.sign(w[i] or 1.0) * np.outer(v[:, i], v[:, i])
    u, _, vt = np.linalg.svd(d)
    return np.outer(u[:, 0], vt[0])


def spectral_ascent(op, shape, symmetric: bool, rng, restarts: int = 10, iters: int = 200):
    """Maximise ``||op(N)||_2`` over ``||N||_2 <= 1`` for a self-adjoint linear ``op``.

    Each step replaces ``N`` by the polar factor of ``op(Y)``, where ``Y`` is
    the dual element of ``op(N)``; the objective never decreases.
    """
    best, best_n = 0.0, np.zeros(shape)
    for _ in range(restarts):
        g = rng.standard_normal(shape)
        n = _polar(g + g.T if symmetric else g, symmetric)
        val = _spec(op(n))
        for _ in range(iters):
            y = _top_dual(op(n), symmetric)
            n_new = _polar(op(y), symmetric)
            new = _spec(op(n_new))
            if new <= val * (1 + 1e-13):
                if new > val:
                    n, val = n_new, new
                break
            n, val = n_new, new
        if val > best:
            best, best_n = val, n
    return best, best_n


def rho_distortion(
    t1: LowRankTangent, t2: LowRankTangent, restarts: int = 10, seed=0, iters: int = 200
) -> tuple[float, np.ndarray]:
    """``max_{||N||_2 <= 1} ||(P_T1 - P_T2)(N)||_2`` by monotone ascent (a lower bound)."""
    if t1.shape != t2.shape:
        raise ValueError("tangent spaces live in different ambient spaces")
    if t1.rank == t2.rank and np.allclose(t1.U @ t1.U.T, t2.U @ t2.U.T, atol=0, rtol=0) and np.allclose(
        t1.V @ t1.V.T, t2.V @ t2.V.T, atol=0, rtol=0
    ):
        return 0.0, np.zeros(t1.shape)
    sym = t1.symmetric and t2.symmetric
    rng = np.random.default_rng(seed)
    return spectral_ascent(lambda n: t1.project(n) - t2.project(n), t1.shape, sym, rng, restarts, iters)


def perturb_tangent(
    t: LowRankTangent, omega: float, rng, restarts: int = 4, steps: int = 20
) -> tuple[LowRankTangent, float]:
    """Random tangent space ``T(orth(U + eps G))`` with distortion just below ``omega``."""
    if t.rank == 0:
        return t, 0.0
    gu = rng.standard_normal(t.U.shape)
    gv = gu if t.symmetric else rng.standard_normal(t.V.shape)
    seed = int(rng.integers(2**31))

    def make(eps):
        u, _ = np.linalg.qr(t.U + eps * gu)
        v = u if t.symmetric else np.linalg.qr(t.V + eps * gv)[0]
        t2 = LowRankTangent(u, v, t.symmetric)
        return t2, rho_distortion(t, t2, restarts=restarts, seed=seed)[0]

    lo, hi = 0.0, 1.0
    t_hi, r_hi = make(hi)
    while r_hi <= omega and hi < 1e3:
        lo, hi = hi, 2.0 * hi
        t_hi, r_hi = make(hi)
    if r_hi <= omega:
        return t_hi, r_hi
    best, best_r = t, 0.0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        tm, rm = make(mid)
        if rm <= omega:
            lo, best, best_r = mid, tm, rm
        else:
            hi = mid
    return best, best_r


# -- combinatorial quantities ------------------------------------------------------


def incoherence(n) -> float:
    """Largest norm of a projected standard basis vector onto the row or column space."""
    n = np.atleast_2d(np.asarray(n, dtype=float))
    if not np.any(n != 0):
        raise ValueError("incoherence of the zero matrix is undefined")
    u, s, vt = np.linalg.svd(n, full_matrices=False)
    r = int(np.sum(s > 10.0 * max(n.shape) * np.finfo(float).eps * s[0]))
    cu = np.linalg.norm(u[:, :r], axis=1).max()
    cv = np.linalg.norm(vt[:r].T, axis=1).max()
    return float(max(cu, cv))


def mu_omega(space: SupportSpace, samples: int = 2000, seed=0, exhaustive_limit: int = 16):
    """``(deg, lower)`` bracket on ``max ||N||_2`` over unit-l_inf ``N`` in ``Omega``.

    The maximum of a convex function over the l_inf ball is attained at a
    sign pattern, so the lower value is exact when every pattern is tried.
    Returns ``(upper, lower, exhaustive)``.
    """
    p = space.p
    i, j = np.nonzero(np.triu(space.mask))
    m = i.size
    upper = space.degree
    if m == 0:
        return upper, 0.0, True
    exhaustive = m <= exhaustive_limit
    if exhaustive:
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=m)))
    else:
        rng = np.random.default_rng(seed)
        signs = rng.choice([-1.0, 1.0], size=(samples, m))
    mats = np.zeros((signs.shape[0], p, p))
    mats[:, i, j] = signs
    mats[:, j, i] = signs
    lower = float(np.abs(np.linalg.eigvalsh(mats)).max())
    return upper, lower, exhaustive


def xi_tangent(t: LowRankTangent, restarts: int = 20, seed=0, iters: int = 100):
    """Bracket ``[inc, 2 inc]`` and a search value for ``max ||N||_inf`` over unit-spectral ``N`` in ``T``.

    Returns ``(bracket, estimate)``.  The search starts from ``P_T(E_ij)``,
    whose normalised sup-norm already reaches ``inc`` for the coherent
    coordinate, and improves by random local moves inside ``T``.
    """
    if t.rank == 0:
        return (0.0, 0.0), 0.0
    m = t.U @ t.V.T
    inc = incoherence(m)
    p1, p2 = t.shape

    def ratio(n):
        s = _spec(n)
        return float(np.abs(n).max()) / s if s > 0 else 0.0

    best, best_n = 0.0, None
    for a in range(p1):
        for b in range(p2):
            if t.symmetric and b < a:
                continue
            e = np.zeros((p1, p2))
            e[a, b] = 1.0
            if t.symmetric:
                e[b, a] = 1.0
            n = t.project(e)
            r = ratio(n)
            if r > best:
                best, best_n = r, n
    rng = np.random.default_rng(seed)
    step = 0.1
    for _ in range(restarts * iters):
        g = rng.standard_normal((p1, p2))
        if t.symmetric:
            g = g + g.T
        cand = best_n + step * _spec(best_n) * t.project(g) / max(_spec(t.project(g)), 1e-300)
        r = ratio(cand)
        if r > best:
            best, best_n = r, cand
        else:
            step = max(step * 0.97, 1e-4)
    return (inc, 2.0 * inc), float(best)


# -- eta quantities -------------------------------------------------------------


def _eta1_component(h: SubspaceProduct, m: np.ndarray, c: int, rng, restarts) -> float:
    b = h.basis((c,))
    if b.shape[1] == 0:
        return np.inf
    qc = QuadCoords(h.p, h.q)
    mh = b.T @ m @ b
    phi = _quad_phi(qc, 1.0, 1.0, isinstance(h.t_YX, ColumnSupport))
    val, _ = _ratio_search(
        lambda x: phi(b @ (mh @ x)), lambda x: phi(b @ x), b.shape[1], rng, restarts, False,
        starts=list(np.eye(b.shape[1])),
    )
    return float(val)


def _embedded_basis(h: SubspaceProduct, c: int) -> np.ndarray:
    """Orthonormal basis of ``A(H[c])`` in symmetric coordinates of ``S^{p+q}``."""
    qc = QuadCoords(h.p, h.q)
    b = h.basis((c,))
    cols = [svec(_assemble_blocks(*qc.from_vec(x))) for x in b.T]
    if not cols:
        return np.zeros((_sym_dim(h.p + h.q), 0))
    q, r = np.linalg.qr(np.array(cols).T)
    return q[:, np.abs(np.diag(r)) > 1e-12]


def _eta2_component(h: SubspaceProduct, sigma: np.ndarray, c: int, rng, restarts) -> float:
    qa = _embedded_basis(h, c)
    d = h.p + h.q
    if qa.shape[1] == 0:
        return 0.0
    perp = np.eye(qa.shape[0]) - qa @ qa.T

    def num(x):
        return _spec(smat(perp @ svec(sigma @ smat(qa @ x, d) @ sigma), d))

    val, _ = _ratio_search(
        num, lambda x: _spec(smat(qa @ x, d)), qa.shape[1], rng, restarts, True,
        starts=list(np.eye(qa.shape[1])),
    )
    return float(val)


def _eta3a(sigma_y: np.ndarray, t: LowRankTangent) -> float:
    """``max ||Sigma_Y M Sigma_Y||_inf`` over ``M`` in ``T`` with ``||M||_inf <= 1`` (one LP per entry)."""
    if t.rank == 0:
        return 0.0
    p = sigma_y.shape[0]
    b = t.basis()
    mats = [smat(x, p) for x in b.T]
    iu, ju = np.triu_indices(p)
    # entries of M and of Sigma_Y M Sigma_Y as linear maps of the coordinates
    a_m = np.array([m[iu, ju] for m in mats]).T
    a_out = np.array([(sigma_y @ m @ sigma_y)[iu, ju] for m in mats]).T
    a_ub = np.vstack([a_m, -a_m])
    b_ub = np.ones(2 * iu.size)
    best = 0.0
    for row in a_out:
        if not np.any(row):
            continue
        res = linprog(-row, A_ub=a_ub, b_ub=b_ub, bounds=(None, None), method="highs")
        if res.status == 0:
            best = max(best, -float(res.fun))
    # the objective is odd, so the minimum is minus the maximum of -row
    return best


def _eta3b(sigma_y: np.ndarray, omega: SupportSpace, rng, restarts) -> float:
    b = omega.basis()
    p = omega.p
    if b.shape[1] == 0:
        return 0.0
    val, _ = _ratio_search(
        lambda x: _spec(sigma_y @ smat(b @ x, p) @ sigma_y),
        lambda x: _spec(smat(b @ x, p)),
        b.shape[1], rng, restarts, True, starts=list(np.eye(b.shape[1])),
    )
    return float(val)


@dataclass(frozen=True)
class EtaReport:
    eta1: float
    eta2: float
    eta3: float
    eta3_lp: float
    eta3_support: float
    nominal: tuple[float, float, float]
    samples: int
    certificate: str = "sampled"

    def as_dict(self) -> dict:
        return asdict(self)


def eta_quantities(
    h_star: SubspaceProduct,
    sigma_star,
    omega_Y: float,
    omega_YX: float,
    samples: int = 5,
    restarts: int = 4,
    seed=0,
) -> EtaReport:
    """Worst-case ``eta1`` (min), ``eta2`` and ``eta3`` (max) over sampled distortions.

    The nominal tangent spaces are always included.  Values are sampled over
    the distortion set; the LP part of ``eta3`` is exact for each space tried.
    """
    sigma = np.asarray(sigma_star, dtype=float)
    p = h_star.p
    sigma_y = sigma[:p, :p]
    rng = np.random.default_rng(seed)

    def evaluate(h):
        m = fisher_operator_matrix(sigma, h.p, h.q)
        e1 = min(_eta1_component(h, m, c, rng, restarts) for c in range(4))
        e2 = max(_eta2_component(h, sigma, c, rng, restarts) for c in range(4))
        e3a = _eta3a(sigma_y, h.t_Y) if h.t_Y is not None else 0.0
        return e1, e2, e3a

    e1, e2, e3a = evaluate(h_star)
    e3b = _eta3b(sigma_y, h_star.omega, rng, restarts) if h_star.omega is not None else 0.0
    nominal = (e1, e2, max(e3a, e3b))
    for _ in range(samples):
        ty, tyx = h_star.t_Y, h_star.t_YX
        if ty is not None:
            ty, _ = perturb_tangent(ty, omega_Y, rng)
        if isinstance(tyx, LowRankTangent):
            tyx, _ = perturb_tangent(tyx, omega_YX, rng)
        h = SubspaceProduct(h_star.p, h_star.q, h_star.omega, ty, tyx, h_star.x_block)
        a, b_, c = evaluate(h)
        e1, e2, e3a = min(e1, a), max(e2, b_), max(e3a, c)
    return EtaReport(e1, e2, max(e3a, e3b), e3a, e3b, nominal, samples)


# -- admissible (delta, gamma) set -----------------------------------------------


@dataclass(frozen=True)
class ParameterSet:
    """Polyhedral set of admissible ``(delta, gamma)`` pairs."""

    alpha: float
    beta: float
    eta2: float
    deg: float
    delta_interval: tuple[float, float]
    hypotheses: dict
    nonempty: bool

    def gamma_interval(self, delta: float) -> tuple[float, float]:
        a, b, e2 = self.alpha, self.beta, self.eta2
        lo = max(1.0, e2 * self.deg * delta * 2.0 * b / a)
        with np.errstate(over="ignore", divide="ignore"):
            hi = np.inf if e2 == 0 else float(np.float64(min(delta, 1.0)) / e2 * (a / b))
        return float(lo), float(hi)

    def contains(self, delta: float, gamma: float, rtol: float = 1e-12) -> bool:
        dlo, dhi = self.delta_interval
        glo, ghi = self.gamma_interval(delta)
        return (
            dlo * (1 - rtol) <= delta <= dhi * (1 + rtol)
            and glo * (1 - rtol) <= gamma <= ghi * (1 + rtol)
        )

    def midpoint(self) -> tuple[float, float] | None:
        if not self.nonempty:
            return None
        d = 0.5 * sum(self.delta_interval)
        lo, hi = self.gamma_interval(d)
        if lo > hi:
            d = self._feasible_delta()
            lo, hi = self.gamma_interval(d)
        g = lo if not np.isfinite(hi) else 0.5 * (lo + hi)
        return float(d), float(g)

    def _feasible_delta(self) -> float:
        dlo, dhi = self.delta_interval
        for d in np.linspace(dlo, dhi, 1001):
            lo, hi = self.gamma_interval(d)
            if lo <= hi:
                return float(d)
        return float(dlo)

    def as_dict(self) -> dict:
        out = {
            "alpha": self.alpha,
            "beta": self.beta,
            "eta2": self.eta2,
            "deg": self.deg,
            "delta_interval": list(self.delta_interval),
            "hypotheses": self.hypotheses,
            "nonempty": self.nonempty,
        }
        mid = self.midpoint()
        out["midpoint"] = None if mid is None else list(mid)
        return out


def polyhedral_set_V(
    alpha: float,
    nu: float,
    omega_Y: float,
    omega_YX: float,
    inc_val: float,
    deg_val: float,
    eta2: float,
    eta1: float | None = None,
    eta3: float | None = None,
) -> ParameterSet:
    """Admissible ``(delta, gamma)`` set and the status of its four hypotheses.

    Hypotheses whose inputs are not supplied (``eta1``, ``eta3``) are
    reported as ``None``.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if not 0 < nu < 1.0 / 3.0:
        raise ValueError("nu must lie in (0, 1/3)")
    if not (0 < omega_Y < 1 and 0 < omega_YX < 1):
        raise ValueError("omegas must lie in (0, 1)")
    beta = (3.0 - nu) / nu
    dlo = (2.0 * inc_val + omega_Y) / (4.0 * (1.0 - omega_Y)) * np.sqrt(beta / alpha)
    dhi = (2.0 / deg_val) * np.sqrt(alpha / beta)
    hyp = {
        "i": None if eta1 is None else bool(eta1 >= 2.0 * alpha),
        "ii": bool(
            eta2
            <= min(
                alpha * (1.0 - 3.0 / (1.0 + beta)),
                np.sqrt(alpha / beta) * (2.0 * inc_val + omega_Y) / (4.0 * (1.0 - omega_Y)),
                alpha / (beta * np.sqrt(2.0 * deg_val)),
                0.5 * (alpha / beta) ** 1.5,
            )
        ),
        "iii": None if eta3 is None else bool(eta3 <= np.sqrt(alpha / beta)),
        "iv": bool((2.0 * inc_val + omega_Y) / (1.0 - omega_Y) * deg_val <= 8.0 * alpha / beta),
    }
    ps = ParameterSet(float(alpha), float(beta), float(eta2), float(deg_val), (float(dlo), float(dhi)), hyp, False)
    nonempty = False
    if dlo <= dhi:
        cands = [dlo, dhi] + ([1.0] if dlo <= 1.0 <= dhi else [])
        nonempty = any(ps.gamma_interval(d)[0] <= ps.gamma_interval(d)[1] for d in cands)
    return ParameterSet(ps.alpha, ps.beta, ps.eta2, ps.deg, ps.delta_interval, hyp, nonempty)


# -- theorem constants --------------------------------------------------------------


@dataclass(frozen=True)
class TheoremConstants:
    """Constants and thresholds of the consistency theorems.

    ``theorem`` is 1 for the low-rank cross block and 2 for column
    selection.  Thresholds are evaluated at ``lambda_n``.
    """

    theorem: int
    m: float
    m_bar: float
    beta: float
    psi: float
    C1: float
    C2: float
    C_sigma: float
    C_sigmaYX: float | None
    C_samp: float
    deg_eff: float
    lambda_upper: float
    n_min: float
    lambda_range: tuple[float, float] | None
    lambda_n: float
    tau_min: float
    sigmaY_min: float
    sigmaYX_min: float | None
    zeta_min: float | None

    @property
    def C_sigmaY(self) -> float:
        return self.C_sigma

    def as_dict(self) -> dict:
        d = asdict(self)
        d["lambda_range"] = None if self.lambda_range is None else list(self.lambda_range)
        return d


def theorem_constants(
    alpha: float,
    nu: float,
    psi: float,
    delta: float,
    gamma: float,
    deg: float,
    p: int,
    q: int,
    variant: Variant | str = Variant.SDR_LVGM,
    kappa: int | None = None,
    omega_Y: float = 0.5,
    omega_YX: float = 0.5,
    n: int | None = None,
    lambda_n: float | None = None,
) -> TheoremConstants:
    """Evaluate the theorem constants verbatim.

    The column-selecting variants use the second theorem (``kappa`` then
    enters ``lambda_upper``).  ``lambda_n`` defaults to the lower end of the
    admissible range when ``n`` allows one, else to ``lambda_upper``.
    """
    if not (alpha > 0 and psi > 0 and delta > 0 and gamma > 0 and deg > 0):
        raise ValueError("alpha, psi, delta, gamma and deg must be positive")
    if not 0 < nu < 1.0 / 3.0:
        raise ValueError("nu must lie in (0, 1/3)")
    v = Variant(variant)
    thm = 2 if v.column_sparse else 1
    m = max(1.0 / delta, 1.0, 1.0 / gamma)
    m_bar = max(delta, 1.0, gamma)
    beta = (3.0 - nu) / nu
    C1 = 24.0 / alpha + 1.0 / psi**2
    if thm == 1:
        C2 = (4.0 / alpha) * (1.0 / (3.0 * beta) + 1.0)
        C_sig = C1**2 * psi**2 * max(12.0 * beta + 1.0, 2.0 / (C2 * psi**2) + 1.0)
        C_sigYX = C1**2 * psi**2 * max(18.0 * beta, 2.0 / (C2 * psi**2) + 6.0 * beta)
        deg_eff = float(deg)
    else:
        if kappa is None:
            raise ValueError("kappa is required for column-selecting variants")
        C2 = (8.0 / alpha) * (1.0 / (3.0 * beta) + 1.0)
        C_sig = C1**2 * psi**2 * max(12.0 * beta + 1.0, 1.0 / (C2 * psi**2) + 1.0)
        C_sigYX = None
        deg_eff = float(max(deg, kappa))
    C_samp = max(
        1.0 / (48.0 * psi * beta),
        48.0 * beta * psi**3 * C1**2,
        8.0 * psi * C2,
        128.0 * psi**3 * C2 / alpha,
    )
    lambda_upper = 1.0 / (m * m_bar**2 * deg_eff * C_samp)
    n_min = 4608.0 * psi**2 * beta**2 * m**2 * (p + q) / lambda_upper**2
    lam_range = None
    if n is not None:
        lo = float(np.sqrt(4608.0 * psi**2 * beta**2 * m**2 * (p + q) / n))
        if lo <= lambda_upper:
            lam_range = (lo, lambda_upper)
    if lambda_n is None:
        lambda_n = lam_range[0] if lam_range is not None else lambda_upper
    tau = 2.0 * C1 * delta * lambda_n
    if thm == 1:
        sy = m / omega_Y * C_sig * lambda_n
        syx = m**2 / omega_YX * C_sigYX * gamma**2 * lambda_n
        zeta = None
    else:
        sy = m * C_sig * lambda_n
        syx = None
        zeta = 2.0 * gamma * C1 * lambda_n
    return TheoremConstants(
        thm, m, m_bar, beta, float(psi), C1, C2, C_sig, C_sigYX, C_samp, deg_eff,
        lambda_upper, n_min, lam_range, float(lambda_n), tau, sy, syx, zeta,
    )


# -- population report ----------------------------------------------------------------


@dataclass
class DiagnosticsReport:
    entries: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def add(self, name, value, mode, certificate):
        self.entries.append(Estimate(name, float(value), mode, certificate))

    def as_dict(self) -> dict:
        return {
            "format_version": 1,
            "quantities": [e.as_dict() for e in self.entries],
            **self.extra,
        }


def diagnose_population(
    pop,
    alpha: float,
    nu: float,
    omega_Y: float,
    omega_YX: float,
    samples: int = 3,
    seed=0,
    column_sparse: bool = False,
) -> DiagnosticsReport:
    """Every diagnostic quantity for a population, with certificate levels."""
    rep = DiagnosticsReport()
    sigma = pop.sigma_star
    h = SubspaceProduct.from_components(
        pop.s_Y_star, pop.l_Y_star, pop.theta_YX_star, column_sparse=column_sparse
    )
    meta = pop.metadata
    rep.add("inc", meta.inc, "exact", "exact")
    rep.add("deg", meta.deg, "exact", "exact")
    up, lo, exhaustive = mu_omega(h.omega, seed=seed)
    rep.add("mu_upper", up, "deg", "bound")
    rep.add("mu_lower", lo, "sign-patterns", "exact" if exhaustive else "sampled")
    if h.t_Y.rank:
        (xlo, xhi), xest = xi_tangent(h.t_Y, seed=seed)
        rep.add("xi_lower", xlo, "incoherence", "bound")
        rep.add("xi_upper", xhi, "incoherence", "bound")
        rep.add("xi_estimate", xest, "search", "sampled")
    eta = eta_quantities(h, sigma, omega_Y, omega_YX, samples=samples, seed=seed)
    rep.add("eta1", eta.eta1, "sampled-over-U", "sampled")
    rep.add("eta2", eta.eta2, "sampled-over-U", "sampled")
    rep.add("eta3", eta.eta3, "sampled-over-U", "sampled")
    vset = polyhedral_set_V(alpha, nu, omega_Y, omega_YX, meta.inc, meta.deg, eta.eta2, eta.eta1, eta.eta3)
    mid = vset.midpoint() or (1.0, 1.0)
    delta, gamma = mid
    try:
        rep.add("chi_frobenius", chi_min_gain(h, sigma).value, "exact-frobenius", "exact")
        rep.add(
            "chi_phi",
            chi_min_gain(h, sigma, delta, gamma, "phi-sampled", restarts=4, seed=seed, tilde=column_sparse).value,
            "phi-sampled", "sampled",
        )
        rep.add("varphi_frobenius", varphi_irrepresentability(h, sigma).value, "exact-frobenius", "exact")
        rep.add(
            "varphi_phi",
            varphi_irrepresentability(h, sigma, delta, gamma, "phi-sampled", restarts=4, seed=seed, tilde=column_sparse).value,
            "phi-sampled", "sampled",
        )
    except DegenerateModelError as exc:
        rep.extra["degenerate"] = str(exc)
    psi = float(np.linalg.norm(sigma, 2))
    variant = Variant.CS_LVGM if column_sparse else Variant.SDR_LVGM
    tc = theorem_constants(
        alpha, nu, psi, delta, gamma, meta.deg, pop.p, pop.q, variant,
        kappa=meta.kappa, omega_Y=omega_Y, omega_YX=omega_YX,
    )
    rep.extra["parameter_set"] = vset.as_dict()
    rep.extra["theorem_constants"] = tc.as_dict()
    rep.extra["delta_gamma"] = [delta, gamma]
    return rep
