"""Ground-truth populations with sparse, latent and low-rank cross structure.

A population has precision

    Theta* = [[S_Y* - L_Y*, Theta_YX*], [Theta_YX*', Theta_X*]]

with ``S_Y*`` sparse of bounded degree, ``L_Y* = c Q Q'`` of rank ``h`` and
``Theta_YX* = U D V'`` of rank ``k``.  Each knob of :class:`PopulationSpec`
controls one quantity the consistency guarantees depend on.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .diagnostics import incoherence
from .errors import ConstructionError, NumericalFailure
from .model import JointPrecision, StructuredParams, assemble, numerical_rank


@dataclass(frozen=True)
class PopulationSpec:
    """Recipe for :func:`make_population`.

    Parameters
    ----------
    p, q : int
        Response and covariate counts.
    k : int
        Rank of ``Theta_YX*``.
    h : int
        Rank of ``L_Y*`` (number of latent variables).
    max_degree : int
        Cap on off-diagonal nonzeros per row of ``S_Y*``; the reported
        ``deg`` also counts the diagonal.
    edge_prob : float
        Acceptance probability of each candidate edge that respects the cap.
    s_magnitude : (float, float)
        Off-diagonal entries of ``S_Y*`` are uniform in ``+-[lo, hi]``.
    s_margin : float
        Diagonal dominance margin of ``S_Y*`` before boosting.
    latent_scale : float
        Nonzero eigenvalue of ``L_Y*``.
    max_incoherence : float or None
        When set, the latent factor ``Q`` is redrawn (up to ``max_redraws``
        times) until ``inc(L_Y*)`` is at most this value.
    max_redraws : int
    cross_singular : (float, float)
        Singular values of ``Theta_YX*``, evenly spaced in this range.
    n_active_columns : int or None
        When set, ``Theta_YX*`` is supported on this many covariate columns.
    x_magnitude : (float, float)
        Off-diagonal entries of ``Theta_X*``.
    x_margin : float
        Diagonal dominance margin of ``Theta_X*``.
    diag_boost : float
        Increment added to the diagonal of ``S_Y*`` until ``lambda_min >= min_eig``.
    max_boosts : int
    min_eig : float
    seed : int
    """

    p: int
    q: int
    k: int = 0
    h: int = 0
    max_degree: int = 2
    edge_prob: float = 1.0
    s_magnitude: tuple[float, float] = (0.2, 0.4)
    s_margin: float = 1.0
    latent_scale: float = 1.0
    max_incoherence: float | None = None
    max_redraws: int = 1000
    cross_singular: tuple[float, float] = (0.5, 1.0)
    n_active_columns: int | None = None
    x_magnitude: tuple[float, float] = (0.1, 0.3)
    x_margin: float = 1.0
    diag_boost: float = 0.1
    max_boosts: int = 100
    min_eig: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.p < 1 or self.q < 0:
            raise ValueError("need p >= 1 and q >= 0")
        if not 0 <= self.k <= min(self.p, self.q):
            raise ValueError("k must lie in [0, min(p, q)]")
        if not 0 <= self.h < self.p:
            raise ValueError("h must lie in [0, p)")
        if not 0 <= self.max_degree < self.p:
            raise ValueError("max_degree must lie in [0, p)")
        if self.n_active_columns is not None and not self.k <= self.n_active_columns <= self.q:
            raise ValueError("n_active_columns must lie in [k, q]")
        for name in ("s_magnitude", "cross_singular", "x_magnitude"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.max_incoherence is not None and not 0 < self.max_incoherence <= 1:
            raise ValueError("max_incoherence must lie in (0, 1]")
        if not 0.0 <= self.edge_prob <= 1.0:
            raise ValueError("edge_prob must lie in [0, 1]")


@dataclass(frozen=True)
class PopulationMetadata:
    tau_Y: float
    sigma_Y: float
    sigma_YX: float
    zeta_YX: float
    deg: int
    inc: float
    kappa: int
    lambda_min: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class PopulationModel:
    theta_star: JointPrecision
    s_Y_star: np.ndarray
    l_Y_star: np.ndarray
    theta_YX_star: np.ndarray
    theta_X_star: np.ndarray
    metadata: PopulationMetadata
    spec: PopulationSpec | None = field(default=None, compare=False)

    @property
    def p(self) -> int:
        return self.theta_star.p

    @property
    def q(self) -> int:
        return self.theta_star.q

    @property
    def sigma_star(self) -> np.ndarray:
        return self.theta_star.sigma

    @property
    def params(self) -> StructuredParams:
        return StructuredParams(
            self.s_Y_star, self.l_Y_star, self.theta_YX_star, self.theta_X_star, latent=True
        )

    @property
    def k(self) -> int:
        return numerical_rank(self.theta_YX_star)

    @property
    def h(self) -> int:
        return numerical_rank(self.l_Y_star)

    @property
    def column_support(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(np.any(self.theta_YX_star != 0, axis=0)))

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "q": self.q,
            "s_Y": self.s_Y_star.tolist(),
            "l_Y": self.l_Y_star.tolist(),
            "theta_YX": self.theta_YX_star.tolist(),
            "theta_X": self.theta_X_star.tolist(),
            "metadata": self.metadata.as_dict(),
            "spec": None if self.spec is None else asdict(self.spec),
        }

    @classmethod
    def from_dict(cls, d: dict) -> PopulationModel:
        p, q = int(d["p"]), int(d["q"])
        spec = PopulationSpec(**d["spec"]) if d.get("spec") else None
        return from_components(
            np.array(d["s_Y"], dtype=float).reshape(p, p),
            np.array(d["l_Y"], dtype=float).reshape(p, p),
            np.array(d["theta_YX"], dtype=float).reshape(p, q),
            np.array(d["theta_X"], dtype=float).reshape(q, q),
            spec=spec,
        )


# -- construction -------------------------------------------------------------


def _sparse_pattern(p: int, max_degree: int, edge_prob: float, rng) -> np.ndarray:
    """Random symmetric pattern; candidate edges violating the cap are rejected."""
    adj = np.zeros((p, p), dtype=bool)
    deg = np.zeros(p, dtype=int)
    iu, ju = np.triu_indices(p, 1)
    for e in rng.permutation(iu.size):
        i, j = iu[e], ju[e]
        if deg[i] >= max_degree or deg[j] >= max_degree:
            continue
        if rng.random() < edge_prob:
            adj[i, j] = adj[j, i] = True
            deg[i] += 1
            deg[j] += 1
    return adj


def _signed_uniform(rng, lo: float, hi: float, size) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=size) * rng.uniform(lo, hi, size=size)


def _orthonormal(rng, n: int, r: int) -> np.ndarray:
    if r == 0:
        return np.zeros((n, 0))
    q, _ = np.linalg.qr(rng.standard_normal((n, r)))
    return q


def _dominant_symmetric(adj, rng, magnitude, margin) -> np.ndarray:
    n = adj.shape[0]
    m = np.zeros((n, n))
    iu, ju = np.nonzero(np.triu(adj, 1))
    vals = _signed_uniform(rng, *magnitude, size=iu.size)
    m[iu, ju] = vals
    m[ju, iu] = vals
    np.fill_diagonal(m, np.abs(m).sum(axis=1) + margin)
    return m


def make_population(spec: PopulationSpec) -> PopulationModel:
    """Build a population from ``spec``; raises ConstructionError if PD is unreachable."""
    rng = np.random.default_rng(spec.seed)
    p, q = spec.p, spec.q

    adj = _sparse_pattern(p, spec.max_degree, spec.edge_prob, rng)
    s = _dominant_symmetric(adj, rng, spec.s_magnitude, spec.s_margin)

    qh = _orthonormal(rng, p, spec.h)
    if spec.h and spec.max_incoherence is not None:
        for _ in range(spec.max_redraws):
            if np.linalg.norm(qh, axis=1).max() <= spec.max_incoherence:
                break
            qh = _orthonormal(rng, p, spec.h)
        else:
            raise ConstructionError(
                f"no latent factor with incoherence <= {spec.max_incoherence} "
                f"in {spec.max_redraws} draws"
            )
    l = spec.latent_scale * (qh @ qh.T)

    if spec.k:
        u = _orthonormal(rng, p, spec.k)
        ncols = spec.n_active_columns if spec.n_active_columns is not None else q
        cols = np.sort(rng.choice(q, size=ncols, replace=False))
        v = np.zeros((q, spec.k))
        v[cols] = _orthonormal(rng, ncols, spec.k)
        d = np.linspace(spec.cross_singular[1], spec.cross_singular[0], spec.k)
        kxy = (u * d) @ v.T
    else:
        kxy = np.zeros((p, q))

    x_adj = np.ones((q, q), dtype=bool)
    o = _dominant_symmetric(x_adj, rng, spec.x_magnitude, spec.x_margin)

    for _ in range(spec.max_boosts + 1):
        theta = assemble(StructuredParams(s, l, kxy, o))
        if np.linalg.eigvalsh(theta)[0] >= spec.min_eig:
            return from_components(s, l, kxy, o, spec=spec)
        s = s + spec.diag_boost * np.eye(p)
    raise ConstructionError(
        f"lambda_min(Theta*) stayed below {spec.min_eig} after {spec.max_boosts} boosts"
    )


def from_components(s, l, kxy, o, spec: PopulationSpec | None = None) -> PopulationModel:
    params = StructuredParams(s, l, kxy, o, latent=True)
    p, q = params.p, params.q
    theta = JointPrecision(p, q, assemble(params))
    if not theta.is_pd:
        raise ConstructionError("assembled precision is not positive definite")
    meta = _metadata(params.s_Y, params.l_Y, params.theta_YX, theta)
    return PopulationModel(
        theta, params.s_Y, params.l_Y, params.theta_YX, params.theta_X, meta, spec
    )


def _min_nonzero_sv(m: np.ndarray) -> float:
    if m.size == 0:
        return 0.0
    sv = np.linalg.svd(m, compute_uv=False)
    r = numerical_rank(m)
    return float(sv[r - 1]) if r else 0.0


def _metadata(s, l, kxy, theta: JointPrecision) -> PopulationMetadata:
    nz = s[s != 0]
    colnorms = np.linalg.norm(kxy, axis=0) if kxy.size else np.zeros(0)
    active = colnorms[colnorms > 0]
    return PopulationMetadata(
        tau_Y=float(np.abs(nz).min()) if nz.size else 0.0,
        sigma_Y=_min_nonzero_sv(l),
        sigma_YX=_min_nonzero_sv(kxy),
        zeta_YX=float(active.min()) if active.size else 0.0,
        deg=int((s != 0).sum(axis=1).max()),
        inc=incoherence(l) if np.any(l != 0) else 0.0,
        kappa=int(active.size),
        lambda_min=float(theta.eigenvalues[0]),
    )


def describe(pop: PopulationModel) -> PopulationMetadata:
    """Recompute the structural metadata of ``pop`` from its matrices."""
    return _metadata(pop.s_Y_star, pop.l_Y_star, pop.theta_YX_star, pop.theta_star)


def sample(pop: PopulationModel, n: int, seed) -> np.ndarray:
    """Draw ``n`` i.i.d. rows from ``N(0, Sigma*)`` via the Cholesky factor."""
    if n < 1:
        raise ValueError("n must be at least 1")
    try:
        chol = np.linalg.cholesky(pop.sigma_star)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"Cholesky of Sigma* failed: {exc}") from exc
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, pop.p + pop.q)) @ chol.T
