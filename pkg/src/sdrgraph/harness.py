"""Monte Carlo experiments on structural recovery and error scaling."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import LOG_2PI, RegConfig, Variant, conditional_loglik, sample_covariance
from .solver import FitResult, SolverOptions, fit
from .synth import PopulationModel, PopulationSpec, sample

ZERO_GUARD = 1e-10

# Reference population for the recovery experiments: low-degree sparse part,
# incoherent latent factor and a well separated cross block.
REFERENCE_SPEC = PopulationSpec(
    p=20, q=4, k=2, h=2, max_degree=1, max_incoherence=0.45, max_redraws=5000,
    s_magnitude=(0.5, 0.7), s_margin=2.0, latent_scale=1.5, cross_singular=(0.4, 0.8),
    x_margin=2.0, seed=0,
)
# Frozen output of scripts/calibrate.py (calibration seeds disjoint from the
# acceptance seeds).
REFERENCE_C = 1.6
REFERENCE_GAMMA = 1.0
REFERENCE_DELTA = 0.4
REFERENCE_PENALIZE_DIAGONAL = False


@dataclass(frozen=True)
class StructuralFlags:
    sign_match: bool
    latent_rank_match: bool
    cross_match: bool
    support_match: bool

    @property
    def success(self) -> bool:
        return self.sign_match and self.latent_rank_match and self.cross_match


def _sign(m: np.ndarray) -> np.ndarray:
    return np.where(np.abs(m) > ZERO_GUARD, np.sign(m), 0.0).astype(np.int8)


def structural_match(fit_result: FitResult, pop: PopulationModel, variant=None) -> StructuralFlags:
    """Sign pattern of ``S_Y``, rank of ``L_Y`` and rank (or column support) of ``Theta_YX``.

    ``sign(0) = 0`` so a spurious or missing edge fails the sign flag; the
    support flag ignores signs.
    """
    variant = Variant(variant or fit_result.variant)
    if (fit_result.p, fit_result.q) != (pop.p, pop.q):
        raise ValueError("fit and population dimensions differ")
    s_hat = np.where(fit_result.sign_pattern != 0, fit_result.params_hat.s_Y, 0.0)
    sh, ss = _sign(s_hat), _sign(pop.s_Y_star)
    sign_ok = bool(np.array_equal(sh, ss))
    support_ok = bool(np.array_equal(sh != 0, ss != 0))
    rank_ok = fit_result.latent_rank == pop.h
    if variant.column_sparse:
        cross_ok = tuple(fit_result.column_support) == pop.column_support
    else:
        cross_ok = fit_result.cross_rank == pop.k
    return StructuralFlags(sign_ok, bool(rank_ok), bool(cross_ok), support_ok)


@dataclass(frozen=True)
class TrialOutcome:
    n: int
    seed: int
    sign_match: bool
    latent_rank_match: bool
    cross_match: bool
    support_match: bool
    err_S: float
    err_L: float
    err_K: float
    err_O: float
    objective: float
    iterations: int
    converged: bool

    @property
    def success(self) -> bool:
        return self.sign_match and self.latent_rank_match and self.cross_match

    @property
    def phi_error(self) -> float:
        return max(self.err_S, self.err_L, self.err_K, self.err_O)


def phi_errors(fit_result: FitResult, pop: PopulationModel) -> tuple[float, float, float, float]:
    """The four block errors entering ``Phi_{delta,gamma}`` (``Phi~`` for column selection)."""
    reg = fit_result.reg
    ph = fit_result.params_hat
    ds = ph.s_Y - pop.s_Y_star
    dl = ph.l_Y - pop.l_Y_star
    dk = ph.theta_YX - pop.theta_YX_star
    do = ph.theta_X - pop.theta_X_star
    delta = reg.delta if reg.variant.uses_delta else 1.0
    if reg.variant.column_sparse:
        ek = float(np.linalg.norm(dk, axis=0).max(initial=0.0))
    else:
        ek = float(np.linalg.norm(dk, 2)) if dk.size else 0.0
    return (
        float(np.abs(ds).max()) / delta,
        float(np.linalg.norm(dl, 2)),
        ek / reg.gamma,
        float(np.linalg.norm(do, 2)) if do.size else 0.0,
    )


def run_trial(
    pop: PopulationModel, n: int, reg: RegConfig, options: SolverOptions | None, seed: int
) -> TrialOutcome:
    """Sample, fit and score one replicate; deterministic in ``seed``."""
    data = sample(pop, n, seed)
    res = fit(reg, sample_covariance(data), pop.p, pop.q, options)
    flags = structural_match(res, pop, reg.variant)
    return TrialOutcome(
        int(n), int(seed), flags.sign_match, flags.latent_rank_match, flags.cross_match,
        flags.support_match, *phi_errors(res, pop), float(res.objective), int(res.iterations),
        bool(res.converged),
    )


@dataclass(frozen=True)
class ScaledLambda:
    """``n -> RegConfig`` with ``lambda_n = c sqrt((p+q)/n)`` and fixed ``gamma``, ``delta``."""

    variant: Variant
    c: float
    p: int
    q: int
    gamma: float = 1.0
    delta: float = 1.0
    penalize_diagonal: bool = True

    def __call__(self, n: int) -> RegConfig:
        lam = self.c * math.sqrt((self.p + self.q) / n)
        return RegConfig(Variant(self.variant), lam, self.gamma, self.delta, self.penalize_diagonal)


def reference_rule(variant=Variant.SDR_LVGM, p: int = 20, q: int = 4) -> ScaledLambda:
    """The calibrated regularization rule for the reference population."""
    return ScaledLambda(
        Variant(variant), REFERENCE_C, p, q, REFERENCE_GAMMA, REFERENCE_DELTA,
        REFERENCE_PENALIZE_DIAGONAL,
    )


def trial_seed(base_seed: int, n_index: int, trial: int) -> int:
    """Seed of one replicate; fixed before any job is scheduled."""
    ss = np.random.SeedSequence([int(base_seed), int(n_index), int(trial)])
    return int(ss.generate_state(1)[0])


@dataclass
class ExperimentSummary:
    n_grid: list
    trials: int
    success_rate: list
    support_rate: list
    mean_phi_error: list
    median_phi_error: list
    slope: float
    wall_time: float
    outcomes: list = field(repr=False, default_factory=list)

    def rate_at(self, n: int) -> float:
        return self.success_rate[self.n_grid.index(n)]

    def median_at(self, n: int) -> float:
        return self.median_phi_error[self.n_grid.index(n)]

    def to_json(self) -> str:
        d = asdict(self)
        d["outcomes"] = [asdict(o) for o in self.outcomes]
        d["format_version"] = 1
        d["metadata"] = {"wall_time": d.pop("wall_time")}
        return json.dumps(d, indent=2, sort_keys=True, allow_nan=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        counts: dict[int, int] = {}
        for o in self.outcomes:
            t = counts.get(o.n, 0)
            counts[o.n] = t + 1
            w.writerow(
                [o.n, t, o.seed, int(o.sign_match), int(o.latent_rank_match), int(o.cross_match),
                 int(o.support_match), int(o.success), repr(o.err_S), repr(o.err_L), repr(o.err_K),
                 repr(o.err_O), repr(o.objective), o.iterations, int(o.converged)]
            )
        return buf.getvalue()


CSV_COLUMNS = (
    "n", "trial", "seed", "sign_match", "latent_rank_match", "cross_match", "support_match",
    "success", "err_S", "err_L", "err_K", "err_O", "objective", "iterations", "converged",
)


def loglog_slope(ns, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(n)``."""
    x, y = np.log(np.asarray(ns, dtype=float)), np.log(np.asarray(errors, dtype=float))
    if x.size < 2 or not np.all(np.isfinite(y)):
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])


def _job(args):
    pop, n, reg, options, seed = args
    return run_trial(pop, n, reg, options, seed)


def run_experiment(
    pop: PopulationModel,
    n_grid,
    trials: int,
    reg_rule,
    options: SolverOptions | None = None,
    parallelism: int = 1,
    base_seed: int = 0,
) -> ExperimentSummary:
    """Replicate :func:`run_trial` over ``n_grid``; output is independent of ``parallelism``."""
    n_grid = [int(n) for n in n_grid]
    if not n_grid or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be nonempty and strictly ascending")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    jobs = [
        (pop, n, reg_rule(n), options, trial_seed(base_seed, i, t))
        for i, n in enumerate(n_grid)
        for t in range(trials)
    ]
    start = time.perf_counter()
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as ex:
            outcomes = list(ex.map(_job, jobs, chunksize=max(1, len(jobs) // (4 * parallelism))))
    else:
        outcomes = [_job(j) for j in jobs]
    wall = time.perf_counter() - start
    # jobs are built in (n, trial) order, so the outcome order is already canonical
    rates, support, means, medians = [], [], [], []
    for n in n_grid:
        group = [o for o in outcomes if o.n == n]
        errs = np.array([o.phi_error for o in group])
        rates.append(float(np.mean([o.success for o in group])))
        support.append(float(np.mean([o.support_match for o in group])))
        means.append(float(errs.mean()))
        medians.append(float(np.median(errs)))
    slope = loglog_slope(n_grid, medians)
    return ExperimentSummary(n_grid, trials, rates, support, means, medians, slope, wall, outcomes)


def select_by_complexity(fits, target_params: int) -> dict:
    """Per variant, the fit whose parameter count is nearest ``target_params``.

    Ties go to fewer parameters, then to the smaller ``lambda_n``.
    """
    fits = list(fits)
    if not fits:
        raise ValueError("empty grid of fits")
    chosen = {}
    for f in fits:
        key = (abs(f.complexity.total - target_params), f.complexity.total, f.reg.lambda_n)
        v = f.variant
        if v not in chosen or key < chosen[v][0]:
            chosen[v] = (key, f)
    return {v: f for v, (_, f) in chosen.items()}


def predictive_loglik(fit_result: FitResult, test_data, p: int, q: int) -> float:
    """Average conditional log-likelihood of the rows of ``test_data``.

    With no covariates the marginal density of ``Y`` under ``Theta_Y`` is used,
    which is the same expression with an empty cross block.
    """
    data = np.atleast_2d(np.asarray(test_data, dtype=float))
    if data.shape[1] != p + q:
        raise ValueError(f"test data has {data.shape[1]} columns, expected {p + q}")
    th = fit_result.theta_hat
    ty, tyx = th.theta_Y, th.theta_YX
    try:
        c = np.linalg.cholesky(ty)
    except np.linalg.LinAlgError:
        raise ValueError("fitted Theta_Y is not positive definite") from None
    y, x = data[:, :p], data[:, p:]
    if data.shape[0] <= 64:
        return float(np.mean([conditional_loglik(ty, tyx, yi, xi) for yi, xi in zip(y, x)]))
    # vectorised form of the same density
    r = y @ ty + x @ tyx.T
    w = np.linalg.solve(c, r.T)
    quad = np.sum(w * w, axis=0)
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    return float(np.mean(0.5 * logdet - 0.5 * p * LOG_2PI - 0.5 * quad))
