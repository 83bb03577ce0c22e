"""Command-line front end: ``sdrgraph {fit,simulate,verify,diagnose,evaluate,report}``.

Exit codes: 0 success, 1 input error, 2 infeasible model or specification,
3 solver did not converge.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io
from .diagnostics import diagnose_population
from .errors import ConstructionError, DegenerateModelError, NumericalFailure
from .harness import (
    REFERENCE_C,
    REFERENCE_DELTA,
    REFERENCE_GAMMA,
    ScaledLambda,
    predictive_loglik,
    run_experiment,
)
from .io import InputError
from .model import RegConfig, Variant, principal_angles, sample_covariance, sdr_map
from .solver import SolverOptions, fit
from .synth import PopulationModel, PopulationSpec, make_population, sample

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NONCONVERGED = 0, 1, 2, 3


class Infeasible(Exception):
    """The requested model or population cannot be realised (exit 2)."""


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors, not infeasibility
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _names(arg, key):
    """A names list, or ``@FILE`` holding a list or a ``{"responses", "covariates"}`` sidecar."""
    if arg is not None and arg.startswith("@") and arg.endswith(".json"):
        try:
            with open(arg[1:]) as f:
                d = json.load(f)
        except OSError as exc:
            raise InputError(f"cannot read names file {arg[1:]!r}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{arg[1:]}: invalid JSON ({exc})") from None
        if isinstance(d, dict):
            if key not in d:
                raise InputError(f"{arg[1:]}: no {key!r} entry")
            return [str(x) for x in d[key]]
        if isinstance(d, list):
            return [str(x) for x in d]
        raise InputError(f"{arg[1:]}: expected a list or an object")
    return io.parse_names(arg)


def _load_population(path) -> PopulationModel:
    try:
        with open(path) as f:
            d = json.load(f)
    except OSError as exc:
        raise InputError(f"cannot read {path!r}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    if d.get("format_version") != 1:
        raise InputError(f"{path}: unsupported format_version {d.get('format_version')!r}")
    try:
        return PopulationModel.from_dict(d)
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: malformed population file ({exc})") from None


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.6g}"


# -- fit ------------------------------------------------------------------------


def cmd_fit(args) -> int:
    responses = _names(args.responses, "responses")
    covariates = _names(args.covariates, "covariates") or []
    data, names = io.read_dataset(args.data, responses, covariates)
    if data.shape[0] < 2:
        raise InputError(f"{args.data}: need at least two data rows")
    stats = None
    if args.standardize:
        mean = data.mean(axis=0)
        scale = data.std(axis=0)
        flat = [n for n, s in zip(names, scale) if not s > 0]
        if flat:
            raise InputError(f"cannot standardize constant column(s): {', '.join(flat)}")
        data = (data - mean) / scale
        stats = {"mean": mean.tolist(), "scale": scale.tolist()}
    p, q = len(responses), len(covariates)
    sigma_n = sample_covariance(data)
    if args.ridge:
        sigma_n = sigma_n + args.ridge * np.eye(p + q)
    ev = np.linalg.eigvalsh(sigma_n)
    tiny = 1e-12 * max(1.0, float(np.abs(ev).max()))
    if ev[0] < -tiny:
        raise Infeasible(f"covariance is not positive semidefinite (min eigenvalue {ev[0]:.3g})")
    if args.lambda_ == 0 and ev[0] <= tiny:
        raise Infeasible("covariance is singular and lambda is 0: the program is unbounded")
    try:
        reg = RegConfig(Variant(args.model), args.lambda_, args.gamma, args.delta, not args.no_diag_penalty)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    opts = SolverOptions(max_iters=args.max_iters, tol_primal=args.tol, tol_dual=args.tol)
    res = fit(reg, sigma_n, p, q, opts)
    doc = io.model_to_dict(res, names, sigma_n, stats, args.tol)
    io.write_atomic(args.out, io.dump_json(doc))
    cx = res.complexity
    print(f"variant:      {res.variant.value}")
    print(f"edges:        {res.edges}")
    print(f"latent rank:  {res.latent_rank}")
    print(f"cross rank:   {res.cross_rank}")
    if res.variant.column_sparse:
        sel = [covariates[j] for j in res.column_support]
        print(f"covariates:   {', '.join(sel) if sel else '(none)'}")
    print(f"parameters:   {cx.total}")
    print(f"objective:    {res.objective!r}")
    status = "converged" if res.converged else "NOT converged"
    print(f"solver:       {status} after {res.iterations} iterations")
    print(f"wrote {args.out}")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


# -- simulate -------------------------------------------------------------------


def cmd_simulate(args) -> int:
    try:
        spec = PopulationSpec(
            p=args.p, q=args.q, k=args.rank_k, h=args.latent_h, max_degree=args.degree,
            n_active_columns=args.active_columns, max_incoherence=args.max_incoherence,
            seed=args.seed,
        )
    except ValueError as exc:
        raise Infeasible(f"infeasible population spec: {exc}") from None
    if args.n < 1:
        raise InputError("--n must be at least 1")
    pop = make_population(spec)
    data = sample(pop, args.n, np.random.SeedSequence([args.seed, 1]))
    doc = {"format_version": 1, **pop.to_dict()}
    io.write_atomic(args.out_pop, io.dump_json(doc))
    header = [f"y{i}" for i in range(pop.p)] + [f"x{j}" for j in range(pop.q)]
    io.write_csv(args.out_data, header, data)
    if args.out_columns:
        side = {"responses": header[: pop.p], "covariates": header[pop.p :]}
        io.write_atomic(args.out_columns, io.dump_json(side))
    for key, val in pop.metadata.as_dict().items():
        print(f"{key:10s} {_fmt(val)}")
    print(f"wrote {args.out_pop} and {args.out_data}")
    return EXIT_OK


# -- verify ---------------------------------------------------------------------


def cmd_verify(args) -> int:
    pop = _load_population(args.pop)
    try:
        n_grid = _ints(args.n_grid)
    except ValueError:
        raise InputError(f"--n-grid: expected comma-separated integers, got {args.n_grid!r}") from None
    if args.trials < 1 or args.jobs < 1:
        raise InputError("--trials and --jobs must be at least 1")
    variant = Variant(args.variant)
    rule = ScaledLambda(
        variant, args.c, pop.p, pop.q, args.gamma, args.delta, not args.no_diag_penalty
    )
    try:
        summary = run_experiment(
            pop, n_grid, args.trials, rule, SolverOptions(tol_primal=args.tol, tol_dual=args.tol),
            parallelism=args.jobs, base_seed=args.seed,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None
    io.write_atomic(args.out, summary.to_csv())
    json_path = os.path.splitext(args.out)[0] + ".json"
    io.write_atomic(json_path, summary.to_json() + "\n")
    print(f"{'n':>8s} {'success':>8s} {'support':>8s} {'median_phi':>11s}")
    for n, r, s, m in zip(summary.n_grid, summary.success_rate, summary.support_rate, summary.median_phi_error):
        print(f"{n:8d} {r:8.3f} {s:8.3f} {m:11.5g}")
    print(f"log-log slope of median error: {summary.slope:.4f}")
    print(f"wrote {args.out} and {json_path}")
    return EXIT_OK


# -- diagnose -------------------------------------------------------------------


def cmd_diagnose(args) -> int:
    pop = _load_population(args.pop)
    try:
        rep = diagnose_population(
            pop, args.alpha, args.nu, args.omega_y, args.omega_yx, samples=args.samples,
            seed=args.seed, column_sparse=args.column_sparse,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None
    doc = rep.as_dict()
    io.write_atomic(args.out, io.dump_json(doc))
    for e in rep.entries:
        print(f"{e.name:18s} {e.value:12.6g}  [{e.mode}, {e.certificate}]")
    vset = rep.extra["parameter_set"]
    print(f"parameter set V nonempty: {vset['nonempty']}")
    tc = rep.extra["theorem_constants"]
    print(f"lambda_upper {tc['lambda_upper']:.6g}   n_min {tc['n_min']:.6g}")
    print(f"wrote {args.out}")
    return EXIT_OK


# -- evaluate -------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    model = io.load_model(args.model)
    header, data = io.read_csv(args.data)
    x = io.select_columns(header, data, model.column_names)
    if model.standardization:
        x = (x - np.asarray(model.standardization["mean"])) / np.asarray(model.standardization["scale"])
    if x.shape[0] == 0:
        raise InputError(f"{args.data}: no data rows")
    value = predictive_loglik(model, x, model.p, model.q)
    print(f"average log-likelihood: {value!r}")
    print(f"rows: {x.shape[0]}")
    return EXIT_OK


# -- report ---------------------------------------------------------------------


def _column_space(model: io.ModelFile) -> np.ndarray:
    b = sdr_map(model.theta)
    if b.size == 0:
        return np.zeros((model.p, 0))
    u, s, _ = np.linalg.svd(b, full_matrices=False)
    r = int(np.sum(s > max(b.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)))
    return u[:, :r]


def _report_dict(model: io.ModelFile) -> dict:
    names = model.column_names
    edges = sorted(model.edges, key=lambda e: (-abs(e[2]), e[0], e[1]))
    cx = model.complexity
    d = {
        "variant": model.reg.variant.value,
        "edges": [{"i": names[i], "j": names[j], "value": v} for i, j, v in edges],
        "edge_count": len(edges),
        "latent_rank": model.latent_rank,
        "cross_rank": model.cross_rank,
        "parameters": {
            "nodes": cx.node_params, "edges": cx.edge_params, "latent": cx.latent_rank_params,
            "cross": cx.cross_rank_params,
            "total": cx.total,
        },
        "objective": model.objective,
        "objective_recomputed": model.recompute_objective(),
    }
    if model.reg.variant.column_sparse:
        d["covariates"] = [names[model.p + j] for j in model.column_support]
    return d


def cmd_report(args) -> int:
    model = io.load_model(args.model)
    d = _report_dict(model)
    if args.compare:
        other = io.load_model(args.compare)
        if other.p != model.p:
            raise InputError("compared models have different response counts")
        u1, u2 = _column_space(model), _column_space(other)
        angles = principal_angles(u1, u2).tolist() if u1.shape[1] and u2.shape[1] else []
        e1 = {(i, j) for i, j, _ in model.edges}
        e2 = {(i, j) for i, j, _ in other.edges}
        union = e1 | e2
        d["compare"] = {
            "principal_angles_deg": angles,
            "edges_shared": len(e1 & e2),
            "edges_only_first": len(e1 - e2),
            "edges_only_second": len(e2 - e1),
            "jaccard": len(e1 & e2) / len(union) if union else 1.0,
        }
    if args.json:
        print(io.dump_json(d), end="")
        return EXIT_OK
    print(f"variant: {d['variant']}")
    print(f"edges ({d['edge_count']}), strongest first:")
    for e in d["edges"][: args.top] if args.top else d["edges"]:
        print(f"  {e['i']} -- {e['j']}  {e['value']:+.6g}")
    print(f"latent rank: {d['latent_rank']}")
    print(f"cross rank: {d['cross_rank']}")
    if "covariates" in d:
        print(f"covariates: {', '.join(d['covariates']) if d['covariates'] else '(none)'}")
    par = d["parameters"]
    print(
        f"parameters: {par['total']} (nodes {par['nodes']}, edges {par['edges']}, "
        f"latent {par['latent']}, cross {par['cross']})"
    )
    print(f"objective: {d['objective']!r}")
    print(f"objective (recomputed): {d['objective_recomputed']!r}")
    if "compare" in d:
        c = d["compare"]
        ang = ", ".join(f"{a:.4f}" for a in c["principal_angles_deg"]) or "(no columns)"
        print(f"principal angles (deg): {ang}")
        print(
            f"edges shared {c['edges_shared']}, only first {c['edges_only_first']}, "
            f"only second {c['edges_only_second']}, jaccard {c['jaccard']:.4f}"
        )
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sdrgraph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit a model to a CSV dataset")
    f.add_argument("--model", required=True, choices=[v.value for v in Variant])
    f.add_argument("--data", required=True)
    f.add_argument("--responses", required=True, help="a,b,c or @FILE")
    f.add_argument("--covariates", default=None, help="a,b,c or @FILE")
    f.add_argument("--lambda", dest="lambda_", type=float, required=True)
    f.add_argument("--gamma", type=float, default=1.0)
    f.add_argument("--delta", type=float, default=1.0)
    f.add_argument("--no-diag-penalty", action="store_true")
    f.add_argument("--standardize", action="store_true", help="z-score columns with training statistics")
    f.add_argument("--ridge", type=float, default=0.0, help="added to the covariance diagonal before fitting")
    f.add_argument("--tol", type=float, default=1e-7)
    f.add_argument("--max-iters", type=int, default=5000)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="build a synthetic population and sample from it")
    s.add_argument("--p", type=int, required=True)
    s.add_argument("--q", type=int, required=True)
    s.add_argument("--rank-k", type=int, default=0)
    s.add_argument("--latent-h", type=int, default=0)
    s.add_argument("--degree", type=int, default=2)
    s.add_argument("--active-columns", type=int, default=None)
    s.add_argument("--max-incoherence", type=float, default=None)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-pop", required=True)
    s.add_argument("--out-data", required=True)
    s.add_argument("--out-columns", default=None, help="sidecar JSON naming responses and covariates")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="Monte Carlo structural-recovery experiment")
    v.add_argument("--pop", required=True)
    v.add_argument("--n-grid", required=True)
    v.add_argument("--trials", type=int, required=True)
    v.add_argument("--jobs", type=int, default=1)
    v.add_argument("--variant", default=Variant.SDR_LVGM.value, choices=[x.value for x in Variant])
    v.add_argument("--c", type=float, default=REFERENCE_C, help="lambda_n = c sqrt((p+q)/n)")
    v.add_argument("--gamma", type=float, default=REFERENCE_GAMMA)
    v.add_argument("--delta", type=float, default=REFERENCE_DELTA)
    v.add_argument("--diag-penalty", dest="no_diag_penalty", action="store_false")
    v.add_argument("--tol", type=float, default=1e-6)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", required=True, help="CSV path; the JSON summary goes next to it")
    v.set_defaults(func=cmd_verify, no_diag_penalty=True)

    d = sub.add_parser("diagnose", help="structural diagnostics of a population")
    d.add_argument("--pop", required=True)
    d.add_argument("--alpha", type=float, required=True)
    d.add_argument("--nu", type=float, required=True)
    d.add_argument("--omega-y", type=float, required=True)
    d.add_argument("--omega-yx", type=float, required=True)
    d.add_argument("--samples", type=int, default=3)
    d.add_argument("--column-sparse", action="store_true")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_diagnose)

    e = sub.add_parser("evaluate", help="average log-likelihood of a dataset under a model")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="summarise a fitted model")
    r.add_argument("--model", required=True)
    r.add_argument("--compare", default=None)
    r.add_argument("--top", type=int, default=0, help="show only the strongest edges")
    r.add_argument("--json", action="store_true")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (Infeasible, ConstructionError, NumericalFailure, DegenerateModelError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
