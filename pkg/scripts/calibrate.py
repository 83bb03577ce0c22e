"""Calibrate ``(c, delta, gamma)`` of ``lambda_n = c sqrt((p+q)/n)`` on the reference population.

Selection rule: maximize the mean structural success rate at the two middle
sample sizes; ties go to the point whose neighbours along the ``c`` axis score
best (a stable region rather than an isolated one), then to the larger ``c``.
Seeds are disjoint from the acceptance run (``--seed 1000``).
"""

import argparse
import itertools
import json

import numpy as np

from sdrgraph.harness import REFERENCE_SPEC, ScaledLambda, run_experiment
from sdrgraph.model import Variant
from sdrgraph.synth import make_population


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--c", default="1.4,1.6,1.8,2.0,2.2")
    ap.add_argument("--delta", default="0.3,0.4,0.5")
    ap.add_argument("--gamma", default="0.5,1,2")
    ap.add_argument("--n-grid", default="5000,10000")
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--variant", default=Variant.SDR_LVGM.value)
    ap.add_argument("--seed", type=int, default=1000)
    ap.add_argument("--out", default=None, help="JSON file for the full grid")
    args = ap.parse_args(argv)

    pop = make_population(REFERENCE_SPEC)
    n_grid = [int(x) for x in args.n_grid.split(",")]
    grid = itertools.product(
        *(sorted(float(x) for x in s.split(",")) for s in (args.c, args.delta, args.gamma))
    )
    rows = []
    for c, delta, gamma in grid:
        rule = ScaledLambda(Variant(args.variant), c, pop.p, pop.q, gamma, delta, False)
        s = run_experiment(pop, n_grid, args.trials, rule, parallelism=args.jobs, base_seed=args.seed)
        score = float(np.mean(s.success_rate))
        rows.append({"c": c, "delta": delta, "gamma": gamma, "score": score,
                     "success_rate": s.success_rate, "median_phi_error": s.median_phi_error})
        print(f"c={c:<5g} delta={delta:<5g} gamma={gamma:<5g} success={s.success_rate} "
              f"median_phi={np.round(s.median_phi_error, 3).tolist()}", flush=True)
    cs = sorted({r["c"] for r in rows})
    table = {(r["c"], r["delta"], r["gamma"]): r["score"] for r in rows}

    def stability(r):
        i = cs.index(r["c"])
        nb = [table[(cs[j], r["delta"], r["gamma"])] for j in (i - 1, i + 1) if 0 <= j < len(cs)]
        return float(np.mean(nb)) if nb else 0.0

    for r in rows:
        r["stability"] = stability(r)
    best = max(rows, key=lambda r: (r["score"], r["stability"], r["c"]))
    print(f"selected: c={best['c']} delta={best['delta']} gamma={best['gamma']} score={best['score']} "
          f"stability={best['stability']}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump({"format_version": 1, "grid": rows, "selected": best}, f, indent=2)


if __name__ == "__main__":
    main()
