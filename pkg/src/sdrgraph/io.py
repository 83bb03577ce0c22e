"""Dataset and model files for the command-line tools."""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .model import JointPrecision, RegConfig, StructuredParams, Variant, numerical_rank
from .solver import FitResult, objective

FORMAT_VERSION = 1


class InputError(ValueError):
    """Malformed user input (maps to exit code 1)."""


def write_atomic(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def parse_names(arg: str | None) -> list[str] | None:
    """``a,b,c`` or ``@FILE`` (a JSON list, or names separated by commas or newlines)."""
    if arg is None:
        return None
    if arg.startswith("@"):
        try:
            with open(arg[1:]) as f:
                text = f.read()
        except OSError as exc:
            raise InputError(f"cannot read names file {arg[1:]!r}: {exc.strerror}") from None
        try:
            names = json.loads(text)
            if not isinstance(names, list):
                raise InputError(f"names file {arg[1:]!r} must hold a JSON list")
            return [str(x) for x in names]
        except json.JSONDecodeError:
            return [t.strip() for t in text.replace("\n", ",").split(",") if t.strip()]
    return [t.strip() for t in arg.split(",") if t.strip()]


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and numeric body of a CSV file; every cell must be a finite number."""
    try:
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
    except OSError as exc:
        raise InputError(f"cannot read {path!r}: {exc.strerror}") from None
    if not rows:
        raise InputError(f"{path}: empty file, a header row is required")
    header = [h.strip() for h in rows[0]]
    seen = set()
    for h in header:
        if h in seen:
            raise InputError(f"{path}: duplicate column name {h!r}")
        seen.add(h)
    body = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise InputError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{path}: row {r}, column {header[c]!r}: {cell!r} is not a number") from None
            if not math.isfinite(v):
                raise InputError(f"{path}: row {r}, column {header[c]!r}: non-finite value")
            body[r - 2, c] = v
    return header, body


def write_csv(path, header, data) -> None:
    lines = [",".join(header)]
    lines += [",".join(repr(float(v)) for v in row) for row in np.asarray(data)]
    write_atomic(path, "\n".join(lines) + "\n")


def select_columns(header, data, names) -> np.ndarray:
    idx = {h: i for i, h in enumerate(header)}
    missing = [n for n in names if n not in idx]
    if missing:
        raise InputError(f"missing column(s): {', '.join(missing)}")
    return data[:, [idx[n] for n in names]]


def read_dataset(path, responses, covariates=None) -> tuple[np.ndarray, list[str]]:
    """Columns ``responses + covariates`` of a CSV file, responses first."""
    header, data = read_csv(path)
    if not responses:
        raise InputError("at least one response column is required")
    covariates = covariates or []
    names = list(responses) + list(covariates)
    if len(set(names)) != len(names):
        raise InputError("a column is listed twice among responses and covariates")
    return select_columns(header, data, names), names


# -- model files ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelFile:
    """A fitted model as stored on disk."""

    reg: RegConfig
    p: int
    q: int
    column_names: list
    theta: JointPrecision
    params: StructuredParams
    latent_rank: int
    cross_rank: int
    column_support: tuple
    objective: float
    sigma_n: np.ndarray
    solver: dict
    standardization: dict | None

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        """Off-diagonal nonzeros ``(i, j, value)`` with ``i < j``."""
        if self.reg.variant.is_factor:
            return []
        s = self.params.s_Y
        i, j = np.nonzero(np.triu(s, 1))
        return [(int(a), int(b), float(s[a, b])) for a, b in zip(i, j)]

    @property
    def complexity(self):
        from .model import count_parameters

        cols = len(self.column_support) if self.reg.variant.column_sparse else None
        return count_parameters(
            self.p, self.q, len(self.edges), self.latent_rank,
            min(self.cross_rank, self.p, self.q), cols,
        )

    @property
    def theta_hat(self) -> JointPrecision:
        return self.theta

    def recompute_objective(self) -> float:
        return objective(self.reg, self.params, self.theta, self.sigma_n)


def _latent_factors(l: np.ndarray, rank: int) -> np.ndarray:
    if rank == 0:
        return np.zeros((l.shape[0], 0))
    w, v = np.linalg.eigh(l)
    idx = np.argsort(w)[::-1][:rank]
    return v[:, idx] * np.sqrt(np.maximum(w[idx], 0.0))


def model_to_dict(
    res: FitResult,
    column_names,
    sigma_n,
    standardization: dict | None = None,
    tol: float | None = None,
) -> dict:
    p, q = res.p, res.q
    ph = res.params_hat
    s = ph.s_Y
    i, j = np.nonzero(np.triu(s))
    return {
        "format_version": FORMAT_VERSION,
        "variant": res.variant.value,
        "p": p,
        "q": q,
        "column_names": list(column_names),
        "lambda_n": res.reg.lambda_n,
        "gamma": res.reg.gamma,
        "delta": res.reg.delta,
        "penalize_diagonal": res.reg.penalize_diagonal,
        "theta_hat": res.theta_hat.theta.ravel().tolist(),
        "s_Y": [[int(a), int(b), float(s[a, b])] for a, b in zip(i, j)],
        "l_Y": ph.l_Y.ravel().tolist(),
        "l_Y_factors": _latent_factors(ph.l_Y, res.latent_rank).tolist(),
        "theta_YX": ph.theta_YX.ravel().tolist(),
        "theta_X": ph.theta_X.ravel().tolist(),
        "ranks": {"latent": res.latent_rank, "cross": res.cross_rank},
        "support": {
            "edges": [[int(a), int(b)] for a, b in zip(i, j) if a < b],
            "columns": list(res.column_support),
        },
        "objective": res.objective,
        "sigma_n": np.asarray(sigma_n, dtype=float).ravel().tolist(),
        "solver": {"iterations": res.iterations, "converged": res.converged, "tol": tol},
        "standardization": standardization,
    }


def model_from_dict(d: dict) -> ModelFile:
    if d.get("format_version") != FORMAT_VERSION:
        raise InputError(f"unsupported model format_version {d.get('format_version')!r}")
    try:
        p, q = int(d["p"]), int(d["q"])
        reg = RegConfig(
            Variant(d["variant"]), float(d["lambda_n"]), float(d["gamma"]), float(d["delta"]),
            bool(d["penalize_diagonal"]),
        )
        theta = np.array(d["theta_hat"], dtype=float).reshape(p + q, p + q)
        s = np.zeros((p, p))
        for a, b, v in d["s_Y"]:
            s[a, b] = s[b, a] = v
        l = np.array(d["l_Y"], dtype=float).reshape(p, p)
        k = np.array(d["theta_YX"], dtype=float).reshape(p, q)
        o = np.array(d["theta_X"], dtype=float).reshape(q, q)
        sigma_n = np.array(d["sigma_n"], dtype=float).reshape(p + q, p + q)
        ranks = d["ranks"]
        support = d["support"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed model file: {exc}") from None
    if np.abs(theta - theta.T).max(initial=0.0) > 0:
        raise InputError("theta_hat is not symmetric")
    jp = JointPrecision(p, q, theta)
    if not jp.is_pd:
        raise InputError("theta_hat is not positive definite")
    edges = {(a, b) for a, b, _ in d["s_Y"] if a < b}
    if edges != {tuple(e) for e in support["edges"]}:
        raise InputError("sparse triplets do not match the declared support")
    fac = np.array(d["l_Y_factors"], dtype=float).reshape(p, -1)
    if fac.shape[1] != int(ranks["latent"]) or (fac.size and numerical_rank(fac) != fac.shape[1]):
        raise InputError("latent factors do not match the declared rank")
    params = StructuredParams(s, l, k, o, latent=reg.variant.has_latent)
    return ModelFile(
        reg, p, q, list(d["column_names"]), jp, params, int(ranks["latent"]),
        int(ranks["cross"]), tuple(int(c) for c in support["columns"]), float(d["objective"]),
        sigma_n, dict(d.get("solver") or {}), d.get("standardization"),
    )


def load_model(path) -> ModelFile:
    try:
        with open(path) as f:
            d = json.load(f)
    except OSError as exc:
        raise InputError(f"cannot read {path!r}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    return model_from_dict(d)
