"""Independent reference solvers used only by the tests."""

import numpy as np

from sdrgraph.model import RegConfig


def cvx_objective(reg: RegConfig, sigma_n, p: int, q: int) -> float:
    """Optimal value of the variant's program via cvxpy (Clarabel)."""
    import cvxpy as cp

    v, lam = reg.variant, reg.lambda_n
    s = cp.Variable((p, p), symmetric=True)
    l = cp.Variable((p, p), symmetric=True)
    k = cp.Variable((p, q))
    o = cp.Variable((q, q), symmetric=True)
    cons = []
    if v.is_factor:
        d = cp.Variable(p)
        ty = cp.diag(d) - l
        cons.append(l >> 0)
    elif v.has_latent:
        ty = s - l
        cons.append(l >> 0)
    else:
        ty = s
    th = cp.bmat([[ty, k], [k.T, o]])
    pen = reg.gamma * (cp.sum(cp.norm(k, 2, axis=0)) if v.column_sparse else cp.normNuc(k))
    if v.has_latent:
        pen += cp.trace(l)
    if not v.is_factor:
        w = np.ones((p, p))
        if not reg.penalize_diagonal:
            np.fill_diagonal(w, 0.0)
        l1 = cp.sum(cp.multiply(w, cp.abs(s)))
        pen += reg.sparse_weight * l1
    obj = -cp.log_det(th) + cp.trace(sigma_n @ th) + lam * pen
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL)
    return float(prob.value)


def _objective(reg, sigma, s, l, k, o):
    th = np.block([[s - l, k], [k.T, o]])
    try:
        c = np.linalg.cholesky(th)
    except np.linalg.LinAlgError:
        return np.inf, None
    v = reg.variant
    pen = reg.gamma * (
        np.linalg.norm(k, axis=0).sum() if v.column_sparse else np.linalg.svd(k, compute_uv=False).sum()
    )
    if v.has_latent:
        pen += np.trace(l)
    if not v.is_factor:
        a = np.abs(s)
        pen += reg.sparse_weight * (a.sum() - (0.0 if reg.penalize_diagonal else np.trace(a)))
    f = -2.0 * np.log(np.diag(c)).sum() + np.sum(sigma * th) + reg.lambda_n * pen
    return f, th


def subgradient_objective(reg: RegConfig, sigma_n, p: int, q: int, iters: int = 20000, step0: float = 3.0):
    """Best objective found by projected subgradient descent with ``1/sqrt(k)`` steps.

    Only an upper bound on the optimum: used to check that no feasible point
    beats the splitting solver.
    """
    v = reg.variant
    sigma = np.asarray(sigma_n, dtype=float)
    th0 = np.linalg.inv(sigma + 1e-3 * np.eye(p + q))
    s = th0[:p, :p].copy()
    if v.is_factor:
        s = np.diag(np.diag(s))
    l = np.zeros((p, p))
    k = th0[:p, p:].copy()
    o = th0[p:, p:].copy()
    lam = reg.lambda_n
    best = _objective(reg, sigma, s, l, k, o)[0]
    for it in range(1, iters + 1):
        f, th = _objective(reg, sigma, s, l, k, o)
        g = sigma - np.linalg.inv(th)
        gy, gk, gx = g[:p, :p], g[:p, p:], g[p:, p:]
        if v.is_factor:
            ds = np.diag(np.diag(gy))
        else:
            sg = np.sign(s)
            if not reg.penalize_diagonal:
                np.fill_diagonal(sg, 0.0)
            ds = gy + lam * reg.sparse_weight * sg
        dl = -gy + lam * np.eye(p) if v.has_latent else np.zeros((p, p))
        if v.column_sparse:
            nk = np.linalg.norm(k, axis=0)
            sk = np.where(nk > 0, k / np.where(nk > 0, nk, 1.0), 0.0)
        else:
            u, sv, vt = np.linalg.svd(k, full_matrices=False)
            r = int(np.sum(sv > 1e-12))
            sk = u[:, :r] @ vt[:r]
        dk = 2.0 * gk + lam * reg.gamma * sk
        do = gx
        t = step0 / np.sqrt(it)
        while True:
            s1, l1, k1, o1 = s - t * ds, l - t * dl, k - t * dk, o - t * do
            if v.has_latent:
                w, q_ = np.linalg.eigh(0.5 * (l1 + l1.T))
                l1 = (q_ * np.maximum(w, 0.0)) @ q_.T
            s1, o1 = 0.5 * (s1 + s1.T), 0.5 * (o1 + o1.T)
            f1 = _objective(reg, sigma, s1, l1, k1, o1)[0]
            if np.isfinite(f1):
                break
            t *= 0.5
        s, l, k, o = s1, l1, k1, o1
        best = min(best, f1)
    return float(best)


def box_faces(scales, res: float = 1e-3, chunk: int = 2_000_000):
    """Points on the positive faces of the box ``|c_i| <= scales[i]`` (its boundary up to sign).

    Each face is gridded at spacing ``res`` relative to the box; yields
    arrays of shape ``(m, d)`` in chunks.
    """
    scales = np.asarray(scales, dtype=float)
    d = scales.size
    n = int(round(2.0 / res)) + 1
    axis = np.linspace(-1.0, 1.0, n)
    for face in range(d):
        others = [i for i in range(d) if i != face]
        if not others:
            yield scales[None, :].copy()
            continue
        grids = np.meshgrid(*([axis] * len(others)), indexing="ij")
        flat = np.stack([g.ravel() for g in grids], axis=1)
        for start in range(0, flat.shape[0], chunk):
            part = flat[start : start + chunk]
            pts = np.empty((part.shape[0], d))
            pts[:, face] = 1.0
            pts[:, others] = part
            yield pts * scales


def scalar_phi(v, delta, gamma):
    """``Phi`` of stacked quadruple coordinates at ``p = q = 1`` (columns s, l, k, o)."""
    v = np.abs(np.atleast_2d(v))
    return np.maximum.reduce([v[:, 0] / delta, v[:, 1], v[:, 2] / gamma, v[:, 3]])


def grid_extremum(num_map, basis, delta, gamma, maximize, res=1e-3):
    """Extremum of ``Phi(num_map c) / Phi(basis c)`` over the unit ``Phi`` sphere at ``p = q = 1``.

    ``basis`` must consist of coordinate axes so the sphere is a box boundary.
    """
    unit = np.array([delta, 1.0, gamma, 1.0])
    axes = np.argmax(np.abs(basis), axis=0)
    scales = unit[axes]
    best = -np.inf if maximize else np.inf
    for pts in box_faces(scales, res):
        den = scalar_phi(pts @ basis.T, delta, gamma)
        val = scalar_phi(pts @ num_map.T, delta, gamma) / den
        best = max(best, val.max()) if maximize else min(best, val.min())
    return float(best)
