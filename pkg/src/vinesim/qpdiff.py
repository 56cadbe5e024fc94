"""Dense convex QP solver with implicit-KKT sensitivities.

Problems have the form::

    minimize    1/2 z'Qz + lin'z
    subject to  A_eq z = b_eq
                G_ineq z <= h_ineq

with multipliers following ``Qz + lin + A'nu + G'mu = 0``, ``mu >= 0``.

The solver is a batched Mehrotra predictor-corrector interior-point method
followed by an active-set polish that solves the equality-constrained KKT
system on the identified active set. Problems of equal shape are stacked so a
batch costs a handful of vectorised LAPACK calls per iteration; every element
follows exactly the arithmetic it would follow alone.

Reverse-mode sensitivities differentiate the KKT system restricted to the
strongly active set (multiplier above ``dual_tol``); weakly active
constraints are treated as inactive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

SOLVED = "solved"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"

DUAL_TOL = 1e-7
PRIMAL_TOL = 1e-7
KKT_TOL = 1e-6


class QPError(RuntimeError):
    """Solver failure carrying a reproducible dump of the offending problem."""

    def __init__(self, message: str, dump: Optional[dict] = None):
        super().__init__(message)
        self.dump = dump


class QPDifferentiationError(QPError):
    """Raised when the reduced KKT matrix is singular."""

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


@dataclass
class QPProblem:
    Q: np.ndarray
    lin: np.ndarray
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    G_ineq: Optional[np.ndarray] = None
    h_ineq: Optional[np.ndarray] = None

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        n = self.Q.shape[0]
        self.lin = np.asarray(self.lin, dtype=float).reshape(n)
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.G_ineq = np.zeros((0, n)) if self.G_ineq is None else np.asarray(self.G_ineq, dtype=float).reshape(-1, n)
        self.h_ineq = np.zeros(0) if self.h_ineq is None else np.asarray(self.h_ineq, dtype=float).reshape(-1)
        if self.Q.shape != (n, n):
            raise ValueError("Q must be square")
        if len(self.b_eq) != len(self.A_eq) or len(self.h_ineq) != len(self.G_ineq):
            raise ValueError("constraint matrix and right-hand side sizes disagree")

    @property
    def shape(self) -> tuple:
        return (self.Q.shape[0], self.A_eq.shape[0], self.G_ineq.shape[0])

    def to_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist() for k in ("Q", "lin", "A_eq", "b_eq", "G_ineq", "h_ineq")}

    @classmethod
    def from_dict(cls, data: dict) -> "QPProblem":
        return cls(**{k: np.asarray(v, dtype=float) for k, v in data.items()})


@dataclass
class QPSolution:
    z: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    status: str
    iterations: int = 0
    active_set: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    residuals: dict = field(default_factory=dict)

    @property
    def slack(self) -> Optional[np.ndarray]:
        return self.residuals.get("slack")

    def to_dict(self) -> dict:
        out = {k: np.asarray(getattr(self, k)).tolist() for k in ("z", "nu", "mu", "active_set")}
        out.update(status=self.status, iterations=self.iterations)
        out["residuals"] = {k: np.asarray(v).tolist() for k, v in self.residuals.items()}
        return out


def dump_problem(problem: QPProblem, solution: Optional[QPSolution] = None, path=None) -> dict:
    """Structured record of a problem (and solution) for failure reproduction."""
    record = {"problem": problem.to_dict()}
    if solution is not None:
        record["solution"] = solution.to_dict()
    if path is not None:
        with open(path, "w") as fh:
            json.dump(record, fh)
    return record


def kkt_residuals(Q, lin, A, b, G, h, z, nu, mu) -> dict:
    """Stationarity, feasibility and complementarity residuals (stacked arrays)."""
    stat = _mv(Q, z) + lin + _mtv(A, nu) + _mtv(G, mu)
    slack = h - _mv(G, z)
    return {
        "stationarity": _inf(stat),
        "equality": _inf(_mv(A, z) - b),
        "inequality": _inf(np.maximum(-slack, 0.0)),
        "complementarity": _inf(mu * slack),
        "slack": slack,
        "scale": 1.0 + _inf(lin),
    }


def _within_tolerance(res: dict, tol: float = KKT_TOL) -> np.ndarray:
    return (
        (res["stationarity"] <= tol * res["scale"])
        & (res["equality"] <= tol)
        & (res["inequality"] <= tol)
        & (res["complementarity"] <= tol)
    )


def _mv(M, x):
    return np.matmul(M, x[..., None])[..., 0]


def _mtv(M, x):
    return np.matmul(np.swapaxes(M, -1, -2), x[..., None])[..., 0]


def _inf(x):
    return np.max(np.abs(x), axis=-1, initial=0.0)


def _max_step(x, dx):
    """Largest alpha in (0, 1] keeping ``x + alpha dx >= 0`` per batch row."""
    ratio = np.where(dx < 0, -x / np.where(dx < 0, dx, -1.0), np.inf)
    return np.minimum(1.0, np.min(ratio, axis=-1, initial=np.inf))


def _kkt_solve(K, rhs):
    return np.linalg.solve(K, rhs[..., None])[..., 0]


def solve_stacked(Q, lin, A, b, G, h, *, warm_z=None, warm_mu=None, max_iter: int = 60,
                  tol: float = 1e-11, polish: bool = True) -> dict:
    """Solve a stack of same-shape QPs.

    Arrays carry a leading batch axis. Returns a dict of stacked arrays
    ``z, nu, mu, slack, iterations, converged`` plus a ``status`` list.
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _solve_stacked(Q, lin, A, b, G, h, warm_z, warm_mu, max_iter, tol, polish)


def _solve_stacked(Q, lin, A, b, G, h, warm_z, warm_mu, max_iter, tol, polish):
    Q, lin, A, b, G, h = (np.asarray(x, dtype=float) for x in (Q, lin, A, b, G, h))
    B, n = lin.shape
    p, m = b.shape[1], h.shape[1]
    At = np.swapaxes(A, 1, 2)
    Gt = np.swapaxes(G, 1, 2)
    zeros_pp = np.zeros((B, p, p))

    def kkt_matrix(H):
        top = np.concatenate([H, At], axis=2)
        bot = np.concatenate([A, zeros_pp], axis=2)
        return np.concatenate([top, bot], axis=1)

    # starting point: minimiser of the objective plus 1/2 ||Gz - h||^2 on Az = b
    K0 = kkt_matrix(Q + np.matmul(Gt, G))
    rhs0 = np.concatenate([-lin + _mv(Gt, h), b], axis=1)
    try:
        sol0 = _kkt_solve(K0, rhs0)
    except np.linalg.LinAlgError:
        sol0 = np.stack([_lstsq(K0[i], rhs0[i]) for i in range(B)])
    z = sol0[:, :n]
    nu = sol0[:, n:]
    if warm_z is not None:
        z = np.array(warm_z, dtype=float).reshape(B, n)
    r = h - _mv(G, z)
    shift = np.maximum(0.0, 1.0 - np.min(r, axis=1, initial=np.inf))
    s = r + shift[:, None]
    mu = np.ones((B, m))
    if warm_mu is not None:
        mu = np.maximum(np.array(warm_mu, dtype=float).reshape(B, m), 1e-3)

    iterations = np.zeros(B, dtype=int)
    done = np.zeros(B, dtype=bool)
    scale_d = 1.0 + _inf(lin)
    scale_b = 1.0 + _inf(b)
    scale_h = 1.0 + _inf(h)

    for it in range(max_iter + 1):
        rd = _mv(Q, z) + lin + _mv(At, nu) + _mv(Gt, mu)
        rp = _mv(A, z) - b
        ri = _mv(G, z) + s - h
        gap = np.sum(s * mu, axis=1) / max(m, 1)
        done = done | (
            (_inf(rd) <= tol * scale_d) & (_inf(rp) <= tol * scale_b)
            & (_inf(ri) <= tol * scale_h) & (gap <= tol)
        )
        if np.all(done) or it == max_iter:
            break
        live = ~done
        iterations = iterations + live

        D = mu / s
        H = Q + np.matmul(Gt * D[:, None, :], G)
        K = kkt_matrix(H)

        def direction(rc):
            rhs_z = -rd - _mv(Gt, D * ri - rc / s)
            sol = _solve_or_regularise(K, np.concatenate([rhs_z, -rp], axis=1))
            dz, dnu = sol[:, :n], sol[:, n:]
            gdz = _mv(G, dz)
            dmu = D * (gdz + ri) - rc / s
            ds = -ri - gdz
            return dz, dnu, dmu, ds

        dz, dnu, dmu, ds = direction(s * mu)
        if m:
            alpha = np.minimum(_max_step(s, ds), _max_step(mu, dmu))
            mu_aff = np.sum((s + alpha[:, None] * ds) * (mu + alpha[:, None] * dmu), axis=1) / m
            sigma = (mu_aff / np.maximum(gap, 1e-300)) ** 3
            rc = s * mu + ds * dmu - (sigma * gap)[:, None]
            dz, dnu, dmu, ds = direction(rc)
            alpha = np.minimum(1.0, 0.99 * np.minimum(_max_step(s, ds), _max_step(mu, dmu)))
        else:
            alpha = np.ones(B)
        alpha = np.where(live, alpha, 0.0)[:, None]
        z = z + alpha * dz
        nu = nu + alpha * dnu
        s = s + alpha * ds
        mu = mu + alpha * dmu

    converged = done.copy()
    if polish and m:
        z, nu, mu = _polish(Q, lin, A, b, G, h, z, nu, mu, s)

    res = kkt_residuals(Q, lin, A, b, G, h, z, nu, mu)
    ok = _within_tolerance(res)
    status = []
    for i in range(B):
        if ok[i]:
            status.append(SOLVED)
        elif _equalities_inconsistent(A[i], b[i]):
            status.append(INFEASIBLE)
        else:
            status.append(MAX_ITER)
    return {
        "z": z, "nu": nu, "mu": mu, "slack": res["slack"], "iterations": iterations,
        "converged": converged, "status": status, "residuals": res,
    }


def _lstsq(K, rhs):
    return np.linalg.lstsq(K, rhs, rcond=None)[0]


def _solve_or_regularise(K, rhs):
    try:
        return _kkt_solve(K, rhs)
    except np.linalg.LinAlgError:
        # rank-deficient equality rows: fall back to least squares per element
        return np.stack([_lstsq(K[i], rhs[i]) for i in range(len(K))])


def _equalities_inconsistent(A, b, tol: float = 1e-8) -> bool:
    if A.shape[0] == 0:
        return False
    x = _lstsq(A, b)
    return float(np.max(np.abs(A @ x - b))) > tol * (1.0 + float(np.max(np.abs(b))))


def _polish(Q, lin, A, b, G, h, z, nu, mu, s):
    """Re-solve the KKT system on the active set guessed from the IPM iterate."""
    B, n = lin.shape
    p, m = b.shape[1], h.shape[1]
    active = mu > s
    act = active.astype(float)
    Ga = G * act[:, :, None]
    K = np.zeros((B, n + p + m, n + p + m))
    K[:, :n, :n] = Q
    K[:, :n, n:n + p] = np.swapaxes(A, 1, 2)
    K[:, :n, n + p:] = np.swapaxes(Ga, 1, 2)
    K[:, n:n + p, :n] = A
    K[:, n + p:, :n] = Ga
    idx = np.arange(m)
    K[:, n + p + idx, n + p + idx] = 1.0 - act
    rhs = np.concatenate([-lin, b, h * act], axis=1)
    try:
        sol = _kkt_solve(K, rhs)
    except np.linalg.LinAlgError:
        return z, nu, mu
    zp, nup, mup = sol[:, :n], sol[:, n:n + p], sol[:, n + p:] * act
    before = kkt_residuals(Q, lin, A, b, G, h, z, nu, mu)
    mup_c = np.maximum(mup, 0.0)
    after = kkt_residuals(Q, lin, A, b, G, h, zp, nup, mup_c)
    better = (
        np.all(np.isfinite(sol), axis=1)
        & (np.min(mup, axis=1, initial=0.0) >= -1e-9)
        & (after["inequality"] <= np.maximum(before["inequality"], 1e-12))
        & (after["stationarity"] <= np.maximum(before["stationarity"], 1e-12 * after["scale"]))
    )
    keep = better[:, None]
    return np.where(keep, zp, z), np.where(keep, nup, nu), np.where(keep, mup_c, mu)


def _to_solution(out: dict, i: int) -> QPSolution:
    slack = out["slack"][i]
    mu = out["mu"][i]
    res = {k: (v[i] if np.ndim(v) else v) for k, v in out["residuals"].items()}
    return QPSolution(
        z=out["z"][i].copy(),
        nu=out["nu"][i].copy(),
        mu=mu.copy(),
        status=out["status"][i],
        iterations=int(out["iterations"][i]),
        active_set=np.flatnonzero(slack <= PRIMAL_TOL),
        residuals={k: (np.array(v) if np.ndim(v) else float(v)) for k, v in res.items()},
    )


def solve(problem: QPProblem, warm_start: Optional[QPSolution] = None, **options) -> QPSolution:
    """Solve one QP; identical to a batch of one."""
    return solve_batch([problem], warm_starts=[warm_start], **options)[0]


def solve_batch(problems: Sequence[QPProblem], warm_starts=None, **options) -> list:
    """Solve independent QPs, stacking problems that share a shape.

    Element ``i`` of the result equals ``solve(problems[i])`` exactly.
    """
    problems = list(problems)
    if not problems:
        return []
    warm_starts = list(warm_starts) if warm_starts is not None else [None] * len(problems)
    groups: dict = {}
    for i, prob in enumerate(problems):
        groups.setdefault((prob.shape, warm_starts[i] is not None), []).append(i)
    results: list = [None] * len(problems)
    for (_, warm), idx in groups.items():
        stack = [np.stack([getattr(problems[i], k) for i in idx]) for k in ("Q", "lin", "A_eq", "b_eq", "G_ineq", "h_ineq")]
        kwargs = dict(options)
        if warm:
            kwargs["warm_z"] = np.stack([warm_starts[i].z for i in idx])
            kwargs["warm_mu"] = np.stack([warm_starts[i].mu for i in idx])
        out = solve_stacked(*stack, **kwargs)
        for j, i in enumerate(idx):
            results[i] = _to_solution(out, j)
    return results


def backward_stacked(Q, A, G, z, nu, mu, slack, grad_z, *, dual_tol: float = DUAL_TOL,
                     primal_tol: float = PRIMAL_TOL) -> dict:
    """Vector-Jacobian products of a stack of solutions w.r.t. all problem data."""
    Q, A, G, z, nu, mu, slack, grad_z = (np.asarray(x, dtype=float) for x in (Q, A, G, z, nu, mu, slack, grad_z))
    B, n = z.shape
    p, m = nu.shape[1], mu.shape[1]
    strong = (mu > dual_tol) & (slack <= primal_tol)
    act = strong.astype(float)
    Ga = G * act[:, :, None]
    K = np.zeros((B, n + p + m, n + p + m))
    K[:, :n, :n] = Q
    K[:, :n, n:n + p] = np.swapaxes(A, 1, 2)
    K[:, :n, n + p:] = np.swapaxes(Ga, 1, 2)
    K[:, n:n + p, :n] = A
    K[:, n + p:, :n] = Ga
    idx = np.arange(m)
    K[:, n + p + idx, n + p + idx] = 1.0 - act
    rhs = np.concatenate([grad_z, np.zeros((B, p + m))], axis=1)
    try:
        w = _kkt_solve(K, rhs)
        if not np.all(np.isfinite(w)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        cond = float(max(np.linalg.cond(K[i]) for i in range(B)))
        raise QPDifferentiationError(f"reduced KKT matrix is singular (condition {cond:.3e})", cond) from None
    wz, wnu, wmu = w[:, :n], w[:, n:n + p], w[:, n + p:] * act
    mu_a = mu * act
    dQ = -0.5 * (wz[:, :, None] * z[:, None, :] + z[:, :, None] * wz[:, None, :])
    return {
        "Q": dQ,
        "lin": -wz,
        "A_eq": -(nu[:, :, None] * wz[:, None, :] + wnu[:, :, None] * z[:, None, :]),
        "b_eq": wnu,
        "G_ineq": -(mu_a[:, :, None] * wz[:, None, :] + wmu[:, :, None] * z[:, None, :]),
        "h_ineq": wmu,
        "strongly_active": strong,
    }


def solve_backward(problem: QPProblem, solution: QPSolution, loss_gradient_wrt_z, **options) -> dict:
    """Gradients of a scalar loss with respect to every problem array.

    ``loss_gradient_wrt_z`` is dL/dz at ``solution``. The returned dict maps
    ``Q, lin, A_eq, b_eq, G_ineq, h_ineq`` to arrays of matching shape.
    """
    if solution.status != SOLVED:
        raise QPError(f"cannot differentiate a solution with status {solution.status!r}")
    slack = problem.h_ineq - problem.G_ineq @ solution.z
    out = backward_stacked(
        problem.Q[None], problem.A_eq[None], problem.G_ineq[None], solution.z[None],
        solution.nu[None], solution.mu[None], slack[None],
        np.asarray(loss_gradient_wrt_z, dtype=float).reshape(1, -1), **options,
    )
    return {k: v[0] for k, v in out.items() if k != "strongly_active"}


class QPFunction(torch.autograd.Function):
    """Batched QP layer: ``z = argmin`` with gradients from :func:`backward_stacked`.

    ``info`` is a dict the forward pass fills with per-element status and the
    raw solver output; it is how callers learn about failures.
    """

    @staticmethod
    def forward(ctx, Q, lin, A, b, G, h, info):
        arrays = [t.detach().cpu().numpy() for t in (Q, lin, A, b, G, h)]
        out = solve_stacked(*arrays)
        info["status"] = out["status"]
        info["out"] = out
        ctx.numpy = (arrays[0], arrays[2], arrays[4], out)
        return torch.as_tensor(out["z"], dtype=Q.dtype)

    @staticmethod
    def backward(ctx, grad_z):
        Qn, An, Gn, out = ctx.numpy
        g = backward_stacked(Qn, An, Gn, out["z"], out["nu"], out["mu"], out["slack"], grad_z.detach().numpy())
        conv = [torch.as_tensor(g[k], dtype=grad_z.dtype) for k in ("Q", "lin", "A_eq", "b_eq", "G_ineq", "h_ineq")]
        return (*[c if need else None for c, need in zip(conv, ctx.needs_input_grad[:6])], None)


def qp_layer(Q, lin, A, b, G, h, info: Optional[dict] = None):
    """Differentiable batched solve; see :class:`QPFunction`."""
    return QPFunction.apply(Q, lin, A, b, G, h, {} if info is None else info)
