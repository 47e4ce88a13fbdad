"""Wasserstein-1 between small discrete measures: exact LP and Sinkhorn."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import NoConvergence, NumericalUnderflow, SupportTooLarge

log = logging.getLogger(__name__)

EXACT_SUPPORT_LIMIT = 12


@dataclass
class TransportResult:
    cost: float
    plan: np.ndarray
    iterations: int = 0
    converged: bool = True


def _as_problem(a, b, cost):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (a.size, b.size):
        raise ValueError(f"cost shape {cost.shape} does not match masses {a.size}x{b.size}")
    return a, b, cost


def exact_plan(a, b, cost, support_limit=EXACT_SUPPORT_LIMIT) -> TransportResult:
    """Optimal transport plan of the discrete LP via the HiGHS dual simplex."""
    a, b, cost = _as_problem(a, b, cost)
    m, n = cost.shape
    if m > support_limit or n > support_limit:
        raise SupportTooLarge(f"supports {m}x{n} exceed exact limit {support_limit}; use Sinkhorn")
    if m == 1 or n == 1:
        # a single atom on one side fixes the plan
        plan = b[None, :].copy() if m == 1 else a[:, None].copy()
        return TransportResult(float((plan * cost).sum()), plan)
    a_eq = np.zeros((m + n, m * n))
    for i in range(m):
        a_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        a_eq[m + j, j::n] = 1.0
    res = linprog(cost.ravel(), A_eq=a_eq[:-1], b_eq=np.concatenate([a, b])[:-1],
                  bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    plan = np.maximum(res.x.reshape(m, n), 0.0)
    return TransportResult(float((plan * cost).sum()), plan)


def w1_exact(a, b, cost, support_limit=EXACT_SUPPORT_LIMIT) -> float:
    """Exact Wasserstein-1 cost; supports beyond ``support_limit`` raise :class:`SupportTooLarge`."""
    return exact_plan(a, b, cost, support_limit).cost


def round_to_polytope(plan, a, b):
    """Project an approximate plan onto exact marginals (Altschuler et al., 2017)."""
    r = plan.sum(1)
    x = np.minimum(1.0, np.divide(a, r, out=np.ones_like(a), where=r > 0))
    plan = plan * x[:, None]
    c = plan.sum(0)
    y = np.minimum(1.0, np.divide(b, c, out=np.ones_like(b), where=c > 0))
    plan = plan * y[None, :]
    err_r = a - plan.sum(1)
    err_c = b - plan.sum(0)
    total = err_r.sum()
    if total > 0:
        plan = plan + np.outer(err_r, err_c) / total
    return plan


def sinkhorn_plan(a, b, cost, epsilon=1e-3, max_iters=10000, tolerance=1e-9,
                  stabilized=True, scaling=0.5) -> TransportResult:
    """Entropic transport plan, rounded to the exact marginals.

    The log-domain variant anneals the regularisation geometrically from
    the cost scale down to ``epsilon`` with warm-started dual potentials;
    the final stage iterates until the row-marginal L1 violation is below
    ``tolerance`` or ``max_iters`` total iterations elapse.
    """
    a, b, cost = _as_problem(a, b, cost)
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    # zero-mass atoms carry no plan mass; solve on the positive support
    ia, ib = np.flatnonzero(a > 0), np.flatnonzero(b > 0)
    sub = cost[np.ix_(ia, ib)]
    if stabilized:
        res = _sinkhorn_log(a[ia], b[ib], sub, epsilon, max_iters, tolerance, scaling)
    else:
        res = _sinkhorn_kernel(a[ia], b[ib], sub, epsilon, max_iters, tolerance)
    full = np.zeros(cost.shape)
    full[np.ix_(ia, ib)] = res.plan
    res.plan = full
    return res


def _sinkhorn_log(a, b, cost, epsilon, max_iters, tolerance, scaling):
    # potentials are kept divided by the current eps (F = f / eps, G = g / eps)
    log_a, log_b = np.log(a), np.log(b)
    F = np.zeros(len(a))
    G = np.zeros(len(b))
    eps = max(float(cost.max(initial=0.0)), epsilon)
    it = 0
    violation = np.inf
    while True:
        final = eps <= epsilon
        stage_tol = tolerance if final else max(tolerance, 1e-3)
        neg_c = -cost / eps
        neg_ct = neg_c.T.copy()
        fitted = False
        while it < max_iters:
            x = neg_c + G
            mx = x.max(axis=1)
            F_next = log_a - mx - np.log(np.exp(x - mx[:, None]).sum(axis=1))
            if fitted:
                # row sums of the current plan are a * exp(F - F_next), so the
                # next row update yields the marginal violation for free
                violation = np.abs(a * np.expm1(F - F_next)).sum()
                if violation < stage_tol:
                    break
            F = F_next
            y = neg_ct + F
            my = y.max(axis=1)
            G = log_b - my - np.log(np.exp(y - my[:, None]).sum(axis=1))
            it += 1
            fitted = True
        if final or it >= max_iters:
            break
        new_eps = max(eps * scaling, epsilon)
        F *= eps / new_eps
        G *= eps / new_eps
        eps = new_eps
    plan = np.exp(F[:, None] + G[None, :] - cost / eps)
    plan = round_to_polytope(plan, a, b)
    converged = bool(eps <= epsilon and violation < tolerance)
    return TransportResult(float((plan * cost).sum()), plan, it, converged)


def _sinkhorn_kernel(a, b, cost, epsilon, max_iters, tolerance):
    kernel = np.exp(-cost / epsilon)
    if not (kernel.sum(1) > 0).all() or not (kernel.sum(0) > 0).all():
        raise NumericalUnderflow("Gibbs kernel underflows; use the stabilized solver")
    u = np.ones(len(a))
    v = np.ones(len(b))
    it = 0
    violation = np.inf
    while it < max_iters:
        u = a / (kernel @ v)
        v = b / (kernel.T @ u)
        it += 1
        violation = np.abs(u * (kernel @ v) - a).sum()
        if not np.isfinite(violation):
            raise NumericalUnderflow("scaling vectors overflowed")
        if violation < tolerance:
            break
    plan = round_to_polytope(u[:, None] * kernel * v[None, :], a, b)
    return TransportResult(float((plan * cost).sum()), plan, it, violation < tolerance)


def w1_sinkhorn(a, b, cost, epsilon=1e-3, max_iters=10000, tolerance=1e-9, strict=False) -> float:
    """Transport cost of the rounded Sinkhorn plan (an upper bound on W1).

    Non-convergence logs a warning and returns the last iterate's cost, or
    raises :class:`NoConvergence` carrying that value when ``strict``.
    """
    res = sinkhorn_plan(a, b, cost, epsilon, max_iters, tolerance)
    if not res.converged:
        if strict:
            raise NoConvergence(res.iterations, res.cost)
        log.warning("Sinkhorn stopped after %d iterations; cost %.6g is approximate",
                    res.iterations, res.cost)
    return res.cost
