"""Entropy-regularized optimal transport between discrete marginals.

The workhorse is a log-domain Sinkhorn solver: scaling vectors are kept as
additive potentials and updated through log-sum-exp, so small regularization
weights cannot underflow the kernel.  A plain-domain variant of the classic
``a = mu_s / (K b)`` iteration is kept for comparison, and an exact linear
program (no entropy term) serves as an independent reference on small
problems.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "SinkhornConfig",
    "MarginalPair",
    "TransportPlan",
    "sinkhorn",
    "sinkhorn_batch",
    "transport_cost",
    "exact_ot_oracle",
]

# exact_ot_oracle is for verification only; it refuses plans bigger than this
ORACLE_MAX_CELLS = 256


@dataclass(frozen=True)
class SinkhornConfig:
    """Solver knobs.

    reg
        Entropy weight.  Smaller values track the exact plan more closely
        but need more iterations.
    max_iters
        Hard cap on update sweeps; the solver may stop earlier on ``tol``.
    tol
        Stop once the worst absolute row/column marginal violation of the
        current plan is at or below this.
    log_domain
        Run in the log domain (default).  The plain domain is faster per
        sweep but the kernel underflows for small ``reg``.
    """

    reg: float = 0.05
    max_iters: int = 100
    tol: float = 1e-6
    log_domain: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.reg) and self.reg > 0):
            raise ValueError(f"reg must be positive and finite, got {self.reg}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (np.isfinite(self.tol) and self.tol > 0):
            raise ValueError(f"tol must be positive and finite, got {self.tol}")


@dataclass(frozen=True)
class MarginalPair:
    """Source and target mass vectors; each must be a distribution."""

    mu_s: np.ndarray
    mu_t: np.ndarray

    def __post_init__(self):
        for name, mu in (("mu_s", self.mu_s), ("mu_t", self.mu_t)):
            arr = np.asarray(mu, dtype=np.float64)
            if arr.ndim != 1 or arr.size < 1:
                raise ValueError(f"{name} must be a non-empty vector")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            if arr.min() < 0:
                raise ValueError(f"{name} contains negative mass")
            if abs(arr.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} must sum to 1, got {arr.sum()!r}")
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def uniform(cls, n_s: int, n_t: int) -> "MarginalPair":
        return cls(np.full(n_s, 1.0 / n_s), np.full(n_t, 1.0 / n_t))


@dataclass(frozen=True)
class TransportPlan:
    """A coupling plus solver telemetry.

    ``marginal_error`` is the max-norm feasibility violation of ``plan``
    against the marginals it was solved for; ``converged`` records whether
    that violation reached the configured tolerance.  ``diagnostic`` is
    ``None`` unless the solver hit a numeric failure and fell back.
    """

    plan: np.ndarray
    converged: bool
    iterations_used: int
    marginal_error: float
    diagnostic: Optional[str] = None


def _validate_cost(cost: np.ndarray) -> np.ndarray:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or min(cost.shape) < 1:
        raise ValueError(f"cost must be a non-empty matrix, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite values")
    if cost.min() < 0:
        raise ValueError("cost matrix contains negative entries")
    return cost


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    # max-shifted; an all -inf slice legitimately yields -inf (zero mass)
    m = np.max(x, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(x - m_safe), axis=axis)) + np.squeeze(
            m_safe, axis=axis
        )


def sinkhorn_batch(
    costs: np.ndarray,
    mu_s: np.ndarray,
    mu_t: np.ndarray,
    config: SinkhornConfig = SinkhornConfig(),
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Solve a stack of independent problems in the log domain.

    ``costs`` is ``(B, n, m)`` with marginals ``(B, n)`` and ``(B, m)``.
    Returns ``(plans, converged, iterations, errors)``.  Instances are
    frozen as soon as they converge, and every update is elementwise or a
    fixed-order reduction over its own slice, so each instance's result is
    bitwise identical to solving it alone — batching is purely a speed-up.
    """
    if not config.log_domain:
        raise ValueError("batched solving is only implemented in the log domain")
    costs = np.asarray(costs, dtype=np.float64)
    mu_s = np.asarray(mu_s, dtype=np.float64)
    mu_t = np.asarray(mu_t, dtype=np.float64)
    if costs.ndim != 3:
        raise ValueError(f"costs must be (B, n, m), got shape {costs.shape}")
    b, n, m = costs.shape
    if mu_s.shape != (b, n) or mu_t.shape != (b, m):
        raise ValueError("marginal stacks do not match the cost stack")

    log_k = -costs / config.reg
    with np.errstate(divide="ignore"):  # zero mass -> -inf potential -> zero row
        log_mu_s = np.log(mu_s)
        log_mu_t = np.log(mu_t)

    f = np.zeros((b, n))
    g = np.zeros((b, m))
    iters = np.zeros(b, dtype=np.int64)
    errs = np.full(b, np.inf)
    conv = np.zeros(b, dtype=bool)
    active = np.arange(b)

    for it in range(1, config.max_iters + 1):
        lk = log_k[active]
        f_a = log_mu_s[active] - _logsumexp(lk + g[active][:, None, :], axis=2)
        g_a = log_mu_t[active] - _logsumexp(lk + f_a[:, :, None], axis=1)
        f[active] = f_a
        g[active] = g_a
        plan_a = np.exp(lk + f_a[:, :, None] + g_a[:, None, :])
        row_err = np.abs(plan_a.sum(axis=2) - mu_s[active]).max(axis=1)
        col_err = np.abs(plan_a.sum(axis=1) - mu_t[active]).max(axis=1)
        err_a = np.maximum(row_err, col_err)
        errs[active] = err_a
        iters[active] = it
        done = err_a <= config.tol
        conv[active[done]] = True
        active = active[~done]
        if active.size == 0:
            break

    plans = np.exp(log_k + f[:, :, None] + g[:, None, :])
    return plans, conv, iters, errs


def _sinkhorn_direct(cost, mu_s, mu_t, config: SinkhornConfig) -> TransportPlan:
    # classic scaling iteration; rows/cols with zero mass are excluded up
    # front so the divisions stay well defined
    rows = mu_s > 0
    cols = mu_t > 0
    k = np.exp(-cost[np.ix_(rows, cols)] / config.reg)
    ms, mt = mu_s[rows], mu_t[cols]
    u = np.ones(ms.size)
    v = np.ones(mt.size)

    def embed(sub):
        full = np.zeros_like(cost)
        full[np.ix_(rows, cols)] = sub
        return full

    best = embed(np.outer(ms, mt))  # independent coupling: feasible fallback
    best_err = _marginal_error(best, mu_s, mu_t)
    for it in range(1, config.max_iters + 1):
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            u = ms / (k @ v)
            v = mt / (k.T @ u)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            return TransportPlan(
                best,
                False,
                it - 1,
                best_err,
                diagnostic=(
                    "plain-domain scaling overflowed; returning the last finite "
                    "plan — rerun with log_domain=True"
                ),
            )
        best = embed(u[:, None] * k * v[None, :])
        best_err = _marginal_error(best, mu_s, mu_t)
        if best_err <= config.tol:
            return TransportPlan(best, True, it, best_err)
    return TransportPlan(best, False, config.max_iters, best_err)


def _marginal_error(plan, mu_s, mu_t) -> float:
    row = np.abs(plan.sum(axis=1) - mu_s).max()
    col = np.abs(plan.sum(axis=0) - mu_t).max()
    return float(max(row, col))


def sinkhorn(
    cost: np.ndarray,
    marginals: MarginalPair,
    config: SinkhornConfig = SinkhornConfig(),
) -> TransportPlan:
    """Solve one entropic transport problem.

    The returned plan is non-negative with marginals matching ``marginals``
    up to ``config.tol`` when ``converged`` is set.  Entries on zero-mass
    rows and columns are exactly zero.
    """
    cost = _validate_cost(cost)
    n, m = cost.shape
    if marginals.mu_s.shape != (n,) or marginals.mu_t.shape != (m,):
        raise ValueError(
            f"marginals ({marginals.mu_s.size}, {marginals.mu_t.size}) do not "
            f"match cost shape {cost.shape}"
        )
    if not config.log_domain:
        return _sinkhorn_direct(cost, marginals.mu_s, marginals.mu_t, config)
    plans, conv, iters, errs = sinkhorn_batch(
        cost[None], marginals.mu_s[None], marginals.mu_t[None], config
    )
    return TransportPlan(plans[0], bool(conv[0]), int(iters[0]), float(errs[0]))


def transport_cost(cost: np.ndarray, plan: TransportPlan | np.ndarray) -> float:
    """Total cost ``<C, T>`` moved by a plan."""
    cost = _validate_cost(cost)
    p = plan.plan if isinstance(plan, TransportPlan) else np.asarray(plan)
    if p.shape != cost.shape:
        raise ValueError(f"plan shape {p.shape} does not match cost {cost.shape}")
    return float(np.sum(cost * p))


def exact_ot_oracle(cost: np.ndarray, marginals: MarginalPair) -> TransportPlan:
    """Unregularized optimum via linear programming.

    Exact reference for testing the iterative solver; guarded to problems
    with at most ``ORACLE_MAX_CELLS`` plan entries because the LP has one
    variable per entry.
    """
    cost = _validate_cost(cost)
    n, m = cost.shape
    if n * m > ORACLE_MAX_CELLS:
        raise ValueError(
            f"oracle limited to {ORACLE_MAX_CELLS} plan entries, got {n * m}"
        )
    if marginals.mu_s.shape != (n,) or marginals.mu_t.shape != (m,):
        raise ValueError("marginals do not match cost shape")
    # equality constraints: n row sums then m column sums
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([marginals.mu_s, marginals.mu_t])
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"exact transport LP failed: {res.message}")
    plan = res.x.reshape(n, m)
    return TransportPlan(
        plan, True, int(res.nit), _marginal_error(plan, marginals.mu_s, marginals.mu_t)
    )
