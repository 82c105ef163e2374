"""Entropic optimal-transport attention: sinkhorn normalization and the
entropy-minimizing cost refinement.

Each operation has two interchangeable implementations:

* ``"fused"`` (default): one tape node backed by the kernel backend
  (compiled extension or numpy fallback), with a hand-derived backward
  rule over the executed iterations. First-order only.
* ``"unrolled"``: built from primitive tape ops, so the whole computation
  including the refinement's inner gradients stays differentiable to any
  order. Slower; serves as the reference the fused path is tested against.

Conventions for a k x n plan: rows sum to 1 (each slot spends unit
attention), columns sum to k/n (tokens share the total mass k evenly).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import ContractError, NumericError

IMPLEMENTATIONS = ("fused", "unrolled")


@dataclass
class SinkhornInfo:
    iterations: int
    converged: bool
    deviation: float


def _check_impl(implementation):
    if implementation not in IMPLEMENTATIONS:
        raise ContractError(f"implementation must be one of {IMPLEMENTATIONS}")


def _first_order_only(name):
    raise ContractError(
        f"fused {name} supports first-order gradients only; "
        "use implementation='unrolled' for higher-order derivatives"
    )


def sinkhorn(cost, epsilon=1.0, max_iters=200, tol=1e-9, implementation="fused"):
    """Drive exp(cost/epsilon) toward the prescribed marginals.

    Larger cost entries attract more mass (similarity convention). Stops
    when the max row-sum deviation drops below ``tol`` or after
    ``max_iters`` sweeps, returning the last iterate plus a convergence
    flag either way. Differentiable through the executed iterations.
    """
    _check_impl(implementation)
    cost = ad.as_tensor(cost)
    if not np.all(np.isfinite(cost.data)):
        raise NumericError("sinkhorn requires a finite cost matrix")
    if cost.ndim != 2:
        raise ContractError(f"cost must be 2-D, got shape {cost.shape}")
    if max_iters < 1:
        raise ContractError("max_iters must be at least 1")
    if implementation == "unrolled":
        plan, _logp, info = _sinkhorn_unrolled(cost, epsilon, max_iters, tol)
        return plan, info

    k, n = cost.shape
    m = cost.data / epsilon
    cache = kernels.sinkhorn_fwd(m, math.log(k / n), tol, max_iters)

    def vjp(g):
        if ad.grad_enabled():
            _first_order_only("sinkhorn")
        bar_m = kernels.sinkhorn_vjp(cache, cache.P * g.data)
        return (ad.Tensor(bar_m / epsilon),)

    plan = ad.custom(cache.P, (cost,), vjp)
    return plan, SinkhornInfo(cache.iterations, cache.converged, cache.deviation)


def _sinkhorn_unrolled(cost, epsilon, max_iters, tol):
    """Tape-recorded twin of the kernel loop, same stopping rule."""
    k, n = cost.shape
    log_col_mass = math.log(k / n)
    m = ad.mul(cost, 1.0 / epsilon)
    v = ad.Tensor(np.zeros((1, n)))
    u_prev = None
    u_kept = v_kept = None
    converged = False
    dev = np.inf
    iterations = 0
    while iterations < max_iters:
        u = ad.neg(ad.logsumexp(ad.add(m, v), axis=1))
        if u_prev is not None:
            dev = float(np.max(np.abs(np.exp(u_prev - u.data) - 1.0)))
            if dev < tol:
                converged = True
                break
        v = ad.sub(log_col_mass, ad.logsumexp(ad.add(m, u), axis=0))
        u_kept, v_kept = u, v
        u_prev = u.data
        iterations += 1
    else:
        x = m.data + v.data
        mx = x.max(axis=1, keepdims=True)
        u_extra = -(mx + np.log(np.exp(x - mx).sum(axis=1, keepdims=True)))
        dev = float(np.max(np.abs(np.exp(u_prev - u_extra) - 1.0)))
        converged = dev < tol
    logp = ad.add(ad.add(m, u_kept), v_kept)
    plan = ad.exp(logp)
    return plan, logp, SinkhornInfo(iterations, converged, dev)


def plan_entropy(plan):
    """H(A) = -sum A log A with 0*log(0) = 0.

    Accepts a Tensor (differentiable where entries are positive) or a
    plain array (returns a float).
    """
    if isinstance(plan, ad.Tensor):
        return ad.neg(ad.sum_(ad.xlogx(plan)))
    plan = np.asarray(plan, dtype=np.float64)
    if np.any(plan < 0.0):
        raise ContractError("plan entropy requires nonnegative entries")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(plan > 0.0, plan * np.log(np.where(plan > 0.0, plan, 1.0)), 0.0)
    return -float(terms.sum())


def mesh(cost, mesh_lr, n_mesh_iters, epsilon=1.0, sinkhorn_max_iters=200,
         sinkhorn_tol=1e-9, implementation="fused"):
    """Refine the cost by gradient descent on the entropy of its plan.

    Repeats ``n_mesh_iters`` times: C <- C - mesh_lr * dH(sinkhorn(C))/dC,
    the inner gradient taken through the unrolled sinkhorn iterations. The
    whole refinement stays on the tape, so training gradients flow through
    every inner step (the fused path realizes this with an exact
    Hessian-vector product over the executed iterations).
    """
    _check_impl(implementation)
    cost = ad.as_tensor(cost)
    if not np.all(np.isfinite(cost.data)):
        raise NumericError("mesh requires a finite cost matrix")
    if n_mesh_iters == 0 or mesh_lr == 0.0:
        return cost
    if implementation == "unrolled":
        return _mesh_unrolled(cost, mesh_lr, n_mesh_iters, epsilon,
                              sinkhorn_max_iters, sinkhorn_tol)

    k, n = cost.shape
    log_col_mass = math.log(k / n)
    cur = cost.data
    stash = []
    for it in range(n_mesh_iters):
        m = cur / epsilon
        cache = kernels.sinkhorn_fwd(m, log_col_mass, sinkhorn_tol, sinkhorn_max_iters)
        _entropy, grad_m = kernels.sinkhorn_entropy_grad(m, cache)
        if not np.all(np.isfinite(grad_m)):
            raise NumericError(f"non-finite entropy gradient at refinement iteration {it}")
        stash.append((m, cache))
        cur = cur - mesh_lr * grad_m / epsilon

    def vjp(g):
        if ad.grad_enabled():
            _first_order_only("mesh")
        bar = g.data
        for m, cache in reversed(stash):
            hv = kernels.sinkhorn_entropy_hvp(m, cache, bar / epsilon)
            bar = bar - mesh_lr * hv / epsilon
        return (ad.Tensor(bar),)

    return ad.custom(cur, (cost,), vjp)


def _mesh_unrolled(cost, mesh_lr, n_mesh_iters, epsilon, max_iters, tol):
    with ad.enable_grad():
        cur = cost if cost.requires_grad else ad.Tensor(cost.data, requires_grad=True)
        for it in range(n_mesh_iters):
            plan, logp, _info = _sinkhorn_unrolled(cur, epsilon, max_iters, tol)
            entropy = ad.neg(ad.sum_(ad.mul(plan, logp)))
            step_grad = ad.grad(entropy, [cur], create_graph=True)[0]
            if not np.all(np.isfinite(step_grad.data)):
                raise NumericError(f"non-finite entropy gradient at refinement iteration {it}")
            cur = ad.sub(cur, ad.mul(step_grad, mesh_lr))
    return cur
