"""Hot numeric kernels for the optimal-transport attention block.

Two interchangeable backends implement the same loops: a pure-numpy
reference (this module) and a compiled Cython extension (``slotex._core``).
The compiled backend is selected at import time when available; set
``SLOTEX_BACKEND=numpy`` or ``SLOTEX_BACKEND=cython`` to force one.

All functions work in the log domain on the scaled cost M = C/epsilon with
row marginals 1 and column marginals k/n:

    u <- -logsumexp_j(M + v),  v <- log(k/n) - logsumexp_i(M + u)

The forward pass caches the per-iteration softmax weights (row weights R,
column weights S) and the final plan, so the exact adjoint over the
executed iterations (``sinkhorn_vjp``) and the forward-over-reverse
Hessian-vector product of plan_entropy(sinkhorn(M)) (``sinkhorn_entropy_hvp``,
needed by the cost-refinement backward) run without re-exponentiating.

The row-marginal deviation after iteration t equals
|exp(u_t - u_{t+1}) - 1| per row, so convergence is checked from the next
dual update instead of an extra pass over the plan.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from . import _core
except ImportError:  # extension not built; numpy fallback below
    _core = None


class SinkhornCache:
    """Per-call intermediates reused by the backward rules."""

    __slots__ = ("U", "V", "R", "S", "P", "converged", "deviation")

    def __init__(self, U, V, R, S, P, converged, deviation):
        self.U = U
        self.V = V
        self.R = R
        self.S = S
        self.P = P
        self.converged = converged
        self.deviation = deviation

    @property
    def iterations(self):
        return len(self.U)


def np_sinkhorn_fwd(M, log_col_mass, tol, max_iters):
    """Alternating log-domain normalization with cached softmax weights."""
    k, n = M.shape
    v = np.zeros(n)
    us, vs, rws, cws = [], [], [], []
    converged = False
    dev = np.inf
    u_prev = None
    done = 0
    while done < max_iters:
        x = M + v[None, :]
        mx = x.max(axis=1, keepdims=True)
        e = np.exp(x - mx)
        se = e.sum(axis=1, keepdims=True)
        u = -(mx + np.log(se))[:, 0]
        if u_prev is not None:
            dev = float(np.max(np.abs(np.exp(u_prev - u) - 1.0)))
            if dev < tol:
                converged = True
                break
        rws.append(e / se)
        y = M + u[:, None]
        my = y.max(axis=0, keepdims=True)
        ey = np.exp(y - my)
        sy = ey.sum(axis=0, keepdims=True)
        v = log_col_mass - (my + np.log(sy))[0, :]
        cws.append(ey / sy)
        us.append(u)
        vs.append(v)
        u_prev = u
        done += 1
    else:
        x = M + v[None, :]
        mx = x.max(axis=1, keepdims=True)
        u_extra = -(mx + np.log(np.exp(x - mx).sum(axis=1, keepdims=True)))[:, 0]
        dev = float(np.max(np.abs(np.exp(u_prev - u_extra) - 1.0)))
        converged = dev < tol
    U = np.asarray(us)
    V = np.asarray(vs)
    P = np.exp(M + U[-1][:, None] + V[-1][None, :])
    return SinkhornCache(U, V, np.asarray(rws), np.asarray(cws), P, converged, dev)


def np_sinkhorn_vjp(cache, bar_logp):
    """Adjoint of the executed iterations: cotangent on log(plan) -> on M."""
    R, S = cache.R, cache.S
    k, n = bar_logp.shape
    bar_m = bar_logp.copy()
    bar_u = bar_logp.sum(axis=1)
    bar_v = bar_logp.sum(axis=0)
    for t in range(len(R) - 1, -1, -1):
        t1 = S[t] * bar_v[None, :]
        bar_m -= t1
        bar_u = bar_u - t1.sum(axis=1)
        t2 = R[t] * bar_u[:, None]
        bar_m -= t2
        bar_v = -t2.sum(axis=0)
        bar_u = np.zeros(k)
    return bar_m


def np_sinkhorn_entropy_grad(M, cache):
    """Plan entropy H = -sum(P log P) and dH/dM through the unrolled loop."""
    logp = M + cache.U[-1][:, None] + cache.V[-1][None, :]
    p = cache.P
    entropy = -float(np.sum(p * logp))
    return entropy, np_sinkhorn_vjp(cache, -p * (logp + 1.0))


def np_sinkhorn_entropy_hvp(M, cache, tangent):
    """Hessian-vector product of M -> plan_entropy(sinkhorn(M)).

    Forward-over-reverse: duals (value, tangent) flow through the forward
    recursion, then through the adjoint sweep of ``np_sinkhorn_vjp``.
    """
    U, V, R, S, P = cache.U, cache.V, cache.R, cache.S, cache.P
    L, k = U.shape
    n = V.shape[1]
    ud = np.zeros((L, k))
    vd = np.zeros((L, n))
    for t in range(L):
        vd_prev = vd[t - 1] if t > 0 else np.zeros(n)
        ud[t] = -np.sum(R[t] * (tangent + vd_prev[None, :]), axis=1)
        vd[t] = -np.sum(S[t] * (tangent + ud[t][:, None]), axis=0)
    logp = M + U[-1][:, None] + V[-1][None, :]
    logpd = tangent + ud[-1][:, None] + vd[-1][None, :]
    bar_logp = -P * (logp + 1.0)
    bar_logpd = -P * logpd * (logp + 2.0)
    bar_m = bar_logp.copy()
    bar_md = bar_logpd.copy()
    bar_u = bar_logp.sum(axis=1)
    bar_ud = bar_logpd.sum(axis=1)
    bar_v = bar_logp.sum(axis=0)
    bar_vd = bar_logpd.sum(axis=0)
    for t in range(L - 1, -1, -1):
        yd = tangent + ud[t][:, None]
        sd = S[t] * (yd - np.sum(S[t] * yd, axis=0, keepdims=True))
        t1 = S[t] * bar_v[None, :]
        t1d = sd * bar_v[None, :] + S[t] * bar_vd[None, :]
        bar_m -= t1
        bar_md -= t1d
        bar_u = bar_u - t1.sum(axis=1)
        bar_ud = bar_ud - t1d.sum(axis=1)
        vd_prev = vd[t - 1] if t > 0 else np.zeros(n)
        xd = tangent + vd_prev[None, :]
        rd = R[t] * (xd - np.sum(R[t] * xd, axis=1, keepdims=True))
        t2 = R[t] * bar_u[:, None]
        t2d = rd * bar_u[:, None] + R[t] * bar_ud[:, None]
        bar_m -= t2
        bar_md -= t2d
        bar_v = -t2.sum(axis=0)
        bar_vd = -t2d.sum(axis=0)
        bar_u = np.zeros(k)
        bar_ud = np.zeros(k)
    return bar_md


_BACKENDS = {"numpy"}
if _core is not None:
    _BACKENDS.add("cython")

_active = os.environ.get("SLOTEX_BACKEND", "").strip().lower() or None
if _active is None:
    _active = "cython" if _core is not None else "numpy"
if _active not in _BACKENDS:
    raise ImportError(
        f"SLOTEX_BACKEND={_active!r} requested but not available "
        f"(have: {sorted(_BACKENDS)})"
    )


def available_backends():
    return sorted(_BACKENDS)


def active_backend():
    return _active


def use_backend(name):
    """Switch the active backend (primarily for tests and benchmarks)."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; have {sorted(_BACKENDS)}")
    _active = name


def sinkhorn_fwd(M, log_col_mass, tol, max_iters):
    M = np.ascontiguousarray(M, dtype=np.float64)
    if _active == "cython":
        return SinkhornCache(*_core.sinkhorn_fwd(M, log_col_mass, tol, max_iters))
    return np_sinkhorn_fwd(M, log_col_mass, tol, max_iters)


def sinkhorn_vjp(cache, bar_logp):
    bar_logp = np.ascontiguousarray(bar_logp, dtype=np.float64)
    if _active == "cython":
        return _core.sinkhorn_vjp(cache.R, cache.S, bar_logp)
    return np_sinkhorn_vjp(cache, bar_logp)


def sinkhorn_entropy_grad(M, cache):
    M = np.ascontiguousarray(M, dtype=np.float64)
    if _active == "cython":
        return _core.sinkhorn_entropy_grad(M, cache.U, cache.V, cache.R, cache.S, cache.P)
    return np_sinkhorn_entropy_grad(M, cache)


def sinkhorn_entropy_hvp(M, cache, tangent):
    M = np.ascontiguousarray(M, dtype=np.float64)
    tangent = np.ascontiguousarray(tangent, dtype=np.float64)
    if _active == "cython":
        return _core.sinkhorn_entropy_hvp(M, cache.U, cache.V, cache.R, cache.S,
                                          cache.P, tangent)
    return np_sinkhorn_entropy_hvp(M, cache, tangent)
