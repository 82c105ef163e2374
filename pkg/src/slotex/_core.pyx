# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the optimal-transport attention block.

Mirrors the numpy reference in ``slotex.kernels`` loop for loop: log-domain
alternating normalization with cached softmax weights, its exact adjoint
over the executed iterations, and the forward-over-reverse Hessian-vector
product used by the cost refinement. Kept in lockstep with the reference;
the test suite asserts agreement between the two backends.
"""

from libc.math cimport exp, log, fabs

import numpy as np


cdef double _NEG_INF = -1e308


cdef void _row_pass(double[:, ::1] m, double[::1] v, double[::1] u_out,
                    double[:, ::1] w_out) noexcept:
    # u_out[i] = -logsumexp_j(m[i,j] + v[j]); w_out[i,j] = row softmax weights
    cdef Py_ssize_t k = m.shape[0], n = m.shape[1], i, j
    cdef double mx, s, val
    for i in range(k):
        mx = _NEG_INF
        for j in range(n):
            val = m[i, j] + v[j]
            if val > mx:
                mx = val
        s = 0.0
        for j in range(n):
            w_out[i, j] = exp(m[i, j] + v[j] - mx)
            s += w_out[i, j]
        for j in range(n):
            w_out[i, j] /= s
        u_out[i] = -(mx + log(s))


cdef void _col_pass(double[:, ::1] m, double[::1] u, double log_col_mass,
                    double[::1] v_out, double[:, ::1] w_out) noexcept:
    # v_out[j] = log_col_mass - logsumexp_i(m[i,j] + u[i]); w_out = col softmax
    cdef Py_ssize_t k = m.shape[0], n = m.shape[1], i, j
    cdef double mx, s, val
    for j in range(n):
        mx = _NEG_INF
        for i in range(k):
            val = m[i, j] + u[i]
            if val > mx:
                mx = val
        s = 0.0
        for i in range(k):
            w_out[i, j] = exp(m[i, j] + u[i] - mx)
            s += w_out[i, j]
        for i in range(k):
            w_out[i, j] /= s
        v_out[j] = log_col_mass - (mx + log(s))


def sinkhorn_fwd(double[:, ::1] m, double log_col_mass, double tol, Py_ssize_t max_iters):
    cdef Py_ssize_t k = m.shape[0], n = m.shape[1], i, j, done = 0
    u_buf = np.empty((max_iters, k), dtype=np.float64)
    v_buf = np.empty((max_iters, n), dtype=np.float64)
    r_buf = np.empty((max_iters, k, n), dtype=np.float64)
    s_buf = np.empty((max_iters, k, n), dtype=np.float64)
    cdef double[:, ::1] us = u_buf
    cdef double[:, ::1] vs = v_buf
    cdef double[:, :, ::1] rw = r_buf
    cdef double[:, :, ::1] cw = s_buf
    u_cur = np.zeros(k, dtype=np.float64)
    v_cur = np.zeros(n, dtype=np.float64)
    u_prev_arr = np.zeros(k, dtype=np.float64)
    cdef double[::1] u = u_cur
    cdef double[::1] v = v_cur
    cdef double[::1] u_prev = u_prev_arr
    cdef double dev = 1e308, d
    cdef bint converged = False, have_prev = False

    while done < max_iters:
        _row_pass(m, v, u, rw[done])
        if have_prev:
            dev = 0.0
            for i in range(k):
                d = fabs(exp(u_prev[i] - u[i]) - 1.0)
                if d > dev:
                    dev = d
            if dev < tol:
                converged = True
                break
        _col_pass(m, u, log_col_mass, v, cw[done])
        for i in range(k):
            us[done, i] = u[i]
            u_prev[i] = u[i]
        for j in range(n):
            vs[done, j] = v[j]
        have_prev = True
        done += 1
    if not converged:
        # out of iterations: one extra half-pass to measure the deviation
        scratch = np.empty((k, n), dtype=np.float64)
        u_extra = np.empty(k, dtype=np.float64)
        _row_pass(m, v, u_extra, scratch)
        dev = 0.0
        for i in range(k):
            d = fabs(exp(u_prev[i] - u_extra[i]) - 1.0)
            if d > dev:
                dev = d
        converged = dev < tol
        done = max_iters
    p_buf = np.empty((k, n), dtype=np.float64)
    cdef double[:, ::1] p = p_buf
    for i in range(k):
        for j in range(n):
            p[i, j] = exp(m[i, j] + us[done - 1, i] + vs[done - 1, j])
    return (u_buf[:done].copy(), v_buf[:done].copy(), r_buf[:done].copy(),
            s_buf[:done].copy(), p_buf, bool(converged), float(dev))


def sinkhorn_vjp(double[:, :, ::1] rw, double[:, :, ::1] cw, double[:, ::1] bar_logp):
    cdef Py_ssize_t L = rw.shape[0], k = rw.shape[1], n = rw.shape[2], i, j, t
    bar_m_buf = np.empty((k, n), dtype=np.float64)
    cdef double[:, ::1] bar_m = bar_m_buf
    bu = np.zeros(k, dtype=np.float64)
    bv = np.zeros(n, dtype=np.float64)
    cdef double[::1] bar_u = bu
    cdef double[::1] bar_v = bv
    cdef double t1, t2
    for i in range(k):
        bar_u[i] = 0.0
        for j in range(n):
            bar_m[i, j] = bar_logp[i, j]
            bar_u[i] += bar_logp[i, j]
    for j in range(n):
        bar_v[j] = 0.0
        for i in range(k):
            bar_v[j] += bar_logp[i, j]
    for t in range(L - 1, -1, -1):
        for i in range(k):
            for j in range(n):
                t1 = cw[t, i, j] * bar_v[j]
                bar_m[i, j] -= t1
                bar_u[i] -= t1
        for j in range(n):
            bar_v[j] = 0.0
        for i in range(k):
            for j in range(n):
                t2 = rw[t, i, j] * bar_u[i]
                bar_m[i, j] -= t2
                bar_v[j] -= t2
        for i in range(k):
            bar_u[i] = 0.0
    return bar_m_buf


def sinkhorn_entropy_grad(double[:, ::1] m, double[:, ::1] us, double[:, ::1] vs,
                          double[:, :, ::1] rw, double[:, :, ::1] cw,
                          double[:, ::1] p):
    cdef Py_ssize_t L = us.shape[0], k = m.shape[0], n = m.shape[1], i, j
    bar_buf = np.empty((k, n), dtype=np.float64)
    cdef double[:, ::1] bar_logp = bar_buf
    cdef double entropy = 0.0, lp
    for i in range(k):
        for j in range(n):
            lp = m[i, j] + us[L - 1, i] + vs[L - 1, j]
            entropy -= p[i, j] * lp
            bar_logp[i, j] = -p[i, j] * (lp + 1.0)
    return float(entropy), sinkhorn_vjp(rw, cw, bar_buf)


def sinkhorn_entropy_hvp(double[:, ::1] m, double[:, ::1] us, double[:, ::1] vs,
                         double[:, :, ::1] rw, double[:, :, ::1] cw,
                         double[:, ::1] p, double[:, ::1] tangent):
    cdef Py_ssize_t L = us.shape[0], k = m.shape[0], n = m.shape[1], i, j, t
    ud_buf = np.zeros((L, k), dtype=np.float64)
    vd_buf = np.zeros((L, n), dtype=np.float64)
    cdef double[:, ::1] ud = ud_buf
    cdef double[:, ::1] vd = vd_buf
    zero_n = np.zeros(n, dtype=np.float64)
    cdef double[::1] zeros_n = zero_n
    cdef double[::1] vd_prev
    cdef double acc

    for t in range(L):
        if t > 0:
            vd_prev = vd[t - 1]
        else:
            vd_prev = zeros_n
        for i in range(k):
            acc = 0.0
            for j in range(n):
                acc += rw[t, i, j] * (tangent[i, j] + vd_prev[j])
            ud[t, i] = -acc
        for j in range(n):
            acc = 0.0
            for i in range(k):
                acc += cw[t, i, j] * (tangent[i, j] + ud[t, i])
            vd[t, j] = -acc

    bar_m_buf = np.empty((k, n), dtype=np.float64)
    bar_md_buf = np.empty((k, n), dtype=np.float64)
    cdef double[:, ::1] bar_m = bar_m_buf
    cdef double[:, ::1] bar_md = bar_md_buf
    bu = np.zeros(k, dtype=np.float64)
    bud = np.zeros(k, dtype=np.float64)
    bv = np.zeros(n, dtype=np.float64)
    bvd = np.zeros(n, dtype=np.float64)
    cdef double[::1] bar_u = bu
    cdef double[::1] bar_ud = bud
    cdef double[::1] bar_v = bv
    cdef double[::1] bar_vd = bvd
    cdef double lp, lpd, blp, blpd, t1, t1d, t2, t2d, wd, yd, xd
    cdef double[::1] colmean = np.empty(n, dtype=np.float64)
    cdef double[::1] rowmean = np.empty(k, dtype=np.float64)

    for j in range(n):
        bar_v[j] = 0.0
        bar_vd[j] = 0.0
    for i in range(k):
        bar_u[i] = 0.0
        bar_ud[i] = 0.0
        for j in range(n):
            lp = m[i, j] + us[L - 1, i] + vs[L - 1, j]
            lpd = tangent[i, j] + ud[L - 1, i] + vd[L - 1, j]
            blp = -p[i, j] * (lp + 1.0)
            blpd = -p[i, j] * lpd * (lp + 2.0)
            bar_m[i, j] = blp
            bar_md[i, j] = blpd
            bar_u[i] += blp
            bar_ud[i] += blpd
            bar_v[j] += blp
            bar_vd[j] += blpd

    for t in range(L - 1, -1, -1):
        for j in range(n):
            acc = 0.0
            for i in range(k):
                acc += cw[t, i, j] * (tangent[i, j] + ud[t, i])
            colmean[j] = acc
        for i in range(k):
            for j in range(n):
                yd = tangent[i, j] + ud[t, i]
                wd = cw[t, i, j] * (yd - colmean[j])
                t1 = cw[t, i, j] * bar_v[j]
                t1d = wd * bar_v[j] + cw[t, i, j] * bar_vd[j]
                bar_m[i, j] -= t1
                bar_md[i, j] -= t1d
                bar_u[i] -= t1
                bar_ud[i] -= t1d
        if t > 0:
            vd_prev = vd[t - 1]
        else:
            vd_prev = zeros_n
        for i in range(k):
            acc = 0.0
            for j in range(n):
                acc += rw[t, i, j] * (tangent[i, j] + vd_prev[j])
            rowmean[i] = acc
        for j in range(n):
            bar_v[j] = 0.0
            bar_vd[j] = 0.0
        for i in range(k):
            for j in range(n):
                xd = tangent[i, j] + vd_prev[j]
                wd = rw[t, i, j] * (xd - rowmean[i])
                t2 = rw[t, i, j] * bar_u[i]
                t2d = wd * bar_u[i] + rw[t, i, j] * bar_ud[i]
                bar_m[i, j] -= t2
                bar_md[i, j] -= t2d
                bar_v[j] -= t2
                bar_vd[j] -= t2d
        for i in range(k):
            bar_u[i] = 0.0
            bar_ud[i] = 0.0
    return bar_md_buf
