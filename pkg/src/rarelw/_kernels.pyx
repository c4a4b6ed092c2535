# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every routine parallelizes over independent rows (pool points or batch
inputs) only; reductions along the training-set dimension run in a fixed
sequential order inside one thread, so results do not depend on the
thread count.  ``rarelw._fallback`` mirrors each signature in numpy.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, sqrt, sin, cos, fabs, isfinite

cnp.import_array()

cdef enum:
    RBF = 0
    MATERN12 = 1
    MATERN32 = 2
    MATERN52 = 3


cdef inline double _kval(double r2, double amp2, int family) noexcept nogil:
    cdef double r
    if family == RBF:
        return amp2 * exp(-0.5 * r2)
    r = sqrt(r2)
    if family == MATERN12:
        return amp2 * exp(-r)
    if family == MATERN32:
        r = 1.7320508075688772 * r
        return amp2 * (1.0 + r) * exp(-r)
    r = 2.23606797749979 * r
    return amp2 * (1.0 + r + r * r / 3.0) * exp(-r)


def cross_cov(double[:, ::1] A, double[:, ::1] B, double[::1] inv_ls,
              double amp2, int family, int num_threads=1):
    cdef Py_ssize_t na = A.shape[0], nb = B.shape[0], d = A.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double r2, diff
    out_arr = np.empty((na, nb), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in prange(na, nogil=True, num_threads=num_threads, schedule="static"):
        for j in range(nb):
            r2 = 0.0
            for k in range(d):
                diff = (A[i, k] - B[j, k]) * inv_ls[k]
                r2 = r2 + diff * diff
            out[i, j] = _kval(r2, amp2, family)
    return out_arr


def recursive_update(double[:, ::1] Q, double[::1] x_new, double[::1] inv_ls,
                     double amp2, int family, double[:, ::1] C, Py_ssize_t n,
                     double[::1] w, double[::1] means, double[::1] variances,
                     double mean_step, double inv_var_new, int num_threads=1):
    """Rank-one refresh of pool means/variances; writes k(Q, x_new) into column n of C."""
    cdef Py_ssize_t m = Q.shape[0], d = Q.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double r2, diff, c, s, cov
    for i in prange(m, nogil=True, num_threads=num_threads, schedule="static"):
        r2 = 0.0
        for k in range(d):
            diff = (Q[i, k] - x_new[k]) * inv_ls[k]
            r2 = r2 + diff * diff
        c = _kval(r2, amp2, family)
        s = 0.0
        for j in range(n):
            s = s + C[i, j] * w[j]
        cov = c - s
        means[i] = means[i] + cov * mean_step
        variances[i] = variances[i] - cov * cov * inv_var_new
        C[i, n] = c


cdef inline double _restoring(double u, double alpha, double beta, double u1, double u2) noexcept nogil:
    cdef double au = fabs(u)
    cdef double f, sgn = 1.0
    if u < 0:
        sgn = -1.0
    if au <= u1:
        return alpha * u
    if au <= u2:
        return sgn * alpha * u1
    f = au - u2
    return sgn * (alpha * u1 + beta * f * f * f)


def oscillator_batch(double[:, ::1] x, double[::1] g1, double[::1] g2, double dt,
                     Py_ssize_t nsteps, double delta, double alpha, double beta,
                     double u1, double u2, double limit, int num_threads=1):
    cdef Py_ssize_t nb = x.shape[0]
    cdef Py_ssize_t i, k
    cdef double u, v, acc, x1, x2, f0, fh, f1
    cdef double k1u, k1v, k2u, k2v, k3u, k3v, k4u, k4v, h2 = 0.5 * dt
    cdef double span = dt * nsteps
    out_arr = np.zeros(nb, dtype=np.float64)
    status_arr = np.zeros(nb, dtype=np.int8)
    cdef double[::1] out = out_arr
    cdef signed char[::1] status = status_arr
    for i in prange(nb, nogil=True, num_threads=num_threads, schedule="dynamic"):
        x1 = x[i, 0]
        x2 = x[i, 1]
        u = 0.0
        v = 0.0
        acc = 0.0
        for k in range(nsteps):
            f0 = x1 * g1[2 * k] + x2 * g2[2 * k]
            fh = x1 * g1[2 * k + 1] + x2 * g2[2 * k + 1]
            f1 = x1 * g1[2 * k + 2] + x2 * g2[2 * k + 2]
            k1u = v
            k1v = f0 - delta * v - _restoring(u, alpha, beta, u1, u2)
            k2u = v + h2 * k1v
            k2v = fh - delta * k2u - _restoring(u + h2 * k1u, alpha, beta, u1, u2)
            k3u = v + h2 * k2v
            k3v = fh - delta * k3u - _restoring(u + h2 * k2u, alpha, beta, u1, u2)
            k4u = v + dt * k3v
            k4v = f1 - delta * k4u - _restoring(u + dt * k3u, alpha, beta, u1, u2)
            acc = acc + 0.5 * u
            u = u + dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
            v = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
            acc = acc + 0.5 * u
            if not (fabs(u) <= limit):
                status[i] = 1
                break
        if status[i] == 0:
            out[i] = acc * dt / span
    return out_arr, status_arr


cdef inline double _sir_beta(double x1, double x2, double b1, double b2, double beta0,
                             double phi0, int* clamped) noexcept nogil:
    cdef double b = beta0 * (x1 * b1 + x2 * b2 + phi0)
    if b < 0.0:
        clamped[0] = 1
        return 0.0
    return b


def sir_batch(double[:, ::1] x, double[::1] b1, double[::1] b2, double dt, Py_ssize_t nsteps,
              double beta0, double phi0, double gamma, double delta,
              double S0, double I0, double R0, double limit, int num_threads=1):
    cdef Py_ssize_t nb = x.shape[0]
    cdef Py_ssize_t i, k
    cdef double S, I, R, x1, x2, be0, beh, be1, total, dev, worst
    cdef double k1s, k1i, k1r, k2s, k2i, k2r, k3s, k3i, k3r, k4s, k4i, k4r
    cdef double Si, Ii, Ri, h2 = 0.5 * dt
    cdef int clamp
    out_arr = np.zeros(nb, dtype=np.float64)
    status_arr = np.zeros(nb, dtype=np.int8)
    clamped_arr = np.zeros(nb, dtype=np.int8)
    cons_arr = np.zeros(nb, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] cons = cons_arr
    cdef signed char[::1] status = status_arr
    cdef signed char[::1] clamped = clamped_arr
    total = S0 + I0 + R0
    for i in prange(nb, nogil=True, num_threads=num_threads, schedule="static"):
        x1 = x[i, 0]
        x2 = x[i, 1]
        S = S0
        I = I0
        R = R0
        clamp = 0
        worst = 0.0
        for k in range(nsteps):
            be0 = _sir_beta(x1, x2, b1[2 * k], b2[2 * k], beta0, phi0, &clamp)
            beh = _sir_beta(x1, x2, b1[2 * k + 1], b2[2 * k + 1], beta0, phi0, &clamp)
            be1 = _sir_beta(x1, x2, b1[2 * k + 2], b2[2 * k + 2], beta0, phi0, &clamp)
            k1s = -be0 * I * S + delta * R
            k1i = be0 * I * S - gamma * I
            k1r = gamma * I - delta * R
            Si = S + h2 * k1s
            Ii = I + h2 * k1i
            Ri = R + h2 * k1r
            k2s = -beh * Ii * Si + delta * Ri
            k2i = beh * Ii * Si - gamma * Ii
            k2r = gamma * Ii - delta * Ri
            Si = S + h2 * k2s
            Ii = I + h2 * k2i
            Ri = R + h2 * k2r
            k3s = -beh * Ii * Si + delta * Ri
            k3i = beh * Ii * Si - gamma * Ii
            k3r = gamma * Ii - delta * Ri
            Si = S + dt * k3s
            Ii = I + dt * k3i
            Ri = R + dt * k3r
            k4s = -be1 * Ii * Si + delta * Ri
            k4i = be1 * Ii * Si - gamma * Ii
            k4r = gamma * Ii - delta * Ri
            S = S + dt / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
            I = I + dt / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i)
            R = R + dt / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
            dev = fabs(S + I + R - total) / total
            if dev > worst:
                worst = dev
            if not (fabs(I) <= limit * total):
                status[i] = 1
                break
        if status[i] == 0:
            out[i] = I
        clamped[i] = clamp
        cons[i] = worst
    return out_arr, status_arr, clamped_arr, cons_arr


cdef inline double _ship_accel(double xi, double v, double eta, double sg, double cg,
                               double a1, double a2, double b1, double b2,
                               double e1, double e2) noexcept nogil:
    return (e2 * cg * eta - a1 * v - a2 * v * fabs(v)
            - (b1 + e1 * sg * eta) * xi - b2 * xi * xi * xi)


cdef inline double _wave(double t, double T) noexcept nogil:
    cdef double z = (t - 5.0 * T) / (2.0 * T)
    return exp(-0.5 * z * z) * sin(6.283185307179586 * t / T)


cdef inline double _hermite_peak(double p0, double v0, double p1, double v1, double dt) noexcept nogil:
    """Largest |p(s)| for interior critical points of the cubic Hermite interpolant on one step."""
    cdef double b = dt * v0
    cdef double c = 3.0 * (p1 - p0) - 2.0 * dt * v0 - dt * v1
    cdef double e = 2.0 * (p0 - p1) + dt * v0 + dt * v1
    cdef double best = 0.0, qa, qb, qc, disc, s, val, root
    cdef int r
    qa = 3.0 * e
    qb = 2.0 * c
    qc = b
    if fabs(qa) < 1e-300:
        if fabs(qb) < 1e-300:
            return 0.0
        s = -qc / qb
        if s > 0.0 and s < 1.0:
            best = fabs(p0 + s * (b + s * (c + s * e)))
        return best
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0.0:
        return 0.0
    root = sqrt(disc)
    for r in range(2):
        if r == 0:
            s = (-qb + root) / (2.0 * qa)
        else:
            s = (-qb - root) / (2.0 * qa)
        if s > 0.0 and s < 1.0:
            val = fabs(p0 + s * (b + s * (c + s * e)))
            if val > best:
                best = val
    return best


def ship_batch(double[:, ::1] x, Py_ssize_t steps_per_period, double n_periods,
               double a1, double a2, double b1, double b2, double e1, double e2,
               double limit, int num_threads=1):
    cdef Py_ssize_t nb = x.shape[0]
    cdef Py_ssize_t nsteps = <Py_ssize_t>(steps_per_period * n_periods + 0.5)
    cdef Py_ssize_t i, k
    cdef double T, sg, cg, dt, t, xi, v, xi_old, v_old, peak, h2, pk
    cdef double e0, eh, e1v, k1x, k1v, k2x, k2v, k3x, k3v, k4x, k4v
    out_arr = np.zeros(nb, dtype=np.float64)
    status_arr = np.zeros(nb, dtype=np.int8)
    cdef double[::1] out = out_arr
    cdef signed char[::1] status = status_arr
    for i in prange(nb, nogil=True, num_threads=num_threads, schedule="static"):
        T = x[i, 0]
        sg = sin(x[i, 1])
        cg = cos(x[i, 1])
        dt = T / steps_per_period
        h2 = 0.5 * dt
        xi = 0.0
        v = 0.0
        peak = 0.0
        for k in range(nsteps):
            t = k * dt
            e0 = _wave(t, T)
            eh = _wave(t + h2, T)
            e1v = _wave(t + dt, T)
            k1x = v
            k1v = _ship_accel(xi, v, e0, sg, cg, a1, a2, b1, b2, e1, e2)
            k2x = v + h2 * k1v
            k2v = _ship_accel(xi + h2 * k1x, k2x, eh, sg, cg, a1, a2, b1, b2, e1, e2)
            k3x = v + h2 * k2v
            k3v = _ship_accel(xi + h2 * k2x, k3x, eh, sg, cg, a1, a2, b1, b2, e1, e2)
            k4x = v + dt * k3v
            k4v = _ship_accel(xi + dt * k3x, k4x, e1v, sg, cg, a1, a2, b1, b2, e1, e2)
            xi_old = xi
            v_old = v
            xi = xi + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            v = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
            if not (fabs(xi) <= limit):
                status[i] = 1
                break
            if fabs(xi) > peak:
                peak = fabs(xi)
            if v_old * v <= 0.0:
                pk = _hermite_peak(xi_old, v_old, xi, v, dt)
                if pk > peak:
                    peak = pk
        if status[i] == 0:
            out[i] = peak
    return out_arr, status_arr
