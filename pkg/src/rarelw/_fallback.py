"""Pure numpy versions of the routines in ``_kernels.pyx``.

Signatures match the compiled module one for one (``num_threads`` is
accepted and ignored).  Vectorized over the batch/pool dimension; the
time-stepping loops stay in Python.
"""
import numpy as np

RBF, MATERN12, MATERN32, MATERN52 = 0, 1, 2, 3

_SQRT3 = np.sqrt(3.0)
_SQRT5 = np.sqrt(5.0)


def _kval(r2, amp2, family):
    if family == RBF:
        return amp2 * np.exp(-0.5 * r2)
    r = np.sqrt(r2)
    if family == MATERN12:
        return amp2 * np.exp(-r)
    if family == MATERN32:
        r = _SQRT3 * r
        return amp2 * (1.0 + r) * np.exp(-r)
    r = _SQRT5 * r
    return amp2 * (1.0 + r + r * r / 3.0) * np.exp(-r)


def _sqdist(A, B, inv_ls):
    r2 = np.zeros((A.shape[0], B.shape[0]))
    for k in range(A.shape[1]):
        diff = (A[:, k, None] - B[None, :, k]) * inv_ls[k]
        r2 += diff * diff
    return r2


def cross_cov(A, B, inv_ls, amp2, family, num_threads=1):
    return _kval(_sqdist(A, B, inv_ls), amp2, family)


def recursive_update(Q, x_new, inv_ls, amp2, family, C, n, w, means, variances,
                     mean_step, inv_var_new, num_threads=1):
    diff = (Q - x_new[None, :]) * inv_ls[None, :]
    c = _kval(np.einsum("ij,ij->i", diff, diff), amp2, family)
    cov = c - C[:, :n] @ w if n else c
    means += cov * mean_step
    variances -= cov * cov * inv_var_new
    C[:, n] = c


def _restoring(u, alpha, beta, u1, u2):
    au = np.abs(u)
    sgn = np.sign(u)
    return np.where(
        au <= u1,
        alpha * u,
        np.where(au <= u2, sgn * alpha * u1, sgn * (alpha * u1 + beta * (au - u2) ** 3)),
    )


def oscillator_batch(x, g1, g2, dt, nsteps, delta, alpha, beta, u1, u2, limit, num_threads=1):
    x1, x2 = x[:, 0], x[:, 1]
    u = np.zeros(x.shape[0])
    v = np.zeros(x.shape[0])
    acc = np.zeros(x.shape[0])
    alive = np.ones(x.shape[0], dtype=bool)
    h2 = 0.5 * dt
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
        bad = ~(np.abs(u) <= limit)
        if bad.any():
            alive &= ~bad
            u[bad] = 0.0
            v[bad] = 0.0
    out = np.where(alive, acc * dt / (dt * nsteps), 0.0)
    return out, (~alive).astype(np.int8)


def sir_batch(x, b1, b2, dt, nsteps, beta0, phi0, gamma, delta, S0, I0, R0, limit, num_threads=1):
    nb = x.shape[0]
    x1, x2 = x[:, 0], x[:, 1]
    S = np.full(nb, float(S0))
    I = np.full(nb, float(I0))
    R = np.full(nb, float(R0))
    total = S0 + I0 + R0
    clamped = np.zeros(nb, dtype=bool)
    worst = np.zeros(nb)
    alive = np.ones(nb, dtype=bool)
    h2 = 0.5 * dt

    def beta(j):
        b = beta0 * (x1 * b1[j] + x2 * b2[j] + phi0)
        neg = b < 0.0
        clamped[neg] = True
        return np.where(neg, 0.0, b)

    def rhs(be, s, i, r):
        flow = be * i * s
        return -flow + delta * r, flow - gamma * i, gamma * i - delta * r

    for k in range(nsteps):
        be0, beh, be1 = beta(2 * k), beta(2 * k + 1), beta(2 * k + 2)
        k1 = rhs(be0, S, I, R)
        k2 = rhs(beh, S + h2 * k1[0], I + h2 * k1[1], R + h2 * k1[2])
        k3 = rhs(beh, S + h2 * k2[0], I + h2 * k2[1], R + h2 * k2[2])
        k4 = rhs(be1, S + dt * k3[0], I + dt * k3[1], R + dt * k3[2])
        S = S + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        I = I + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        R = R + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        dev = np.abs(S + I + R - total) / total
        worst = np.where(alive, np.maximum(worst, dev), worst)
        bad = alive & ~(np.abs(I) <= limit * total)
        if bad.any():
            alive &= ~bad
            S[bad], I[bad], R[bad] = S0, I0, R0
    out = np.where(alive, I, 0.0)
    return out, (~alive).astype(np.int8), clamped.astype(np.int8), worst


def _wave(t, T):
    z = (t - 5.0 * T) / (2.0 * T)
    return np.exp(-0.5 * z * z) * np.sin(2.0 * np.pi * t / T)


def _hermite_peak(p0, v0, p1, v1, dt):
    b = dt * v0
    c = 3.0 * (p1 - p0) - 2.0 * dt * v0 - dt * v1
    e = 2.0 * (p0 - p1) + dt * v0 + dt * v1
    qa, qb, qc = 3.0 * e, 2.0 * c, b
    best = np.zeros_like(p0)
    with np.errstate(divide="ignore", invalid="ignore"):
        lin = np.abs(qa) < 1e-300
        s_lin = np.where(np.abs(qb) < 1e-300, -1.0, -qc / qb)
        disc = qb * qb - 4.0 * qa * qc
        root = np.sqrt(np.where(disc < 0.0, 0.0, disc))
        roots = [np.where(lin, s_lin, (-qb + root) / (2.0 * qa)),
                 np.where(lin, -1.0, (-qb - root) / (2.0 * qa))]
        for s in roots:
            ok = (s > 0.0) & (s < 1.0) & (lin | (disc >= 0.0))
            val = np.abs(p0 + s * (b + s * (c + s * e)))
            best = np.where(ok & (val > best), val, best)
    return best


def ship_batch(x, steps_per_period, n_periods, a1, a2, b1, b2, e1, e2, limit, num_threads=1):
    T = x[:, 0]
    sg, cg = np.sin(x[:, 1]), np.cos(x[:, 1])
    nsteps = int(steps_per_period * n_periods + 0.5)
    dt = T / steps_per_period
    h2 = 0.5 * dt
    xi = np.zeros(x.shape[0])
    v = np.zeros(x.shape[0])
    peak = np.zeros(x.shape[0])
    alive = np.ones(x.shape[0], dtype=bool)

    def accel(q, p, eta):
        return e2 * cg * eta - a1 * p - a2 * p * np.abs(p) - (b1 + e1 * sg * eta) * q - b2 * q ** 3

    for k in range(nsteps):
        t = k * dt
        w0, wh, w1 = _wave(t, T), _wave(t + h2, T), _wave(t + dt, T)
        k1x = v
        k1v = accel(xi, v, w0)
        k2x = v + h2 * k1v
        k2v = accel(xi + h2 * k1x, k2x, wh)
        k3x = v + h2 * k2v
        k3v = accel(xi + h2 * k2x, k3x, wh)
        k4x = v + dt * k3v
        k4v = accel(xi + dt * k3x, k4x, w1)
        xi_old, v_old = xi, v
        xi = xi + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        v = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        bad = alive & ~(np.abs(xi) <= limit)
        if bad.any():
            alive &= ~bad
            xi[bad], v[bad] = 0.0, 0.0
        peak = np.where(alive, np.maximum(peak, np.abs(xi)), peak)
        turn = alive & (v_old * v <= 0.0)
        if turn.any():
            pk = _hermite_peak(xi_old[turn], v_old[turn], xi[turn], v[turn], dt[turn])
            peak[turn] = np.maximum(peak[turn], pk)
    out = np.where(alive, peak, 0.0)
    return out, (~alive).astype(np.int8)
