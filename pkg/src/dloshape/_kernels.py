"""Compiled Runge-Kutta-Munthe-Kaas integrator for the static Cosserat ODEs.

The rotation is carried as ``R_k exp(hat(theta))`` inside each step, with
``theta`` evolved through the truncated inverse differential of the
exponential. This keeps every stage on SO(3) and preserves fourth order.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _exp_into(w0, w1, w2, out):
    th2 = w0 * w0 + w1 * w1 + w2 * w2
    if th2 < 1e-16:
        a = 1.0 - th2 / 6.0
        b = 0.5 - th2 / 24.0
    else:
        th = np.sqrt(th2)
        a = np.sin(th) / th
        s = np.sin(0.5 * th) / th
        b = 2.0 * s * s
    out[0, 0] = 1.0 + b * (w0 * w0 - th2)
    out[0, 1] = -a * w2 + b * w0 * w1
    out[0, 2] = a * w1 + b * w0 * w2
    out[1, 0] = a * w2 + b * w0 * w1
    out[1, 1] = 1.0 + b * (w1 * w1 - th2)
    out[1, 2] = -a * w0 + b * w1 * w2
    out[2, 0] = -a * w1 + b * w0 * w2
    out[2, 1] = a * w0 + b * w1 * w2
    out[2, 2] = 1.0 + b * (w2 * w2 - th2)


@njit(cache=True)
def _matmul3(A, B, out):
    for i in range(3):
        for j in range(3):
            out[i, j] = A[i, 0] * B[0, j] + A[i, 1] * B[1, j] + A[i, 2] * B[2, j]


@njit(cache=True)
def _rhs(R, n, m, kt_inv, kr_inv, v_rest, u_rest, f, l, dp, u, dn, dm, tmp):
    # tmp[0:3] = R^T n, tmp[3:6] = R^T m
    for i in range(3):
        tmp[i] = R[0, i] * n[0] + R[1, i] * n[1] + R[2, i] * n[2]
        tmp[3 + i] = R[0, i] * m[0] + R[1, i] * m[1] + R[2, i] * m[2]
    for i in range(3):
        tmp[6 + i] = kt_inv[i, 0] * tmp[0] + kt_inv[i, 1] * tmp[1] + kt_inv[i, 2] * tmp[2] + v_rest[i]
        u[i] = kr_inv[i, 0] * tmp[3] + kr_inv[i, 1] * tmp[4] + kr_inv[i, 2] * tmp[5] + u_rest[i]
    for i in range(3):
        dp[i] = R[i, 0] * tmp[6] + R[i, 1] * tmp[7] + R[i, 2] * tmp[8]
        dn[i] = -f[i]
    dm[0] = -(dp[1] * n[2] - dp[2] * n[1]) - l[0]
    dm[1] = -(dp[2] * n[0] - dp[0] * n[2]) - l[1]
    dm[2] = -(dp[0] * n[1] - dp[1] * n[0]) - l[2]


@njit(cache=True)
def _dexpinv(th, u, out):
    # u + 1/2 th x u + 1/12 th x (th x u)
    c0 = th[1] * u[2] - th[2] * u[1]
    c1 = th[2] * u[0] - th[0] * u[2]
    c2 = th[0] * u[1] - th[1] * u[0]
    d0 = th[1] * c2 - th[2] * c1
    d1 = th[2] * c0 - th[0] * c2
    d2 = th[0] * c1 - th[1] * c0
    out[0] = u[0] + 0.5 * c0 + d0 / 12.0
    out[1] = u[1] + 0.5 * c1 + d1 / 12.0
    out[2] = u[2] + 0.5 * c2 + d2 / 12.0


@njit(cache=True)
def integrate_batch(P0, R0, N0, M0, kt_inv, kr_inv, v_rest, u_rest, f, l, length, n_steps, P, Rs, Ns, Ms, bad):
    """Integrate ``B`` initial states; ``bad[b]`` is the first non-finite sample index or -1."""
    h = length / n_steps
    kp = np.empty((4, 3))
    kt = np.empty((4, 3))
    kn = np.empty((4, 3))
    km = np.empty((4, 3))
    u = np.empty(3)
    th = np.empty(3)
    ns = np.empty(3)
    ms = np.empty(3)
    E = np.empty((3, 3))
    Rst = np.empty((3, 3))
    tmp = np.empty(9)
    coef = np.array([0.0, 0.5, 0.5, 1.0])
    for b in range(P0.shape[0]):
        bad[b] = -1
        for i in range(3):
            P[b, 0, i] = P0[b, i]
            Ns[b, 0, i] = N0[b, i]
            Ms[b, 0, i] = M0[b, i]
            for j in range(3):
                Rs[b, 0, i, j] = R0[b, i, j]
        for k in range(n_steps):
            R = Rs[b, k]
            n = Ns[b, k]
            m = Ms[b, k]
            for st in range(4):
                if st == 0:
                    _rhs(R, n, m, kt_inv, kr_inv, v_rest, u_rest, f, l, kp[0], u, kn[0], km[0], tmp)
                    for i in range(3):
                        kt[0, i] = u[i]
                else:
                    a = coef[st] * h
                    for i in range(3):
                        th[i] = a * kt[st - 1, i]
                        ns[i] = n[i] + a * kn[st - 1, i]
                        ms[i] = m[i] + a * km[st - 1, i]
                    _exp_into(th[0], th[1], th[2], E)
                    _matmul3(R, E, Rst)
                    _rhs(Rst, ns, ms, kt_inv, kr_inv, v_rest, u_rest, f, l, kp[st], u, kn[st], km[st], tmp)
                    _dexpinv(th, u, kt[st])
            h6 = h / 6.0
            finite = True
            for i in range(3):
                P[b, k + 1, i] = P[b, k, i] + h6 * (kp[0, i] + 2.0 * kp[1, i] + 2.0 * kp[2, i] + kp[3, i])
                Ns[b, k + 1, i] = n[i] + h6 * (kn[0, i] + 2.0 * kn[1, i] + 2.0 * kn[2, i] + kn[3, i])
                Ms[b, k + 1, i] = m[i] + h6 * (km[0, i] + 2.0 * km[1, i] + 2.0 * km[2, i] + km[3, i])
                th[i] = h6 * (kt[0, i] + 2.0 * kt[1, i] + 2.0 * kt[2, i] + kt[3, i])
                if not (np.isfinite(P[b, k + 1, i]) and np.isfinite(Ns[b, k + 1, i])
                        and np.isfinite(Ms[b, k + 1, i]) and np.isfinite(th[i])):
                    finite = False
            if not finite:
                bad[b] = k + 1
                break
            _exp_into(th[0], th[1], th[2], E)
            _matmul3(R, E, Rs[b, k + 1])
