"""Compiled inner loops (numba) for the d = 2 hot paths.

Every kernel is sequential and single-threaded: reductions accumulate in a
fixed order, so results are independent of thread availability. The generic
(any-d) numpy implementations living in the public modules are the reference;
these kernels must agree with them to rounding (covered by tests).
"""
import numpy as np
from numba import njit

SQRT2 = np.sqrt(2.0)


# -- closed conformation-tensor ODE, full 2x2 entries (asymmetry representable)


@njit(cache=True, inline="always")
def _conf2_rhs(a00, a01, a10, a11, k00, k01, k10, k11, eight_n, inv_l2, dd):
    km = k00 * a00 + k01 * a01 + k10 * a10 + k11 * a11
    mm = a00 * a00 + a01 * a01 + a10 * a10 + a11 * a11
    c = -2.0 * inv_l2 * km - eight_n * inv_l2 * mm - 2.0 * dd * inv_l2
    r00 = (k00 * a00 + k01 * a10) + (a00 * k00 + a01 * k01) \
        + eight_n * (a00 * a00 + a01 * a10) + c * a00 + 2.0
    r01 = (k00 * a01 + k01 * a11) + (a00 * k10 + a01 * k11) \
        + eight_n * (a00 * a01 + a01 * a11) + c * a01
    r10 = (k10 * a00 + k11 * a10) + (a10 * k00 + a11 * k01) \
        + eight_n * (a10 * a00 + a11 * a10) + c * a10
    r11 = (k10 * a01 + k11 * a11) + (a10 * k10 + a11 * k11) \
        + eight_n * (a10 * a01 + a11 * a11) + c * a11 + 2.0
    return r00, r01, r10, r11


@njit(cache=True)
def rk4_conf2_batch(M, k00, k01, k10, k11, eight_n, inv_l2, dd, h, nsteps):
    """Advance a (B, 2, 2) batch of tensors by nsteps classical rk4 steps."""
    for b in range(M.shape[0]):
        a00 = M[b, 0, 0]; a01 = M[b, 0, 1]; a10 = M[b, 1, 0]; a11 = M[b, 1, 1]
        for _ in range(nsteps):
            p00, p01, p10, p11 = _conf2_rhs(a00, a01, a10, a11, k00, k01, k10, k11, eight_n, inv_l2, dd)
            q00, q01, q10, q11 = _conf2_rhs(a00 + 0.5 * h * p00, a01 + 0.5 * h * p01,
                                            a10 + 0.5 * h * p10, a11 + 0.5 * h * p11,
                                            k00, k01, k10, k11, eight_n, inv_l2, dd)
            r00, r01, r10, r11 = _conf2_rhs(a00 + 0.5 * h * q00, a01 + 0.5 * h * q01,
                                            a10 + 0.5 * h * q10, a11 + 0.5 * h * q11,
                                            k00, k01, k10, k11, eight_n, inv_l2, dd)
            s00, s01, s10, s11 = _conf2_rhs(a00 + h * r00, a01 + h * r01,
                                            a10 + h * r10, a11 + h * r11,
                                            k00, k01, k10, k11, eight_n, inv_l2, dd)
            a00 += (h / 6.0) * (p00 + 2.0 * q00 + 2.0 * r00 + s00)
            a01 += (h / 6.0) * (p01 + 2.0 * q01 + 2.0 * r01 + s01)
            a10 += (h / 6.0) * (p10 + 2.0 * q10 + 2.0 * r10 + s10)
            a11 += (h / 6.0) * (p11 + 2.0 * q11 + 2.0 * r11 + s11)
        M[b, 0, 0] = a00; M[b, 0, 1] = a01; M[b, 1, 0] = a10; M[b, 1, 1] = a11


# -- traceless-coordinate and polar forms


@njit(cache=True, inline="always")
def _xy_rhs(x, y, pe, a, n):
    s = x * x + y * y
    common = 1.0 - n + 4.0 * n * s
    dx = -4.0 * x * common + pe * y * (1.0 - 2.0 * a * x)
    dy = -4.0 * y * common + pe * (-x + 0.5 * a - 2.0 * a * y * y)
    return dx, dy


@njit(cache=True)
def rk4_xy_batch(P, pe, a, n, h, nsteps):
    """Advance a (B, 2) batch of (x, y) states by nsteps rk4 steps in place."""
    for b in range(P.shape[0]):
        x = P[b, 0]; y = P[b, 1]
        for _ in range(nsteps):
            k1x, k1y = _xy_rhs(x, y, pe, a, n)
            k2x, k2y = _xy_rhs(x + 0.5 * h * k1x, y + 0.5 * h * k1y, pe, a, n)
            k3x, k3y = _xy_rhs(x + 0.5 * h * k2x, y + 0.5 * h * k2y, pe, a, n)
            k4x, k4y = _xy_rhs(x + h * k3x, y + h * k3y, pe, a, n)
            x += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            y += (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        P[b, 0] = x; P[b, 1] = y


@njit(cache=True)
def rk4_xy_path(x0, y0, pe, a, n, h, nsteps):
    """Single-state rk4 returning the full path, shape (nsteps + 1, 2)."""
    out = np.empty((nsteps + 1, 2))
    out[0, 0] = x0; out[0, 1] = y0
    x = x0; y = y0
    for i in range(nsteps):
        k1x, k1y = _xy_rhs(x, y, pe, a, n)
        k2x, k2y = _xy_rhs(x + 0.5 * h * k1x, y + 0.5 * h * k1y, pe, a, n)
        k3x, k3y = _xy_rhs(x + 0.5 * h * k2x, y + 0.5 * h * k2y, pe, a, n)
        k4x, k4y = _xy_rhs(x + h * k3x, y + h * k3y, pe, a, n)
        x += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        y += (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        out[i + 1, 0] = x; out[i + 1, 1] = y
    return out


@njit(cache=True, inline="always")
def _polar_rhs(r, phi, pe, a, n):
    dphi = -pe * (1.0 - 0.5 * a / r * np.cos(phi))
    dr = -4.0 * r * (n * (4.0 * r * r - 1.0) + 1.0) \
        + 0.5 * a * pe * (1.0 - 4.0 * r * r) * np.sin(phi)
    return dr, dphi


@njit(cache=True)
def rk4_polar_batch(P, pe, a, n, h, nsteps):
    """Advance a (B, 2) batch of (r, unwrapped phi) states in place."""
    for b in range(P.shape[0]):
        r = P[b, 0]; phi = P[b, 1]
        for _ in range(nsteps):
            k1r, k1p = _polar_rhs(r, phi, pe, a, n)
            k2r, k2p = _polar_rhs(r + 0.5 * h * k1r, phi + 0.5 * h * k1p, pe, a, n)
            k3r, k3p = _polar_rhs(r + 0.5 * h * k2r, phi + 0.5 * h * k2p, pe, a, n)
            k4r, k4p = _polar_rhs(r + h * k3r, phi + h * k3p, pe, a, n)
            r += (h / 6.0) * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
            phi += (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        P[b, 0] = r; P[b, 1] = phi


# -- SDE single steps (d = 2); noise arrays carry already-scaled Brownian
#    increments (std sqrt(h) per component)


@njit(cache=True)
def emp_moment2(X):
    """Sequential empirical second moment of an (n, 2) ensemble."""
    n = X.shape[0]
    s00 = 0.0; s01 = 0.0; s11 = 0.0
    for i in range(n):
        s00 += X[i, 0] * X[i, 0]
        s01 += X[i, 0] * X[i, 1]
        s11 += X[i, 1] * X[i, 1]
    return s00 / n, s01 / n, s11 / n


@njit(cache=True)
def sde_original_step2(X, dB, k00, k01, k10, k11, four_n, length, h):
    """Euler-Maruyama step of the sphere-constrained model + renormalization.

    The arithmetic mirrors sde_replica_step2 exactly so that the one-replica
    projected system reproduces this path bitwise.
    """
    m00, m01, m11 = emp_moment2(X)
    out = np.empty_like(X)
    for i in range(X.shape[0]):
        x0 = X[i, 0]; x1 = X[i, 1]
        r2 = x0 * x0 + x1 * x1
        u0 = k00 * x0 + k01 * x1 + four_n * (m00 * x0 + m01 * x1)
        u1 = k10 * x0 + k11 * x1 + four_n * (m01 * x0 + m11 * x1)
        cg = (x0 * u0 + x1 * u1) / r2
        cr = 1.0 / r2  # (d - 1) / |X|^2 with d = 2
        b0 = dB[i, 0]; b1 = dB[i, 1]
        cb = (x0 * b0 + x1 * b1) / r2
        n0 = x0 + h * (u0 - cg * x0 - cr * x0) + SQRT2 * (b0 - cb * x0)
        n1 = x1 + h * (u1 - cg * x1 - cr * x1) + SQRT2 * (b1 - cb * x1)
        f = np.sqrt(length * length / (n0 * n0 + n1 * n1))
        out[i, 0] = n0 * f
        out[i, 1] = n1 * f
    return out, m00, m01, m11


@njit(cache=True)
def sde_original_heun_step2(X, dB, k00, k01, k10, k11, four_n, length, h):
    """Heun (Stratonovich) step of the projected model + renormalization.

    The mean-field moment is frozen at the step start for both stages.
    """
    m00, m01, m11 = emp_moment2(X)
    out = np.empty_like(X)
    for i in range(X.shape[0]):
        x0 = X[i, 0]; x1 = X[i, 1]
        b0 = dB[i, 0]; b1 = dB[i, 1]
        # stage 1 at X
        r2 = x0 * x0 + x1 * x1
        u0 = k00 * x0 + k01 * x1 + four_n * (m00 * x0 + m01 * x1)
        u1 = k10 * x0 + k11 * x1 + four_n * (m01 * x0 + m11 * x1)
        xu = (x0 * u0 + x1 * u1) / r2
        a0 = u0 - xu * x0; a1 = u1 - xu * x1
        xb = (x0 * b0 + x1 * b1) / r2
        g0 = SQRT2 * (b0 - xb * x0); g1 = SQRT2 * (b1 - xb * x1)
        # predictor
        p0 = x0 + h * a0 + g0; p1 = x1 + h * a1 + g1
        # stage 2 at predictor
        q2 = p0 * p0 + p1 * p1
        v0 = k00 * p0 + k01 * p1 + four_n * (m00 * p0 + m01 * p1)
        v1 = k10 * p0 + k11 * p1 + four_n * (m01 * p0 + m11 * p1)
        pv = (p0 * v0 + p1 * v1) / q2
        c0 = v0 - pv * p0; c1 = v1 - pv * p1
        pb = (p0 * b0 + p1 * b1) / q2
        e0 = SQRT2 * (b0 - pb * p0); e1 = SQRT2 * (b1 - pb * p1)
        n0 = x0 + 0.5 * h * (a0 + c0) + 0.5 * (g0 + e0)
        n1 = x1 + 0.5 * h * (a1 + c1) + 0.5 * (g1 + e1)
        nn = np.sqrt(n0 * n0 + n1 * n1)
        out[i, 0] = length * n0 / nn
        out[i, 1] = length * n1 / nn
    return out, m00, m01, m11


@njit(cache=True, inline="always")
def _mf_scalars2(m00, m01, m11, k00, k01, k10, k11, four_n, lam):
    tr = m00 + m11
    km = k00 * m00 + (k01 + k10) * m01 + k11 * m11
    mm = m00 * m00 + 2.0 * m01 * m01 + m11 * m11
    return tr, (km + four_n * mm + lam) / tr


@njit(cache=True)
def sde_meanfield_a_step2(X, dB, k00, k01, k10, k11, four_n, dd, h):
    """Drift predictor-corrector step of mean-field variant A.

    The heun average covers the drift only (the noise is additive); a plain
    Euler step carries an O(h) bias on the ensemble mean-square norm, which
    has no restoring force in this model and accumulates linearly in time.
    """
    m00, m01, m11 = emp_moment2(X)
    _, c = _mf_scalars2(m00, m01, m11, k00, k01, k10, k11, four_n, dd)
    pred = np.empty_like(X)
    p00 = 0.0; p01 = 0.0; p11 = 0.0
    n = X.shape[0]
    for i in range(n):
        x0 = X[i, 0]; x1 = X[i, 1]
        a0 = k00 * x0 + k01 * x1 + four_n * (m00 * x0 + m01 * x1) - c * x0
        a1 = k10 * x0 + k11 * x1 + four_n * (m01 * x0 + m11 * x1) - c * x1
        q0 = x0 + h * a0 + SQRT2 * dB[i, 0]
        q1 = x1 + h * a1 + SQRT2 * dB[i, 1]
        pred[i, 0] = q0; pred[i, 1] = q1
        p00 += q0 * q0; p01 += q0 * q1; p11 += q1 * q1
    pm00 = p00 / n; pm01 = p01 / n; pm11 = p11 / n
    _, pc = _mf_scalars2(pm00, pm01, pm11, k00, k01, k10, k11, four_n, dd)
    out = np.empty_like(X)
    for i in range(n):
        x0 = X[i, 0]; x1 = X[i, 1]
        a0 = k00 * x0 + k01 * x1 + four_n * (m00 * x0 + m01 * x1) - c * x0
        a1 = k10 * x0 + k11 * x1 + four_n * (m01 * x0 + m11 * x1) - c * x1
        q0 = pred[i, 0]; q1 = pred[i, 1]
        b0 = k00 * q0 + k01 * q1 + four_n * (pm00 * q0 + pm01 * q1) - pc * q0
        b1 = k10 * q0 + k11 * q1 + four_n * (pm01 * q0 + pm11 * q1) - pc * q1
        out[i, 0] = x0 + 0.5 * h * (a0 + b0) + SQRT2 * dB[i, 0]
        out[i, 1] = x1 + 0.5 * h * (a1 + b1) + SQRT2 * dB[i, 1]
    return out, m00, m01, m11


@njit(cache=True, inline="always")
def _noise_root2(m00, m01, m11):
    """Closed-form symmetric square root of S = Id - Mhat/tr(Mhat).

    det S = det(Mhat)/tr^2 >= 0 and tr S = 1, so the 2x2 sqrt formula
    (S + sqrt(det S) Id) / sqrt(tr S + 2 sqrt(det S)) never degenerates.
    Status 1 flags a failed factorization (non-finite input).
    """
    tr = m00 + m11
    s00 = 1.0 - m00 / tr; s01 = -m01 / tr; s11 = 1.0 - m11 / tr
    dets = s00 * s11 - s01 * s01
    if dets < 0.0:
        dets = 0.0
    sq = np.sqrt(dets)
    denom = np.sqrt(s00 + s11 + 2.0 * sq)
    if not np.isfinite(denom) or denom <= 0.0:
        return 1.0, 0.0, 1.0, 1
    return (s00 + sq) / denom, s01 / denom, (s11 + sq) / denom, 0


@njit(cache=True)
def sde_meanfield_b_step2(X, dB, k00, k01, k10, k11, four_n, dd, h):
    """Drift predictor-corrector step of mean-field variant B (shaped noise).

    The noise matrix R = sqrt(Id - Mhat/tr(Mhat)) is frozen at the step
    start; the drift is heun-averaged as in variant A. Returns a status
    flag: 1 signals a failed factorization.
    """
    m00, m01, m11 = emp_moment2(X)
    _, c = _mf_scalars2(m00, m01, m11, k00, k01, k10, k11, four_n, dd - 1.0)
    r00, r01, r11, status = _noise_root2(m00, m01, m11)
    n = X.shape[0]
    pred = np.empty_like(X)
    shaped = np.empty_like(X)
    p00 = 0.0; p01 = 0.0; p11 = 0.0
    for i in range(n):
        x0 = X[i, 0]; x1 = X[i, 1]
        b0 = r00 * dB[i, 0] + r01 * dB[i, 1]
        b1 = r01 * dB[i, 0] + r11 * dB[i, 1]
        shaped[i, 0] = b0; shaped[i, 1] = b1
        a0 = k00 * x0 + k01 * x1 + four_n * (m00 * x0 + m01 * x1) - c * x0
        a1 = k10 * x0 + k11 * x1 + four_n * (m01 * x0 + m11 * x1) - c * x1
        q0 = x0 + h * a0 + SQRT2 * b0
        q1 = x1 + h * a1 + SQRT2 * b1
        pred[i, 0] = q0; pred[i, 1] = q1
        p00 += q0 * q0; p01 += q0 * q1; p11 += q1 * q1
    pm00 = p00 / n; pm01 = p01 / n; pm11 = p11 / n
    _, pc = _mf_scalars2(pm00, pm01, pm11, k00, k01, k10, k11, four_n, dd - 1.0)
    out = np.empty_like(X)
    for i in range(n):
        x0 = X[i, 0]; x1 = X[i, 1]
        a0 = k00 * x0 + k01 * x1 + four_n * (m00 * x0 + m01 * x1) - c * x0
        a1 = k10 * x0 + k11 * x1 + four_n * (m01 * x0 + m11 * x1) - c * x1
        q0 = pred[i, 0]; q1 = pred[i, 1]
        b0 = k00 * q0 + k01 * q1 + four_n * (pm00 * q0 + pm01 * q1) - pc * q0
        b1 = k10 * q0 + k11 * q1 + four_n * (pm01 * q0 + pm11 * q1) - pc * q1
        out[i, 0] = x0 + 0.5 * h * (a0 + b0) + SQRT2 * shaped[i, 0]
        out[i, 1] = x1 + 0.5 * h * (a1 + b1) + SQRT2 * shaped[i, 1]
    return out, m00, m01, m11, status


@njit(cache=True)
def sde_replica_step2(X, dB, k00, k01, k10, k11, four_n, length, h):
    """Euler-Maruyama step of the dI-dimensional projected replica system.

    X is the (I, 2) stack of replicas; the projector and the radial term act
    on the flattened 2I-vector. Rescales so (1/I) sum |X^i|^2 = L^2 exactly.
    """
    I = X.shape[0]
    m00, m01, m11 = emp_moment2(X)
    g = 0.0; n2 = 0.0; xb = 0.0
    for i in range(I):
        x0 = X[i, 0]; x1 = X[i, 1]
        u0 = k00 * x0 + k01 * x1 + four_n * (m00 * x0 + m01 * x1)
        u1 = k10 * x0 + k11 * x1 + four_n * (m01 * x0 + m11 * x1)
        g += x0 * u0 + x1 * u1
        n2 += x0 * x0 + x1 * x1
        xb += x0 * dB[i, 0] + x1 * dB[i, 1]
    cg = g / n2
    cr = (2.0 * I - 1.0) / n2
    cb = xb / n2
    out = np.empty_like(X)
    s = 0.0
    for i in range(I):
        x0 = X[i, 0]; x1 = X[i, 1]
        u0 = k00 * x0 + k01 * x1 + four_n * (m00 * x0 + m01 * x1)
        u1 = k10 * x0 + k11 * x1 + four_n * (m01 * x0 + m11 * x1)
        n0 = x0 + h * (u0 - cg * x0 - cr * x0) + SQRT2 * (dB[i, 0] - cb * x0)
        n1 = x1 + h * (u1 - cg * x1 - cr * x1) + SQRT2 * (dB[i, 1] - cb * x1)
        out[i, 0] = n0; out[i, 1] = n1
        s += n0 * n0 + n1 * n1
    f = np.sqrt(I * length * length / s)
    for i in range(I):
        out[i, 0] *= f
        out[i, 1] *= f
    return out, m00, m01, m11
