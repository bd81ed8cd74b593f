"""Compiled right-hand sides and the Dormand-Prince 5(4) stepping kernel.

Everything here works on flat float64 arrays so numba can compile and cache
it once. The public wrappers live in :mod:`tbregsim.model`,
:mod:`tbregsim.solver` and :mod:`tbregsim.fitting`.
"""

import math

import numpy as np
from numba import njit

PARAM_NAMES = (
    "a", "b", "c", "delta", "s_N", "lambda_R", "d", "l", "s_C",
    "sigma_N", "theta_N", "p", "gamma_N", "delta_N", "kappa",
    "sigma_C", "theta_C", "q", "gamma_C", "r", "j_C", "k_C", "eta_1", "eta_2",
    "sigma_H", "theta_H", "j_H", "k_H", "c_1",
    "sigma_R", "theta_R",
    "sigma_B", "theta_B", "c_2", "gamma_B",
    "theta_BT",
    "theta_X",
)

(A, B_INV, C_NK, DELTA, S_N, LAMBDA_R, D_CD8, L_CD8, S_C,
 SIGMA_N, THETA_N, P_NK, GAMMA_N, DELTA_N, KAPPA,
 SIGMA_C, THETA_C, Q_CD8, GAMMA_C, R_CD8, J_C, K_C, ETA_1, ETA_2,
 SIGMA_H, THETA_H, J_H, K_H, C_1,
 SIGMA_R, THETA_R,
 SIGMA_B, THETA_B, C_2, GAMMA_B,
 THETA_BT,
 THETA_X) = range(len(PARAM_NAMES))

SYSTEM_MODEL = 0
SYSTEM_ASSAY = 1

FORM_POWER = 0
FORM_RATIONAL = 1
FORM_MM = 2

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_DOMAIN = 2
STATUS_MAXSTEPS = 3
STATUS_STIFF = 4

# Dormand-Prince 5(4) tableau
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = (19372.0 / 6561.0, -25360.0 / 2187.0,
                      64448.0 / 6561.0, -212.0 / 729.0)
A61, A62, A63, A64, A65 = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0,
                           49.0 / 176.0, -5103.0 / 18656.0)
B1, B3, B4, B5, B6 = (35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0,
                      -2187.0 / 6784.0, 11.0 / 84.0)
# difference between the 5th and embedded 4th order weights
E1, E3, E4, E5, E6, E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0,
                          -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)

# Shampine's quartic continuous extension (rows: k1..k7, cols: theta^1..theta^4)
DENSE = np.array([
    [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0,
     -12715105075.0 / 11282082432.0],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0,
     87487479700.0 / 32700410799.0],
    [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0,
     -10690763975.0 / 1880347072.0],
    [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0,
     701980252875.0 / 199316789632.0],
    [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0,
     -1453857185.0 / 822651844.0],
    [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0,
     69997945.0 / 29380423.0],
])


@njit(cache=True, error_model="numpy")
def hill_ratio(prey, predator, exponent, half_sat):
    """predator^e / (half_sat * prey^e + predator^e), defined as 0 without predators."""
    if predator <= 0.0:
        return 0.0
    pe = predator ** exponent
    den = half_sat * prey ** exponent + pe
    if den <= 0.0:
        # predator^e underflowed with no prey left
        return 0.0
    return pe / den


@njit(cache=True, error_model="numpy")
def model_rhs(y, p, rate, out):
    T = max(y[0], 0.0)
    N = max(y[1], 0.0)
    C = max(y[2], 0.0)
    H = max(y[3], 0.0)
    R = max(y[4], 0.0)
    B = max(y[5], 0.0)
    BT = max(y[6], 0.0)
    X = max(y[7], 0.0)

    nk = p[C_NK] * math.exp(-p[LAMBDA_R] * R) * hill_ratio(T, N, p[DELTA], p[S_N])
    cd8 = p[D_CD8] * hill_ratio(T, C, p[L_CD8], p[S_C])
    out[0] = p[A] * T * (1.0 - p[B_INV] * T) - nk * T - cd8 * T

    out[1] = (p[SIGMA_N] - p[THETA_N] * N - p[P_NK] * T * N
              - p[GAMMA_N] * R ** p[DELTA_N] * N + p[KAPPA] * H * N)

    out[2] = (p[SIGMA_C] - p[THETA_C] * C - p[Q_CD8] * T * C - p[GAMMA_C] * R * C
              + p[R_CD8] * N * T + p[J_C] * T / (p[K_C] + T) * C
              + p[ETA_1] * H / (p[ETA_2] + H) * C)

    conv_h = p[C_1] * H * BT
    out[3] = p[SIGMA_H] - p[THETA_H] * H + p[J_H] * T / (p[K_H] + T) * B * H - conv_h
    out[4] = p[SIGMA_R] - p[THETA_R] * R + conv_h

    conv_b = p[C_2] * T * B
    out[5] = p[SIGMA_B] - p[THETA_B] * B - conv_b - p[GAMMA_B] * X * X * B
    out[6] = -p[THETA_BT] * BT + conv_b

    out[7] = -p[THETA_X] * X + rate


@njit(cache=True, error_model="numpy")
def trophic(kind, prey, predator, magnitude, exponent, half_sat):
    if kind == FORM_POWER:
        if predator <= 0.0:
            return 0.0
        return magnitude * predator ** exponent
    elif kind == FORM_RATIONAL:
        return magnitude * hill_ratio(prey, predator, exponent, half_sat)
    # Michaelis-Menten: the second coefficient is the half-saturation constant
    if predator <= 0.0:
        return 0.0
    return magnitude * predator / (exponent + predator)


@njit(cache=True, error_model="numpy")
def assay_rhs(y, p, out):
    prey = max(y[0], 0.0)
    predator = max(y[1], 0.0)
    kind = int(p[0])
    f = trophic(kind, prey, predator, p[1], p[2], p[3])
    out[0] = -p[4] * prey - f * prey
    out[1] = -p[5] * predator


@njit(cache=True, error_model="numpy")
def evaluate(system, y, p, rate, out):
    if system == SYSTEM_MODEL:
        model_rhs(y, p, rate, out)
    else:
        assay_rhs(y, p, out)


@njit(cache=True, error_model="numpy")
def _rms(v, y, rtol, atol):
    s = 0.0
    for i in range(v.size):
        sc = atol[i] + rtol * abs(y[i])
        s += (v[i] / sc) ** 2
    return math.sqrt(s / v.size)


@njit(cache=True, error_model="numpy")
def initial_step(system, t0, y0, f0, p, rate, rtol, atol, direction_span):
    # Hairer, Norsett & Wanner, Solving ODEs I, II.4
    n = y0.size
    d0 = _rms(y0, y0, rtol, atol)
    d1 = _rms(f0, y0, rtol, atol)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, direction_span)
    y1 = np.empty(n)
    for i in range(n):
        y1[i] = y0[i] + h0 * f0[i]
    f1 = np.empty(n)
    evaluate(system, y1, p, rate, f1)
    diff = np.empty(n)
    for i in range(n):
        diff[i] = f1[i] - f0[i]
    d2 = _rms(diff, y0, rtol, atol) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, direction_span)


@njit(cache=True, nogil=True, error_model="numpy")
def integrate_segment(system, t0, t1, y0, p, rate, rtol, atol, max_step,
                      h_init, sample_times, scale, max_steps, stiff_steps):
    """Integrate one smooth segment [t0, t1] with a constant input rate.

    Returns (t_reached, y, samples, h_next, n_accepted, n_rejected, n_eval,
    status, worst_undershoot). When ``stiff_steps > 0`` the stiffness test of
    Hairer and Wanner is applied and the loop stops with STATUS_STIFF once
    the problem is judged stiff and more than ``stiff_steps`` further steps
    would be needed at the current step size. ``scale`` is updated in place with the running
    magnitude of every component; ``worst_undershoot`` is the most negative
    value of y_i / scale_i seen before clamping.
    """
    n = y0.size
    y = y0.copy()
    samples = np.empty((sample_times.size, n))
    n_samples = 0
    n_acc = 0
    n_rej = 0
    n_eval = 0
    worst = 0.0
    status = STATUS_OK

    span = t1 - t0
    if span <= 0.0:
        return t0, y, samples[:0], h_init, 0, 0, 0, STATUS_OK, 0.0

    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    tmp = np.empty(n)
    y_new = np.empty(n)
    err = np.empty(n)

    evaluate(system, y, p, rate, k1)
    n_eval += 1
    if h_init > 0.0:
        h = min(h_init, span, max_step)
    else:
        h = min(initial_step(system, t0, y, k1, p, rate, rtol, atol, span), max_step)
        n_eval += 1

    stiff_hits = 0
    calm_hits = 0
    t = t0
    while t < t1:
        if n_acc + n_rej >= max_steps:
            status = STATUS_MAXSTEPS
            break
        last = False
        h_full = h
        if t + h >= t1 or t1 - (t + h) < 1e-12 * max(1.0, abs(t1)):
            h = t1 - t
            last = True
        if h <= 16.0 * 2.220446049250313e-16 * max(1.0, abs(t)):
            status = STATUS_UNDERFLOW
            break

        for i in range(n):
            tmp[i] = y[i] + h * A21 * k1[i]
        evaluate(system, tmp, p, rate, k2)
        for i in range(n):
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
        evaluate(system, tmp, p, rate, k3)
        for i in range(n):
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        evaluate(system, tmp, p, rate, k4)
        for i in range(n):
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
        evaluate(system, tmp, p, rate, k5)
        for i in range(n):
            tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i]
                                 + A64 * k4[i] + A65 * k5[i])
        evaluate(system, tmp, p, rate, k6)
        for i in range(n):
            y_new[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i]
                                   + B5 * k5[i] + B6 * k6[i])
        evaluate(system, y_new, p, rate, k7)
        n_eval += 6

        s = 0.0
        for i in range(n):
            err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i]
                          + E6 * k6[i] + E7 * k7[i])
            sc = atol[i] + rtol * max(abs(y[i]), abs(y_new[i]))
            s += (err[i] / sc) ** 2
        err_norm = math.sqrt(s / n)

        if not math.isfinite(err_norm):
            n_rej += 1
            h = 0.2 * h
            continue
        if err_norm <= 1.0:
            t_new = t1 if last else t + h
            # dense output for the requested sample times inside (t, t_new]
            while n_samples < sample_times.size and sample_times[n_samples] <= t_new:
                ts = sample_times[n_samples]
                if ts >= t_new:
                    for i in range(n):
                        samples[n_samples, i] = y_new[i]
                else:
                    th = (ts - t) / h
                    for i in range(n):
                        acc = 0.0
                        pw = th
                        for j in range(4):
                            acc += pw * (DENSE[0, j] * k1[i] + DENSE[2, j] * k3[i]
                                         + DENSE[3, j] * k4[i] + DENSE[4, j] * k5[i]
                                         + DENSE[5, j] * k6[i] + DENSE[6, j] * k7[i])
                            pw *= th
                        samples[n_samples, i] = max(y[i] + h * acc, 0.0)
                n_samples += 1

            for i in range(n):
                if abs(y_new[i]) > scale[i]:
                    scale[i] = abs(y_new[i])
                if y_new[i] < 0.0:
                    ratio = y_new[i] / scale[i]
                    if ratio < worst:
                        worst = ratio
                    if ratio < -1e-9:
                        status = STATUS_DOMAIN
                    y_new[i] = 0.0
            if status != STATUS_OK:
                break
            if stiff_steps > 0:
                num = 0.0
                den = 0.0
                for i in range(n):
                    num += (k7[i] - k6[i]) ** 2
                    den += (y_new[i] - tmp[i]) ** 2
                if den > 0.0 and h * math.sqrt(num / den) > 3.25:
                    calm_hits = 0
                    stiff_hits += 1
                else:
                    calm_hits += 1
                    if calm_hits == 6:
                        stiff_hits = 0
            # rhs clamps internally, so k7 is already f(clamped y_new)
            for i in range(n):
                y[i] = y_new[i]
                k1[i] = k7[i]
            t = t_new
            n_acc += 1
            if err_norm == 0.0:
                factor = 10.0
            else:
                factor = min(10.0, 0.9 * err_norm ** -0.2)
            h = min((h_full if last else h) * factor, max_step)
            if stiff_hits >= 15 and (t1 - t) > stiff_steps * h:
                status = STATUS_STIFF
                break
        else:
            n_rej += 1
            h = h * max(0.2, 0.9 * err_norm ** -0.2)

    return t, y, samples[:n_samples], h, n_acc, n_rej, n_eval, status, worst


@njit(cache=True, nogil=True, error_model="numpy")
def assay_batch(p, prey0, ratios, t_final, rtol, atol_frac, max_steps):
    """Prey count at ``t_final`` of the two-species assay for each ratio.

    ``p`` is the assay parameter vector read by :func:`assay_rhs`; the
    predator starts at ``ratio * prey0``. Returns (final_prey, status) where
    status is the first non-OK integrator status met, else STATUS_OK.
    """
    out = np.empty(ratios.size)
    y0 = np.empty(2)
    atol = np.empty(2)
    scale = np.empty(2)
    empty = np.empty(0)
    status = STATUS_OK
    for k in range(ratios.size):
        y0[0] = prey0
        y0[1] = ratios[k] * prey0
        atol[0] = atol_frac * prey0
        atol[1] = atol_frac * max(y0[1], 1.0)
        scale[0] = max(prey0, 1.0)
        scale[1] = max(y0[1], 1.0)
        res = integrate_segment(SYSTEM_ASSAY, 0.0, t_final, y0, p, 0.0, rtol, atol,
                                np.inf, 0.0, empty, scale, max_steps, 0)
        out[k] = res[1][0]
        if res[7] != STATUS_OK and status == STATUS_OK:
            status = res[7]
        if status != STATUS_OK:
            break
    return out, status


# -- stiff fallback ------------------------------------------------------------
# Linearly implicit Euler with polynomial extrapolation over the harmonic
# substep sequence 1..EXTRAP_ORDER (the SEULEX scheme at fixed order).

EXTRAP_ORDER = 6
# Unknown order for the linear solves: with T (and B_T, X) eliminated last,
# pivoting never mixes the rows that must stay exactly zero on the
# tumor-free manifold, so T = 0 is preserved bit for bit.
SOLVE_ORDER = np.array([1, 2, 3, 4, 5, 6, 0, 7])


@njit(cache=True, error_model="numpy")
def _lu_factor(a, piv):
    """In-place LU with partial pivoting; returns False when singular."""
    n = a.shape[0]
    for k in range(n):
        m = k
        big = abs(a[k, k])
        for i in range(k + 1, n):
            if abs(a[i, k]) > big:
                big = abs(a[i, k])
                m = i
        piv[k] = m
        if big == 0.0:
            return False
        if m != k:
            for j in range(n):
                a[k, j], a[m, j] = a[m, j], a[k, j]
        for i in range(k + 1, n):
            a[i, k] /= a[k, k]
            for j in range(k + 1, n):
                a[i, j] -= a[i, k] * a[k, j]
    return True


@njit(cache=True, error_model="numpy")
def _lu_solve(a, piv, b):
    n = a.shape[0]
    for k in range(n):
        m = piv[k]
        if m != k:
            b[k], b[m] = b[m], b[k]
    for i in range(n):
        for j in range(i):
            b[i] -= a[i, j] * b[j]
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, n):
            b[i] -= a[i, j] * b[j]
        b[i] /= a[i, i]


@njit(cache=True, error_model="numpy")
def _model_jacobian(y, f0, p, rate, jac, work, fy):
    """Forward differences; states stay in the nonnegative domain."""
    n = y.size
    for j in range(n):
        d = 1.5e-8 * max(abs(y[j]), 1.0)
        for i in range(n):
            work[i] = y[i]
        work[j] = y[j] + d
        model_rhs(work, p, rate, fy)
        for i in range(n):
            jac[i, j] = (fy[i] - f0[i]) / d


@njit(cache=True, nogil=True, error_model="numpy")
def integrate_stiff(t0, t1, y0, p, rate, rtol, atol, max_step, h_init, sample_times, scale, max_steps):
    """Stiff integration of the model over [t0, t1] at a constant input rate.

    Steps land exactly on every entry of ``sample_times``. Returns
    (y, samples, n_steps, n_rejected, n_eval, status, worst_undershoot) with
    the same conventions as :func:`integrate_segment`.
    """
    n = y0.size
    K = EXTRAP_ORDER
    y = y0.copy()
    samples = np.empty((sample_times.size, n))
    n_samples = 0
    n_acc = 0
    n_rej = 0
    n_eval = 0
    worst = 0.0
    status = STATUS_OK

    f0 = np.empty(n)
    fy = np.empty(n)
    work = np.empty(n)
    jac = np.empty((n, n))
    mat = np.empty((n, n))
    piv = np.empty(n, dtype=np.int64)
    tab = np.empty((K, K, n))
    yk = np.empty(n)
    delta = np.empty(n)
    order = SOLVE_ORDER

    while n_samples < sample_times.size and sample_times[n_samples] <= t0:
        samples[n_samples] = y
        n_samples += 1

    t = t0
    h = min(max(h_init, 1e-8 * (t1 - t0)), max_step, t1 - t0)
    need_jac = True
    while t < t1:
        if n_acc + n_rej >= max_steps:
            status = STATUS_MAXSTEPS
            break
        stop = sample_times[n_samples] if n_samples < sample_times.size else t1
        if stop > t1:
            stop = t1
        h_try = min(h, stop - t)
        landing = h_try >= stop - t
        if h_try <= 1e-14 * max(abs(t), 1.0):
            status = STATUS_UNDERFLOW
            break
        if need_jac:
            model_rhs(y, p, rate, f0)
            _model_jacobian(y, f0, p, rate, jac, work, fy)
            n_eval += n + 1
            need_jac = False

        ok = True
        for j in range(K):
            nj = j + 1
            hs = h_try / nj
            for r in range(n):
                for c in range(n):
                    mat[r, c] = -hs * jac[order[r], order[c]]
                mat[r, r] += 1.0
            if not _lu_factor(mat, piv):
                ok = False
                break
            for i in range(n):
                yk[i] = y[i]
            for m in range(nj):
                if m == 0:
                    for r in range(n):
                        delta[r] = hs * f0[order[r]]
                else:
                    model_rhs(yk, p, rate, fy)
                    n_eval += 1
                    for r in range(n):
                        delta[r] = hs * fy[order[r]]
                _lu_solve(mat, piv, delta)
                for r in range(n):
                    yk[order[r]] += delta[r]
            for i in range(n):
                tab[j, 0, i] = yk[i]
            for k in range(1, j + 1):
                q = nj / (nj - k) - 1.0
                for i in range(n):
                    tab[j, k, i] = tab[j, k - 1, i] + (tab[j, k - 1, i] - tab[j - 1, k - 1, i]) / q

        err_norm = 0.0
        if ok:
            for i in range(n):
                v = tab[K - 1, K - 1, i]
                if not math.isfinite(v):
                    ok = False
                    break
                sc = atol[i] + rtol * max(abs(y[i]), abs(v))
                e = (v - tab[K - 1, K - 2, i]) / sc
                err_norm += e * e
            err_norm = math.sqrt(err_norm / n)

        if ok and err_norm <= 1.0:
            for i in range(n):
                v = tab[K - 1, K - 1, i]
                if abs(v) > scale[i]:
                    scale[i] = abs(v)
                if v < 0.0:
                    ratio = v / scale[i]
                    if ratio < worst:
                        worst = ratio
                    if ratio < -1e-9:
                        status = STATUS_DOMAIN
                    v = 0.0
                y[i] = v
            if status != STATUS_OK:
                break
            t = stop if landing else t + h_try
            n_acc += 1
            need_jac = True
            while n_samples < sample_times.size and sample_times[n_samples] <= t:
                samples[n_samples] = y
                n_samples += 1
            factor = 4.0 if err_norm == 0.0 else min(4.0, 0.9 * err_norm ** (-1.0 / K))
            # a step clipped by a sample time says little about the next one
            h = min(max(h, h_try * factor) if landing else h_try * factor, max_step)
        else:
            n_rej += 1
            factor = 0.25 if not ok else max(0.2, 0.9 * err_norm ** (-1.0 / K))
            h = h_try * factor
    return y, samples[:n_samples], n_acc, n_rej, n_eval, status, worst
