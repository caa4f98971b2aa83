"""Compiled inner loops for the sampler and the Monte-Carlo estimators.

Metric codes: 0 wasserstein, 1 mean_euclidean, 2 none.
Repulsion kind codes: 0 min, 1 geometric_mean.
"""

import math

import numpy as np
from numba import njit

METRIC_CODES = {"wasserstein": 0, "mean_euclidean": 1, "none": 2}
KIND_CODES = {"min": 0, "geometric_mean": 1}

LOG_2PI = math.log(2.0 * math.pi)

STATUS_DONE = 0
STATUS_NEED_CAPACITY = 1
STATUS_NEED_LOGZ = 2


@njit(cache=True)
def trace_sqrt_sym(m):
    """Trace of the square root of a symmetric PSD matrix (negative round-off clamped)."""
    p = m.shape[0]
    if p == 1:
        return math.sqrt(max(m[0, 0], 0.0))
    if p == 2:
        a = m[0, 0]
        d = m[1, 1]
        b = 0.5 * (m[0, 1] + m[1, 0])
        half_tr = 0.5 * (a + d)
        disc = math.sqrt(0.25 * (a - d) * (a - d) + b * b)
        return math.sqrt(max(half_tr + disc, 0.0)) + math.sqrt(max(half_tr - disc, 0.0))
    sym = 0.5 * (m + m.T)
    w = np.linalg.eigvalsh(sym)
    s = 0.0
    for j in range(p):
        if w[j] > 0.0:
            s += math.sqrt(w[j])
    return s


@njit(cache=True)
def w2sq(m1, s1_sqrt, s1, m2, s2):
    """Squared 2-Wasserstein distance; ``s1_sqrt`` is the cached root of ``s1``."""
    p = m1.shape[0]
    dm = 0.0
    for j in range(p):
        diff = m1[j] - m2[j]
        dm += diff * diff
    if dm == 0.0:
        same = True
        for r in range(p):
            for c in range(p):
                if s1[r, c] != s2[r, c]:
                    same = False
        if same:
            return 0.0
    tr = 0.0
    for j in range(p):
        tr += s1[j, j] + s2[j, j]
    if p == 1:
        cross = math.sqrt(max(s1_sqrt[0, 0] * s1_sqrt[0, 0] * s2[0, 0], 0.0))
    elif p == 2:
        r00, r01, r11 = s1_sqrt[0, 0], 0.5 * (s1_sqrt[0, 1] + s1_sqrt[1, 0]), s1_sqrt[1, 1]
        b00, b01, b11 = s2[0, 0], 0.5 * (s2[0, 1] + s2[1, 0]), s2[1, 1]
        # t = R B
        t00 = r00 * b00 + r01 * b01
        t01 = r00 * b01 + r01 * b11
        t10 = r01 * b00 + r11 * b01
        t11 = r01 * b01 + r11 * b11
        # inner = t R (symmetric)
        i00 = t00 * r00 + t01 * r01
        i11 = t10 * r01 + t11 * r11
        i01 = 0.5 * ((t00 * r01 + t01 * r11) + (t10 * r00 + t11 * r01))
        half_tr = 0.5 * (i00 + i11)
        disc = math.sqrt(0.25 * (i00 - i11) * (i00 - i11) + i01 * i01)
        cross = math.sqrt(max(half_tr + disc, 0.0)) + math.sqrt(max(half_tr - disc, 0.0))
    else:
        inner = s1_sqrt @ s2 @ s1_sqrt
        cross = trace_sqrt_sym(inner)
    v = dm + tr - 2.0 * cross
    return v if v > 0.0 else 0.0


@njit(cache=True)
def _sqrt_into(a, out):
    p = a.shape[0]
    if p == 1:
        out[0, 0] = math.sqrt(max(a[0, 0], 0.0))
        return
    if p == 2:
        # sqrt(A) = (A + sqrt(det A) I) / sqrt(tr A + 2 sqrt(det A)) for 2x2 SPD A
        a01 = 0.5 * (a[0, 1] + a[1, 0])
        det = max(a[0, 0] * a[1, 1] - a01 * a01, 0.0)
        sd = math.sqrt(det)
        den = math.sqrt(a[0, 0] + a[1, 1] + 2.0 * sd)
        out[0, 0] = (a[0, 0] + sd) / den
        out[1, 1] = (a[1, 1] + sd) / den
        out[0, 1] = a01 / den
        out[1, 0] = a01 / den
        return
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    for r in range(p):
        for c in range(p):
            acc = 0.0
            for j in range(p):
                if w[j] > 0.0:
                    acc += v[r, j] * math.sqrt(w[j]) * v[c, j]
            out[r, c] = acc
    for r in range(p):
        for c in range(r + 1, p):
            m = 0.5 * (out[r, c] + out[c, r])
            out[r, c] = m
            out[c, r] = m


@njit(cache=True)
def _chol_into(a, out):
    """Lower Cholesky factor; returns False if ``a`` is not positive definite."""
    p = a.shape[0]
    for r in range(p):
        for c in range(p):
            out[r, c] = 0.0
    for j in range(p):
        acc = a[j, j]
        for k in range(j):
            acc -= out[j, k] * out[j, k]
        if not acc > 0.0:
            return False
        out[j, j] = math.sqrt(acc)
        for r in range(j + 1, p):
            acc = a[r, j]
            for k in range(j):
                acc -= out[r, k] * out[j, k]
            out[r, j] = acc / out[j, j]
    return True


@njit(cache=True)
def _eig_range(a):
    p = a.shape[0]
    if p == 1:
        return a[0, 0], a[0, 0]
    if p == 2:
        a01 = 0.5 * (a[0, 1] + a[1, 0])
        half_tr = 0.5 * (a[0, 0] + a[1, 1])
        disc = math.sqrt(0.25 * (a[0, 0] - a[1, 1]) ** 2 + a01 * a01)
        return half_tr - disc, half_tr + disc
    w = np.linalg.eigvalsh(0.5 * (a + a.T))
    return w[0], w[p - 1]


@njit(cache=True)
def batch_factorize(covs):
    """Square roots, Cholesky factors, log-determinants and eigenvalue ranges."""
    n, p = covs.shape[0], covs.shape[1]
    sqrts = np.zeros_like(covs)
    chols = np.zeros_like(covs)
    logdets = np.zeros(n)
    lo = np.zeros(n)
    hi = np.zeros(n)
    for r in range(n):
        _sqrt_into(covs[r], sqrts[r])
        ok = _chol_into(covs[r], chols[r])
        if ok:
            acc = 0.0
            for j in range(p):
                acc += math.log(chols[r, j, j])
            logdets[r] = 2.0 * acc
        else:
            logdets[r] = np.nan
        lo[r], hi[r] = _eig_range(covs[r])
    return sqrts, chols, logdets, lo, hi


@njit(cache=True)
def batch_eig_range(covs):
    n = covs.shape[0]
    lo = np.zeros(n)
    hi = np.zeros(n)
    for r in range(n):
        lo[r], hi[r] = _eig_range(covs[r])
    return lo, hi


@njit(cache=True)
def bartlett_inv_wishart(psi_inv_chol, chi, normals):
    """Inverse-Wishart draws from Bartlett factors.

    ``chi[r, j]`` are chi-square(nu - j) variates and ``normals[r]`` the strictly
    lower entries in row-major order. With ``B = L A`` (``L`` the Cholesky factor
    of ``psi^-1``), the Wishart draw is ``B B^T`` and the result is ``B^-T B^-1``.
    """
    n, p = chi.shape
    out = np.zeros((n, p, p))
    a = np.zeros((p, p))
    b = np.zeros((p, p))
    binv = np.zeros((p, p))
    for r in range(n):
        idx = 0
        for i in range(p):
            for j in range(p):
                a[i, j] = 0.0
            a[i, i] = math.sqrt(chi[r, i])
            for j in range(i):
                a[i, j] = normals[r, idx]
                idx += 1
        for i in range(p):
            for j in range(i + 1):
                acc = 0.0
                for k in range(j, i + 1):
                    acc += psi_inv_chol[i, k] * a[k, j]
                b[i, j] = acc
        # invert lower-triangular b
        for j in range(p):
            for i in range(p):
                binv[i, j] = 0.0
            binv[j, j] = 1.0 / b[j, j]
            for i in range(j + 1, p):
                acc = 0.0
                for k in range(j, i):
                    acc += b[i, k] * binv[k, j]
                binv[i, j] = -acc / b[i, i]
        for i in range(p):
            for j in range(i + 1):
                acc = 0.0
                for k in range(p):
                    acc += binv[k, i] * binv[k, j]
                out[r, i, j] = acc
                out[r, j, i] = acc
    return out


@njit(cache=True)
def sq_dist(metric, m1, s1_sqrt, s1, m2, s2):
    if metric == 0:
        return w2sq(m1, s1_sqrt, s1, m2, s2)
    if metric == 1:
        dm = 0.0
        for j in range(m1.shape[0]):
            diff = m1[j] - m2[j]
            dm += diff * diff
        return dm
    return 0.0


@njit(cache=True)
def log_g(x, g0):
    if x <= 0.0:
        return -np.inf
    return math.log(x) - math.log(g0 + x)


@njit(cache=True)
def log_h_from_dist(dist, t, kind, metric, g0):
    """log h for the first ``t`` components given their pairwise squared distances."""
    if metric == 2 or t < 2:
        return 0.0
    if kind == 0:
        best = 0.0
        for a in range(t):
            for b in range(a + 1, t):
                v = log_g(dist[a, b], g0)
                if v < best:
                    best = v
        return best
    s = 0.0
    for a in range(t):
        for b in range(a + 1, t):
            s += log_g(dist[a, b], g0)
    return s / t


@njit(cache=True)
def log_h_replace_row(dist, t, k, row, kind, metric, g0):
    """log h after replacing component ``k``'s distances with ``row``."""
    if metric == 2 or t < 2:
        return 0.0
    if kind == 0:
        best = 0.0
        for a in range(t):
            for b in range(a + 1, t):
                if a == k:
                    d = row[b]
                elif b == k:
                    d = row[a]
                else:
                    d = dist[a, b]
                v = log_g(d, g0)
                if v < best:
                    best = v
        return best
    s = 0.0
    for a in range(t):
        for b in range(a + 1, t):
            if a == k:
                d = row[b]
            elif b == k:
                d = row[a]
            else:
                d = dist[a, b]
            s += log_g(d, g0)
    return s / t


@njit(cache=True)
def dist_row(metric, mean, cov_sqrt, cov, means, covs, t, skip):
    row = np.zeros(t)
    if metric == 2:
        return row
    for k in range(t):
        if k != skip:
            row[k] = sq_dist(metric, mean, cov_sqrt, cov, means[k], covs[k])
    return row


@njit(cache=True)
def logpdf_chol(y, mean, chol, log_det):
    p = y.shape[0]
    z = np.empty(p)
    quad = 0.0
    for r in range(p):
        acc = y[r] - mean[r]
        for c in range(r):
            acc -= chol[r, c] * z[c]
        z[r] = acc / chol[r, r]
        quad += z[r] * z[r]
    return -0.5 * p * LOG_2PI - 0.5 * log_det - 0.5 * quad


@njit(cache=True)
def batch_log_h(means, covs, sqrts, kind, metric, g0):
    """log h_K for each of N component tuples; inputs have leading shape (N, K)."""
    n, k = means.shape[0], means.shape[1]
    out = np.zeros(n)
    if metric == 2 or k < 2:
        return out
    dist = np.zeros((k, k))
    for r in range(n):
        for a in range(k):
            for b in range(a + 1, k):
                d = sq_dist(metric, means[r, a], sqrts[r, a], covs[r, a], means[r, b], covs[r, b])
                dist[a, b] = d
                dist[b, a] = d
        out[r] = log_h_from_dist(dist, k, kind, metric, g0)
    return out


@njit(cache=True)
def batch_pair_log_g(means_a, sqrts_a, covs_a, means_b, covs_b, metric, g0, squared):
    """log g of the (squared or plain) distance for N component pairs."""
    n = means_a.shape[0]
    out = np.zeros(n)
    for r in range(n):
        d = sq_dist(metric, means_a[r], sqrts_a[r], covs_a[r], means_b[r], covs_b[r])
        if not squared:
            d = math.sqrt(d)
        out[r] = log_g(d, g0)
    return out


@njit(cache=True)
def _delete_cluster(c, t, z, counts, means, covs, sqrts, chols, logdets, dist):
    for k in range(c, t - 1):
        means[k] = means[k + 1]
        covs[k] = covs[k + 1]
        sqrts[k] = sqrts[k + 1]
        chols[k] = chols[k + 1]
        logdets[k] = logdets[k + 1]
        counts[k] = counts[k + 1]
    counts[t - 1] = 0
    for a in range(c, t - 1):
        for b in range(t):
            dist[a, b] = dist[a + 1, b]
    for a in range(t - 1):
        for b in range(c, t - 1):
            dist[a, b] = dist[a, b + 1]
    for a in range(t):
        dist[a, t - 1] = 0.0
        dist[t - 1, a] = 0.0
    for j in range(z.shape[0]):
        if z[j] > c:
            z[j] -= 1


@njit(cache=True)
def assign_points(
    y, z, counts, t, means, covs, sqrts, chols, logdets, dist,
    i_start, i_end,
    aux_means, aux_covs, aux_sqrts, aux_chols, aux_logdets, u,
    beta, log_v, log_z, metric, kind, g0,
):
    """Reassign points ``i_start..i_end-1`` in order (Neal-8 style augmentation).

    Auxiliary arrays are indexed by point, shape (n, n_aux, ...). When a point
    was a singleton its old component replaces auxiliary slot 0.

    Returns ``(i_stop, t, status)``; a nonzero status means the caller must grow
    the component capacity or the log Z table and resume at ``i_stop``.
    """
    cap = means.shape[0]
    n_aux = aux_means.shape[1]
    log_n_aux = math.log(n_aux)
    log_beta = math.log(beta)
    d_aux = np.zeros((n_aux, cap))
    lw = np.empty(cap + n_aux)
    for i in range(i_start, i_end):
        if t + 1 > cap:
            return i, t, STATUS_NEED_CAPACITY
        if t + 1 >= log_z.shape[0]:
            return i, t, STATUS_NEED_LOGZ
        yi = y[i]
        c = z[i]
        counts[c] -= 1
        if counts[c] == 0:
            aux_means[i, 0] = means[c]
            aux_covs[i, 0] = covs[c]
            aux_sqrts[i, 0] = sqrts[c]
            aux_chols[i, 0] = chols[c]
            aux_logdets[i, 0] = logdets[c]
            _delete_cluster(c, t, z, counts, means, covs, sqrts, chols, logdets, dist)
            t -= 1
        z[i] = -1

        for k in range(t):
            lw[k] = math.log(counts[k] + beta) + logpdf_chol(yi, means[k], chols[k], logdets[k])

        new_base = log_beta + log_v[t + 1] - log_v[t] - log_n_aux + log_z[t] - log_z[t + 1]
        log_h_cur = 0.0
        pair_sum = 0.0
        pair_min = 0.0
        h_new = 0.0
        s_new = 0.0
        if metric != 2:
            log_h_cur = log_h_from_dist(dist, t, kind, metric, g0)
            if t >= 2:
                if kind == 0:
                    pair_min = log_h_cur
                else:
                    pair_sum = log_h_cur * t
        for a in range(n_aux):
            w = new_base + logpdf_chol(yi, aux_means[i, a], aux_chols[i, a], aux_logdets[i, a])
            if metric != 2 and t >= 1:
                if kind == 0:
                    h_new = pair_min
                else:
                    s_new = pair_sum
                for k in range(t):
                    d = sq_dist(metric, aux_means[i, a], aux_sqrts[i, a], aux_covs[i, a],
                                means[k], covs[k])
                    d_aux[a, k] = d
                    lg = log_g(d, g0)
                    if kind == 0:
                        if lg < h_new:
                            h_new = lg
                    else:
                        s_new += lg
                if kind == 1:
                    h_new = s_new / (t + 1)
                w += h_new - log_h_cur
            lw[t + a] = w

        m = t + n_aux
        top = -np.inf
        for k in range(m):
            if lw[k] > top:
                top = lw[k]
        total = 0.0
        for k in range(m):
            lw[k] = math.exp(lw[k] - top)
            total += lw[k]
        target = u[i] * total
        acc = 0.0
        pick = -1
        for k in range(m):
            acc += lw[k]
            if target < acc:
                pick = k
                break
        if pick < 0:
            # target landed on the rounding gap at the top of the CDF
            for k in range(m - 1, -1, -1):
                if lw[k] > 0.0:
                    pick = k
                    break

        if pick < t:
            z[i] = pick
            counts[pick] += 1
        else:
            a = pick - t
            means[t] = aux_means[i, a]
            covs[t] = aux_covs[i, a]
            sqrts[t] = aux_sqrts[i, a]
            chols[t] = aux_chols[i, a]
            logdets[t] = aux_logdets[i, a]
            for k in range(t):
                dist[t, k] = d_aux[a, k]
                dist[k, t] = d_aux[a, k]
            dist[t, t] = 0.0
            counts[t] = 1
            z[i] = t
            t += 1
    return i_end, t, STATUS_DONE
