# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-triple SGD for BPR / APR. Mirrors ``_fallback.sgd_epoch`` operation for operation."""
from libc.math cimport exp, log1p, sqrt


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _softplus(double x) nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


def sgd_epoch(double[:, ::1] P, double[:, ::1] Q,
              const long[::1] users, const long[::1] pos, const long[::1] neg,
              double lr, double reg, double eps_adv, double adv_weight,
              double[:, ::1] norms=None):
    """Run one SGD pass over the given triples in place; returns the summed pairwise loss."""
    cdef Py_ssize_t n = users.shape[0]
    cdef Py_ssize_t d = P.shape[1]
    cdef Py_ssize_t t, f
    cdef long u, i, j
    cdef double x, s, xa, sa, gu, gi, gj, nu, ni, nj, total = 0.0
    cdef double pu, qi, qj, dpu, dqi, dqj, du2, di2, dj2
    cdef bint adv = adv_weight != 0.0
    cdef bint record = norms is not None
    with nogil:
        for t in range(n):
            u = users[t]
            i = pos[t]
            j = neg[t]
            x = 0.0
            for f in range(d):
                x = x + P[u, f] * (Q[i, f] - Q[j, f])
            s = _sigmoid(-x)
            total = total + _softplus(-x)
            if adv:
                # gradient of the pairwise loss: -s*(qi-qj), -s*pu, +s*pu
                nu = 0.0
                ni = 0.0
                for f in range(d):
                    gu = -s * (Q[i, f] - Q[j, f])
                    gi = -s * P[u, f]
                    nu = nu + gu * gu
                    ni = ni + gi * gi
                nu = sqrt(nu)
                ni = sqrt(ni)
                nj = ni
                xa = 0.0
                du2 = 0.0
                di2 = 0.0
                dj2 = 0.0
                for f in range(d):
                    dpu = 0.0
                    dqi = 0.0
                    dqj = 0.0
                    if nu > 0:
                        dpu = eps_adv * (-s * (Q[i, f] - Q[j, f])) / nu
                    if ni > 0:
                        dqi = eps_adv * (-s * P[u, f]) / ni
                        dqj = eps_adv * (s * P[u, f]) / nj
                    du2 = du2 + dpu * dpu
                    di2 = di2 + dqi * dqi
                    dj2 = dj2 + dqj * dqj
                    xa = xa + (P[u, f] + dpu) * ((Q[i, f] + dqi) - (Q[j, f] + dqj))
                sa = _sigmoid(-xa)
                total = total + adv_weight * _softplus(-xa)
                if record:
                    norms[t, 0] = sqrt(du2)
                    norms[t, 1] = sqrt(di2)
                    norms[t, 2] = sqrt(dj2)
            for f in range(d):
                pu = P[u, f]
                qi = Q[i, f]
                qj = Q[j, f]
                dpu = -s * (qi - qj) + reg * pu
                dqi = -s * pu + reg * qi
                dqj = s * pu + reg * qj
                if adv:
                    gu = pu
                    gi = qi
                    gj = qj
                    if nu > 0:
                        gu = gu + eps_adv * (-s * (qi - qj)) / nu
                    if ni > 0:
                        gi = gi + eps_adv * (-s * pu) / ni
                        gj = gj + eps_adv * (s * pu) / nj
                    dpu = dpu + adv_weight * (-sa * (gi - gj))
                    dqi = dqi + adv_weight * (-sa * gu)
                    dqj = dqj + adv_weight * (sa * gu)
                P[u, f] = pu - lr * dpu
                Q[i, f] = qi - lr * dqi
                Q[j, f] = qj - lr * dqj
    return total
