"""Pure-Python per-triple SGD for BPR / APR, used when the compiled kernels are unavailable.

Operation order matches ``_kernels.pyx`` so both backends agree to rounding.
"""
import math


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _softplus(x):
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def sgd_epoch(P, Q, users, pos, neg, lr, reg, eps_adv, adv_weight, norms=None):
    """Run one SGD pass over the given triples in place; returns the summed objective (pairwise loss plus weighted adversarial loss)."""
    d = P.shape[1]
    adv = adv_weight != 0.0
    total = 0.0
    rng_d = range(d)
    for t, (u, i, j) in enumerate(zip(users.tolist(), pos.tolist(), neg.tolist())):
        pu_v, qi_v, qj_v = P[u].tolist(), Q[i].tolist(), Q[j].tolist()
        x = 0.0
        for f in rng_d:
            x = x + pu_v[f] * (qi_v[f] - qj_v[f])
        s = _sigmoid(-x)
        total = total + _softplus(-x)
        if adv:
            nu = ni = 0.0
            for f in rng_d:
                gu = -s * (qi_v[f] - qj_v[f])
                gi = -s * pu_v[f]
                nu = nu + gu * gu
                ni = ni + gi * gi
            nu = math.sqrt(nu)
            ni = math.sqrt(ni)
            nj = ni
            xa = du2 = di2 = dj2 = 0.0
            for f in rng_d:
                dpu = dqi = dqj = 0.0
                if nu > 0:
                    dpu = eps_adv * (-s * (qi_v[f] - qj_v[f])) / nu
                if ni > 0:
                    dqi = eps_adv * (-s * pu_v[f]) / ni
                    dqj = eps_adv * (s * pu_v[f]) / nj
                du2 = du2 + dpu * dpu
                di2 = di2 + dqi * dqi
                dj2 = dj2 + dqj * dqj
                xa = xa + (pu_v[f] + dpu) * ((qi_v[f] + dqi) - (qj_v[f] + dqj))
            sa = _sigmoid(-xa)
            total = total + adv_weight * _softplus(-xa)
            if norms is not None:
                norms[t, 0] = math.sqrt(du2)
                norms[t, 1] = math.sqrt(di2)
                norms[t, 2] = math.sqrt(dj2)
        new_p, new_qi, new_qj = [0.0] * d, [0.0] * d, [0.0] * d
        for f in rng_d:
            pu, qi, qj = pu_v[f], qi_v[f], qj_v[f]
            dpu = -s * (qi - qj) + reg * pu
            dqi = -s * pu + reg * qi
            dqj = s * pu + reg * qj
            if adv:
                gu, gi, gj = pu, qi, qj
                if nu > 0:
                    gu = gu + eps_adv * (-s * (qi - qj)) / nu
                if ni > 0:
                    gi = gi + eps_adv * (-s * pu) / ni
                    gj = gj + eps_adv * (s * pu) / nj
                dpu = dpu + adv_weight * (-sa * (gi - gj))
                dqi = dqi + adv_weight * (-sa * gu)
                dqj = dqj + adv_weight * (sa * gu)
            new_p[f] = pu - lr * dpu
            new_qi[f] = qi - lr * dqi
            new_qj[f] = qj - lr * dqj
        P[u] = new_p
        Q[i] = new_qi
        Q[j] = new_qj
    return total
