# Compiled inner loops shared by the three factor models.
#
# Every model is expressed as
#     r_hat = p_u . q_i + offset[c(i)] (+ delta[u, c(i)]) (+ b_u + b_i)
# with offset = [0] for basic MF, [mu] for biased MF and mu^C for CBMF.
import numpy as np
from numba import njit


@njit(cache=True)
def predict_one(u, i, c, P, Q, offset, bu, bi, delta, use_bias, use_delta):
    s = 0.0
    for k in range(P.shape[1]):
        s += P[u, k] * Q[k, i]
    s += offset[c]
    if use_delta:
        s += delta[u, c]
    if use_bias:
        s += bu[u] + bi[i]
    return s


@njit(cache=True)
def sgd_epoch(users, items, values, cl, P, Q, offset, bu, bi, delta,
              lam, beta, gamma, use_bias, use_delta):
    K = P.shape[1]
    for n in range(values.shape[0]):
        u = users[n]
        i = items[n]
        c = cl[i]
        e = values[n] - predict_one(u, i, c, P, Q, offset, bu, bi, delta, use_bias, use_delta)
        for k in range(K):
            puk = P[u, k]
            qki = Q[k, i]
            P[u, k] = puk + lam * (2.0 * e * qki - beta * puk)
            Q[k, i] = qki + lam * (2.0 * e * puk - beta * qki)
        if use_bias:
            bi[i] += lam * (2.0 * e - gamma * bi[i])
            bu[u] += lam * (2.0 * e - gamma * bu[u])
        if use_delta:
            delta[u, c] += lam * (2.0 * e - gamma * delta[u, c])


@njit(cache=True)
def objective(users, items, values, cl, P, Q, offset, bu, bi, delta,
              beta, gamma, use_bias, use_delta):
    K = P.shape[1]
    total = 0.0
    for n in range(values.shape[0]):
        u = users[n]
        i = items[n]
        c = cl[i]
        e = values[n] - predict_one(u, i, c, P, Q, offset, bu, bi, delta, use_bias, use_delta)
        reg = 0.0
        for k in range(K):
            reg += P[u, k] * P[u, k] + Q[k, i] * Q[k, i]
        total += e * e + beta * reg
        if use_bias:
            total += gamma * (bu[u] * bu[u] + bi[i] * bi[i])
        if use_delta:
            total += gamma * delta[u, c] * delta[u, c]
    return total


@njit(cache=True)
def integrate_user_cluster(u, c, items, values, cl, P, Q, offset, bu, bi, delta,
                           lam, beta, gamma, upd_delta, upd_factors, max_iters, min_rel):
    """Repeated SGD passes over one user's ratings in one cluster.

    Returns (passes, residual evaluations). The squared error of a pass is
    accumulated from the residuals computed during that pass.
    """
    K = P.shape[1]
    prev = np.inf
    passes = 0
    evals = 0
    for _ in range(max_iters):
        sse = 0.0
        for n in range(values.shape[0]):
            j = items[n]
            e = values[n] - predict_one(u, j, c, P, Q, offset, bu, bi, delta, True, True)
            evals += 1
            sse += e * e
            if upd_delta:
                delta[u, c] += lam * (2.0 * e - gamma * delta[u, c])
            if upd_factors:
                for k in range(K):
                    P[u, k] += lam * (2.0 * e * Q[k, j] - beta * P[u, k])
        passes += 1
        if prev < np.inf:
            if prev <= 0.0 or (prev - sse) / prev < min_rel:
                break
        prev = sse
    return passes, evals


@njit(cache=True)
def predict_many(us, its, cl, P, Q, offset, bu, bi, delta, use_bias, use_delta):
    out = np.empty(us.shape[0])
    for n in range(us.shape[0]):
        out[n] = predict_one(us[n], its[n], cl[its[n]], P, Q, offset, bu, bi, delta,
                             use_bias, use_delta)
    return out
