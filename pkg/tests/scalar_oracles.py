"""Plain-loop reference implementations used as oracles. No numpy linear algebra."""

import math


def posteriors(X, weights, means, sigmas):
    n, N, d = len(X), len(weights), len(means[0])
    out = []
    for t in range(n):
        logs = []
        for i in range(N):
            s = math.log(weights[i])
            for j in range(d):
                z = (X[t][j] - means[i][j]) / sigmas[i][j]
                s += -0.5 * z * z - math.log(sigmas[i][j]) - 0.5 * math.log(2 * math.pi)
            logs.append(s)
        top = max(logs)
        e = [math.exp(v - top) for v in logs]
        tot = sum(e)
        out.append([v / tot for v in e])
    return out


def fisher(X, weights, means, sigmas):
    """Mean and variance gradients, each scaled by 1 / (n sqrt(w_i))."""
    n, N, d = len(X), len(weights), len(means[0])
    gamma = posteriors(X, weights, means, sigmas)
    gm = [[0.0] * d for _ in range(N)]
    gv = [[0.0] * d for _ in range(N)]
    for i in range(N):
        scale = 1.0 / (n * math.sqrt(weights[i]))
        for j in range(d):
            sm = sv = 0.0
            for t in range(n):
                z = (X[t][j] - means[i][j]) / sigmas[i][j]
                sm += gamma[t][i] * z
                sv += gamma[t][i] * (z * z - 1.0)
            gm[i][j] = sm * scale
            gv[i][j] = sv * scale
    return gamma, gm, gv


def spread(row):
    m = sum(row) / len(row)
    return math.sqrt(sum((v - m) ** 2 for v in row) / len(row))
