"""Pure numpy implementation of the MNL evaluation kernel.

Rows are processed in fixed-size chunks, in batch order, so results are
deterministic for a given batch.
"""
import numpy as np

NAME = "python"
CHUNK = 4096


def evaluate(theta, data, choices, avail, term_param, term_alt, term_col, indices, level):
    """Return ``(value, gradient, hessian, bad_row)``.

    ``level`` is 0 (value), 1 (+gradient) or 2 (+hessian). ``bad_row`` is -1
    on success, otherwise the first offending row index and the other outputs
    are meaningless.
    """
    K = theta.shape[0]
    J = avail.shape[1]
    T = term_param.shape[0]
    const = term_col < 0
    varying = ~const
    cols = term_col[varying]
    coef = theta[term_param]
    # T x J indicator: which alternative each term feeds
    alt_onehot = np.zeros((T, J))
    alt_onehot[np.arange(T), term_alt] = 1.0
    if level >= 2:
        # T x K indicator: which parameter each term multiplies
        par_onehot = np.zeros((T, K))
        par_onehot[np.arange(T), term_param] = 1.0
        alt_terms = [np.flatnonzero(term_alt == j) for j in range(J)]

    value = 0.0
    grad = np.zeros(K) if level >= 1 else None
    hess = np.zeros((K, K)) if level >= 2 else None
    for start in range(0, indices.shape[0], CHUNK):
        rows = indices[start:start + CHUNK]
        m = rows.shape[0]
        z = np.ones((m, T))
        z[:, varying] = data[rows][:, cols]
        V = (z * coef) @ alt_onehot
        av = avail[rows].astype(bool)
        finite = np.isfinite(V).all(axis=1)
        if not finite.all():
            return 0.0, None, None, int(rows[np.flatnonzero(~finite)[0]])
        V = np.where(av, V, -np.inf)
        vmax = V.max(axis=1, keepdims=True)
        E = np.exp(V - vmax)
        S = E.sum(axis=1)
        P = E / S[:, None]
        ch = choices[rows]
        r = np.arange(m)
        zero = P[r, ch] == 0.0
        if zero.any():
            return 0.0, None, None, int(rows[np.flatnonzero(zero)[0]])
        value += float(np.sum(V[r, ch] - vmax[:, 0] - np.log(S)))
        if level == 0:
            continue
        resid = -P
        resid[r, ch] += 1.0
        grad += np.bincount(term_param, weights=np.einsum("mt,mt->t", resid[:, term_alt], z),
                            minlength=K)
        if level < 2:
            continue
        xbar = (P[:, term_alt] * z) @ par_onehot
        blocks = []
        for j in range(J):
            sq = np.sqrt(P[:, j])[:, None]
            D = z[:, alt_terms[j]] @ par_onehot[alt_terms[j]] - xbar
            blocks.append(sq * D)
        W = np.concatenate(blocks, axis=0)
        hess -= W.T @ W
    if hess is not None:
        hess = 0.5 * (hess + hess.T)
    return value, grad, hess, -1
