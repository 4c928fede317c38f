"""Dense reference computations that share no code with the package."""

import numpy as np


def sym(s):
    s = np.asarray(s, dtype=float)
    return np.stack([np.stack([s[..., 0], s[..., 1]], -1), np.stack([s[..., 1], s[..., 2]], -1)], -2)


def unsym(m):
    return np.stack([m[..., 0, 0], m[..., 0, 1], m[..., 1, 1]], -1)


def grad(g):
    g = np.asarray(g, dtype=float)
    return np.stack([np.stack([g[..., 0], g[..., 1]], -1), np.stack([g[..., 2], g[..., 3]], -1)], -2)


def expm_series(m, squarings=10, terms=30):
    """Scaling and squaring with a plain Taylor series."""
    a = np.asarray(m, dtype=float) / 2.0**squarings
    out = np.eye(a.shape[-1])
    term = np.eye(a.shape[-1])
    for k in range(1, terms):
        term = term @ a / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def relaxation_A(kind, A, a_max_sq=100.0, alpha=0.0, eps_ptt=0.0):
    """Lab-frame relaxation f(A) in dA/dt = G A + A G^T - f(A)/We."""
    eye = np.eye(2)
    tr = np.trace(A, axis1=-2, axis2=-1)[..., None, None]
    if kind == "oldroyd-b":
        return A - eye
    if kind == "giesekus":
        return (A - eye) + alpha * (A - eye) @ (A - eye)
    if kind == "ptt-exp":
        return np.exp(eps_ptt * (tr - 2.0)) * (A - eye)
    if kind == "fene-cr":
        return (A - eye) / (1.0 - tr / a_max_sq)
    if kind == "fene-p":
        k0 = 1.0 / (1.0 - 2.0 / a_max_sq)
        return A / (1.0 - tr / a_max_sq) - k0 * eye
    raise ValueError(kind)


def pi_daleckii_krein(s, g, We, kind="oldroyd-b", **model):
    """Ds/Dt for s = log A via the Frechet derivative of the matrix log.

    dA/dt = G A + A G^T - f(A)/We with G[i,j] = dv_i/dx_j, then
    d(log A) = Q [ Mt_ij * (l_i - l_j)/(mu_i - mu_j) ] Q^T in the eigenbasis.
    """
    S = sym(s)
    lam, Q = np.linalg.eigh(S)
    mu = np.exp(lam)
    A = Q @ (mu[..., :, None] * np.swapaxes(Q, -1, -2))
    Gm = grad(g)
    M = Gm @ A + A @ np.swapaxes(Gm, -1, -2) - relaxation_A(kind, A, **model) / We
    Mt = np.swapaxes(Q, -1, -2) @ M @ Q
    li, lj = lam[..., :, None], lam[..., None, :]
    mi, mj = mu[..., :, None], mu[..., None, :]
    close = np.abs(li - lj) < 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        dd = np.where(close, 1.0 / np.sqrt(mi * mj), (li - lj) / (mi - mj))
    P = Q @ (Mt * dd) @ np.swapaxes(Q, -1, -2)
    return unsym(P)
