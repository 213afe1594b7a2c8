"""Pure-numpy implementations of the compiled kernels in ``_kernels.pyx``."""

import math

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import erfc

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def misclass_terms(absdev, var):
    """Misclassification probability and ``dp/dvar`` for arrays of nodes."""
    absdev = np.asarray(absdev, dtype=float)
    var = np.asarray(var, dtype=float)
    p = np.where(absdev > 0, 0.0, 0.5)
    dp = np.zeros_like(var)
    ok = (var > 0) & (absdev > 0)
    t = absdev[ok] / np.sqrt(var[ok])
    p[ok] = 0.5 * erfc(t * _INV_SQRT2)
    dp[ok] = _INV_SQRT2PI * np.exp(-0.5 * t * t) * t / (2.0 * var[ok])
    return p, dp


def bcm_cost_grad(axis, absdev, prec_d, R, a_chol, sigma2, ell, want_grad=True):
    """Summed misclassification probability under the committee-machine variance.

    Parameters
    ----------
    axis : (n,) array
        Grid coordinates along each axis; the ``G = n*n`` nodes are visited
        row-major with x varying fastest.
    absdev : (G,) array
        ``|mu(x | D) - gamma|`` at the nodes.
    prec_d : (G,) array
        ``1/var(x | D) - 1/sigma2``; ``inf`` where the data variance is zero.
    R : (N, 2) array
        Look-ahead waypoints.
    a_chol : (N, N) array
        Lower Cholesky factor of ``k(R, R)`` plus the look-ahead noise diagonal.

    Returns
    -------
    value : float
    grad : (N, 2) array or None
    """
    R = np.asarray(R, dtype=float)
    il2 = 1.0 / (ell * ell)
    n = len(axis)
    # the SE kernel factorises over the two axes of a tensor grid
    ex = np.exp(-0.5 * il2 * (axis[None, :] - R[:, 0:1]) ** 2)
    ey = np.exp(-0.5 * il2 * (axis[None, :] - R[:, 1:2]) ** 2)
    B = (sigma2 * ey[:, :, None] * ex[:, None, :]).reshape(len(R), n * n)
    C = cho_solve((a_chol, True), B, check_finite=False)
    var_r = sigma2 - np.einsum("ij,ij->j", B, C)
    pos = var_r > 0
    with np.errstate(divide="ignore"):
        prec = prec_d + np.where(pos, 1.0 / np.where(pos, var_r, 1.0), np.inf)
        var = np.where(np.isfinite(prec), 1.0 / prec, 0.0)
    p, dp = misclass_terms(absdev, var)
    value = float(p.sum())
    if not want_grad:
        return value, None
    # chain rule through the precision sum: dvar/dvar_r = (var/var_r)^2
    w = np.zeros_like(var)
    m = pos & (dp > 0)
    w[m] = dp[m] * (var[m] / var_r[m]) ** 2
    CW = C * w
    S = CW * B
    S3 = S.reshape(len(R), n, n)
    srow = S3.sum(axis=1)
    scol = S3.sum(axis=2)
    ssum = srow.sum(axis=1)
    g = np.empty_like(R)
    g[:, 0] = srow @ axis - ssum * R[:, 0]
    g[:, 1] = scol @ axis - ssum * R[:, 1]
    M = CW @ C.T
    Kr = sigma2 * np.exp(-0.5 * il2 * ((R[:, None, :] - R[None, :, :]) ** 2).sum(-1))
    H = Kr * M
    g[:, 0] += H.sum(axis=1) * R[:, 0] - H @ R[:, 0]
    g[:, 1] += H.sum(axis=1) * R[:, 1] - H @ R[:, 1]
    return value, -2.0 * il2 * g
