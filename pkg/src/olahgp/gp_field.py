"""Exact GP regression over a planar scalar field.

The belief state of the agent is a :class:`GpModel`: a gridded prior mean,
an isotropic squared-exponential kernel and a dataset of noisy point
measurements, stored together with the lower Cholesky factor of
``k(X, X) + Sigma``.  Models are immutable; :func:`add_measurement` extends
the factor by one row in O(n^2) and returns a new model.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

logger = logging.getLogger(__name__)

#: Relative diagonal jitter, multiplied by sigma2.
JITTER = 1e-10
#: A Cholesky pivot (squared) below ``PIVOT_TOL * sigma2`` is a singularity.
PIVOT_TOL = 1e-9
#: Default sensor noise standard deviation (mg m^-3).
DEFAULT_NOISE_SD = 0.05


class SingularityError(LinAlgError):
    """Raised when a covariance matrix is numerically singular."""

    def __init__(self, message: str, indices: tuple[int, ...] = ()):
        super().__init__(message)
        self.indices = indices


class DomainError(ValueError):
    """Raised for query points outside the exploration region."""


@dataclass(frozen=True)
class KernelParams:
    sigma2: float = 1.0
    ell: float = 600.0

    def __post_init__(self):
        if not (self.sigma2 > 0 and self.ell > 0):
            raise ValueError(f"kernel parameters must be positive: {self}")


@dataclass(frozen=True)
class Measurement:
    """A point sample ``(loc, value, noise_sd)``."""

    loc: tuple[float, float]
    value: float
    noise_sd: float = DEFAULT_NOISE_SD

    def __post_init__(self):
        object.__setattr__(self, "loc", (float(self.loc[0]), float(self.loc[1])))
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        if not math.isfinite(self.value):
            raise ValueError("measurement value must be finite")


@dataclass(frozen=True)
class GridDomain:
    """Square region ``[-s/2, s/2]^2`` with an optimization and an evaluation grid.

    Both grids include the boundary; node ``(i, j)`` of an ``n x n`` grid sits at
    ``(axis[j], axis[i])`` so arrays are indexed ``[row=y, col=x]`` with y
    increasing with the row index.
    """

    side_s: float = 4800.0
    res_opt: int = 32
    res_eval: int = 128
    ell_hint: float | None = None

    def __post_init__(self):
        if self.side_s <= 0:
            raise ValueError("side_s must be positive")
        if self.res_opt < 2 or self.res_eval < self.res_opt:
            raise ValueError("need res_opt >= 2 and res_eval >= res_opt")
        if self.ell_hint is not None and self.spacing("opt") > self.ell_hint / 3:
            warnings.warn(
                f"optimization grid spacing {self.spacing('opt'):.1f} m exceeds ell/3",
                stacklevel=2,
            )

    @property
    def half(self) -> float:
        return 0.5 * self.side_s

    def res(self, which: str) -> int:
        if which == "opt":
            return self.res_opt
        if which == "eval":
            return self.res_eval
        raise ValueError(f"unknown grid {which!r}")

    def spacing(self, which: str = "eval") -> float:
        return self.side_s / (self.res(which) - 1)

    def axis(self, which: str = "eval") -> np.ndarray:
        return np.linspace(-self.half, self.half, self.res(which))

    def nodes(self, which: str = "eval") -> np.ndarray:
        """Node coordinates as an ``(res*res, 2)`` array in row-major order."""
        a = self.axis(which)
        xx, yy = np.meshgrid(a, a)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def contains(self, pts, tol: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        lim = self.half * (1 + tol) + tol
        return np.all(np.abs(pts) <= lim, axis=-1)


def bilinear(values: np.ndarray, side_s: float, pts) -> np.ndarray:
    """Bilinearly interpolate a square grid over ``[-s/2, s/2]^2`` at ``pts``."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n = values.shape[0]
    half = 0.5 * side_s
    if np.any(np.abs(pts) > half * (1 + 1e-9) + 1e-9):
        raise DomainError("query point outside the exploration region")
    h = side_s / (n - 1)
    u = np.clip((pts[:, 0] + half) / h, 0.0, n - 1)
    v = np.clip((pts[:, 1] + half) / h, 0.0, n - 1)
    # node coordinates land a rounding error off an integer; snap so nodes read back exactly
    u = np.where(np.abs(u - np.rint(u)) < 1e-9, np.rint(u), u)
    v = np.where(np.abs(v - np.rint(v)) < 1e-9, np.rint(v), v)
    j = np.minimum(np.floor(u).astype(int), n - 2)
    i = np.minimum(np.floor(v).astype(int), n - 2)
    fu = u - j
    fv = v - i
    return (
        values[i, j] * (1 - fu) * (1 - fv)
        + values[i, j + 1] * fu * (1 - fv)
        + values[i + 1, j] * (1 - fu) * fv
        + values[i + 1, j + 1] * fu * fv
    )


def bilinear_grad(values: np.ndarray, side_s: float, pts) -> np.ndarray:
    """Spatial gradient of :func:`bilinear`, shape ``(len(pts), 2)``."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n = values.shape[0]
    half = 0.5 * side_s
    h = side_s / (n - 1)
    u = np.clip((pts[:, 0] + half) / h, 0.0, n - 1)
    v = np.clip((pts[:, 1] + half) / h, 0.0, n - 1)
    j = np.minimum(np.floor(u).astype(int), n - 2)
    i = np.minimum(np.floor(v).astype(int), n - 2)
    fu = u - j
    fv = v - i
    v00, v01 = values[i, j], values[i, j + 1]
    v10, v11 = values[i + 1, j], values[i + 1, j + 1]
    dx = ((v01 - v00) * (1 - fv) + (v11 - v10) * fv) / h
    dy = ((v10 - v00) * (1 - fu) + (v11 - v01) * fu) / h
    return np.column_stack([dx, dy])


@dataclass(frozen=True)
class PriorField:
    grid: GridDomain
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        n = self.grid.res_eval
        if vals.shape != (n, n):
            raise ValueError(f"prior values must be {n}x{n}, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("prior values must be finite")
        if np.any(vals < 0):
            logger.warning("prior field has negative values (min %.3g)", vals.min())
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, grid: GridDomain, c: float) -> "PriorField":
        return cls(grid, np.full((grid.res_eval, grid.res_eval), float(c)))


def prior_mean(prior: PriorField, x) -> np.ndarray | float:
    """Prior mean at ``x``; scalar for a single point, array for ``(n, 2)`` input."""
    arr = np.asarray(x, dtype=float)
    out = bilinear(prior.values, prior.grid.side_s, arr)
    return float(out[0]) if arr.ndim == 1 else out


def se_kernel(a: np.ndarray, b: np.ndarray, p: KernelParams) -> np.ndarray:
    """Cross-covariance matrix ``k(a, b)`` for point sets ``a (n,2)``, ``b (m,2)``."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    d2 = (
        (a[:, None, 0] - b[None, :, 0]) ** 2
        + (a[:, None, 1] - b[None, :, 1]) ** 2
    )
    return p.sigma2 * np.exp(-0.5 * d2 / p.ell**2)


def kernel_eval(x1, x2, p: KernelParams) -> float:
    dx = float(x1[0]) - float(x2[0])
    dy = float(x1[1]) - float(x2[1])
    return p.sigma2 * math.exp(-0.5 * (dx * dx + dy * dy) / p.ell**2)


@dataclass(frozen=True)
class GpModel:
    prior: PriorField
    kernel: KernelParams
    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def data(self) -> list[Measurement]:
        return [
            Measurement((x[0], x[1]), float(v), float(s))
            for x, v, s in zip(self.X, self.y, self.w)
        ]

    def __repr__(self) -> str:
        return f"GpModel(n={self.n}, kernel={self.kernel})"


def _freeze(*arrays):
    for a in arrays:
        a.flags.writeable = False


def _build(prior, kernel, X, y, w, L) -> GpModel:
    resid = y - (prior_mean(prior, X) if len(y) else np.zeros(0))
    if len(y):
        alpha = solve_triangular(L, resid, lower=True)
        alpha = solve_triangular(L, alpha, lower=True, trans="T")
    else:
        alpha = np.zeros(0)
    _freeze(X, y, w, L, alpha)
    return GpModel(prior, kernel, X, y, w, L, alpha)


def _data_arrays(data: Sequence[Measurement]):
    X = np.array([m.loc for m in data], dtype=float).reshape(-1, 2)
    y = np.array([m.value for m in data], dtype=float)
    w = np.array([m.noise_sd for m in data], dtype=float)
    return X, y, w


def _raise_singular(X: np.ndarray, i: int, pivot: float):
    j = None
    if i > 0:
        j = int(np.argmin(np.sum((X[:i] - X[i]) ** 2, axis=1)))
    idx = (i,) if j is None else (j, i)
    raise SingularityError(
        f"covariance singular at measurement {i}"
        + (f" (nearly coincides with {j})" if j is not None else "")
        + f": pivot {pivot:.3g}",
        idx,
    )


def noisy_gram(X: np.ndarray, w: np.ndarray, kernel: KernelParams) -> np.ndarray:
    K = se_kernel(X, X, kernel)
    K[np.diag_indices_from(K)] += w**2 + JITTER * kernel.sigma2
    return K


def checked_cholesky(K: np.ndarray, sigma2: float, X: np.ndarray | None = None) -> np.ndarray:
    """Lower Cholesky factor; raises :class:`SingularityError` on a small pivot."""
    tol = PIVOT_TOL * sigma2
    try:
        L = cholesky(K, lower=True, check_finite=False)
    except LinAlgError:
        L = None
    if L is not None:
        piv = np.diag(L) ** 2
        bad = np.flatnonzero(piv < tol)
        if bad.size == 0:
            return L
    # locate the first failing pivot by sequential elimination
    n = K.shape[0]
    L = np.zeros_like(K)
    for i in range(n):
        l = solve_triangular(L[:i, :i], K[:i, i], lower=True) if i else np.zeros(0)
        piv = K[i, i] - l @ l
        if piv < tol:
            _raise_singular(X if X is not None else np.zeros((n, 2)), i, piv)
        L[i, :i] = l
        L[i, i] = math.sqrt(piv)
    return L


def fit(prior: PriorField, kernel: KernelParams, data: Sequence[Measurement]) -> GpModel:
    """Condition the prior on ``data`` with a batch factorization."""
    X, y, w = _data_arrays(data)
    if len(y):
        L = checked_cholesky(noisy_gram(X, w, kernel), kernel.sigma2, X)
    else:
        L = np.zeros((0, 0))
    return _build(prior, kernel, X, y, w, L)


def empty_model(prior: PriorField, kernel: KernelParams) -> GpModel:
    return fit(prior, kernel, [])


def add_measurement(model: GpModel, m: Measurement) -> GpModel:
    """Append one measurement with an O(n^2) extension of the Cholesky factor."""
    k = model.kernel
    x = np.asarray(m.loc, dtype=float)
    n = model.n
    kx = se_kernel(model.X, x[None, :], k)[:, 0] if n else np.zeros(0)
    l = solve_triangular(model.chol, kx, lower=True, check_finite=False) if n else kx
    piv = k.sigma2 * (1 + JITTER) + m.noise_sd**2 - l @ l
    X = np.vstack([model.X, x[None, :]])
    if piv < PIVOT_TOL * k.sigma2:
        _raise_singular(X, n, piv)
    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = model.chol
    L[n, :n] = l
    L[n, n] = math.sqrt(piv)
    y = np.append(model.y, m.value)
    w = np.append(model.w, m.noise_sd)
    return _build(model.prior, k, X, y, w, L)


def posterior_at(model: GpModel, pts) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at an ``(m, 2)`` array of points."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    mean = np.asarray(prior_mean(model.prior, pts), dtype=float).reshape(-1)
    var = np.full(len(pts), model.kernel.sigma2)
    if model.n:
        Kxs = se_kernel(model.X, pts, model.kernel)
        mean = mean + Kxs.T @ model.alpha
        V = solve_triangular(model.chol, Kxs, lower=True, check_finite=False)
        var = var - np.einsum("ij,ij->j", V, V)
    return mean, np.clip(var, 0.0, model.kernel.sigma2)


def posterior(model: GpModel, x) -> tuple[float, float]:
    mean, var = posterior_at(model, np.asarray(x, dtype=float)[None, :])
    return float(mean[0]), float(var[0])


def posterior_field(model: GpModel, grid: GridDomain | None = None, which: str = "eval"):
    """Posterior mean and variance on a grid, each shaped ``(res, res)``."""
    grid = grid or model.prior.grid
    n = grid.res(which)
    if which == "eval" and grid == model.prior.grid:
        mean = np.array(model.prior.values)
        pts = grid.nodes("eval")
        var = np.full(n * n, model.kernel.sigma2)
        if model.n:
            Kxs = se_kernel(model.X, pts, model.kernel)
            mean = mean + (Kxs.T @ model.alpha).reshape(n, n)
            V = solve_triangular(model.chol, Kxs, lower=True, check_finite=False)
            var = np.clip(var - np.einsum("ij,ij->j", V, V), 0.0, model.kernel.sigma2)
        return mean, var.reshape(n, n)
    mean, var = posterior_at(model, grid.nodes(which))
    return mean.reshape(n, n), var.reshape(n, n)


def _phantom_model(model: GpModel, R, noise_sd: float) -> GpModel:
    R = np.atleast_2d(np.asarray(R, dtype=float)).reshape(-1, 2)
    X = np.vstack([model.X, R])
    w = np.concatenate([model.w, np.full(len(R), noise_sd)])
    K = noisy_gram(X, w, model.kernel)
    L = checked_cholesky(K, model.kernel.sigma2, X)
    return L, X


def lookahead_var_exact(model: GpModel, R, x, noise_sd: float = DEFAULT_NOISE_SD):
    """Variance at ``x`` after also observing the waypoints ``R`` (values unneeded).

    ``x`` may be one point or an ``(m, 2)`` array; the return shape follows.
    """
    R = np.asarray(R, dtype=float).reshape(-1, 2)
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if len(R) == 0:
        var = posterior_at(model, pts)[1]
    else:
        L, X = _phantom_model(model, R, noise_sd)
        V = solve_triangular(L, se_kernel(X, pts, model.kernel), lower=True)
        var = np.clip(model.kernel.sigma2 - np.einsum("ij,ij->j", V, V), 0.0, None)
    return float(var[0]) if single else var


def bcm_combine(var_d, var_r, sigma2: float):
    """Precision-additive combination of two independent posterior variances."""
    var_d = np.asarray(var_d, dtype=float)
    var_r = np.asarray(var_r, dtype=float)
    with np.errstate(divide="ignore"):
        prec = 1.0 / var_d + 1.0 / var_r - 1.0 / sigma2
        out = np.where((var_d <= 0) | (var_r <= 0), 0.0, 1.0 / prec)
    return out


def lookahead_var_bcm(model: GpModel, R, x, noise_sd: float = DEFAULT_NOISE_SD):
    """Committee-machine approximation of :func:`lookahead_var_exact`."""
    R = np.asarray(R, dtype=float).reshape(-1, 2)
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    var_d = posterior_at(model, pts)[1]
    if len(R) == 0:
        var = var_d
    else:
        r_only = empty_model(model.prior, model.kernel)
        var_r = lookahead_var_exact(r_only, R, pts, noise_sd)
        if model.n == 0:
            var = var_r
        else:
            var = bcm_combine(var_d, var_r, model.kernel.sigma2)
    return float(var[0]) if single else var


def compress_prior(raw: Sequence[Measurement], grid: GridDomain, chunk: int = 2048) -> PriorField:
    """Nearest-sample compression of scattered data onto the evaluation grid."""
    if len(raw) == 0:
        raise ValueError("compress_prior needs at least one sample")
    X, y, _ = _data_arrays(raw)
    nodes = grid.nodes("eval")
    idx = np.empty(len(nodes), dtype=int)
    dist2 = np.empty(len(nodes))
    for s in range(0, len(nodes), chunk):
        blk = nodes[s : s + chunk]
        d2 = (blk[:, None, 0] - X[None, :, 0]) ** 2 + (blk[:, None, 1] - X[None, :, 1]) ** 2
        # argmin keeps the first (lowest index) minimiser
        idx[s : s + chunk] = np.argmin(d2, axis=1)
        dist2[s : s + chunk] = d2[np.arange(len(blk)), idx[s : s + chunk]]
    diag2 = 2 * grid.spacing("eval") ** 2
    holes = int(np.sum(dist2 > diag2 * (1 + 1e-12)))
    if holes:
        logger.warning("compress_prior: %d grid nodes have no sample within one cell diagonal", holes)
    n = grid.res_eval
    return PriorField(grid, y[idx].reshape(n, n))


def fold_into_prior(model: GpModel) -> GpModel:
    """Absorb the data into the prior mean and drop the dataset.

    The posterior mean is kept on the evaluation grid; the variance resets to
    the prior level, so uncertainty information is intentionally discarded.
    """
    if model.n == 0:
        return model
    mean, _ = posterior_field(model)
    return empty_model(PriorField(model.prior.grid, mean), model.kernel)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for ``seed`` and an optional sub-stream key."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def _chol_1d(K: np.ndarray, sigma2: float) -> np.ndarray:
    n = K.shape[0]
    for jit in (JITTER, 1e-8):
        try:
            return cholesky(K + jit * sigma2 * np.eye(n), lower=True)
        except LinAlgError:
            continue
    raise SingularityError("grid covariance factorization failed after jitter retry")


def sample_correlated_field(kernel: KernelParams, grid: GridDomain, seed, which: str = "eval") -> np.ndarray:
    """Draw a zero-mean GP sample on a grid.

    The SE kernel separates over the two axes on a tensor grid, so the sample
    is ``sigma * Lx Z Ly^T`` with 1-D Cholesky factors and ``Z`` i.i.d. normal.
    ``seed`` is anything accepted by :func:`numpy.random.default_rng`.
    """
    a = grid.axis(which)
    unit = KernelParams(1.0, kernel.ell)
    L1 = _chol_1d(se_kernel(a[:, None] * [1, 0], a[:, None] * [1, 0], unit), 1.0)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    Z = rng.standard_normal((len(a), len(a)))
    return math.sqrt(kernel.sigma2) * (L1 @ Z @ L1.T)
