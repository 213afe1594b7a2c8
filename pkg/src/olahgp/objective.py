"""Planner cost: field-summed misclassification probability plus path regularizers.

The look-ahead term sums ``Phi(-|mu(x|D) - gamma| / sigma(x|D, R))`` over the
optimization grid.  The mean uses the current data only, since measuring at
``R`` leaves the expected posterior mean unchanged; the variance is either the
exact joint conditional or the committee-machine combination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.special import erfc

from . import kernels
from .gp_field import (
    DEFAULT_NOISE_SD,
    JITTER,
    GpModel,
    GridDomain,
    SingularityError,
    bilinear,
    bilinear_grad,
    posterior_field,
    se_kernel,
)

VARIANCE_MODES = ("exact", "bcm")


@dataclass(frozen=True)
class CostWeights:
    gamma: float
    lambda1: float = 1e-3
    lambda2: float = 1e-8
    lambda3: float = 1e-5
    leaky_slope: float = 0.8
    eps_current: float = 0.2
    gate_tau: float = 0.02
    # "literal": gate on the segment start, weight by the segment end
    current_index: str = "literal"

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("regularization weights must be non-negative")
        if not 0 <= self.leaky_slope <= 1:
            raise ValueError("leaky_slope must lie in [0, 1]")
        if self.eps_current < 0 or self.gate_tau <= 0:
            raise ValueError("eps_current must be >= 0 and gate_tau > 0")
        if self.current_index not in ("literal", "destination"):
            raise ValueError("current_index must be 'literal' or 'destination'")


@dataclass(frozen=True)
class EnvForcing:
    """Gridded surface current (east, north components) and a mean wind vector."""

    current_east: np.ndarray
    current_north: np.ndarray
    side_s: float
    wind: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        e = np.asarray(self.current_east, dtype=float)
        n = np.asarray(self.current_north, dtype=float)
        if e.shape != n.shape or e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError("current components must be square grids of equal size")
        if not (np.all(np.isfinite(e)) and np.all(np.isfinite(n))):
            raise ValueError("current field must be finite")
        object.__setattr__(self, "current_east", e)
        object.__setattr__(self, "current_north", n)
        object.__setattr__(self, "wind", (float(self.wind[0]), float(self.wind[1])))

    @classmethod
    def uniform(cls, u, side_s: float, wind=(0.0, 0.0), res: int = 2) -> "EnvForcing":
        return cls(np.full((res, res), float(u[0])), np.full((res, res), float(u[1])), side_s, wind)

    def current(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.column_stack(
            [bilinear(self.current_east, self.side_s, pts), bilinear(self.current_north, self.side_s, pts)]
        )

    def current_jacobian(self, pts) -> np.ndarray:
        """``J[i, c, d] = d u_c / d x_d`` at each point."""
        pts = np.atleast_2d(pts)
        return np.stack(
            [bilinear_grad(self.current_east, self.side_s, pts), bilinear_grad(self.current_north, self.side_s, pts)],
            axis=1,
        )


def misclass_prob(mean, sd, gamma):
    """Probability that thresholding the posterior mean at ``gamma`` is wrong."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    dev = np.abs(mean - gamma)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = 0.5 * erfc(dev / sd / math.sqrt(2.0))
    p = np.where(sd > 0, p, np.where(dev > 0, 0.0, 0.5))
    return float(p) if p.ndim == 0 else p


def _path(r0, R) -> np.ndarray:
    return np.vstack([np.asarray(r0, dtype=float).reshape(1, 2), np.asarray(R, dtype=float).reshape(-1, 2)])


def path_length(r0, R) -> float:
    P = _path(r0, R)
    return float(np.sum(np.linalg.norm(np.diff(P, axis=0), axis=1)))


def path_length_grad(r0, R) -> tuple[float, np.ndarray]:
    P = _path(r0, R)
    d = np.diff(P, axis=0)
    nrm = np.linalg.norm(d, axis=1)
    u = np.divide(d, nrm[:, None], out=np.zeros_like(d), where=nrm[:, None] > 0)
    g = u.copy()
    g[:-1] -= u[1:]
    return float(nrm.sum()), g


def _gate(m, eps, tau, smooth):
    if not smooth:
        return (m >= eps).astype(float), np.zeros_like(m)
    z = np.clip((m - eps) / tau, -500, 500)
    s = 1.0 / (1.0 + np.exp(-z))
    return s, s * (1 - s) / tau


def current_cost_grad(r0, R, forcing: EnvForcing, weights: CostWeights, smooth: bool = False):
    """Current penalty and its gradient w.r.t. ``R``.

    ``smooth`` replaces the hard magnitude gate by a logistic of width
    ``weights.gate_tau``; reported values use the hard gate.
    """
    P = _path(r0, R)
    N = len(P) - 1
    u = forcing.current(P)
    J = forcing.current_jacobian(P)
    m = np.linalg.norm(u, axis=1)
    dm = np.einsum("ic,icd->id", u, J) / np.where(m > 0, m, 1.0)[:, None]
    dm[m == 0] = 0.0
    d = np.diff(P, axis=0)
    d2 = np.sum(d * d, axis=1)
    gate, dgate = _gate(m, weights.eps_current, weights.gate_tau, smooth)
    gP = np.zeros_like(P)
    if weights.current_index == "literal":
        c = gate[:-1] * m[1:] * d2
        gP[:-1] += (dgate[:-1] * m[1:] * d2)[:, None] * dm[:-1]
        gP[1:] += (gate[:-1] * d2)[:, None] * dm[1:]
        coef = gate[:-1] * m[1:]
    else:
        c = gate[1:] * m[1:] * d2
        gP[1:] += ((dgate[1:] * m[1:] + gate[1:]) * d2)[:, None] * dm[1:]
        coef = gate[1:] * m[1:]
    gP[1:] += 2 * coef[:, None] * d
    gP[:-1] -= 2 * coef[:, None] * d
    assert len(c) == N
    return float(c.sum()), gP[1:]


def current_cost(r0, R, forcing: EnvForcing, eps: float, current_index: str = "literal") -> float:
    w = CostWeights(gamma=0.0, eps_current=eps, current_index=current_index)
    return current_cost_grad(r0, R, forcing, w, smooth=False)[0]


def wind_cost_grad(r0, R, W, slope: float):
    P = _path(r0, R)
    d = np.diff(P, axis=0)
    z = d @ np.asarray(W, dtype=float)
    s = np.where(z >= 0, 1.0, slope)
    gP = np.zeros_like(P)
    gP[1:] -= s[:, None] * np.asarray(W, dtype=float)
    gP[:-1] += s[:, None] * np.asarray(W, dtype=float)
    return float(-np.sum(s * z)), gP[1:]


def wind_cost(r0, R, W, slope: float) -> float:
    return wind_cost_grad(r0, R, W, slope)[0]


class Objective:
    """Precomputed cost of one planning problem; call with waypoints ``R``.

    Construction computes the posterior of ``model`` on the optimization grid
    (the "setup" phase); each evaluation then costs O(N^2 RES^2) in ``bcm``
    mode and O((n + N) N RES^2) in ``exact`` mode.
    """

    def __init__(
        self,
        model: GpModel,
        r0,
        weights: CostWeights,
        grid: GridDomain | None = None,
        forcing: EnvForcing | None = None,
        variance_mode: str = "bcm",
        lookahead_noise_sd: float = DEFAULT_NOISE_SD,
        which: str = "opt",
    ):
        if variance_mode not in VARIANCE_MODES:
            raise ValueError(f"variance_mode must be one of {VARIANCE_MODES}")
        self.model = model
        self.kernel = model.kernel
        self.grid = grid or model.prior.grid
        self.which = which
        self.r0 = np.asarray(r0, dtype=float).reshape(2)
        self.weights = weights
        self.forcing = forcing
        self.variance_mode = variance_mode
        self.noise_var = lookahead_noise_sd**2 + JITTER * self.kernel.sigma2
        self.axis = np.ascontiguousarray(self.grid.axis(which))
        self.nodes = self.grid.nodes(which)
        mean, var = posterior_field(model, self.grid, which)
        self.mean = mean.ravel()
        self.var_d = var.ravel()
        self.absdev = np.ascontiguousarray(np.abs(self.mean - weights.gamma))
        with np.errstate(divide="ignore"):
            self.prec_d = np.ascontiguousarray(
                np.where(self.var_d > 0, 1.0 / np.where(self.var_d > 0, self.var_d, 1.0), np.inf)
                - 1.0 / self.kernel.sigma2
            )
        if variance_mode == "exact" and model.n:
            self.V = solve_triangular(model.chol, se_kernel(model.X, self.nodes, self.kernel), lower=True)
        self.n_evals = 0

    # -- misclassification term -------------------------------------------------

    def _a_chol(self, R):
        A = se_kernel(R, R, self.kernel)
        A[np.diag_indices_from(A)] += self.noise_var
        try:
            return cholesky(A, lower=True, check_finite=False)
        except LinAlgError as exc:
            raise SingularityError(f"look-ahead covariance singular: {exc}") from None

    def misclass(self, R, want_grad: bool = True):
        R = np.asarray(R, dtype=float).reshape(-1, 2)
        if len(R) == 0:
            p, _ = kernels.misclass_terms(self.absdev, self.var_d)
            return float(p.sum()), np.zeros((0, 2))
        if self.variance_mode == "bcm" or self.model.n == 0:
            return kernels.bcm_cost_grad(
                self.axis, self.absdev, self.prec_d, R, self._a_chol(R),
                self.kernel.sigma2, self.kernel.ell, want_grad,
            )
        return self._exact(R, want_grad)

    def lookahead_var(self, R) -> np.ndarray:
        """Look-ahead variance on the grid nodes for waypoints ``R``."""
        R = np.asarray(R, dtype=float).reshape(-1, 2)
        if len(R) == 0:
            return self.var_d.copy()
        if self.variance_mode == "exact" and self.model.n:
            return self._exact_parts(R)[0]
        B = se_kernel(R, self.nodes, self.kernel)
        C = cho_solve((self._a_chol(R), True), B)
        var_r = self.kernel.sigma2 - np.einsum("ij,ij->j", B, C)
        with np.errstate(divide="ignore"):
            prec = self.prec_d + np.where(var_r > 0, 1.0 / np.where(var_r > 0, var_r, 1.0), np.inf)
            return np.where(np.isfinite(prec), 1.0 / prec, 0.0)

    def _exact_parts(self, R):
        k, m = self.kernel, self.model
        kXR = se_kernel(m.X, R, k)
        U = solve_triangular(m.chol, kXR, lower=True, check_finite=False)
        B = se_kernel(R, self.nodes, k)
        Q = B - U.T @ self.V
        S = se_kernel(R, R, k) - U.T @ U
        S[np.diag_indices_from(S)] += self.noise_var
        try:
            Ls = cholesky(S, lower=True, check_finite=False)
        except LinAlgError as exc:
            raise SingularityError(f"joint look-ahead covariance singular: {exc}") from None
        P = cho_solve((Ls, True), Q, check_finite=False)
        var = np.clip(self.var_d - np.einsum("ij,ij->j", Q, P), 0.0, None)
        return var, kXR, U, B, P

    def _exact(self, R, want_grad):
        k, m = self.kernel, self.model
        var, kXR, U, B, P = self._exact_parts(R)
        p, dp = kernels.misclass_terms(self.absdev, var)
        value = float(p.sum())
        if not want_grad:
            return value, None
        il2 = 1.0 / k.ell**2
        PW = P * dp
        S = PW * B
        g = S @ self.nodes - S.sum(axis=1)[:, None] * R
        H = se_kernel(R, R, k) * (PW @ P.T)
        g += H.sum(axis=1)[:, None] * R - H @ R
        g *= -2.0 * il2
        E = (self.V - U @ P) @ PW.T
        F = solve_triangular(m.chol, E, lower=True, trans="T", check_finite=False)
        KF = kXR * F
        g[:, 0] += 2.0 * il2 * (m.X[:, 0] @ KF - KF.sum(axis=0) * R[:, 0])
        g[:, 1] += 2.0 * il2 * (m.X[:, 1] @ KF - KF.sum(axis=0) * R[:, 1])
        return value, g

    # -- full cost ----------------------------------------------------------------

    def value_and_grad(self, R, smooth: bool = True):
        """Total cost and gradient; ``smooth`` selects the logistic current gate."""
        R = np.asarray(R, dtype=float).reshape(-1, 2)
        self.n_evals += 1
        w = self.weights
        val, g = self.misclass(R)
        g = np.array(g, dtype=float)
        if w.lambda1:
            pl, gl = path_length_grad(self.r0, R)
            val += w.lambda1 * pl
            g += w.lambda1 * gl
        if self.forcing is not None:
            if w.lambda2:
                c, gc = current_cost_grad(self.r0, R, self.forcing, w, smooth=smooth)
                val += w.lambda2 * c
                g += w.lambda2 * gc
            if w.lambda3:
                c, gw = wind_cost_grad(self.r0, R, self.forcing.wind, w.leaky_slope)
                val += w.lambda3 * c
                g += w.lambda3 * gw
        return val, g

    def value(self, R, smooth: bool = False) -> float:
        R = np.asarray(R, dtype=float).reshape(-1, 2)
        w = self.weights
        val = self.misclass(R, want_grad=False)[0]
        if w.lambda1:
            val += w.lambda1 * path_length(self.r0, R)
        if self.forcing is not None:
            if w.lambda2:
                val += w.lambda2 * current_cost_grad(self.r0, R, self.forcing, w, smooth=smooth)[0]
            if w.lambda3:
                val += w.lambda3 * wind_cost(self.r0, R, self.forcing.wind, w.leaky_slope)
        return val


def total_misclass(model: GpModel, R, grid: GridDomain | None, weights: CostWeights,
                   variance_mode: str = "bcm", lookahead_noise_sd: float = DEFAULT_NOISE_SD,
                   which: str = "opt") -> float:
    obj = Objective(model, (0.0, 0.0), weights, grid, None, variance_mode, lookahead_noise_sd, which)
    return obj.misclass(R, want_grad=False)[0]


def objective_value_and_grad(model: GpModel, r0, R, grid: GridDomain | None, weights: CostWeights,
                             forcing: EnvForcing | None = None, variance_mode: str = "bcm",
                             lookahead_noise_sd: float = DEFAULT_NOISE_SD):
    """Cost and gradient w.r.t. the flattened waypoints ``R``."""
    obj = Objective(model, r0, weights, grid, forcing, variance_mode, lookahead_noise_sd)
    val, g = obj.value_and_grad(R)
    return val, g.ravel()
