"""Augmented-Lagrangian solvers for masked low-rank + time-smooth recovery.

The reconstruction objective, in matrix form, is

    data(P_Omega(Y - X)) + lambda1 * ||X||_*  + lambda2/2 * ||D_t(X)||_F^2

where ``D_t`` is the per-channel forward time difference and ``data`` is
either the l1 norm (robust, the default) or half the squared Frobenius norm
(the classic matrix-completion loss).  Splitting ``Y = X + E`` turns this
into an equality-constrained problem handled by an augmented Lagrangian

    L(X, E, Z, mu) = data(P_Omega(E)) + lambda1 ||X||_*
                     + lambda2/2 ||D_t(X)||^2
                     + <Z, Y - X - E> + mu/2 ||Y - X - E||^2

with multipliers Z and a growing penalty mu.  Two subproblem engines:

* ``ipg`` - one singular-value-thresholded gradient step on X and a closed
  form E update per outer iteration, so one thin SVD per iteration.
* ``alt`` - SVD-free: X = U V^T with the nuclear norm replaced by the
  factored surrogate (||U||^2 + ||V||^2) / 2; alternating gradient steps on
  U and V with a backtracking line search, then the same E update.

Both engines update Z <- Z + mu (Y - X - E) and mu <- rho * mu (capped)
every outer iteration and stop when ||Y - X - E||_F / ||Y||_F falls below
the primal tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .tensor_ops import (
    DataMatrix,
    ObservationMask,
    economy_svd,
    nuclear_norm,
    spectral_norm_est,
    svt,
    temporal_diff,
    temporal_laplacian,
)

__all__ = [
    "LOSSES",
    "ALGORITHMS",
    "DivergenceError",
    "SolverConfig",
    "SolverState",
    "Solution",
    "tecromac_objective",
    "augmented_lagrangian",
    "grad_f",
    "ipg_update_x",
    "update_e",
    "update_dual",
    "update_mu",
    "check_convergence",
    "solve_ipg",
    "grad_u",
    "grad_v",
    "solve_alt",
    "solve",
]

LOSSES = ("absolute", "squared")
ALGORITHMS = ("ipg", "alt")

# Backtracking line search: shrink factor and sufficient-decrease constant.
_LS_SHRINK = 0.5
_LS_DECREASE = 1e-4


class DivergenceError(RuntimeError):
    """Iterates became non-finite (typically a too-large step size)."""


@dataclass(frozen=True)
class SolverConfig:
    """Weights, loss/engine selection and the ALM schedule.

    ``mu0=None`` uses 1.25 / sigma_max(Y); the penalty is capped at
    ``mu_max_factor * mu0``.  ``rank`` and ``step_eta`` only apply to the
    factored engine; ``step_eta=None`` enables the backtracking search.
    """

    lambda1: float
    lambda2: float
    loss: str = "absolute"
    algorithm: str = "ipg"
    mu0: float | None = None
    rho: float = 1.1
    mu_max_factor: float = 1e7
    primal_tol: float = 1e-7
    max_outer: int = 500
    inner_tol: float = 1e-4
    max_inner: int = 20
    rank: int | None = None
    step_eta: float | None = None
    seed: int = 0
    keep_iterates: bool = False

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be nonnegative")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.mu0 is not None and self.mu0 <= 0:
            raise ValueError("mu0 must be positive")
        if self.rho <= 1:
            raise ValueError("rho must be > 1")
        if self.primal_tol <= 0 or self.inner_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration limits must be positive")
        if self.rank is not None and self.rank < 1:
            raise ValueError("rank must be positive")
        if self.step_eta is not None and self.step_eta <= 0:
            raise ValueError("step_eta must be positive")


@dataclass
class SolverState:
    """Mutable loop state shared by both engines.

    ``iterates`` (only with ``keep_iterates``) holds one (X, E, Z, mu) tuple
    per outer iteration *after* the dual/penalty updates, preceded by the
    initial state; on the final (converged) iteration Z and mu are left
    untouched.
    """

    Y: np.ndarray
    mask: np.ndarray
    config: SolverConfig
    channels: int
    X: np.ndarray
    E: np.ndarray
    Z: np.ndarray
    mu: float
    y_norm: float
    iteration: int = 0
    objective_trace: list = field(default_factory=list)
    residual_trace: list = field(default_factory=list)
    time_trace: list = field(default_factory=list)
    iterates: list = field(default_factory=list)


@dataclass
class Solution:
    """Final reconstruction plus diagnostics.

    ``objective`` is the reconstruction objective at the final X (nuclear
    norm computed exactly for both engines); the per-iteration
    ``objective_trace`` of the factored engine uses the factor surrogate
    (||U||^2 + ||V||^2)/2 for the nuclear term to stay SVD-free.
    """

    X: DataMatrix | np.ndarray
    objective: float
    primal_residual: float
    outer_iterations: int
    wall_time: float
    estimated_rank: int | None
    converged: bool
    objective_trace: list[float]
    residual_trace: list[float]
    time_trace: list[float]
    iterates: list | None = None

    @property
    def matrix(self) -> np.ndarray:
        return self.X.values if isinstance(self.X, DataMatrix) else self.X

    def trace_table(self) -> str:
        """Diagnostics trace as a tab-delimited text table."""
        lines = ["iteration\tobjective\tresidual\tseconds"]
        for i, (o, r, s) in enumerate(
            zip(self.objective_trace, self.residual_trace, self.time_trace), start=1
        ):
            lines.append(f"{i}\t{o:.10g}\t{r:.10g}\t{s:.6f}")
        return "\n".join(lines) + "\n"


def _data_loss(values: np.ndarray, loss: str) -> float:
    if loss == "absolute":
        return float(np.abs(values).sum())
    if loss == "squared":
        return float(0.5 * np.dot(values, values))
    raise ValueError(f"unknown loss {loss!r}")


def _masked_data_loss(diff: np.ndarray, omega: np.ndarray, loss: str) -> float:
    if loss == "absolute":
        return float(np.sum(np.abs(diff), where=omega))
    if loss == "squared":
        return float(0.5 * np.sum(diff * diff, where=omega))
    raise ValueError(f"unknown loss {loss!r}")


def _coerce_inputs(y, mask, channels):
    if isinstance(y, DataMatrix):
        dims = y.dims
        channels = y.channels
        values = y.values
    else:
        values = np.asarray(y, dtype=np.float64)
        dims = None
        channels = 1 if channels is None else int(channels)
    if isinstance(mask, ObservationMask):
        omega = mask.to_matrix(channels)
    else:
        omega = np.asarray(mask, dtype=bool)
    if omega.shape != values.shape:
        raise ValueError(f"mask shape {omega.shape} != data shape {values.shape}")
    return values, omega, channels, dims


def tecromac_objective(x, y, mask, lambda1: float, lambda2: float, channels: int = 1) -> float:
    """Robust objective: l1 data fit on the mask + nuclear + time smoothness."""
    y_vals, omega, channels, _ = _coerce_inputs(y, mask, channels)
    x_vals = x.values if isinstance(x, DataMatrix) else np.asarray(x, dtype=np.float64)
    if x_vals.shape != y_vals.shape:
        raise ValueError(f"shape mismatch {x_vals.shape} vs {y_vals.shape}")
    resid = y_vals - x_vals
    smooth = temporal_diff(x_vals, channels)
    return (
        float(np.abs(resid[omega]).sum())
        + lambda1 * nuclear_norm(x_vals)
        + 0.5 * lambda2 * float(np.dot(smooth.ravel(), smooth.ravel()))
    )


def augmented_lagrangian(
    x, e, z, mu: float, y, mask, lambda1: float, lambda2: float,
    channels: int = 1, loss: str = "absolute",
) -> float:
    """Full Lagrangian value; used for oracle checks and line searches."""
    y_vals, omega, channels, _ = _coerce_inputs(y, mask, channels)
    x = x.values if isinstance(x, DataMatrix) else np.asarray(x, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if not (x.shape == e.shape == z.shape == y_vals.shape):
        raise ValueError("shape mismatch among X, E, Z, Y")
    if mu <= 0:
        raise ValueError("mu must be positive")
    resid = y_vals - x - e
    smooth = temporal_diff(x, channels)
    return (
        _data_loss(e[omega], loss)
        + lambda1 * nuclear_norm(x)
        + 0.5 * lambda2 * float(np.dot(smooth.ravel(), smooth.ravel()))
        + float(np.vdot(z, resid))
        + 0.5 * mu * float(np.dot(resid.ravel(), resid.ravel()))
    )


def grad_f(x, e, z, mu: float, y, lambda2: float, channels: int = 1) -> np.ndarray:
    """Gradient of the smooth part of L in X:

    lambda2 * laplacian(X) - Z - mu (Y - X - E).
    """
    x = np.asarray(x, dtype=np.float64)
    return lambda2 * temporal_laplacian(x, channels) - z - mu * (y - x - e)


def ipg_update_x(state: SolverState, c_step: float, lambda1: float | None = None,
                 return_singular_values: bool = False):
    """One majorize-minimize step on X: SVT of a gradient step.

    Requires ``c_step > 4 * lambda2 + mu`` so the quadratic majorizer is
    valid (the time-difference Gram stencil has spectral norm < 4).
    """
    cfg = state.config
    lam1 = cfg.lambda1 if lambda1 is None else lambda1
    if c_step <= 4.0 * cfg.lambda2 + state.mu:
        raise ValueError(
            f"c_step={c_step} must exceed 4*lambda2 + mu = {4.0 * cfg.lambda2 + state.mu}"
        )
    g = grad_f(state.X, state.E, state.Z, state.mu, state.Y, cfg.lambda2, state.channels)
    return svt(state.X - g / c_step, lam1 / c_step,
               return_singular_values=return_singular_values)


def update_e(x, y, z, mu: float, mask, loss: str = "absolute") -> np.ndarray:
    """Closed-form E update.

    Off the mask E absorbs the residual exactly; on the mask the entrywise
    minimizer is a soft threshold at 1/mu (absolute loss) or the ridge
    shrinkage mu*r/(mu+1) (squared loss).
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    omega = mask.to_matrix(1) if isinstance(mask, ObservationMask) else np.asarray(mask, dtype=bool)
    res = y - x + z / mu
    if loss == "absolute":
        # sign(r) * max(|r| - thr, 0) written as r - clip(r, -thr, thr):
        # identical values, no masked gather/scatter.
        thr = 1.0 / mu
        return res - np.where(omega, np.clip(res, -thr, thr), 0.0)
    if loss == "squared":
        return res - np.where(omega, res / (mu + 1.0), 0.0)
    raise ValueError(f"unknown loss {loss!r}")


def update_dual(z, mu: float, y, x, e) -> np.ndarray:
    """Z <- Z + mu (Y - X - E)."""
    return z + mu * (y - x - e)


def update_mu(mu: float, rho: float, mu_max: float = np.inf) -> float:
    """mu <- min(rho * mu, mu_max)."""
    if rho <= 1:
        raise ValueError("rho must be > 1")
    if mu <= 0:
        raise ValueError("mu must be positive")
    return min(rho * mu, mu_max)


def check_convergence(state: SolverState, tol: float) -> bool:
    """True iff ||Y - X - E||_F <= tol * ||Y||_F."""
    resid = np.linalg.norm(state.Y - state.X - state.E)
    return resid <= tol * state.y_norm


def _init_state(values, omega, config, channels):
    y_norm = float(np.linalg.norm(values))
    sigma = spectral_norm_est(values)
    mu = config.mu0 if config.mu0 is not None else 1.25 / max(sigma, np.finfo(float).tiny)
    zscale = max(sigma, float(np.abs(values).max(initial=0.0)))
    z = values / zscale if zscale > 0 else np.zeros_like(values)
    return SolverState(
        Y=values,
        mask=omega,
        config=config,
        channels=channels,
        X=np.zeros_like(values),
        E=np.zeros_like(values),
        Z=z,
        mu=float(mu),
        y_norm=y_norm,
    ), sigma


def _smoothness(x, channels):
    d = temporal_diff(x, channels)
    return float(np.dot(d.ravel(), d.ravel()))


def _snapshot(state):
    state.iterates.append((state.X.copy(), state.E.copy(), state.Z.copy(), state.mu))


def _finish(state, dims, objective, est_rank, converged, t0):
    x = DataMatrix(state.X, dims) if dims is not None else state.X
    return Solution(
        X=x,
        objective=objective,
        primal_residual=(state.residual_trace[-1] if state.residual_trace else 0.0),
        outer_iterations=state.iteration,
        wall_time=time.perf_counter() - t0,
        estimated_rank=est_rank,
        converged=converged,
        objective_trace=state.objective_trace,
        residual_trace=state.residual_trace,
        time_trace=state.time_trace,
        iterates=state.iterates if state.config.keep_iterates else None,
    )


def solve_ipg(y, mask, config: SolverConfig, channels: int | None = None) -> Solution:
    """Proximal-gradient engine: one SVT step on X per outer iteration."""
    values, omega, channels, dims = _coerce_inputs(y, mask, channels)
    cfg = config
    t0 = time.perf_counter()
    state, _ = _init_state(values, omega, cfg, channels)
    if state.y_norm == 0.0:
        return _finish(state, dims, 0.0, 0, True, t0)
    mu_max = cfg.mu_max_factor * state.mu
    if cfg.keep_iterates:
        _snapshot(state)
    s_vals = np.zeros(1)
    converged = False
    for r in range(cfg.max_outer):
        c_step = 1.01 * (4.0 * cfg.lambda2 + state.mu)
        state.X, s_vals = ipg_update_x(state, c_step, return_singular_values=True)
        state.E = update_e(state.X, values, state.Z, state.mu, omega, cfg.loss)
        diff = values - state.X
        resid = diff - state.E
        res = float(np.linalg.norm(resid))
        if not np.isfinite(res):
            raise DivergenceError(f"non-finite residual at iteration {r + 1}")
        obj = (
            _masked_data_loss(diff, omega, cfg.loss)
            + cfg.lambda1 * float(s_vals.sum())
            + 0.5 * cfg.lambda2 * _smoothness(state.X, channels)
        )
        state.iteration = r + 1
        state.objective_trace.append(obj)
        state.residual_trace.append(res / state.y_norm)
        state.time_trace.append(time.perf_counter() - t0)
        if res <= cfg.primal_tol * state.y_norm:
            converged = True
            if cfg.keep_iterates:
                _snapshot(state)
            break
        state.Z = state.Z + state.mu * resid  # update_dual with resid in hand
        state.mu = update_mu(state.mu, cfg.rho, mu_max)
        if cfg.keep_iterates:
            _snapshot(state)
        if (r + 1) % 10 == 0 and not np.isfinite(state.X).all():
            raise DivergenceError(f"non-finite iterate at iteration {r + 1}")
    top = float(s_vals.max(initial=0.0))
    est_rank = int(np.count_nonzero(s_vals > 1e-8 * top)) if top > 0 else 0
    objective = (
        _masked_data_loss(values - state.X, omega, cfg.loss)
        + cfg.lambda1 * float(s_vals.sum())
        + 0.5 * cfg.lambda2 * _smoothness(state.X, channels)
    )
    return _finish(state, dims, objective, est_rank, converged, t0)


def grad_u(u, v, e, z, mu: float, y, lambda1: float, lambda2: float,
           channels: int = 1, _resid=None, _lap_v=None) -> np.ndarray:
    """Gradient of L in U for X = U V^T:

    lambda1 U + lambda2 U V^T G V - Z V - mu (Y - U V^T - E) V

    with G the time-difference Gram stencil (applied to V, never formed).
    """
    resid = y - u @ v.T - e if _resid is None else _resid
    lap_v = temporal_laplacian(v.T, channels).T if _lap_v is None else _lap_v
    return lambda1 * u + lambda2 * (u @ (v.T @ lap_v)) - (z + mu * resid) @ v


def grad_v(u, v, e, z, mu: float, y, lambda1: float, lambda2: float,
           channels: int = 1, _resid=None, _lap_v=None) -> np.ndarray:
    """Gradient of L in V: lambda1 V + lambda2 G V U^T U - Z^T U - resid^T U mu."""
    resid = y - u @ v.T - e if _resid is None else _resid
    lap_v = temporal_laplacian(v.T, channels).T if _lap_v is None else _lap_v
    return lambda1 * v + lambda2 * (lap_v @ (u.T @ u)) - (z + mu * resid).T @ u


def _factored_smooth_obj(w, u, v, e, z, mu, y, lambda1, lambda2, channels):
    # Terms of L that move during a U or V step (the masked data term is
    # constant while E is held fixed); w = u @ v.T precomputed.
    resid = y - w - e
    d = temporal_diff(w, channels)
    return (
        0.5 * lambda1 * (float(np.dot(u.ravel(), u.ravel())) + float(np.dot(v.ravel(), v.ravel())))
        + 0.5 * lambda2 * float(np.dot(d.ravel(), d.ravel()))
        + float(np.vdot(z, resid))
        + 0.5 * mu * float(np.dot(resid.ravel(), resid.ravel()))
    )


def _backtrack_eta(eta, g_sq, curvature):
    """Backtracking by halving against the sufficient-decrease test.

    The U and V subproblems are exactly quadratic along the gradient ray,
    phi(eta) = phi(0) - eta ||g||^2 + eta^2/2 g^T H g, so the Armijo test
    phi(eta) <= phi(0) - c eta ||g||^2 reduces to eta <= 2 (1-c) ||g||^2 /
    (g^T H g): the same step a function-evaluation search would accept, at
    O(r^2) cost.
    """
    if curvature <= 0.0:
        return eta
    accept = 2.0 * (1.0 - _LS_DECREASE) * g_sq / curvature
    while eta > accept:
        eta *= _LS_SHRINK
    return eta


def solve_alt(y, mask, config: SolverConfig, channels: int | None = None) -> Solution:
    """Factored engine: alternating gradient steps on U, V (SVD-free).

    Factors start from the rank-r thin SVD of the masked data (zeros off the
    mask), split evenly as U = U_r sqrt(S_r), V = V_r sqrt(S_r).  The product
    W = U V^T and the residual are updated incrementally, so one inner sweep
    costs four (mn x ct x r) products.
    """
    values, omega, channels, dims = _coerce_inputs(y, mask, channels)
    cfg = config
    if cfg.rank is None:
        raise ValueError("config.rank is required for the factored engine")
    rank = cfg.rank
    if rank > min(values.shape):
        raise ValueError(f"rank {rank} exceeds min matrix dimension {min(values.shape)}")
    t0 = time.perf_counter()
    state, sigma = _init_state(values, omega, cfg, channels)
    if state.y_norm == 0.0:
        return _finish(state, dims, 0.0, 0, True, t0)
    mu_max = cfg.mu_max_factor * state.mu
    if cfg.keep_iterates:
        _snapshot(state)

    u0, s0, vt0 = economy_svd(np.where(omega, values, 0.0))
    root = np.sqrt(s0[:rank])
    u = u0[:, :rank] * root
    v = vt0[:rank].T * root
    w = u @ v.T
    e = state.E
    p = values - w - e
    a_buf = np.empty_like(values)  # scratch for Z + mu * p
    scale_cap = max(float(np.abs(values).max()), 1.0)
    converged = False

    for r in range(cfg.max_outer):
        mu = state.mu
        eta = cfg.step_eta if cfg.step_eta is not None else 1.0 / (cfg.lambda1 + mu * sigma)
        if state.objective_trace:
            obj_scale = max(abs(state.objective_trace[-1]), 1.0)
        else:
            obj_scale = max(abs(_factored_smooth_obj(w, u, v, e, state.Z, mu, values,
                                                     cfg.lambda1, cfg.lambda2, channels)), 1.0)
        for _ in range(cfg.max_inner):
            lap_v = temporal_laplacian(v.T, channels).T  # RR^T V, (ct x r)
            vt_lap_v = v.T @ lap_v
            vt_v = v.T @ v
            np.multiply(p, mu, out=a_buf)
            a_buf += state.Z
            gu = cfg.lambda1 * u + cfg.lambda2 * (u @ vt_lap_v) - a_buf @ v
            decrease = 0.0
            eta_u = 0.0
            g_sq = float(np.dot(gu.ravel(), gu.ravel()))
            if g_sq > 0.0:
                if cfg.step_eta is None:
                    gram = gu.T @ gu
                    curv = (cfg.lambda1 * g_sq
                            + cfg.lambda2 * float(np.trace(gram @ vt_lap_v))
                            + mu * float(np.trace(gram @ vt_v)))
                    eta = _backtrack_eta(eta, g_sq, curv)
                    decrease += eta * g_sq - 0.5 * eta ** 2 * curv
                eta_u = eta
                u = u - eta * gu
            # V gradient at the moved U: the residual shift from the U step
            # enters as a rank-r correction, so no product update is needed.
            ut_u = u.T @ u
            gv = cfg.lambda1 * v + cfg.lambda2 * (lap_v @ ut_u) - a_buf.T @ u
            if eta_u > 0.0:
                gv -= (mu * eta_u) * (v @ (gu.T @ u))
            g_sq = float(np.dot(gv.ravel(), gv.ravel()))
            if g_sq > 0.0:
                if cfg.step_eta is None:
                    gram = gv.T @ gv
                    lap_gv = temporal_laplacian(gv.T, channels).T
                    curv = (cfg.lambda1 * g_sq
                            + cfg.lambda2 * float(np.trace((gv.T @ lap_gv) @ ut_u))
                            + mu * float(np.trace(gram @ ut_u)))
                    eta = _backtrack_eta(eta, g_sq, curv)
                    decrease += eta * g_sq - 0.5 * eta ** 2 * curv
                v = v - eta * gv
            w = u @ v.T
            e = update_e(w, values, state.Z, mu, omega, cfg.loss)
            np.subtract(values, w, out=p)
            p -= e
            if cfg.step_eta is None and decrease <= cfg.inner_tol * obj_scale:
                break
        state.X = w
        state.E = e
        res = float(np.linalg.norm(p))
        x_scale = float(np.abs(w).max(initial=0.0))
        # A hugely out-of-scale iterate can cancel to a tiny residual through
        # float absorption in the E update, so the residual alone is not a
        # safe divergence signal.
        if not np.isfinite(res) or not np.isfinite(x_scale) or x_scale > 1e12 * scale_cap:
            raise DivergenceError(
                f"diverging iterate at iteration {r + 1}; step size may be too large"
            )
        surrogate = 0.5 * (float(np.dot(u.ravel(), u.ravel())) + float(np.dot(v.ravel(), v.ravel())))
        obj = (
            _masked_data_loss(values - w, omega, cfg.loss)
            + cfg.lambda1 * surrogate
            + 0.5 * cfg.lambda2 * _smoothness(w, channels)
        )
        state.iteration = r + 1
        state.objective_trace.append(obj)
        state.residual_trace.append(res / state.y_norm)
        state.time_trace.append(time.perf_counter() - t0)
        if res <= cfg.primal_tol * state.y_norm:
            converged = True
            if cfg.keep_iterates:
                _snapshot(state)
            break
        state.Z = state.Z + mu * p  # update_dual with the residual in hand
        state.mu = update_mu(state.mu, cfg.rho, mu_max)
        if cfg.keep_iterates:
            _snapshot(state)
        if (r + 1) % 10 == 0 and not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise DivergenceError(
                f"non-finite factors at iteration {r + 1}; step size may be too large"
            )
    state.X = u @ v.T  # exact product (w carries incremental rounding)
    objective = (
        _data_loss((values - state.X)[omega], cfg.loss)
        + cfg.lambda1 * nuclear_norm(state.X)
        + 0.5 * cfg.lambda2 * _smoothness(state.X, channels)
    )
    return _finish(state, dims, objective, rank, converged, t0)


def solve(y, mask, config: SolverConfig, channels: int | None = None) -> Solution:
    """Dispatch on ``config.algorithm``."""
    if config.algorithm == "ipg":
        return solve_ipg(y, mask, config, channels)
    return solve_alt(y, mask, config, channels)
