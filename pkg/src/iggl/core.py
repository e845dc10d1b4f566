"""Outer loop: iterative Gaussian graph learning for arbitrary marginal losses.

The estimator minimizes, over precision matrices W (and an auxiliary shift
that never needs to be materialized), a criterion combining the summed
marginal losses with a log-det term and an l1 penalty.  Each outer
iteration linearizes the loss at the current natural-parameter matrix
Theta, which reduces the step to an ordinary penalized Gaussian graph
learning problem:

    Xi    <- Theta - grad(losses)(Theta)          one unit gradient step
    S     <- (Xi - M)^T (Xi - M) / n              surrogate cross-product
    W     <- argmin  Tr(S W) - log det W + lam*l1(W)
    Theta <- Xi + phi * (M - Xi) W                blend back through W

The unit step is valid because every loss is rescaled to a gradient-
Lipschitz bound of at most one beforehand, and with the inner solver warm
started from the previous W the objective trace is non-increasing.  With
all-quadratic losses Xi stays equal to Y, so the loop degenerates to a
single inner solve plus one confirming pass.

phi is a small positive constant fixed for the whole run at
``phi_c / ||W0||_2``; it keeps ``I - phi*W`` positive semi-definite, which
every iterate is checked against.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .glasso import GGLInstance, PrecisionEstimate, ggl_objective, kkt_residual, log_det_pd, solve_ggl
from .losses import (
    ColumnLoss,
    batch_grad,
    batch_value,
    force_unit_lipschitz,
    loss_value,
    robust_scale,
    scale_to_unit_lipschitz,
)

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True, eq=False)
class FitProblem:
    """Observations, per-column losses, and solver options for one fit.

    ``M`` is the known mean matrix; ``None`` selects intercept-only mode
    where per-column intercepts are estimated once before the loop.
    """

    Y: np.ndarray
    losses: tuple
    lam: float
    M: np.ndarray | None = None
    phi_c: float = 1e-3
    outer_tol: float = 1e-6
    max_outer: int = 200
    calibrate: bool = False
    equalize_lipschitz: bool = False
    penalize_diagonal: bool = False
    inner_tol: float = 1e-7
    inner_max_iter: int = 500
    line_search: bool = False


@dataclass
class IterState:
    """Loop variables of the outer iteration, kept for diagnostics."""

    Theta: np.ndarray
    Xi: np.ndarray
    W: np.ndarray
    phi: float
    F_trace: list = field(default_factory=list)
    k: int = 0
    inner_iterations: list = field(default_factory=list)


@dataclass(frozen=True)
class PoissonColumn:
    """Reparameterized count column: eliminated intercept and curvature scale."""

    a: float
    count_total: float
    scale: float


@dataclass
class FitResult:
    """Fitted precision estimate plus everything needed downstream."""

    estimate: PrecisionEstimate
    state: IterState
    phi: float
    lam: float
    converged: bool
    intercepts: np.ndarray | None
    M: np.ndarray
    losses: tuple


def spectral_norm(W, rel_tol=1e-8, max_iter=100_000) -> float:
    """2-norm of a symmetric matrix by power iteration.

    Deterministic: the start vector comes from a fixed-seed generator so a
    rerun gives bit-identical results.
    """
    W = np.asarray(W, dtype=float)
    m = W.shape[0]
    v = np.random.default_rng(0).standard_normal(m)
    v /= np.linalg.norm(v)
    nu_prev = 0.0
    for _ in range(max_iter):
        w = W @ v
        nu = float(np.linalg.norm(w))
        if nu == 0.0:
            return 0.0
        v = w / nu
        if abs(nu - nu_prev) <= rel_tol * max(nu, 1e-300):
            return nu
        nu_prev = nu
    return nu_prev


def choose_phi(W0, c) -> float:
    """phi = c / ||W0||_2, guaranteeing phi * ||W0||_2 = c < 1."""
    if not 0.0 < c < 1.0:
        raise ValueError("c must lie in (0, 1)")
    return c / spectral_norm(W0)


def xi_update(Theta, Y, losses) -> np.ndarray:
    """One unit gradient step on the summed marginal loss: Theta - grad."""
    return np.asarray(Theta, dtype=float) - batch_grad(losses, Theta, Y)


def theta_update(Xi, M, W, phi) -> np.ndarray:
    """Blend the mean into the gradient-step image: M W phi + Xi (I - phi W).

    Requires phi * ||W||_2 <= 1 (so the implicit shift decomposition stays
    valid); violation raises.  No matrix square roots are formed.
    """
    Xi = np.asarray(Xi, dtype=float)
    M = np.asarray(M, dtype=float)
    W = np.asarray(W, dtype=float)
    # cheap Frobenius bound first, exact spectral norm only when needed
    if phi * np.linalg.norm(W) > 1.0 and phi * spectral_norm(W) > 1.0 + 1e-12:
        raise ValueError("feasibility violated: phi * ||W||_2 > 1")
    return Xi + phi * ((M - Xi) @ W)


def outer_objective(Xi, Theta, W, M, phi, lam, Y, losses, penalize_diagonal=False) -> float:
    """Value of the full criterion at the current loop variables.

    The auxiliary shift never appears: its quadratic penalty equals
    Tr{(Xi - M)(I - phi W) W (Xi - M)^T}, evaluated directly from Xi.
    """
    n = np.asarray(Y).shape[0]
    E = np.asarray(Xi, dtype=float) - np.asarray(M, dtype=float)
    B = E - phi * (E @ W)
    quad = 0.5 * float(np.sum((B @ W) * E))
    pen = np.sum(np.abs(W))
    if not penalize_diagonal:
        pen -= np.sum(np.abs(np.diag(W)))
    lbar = batch_value(losses, Theta, Y)
    return float(lbar / phi + quad - 0.5 * n * log_det_pd(W) + 0.5 * n * lam * pen)


def _golden_section(fun, lo, hi, tol=1e-10):
    a, b = float(lo), float(hi)
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = fun(x1), fun(x2)
    while b - a > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = fun(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = fun(x2)
    return 0.5 * (a + b)


def estimate_intercepts(Y, losses) -> np.ndarray:
    """Per-column intercepts minimizing the column loss at a constant fit.

    Quadratic columns return the mean and count columns the log of the
    column total; every other column is minimized by golden section to an
    absolute tolerance of 1e-10.  Margin/deviance columns whose minimizer
    runs away (separable labels) are clipped to +/- 20 * max(scale, 1) with
    a warning.
    """
    Y = np.asarray(Y, dtype=float)
    m = Y.shape[1]
    if len(losses) != m:
        raise ValueError("expected one loss per column")
    alpha = np.empty(m)
    for k, loss in enumerate(losses):
        y = Y[:, k]
        if loss.kind == "quadratic":
            alpha[k] = float(np.mean(y))
            continue
        if loss.kind == "poisson_reparam":
            total = float(np.sum(y))
            if total <= 0:
                raise ValueError(f"column {k}: count column sums to zero")
            alpha[k] = float(np.log(total))
            continue

        def column_loss(a, y=y, loss=loss):
            return float(np.sum(loss_value(loss, np.full_like(y, a), y)))

        if loss.kind in ("bernoulli", "huberized_hinge", "lorenz"):
            try:
                sigma = robust_scale(y)
            except ValueError:
                sigma = 0.0
            bound = 20.0 * max(sigma, 1.0)
            lo, hi = -bound, bound
            a_hat = _golden_section(column_loss, lo, hi)
            if min(a_hat - lo, hi - a_hat) < 1e-6 * (hi - lo):
                warnings.warn(
                    f"column {k}: intercept search hit the clipped range [{lo:g}, {hi:g}]; "
                    "the 1-d problem may be unbounded below"
                )
        else:
            lo, hi = float(np.min(y)), float(np.max(y))
            if hi - lo <= 0:
                alpha[k] = lo
                continue
            a_hat = _golden_section(column_loss, lo, hi)
        alpha[k] = a_hat
    return alpha


def poisson_preprocess(Y, columns):
    """Reparameterize count columns, eliminating their intercepts.

    For each requested column the entries must be nonnegative integers with
    a positive total c_k.  Returns ``(infos, losses)`` where ``infos[k]``
    records the optimal eliminated intercept ``a_k = log(c_k)`` and
    ``losses[k]`` is the column-level loss scaled by ``2 / c_k`` so that its
    curvature bound (c_k / 2 for the raw loss) becomes exactly one.
    """
    Y = np.asarray(Y, dtype=float)
    infos, losses = {}, {}
    for k in columns:
        y = Y[:, k]
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise ValueError(f"column {k}: count loss requires nonnegative integer entries")
        ck = float(np.sum(y))
        if ck <= 0:
            raise ValueError(f"column {k}: count column sums to zero")
        scale = 2.0 / ck
        infos[k] = PoissonColumn(a=float(np.log(ck)), count_total=ck, scale=scale)
        losses[k] = ColumnLoss(
            kind="poisson_reparam",
            params={"count_total": ck},
            scale_factor=scale,
            lipschitz=1.0,
        )
    return infos, losses


def calibrate_losses(losses, alpha, Y, h=1e-4, min_curvature=1e-8):
    """Divide each loss by its curvature at the column intercept.

    The curvature is the per-observation average second difference of the
    scaled loss at ``alpha[k]`` (step ``h``).  Nonpositive or vanishing
    curvature raises a ``ValueError`` naming the column.  Count columns are
    skipped: their reparameterized loss is shift-invariant, so the intercept
    curvature is identically zero and their scale is already pinned by the
    curvature bound.
    """
    Y = np.asarray(Y, dtype=float)
    out = []
    for k, loss in enumerate(losses):
        if loss.kind == "poisson_reparam":
            out.append(loss)
            continue
        y = Y[:, k]
        a = float(alpha[k])
        vp = np.sum(loss_value(loss, np.full_like(y, a + h), y))
        v0 = np.sum(loss_value(loss, np.full_like(y, a), y))
        vm = np.sum(loss_value(loss, np.full_like(y, a - h), y))
        curv = float((vp - 2.0 * v0 + vm) / (h * h) / y.size)
        if not np.isfinite(curv) or curv <= min_curvature:
            raise ValueError(f"calibration failed for column {k}: curvature {curv:.3e} at alpha={a:.6g}")
        out.append(replace(loss, scale_factor=loss.scale_factor / curv, lipschitz=loss.lipschitz / curv))
    return tuple(out)


def _prepare(problem: FitProblem):
    """Validate the problem and resolve losses, mean, W0 and phi."""
    Y = np.asarray(problem.Y, dtype=float)
    if Y.ndim != 2:
        raise ValueError("Y must be a 2-d array")
    n, m = Y.shape
    if n < 2 or m < 2:
        raise ValueError("need at least 2 rows and 2 columns")
    if problem.max_outer < 1:
        raise ValueError("max_outer must be at least 1")
    if not np.all(np.isfinite(Y)):
        raise ValueError("Y contains non-finite entries")
    losses = list(problem.losses)
    if len(losses) != m:
        raise ValueError(f"expected {m} losses, got {len(losses)}")

    poisson_cols = [k for k, l in enumerate(losses) if l.kind == "poisson_reparam"]
    infos = {}
    if poisson_cols:
        infos, pl = poisson_preprocess(Y, poisson_cols)
        for k in poisson_cols:
            losses[k] = pl[k]

    if problem.M is not None:
        M = np.asarray(problem.M, dtype=float)
        if M.shape != Y.shape:
            raise ValueError("M must match Y's shape")
        alpha = None
    else:
        alpha = estimate_intercepts(Y, losses)
        M = np.tile(alpha, (n, 1))
        for k in poisson_cols:
            # the count intercept is eliminated inside the loss; alpha[k]
            # reports it but the mean column stays zero
            M[:, k] = 0.0

    if problem.calibrate:
        base = alpha if alpha is not None else estimate_intercepts(Y, losses)
        losses = list(calibrate_losses(losses, base, Y))

    if problem.equalize_lipschitz:
        losses = [force_unit_lipschitz(l) for l in losses]
    losses = tuple(scale_to_unit_lipschitz(l) for l in losses)
    bad = [k for k, l in enumerate(losses) if l.lipschitz > 1.0 + 1e-9]
    if bad:
        raise ValueError(f"columns {bad} have gradient-Lipschitz bound above one after scaling")

    variances = np.var(Y, axis=0, ddof=1)
    low = np.nonzero(variances < 1e-12)[0]
    if low.size:
        raise ValueError(f"column {int(low[0])} has (near-)zero variance")
    W0 = np.diag(1.0 / variances)
    phi = choose_phi(W0, problem.phi_c)
    return Y, losses, M, alpha, infos, W0, phi


def first_iteration_s(problem: FitProblem) -> np.ndarray:
    """Cross-product matrix the first inner solve would see.

    Used to anchor the penalty grid before any fitting happens; it does not
    depend on the penalty itself.
    """
    Y, losses, M, _, _, W0, phi = _prepare(problem)
    n = Y.shape[0]
    Theta0 = Y + phi * ((M - Y) @ W0)
    Xi1 = xi_update(Theta0, Y, losses)
    E = Xi1 - M
    S1 = (E.T @ E) / n
    return 0.5 * (S1 + S1.T)


def fit(problem: FitProblem, W_init=None) -> FitResult:
    """Run the outer loop and return the fitted precision matrix.

    ``W_init`` warm starts the precision iterate (the feasibility scalar phi
    is always taken from the variance-diagonal initializer so warm and cold
    runs optimize the same criterion).  Stops when the relative change of
    the objective trace drops below ``outer_tol`` or after ``max_outer``
    iterations, whichever comes first.

    ``line_search`` halves the gradient step (blending the update toward
    the previous state) until the objective decreases, up to 30 halvings
    per iteration.  The fixed unit step already guarantees descent for the
    shipped losses; the option exists for user-supplied losses without a
    trusted Lipschitz bound.
    """
    Y, losses, M, alpha, _, W0, phi = _prepare(problem)
    n = Y.shape[0]
    lam = float(problem.lam)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")

    if W_init is not None:
        W = 0.5 * (np.asarray(W_init, dtype=float) + np.asarray(W_init, dtype=float).T)
        if phi * spectral_norm(W) > 1.0:
            raise ValueError("W_init violates feasibility: phi * ||W_init||_2 > 1")
    else:
        W = W0

    Xi = Y.copy()
    Theta = Xi + phi * ((M - Xi) @ W)
    state = IterState(Theta=Theta, Xi=Xi, W=W, phi=phi)
    est = None
    outer_converged = False
    F_prev = None
    if problem.line_search:
        F_prev = outer_objective(Xi, Theta, W, M, phi, lam, Y, losses, problem.penalize_diagonal)

    def one_step(Xi_step, W_warm):
        E = Xi_step - M
        S = (E.T @ E) / n
        S = 0.5 * (S + S.T)
        inst = GGLInstance(
            S=S,
            lam=lam,
            penalize_diagonal=problem.penalize_diagonal,
            tol=problem.inner_tol,
            max_iter=problem.inner_max_iter,
        )
        est_step = solve_ggl(inst, W_init=W_warm)
        if phi * spectral_norm(est_step.W) > 1.0 + 1e-12:
            raise RuntimeError(
                "inner solver returned W with phi * ||W||_2 > 1; feasibility of "
                "the shift decomposition is violated (phi stays at its initial value)"
            )
        Theta_step = theta_update(Xi_step, M, est_step.W, phi)
        F_step = outer_objective(Xi_step, Theta_step, est_step.W, M, phi, lam, Y, losses,
                                 problem.penalize_diagonal)
        return est_step, Theta_step, F_step

    for k in range(1, problem.max_outer + 1):
        if problem.line_search:
            Xi_full = xi_update(Theta, Y, losses)
            est, Theta_t, F = one_step(Xi_full, W)
            # blend the candidate state back toward the previous one until
            # the objective decreases; at t -> 0 the previous state (and
            # objective) is recovered exactly, so halving terminates
            Xi_old, W_old = Xi, W
            Xi_t, W_t = Xi_full, est.W
            t = 1.0
            for _ in range(30):
                if F <= F_prev + 1e-12 * (1.0 + abs(F_prev)):
                    break
                t *= 0.5
                Xi_t = (1.0 - t) * Xi_old + t * Xi_full
                W_t = (1.0 - t) * W_old + t * est.W
                Theta_t = theta_update(Xi_t, M, W_t, phi)
                F = outer_objective(Xi_t, Theta_t, W_t, M, phi, lam, Y, losses,
                                    problem.penalize_diagonal)
            Xi, Theta = Xi_t, Theta_t
            if W_t is not est.W:
                # a blended iterate is not itself an inner-solver solution;
                # report its diagnostics against the blended cross-product
                E_t = Xi_t - M
                S_t = (E_t.T @ E_t) / n
                S_t = 0.5 * (S_t + S_t.T)
                est = PrecisionEstimate(
                    W=W_t,
                    objective=ggl_objective(S_t, W_t, lam, problem.penalize_diagonal),
                    kkt_residual=kkt_residual(S_t, W_t, lam, problem.penalize_diagonal),
                    iterations=est.iterations,
                    converged=est.converged,
                    objective_trace=est.objective_trace,
                )
        else:
            Xi = xi_update(Theta, Y, losses)
            est, Theta, F = one_step(Xi, W)
        W = est.W
        state.F_trace.append(F)
        state.inner_iterations.append(est.iterations)
        state.Theta, state.Xi, state.W, state.k = Theta, Xi, W, k
        if k >= 2 and abs(F - F_prev) / (1.0 + abs(F_prev)) < problem.outer_tol:
            F_prev = F
            outer_converged = True
            break
        F_prev = F

    return FitResult(
        estimate=est,
        state=state,
        phi=phi,
        lam=lam,
        converged=outer_converged and est.converged,
        intercepts=alpha,
        M=M,
        losses=losses,
    )
