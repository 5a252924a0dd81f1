"""Nonlinear least-squares steps with automatic step-size adaptation.

The iteration x_{k+1} = x_k + dx_k minimizes 0.5 ||r(x)||^2 for a residual
r = ref - f(x) with model Jacobian J = df/dx.  Steps are computed on the
rescaled Jacobian Jt = J diag(x) so both parameter columns are of order one,
and mapped back through dx = diag(x) dxt.  Available step rules:

  gauss-newton   dxt = (Jt' Jt)^-1 Jt' r        (projection onto the tangent basis)
  scaled-gd      dxt = lambda * Jt' r           (gradient step, metric-rescaled)
  modified-lm    dxt = (Jt' Jt + eta_bar / lambda * I)^-1 Jt' r

lambda is the ratio of the metric lengths of the Gauss-Newton and gradient
steps, computable from the gradient step alone,

  lambda = sqrt( (dxt*' G^-1 dxt*) / (dxt*' G dxt*) ),   G = Jt' Jt,

and eta_bar = ||r_k|| / ||r_0|| interpolates the damped system from a
scaled-gradient regime far from the minimizer to pure Gauss-Newton near it.
eta_bar is deliberately not clamped above one: uphill excursions raise the
damping instead of triggering a line search.

A BFGS baseline with a strong-Wolfe backtracking line search is provided for
comparisons; every line-search trial counts as one model evaluation, so
evaluation counts between methods are directly comparable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

__all__ = [
    "SingularMatrixError",
    "OptState",
    "StepReport",
    "OptRecord",
    "OptTrace",
    "OptimizeOptions",
    "rescale_jacobian",
    "gn_step",
    "gd_step",
    "metric_norm",
    "lambda_k",
    "eta_bar",
    "modified_lm_step",
    "corrected_gd_step",
    "optimize",
    "bfgs_baseline",
    "write_trace_csv",
]

#: Reciprocal-condition threshold below which a normal-equations system is
#: treated as singular.
RCOND_LIMIT = 1e-14

METHODS = ("modified-lm", "gauss-newton", "scaled-gd", "bfgs")


class SingularMatrixError(np.linalg.LinAlgError):
    """Rank-deficient system; carries the estimated reciprocal condition."""

    def __init__(self, message: str, rcond: float):
        super().__init__(f"{message} (reciprocal condition {rcond:.3e})")
        self.rcond = rcond


@dataclass
class OptState:
    """One optimizer iterate: parameters, residual, model Jacobian in
    physical units, iteration index, and evaluation bookkeeping."""

    x: np.ndarray
    r: np.ndarray
    J: np.ndarray
    eval_count: int
    k: int
    r0_norm: float

    def __post_init__(self) -> None:
        if self.J.shape != (self.r.size, self.x.size):
            raise ValueError(f"Jacobian shape {self.J.shape} does not match residual/parameters")
        if self.r0_norm < 0.0:
            raise ValueError("initial residual norm cannot be negative")


@dataclass(frozen=True)
class StepReport:
    """A proposed parameter increment and its diagnostics."""

    dx: np.ndarray
    lambda_: float
    eta_bar: float
    gn_metric_norm: float
    method_tag: str


def rescale_jacobian(J: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Jt = J diag(x); increments map back through dx = diag(x) dxt."""
    x = np.asarray(x, dtype=float)
    if np.any(x == 0.0):
        raise ValueError("rescaling is undefined for zero parameter components")
    return np.asarray(J, dtype=float) * x[None, :]


def _svd_solve(Jt: np.ndarray, r: np.ndarray) -> np.ndarray:
    u, s, vt = np.linalg.svd(Jt, full_matrices=False)
    rcond = s[-1] / s[0] if s[0] > 0 else 0.0
    if rcond < RCOND_LIMIT:
        raise SingularMatrixError("rank-deficient rescaled Jacobian", rcond)
    return vt.T @ ((u.T @ r) / s)


def gn_step(Jt: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Gauss-Newton increment (Jt' Jt)^-1 Jt' r via a rank-revealing SVD."""
    return _svd_solve(Jt, r)


def gd_step(Jt: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Gradient-descent increment Jt' r (projection onto the dual basis)."""
    return Jt.T @ r


def metric_norm(G: np.ndarray, dx: np.ndarray) -> float:
    """Metric length sqrt(dx' G dx); tiny negative quadratic forms are
    clamped to zero with a warning."""
    q = float(dx @ (G @ dx))
    if q < 0.0:
        warnings.warn(f"metric form returned {q:.3e} < 0; clamped to 0", RuntimeWarning)
        return 0.0
    return float(np.sqrt(q))


def lambda_k(G: np.ndarray, dx_star: np.ndarray) -> float:
    """Scalar making the gradient step as long, in the metric, as the
    Gauss-Newton step: lambda = sqrt((dx*' G^-1 dx*) / (dx*' G dx*))."""
    dx_star = np.asarray(dx_star, dtype=float)
    if not np.any(dx_star != 0.0):
        raise ValueError("lambda is undefined for a zero gradient step")
    try:
        g_inv_dx = np.linalg.solve(G, dx_star)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("metric tensor is singular", 0.0) from exc
    num = float(dx_star @ g_inv_dx)
    den = float(dx_star @ (G @ dx_star))
    if num <= 0.0 or den <= 0.0:
        raise SingularMatrixError("metric tensor is not positive definite", num / max(den, 1e-300))
    return float(np.sqrt(num / den))


def eta_bar(state: OptState) -> float:
    """Residual ratio ||r_k|| / ||r_0||; 1 at the start, may exceed 1 on
    uphill excursions."""
    if state.r0_norm <= 0.0:
        raise ValueError("initial residual is zero; optimization should have terminated")
    return float(np.linalg.norm(state.r) / state.r0_norm)


def _lm_core(state: OptState, scaled_gd_only: bool, tag: str) -> StepReport:
    jt = rescale_jacobian(state.J, state.x)
    dx_star = gd_step(jt, state.r)
    metric = jt.T @ jt
    lam = lambda_k(metric, dx_star)
    eta = eta_bar(state)
    gn_norm = metric_norm(metric, np.linalg.solve(metric, dx_star))
    if scaled_gd_only:
        dxt = lam * dx_star
    else:
        damped = metric + (eta / lam) * np.eye(metric.shape[0])
        try:
            dxt = np.linalg.solve(damped, dx_star)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError("damped normal equations are singular", 0.0) from exc
    return StepReport(
        dx=state.x * dxt,
        lambda_=lam,
        eta_bar=eta,
        gn_metric_norm=gn_norm,
        method_tag=tag,
    )


def modified_lm_step(state: OptState) -> StepReport:
    """Step-size-adapted Levenberg-Marquardt increment
    dxt = (Jt' Jt + eta_bar / lambda * I)^-1 Jt' r, mapped back to physical
    units."""
    return _lm_core(state, scaled_gd_only=False, tag="modified-lm")


def corrected_gd_step(state: OptState) -> StepReport:
    """Locally step-size-adapted gradient descent dxt = lambda * Jt' r;
    selectable for ablations."""
    return _lm_core(state, scaled_gd_only=True, tag="scaled-gd")


# ---------------------------------------------------------------------------
# iteration drivers

@dataclass
class OptRecord:
    """One model evaluation: where it happened and what it cost."""

    k: int
    eval_count: int
    x: np.ndarray
    objective: float
    lambda_: float = np.nan
    eta_bar: float = np.nan
    rel1: float = np.nan
    rel2: float = np.nan


@dataclass
class OptTrace:
    """Per-evaluation history of one optimization run."""

    records: list[OptRecord] = field(default_factory=list)
    status: str = "running"
    message: str = ""

    @property
    def eval_count(self) -> int:
        return self.records[-1].eval_count if self.records else 0

    @property
    def final_x(self) -> np.ndarray:
        return self.records[-1].x

    def evals_to(self, predicate: Callable[[OptRecord], bool]) -> int | None:
        """Cumulative evaluation count at the first record satisfying
        ``predicate``, or None."""
        for rec in self.records:
            if predicate(rec):
                return rec.eval_count
        return None


@dataclass(frozen=True)
class OptimizeOptions:
    """Iteration controls shared by all methods.

    ``max_evals`` caps cumulative model evaluations (line-search trials
    included); ``bounds`` is one (lo, hi) pair per parameter, enforced by
    halving the step at most ten times.  When ``ground_truth`` is given,
    per-record relative parameter errors are filled in; ``ref_norm`` is the
    Euclidean norm of the reference feature vector used for the relative
    residual column.
    """

    method: str = "modified-lm"
    max_iters: int = 100
    max_evals: int | None = None
    step_tol: float = 1e-10
    objective_tol: float = 1e-12
    stall_tol: float = 1e-14
    stall_iters: int = 5
    bounds: tuple[tuple[float, float], ...] | None = None
    ground_truth: np.ndarray | None = None
    ref_norm: float | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")


def _rel1(x: np.ndarray, truth: np.ndarray | None) -> float:
    if truth is None:
        return np.nan
    return float(np.sum(np.abs(1.0 - x / truth)))


def _rel2(r_norm: float, ref_norm: float | None) -> float:
    if ref_norm is None or ref_norm <= 0.0:
        return np.nan
    return float(r_norm / ref_norm)


def _apply_bounds(x: np.ndarray, dx: np.ndarray, bounds) -> np.ndarray | None:
    """Halve dx (at most 10 times) until x + dx is strictly inside the
    bounds; None when even the smallest step leaves the box."""
    if bounds is None:
        return dx
    for _ in range(11):
        trial = x + dx
        if all(lo < t < hi for t, (lo, hi) in zip(trial, bounds)):
            return dx
        dx = 0.5 * dx
    return None


def optimize(
    evaluate: Callable[[np.ndarray, bool], tuple[np.ndarray, np.ndarray | None]],
    x0: np.ndarray,
    opts: OptimizeOptions = OptimizeOptions(),
) -> OptTrace:
    """Drive a residual-based method (modified-lm, gauss-newton, scaled-gd).

    ``evaluate(x, need_jacobian)`` runs the forward model once and returns
    the residual r = ref - f(x) and, on request, the model Jacobian df/dx.
    The trace holds one record per model evaluation; for these methods one
    iteration is exactly one evaluation because the Jacobian shares the
    forward pass.
    """
    if opts.method == "bfgs":
        raise ValueError("use bfgs_baseline for the BFGS method")
    x = np.asarray(x0, dtype=float).copy()
    trace = OptTrace()
    r0_norm = 0.0
    stall_count = 0
    prev_norm = None

    for k in range(opts.max_iters):
        if opts.max_evals is not None and trace.eval_count >= opts.max_evals:
            trace.status = "max-iters"
            trace.message = "evaluation budget exhausted"
            return trace
        try:
            r, jac = evaluate(x, True)
        except Exception as exc:  # noqa: BLE001 - model errors carry the trace
            trace.status = "error"
            trace.message = str(exc)
            return trace
        r = np.asarray(r, dtype=float)
        r_norm = float(np.linalg.norm(r))
        if k == 0:
            r0_norm = r_norm
        record = OptRecord(
            k=k,
            eval_count=trace.eval_count + 1,
            x=x.copy(),
            objective=0.5 * r_norm**2,
            rel1=_rel1(x, opts.ground_truth),
            rel2=_rel2(r_norm, opts.ref_norm),
        )
        trace.records.append(record)

        if r0_norm == 0.0 or (r0_norm > 0.0 and r_norm / r0_norm < opts.objective_tol):
            trace.status = "converged"
            trace.message = "relative residual below tolerance"
            return trace
        if prev_norm is not None:
            drop = (prev_norm - r_norm) / max(prev_norm, 1e-300)
            stall_count = stall_count + 1 if drop < opts.stall_tol else 0
            if stall_count >= opts.stall_iters:
                trace.status = "stalled"
                trace.message = f"no relative decrease above {opts.stall_tol} for {opts.stall_iters} iterations"
                return trace
        prev_norm = r_norm

        state = OptState(x=x, r=r, J=np.asarray(jac, dtype=float), eval_count=trace.eval_count, k=k, r0_norm=r0_norm)
        try:
            if opts.method == "modified-lm":
                report = modified_lm_step(state)
            elif opts.method == "scaled-gd":
                report = corrected_gd_step(state)
            else:
                jt = rescale_jacobian(state.J, state.x)
                dxt = gn_step(jt, r)
                report = StepReport(
                    dx=state.x * dxt,
                    lambda_=np.nan,
                    eta_bar=eta_bar(state),
                    gn_metric_norm=metric_norm(jt.T @ jt, dxt),
                    method_tag="gauss-newton",
                )
        except (SingularMatrixError, ValueError) as exc:
            trace.status = "error"
            trace.message = str(exc)
            return trace
        record.lambda_ = report.lambda_
        record.eta_bar = report.eta_bar

        dxt_norm = float(np.linalg.norm(report.dx / x))
        if dxt_norm < opts.step_tol:
            trace.status = "converged"
            trace.message = "rescaled step below tolerance"
            return trace
        dx = _apply_bounds(x, report.dx, opts.bounds)
        if dx is None:
            trace.status = "stalled"
            trace.message = "step could not be pulled back inside the bounds"
            return trace
        x = x + dx

    trace.status = "max-iters"
    trace.message = "iteration limit reached"
    return trace


# ---------------------------------------------------------------------------
# BFGS baseline

_WOLFE_C1 = 1e-4
_WOLFE_C2 = 0.9
_MAX_LS_TRIALS = 20


def bfgs_baseline(
    fg: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    opts: OptimizeOptions = OptimizeOptions(method="bfgs"),
) -> OptTrace:
    """BFGS with inverse-Hessian updates and a strong-Wolfe backtracking
    line search (c1 = 1e-4, c2 = 0.9, at most 20 trials per search).

    Backtracking halves on overshoot, with a secant refinement on the
    directional derivative that makes the search exact on quadratics;
    steps that satisfy the sufficient-decrease condition but still have a
    strongly negative slope are doubled instead.

    ``fg(x)`` returns the objective 0.5 ||r||^2 and its gradient in one
    model evaluation (the gradient shares the forward pass).  Every
    line-search trial is one evaluation and lands in the trace, so the
    cumulative counts are comparable with the residual-based methods.
    """
    x = np.asarray(x0, dtype=float).copy()
    trace = OptTrace()
    n = x.size
    h = np.eye(n)

    def record_eval(k: int, xe: np.ndarray, f: float) -> None:
        trace.records.append(
            OptRecord(
                k=k,
                eval_count=trace.eval_count + 1,
                x=xe.copy(),
                objective=f,
                rel1=_rel1(xe, opts.ground_truth),
                rel2=_rel2(np.sqrt(max(2.0 * f, 0.0)), opts.ref_norm),
            )
        )

    try:
        f, g = fg(x)
    except Exception as exc:  # noqa: BLE001
        trace.status = "error"
        trace.message = str(exc)
        return trace
    record_eval(0, x, f)
    f0 = f
    g_scale = max(float(np.linalg.norm(g)), 1e-300)
    first_update = True

    for k in range(1, opts.max_iters + 1):
        if float(np.linalg.norm(g)) <= 1e-12 * g_scale or f <= 1e-24 * max(f0, 1e-300):
            trace.status = "converged"
            trace.message = "gradient vanished"
            return trace

        accepted = False
        f_new = f
        g_new = g
        alpha = 1.0
        p = -h @ g
        for attempt in range(2):
            if attempt == 1:
                # retry along steepest descent with a fresh inverse Hessian:
                # kinks in the objective can make a stale h non-productive
                h = np.eye(n)
                first_update = True
                p = -g
            slope = float(g @ p)
            if slope >= 0.0:
                continue
            alpha = 1.0
            best = None  # best Armijo-satisfying trial seen: (f, alpha, g)
            for _ in range(_MAX_LS_TRIALS):
                if opts.max_evals is not None and trace.eval_count >= opts.max_evals:
                    trace.status = "max-iters"
                    trace.message = "evaluation budget exhausted"
                    return trace
                x_trial = x + alpha * p
                if opts.bounds is not None and not all(
                    lo < t < hi for t, (lo, hi) in zip(x_trial, opts.bounds)
                ):
                    alpha *= 0.5
                    continue
                try:
                    f_new, g_new = fg(x_trial)
                except Exception as exc:  # noqa: BLE001
                    trace.status = "error"
                    trace.message = str(exc)
                    return trace
                record_eval(k, x_trial, f_new)
                slope_trial = float(g_new @ p)
                armijo = f_new <= f + _WOLFE_C1 * alpha * slope
                curvature = abs(slope_trial) <= _WOLFE_C2 * abs(slope)
                if armijo and curvature:
                    accepted = True
                    break
                if armijo and (best is None or f_new < best[0]):
                    best = (f_new, alpha, g_new)
                if armijo and slope_trial < 0.0:
                    # Wolfe undershoot: the 1-d minimizer lies beyond alpha.
                    alpha *= 2.0
                    continue
                # Overshoot (in value or slope): refine by a secant step on
                # the directional derivative, which is exact for quadratics,
                # and fall back to halving whenever the estimate leaves a
                # sane bracket.
                denom = slope - slope_trial
                alpha_sec = alpha * slope / denom if denom != 0.0 else 0.5 * alpha
                alpha = alpha_sec if 0.05 * alpha <= alpha_sec <= 0.95 * alpha else 0.5 * alpha
            if not accepted and best is not None:
                # The curvature condition can be unattainable at derivative
                # kinks of the objective; sufficient decrease alone is then
                # accepted (the y's > 0 guard protects the h update).
                f_new, alpha, g_new = best
                accepted = True
            if accepted:
                break
        if not accepted:
            trace.status = "stalled"
            trace.message = f"line search failed after {_MAX_LS_TRIALS} trials"
            return trace

        s = alpha * p
        y = g_new - g
        ys = float(y @ s)
        if ys > 1e-12 * float(np.linalg.norm(y)) * float(np.linalg.norm(s)):
            if first_update:
                h = (ys / float(y @ y)) * np.eye(n)
                first_update = False
            rho = 1.0 / ys
            i_n = np.eye(n)
            v = i_n - rho * np.outer(s, y)
            h = v @ h @ v.T + rho * np.outer(s, s)
        x = x + s
        if float(np.linalg.norm(s / np.where(x != 0.0, x, 1.0))) < opts.step_tol:
            trace.status = "converged"
            trace.message = "rescaled step below tolerance"
            return trace
        f, g = f_new, g_new

    trace.status = "max-iters"
    trace.message = "iteration limit reached"
    return trace


# ---------------------------------------------------------------------------
# trace serialization

def write_trace_csv(trace: OptTrace, path: str | Path, header_comments: list[str] | None = None) -> None:
    """CSV with columns iter, eval_count, objective, E, nu, lambda, eta_bar,
    rel1, rel2, status (one row per model evaluation; the terminal status
    repeats on every row)."""

    def fmt(v: float) -> str:
        return "" if np.isnan(v) else repr(float(v))

    lines = []
    for comment in header_comments or []:
        lines.append(f"# {comment}")
    lines.append("iter,eval_count,objective,E,nu,lambda,eta_bar,rel1,rel2,status")
    for rec in trace.records:
        lines.append(
            ",".join(
                [
                    str(rec.k),
                    str(rec.eval_count),
                    repr(float(rec.objective)),
                    repr(float(rec.x[0])),
                    repr(float(rec.x[1])),
                    fmt(rec.lambda_),
                    fmt(rec.eta_bar),
                    fmt(rec.rel1),
                    fmt(rec.rel2),
                    trace.status,
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")
