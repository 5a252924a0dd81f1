"""Benchmark orchestration: virtual measurements, batch optimizer runs with
honest evaluation counting, objective-surface scans, manifold export, and
report emission.

Everything is file-driven and deterministic: a configuration (flat
``key = value`` text) plus a seed fully determine every emitted byte.  CSV
headers carry comment lines with the seed and a checksum of the resolved
configuration so downstream artifacts can be traced to their inputs.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .forward import (
    EvalCounter,
    ForwardConfig,
    MaterialParams,
    excitation,
    forward_jacobian,
    forward_response,
    phase_objective_terms,
)
from .optim import OptimizeOptions, OptTrace, bfgs_baseline, optimize, write_trace_csv
from .signals import (
    PhaseObjectiveConfig,
    Signal,
    analytic_signal,
    envelope,
    read_signal_csv,
    transform_pipeline,
    write_signal_csv,
)
from .stats import (
    BUILTIN_PRIORS,
    MATERIALS,
    MaterialPrior,
    apply_marginals,
    gamma_cdf,
    gamma_inv_cdf,
    lhs_sample,
    load_priors,
    relative_1,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "Reference",
    "RunResult",
    "BenchResult",
    "SurfaceResult",
    "load_config",
    "config_checksum",
    "gen_refs",
    "mean_reference",
    "write_refs",
    "read_refs",
    "draw_starts",
    "run_single",
    "optimize_batch",
    "write_batch",
    "surface_scan",
    "write_surface",
    "manifold_export",
    "write_manifold",
    "report",
]

log = logging.getLogger(__name__)

OBJECTIVES = ("signal", "envelope", "autocorr-phase")
OPTIMIZERS = ("modified-lm", "gauss-newton", "scaled-gd", "bfgs")

#: Relative error floor used when log-averaging error trajectories.
_LOG_FLOOR = 1e-16


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark experiment: material, objective, optimizer, scales."""

    material: str = "PEEK"
    objective: str = "autocorr-phase"
    optimizer: str = "modified-lm"
    n_refs: int = 20
    seed: int = 1
    cutoff: float = 1e-6
    eval_budget: int = 200
    max_iters: int = 100
    damping: float = 1.0
    lhs_restarts: int = 100
    start_sigma: float = 1.0
    grid_n: int = 41
    grid_sigmas: float = 2.0
    manifold_grid_n: int = 9
    manifold_dim: int = 3
    fbar: float = 3.0e6
    tbar: float = 3.0e-6
    L: float = 0.02
    n: int = 4096
    dt: float = 1.0 / 48.0e6
    priors_file: str = ""

    def __post_init__(self) -> None:
        if self.material not in MATERIALS and not self.priors_file:
            raise ConfigError(f"unknown material {self.material!r}; expected one of {MATERIALS}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")
        if self.n_refs < 1:
            raise ConfigError("need at least one reference")
        if not (self.cutoff > 0.0):
            raise ConfigError("success cutoff must be positive")
        if self.eval_budget < 1:
            raise ConfigError("evaluation budget must be at least 1")

    def forward_config(self) -> ForwardConfig:
        return ForwardConfig(L=self.L, fbar=self.fbar, tbar=self.tbar, n=self.n, dt=self.dt)

    def objective_config(self) -> PhaseObjectiveConfig:
        return PhaseObjectiveConfig(bandwidth_hz=self.forward_config().b, damping=self.damping)

    def prior(self) -> MaterialPrior:
        if self.priors_file:
            priors = load_priors(self.priors_file)
            if self.material not in priors:
                raise ConfigError(f"material {self.material!r} not found in {self.priors_file}")
            return priors[self.material]
        return BUILTIN_PRIORS[self.material]


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def load_config(path: str | Path | None, overrides: dict | None = None) -> ExperimentConfig:
    """Parse a flat ``key = value`` file (comments with '#'), apply overrides,
    and validate."""
    values: dict = {}
    if path is not None:
        text = Path(path).read_text()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            value = value.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    kwargs = {}
    for key, value in values.items():
        target = _FIELD_TYPES[key]
        try:
            if target == "int":
                kwargs[key] = int(str(value), 0)
            elif target == "float":
                kwargs[key] = float(value)
            else:
                kwargs[key] = str(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_checksum(cfg: ExperimentConfig) -> str:
    canonical = "\n".join(f"{f.name} = {getattr(cfg, f.name)!r}" for f in fields(ExperimentConfig))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _header(cfg: ExperimentConfig, **extra) -> list[str]:
    lines = [f"config_checksum={config_checksum(cfg)}", f"seed={cfg.seed}"]
    lines.extend(f"{k}={v}" for k, v in extra.items())
    return lines


# ---------------------------------------------------------------------------
# reference generation

@dataclass(frozen=True)
class Reference:
    """One virtual measurement: ground-truth material and its response."""

    ref_id: int
    truth: MaterialParams
    signal: Signal


def gen_refs(cfg: ExperimentConfig) -> list[Reference]:
    """Draw ground truths through the optimized LHS and the marginal inverse
    CDFs, then simulate one response per truth.

    Forward failures (a truth whose packets do not fit the window) are
    logged and skipped; the batch never aborts.
    """
    prior = cfg.prior()
    if cfg.n_refs == 1:
        # a hypercube needs two strata; a single truth is one uniform draw
        unit = np.random.default_rng([cfg.seed, 1]).uniform(size=(1, 2))
    else:
        unit = lhs_sample(cfg.n_refs, 2, seed=cfg.seed, restarts=cfg.lhs_restarts)
    redraw_rng = np.random.default_rng([cfg.seed, 2])
    draws = apply_marginals(unit, prior, ("E", "nu"), rng=redraw_rng)
    rho = prior.rho_si()
    fwd = cfg.forward_config()
    refs = []
    for i in range(cfg.n_refs):
        truth = MaterialParams(E=1.0e9 * draws.column("E")[i], nu=draws.column("nu")[i], rho=rho)
        try:
            out = forward_response(truth, fwd)
        except Exception as exc:  # noqa: BLE001 - per-sample failures logged
            log.warning("reference %d failed: %s", i, exc)
            continue
        refs.append(Reference(ref_id=i, truth=truth, signal=out.signal))
    return refs


def write_refs(refs: list[Reference], cfg: ExperimentConfig, out_dir: str | Path) -> None:
    ref_dir = Path(out_dir) / "refs"
    ref_dir.mkdir(parents=True, exist_ok=True)
    index = ["ref_id,E_pa,nu,rho_kg_m3,file"]
    for ref in refs:
        name = f"ref_{ref.ref_id:03d}.csv"
        write_signal_csv(ref.signal, ref_dir / name, header_comments=_header(cfg, ref_id=ref.ref_id))
        index.append(
            f"{ref.ref_id},{ref.truth.E!r},{ref.truth.nu!r},{ref.truth.rho!r},{name}"
        )
    header = "\n".join(f"# {line}" for line in _header(cfg, material=cfg.material))
    (ref_dir / "index.csv").write_text(header + "\n" + "\n".join(index) + "\n")


def read_refs(out_dir: str | Path) -> list[Reference]:
    ref_dir = Path(out_dir) / "refs"
    index = ref_dir / "index.csv"
    if not index.exists():
        raise ConfigError(f"no references found under {ref_dir}; run gen-refs first")
    refs = []
    for line in index.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("ref_id"):
            continue
        ref_id, e_pa, nu, rho, name = line.split(",")
        refs.append(
            Reference(
                ref_id=int(ref_id),
                truth=MaterialParams(E=float(e_pa), nu=float(nu), rho=float(rho)),
                signal=read_signal_csv(ref_dir / name),
            )
        )
    return refs


def mean_reference(cfg: ExperimentConfig) -> Reference:
    """Reference simulated at the prior-mean parameters, float-pinned to the
    center node of the surface grid so the self-residual vanishes exactly."""
    prior = cfg.prior()
    (e_mean, nu_mean), (e_std, nu_std) = prior.mean_params_si(), prior.std_params_si()
    e_grid = np.linspace(e_mean - cfg.grid_sigmas * e_std, e_mean + cfg.grid_sigmas * e_std, cfg.grid_n)
    nu_grid = np.linspace(nu_mean - cfg.grid_sigmas * nu_std, nu_mean + cfg.grid_sigmas * nu_std, cfg.grid_n)
    truth = MaterialParams(
        E=float(e_grid[cfg.grid_n // 2]), nu=float(nu_grid[cfg.grid_n // 2]), rho=prior.rho_si()
    )
    out = forward_response(truth, cfg.forward_config())
    return Reference(ref_id=0, truth=truth, signal=out.signal)


# ---------------------------------------------------------------------------
# objective closures

def _envelope_terms(out_signal, d_e, d_nu):
    a = analytic_signal(out_signal)
    env = np.abs(a)
    floor = 1e-12 * max(float(env.max()), 1e-300)
    env_safe = np.maximum(env, floor)
    cols = []
    for ds in (d_e, d_nu):
        da = analytic_signal(ds)
        cols.append((a.conj() * da).real / env_safe)
    return env, np.column_stack(cols)


def make_objective(cfg: ExperimentConfig, ref: Reference):
    """Build the residual/Jacobian and scalar/gradient callbacks for one
    reference, sharing an evaluation counter.

    Returns (evaluate, fg, counter, ref_norm): ``evaluate(x, need_jac)`` for
    residual-based methods, ``fg(x)`` for BFGS; either call is exactly one
    forward evaluation.
    """
    fwd = cfg.forward_config()
    counter = EvalCounter()
    rho = ref.truth.rho

    if cfg.objective == "autocorr-phase":
        obj = cfg.objective_config()
        ref_feature = transform_pipeline(ref.signal, obj)
        ref_norm = float(np.linalg.norm(ref_feature.values))

        def evaluate(x, need_jacobian=True):
            m = MaterialParams(E=float(x[0]), nu=float(x[1]), rho=rho)
            return phase_objective_terms(m, fwd, obj, ref_feature, counter=counter, need_jacobian=need_jacobian)

    elif cfg.objective == "signal":
        ref_vec = ref.signal.samples
        ref_norm = float(np.linalg.norm(ref_vec))

        def evaluate(x, need_jacobian=True):
            m = MaterialParams(E=float(x[0]), nu=float(x[1]), rho=rho)
            out = forward_response(m, fwd, counter=counter)
            if not need_jacobian:
                return ref_vec - out.signal.samples, None
            d_e, d_nu = forward_jacobian(m, fwd)
            return ref_vec - out.signal.samples, np.column_stack([d_e.samples, d_nu.samples])

    else:  # envelope
        ref_vec = envelope(ref.signal).samples
        ref_norm = float(np.linalg.norm(ref_vec))

        def evaluate(x, need_jacobian=True):
            m = MaterialParams(E=float(x[0]), nu=float(x[1]), rho=rho)
            out = forward_response(m, fwd, counter=counter)
            if not need_jacobian:
                return ref_vec - envelope(out.signal).samples, None
            d_e, d_nu = forward_jacobian(m, fwd)
            env, jac = _envelope_terms(out.signal, d_e, d_nu)
            return ref_vec - env, jac

    def fg(x):
        r, jac = evaluate(x, True)
        return 0.5 * float(r @ r), -(jac.T @ r)

    return evaluate, fg, counter, ref_norm


def _modulus_floor(cfg: ExperimentConfig, rho: float) -> float:
    """Smallest Young's modulus whose slowest packet still fits the window,
    at the stiffest-to-shear limit nu -> 0.5, with a 10% safety margin."""
    fwd = cfg.forward_config()
    usable = fwd.duration - fwd.tbar - 4.0 * fwd.sigma
    c_t_min = fwd.L / usable
    return 1.1 * rho * c_t_min**2 * 3.0


def draw_starts(cfg: ExperimentConfig, count: int) -> np.ndarray:
    """Initial estimates drawn from the prior marginals truncated to
    +- start_sigma standard deviations around the marginal means.

    The stream depends only on (seed, "starts"), so runs with different
    optimizers see identical starts.
    """
    prior = cfg.prior()
    rng = np.random.default_rng([cfg.seed, 7])
    starts = np.empty((count, 2))
    for j, par in enumerate(("E", "nu")):
        d = prior.marginals[par]
        lo = gamma_cdf(d, d.mean - cfg.start_sigma * d.std)
        hi = gamma_cdf(d, d.mean + cfg.start_sigma * d.std)
        u = rng.uniform(lo, hi, size=count)
        starts[:, j] = gamma_inv_cdf(d, u)
    starts[:, 0] *= 1.0e9  # GPa -> Pa
    return starts


def run_single(cfg: ExperimentConfig, ref: Reference, x0: np.ndarray) -> tuple[OptTrace, EvalCounter]:
    """One optimization run against one reference; the trace carries one
    record per forward evaluation."""
    evaluate, fg, counter, ref_norm = make_objective(cfg, ref)
    truth = ref.truth.as_vector()
    bounds = ((_modulus_floor(cfg, ref.truth.rho), np.inf), (0.0, 0.5))
    opts = OptimizeOptions(
        method=cfg.optimizer,
        max_iters=cfg.max_iters,
        max_evals=cfg.eval_budget,
        bounds=bounds,
        ground_truth=truth,
        ref_norm=ref_norm,
    )
    if cfg.optimizer == "bfgs":
        # run in start-rescaled coordinates; rel1 is scale-invariant
        scale = np.asarray(x0, dtype=float)
        scaled_opts = replace(
            opts,
            bounds=tuple((lo / s, hi / s) for (lo, hi), s in zip(bounds, scale)),
            ground_truth=truth / scale,
        )

        def fg_scaled(u):
            value, grad = fg(scale * u)
            return value, scale * grad

        trace = bfgs_baseline(fg_scaled, np.ones(2), scaled_opts)
        for rec in trace.records:
            rec.x = rec.x * scale
        return trace, counter
    trace = optimize(evaluate, np.asarray(x0, dtype=float), opts)
    return trace, counter


# ---------------------------------------------------------------------------
# batches

@dataclass
class RunResult:
    ref_id: int
    truth: MaterialParams
    trace: OptTrace
    x0: np.ndarray
    success: bool
    evals_to_success: int | None


@dataclass
class BenchResult:
    cfg: ExperimentConfig
    runs: list[RunResult] = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        if not self.runs:
            return 0.0
        return sum(r.success for r in self.runs) / len(self.runs)

    def histogram(self) -> dict[int, int]:
        """Evaluations-to-success counts; values sum to the number of
        successful runs."""
        counts: dict[int, int] = {}
        for run in self.runs:
            if run.success:
                counts[run.evals_to_success] = counts.get(run.evals_to_success, 0) + 1
        return dict(sorted(counts.items()))

    def evals_to_success(self) -> list[int]:
        return [r.evals_to_success for r in self.runs if r.success]

    def error_curves(self) -> list[tuple[int, float, float, float]]:
        """Step-extended rel1 trajectories against cumulative evaluations:
        rows (eval, log-mean, min, max) across runs (the hull and the solid
        line of the convergence figures)."""
        budget = max((r.trace.eval_count for r in self.runs), default=0)
        rows = []
        for e in range(1, budget + 1):
            current = []
            for run in self.runs:
                rel = None
                for rec in run.trace.records:
                    if rec.eval_count <= e and not np.isnan(rec.rel1):
                        rel = rec.rel1
                    if rec.eval_count > e:
                        break
                if rel is not None:
                    current.append(max(rel, _LOG_FLOOR))
            if current:
                rows.append(
                    (e, float(np.exp(np.mean(np.log(current)))), float(np.min(current)), float(np.max(current)))
                )
        return rows


def optimize_batch(cfg: ExperimentConfig, refs: list[Reference]) -> BenchResult:
    """Run the configured optimizer against every reference.

    Success means the relative parameter error drops below the cutoff within
    the evaluation budget; the evaluation index of the first such record is
    the run's evaluations-to-success.  Per-run failures (model errors,
    stalls) are recorded as unsuccessful and never abort the batch.
    """
    if not refs:
        raise ConfigError("no references to optimize against")
    starts = draw_starts(cfg, len(refs))
    result = BenchResult(cfg=cfg)
    for row, ref in enumerate(refs):
        x0 = starts[row]
        try:
            trace, counter = run_single(cfg, ref, x0)
        except Exception as exc:  # noqa: BLE001 - per-run failures recorded
            log.warning("run %d failed outright: %s", ref.ref_id, exc)
            result.runs.append(
                RunResult(ref.ref_id, ref.truth, OptTrace(status="error", message=str(exc)), x0, False, None)
            )
            continue
        if trace.records and trace.eval_count != counter.count:
            log.warning(
                "run %d: trace counted %d evaluations, model counted %d",
                ref.ref_id,
                trace.eval_count,
                counter.count,
            )
        evals = trace.evals_to(lambda rec: rec.rel1 < cfg.cutoff)
        result.runs.append(
            RunResult(ref.ref_id, ref.truth, trace, x0, evals is not None, evals)
        )
    return result


def write_batch(result: BenchResult, out_dir: str | Path) -> None:
    cfg = result.cfg
    run_dir = Path(out_dir) / "runs" / cfg.optimizer
    run_dir.mkdir(parents=True, exist_ok=True)
    index = ["ref_id,status,success,evals_to_success,E_final,nu_final,E_true,nu_true"]
    for run in result.runs:
        name = f"trace_{run.ref_id:03d}.csv"
        write_trace_csv(run.trace, run_dir / name, header_comments=_header(cfg, ref_id=run.ref_id))
        final = run.trace.final_x if run.trace.records else np.array([np.nan, np.nan])
        index.append(
            ",".join(
                [
                    str(run.ref_id),
                    run.trace.status,
                    str(int(run.success)),
                    "" if run.evals_to_success is None else str(run.evals_to_success),
                    repr(float(final[0])),
                    repr(float(final[1])),
                    repr(run.truth.E),
                    repr(run.truth.nu),
                ]
            )
        )
    header = "\n".join(f"# {line}" for line in _header(cfg, material=cfg.material, objective=cfg.objective))
    (run_dir / "runs_index.csv").write_text(header + "\n" + "\n".join(index) + "\n")


# ---------------------------------------------------------------------------
# surface scan

@dataclass
class SurfaceResult:
    e_values: np.ndarray
    nu_values: np.ndarray
    objective: np.ndarray  # (n_e, n_nu), NaN where the forward model failed
    minima_count: int
    failed_nodes: int


def _count_interior_minima(grid: np.ndarray) -> int:
    count = 0
    n_e, n_nu = grid.shape
    for i in range(1, n_e - 1):
        for j in range(1, n_nu - 1):
            v = grid[i, j]
            if np.isnan(v):
                continue
            neighbors = grid[i - 1 : i + 2, j - 1 : j + 2].ravel()
            if np.any(np.isnan(neighbors)):
                continue
            others = np.delete(neighbors, 4)
            if np.all(v < others):
                count += 1
    return count


def surface_scan(cfg: ExperimentConfig, ref: Reference) -> SurfaceResult:
    """Objective values 0.5 ||r||^2 on a grid_n x grid_n parameter grid
    spanning +- grid_sigmas marginal standard deviations around the prior
    means, with a strict 8-neighbor count of interior local minima."""
    prior = cfg.prior()
    (e_mean, nu_mean), (e_std, nu_std) = prior.mean_params_si(), prior.std_params_si()
    e_values = np.linspace(e_mean - cfg.grid_sigmas * e_std, e_mean + cfg.grid_sigmas * e_std, cfg.grid_n)
    nu_values = np.linspace(nu_mean - cfg.grid_sigmas * nu_std, nu_mean + cfg.grid_sigmas * nu_std, cfg.grid_n)
    evaluate, _, _, _ = make_objective(cfg, ref)
    objective = np.full((cfg.grid_n, cfg.grid_n), np.nan)
    failed = 0
    for i, e in enumerate(e_values):
        for j, nu in enumerate(nu_values):
            try:
                r, _ = evaluate(np.array([e, nu]), False)
            except Exception as exc:  # noqa: BLE001 - node flagged, scan continues
                log.warning("surface node (%d, %d) failed: %s", i, j, exc)
                failed += 1
                continue
            objective[i, j] = 0.5 * float(r @ r)
    return SurfaceResult(
        e_values=e_values,
        nu_values=nu_values,
        objective=objective,
        minima_count=_count_interior_minima(objective),
        failed_nodes=failed,
    )


def write_surface(result: SurfaceResult, cfg: ExperimentConfig, path: str | Path) -> None:
    lines = [
        f"# {line}"
        for line in _header(
            cfg,
            objective=cfg.objective,
            interior_local_minima=result.minima_count,
            failed_nodes=result.failed_nodes,
        )
    ]
    lines.append("E,nu,J")
    for i, e in enumerate(result.e_values):
        for j, nu in enumerate(result.nu_values):
            v = result.objective[i, j]
            lines.append(f"{float(e)!r},{float(nu)!r},{'' if np.isnan(v) else repr(float(v))}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# manifold export

def _transformed_output(cfg: ExperimentConfig, signal: Signal) -> np.ndarray:
    if cfg.objective == "signal":
        return signal.samples
    if cfg.objective == "envelope":
        return envelope(signal).samples
    return transform_pipeline(signal, cfg.objective_config()).values


def manifold_export(cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Model outputs over a coordinate-line grid, centered and projected on
    the leading principal directions.

    Returns (params, projected, explained_variance, rank): params rows are
    (E, nu, i_E, i_nu) coordinate-line labels; rank < manifold_dim flags a
    degenerate covariance (fewer informative directions than requested).
    """
    prior = cfg.prior()
    (e_mean, nu_mean), (e_std, nu_std) = prior.mean_params_si(), prior.std_params_si()
    g = cfg.manifold_grid_n
    e_values = np.linspace(e_mean - cfg.grid_sigmas * e_std, e_mean + cfg.grid_sigmas * e_std, g)
    nu_values = np.linspace(nu_mean - cfg.grid_sigmas * nu_std, nu_mean + cfg.grid_sigmas * nu_std, g)
    fwd = cfg.forward_config()
    rho = prior.rho_si()
    outputs = []
    params = []
    for i, e in enumerate(e_values):
        for j, nu in enumerate(nu_values):
            out = forward_response(MaterialParams(E=e, nu=nu, rho=rho), fwd)
            outputs.append(_transformed_output(cfg, out.signal))
            params.append((e, nu, i, j))
    matrix = np.asarray(outputs)
    centered = matrix - matrix.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    variances = s**2 / max(matrix.shape[0] - 1, 1)
    total = float(np.sum(variances))
    rank = int(np.sum(s > 1e-12 * s[0])) if s.size and s[0] > 0 else 0
    dim = min(cfg.manifold_dim, rank)
    if dim < cfg.manifold_dim:
        log.warning("degenerate covariance: %d informative directions < %d requested", rank, cfg.manifold_dim)
    projected = centered @ vt[:dim].T
    explained = variances[:dim] / total if total > 0 else variances[:dim]
    return np.asarray(params), projected, explained, rank


def write_manifold(
    params: np.ndarray,
    projected: np.ndarray,
    explained: np.ndarray,
    cfg: ExperimentConfig,
    path: str | Path,
) -> None:
    dim = projected.shape[1]
    lines = [
        f"# {line}"
        for line in _header(
            cfg,
            objective=cfg.objective,
            explained_variance=";".join(repr(float(v)) for v in explained),
        )
    ]
    lines.append("E,nu,line_E,line_nu," + ",".join(f"pc{i+1}" for i in range(dim)))
    for row, proj in zip(params, projected):
        head = f"{float(row[0])!r},{float(row[1])!r},{int(row[2])},{int(row[3])}"
        lines.append(head + "," + ",".join(repr(float(v)) for v in proj))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# report

def _read_runs_index(path: Path) -> list[dict]:
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("ref_id"):
            continue
        ref_id, status, success, evals, e_f, nu_f, e_t, nu_t = line.split(",")
        rows.append(
            {
                "ref_id": int(ref_id),
                "status": status,
                "success": success == "1",
                "evals_to_success": int(evals) if evals else None,
            }
        )
    return rows


def report(out_dir: str | Path, cfg: ExperimentConfig) -> dict:
    """Aggregate every optimizer batch found under out_dir/runs into a
    histogram CSV, a success table, and a key: value summary.

    Returns the summary mapping (also written to report/summary.txt).
    """
    out_dir = Path(out_dir)
    runs_root = out_dir / "runs"
    if not runs_root.is_dir():
        raise ConfigError(f"no runs found under {runs_root}; run optimize first")
    series: dict[str, list[dict]] = {}
    for sub in sorted(runs_root.iterdir()):
        index = sub / "runs_index.csv"
        if index.exists():
            series[sub.name] = _read_runs_index(index)
    if not series:
        raise ConfigError(f"no run indices found under {runs_root}")

    report_dir = out_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    # aligned-bin histogram across optimizers
    all_success = [row["evals_to_success"] for rows in series.values() for row in rows if row["success"]]
    max_evals = max(all_success) if all_success else 0
    names = sorted(series)
    lines = [f"# {line}" for line in _header(cfg, material=cfg.material)]
    lines.append("evals," + ",".join(f"count_{name}" for name in names))
    for e in range(1, max_evals + 1):
        counts = [sum(1 for row in series[name] if row["success"] and row["evals_to_success"] == e) for name in names]
        lines.append(f"{e}," + ",".join(str(c) for c in counts))
    (report_dir / "histogram.csv").write_text("\n".join(lines) + "\n")

    # success table and summary
    table = [f"# {line}" for line in _header(cfg, material=cfg.material)]
    table.append("material,optimizer,n_runs,n_success,success_rate,median_evals,mean_evals")
    summary: dict[str, object] = {"material": cfg.material, "objective": cfg.objective}
    for name in names:
        rows = series[name]
        wins = [row["evals_to_success"] for row in rows if row["success"]]
        rate = len(wins) / len(rows) if rows else 0.0
        median = float(np.median(wins)) if wins else float("nan")
        mean = float(np.mean(wins)) if wins else float("nan")
        table.append(
            f"{cfg.material},{name},{len(rows)},{len(wins)},{rate!r},"
            f"{'' if not wins else repr(median)},{'' if not wins else repr(mean)}"
        )
        summary[f"{name}.n_runs"] = len(rows)
        summary[f"{name}.success_rate"] = rate
        summary[f"{name}.median_evals_to_success"] = median if wins else None
        summary[f"{name}.mean_evals_to_success"] = mean if wins else None
    (report_dir / "success_table.csv").write_text("\n".join(table) + "\n")

    text = [f"# {line}" for line in _header(cfg, material=cfg.material)]
    for key, value in summary.items():
        text.append(f"{key}: {value}")
    (report_dir / "summary.txt").write_text("\n".join(text) + "\n")
    return summary
