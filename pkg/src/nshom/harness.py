"""Coupled-path convergence experiments between the heterogeneous and
effective systems.

The strong-error surrogate for one path is the discrete space-time norm

    E_path = dt * h * sum_k sum_i |u_eps(t_k, x_i) - u_eff(t_k, x_i)|^2

(time levels k = 1..N), both systems driven by the same Brownian increments.
Sweep reports aggregate over paths: mean, Monte Carlo standard error, weak
errors against fixed test functions, exclusion counts for diverged paths, and
a log-log slope fit of the mean strong error against eps (reported as data,
not gated)."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cell import CellSolution, solve_cell_problem
from .config import RunConfig
from .effective import (EffectiveCoefficients, assemble_effective_generator,
                        compute_effective_coefficients, zeta_matrix)
from .integrator import (Effective, Heterogeneous, SimResult,
                         TrajectoryBlowup, brownian_increments, simulate)
from .kernel import Grid1D, KernelParams, OperatorMatrix, assemble_heterogeneous_generator
from .presets import PSI_PRESETS

STRONG_ERROR_DEFINITION = (
    "strong_err = mean over paths of dt*h*sum_{t,x} |u_eps - u_eff|^2 "
    "(time levels 1..N, coupled Brownian paths); weak_err_k = |mean over paths "
    "of dt*h*sum_{t,x} (u_eps - u_eff) conj(psi_k)|")

MAX_EXCLUDED_FRACTION = 0.2


class SweepFailure(RuntimeError):
    """Raised when an eps level loses more than the allowed fraction of paths."""

    def __init__(self, message: str, report: "SweepReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass
class PreparedExperiment:
    """Epsilon-independent pieces shared across a sweep: cell solve, effective
    coefficients and generator, test functions."""

    grid: Grid1D
    cell_solution: CellSolution
    coefficients: EffectiveCoefficients
    effective_generator: OperatorMatrix
    psi_names: list[str]
    psi_values: np.ndarray  # (n_psi, n)


@dataclass
class PathOutcome:
    error: float
    weak: np.ndarray
    excluded: bool = False
    reason: str = ""


@dataclass
class SweepReport:
    eps_list: list[float]
    n_paths: int
    strong_err: list[float]
    strong_se: list[float]
    weak_err: list[list[float]]  # per eps, per psi
    excluded: list[int]
    wall_s: list[float]
    psi_names: list[str]
    fit: dict
    seeds: list[int]
    config_hash: str
    definition: str = STRONG_ERROR_DEFINITION
    notes: dict = field(default_factory=dict)


def prepare_experiment(rc: RunConfig) -> PreparedExperiment:
    grid = rc.grid()
    cell = solve_cell_problem(rc.theta_spec(), rc.alpha, rc.cell_grid(), rc.kernel_mode)
    coeffs = compute_effective_coefficients(rc.theta_spec(), rc.v_spec(), cell,
                                            rc.alpha, rc.cell_grid())
    geff = assemble_effective_generator(coeffs, grid, rc.alpha)
    names = [name for name, _ in PSI_PRESETS]
    psis = np.stack([fn(grid.nodes) for _, fn in PSI_PRESETS])
    return PreparedExperiment(grid=grid, cell_solution=cell, coefficients=coeffs,
                              effective_generator=geff, psi_names=names, psi_values=psis)


def _run_pair(eps: float, rc: RunConfig, seed: int,
              prepared: PreparedExperiment) -> tuple[SimResult, SimResult, float]:
    cfg = rc.sim_config()
    dt, n_steps = rc.resolve_dt(eps)
    path = brownian_increments(seed, n_steps, dt)
    params = KernelParams(alpha=rc.alpha, theta=rc.theta_spec(), epsilon=eps,
                          kernel_mode=rc.kernel_mode)
    g_het = assemble_heterogeneous_generator(prepared.grid, params)
    res_het = simulate(Heterogeneous(eps), cfg, path, generator=g_het)
    res_eff = simulate(Effective(prepared.coefficients), cfg, path,
                       generator=prepared.effective_generator)
    return res_het, res_eff, dt


def coupled_pair_error(eps: float, rc: RunConfig, seed: int,
                       prepared: PreparedExperiment | None = None) -> PathOutcome:
    """Strong and weak error integrals for one coupled path; diverged paths are
    flagged for exclusion instead of propagating."""
    if prepared is None:
        prepared = prepare_experiment(rc)
    n_psi = len(prepared.psi_names)
    try:
        res_het, res_eff, dt = _run_pair(eps, rc, seed, prepared)
    except TrajectoryBlowup as exc:
        warnings.warn(f"coupled path seed={seed} eps={eps} diverged: {exc}")
        return PathOutcome(error=float("nan"), weak=np.full(n_psi, np.nan, dtype=complex),
                           excluded=True, reason=str(exc))
    h = prepared.grid.h
    diff = res_het.trajectory[1:] - res_eff.trajectory[1:]
    err = dt * h * float(np.sum(np.abs(diff) ** 2))
    weak = dt * h * (diff @ np.conj(prepared.psi_values.T)).sum(axis=0)
    return PathOutcome(error=err, weak=weak)


def fit_loglog(eps_list: list[float], errors: list[float],
               floor: float = 1e-14) -> dict:
    """Least-squares slope of log(err) against log(eps); degenerate fits are
    flagged instead of extrapolated."""
    eps_arr = np.asarray(eps_list, dtype=float)
    err_arr = np.asarray(errors, dtype=float)
    if eps_arr.size < 2:
        return {"slope": None, "intercept": None, "r2": None,
                "degenerate": True, "reason": "need at least two eps levels"}
    if np.any(~np.isfinite(err_arr)) or np.any(err_arr <= floor):
        return {"slope": None, "intercept": None, "r2": None,
                "degenerate": True,
                "reason": f"errors at or below the tolerance floor {floor:g}"}
    lx, ly = np.log(eps_arr), np.log(err_arr)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2,
            "degenerate": False, "reason": ""}


def eps_sweep(eps_list: list[float], n_paths: int, rc: RunConfig,
              prepared: PreparedExperiment | None = None,
              progress=None) -> SweepReport:
    """Monte Carlo sweep over decreasing eps on coupled paths.

    Raises SweepFailure (with the partial report attached) when any eps level
    excludes more than 20% of its paths.
    """
    eps_arr = list(map(float, eps_list))
    if len(eps_arr) < 1:
        raise ValueError("eps_list must not be empty")
    if any(b >= a for a, b in zip(eps_arr, eps_arr[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    if n_paths < 2:
        raise ValueError("need at least 2 paths for a standard error")
    if prepared is None:
        prepared = prepare_experiment(rc)

    seeds = [rc.seed + i for i in range(n_paths)]
    strong, ses, weaks, excludeds, walls = [], [], [], [], []
    failure = None
    for eps in eps_arr:
        t0 = time.perf_counter()
        outcomes = [coupled_pair_error(eps, rc, s, prepared) for s in seeds]
        wall = time.perf_counter() - t0
        kept = [o for o in outcomes if not o.excluded]
        n_excl = len(outcomes) - len(kept)
        if progress is not None:
            progress(eps, len(kept), n_excl, wall)
        excludeds.append(n_excl)
        walls.append(wall)
        if not kept:
            strong.append(float("nan"))
            ses.append(float("nan"))
            weaks.append([float("nan")] * len(prepared.psi_names))
        else:
            errs = np.array([o.error for o in kept])
            strong.append(float(errs.mean()))
            ses.append(float(errs.std(ddof=1) / np.sqrt(errs.size)) if errs.size > 1 else 0.0)
            weak_mat = np.stack([o.weak for o in kept])
            weaks.append([float(np.abs(weak_mat[:, j].mean()))
                          for j in range(len(prepared.psi_names))])
        if n_excl > MAX_EXCLUDED_FRACTION * n_paths and failure is None:
            failure = (f"eps={eps}: {n_excl}/{n_paths} paths excluded "
                       f"(limit {MAX_EXCLUDED_FRACTION:.0%})")

    report = SweepReport(eps_list=eps_arr, n_paths=n_paths, strong_err=strong,
                         strong_se=ses, weak_err=weaks, excluded=excludeds,
                         wall_s=walls, psi_names=list(prepared.psi_names),
                         fit=fit_loglog(eps_arr, strong), seeds=seeds,
                         config_hash=rc.config_hash,
                         notes={"coefficients": prepared.coefficients.to_dict()})
    if failure is not None:
        raise SweepFailure(failure, report=report)
    return report


def _gamma_matrix(nodes: np.ndarray, alpha: float, scale: float = 1.0) -> np.ndarray:
    """gamma(x_i / scale, x_j / scale) with a zero diagonal."""
    d = (nodes[None, :] - nodes[:, None]) / scale
    out = np.zeros_like(d)
    mask = d != 0.0
    out[mask] = d[mask] * np.abs(d[mask]) ** (-(3.0 + alpha) / 2.0)
    return out


def _interp_periodic(chi_slice: np.ndarray, points: np.ndarray) -> np.ndarray:
    m = chi_slice.size
    yg = np.concatenate([np.arange(m) / m, [1.0]])
    vals = np.concatenate([chi_slice, chi_slice[:1]])
    return np.interp(np.mod(points, 1.0), yg, vals)


def corrector_residual(eps: float, rc: RunConfig, seed: int,
                       prepared: PreparedExperiment | None = None) -> dict:
    """Two-scale reconstruction diagnostic (reported, not gated).

    Rebuilds u1 = -zeta(u_eff) * chi(x/eps, t/eps) and measures the discrete
    L^2(time x D x D) distance between the heterogeneous two-point field D* u_eps
    and the reconstruction D*_x u_eff + D*_y u1 sampled at the fast variables.
    Also returns the plain gradient-level error (chi term dropped), which the
    residual equals when the corrector vanishes.
    """
    if prepared is None:
        prepared = prepare_experiment(rc)
    res_het, res_eff, dt = _run_pair(eps, rc, seed, prepared)
    grid, alpha = prepared.grid, rc.alpha
    h = grid.h
    gam_x = _gamma_matrix(grid.nodes, alpha)
    gam_y = _gamma_matrix(grid.nodes, alpha, scale=eps)
    zmat = zeta_matrix(grid, alpha)
    chi = prepared.cell_solution.chi
    m_tau = chi.shape[1]
    y_fast = grid.nodes / eps

    total = 0.0
    baseline = 0.0
    n_steps = res_het.trajectory.shape[0] - 1
    for k in range(1, n_steps + 1):
        uh = res_het.trajectory[k]
        ue = res_eff.trajectory[k]
        dstar_het = -(uh[None, :] - uh[:, None]) * gam_x
        dstar_eff = -(ue[None, :] - ue[:, None]) * gam_x
        tau = (k * dt / eps) % 1.0
        s_idx = int(round(tau * m_tau)) % m_tau
        chi_fast = _interp_periodic(chi[:, s_idx], y_fast)
        zeta_vals = zmat @ ue
        recon = dstar_eff + zeta_vals[:, None] * (chi_fast[None, :] - chi_fast[:, None]) * gam_y
        total += float(np.sum(np.abs(dstar_het - recon) ** 2))
        baseline += float(np.sum(np.abs(dstar_het - dstar_eff) ** 2))
    norm = dt * h * h
    return {
        "residual": float(np.sqrt(norm * total)),
        "gradient_error": float(np.sqrt(norm * baseline)),
        "eps": eps,
        "seed": seed,
    }


def monte_carlo_se(values: np.ndarray) -> float:
    """Standard error of the mean estimator."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / np.sqrt(values.size))
