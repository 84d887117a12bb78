"""Ito time integration of the heterogeneous and effective equations on
coupled Brownian paths.

The evolution is i du = (G + P(t)) u dt + g(u) dW + f dt with G the assembled
generator and P(t) the real oscillating-potential diagonal
eps^{(1-alpha)/2} V(x/eps mod 1, t/eps mod 1) (heterogeneous runs only).
One step of the theta scheme solves

    (I + i theta dt H_n) u_{n+1} = (I - i (1-theta) dt H_n) u_n
                                   - i g(u_n) dW_n - i f(t_n) dt

with the noise evaluated at the left endpoint (Ito).  The real potential
diagonal is rebuilt every step and frozen at the theta point t_n + theta dt of
the step (the midpoint for theta = 1/2, which preserves second-order temporal
accuracy; each frozen step is still a Hermitian Cayley map, so norms are
conserved when g = f = 0).  Factorizations are cached on the fractional part
of the sampling time over eps, which cycles when dt / eps is rational (e.g.
the dt = eps/8 sweep rule).

Brownian increments come from a counter-based generator (Philox) keyed by
(seed, refinement level), so paths are reproducible and refinable in place:
halving dt uses the Brownian bridge, and the two half increments sum to the
parent increment exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .kernel import Grid1D, KernelParams, OperatorMatrix, assemble_heterogeneous_generator
from .effective import EffectiveCoefficients, assemble_effective_generator
from .presets import FSpec, HSpec, ThetaSpec, VSpec, get_f, get_h, get_theta, get_v

BLOWUP_LIMIT = 1e12


class TrajectoryBlowup(RuntimeError):
    """Raised when a trajectory leaves the finite range; carries the step index."""

    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"trajectory diverged at step {step}{(': ' + detail) if detail else ''}")
        self.step = step


class LinearSolveError(RuntimeError):
    """Raised when the implicit step cannot be solved; carries a condition estimate."""


@dataclass(frozen=True)
class NoiseModel:
    """Noise intensity g: zero, linear g(u) = sigma u, or bounded
    g(u) = sigma u / (1 + |u|) pointwise; all globally Lipschitz."""

    kind: str = "zero"
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "linear", "bounded"):
            raise ValueError("noise kind must be zero, linear, or bounded")
        if self.sigma < 0.0:
            raise ValueError("sigma must be nonnegative")

    def apply(self, u: np.ndarray) -> np.ndarray | None:
        if self.kind == "zero" or self.sigma == 0.0:
            return None
        if self.kind == "linear":
            return self.sigma * u
        return self.sigma * u / (1.0 + np.abs(u))


@dataclass
class BrownianPath:
    """Reproducible Gaussian increments; ``level`` counts bridge refinements."""

    seed: int
    n_steps: int
    dt: float
    increments: np.ndarray
    level: int = 0

    def refine(self) -> "BrownianPath":
        """Brownian-bridge refinement to step dt/2 on the same underlying path.

        The second half of each pair is defined as parent minus first half, so
        the pair sums reproduce the parent increments up to one final rounding
        (at most one ulp; splitting a double into two rounded halves cannot be
        bit-exact in general).
        """
        xi = _stream(self.seed, self.level + 1).standard_normal(self.n_steps)
        first = 0.5 * self.increments + 0.5 * np.sqrt(self.dt) * xi
        second = self.increments - first
        fine = np.empty(2 * self.n_steps)
        fine[0::2] = first
        fine[1::2] = second
        return BrownianPath(seed=self.seed, n_steps=2 * self.n_steps,
                            dt=self.dt / 2.0, increments=fine, level=self.level + 1)


def _stream(seed: int, level: int) -> np.random.Generator:
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(level)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def brownian_increments(seed: int, n_steps: int, dt: float) -> BrownianPath:
    """Counter-based N(0, dt) increments; identical (seed, n_steps, dt) give
    bitwise-identical paths."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    inc = _stream(seed, 0).standard_normal(n_steps) * np.sqrt(dt)
    return BrownianPath(seed=seed, n_steps=n_steps, dt=dt, increments=inc)


@dataclass(frozen=True)
class Heterogeneous:
    """Run the oscillating-coefficient system at scale epsilon."""

    epsilon: float

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class Effective:
    """Run the homogenized system with fixed coefficients."""

    coeffs: EffectiveCoefficients


@dataclass
class SimConfig:
    """Everything one trajectory needs besides the system choice and the path."""

    grid: Grid1D
    alpha: float
    T: float
    theta_scheme: float = 0.5
    theta: ThetaSpec = field(default_factory=lambda: get_theta("one"))
    v_spec: VSpec = field(default_factory=lambda: get_v("zero"))
    f_spec: FSpec = field(default_factory=lambda: get_f("zero"))
    h_spec: HSpec = field(default_factory=lambda: get_h("parabola"))
    noise: NoiseModel = field(default_factory=NoiseModel)
    kernel_mode: str = "periodized"

    def __post_init__(self):
        if not 0.0 <= self.theta_scheme <= 1.0:
            raise ValueError("theta_scheme must lie in [0, 1]")
        if self.T <= 0.0:
            raise ValueError("horizon T must be positive")

    def initial_field(self) -> np.ndarray:
        return self.h_spec.sample(self.grid.nodes, self.grid.h)


@dataclass
class SimResult:
    """Time series of one trajectory: discrete norms, masses, and states."""

    times: np.ndarray
    norm2: np.ndarray
    re_mass: np.ndarray
    im_mass: np.ndarray
    trajectory: np.ndarray | None
    snapshots: dict[int, np.ndarray]
    final: np.ndarray


def theta_step(u: np.ndarray, generator: OperatorMatrix | np.ndarray, dt: float,
               dW: float, *, v_diag: np.ndarray | None = None,
               f_vec: np.ndarray | None = None, theta_scheme: float = 0.5,
               noise: NoiseModel | None = None) -> np.ndarray:
    """One theta-scheme step; convenience entry point that factorizes on the fly.

    ``simulate`` uses the same update with cached factorizations.
    """
    g_mat = generator.entries if isinstance(generator, OperatorMatrix) else np.asarray(generator)
    n = g_mat.shape[0]
    hu = g_mat @ u
    if v_diag is not None:
        hu = hu + v_diag * u
    rhs = u - 1j * (1.0 - theta_scheme) * dt * hu
    if noise is not None:
        gu = noise.apply(u)
        if gu is not None:
            rhs = rhs - 1j * gu * dW
    if f_vec is not None:
        rhs = rhs - 1j * f_vec * dt
    lhs = np.eye(n, dtype=complex) + 1j * theta_scheme * dt * g_mat
    if v_diag is not None:
        lhs[np.diag_indices(n)] += 1j * theta_scheme * dt * v_diag
    try:
        return np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        cond = float(np.linalg.cond(lhs))
        raise LinearSolveError(f"implicit step failed (cond ~ {cond:.2e}): {exc}") from exc


def _build_generator(system: Heterogeneous | Effective, cfg: SimConfig) -> np.ndarray:
    if isinstance(system, Heterogeneous):
        params = KernelParams(alpha=cfg.alpha, theta=cfg.theta,
                              epsilon=system.epsilon, kernel_mode=cfg.kernel_mode)
        return assemble_heterogeneous_generator(cfg.grid, params).entries
    if isinstance(system, Effective):
        return assemble_effective_generator(system.coeffs, cfg.grid, cfg.alpha).entries
    raise TypeError("system must be Heterogeneous(eps) or Effective(coeffs)")


def simulate(system: Heterogeneous | Effective, cfg: SimConfig, path: BrownianPath,
             *, store_trajectory: bool = True, snapshot_every: int | None = None,
             generator: OperatorMatrix | np.ndarray | None = None) -> SimResult:
    """Integrate one trajectory over [0, T] on the given Brownian path.

    The heterogeneous system applies the eps^{(1-alpha)/2} potential
    amplification exactly as written (the factor grows as eps -> 0).
    Divergence (non-finite values or magnitudes beyond 1e12) raises
    TrajectoryBlowup with the failing step index.
    """
    grid, alpha = cfg.grid, cfg.alpha
    n, h = grid.n, grid.h
    dt, n_steps = path.dt, path.n_steps
    if abs(n_steps * dt - cfg.T) > 1e-10 * max(1.0, cfg.T):
        raise ValueError(f"path covers {n_steps * dt}, config horizon is {cfg.T}")

    if generator is None:
        g_mat = _build_generator(system, cfg)
    else:
        g_mat = generator.entries if isinstance(generator, OperatorMatrix) else np.asarray(generator)

    het = isinstance(system, Heterogeneous)
    has_potential = het and not cfg.v_spec.is_zero
    if has_potential:
        eps = system.epsilon
        amp = eps ** ((1.0 - alpha) / 2.0)
        y_frac = np.mod(grid.nodes / eps, 1.0)

    identity = np.eye(n, dtype=complex)
    theta_s = cfg.theta_scheme
    lu_cache: dict[float | None, tuple] = {}

    def factorized(v_diag: np.ndarray | None, key):
        if key in lu_cache:
            return lu_cache[key]
        lhs = identity + 1j * theta_s * dt * g_mat
        if v_diag is not None:
            lhs[np.diag_indices(n)] += 1j * theta_s * dt * v_diag
        try:
            fac = lu_factor(lhs)
        except np.linalg.LinAlgError as exc:
            raise LinearSolveError(f"implicit factorization failed: {exc}") from exc
        if len(lu_cache) >= 64:
            lu_cache.pop(next(iter(lu_cache)))
        lu_cache[key] = fac
        return fac

    u = cfg.initial_field().astype(complex)
    times = np.linspace(0.0, cfg.T, n_steps + 1)
    norm2 = np.empty(n_steps + 1)
    re_mass = np.empty(n_steps + 1)
    im_mass = np.empty(n_steps + 1)
    traj = np.empty((n_steps + 1, n), dtype=complex) if store_trajectory else None
    snapshots: dict[int, np.ndarray] = {}

    def record(k: int, state: np.ndarray):
        norm2[k] = h * float(np.sum(np.abs(state) ** 2))
        re_mass[k] = h * float(np.sum(state.real))
        im_mass[k] = h * float(np.sum(state.imag))
        if traj is not None:
            traj[k] = state
        if snapshot_every is not None and k % snapshot_every == 0:
            snapshots[k] = state.copy()

    record(0, u)
    for k in range(n_steps):
        t_n = k * dt
        if has_potential:
            # frozen-coefficient diagonal, sampled at the theta point of the
            # step (midpoint for theta = 1/2, which keeps second-order accuracy
            # in time); the Ito left-point rule applies to the noise term only
            tau = ((t_n + theta_s * dt) / eps) % 1.0
            key = round(tau, 12)
            v_diag = amp * cfg.v_spec.sample(y_frac, tau)
        else:
            key, v_diag = None, None

        hu = g_mat @ u
        if v_diag is not None:
            hu = hu + v_diag * u
        rhs = u - 1j * (1.0 - theta_s) * dt * hu
        gu = cfg.noise.apply(u)
        if gu is not None:
            rhs = rhs - 1j * gu * path.increments[k]
        f_vec = cfg.f_spec.sample(t_n, grid.nodes)
        if f_vec is not None:
            rhs = rhs - 1j * f_vec * dt

        u = lu_solve(factorized(v_diag, key), rhs)
        if not np.all(np.isfinite(u.view(float))) or float(np.max(np.abs(u))) > BLOWUP_LIMIT:
            raise TrajectoryBlowup(k + 1)
        record(k + 1, u)

    return SimResult(times=times, norm2=norm2, re_mass=re_mass, im_mass=im_mass,
                     trajectory=traj, snapshots=snapshots, final=u)
