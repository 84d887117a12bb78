"""Periodic unit-cell problems: the variational corrector solve and the
periodic nonlocal Poisson equation.

The cell bilinear form

    a(w, v) = int_{Y x N x Z} Theta(y, eta) (D*_y w) conj(D*_y v) dy deta dtau

is discretized on a uniform periodic y-grid with exact cell-pair kernel
moments.  Two kernel interpretations are supported:

* ``periodized`` (default): the eta-integration runs over the whole line,
  realized as an image sum over integer translates plus analytic tail
  corrections.  Weights are assembled with exact mirror symmetry so that for
  constant Theta the right-hand side cancels to rounding and the corrector
  vanishes identically.
* ``cell_truncated``: the kernel is restricted to the unit square (plain
  distances, no images); kept for sensitivity comparisons.

The linear functional ell(v) = int Theta conj(D*_y v) uses the matching odd
kernel moments; the corrector chi solves a(chi, v) = ell(v) for all v subject
to zero mean, enforced through a bordered (Lagrange) system.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .kernel import _check_alpha, _phi2
from .presets import ThetaSpec, VSpec

KERNEL_MODES = ("periodized", "cell_truncated")


class CellSolveError(RuntimeError):
    """Raised when the constrained corrector solve is ill-conditioned."""


@dataclass
class CellGrid:
    """Uniform periodic grids on the unit cell: m y-nodes, m_tau tau-nodes."""

    m: int
    m_tau: int = 1
    n_images: int = 8

    def __post_init__(self):
        if self.m < 8:
            raise ValueError("cell grid needs m >= 8")
        if self.m_tau < 1:
            raise ValueError("m_tau must be >= 1")
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.m) / self.m

    @property
    def tau(self) -> np.ndarray:
        return np.arange(self.m_tau) / self.m_tau


@dataclass
class CellSolution:
    """Mean-zero corrector values chi(y, tau) plus provenance and diagnostics."""

    chi: np.ndarray  # shape (m, m_tau)
    alpha: float
    kernel_mode: str
    m: int
    m_tau: int
    n_images: int
    theta_name: str
    residual: float
    slice_deviation: float
    xi: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def mean_abs(self) -> float:
        return float(np.max(np.abs(self.chi.mean(axis=0))))


def periodized_kernel_weight(y: float, eta: float, alpha: float, n_images: int) -> float:
    """Whole-line even kernel at periodic points: sum over integer images of
    |y - eta + k|^{-1-alpha} plus the analytic tail bound 2 (K + 1/2)^{-alpha} / alpha."""
    _check_alpha(alpha)
    d = y - eta
    if d == np.floor(d):
        raise ValueError("periodized kernel weight is singular at coincident points")
    k = np.arange(-n_images, n_images + 1)
    total = float(np.sum(np.abs(d + k) ** (-1.0 - alpha)))
    total += 2.0 * (n_images + 0.5) ** (-alpha) / alpha
    return total


def _psi_even(s: np.ndarray, alpha: float) -> np.ndarray:
    """Repeated antiderivative of |s|^{(1-alpha)/2} (even)."""
    return 4.0 * np.abs(s) ** ((5.0 - alpha) / 2.0) / ((3.0 - alpha) * (5.0 - alpha))


def _psi_odd(s: np.ndarray, alpha: float) -> np.ndarray:
    """Repeated antiderivative of sign(s) |s|^{-(1+alpha)/2} (odd)."""
    return 4.0 * np.sign(s) * np.abs(s) ** ((3.0 - alpha) / 2.0) / ((1.0 - alpha) * (3.0 - alpha))


def _q_even(d: np.ndarray, h: float, alpha: float) -> np.ndarray:
    """Cell-pair integral of |y-eta|^{-1-alpha} in difference-quotient form."""
    d = np.asarray(d, dtype=float)
    return (_phi2(d + h, alpha) - 2.0 * _phi2(d, alpha) + _phi2(d - h, alpha)) / d ** 2


def _q_odd_near(d: np.ndarray, h: float, alpha: float) -> np.ndarray:
    """Cell-pair integral of (eta-y) gamma(y,eta) divided by the nodal distance."""
    d = np.asarray(d, dtype=float)
    return (_psi_even(d + h, alpha) - 2.0 * _psi_even(d, alpha) + _psi_even(d - h, alpha)) / d


def _q_odd_far(d: np.ndarray, h: float, alpha: float) -> np.ndarray:
    """Exact cell-pair integral of the odd kernel gamma for well-separated cells."""
    d = np.asarray(d, dtype=float)
    return _psi_odd(d + h, alpha) - 2.0 * _psi_odd(d, alpha) + _psi_odd(d - h, alpha)


def _even_offset_weights(m: int, alpha: float, n_images: int, kernel_mode: str) -> np.ndarray:
    """Even pair weights per grid offset, mirror-exact: w[m - D] == w[D] bitwise."""
    h = 1.0 / m
    w = np.zeros(m)
    if kernel_mode == "cell_truncated":
        d = np.arange(1, m) * h
        w[1:] = _q_even(d, h, alpha)
        return w
    kk = np.arange(-n_images, n_images + 1)
    half = m // 2
    for delta in range(1, half + 1):
        d0 = delta * h
        val = float(np.sum(_q_even(d0 + kk, h, alpha)))
        val += h * h * ((n_images + 0.5 + d0) ** (-alpha)
                        + (n_images + 0.5 - d0) ** (-alpha)) / alpha
        w[delta] = val
        w[m - delta] = val
    return w


def _odd_offset_weights(m: int, alpha: float, n_images: int, kernel_mode: str) -> np.ndarray:
    """Odd pair weights per offset, antisymmetric bitwise: w[m - D] == -w[D]."""
    h = 1.0 / m
    w = np.zeros(m)
    p = (1.0 + alpha) / 2.0
    if kernel_mode == "cell_truncated":
        d = np.arange(1, m) * h
        w[1:] = _q_odd_near(d, h, alpha)
        return w
    kk = np.arange(-n_images, n_images + 1)
    kk = kk[kk != 0]
    half = m // 2
    for delta in range(1, half + 1):
        if 2 * delta == m:
            w[delta] = 0.0
            continue
        d0 = delta * h
        val = float(_q_odd_near(np.array([d0]), h, alpha)[0])
        val += float(np.sum(_q_odd_far(d0 + kk, h, alpha)))
        val += h * h * ((n_images + 0.5 - d0) ** (1.0 - p)
                        - (n_images + 0.5 + d0) ** (1.0 - p)) / (1.0 - p)
        w[delta] = val
        w[m - delta] = -val
    return w


def _theta_cell_matrix(theta: ThetaSpec, grid: CellGrid) -> np.ndarray | None:
    if theta.constant is not None:
        if theta.constant <= 0.0:
            raise ValueError("Theta must be strictly positive")
        return None
    y = grid.y
    tm = theta.sample(y[:, None], y[None, :])
    dev = float(np.max(np.abs(tm - tm.T)))
    if dev > 1e-10 * max(1.0, float(np.max(np.abs(tm)))):
        raise ValueError(f"theta preset {theta.name!r} is not symmetric (max dev {dev:.2e})")
    tm = 0.5 * (tm + tm.T)
    if float(tm.min()) <= 0.0:
        raise ValueError("Theta must be strictly positive on the cell grid")
    return tm


def _offset_matrix(w: np.ndarray, kernel_mode: str) -> np.ndarray:
    """Expand offset weights to a full (m, m) matrix W[j, l] = w[offset(j, l)]."""
    m = w.size
    j = np.arange(m)
    if kernel_mode == "periodized":
        idx = (j[None, :] - j[:, None]) % m
        return w[idx]
    return w[np.abs(j[None, :] - j[:, None])]


def _periodic_centered_difference(m: int) -> np.ndarray:
    h = 1.0 / m
    p = np.zeros((m, m))
    j = np.arange(m)
    p[j, (j + 1) % m] = 1.0 / (2.0 * h)
    p[j, (j - 1) % m] = -1.0 / (2.0 * h)
    return p


def assemble_cell_form(theta: ThetaSpec, alpha: float, grid: CellGrid,
                       kernel_mode: str = "periodized") -> np.ndarray:
    """Symmetric PSD matrix of the cell bilinear form on nodal values.

    Constants span the kernel exactly (row sums vanish identically); on the
    mean-zero subspace the form is positive definite.
    """
    _check_alpha(alpha)
    if kernel_mode not in KERNEL_MODES:
        raise ValueError(f"kernel_mode must be one of {KERNEL_MODES}")
    m, h = grid.m, 1.0 / grid.m
    w_off = _even_offset_weights(m, alpha, grid.n_images, kernel_mode)
    w = _offset_matrix(w_off, kernel_mode)
    tm = _theta_cell_matrix(theta, grid)
    if tm is not None:
        w = w * tm
        theta_diag = np.diag(tm).copy()
    else:
        w = w * theta.constant
        theta_diag = np.full(m, theta.constant)
    dg = np.diag(w.sum(axis=1))
    p = _periodic_centered_difference(m)
    c = 2.0 * _phi2(h, alpha) * (p.T * theta_diag) @ p
    a = 2.0 * (dg - w) + c
    return 0.5 * (a + a.T)


def assemble_cell_rhs(theta: ThetaSpec, alpha: float, grid: CellGrid,
                      kernel_mode: str = "periodized") -> np.ndarray:
    """Vector b with ell(v) = sum_j b_j conj(v_j) for the corrector right-hand side.

    For constant Theta in periodized mode the antisymmetric weights cancel
    exactly and b vanishes to rounding.
    """
    _check_alpha(alpha)
    if kernel_mode not in KERNEL_MODES:
        raise ValueError(f"kernel_mode must be one of {KERNEL_MODES}")
    m, h = grid.m, 1.0 / grid.m
    w_off = _odd_offset_weights(m, alpha, grid.n_images, kernel_mode)
    if kernel_mode == "periodized":
        w1 = _offset_matrix(w_off, kernel_mode)
    else:
        j = np.arange(m)
        signed = j[None, :] - j[:, None]
        w1 = np.sign(signed) * w_off[np.abs(signed)]
    tm = _theta_cell_matrix(theta, grid)
    if tm is None:
        tm = np.full((m, m), theta.constant)
    b = 2.0 * np.sum(tm * w1, axis=1)
    theta_diag = np.diag(tm)
    b += _psi_even(h, alpha) / h * (np.roll(theta_diag, -1) - np.roll(theta_diag, 1))
    return b


def solve_cell_problem(theta: ThetaSpec, alpha: float, grid: CellGrid,
                       kernel_mode: str = "periodized",
                       v_spec: VSpec | None = None) -> CellSolution:
    """Solve the mean-zero corrector problem per tau slice.

    Theta carries no tau argument, so the slices coincide; they are still
    solved independently and the largest cross-slice deviation is recorded.
    When ``v_spec`` is given the auxiliary corrector xi is computed with the
    spectral periodic Poisson solver and attached.
    """
    a = assemble_cell_form(theta, alpha, grid, kernel_mode)
    b = assemble_cell_rhs(theta, alpha, grid, kernel_mode)
    m = grid.m
    bordered = np.zeros((m + 1, m + 1))
    bordered[:m, :m] = a
    bordered[:m, m] = 1.0
    bordered[m, :m] = 1.0
    rhs = np.concatenate([b, [0.0]])

    slices = []
    residual = 0.0
    for _ in range(grid.m_tau):
        try:
            sol = np.linalg.solve(bordered, rhs)
        except np.linalg.LinAlgError as exc:
            raise CellSolveError(f"constrained cell solve failed: {exc}") from exc
        chi_s, lam = sol[:m], sol[m]
        res = float(np.linalg.norm(a @ chi_s + lam - b) / max(1.0, np.linalg.norm(b)))
        residual = max(residual, res)
        slices.append(chi_s)
    chi = np.stack(slices, axis=1)
    slice_dev = float(np.max(np.abs(chi - chi[:, :1]))) if grid.m_tau > 1 else 0.0
    chi = chi - chi.mean(axis=0, keepdims=True)
    if residual > 1e-8:
        raise CellSolveError(f"cell solve residual {residual:.2e} exceeds 1e-8 "
                             "(conditioning failure beyond the constraint kernel)")

    xi = None
    if v_spec is not None:
        xi = solve_periodic_poisson(v_spec, alpha, grid)

    return CellSolution(chi=chi, alpha=alpha, kernel_mode=kernel_mode, m=m,
                        m_tau=grid.m_tau, n_images=grid.n_images,
                        theta_name=theta.name, residual=residual,
                        slice_deviation=slice_dev, xi=xi)


@lru_cache(maxsize=64)
def fractional_symbol_factor(alpha: float) -> float:
    """I_alpha = 2 int_0^inf (1 - cos t) t^{-1-alpha} dt by adaptive quadrature;
    the whole-line symbol is mu(omega) = I_alpha |omega|^alpha.

    The nearly non-integrable t^{1-alpha} part at the origin is peeled off
    analytically (1 - cos t = t^2/2 - remainder with remainder ~ t^4/24), so
    the quadrature only sees smooth integrands.
    """
    _check_alpha(alpha)
    lead = np.pi ** (2.0 - alpha) / (2.0 * (2.0 - alpha))
    rem, _ = integrate.quad(
        lambda t: (0.5 * t * t - (1.0 - np.cos(t))) * t ** (-1.0 - alpha),
        0.0, np.pi, limit=200)
    osc, _ = integrate.quad(lambda t: t ** (-1.0 - alpha), np.pi, np.inf,
                            weight="cos", wvar=1.0, limit=200)
    far = np.pi ** (-alpha) / alpha - osc
    return 2.0 * (lead - rem + far)


def periodic_symbol(k: np.ndarray, alpha: float) -> np.ndarray:
    """Symbol of D_y D*_y on frequency-k periodic modes: 2 I_alpha (2 pi |k|)^alpha."""
    k = np.abs(np.asarray(k, dtype=float))
    return 2.0 * fractional_symbol_factor(alpha) * (2.0 * np.pi * k) ** alpha


def apply_periodic_generator(values: np.ndarray, alpha: float) -> np.ndarray:
    """Apply D_y D*_y spectrally along axis 0 (periodic unit cell)."""
    values = np.asarray(values)
    m = values.shape[0]
    k = np.fft.fftfreq(m) * m
    sym = periodic_symbol(k, alpha)
    shape = (m,) + (1,) * (values.ndim - 1)
    out = np.fft.ifft(sym.reshape(shape) * np.fft.fft(values, axis=0), axis=0)
    if np.isrealobj(values):
        return out.real
    return out


def solve_periodic_poisson(v_spec: VSpec, alpha: float, grid: CellGrid) -> np.ndarray:
    """Mean-zero xi with D_y D*_y xi = V per tau slice, solved in Fourier space.

    Rejects potentials whose y-mean does not vanish (the constrained problem
    is not solvable otherwise).
    """
    _check_alpha(alpha)
    v = v_spec.sample(grid.y[:, None], grid.tau[None, :])
    scale = max(1.0, float(np.max(np.abs(v))) if v.size else 1.0)
    means = np.abs(v.mean(axis=0))
    if float(means.max(initial=0.0)) > 1e-10 * scale:
        raise ValueError(
            f"potential {v_spec.name!r} has nonzero y-mean (max |mean| = {float(means.max()):.2e}); "
            "zero spatial mean is required for the periodic solve")
    m = grid.m
    k = np.fft.fftfreq(m) * m
    sym = periodic_symbol(k, alpha)
    sym[0] = 1.0
    v_hat = np.fft.fft(v, axis=0)
    xi_hat = v_hat / sym[:, None]
    xi_hat[0, :] = 0.0
    xi = np.fft.ifft(xi_hat, axis=0)
    return xi.real if np.isrealobj(v) else xi


def poisson_residual(xi: np.ndarray, v_spec: VSpec, alpha: float, grid: CellGrid) -> float:
    """Relative residual ||D_y D*_y xi - V||_2 / ||V||_2 over all tau slices."""
    v = v_spec.sample(grid.y[:, None], grid.tau[None, :])
    res = apply_periodic_generator(xi, alpha) - v
    denom = float(np.linalg.norm(v))
    if denom == 0.0:
        return float(np.linalg.norm(res))
    return float(np.linalg.norm(res) / denom)


def form_eigenvalues(a: np.ndarray) -> tuple[float, float, float]:
    """(most negative, smallest mean-zero-subspace, largest) eigenvalues of the form."""
    vals = np.linalg.eigvalsh(a)
    return float(vals[0]), float(vals[1]), float(vals[-1])
