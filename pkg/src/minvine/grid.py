"""
Discretized copula densities on a uniform n x n grid.

A kernel ``exp(sum_k lambda_k h_k(u, v))`` is sampled at cell midpoints and
rescaled by two diagonal matrices (the D1AD2 iteration) until every row and
column of ``n**2 * D1 A D2`` averages to one.  Densities are piecewise
constant on cells; all grid integrals use the midpoint rule.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceFailure, DomainError, NonFiniteError

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10000


@dataclass(frozen=True)
class UnitGrid:
    """``n`` equal cells per axis with midpoints ``(i - 1/2) / n``."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError("grid needs at least 2 cells per axis")

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) / self.n

    def cell_index(self, x):
        """Cell containing ``x``; the last cell is closed on the right."""
        x = np.asarray(x, dtype=float)
        return np.clip(np.floor(x * self.n).astype(int), 0, self.n - 1)


@dataclass(frozen=True)
class KernelField:
    grid: UnitGrid
    values: np.ndarray = field(repr=False)


def _check_unit(*arrays):
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if np.any(~np.isfinite(a)) or np.any(a < 0.0) or np.any(a > 1.0):
            raise DomainError("coordinates must lie in [0, 1]")


def eval_kernel(lambdas, bases, grid: UnitGrid) -> KernelField:
    """Sample ``exp(sum_k lambda_k h_k)`` at the grid midpoints.

    The exponent's maximum is subtracted first; D1AD2 is invariant to the
    resulting constant factor.
    """
    lambdas = np.asarray(lambdas, dtype=float).ravel()
    if len(lambdas) != len(bases) or len(bases) == 0:
        raise ValueError("need one lambda per basis function, and at least one")
    m = grid.midpoints
    expo = np.zeros((grid.n, grid.n))
    for lam, h in zip(lambdas, bases):
        if lam != 0.0:
            expo += lam * np.outer(h.left(m), h.right(m))
    return kernel_from_exponent(grid, expo)


def kernel_from_exponent(grid: UnitGrid, expo) -> KernelField:
    if not np.all(np.isfinite(expo)):
        raise NonFiniteError("non-finite exponent in kernel evaluation")
    values = np.exp(expo - expo.max())
    if not values.min() > 0.0:
        raise NonFiniteError("kernel underflows to zero; multipliers are too large")
    return KernelField(grid, values)


@dataclass(frozen=True)
class DiscretizedCopula:
    """A cell-constant copula density with uniform margins.

    Attributes
    ----------
    density : ndarray, shape (n, n)
        Density values; row index follows ``u``, column index ``v``.
    d1, d2 : ndarray
        Row and column scaling vectors.
    error_trace : tuple of float
        Marginal deviation after each sweep.
    """

    grid: UnitGrid
    density: np.ndarray = field(repr=False)
    d1: np.ndarray = field(repr=False)
    d2: np.ndarray = field(repr=False)
    iterations_used: int = 0
    final_marginal_error: float = 0.0
    error_trace: tuple = field(default=(), repr=False)

    @classmethod
    def from_density(cls, density) -> "DiscretizedCopula":
        """Wrap an existing density array without projecting it."""
        density = np.array(density, dtype=float)
        n = density.shape[0]
        if density.shape != (n, n):
            raise ValueError("density must be square")
        return cls(UnitGrid(n), density, np.ones(n), np.ones(n), 0,
                   marginal_error(density))

    @classmethod
    def independence(cls, n: int) -> "DiscretizedCopula":
        return cls.from_density(np.ones((n, n)))

    @property
    def n(self) -> int:
        return self.grid.n

    def transpose(self) -> "DiscretizedCopula":
        """The copula of ``(V, U)``."""
        return DiscretizedCopula(self.grid, self.density.T, self.d2, self.d1,
                                 self.iterations_used, self.final_marginal_error,
                                 self.error_trace)

    def expectation(self, h) -> float:
        return expectation(self, h)

    def log_density(self, u, v):
        return log_density(self, u, v)

    def conditional_cdf(self, v, given_u):
        return conditional_cdf(self, v, given_u)

    def inverse_conditional_cdf(self, p, given_u):
        return inverse_conditional_cdf(self, p, given_u)

    @property
    def _row_cdf(self):
        # normalized cumulative row sums, shape (n, n + 1); cached on first use
        cached = self.__dict__.get("_row_cdf_cache")
        if cached is None:
            w = self.density
            cum = np.zeros((self.n, self.n + 1))
            np.cumsum(w, axis=1, out=cum[:, 1:])
            cum /= cum[:, -1:]
            cum[:, -1] = 1.0
            object.__setattr__(self, "_row_cdf_cache", cum)
            cached = cum
        return cached

    def write_csv(self, path):
        np.savetxt(path, self.density, delimiter=",", fmt="%.17g",
                   header=f"# minvine density n={self.n}", comments="")


def read_density_csv(path) -> DiscretizedCopula:
    return DiscretizedCopula.from_density(np.loadtxt(path, delimiter=",", comments="#"))


def marginal_error(density) -> float:
    """Largest deviation of a row or column mean from one."""
    return float(max(np.max(np.abs(density.mean(axis=1) - 1.0)),
                     np.max(np.abs(density.mean(axis=0) - 1.0))))


def d1ad2_project(kernel: KernelField, tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER) -> DiscretizedCopula:
    """Scale a positive kernel to a doubly-stochastic copula density.

    Alternates full sweeps ``d1 <- 1 / (n A d2)`` and ``d2 <- 1 / (n A^T d1)``
    from all-ones vectors until the largest marginal deviation of
    ``n**2 d1_i d2_j a_ij`` falls below ``tol``.

    Raises
    ------
    ConvergenceFailure
        When ``max_iter`` sweeps do not reach ``tol``; carries the last
        iterate and its error.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    A = kernel.values
    n = kernel.grid.n
    d1 = np.ones(n)
    d2 = np.ones(n)
    trace = []
    err = np.inf
    for it in range(1, max_iter + 1):
        d1 = 1.0 / (n * (A @ d2))
        col = A.T @ d1
        d2 = 1.0 / (n * col)
        # columns are exact after the d2 update up to rounding
        row_err = np.max(np.abs(n * d1 * (A @ d2) - 1.0))
        col_err = np.max(np.abs(n * d2 * col - 1.0))
        err = float(max(row_err, col_err))
        trace.append(err)
        if err < tol or not np.isfinite(err):
            break
    density = (n * n) * d1[:, None] * A * d2[None, :]
    result = DiscretizedCopula(kernel.grid, density, d1, d2, it, err, tuple(trace))
    if not err < tol:
        raise ConvergenceFailure(
            f"D1AD2 stopped at marginal error {err:.3e} after {it} sweeps",
            best=result, error=err)
    return result


def expectation(copula: DiscretizedCopula, h) -> float:
    """Midpoint-rule expectation ``(1/n^2) sum_ij density_ij h(u_i, v_j)``."""
    m = copula.grid.midpoints
    lv = h.left(m)
    rv = h.right(m)
    return float(lv @ copula.density @ rv) / copula.n ** 2


def log_density(copula: DiscretizedCopula, u, v):
    """Log density of the cell containing ``(u, v)``; ``-inf`` on empty cells."""
    _check_unit(u, v)
    i = copula.grid.cell_index(u)
    j = copula.grid.cell_index(v)
    with np.errstate(divide="ignore"):
        out = np.log(copula.density[i, j])
    return out if np.ndim(out) else float(out)


def conditional_cdf(copula: DiscretizedCopula, v, given_u):
    """``P(V <= v | U = given_u)`` for the cell-constant density.

    Piecewise linear in ``v``; 0 at ``v = 0`` and 1 at ``v = 1``.
    """
    _check_unit(v, given_u)
    v = np.asarray(v, dtype=float)
    n = copula.n
    cum = copula._row_cdf
    i = copula.grid.cell_index(given_u)
    k = copula.grid.cell_index(v)
    frac = v * n - k
    lo = cum[i, k]
    out = lo + (cum[i, k + 1] - lo) * frac
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def inverse_conditional_cdf(copula: DiscretizedCopula, p, given_u):
    """Solve ``conditional_cdf(v, given_u) = p`` for ``v``."""
    _check_unit(p, given_u)
    p, given_u = np.broadcast_arrays(np.asarray(p, dtype=float),
                                     np.asarray(given_u, dtype=float))
    n = copula.n
    cum = copula._row_cdf
    i = copula.grid.cell_index(given_u)
    # rows are searched together by offsetting row r into [2r, 2r + 1]
    offset = 2.0 * np.arange(n)
    flat = (cum + offset[:, None]).ravel()
    pos = np.searchsorted(flat, p + offset[i], side="right") - 1
    k = np.clip(pos - i * (n + 1), 0, n - 1)
    lo = cum[i, k]
    width = cum[i, k + 1] - lo
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(width > 0, (p - lo) / width, 0.0)
    out = np.clip((k + np.clip(frac, 0.0, 1.0)) / n, 0.0, 1.0)
    return out if out.ndim else float(out)
