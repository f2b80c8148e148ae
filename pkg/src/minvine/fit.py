"""
Fitting minimum-information copulas to moment constraints.

Given basis functions ``h_1..h_k`` and target expectations ``alpha``, the
multipliers ``lambda`` are found by minimizing the sum of squared moment
residuals of the projected copula with Nelder-Mead.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .basis import MAX_WAVELET_ORDER, TensorBasis2D, parse_label
from .errors import InfeasibleMoments, InvalidConfig, MinVineError
from .grid import (
    DEFAULT_MAX_ITER, DEFAULT_TOL, DiscretizedCopula, KernelField, UnitGrid,
    d1ad2_project, kernel_from_exponent, log_density,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MomentConstraint:
    basis: TensorBasis2D
    target: float

    def __post_init__(self):
        if not np.isfinite(self.target):
            raise ValueError("moment target must be finite")


@dataclass(frozen=True)
class PairSample:
    """Pseudo-observations ``(u_t, v_t)`` in the unit square."""

    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float).ravel()
        v = np.asarray(self.v, dtype=float).ravel()
        if u.shape != v.shape or u.size == 0:
            raise ValueError("need equally many u and v values, at least one")
        if np.any(~np.isfinite(u)) or np.any(~np.isfinite(v)) \
                or u.min() < 0 or v.min() < 0 or u.max() > 1 or v.max() > 1:
            raise ValueError("pseudo-observations must lie in [0, 1]")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def from_rows(cls, rows) -> "PairSample":
        arr = np.asarray(rows, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    def __len__(self):
        return self.u.size


@dataclass(frozen=True)
class FitConfig:
    grid_n: int = 200
    dad_tol: float = DEFAULT_TOL
    dad_max_iter: int = DEFAULT_MAX_ITER
    optimizer: str = "nelder-mead"
    opt_tol: float = 1e-10
    opt_max_evals: int = 20000
    lambda_init: tuple | None = None
    simplex_edge: float = 0.1
    # infeasibility: no improvement above stall_gain over stall_window evals
    stall_window: int = 200
    stall_gain: float = 1e-14
    stall_floor: float = 1e-6

    def __post_init__(self):
        if int(self.grid_n) != self.grid_n or self.grid_n < 2:
            raise InvalidConfig("grid_n must be an integer >= 2")
        for name in ("dad_tol", "opt_tol", "simplex_edge"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive")
        if self.dad_max_iter < 1 or self.opt_max_evals < 1:
            raise InvalidConfig("iteration budgets must be positive")
        if self.optimizer != "nelder-mead":
            raise InvalidConfig(f"unsupported optimizer {self.optimizer!r}")
        if self.lambda_init is not None:
            object.__setattr__(self, "lambda_init", tuple(float(x) for x in self.lambda_init))


@dataclass(frozen=True)
class CopulaFit:
    constraints: tuple
    lambdas: np.ndarray
    copula: DiscretizedCopula = field(repr=False)
    log_likelihood: float
    residual: float
    evals_used: int

    @property
    def bases(self):
        return [c.basis for c in self.constraints]

    @property
    def alphas(self):
        return np.array([c.target for c in self.constraints])

    @property
    def labels(self):
        return [c.basis.label for c in self.constraints]

    def to_dict(self) -> dict:
        return {
            "bases": self.labels,
            "alphas": [float(a) for a in self.alphas],
            "lambdas": [float(x) for x in self.lambdas],
            "loglik": float(self.log_likelihood),
            "grid_n": int(self.copula.n),
            "residual": float(self.residual),
            "evals_used": int(self.evals_used),
        }

    @classmethod
    def from_dict(cls, data: dict, wavelet_order: int = MAX_WAVELET_ORDER,
                  dad_tol: float = DEFAULT_TOL,
                  dad_max_iter: int = DEFAULT_MAX_ITER) -> "CopulaFit":
        """Rebuild a fit; the copula is re-projected from the stored multipliers."""
        bases = [parse_label(s, wavelet_order) for s in data["bases"]]
        constraints = tuple(MomentConstraint(b, float(a))
                            for b, a in zip(bases, data["alphas"]))
        lambdas = np.array(data["lambdas"], dtype=float)
        fmap = _ForwardMap(bases, int(data["grid_n"]))
        copula = d1ad2_project(fmap.kernel(lambdas), dad_tol, dad_max_iter)
        return cls(constraints, lambdas, copula, float(data["loglik"]),
                   float(data["residual"]), int(data.get("evals_used", 0)))


def empirical_moments(sample: PairSample, bases) -> np.ndarray:
    """Sample means ``(1/N) sum_t h_k(u_t, v_t)``."""
    return np.array([float(np.mean(h(sample.u, sample.v))) for h in bases])


def sample_log_likelihood(copula: DiscretizedCopula, sample: PairSample) -> float:
    return float(np.sum(log_density(copula, sample.u, sample.v)))


class _ForwardMap:
    """lambda -> projected copula -> expectations, with basis values cached."""

    def __init__(self, bases, grid_n, dad_tol=DEFAULT_TOL, dad_max_iter=DEFAULT_MAX_ITER):
        self.grid = UnitGrid(grid_n)
        m = self.grid.midpoints
        self.left = np.array([h.left(m) for h in bases])
        self.right = np.array([h.right(m) for h in bases])
        self.dad_tol = dad_tol
        self.dad_max_iter = dad_max_iter

    def kernel(self, lambdas) -> KernelField:
        return kernel_from_exponent(self.grid, (self.left.T * lambdas) @ self.right)

    def copula(self, lambdas) -> DiscretizedCopula:
        return d1ad2_project(self.kernel(np.asarray(lambdas, dtype=float)),
                             self.dad_tol, self.dad_max_iter)

    def expectations(self, copula) -> np.ndarray:
        n = self.grid.n
        return np.einsum("ki,ij,kj->k", self.left, copula.density, self.right) / (n * n)


def residual_vector(lambdas, constraints, config: FitConfig = FitConfig()) -> np.ndarray:
    """Moment residuals ``E_lambda[h_l] - alpha_l`` on the configured grid."""
    lambdas = np.asarray(lambdas, dtype=float)
    if len(lambdas) != len(constraints):
        raise ValueError("need one lambda per constraint")
    fmap = _ForwardMap([c.basis for c in constraints], config.grid_n,
                       config.dad_tol, config.dad_max_iter)
    alphas = np.array([c.target for c in constraints])
    return fmap.expectations(fmap.copula(lambdas)) - alphas


class _Stop(Exception):
    pass


def solve_lambdas(constraints, config: FitConfig = FitConfig(),
                  sample: PairSample | None = None) -> CopulaFit:
    """Find multipliers whose copula reproduces the constraint targets.

    Minimizes ``L_sum = sum_l residual_l**2`` with Nelder-Mead from
    ``config.lambda_init`` (zeros by default), restarting from the best
    vertex if the simplex collapses before ``L_sum < opt_tol``.

    Raises
    ------
    InfeasibleMoments
        If ``L_sum`` stalls above ``stall_floor`` or the evaluation budget
        runs out; the targets are then likely outside the attainable set.
    ConvergenceFailure
        Propagated from the D1AD2 projection.
    """
    constraints = tuple(constraints)
    k = len(constraints)
    if k == 0:
        raise InvalidConfig("at least one constraint is required")
    alphas = np.array([c.target for c in constraints])
    fmap = _ForwardMap([c.basis for c in constraints], config.grid_n,
                       config.dad_tol, config.dad_max_iter)
    x0 = np.zeros(k) if config.lambda_init is None else np.array(config.lambda_init)
    if x0.shape != (k,):
        raise InvalidConfig("lambda_init length must match the constraints")

    state = {"evals": 0, "best_f": np.inf, "best_x": x0.copy(), "best_cop": None}
    history = []

    def objective(x):
        cop = fmap.copula(x)
        res = fmap.expectations(cop) - alphas
        f = float(res @ res)
        state["evals"] += 1
        if f < state["best_f"]:
            state.update(best_f=f, best_x=np.array(x), best_cop=cop)
        history.append(state["best_f"])
        if state["best_f"] < config.opt_tol:
            raise _Stop
        n = len(history)
        if n > config.stall_window and state["best_f"] > config.stall_floor \
                and history[n - 1 - config.stall_window] - state["best_f"] < config.stall_gain:
            raise _Stop
        if state["evals"] >= config.opt_max_evals:
            raise _Stop
        return f

    start = x0
    try:
        while True:
            simplex = np.vstack([start, start + config.simplex_edge * np.eye(k)])
            minimize(objective, start, method="Nelder-Mead",
                     options={"initial_simplex": simplex, "maxfev": config.opt_max_evals,
                              "xatol": 1e-12, "fatol": config.opt_tol * 1e-3,
                              "adaptive": False})
            # simplex collapsed without reaching tolerance: restart at the best vertex
            start = state["best_x"]
    except _Stop:
        pass

    if not state["best_f"] < config.opt_tol:
        raise InfeasibleMoments(
            f"moment residual stalled at {state['best_f']:.3e} after {state['evals']} "
            "evaluations; targets may lie outside the attainable set",
            lambdas=state["best_x"], residual=state["best_f"])

    cop = state["best_cop"]
    ll = sample_log_likelihood(cop, sample) if sample is not None else float("nan")
    return CopulaFit(constraints, state["best_x"], cop, ll, state["best_f"], state["evals"])


class StepwiseWarning(UserWarning):
    """A candidate basis could not be fitted and was skipped."""


def stepwise_select(candidates, sample: PairSample, k: int,
                    config: FitConfig = FitConfig()) -> list:
    """Greedy forward selection of ``k`` bases by sample log-likelihood.

    Each stage refits every remaining candidate together with the bases
    already chosen, warm-started from the previous multipliers, and keeps
    the one with the highest log-likelihood (first in list order on ties).

    Returns
    -------
    list of CopulaFit
        The fit after each stage.
    """
    candidates = list(candidates)
    if k < 1:
        raise InvalidConfig("k must be at least 1")
    if k > len(candidates):
        raise InvalidConfig(f"k={k} exceeds the {len(candidates)} candidates")
    targets = empirical_moments(sample, candidates)
    chosen = []
    prev = ()
    stages = []
    for stage in range(k):
        best = None
        for idx, cand in enumerate(candidates):
            if idx in chosen:
                continue
            idxs = chosen + [idx]
            constraints = [MomentConstraint(candidates[i], float(targets[i])) for i in idxs]
            cfg = replace(config, lambda_init=tuple(prev) + (0.0,))
            try:
                fit = solve_lambdas(constraints, cfg, sample)
            except MinVineError as exc:
                msg = f"stage {stage + 1}: skipped {cand.label}: {exc}"
                log.warning(msg)
                warnings.warn(msg, StepwiseWarning, stacklevel=2)
                continue
            if best is None or fit.log_likelihood > best[1].log_likelihood:
                best = (idx, fit)
        if best is None:
            raise InfeasibleMoments(f"no candidate could be fitted at stage {stage + 1}")
        chosen.append(best[0])
        prev = tuple(best[1].lambdas)
        stages.append(best[1])
        log.info("stage %d: %s, loglik %.4f", stage + 1,
                 candidates[best[0]].label, best[1].log_likelihood)
    return stages


def load_fixture(name_or_path) -> dict:
    """Load a reference-table fixture by bundled name or file path.

    A fixture holds ``bases`` (tensor labels), ``alphas``, optional
    ``expected_lambdas`` with a ``lambda_tolerance``, and a ``stage_trace``
    of ``{"added", "lambdas", "loglik"}`` records for replaying a stepwise run.
    """
    import json
    from importlib import resources
    from pathlib import Path

    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        return json.loads(path.read_text())
    ref = resources.files("minvine") / "fixtures" / f"{name_or_path}.json"
    return json.loads(ref.read_text())


def fixture_constraints(fixture: dict, wavelet_order: int = MAX_WAVELET_ORDER) -> list:
    return [MomentConstraint(parse_label(b, wavelet_order), float(a))
            for b, a in zip(fixture["bases"], fixture["alphas"])]
