"""Weighted sum-rate power allocation by successive geometric programming.

Two solver routes share one problem definition:

* ``backend="newton"`` runs the compiled kernel in :mod:`._gp_kernel`;
* ``backend="scipy"`` builds explicit :class:`Posynomial` objects, condenses
  them with :func:`condense` and solves every GP with :func:`solve_gp`.

:func:`grid_oracle` is an exhaustive search used to check both.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from . import _gp_kernel as kernel
from .modes import LinkBudget, gain_matrix

FORMS = {"product": kernel.FORM_PRODUCT, "sum": kernel.FORM_SUM}
INITS = {"half": 0, "geometric": 1, "search": 2}


class GPInfeasibleError(ValueError):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Posynomial:
    """``sum_i c_i prod_j x_j^{a_ij}`` with ``c_i > 0``."""

    coefficients: np.ndarray
    exponents: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        a = np.atleast_2d(np.asarray(self.exponents, dtype=float))
        if a.shape[0] != c.shape[0]:
            raise ValueError("one exponent row per coefficient")
        if np.any(~(c > 0)) or not np.all(np.isfinite(c)):
            raise ValueError("posynomial coefficients must be positive and finite")
        if not np.all(np.isfinite(a)):
            raise ValueError("exponents must be finite")
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "exponents", a)

    @classmethod
    def monomial(cls, coefficient: float, exponents) -> "Posynomial":
        return cls(np.array([coefficient]), np.asarray(exponents, dtype=float)[None, :])

    @classmethod
    def constant(cls, value: float, nvars: int) -> "Posynomial":
        return cls.monomial(value, np.zeros(nvars))

    @property
    def nvars(self) -> int:
        return self.exponents.shape[1]

    @property
    def is_monomial(self) -> bool:
        return self.coefficients.shape[0] == 1

    def terms(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.coefficients * np.prod(x[None, :] ** self.exponents, axis=1)

    def __call__(self, x) -> float:
        return float(self.terms(x).sum())

    def log_value(self, y) -> float:
        return float(logsumexp(self.exponents @ y + np.log(self.coefficients)))

    def log_grad(self, y) -> np.ndarray:
        z = self.exponents @ y + np.log(self.coefficients)
        weights = np.exp(z - logsumexp(z))
        return weights @ self.exponents

    def __add__(self, other: "Posynomial") -> "Posynomial":
        return Posynomial(np.concatenate([self.coefficients, other.coefficients]),
                          np.vstack([self.exponents, other.exponents]))

    def __mul__(self, other: "Posynomial") -> "Posynomial":
        c = np.outer(self.coefficients, other.coefficients).ravel()
        a = (self.exponents[:, None, :] + other.exponents[None, :, :]).reshape(-1, self.nvars)
        return Posynomial(c, a)

    def __truediv__(self, other: "Posynomial") -> "Posynomial":
        if not other.is_monomial:
            raise ValueError("can only divide by a monomial")
        return Posynomial(self.coefficients / other.coefficients[0],
                          self.exponents - other.exponents[0])


def condense(posynomial: Posynomial, point) -> Posynomial:
    """Monomial under-estimator of ``posynomial`` that is tight at ``point``.

    Uses the weighted AM-GM inequality with weights ``u_i(point) / g(point)``.
    """
    x = np.asarray(point, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("condensation point must be strictly positive")
    u = posynomial.terms(x)
    total = u.sum()
    if not total > 0:
        raise ValueError("posynomial vanishes at the condensation point")
    alpha = u / total
    keep = alpha > 0
    alpha, c, a = alpha[keep], posynomial.coefficients[keep], posynomial.exponents[keep]
    coefficient = float(np.exp(np.sum(alpha * (np.log(c) - np.log(alpha)))))
    return Posynomial.monomial(coefficient, alpha @ a)


def _objective_parts(objective, weights):
    if isinstance(objective, Posynomial):
        return [objective], np.ones(1)
    parts = list(objective)
    w = np.ones(len(parts)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(parts),) or np.any(w < 0):
        raise ValueError("need one non-negative weight per objective factor")
    return parts, w


def solve_gp(objective, constraints: Sequence[Posynomial] = (), bounds=None, weights=None,
             form: str = "product", x0=None, tol: float = 1e-12) -> np.ndarray:
    """Minimize a GP in log variables.

    ``objective`` is a posynomial or a list of posynomials ``P_k``; with
    weights ``w_k`` the minimized quantity is ``prod_k P_k^{w_k}``
    (``form="product"``) or ``sum_k P_k^{w_k}`` (``form="sum"``). Both are
    convex after the change of variables ``x = exp(y)``. ``constraints`` are
    posynomials required to be ``<= 1``; ``bounds`` is a sequence of
    ``(lower, upper)`` pairs with ``0 < lower``.
    """
    parts, w = _objective_parts(objective, weights)
    n = parts[0].nvars
    if form not in FORMS:
        raise ValueError(f"form must be one of {sorted(FORMS)}")
    if bounds is None:
        log_bounds = [(None, None)] * n
    else:
        log_bounds = [(np.log(lo) if lo is not None else None, np.log(hi) if hi is not None else None)
                      for lo, hi in bounds]

    def f(y):
        vals = np.array([p.log_value(y) for p in parts]) * w
        return vals.sum() if form == "product" else logsumexp(vals)

    def grad(y):
        grads = np.array([p.log_grad(y) for p in parts]) * w[:, None]
        if form == "product":
            return grads.sum(axis=0)
        vals = np.array([p.log_value(y) for p in parts]) * w
        s = np.exp(vals - logsumexp(vals))
        return s @ grads

    if x0 is None:
        y0 = np.array([0.5 * (lo + hi) if lo is not None and hi is not None
                       else (hi - 1.0 if hi is not None else (lo + 1.0 if lo is not None else 0.0))
                       for lo, hi in log_bounds])
    else:
        y0 = np.log(np.asarray(x0, dtype=float))

    cons = [{"type": "ineq", "fun": (lambda y, c=c: -c.log_value(y)),
             "jac": (lambda y, c=c: -c.log_grad(y))} for c in constraints]
    if cons and max(c.log_value(y0) for c in constraints) > 0:
        y0 = _phase_one(constraints, log_bounds, y0)

    if cons:
        res = minimize(f, y0, jac=grad, bounds=log_bounds, constraints=cons, method="SLSQP",
                       options={"ftol": tol, "maxiter": 500})
    else:
        res = minimize(f, y0, jac=grad, bounds=log_bounds, method="L-BFGS-B",
                       options={"ftol": tol, "gtol": 1e-12, "maxiter": 2000})
    y = res.x
    for lo_hi, j in zip(log_bounds, range(n)):
        lo, hi = lo_hi
        if lo is not None:
            y[j] = max(y[j], lo)
        if hi is not None:
            y[j] = min(y[j], hi)
    for c in constraints:
        if c.log_value(y) > 1e-8:
            raise GPInfeasibleError("solver returned a point violating a constraint")
    return np.exp(y)


def _phase_one(constraints, log_bounds, y0):
    """Minimize the worst log-constraint; raises if it stays positive."""
    n = y0.shape[0]

    def worst(z):
        return z[-1]

    cons = [{"type": "ineq", "fun": (lambda z, c=c: z[-1] - c.log_value(z[:-1]))} for c in constraints]
    s0 = max(c.log_value(y0) for c in constraints) + 1.0
    res = minimize(worst, np.append(y0, s0), bounds=list(log_bounds) + [(None, None)],
                   constraints=cons, method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    y = res.x[:n]
    if max(c.log_value(y) for c in constraints) > 1e-8:
        raise GPInfeasibleError("constraint set is infeasible")
    return y


@dataclass
class SolverOptions:
    rel_tol: float = 1e-4
    max_iterations: int = 30
    init: str = "search"
    objective: str = "product"
    min_power_fraction: float = 1e-6
    newton_tol: float = 1e-10
    backend: str = "newton"

    def validate(self):
        if self.init not in INITS:
            raise ValueError(f"init must be one of {sorted(INITS)}")
        if self.objective not in FORMS:
            raise ValueError(f"objective must be one of {sorted(FORMS)}")
        if self.backend not in ("newton", "scipy"):
            raise ValueError("backend must be 'newton' or 'scipy'")
        if not 0 < self.rel_tol < 1 or self.max_iterations < 1:
            raise ValueError("need 0 < rel_tol < 1 and max_iterations >= 1")
        if not 0 < self.min_power_fraction < 1:
            raise ValueError("min_power_fraction must be in (0, 1)")
        return self


@dataclass
class WeightedRateProblem:
    """``gains[l, j]``: gain from link ``j``'s transmitter into link ``l``'s
    receiver; weights are per-link back-pressure weights (bits).

    With ``rate_cap`` (bits/s/Hz) every link's spectral efficiency saturates
    at the cap; None leaves the objective uncapped.
    """

    gains: np.ndarray
    noise: np.ndarray
    weights: np.ndarray
    max_power: np.ndarray
    links: list | None = None
    rate_cap: float | None = None

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float)
        self.noise = np.asarray(self.noise, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.max_power = np.asarray(self.max_power, dtype=float)
        k = self.noise.shape[0]
        if self.gains.shape != (k, k) or self.weights.shape != (k,) or self.max_power.shape != (k,):
            raise ValueError("inconsistent problem dimensions")
        if np.any(self.gains < 0) or not np.all(np.isfinite(self.gains)):
            raise ValueError("gains must be finite and non-negative")
        if np.any(~(self.noise > 0)):
            raise ValueError("noise must be positive")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")
        if np.any(~(self.max_power > 0)):
            raise ValueError("power bounds must be positive")
        if self.rate_cap is not None and not self.rate_cap > 0:
            raise ValueError("rate_cap must be positive")

    @classmethod
    def from_budgets(cls, budgets: Sequence[LinkBudget], weights, max_power,
                     rate_cap: float | None = None) -> "WeightedRateProblem":
        G, noise = gain_matrix(budgets)
        return cls(G, noise, weights, max_power, links=[b.link for b in budgets], rate_cap=rate_cap)

    @property
    def cap(self) -> float:
        return np.inf if self.rate_cap is None else float(self.rate_cap)

    @property
    def size(self) -> int:
        return self.noise.shape[0]

    def sinr(self, powers) -> np.ndarray:
        p = np.asarray(powers, dtype=float)
        received = self.gains * p[None, :]
        signal = np.diag(received)
        return signal / (received.sum(axis=1) - signal + self.noise)

    def spectral_efficiency(self, powers) -> np.ndarray:
        return np.minimum(np.log2(1.0 + self.sinr(powers)), self.cap)

    def weighted_sum_rate(self, powers) -> float:
        """``sum_l W_l log2(1 + SINR_l)``, each term capped when ``rate_cap`` is set."""
        return float(np.sum(self.weights * self.spectral_efficiency(powers)))

    def link_posynomials(self) -> tuple[list[Posynomial], list[Posynomial]]:
        """SINR denominators ``D_l = S_l + I_l + N_l`` and ``I_l + N_l`` as posynomials."""
        k = self.size
        full, interference = [], []
        for l in range(k):
            coeffs, exps = [self.noise[l]], [np.zeros(k)]
            for j in range(k):
                if j != l and self.gains[l, j] > 0:
                    coeffs.append(self.gains[l, j])
                    exps.append(np.eye(k)[j])
            interference.append(Posynomial(np.array(coeffs), np.array(exps)))
            if self.gains[l, l] > 0:
                full.append(interference[-1] + Posynomial.monomial(self.gains[l, l], np.eye(k)[l]))
            else:
                full.append(interference[-1])
        return full, interference


@dataclass
class PowerResult:
    powers: np.ndarray
    weighted_sum_rate: float
    history: np.ndarray = field(repr=False)
    iterations: int = 0
    converged: bool = True

    def allocation(self, links) -> dict:
        return {link: float(p) for link, p in zip(links, self.powers)}


def _normalized_weights(weights):
    w = np.asarray(weights, dtype=float)
    top = w.max() if w.size else 0.0
    return w / top if top > 0 else np.ones_like(w)


def optimize_powers(problem: WeightedRateProblem, options: SolverOptions | None = None) -> PowerResult:
    """Successive-GP power allocation; never raises on non-convergence
    (``converged=False`` plus a :class:`ConvergenceWarning`)."""
    options = (options or SolverOptions()).validate()
    if problem.size == 0:
        return PowerResult(np.zeros(0), 0.0, np.zeros(1))
    if options.backend == "scipy":
        result = _optimize_reference(problem, options)
    else:
        history = np.full(options.max_iterations + 1, np.nan)
        p, iters, converged = kernel.optimize(
            problem.gains, problem.noise, problem.weights, problem.max_power,
            INITS[options.init], options.min_power_fraction, FORMS[options.objective],
            problem.cap, options.rel_tol, options.max_iterations, options.newton_tol, history)
        result = PowerResult(np.minimum(p, problem.max_power), 0.0, history[: iters + 1], iters, converged)
    result.weighted_sum_rate = problem.weighted_sum_rate(result.powers)
    if not result.converged:
        warnings.warn(f"power allocation stopped after {result.iterations} iterations",
                      ConvergenceWarning, stacklevel=2)
    return result


def true_objective(problem: WeightedRateProblem, powers, form: str = "product") -> float:
    """Minimized objective on normalized weights (the kernel's history units)."""
    return float(kernel.true_objective(problem.gains, problem.noise,
                                       _normalized_weights(problem.weights),
                                       np.asarray(powers, dtype=float), FORMS[form],
                                       kernel.cap_floor(problem.cap)))


def _pad(posy: Posynomial, extra: int) -> Posynomial:
    return Posynomial(posy.coefficients,
                      np.hstack([posy.exponents, np.zeros((posy.exponents.shape[0], extra))]))


def _capped_step(ratios, w, bounds, floor, form, p):
    """One condensed GP with the cap, in epigraph form.

    Auxiliary variables ``t_l >= max(ratio_l, exp(floor))`` turn every
    clipped term into a monomial objective factor plus a posynomial
    constraint ``ratio_l / t_l <= 1``.
    """
    k = len(ratios)
    eye = np.eye(2 * k)
    objective = [Posynomial.monomial(1.0, eye[k + l]) for l in range(k)]
    constraints = [_pad(r, k) / Posynomial.monomial(1.0, eye[k + l]) for l, r in enumerate(ratios)]
    t0 = np.array([max(r(p), np.exp(floor)) * 1.01 for r in ratios])
    t_bounds = [(np.exp(floor), None)] * k
    x = solve_gp(objective, constraints, bounds=list(bounds) + t_bounds, weights=w, form=form,
                 x0=np.concatenate([p, t0]))
    return x[:k]


def _search_start(problem: WeightedRateProblem, w, pmin, form: str) -> np.ndarray:
    levels = 10.0 ** (kernel.SEARCH_LEVELS_DB / 10.0)
    k = problem.size
    floor = kernel.cap_floor(problem.cap)
    best, best_val = None, np.inf
    # Same visiting order as the kernel: the first coordinate varies fastest.
    for digits in itertools.product(range(levels.size), repeat=k):
        p = np.maximum(problem.max_power * levels[list(reversed(digits))], pmin)
        val = kernel.true_objective(problem.gains, problem.noise, w, p, FORMS[form], floor)
        if val < best_val:
            best, best_val = p, val
    return best


def _optimize_reference(problem: WeightedRateProblem, options: SolverOptions) -> PowerResult:
    w = _normalized_weights(problem.weights)
    pmax = problem.max_power
    pmin = pmax * options.min_power_fraction
    if options.init == "search":
        p = _search_start(problem, w, pmin, options.objective)
    else:
        p = 0.5 * pmax if options.init == "half" else np.sqrt(pmin * pmax)
    full, interference = problem.link_posynomials()
    bounds = list(zip(pmin, pmax))
    history = [true_objective(problem, p, options.objective)]
    converged = False
    for _ in range(options.max_iterations):
        ratios = [i_l / condense(d_l, p) for d_l, i_l in zip(full, interference)]
        if problem.rate_cap is None:
            p_new = solve_gp(ratios, bounds=bounds, weights=w, form=options.objective, x0=p)
        else:
            p_new = _capped_step(ratios, w, bounds, kernel.cap_floor(problem.cap),
                                 options.objective, p)
        t_new = true_objective(problem, p_new, options.objective)
        history.append(t_new)
        if t_new > history[-2]:
            converged = True
            break
        improvement = history[-2] - t_new
        p = p_new
        if improvement <= options.rel_tol * max(abs(t_new), 1e-9):
            converged = True
            break
    if options.objective == "product":
        p = p.copy()
        kernel.zero_pass(problem.gains, problem.noise, w, p, problem.cap)
    return PowerResult(p, 0.0, np.array(history), len(history) - 1, converged)


def grid_points(max_power: float, points_per_axis: int = 20, span_db: float = 60.0) -> np.ndarray:
    """Zero plus ``points_per_axis - 1`` dB-spaced levels ending at ``max_power``."""
    if points_per_axis < 2:
        raise ValueError("need at least 2 points per axis")
    levels = max_power * 10.0 ** (-np.linspace(span_db, 0.0, points_per_axis - 1) / 10.0)
    return np.concatenate([[0.0], levels])


def grid_oracle(problem: WeightedRateProblem, points_per_axis: int = 20,
                span_db: float = 60.0) -> PowerResult:
    """Exhaustive search of the weighted sum rate over a per-transmitter dB grid."""
    k = problem.size
    if k > 4:
        raise ValueError("grid oracle limited to 4 transmitters")
    if k == 0:
        return PowerResult(np.zeros(0), 0.0, np.zeros(1))
    axes = [grid_points(pm, points_per_axis, span_db) for pm in problem.max_power]
    grid = np.array(list(itertools.product(*axes)))
    received = grid[:, None, :] * problem.gains[None, :, :]
    signal = np.einsum("nll->nl", received)
    sinr = signal / (received.sum(axis=2) - signal + problem.noise[None, :])
    values = np.minimum(np.log2(1.0 + sinr), problem.cap) @ problem.weights
    best = int(np.argmax(values))
    return PowerResult(grid[best].copy(), float(values[best]), np.array([values[best]]))


def max_power_allocation(problem: WeightedRateProblem) -> PowerResult:
    p = problem.max_power.copy()
    return PowerResult(p, problem.weighted_sum_rate(p) if problem.size else 0.0, np.zeros(1))
