"""Gauss-Newton / Levenberg-Marquardt solver with an IRLS outer loop.

The structured problems produced by assembly have banded normal equations
(second-order cliques couple three consecutive knots; cross-agent terms
couple matched knots), solved by banded Cholesky. Robust reward terms enter
through iteratively re-weighted least squares: each outer iteration freezes
the reweighting factor of every robust block, solves the weighted quadratic
surrogate, and re-evaluates the factors until they stop moving.

The surrogate for a robust block of weight lam and scale sigma is
lam * w / (2 sigma^2) * ||r||^2 with w = exp(-||r||^2 / (2 sigma^2)) frozen,
the tangent majorizer of lam * (1 - exp(-||r||^2 / (2 sigma^2))). Fixed
points of the loop are therefore stationary points of the true objective and
the true objective is non-increasing across outer iterations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import NonFiniteResidual, SingularNormalEquations
from .problem import Linearizer, NlsProblem

_pbsv = scipy.linalg.get_lapack_funcs(("pbsv",), (np.empty(0),))[0]


@dataclass(frozen=True)
class SolveOptions:
    max_iters: int = 25
    g_tol: float = 1e-8
    s_tol: float = 1e-10
    lm_lambda0: float = 1e-4
    lm_up: float = 10.0
    lm_down: float = 0.5
    lm_max: float = 1e8
    outer_max: int = 20
    w_tol: float = 1e-4
    budget_s: float | None = None
    dense: bool = False  # force dense normal equations (oracle/debug path)


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    reason: str  # gradient_tol | step_tol | max_iters
    wall_time: float
    outer_iterations: int = 1


class CallableSystem:
    """Adapts plain residual callables to the solver interface.

    squared entries are (fn, jac, weight); welsch entries are
    (fn, jac, weight, sigma). Jacobians are dense, so this path exercises
    the dense normal-equation branch.
    """

    def __init__(self, n_vars: int, squared=(), welsch=()):
        self.n_vars = n_vars
        self.squared = list(squared)
        self.welsch = list(welsch)
        self.n_welsch = len(self.welsch)
        self.welsch_w = np.ones(self.n_welsch)

    def welsch_sigmas(self):
        return np.array([s for *_, s in self.welsch])

    def set_welsch_weights(self, w):
        self.welsch_w = np.asarray(w, dtype=float).copy()

    def welsch_distances(self, x):
        return np.array([np.linalg.norm(np.atleast_1d(fn(x)))
                         for fn, *_ in self.welsch])

    def _parts(self, x, need_jac):
        rows, jacs, true_cost = [], [], 0.0
        for fn, jac, weight in self.squared:
            r = np.atleast_1d(np.asarray(fn(x), dtype=float))
            true_cost += weight * float(r @ r)
            s = np.sqrt(weight)
            rows.append(s * r)
            if need_jac:
                jacs.append(s * np.atleast_2d(np.asarray(jac(x), dtype=float)))
        for i, (fn, jac, weight, sigma) in enumerate(self.welsch):
            r = np.atleast_1d(np.asarray(fn(x), dtype=float))
            sq = float(r @ r)
            true_cost += weight * (1.0 - np.exp(-sq / (2.0 * sigma**2)))
            s = np.sqrt(weight * self.welsch_w[i] / (2.0 * sigma**2))
            rows.append(s * r)
            if need_jac:
                jacs.append(s * np.atleast_2d(np.asarray(jac(x), dtype=float)))
        r_all = np.concatenate(rows) if rows else np.zeros(0)
        j_all = np.vstack(jacs) if need_jac and jacs else None
        return r_all, j_all, true_cost

    def residuals(self, x):
        r, _, tc = self._parts(x, need_jac=False)
        return r, tc, float(r @ r)

    def linearize(self, x):
        r, j, tc = self._parts(x, need_jac=True)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(j))):
            raise NonFiniteResidual("residual or jacobian contains NaN or inf")
        return j, r, tc, float(r @ r)

    def true_cost(self, x):
        _, tc, _ = self._parts(x, need_jac=False)
        return tc


def _as_system(p):
    if isinstance(p, NlsProblem):
        return Linearizer(p)
    return p


def _banded_upper(h: sp.spmatrix) -> tuple[np.ndarray, int]:
    """Upper-banded storage of a symmetric sparse matrix (solveh_banded form)."""
    coo = h.tocoo()
    mask = coo.col >= coo.row
    r = coo.row[mask]
    c = coo.col[mask]
    v = coo.data[mask]
    u = int((c - r).max()) if len(r) else 0
    ab = np.zeros((u + 1, h.shape[0]))
    ab[u - (c - r), c] = v
    return ab, u


class _NormalEquations:
    """Normal equations of one linearization, solvable at several dampings."""

    def __init__(self, j, r, dense: bool):
        self.banded = sp.issparse(j) and not dense
        if self.banded:
            h = (j.T @ j).tocsr()
            self.ab, self.u = _banded_upper(h)
            self.rhs = -(j.T @ r)
        else:
            jd = j.toarray() if sp.issparse(j) else j
            self.h = jd.T @ jd
            self.rhs = -(jd.T @ r)

    def solve(self, lam: float) -> np.ndarray:
        """Step for (J^T J + lam I) d = -J^T r; raises LinAlgError if the
        damped system is not positive definite."""
        if self.banded:
            ab = self.ab.copy()
            ab[self.u] += lam
            _, x, info = _pbsv(ab, self.rhs[:, None], lower=0,
                               overwrite_ab=True, overwrite_b=False)
            if info != 0:
                raise np.linalg.LinAlgError(f"banded cholesky failed ({info})")
            return x[:, 0]
        h = self.h + lam * np.eye(self.h.shape[0])
        cf = scipy.linalg.cho_factor(h, check_finite=False)
        return scipy.linalg.cho_solve(cf, self.rhs, check_finite=False)


def solve_lm(problem, init, opts: SolveOptions = SolveOptions()):
    """Levenberg-Marquardt over the (frozen-weight) least-squares objective.

    Accepted steps never increase the objective; terminates on small
    gradient, small relative step, or the iteration/time budget. Reported
    costs are the objective actually minimized (the weighted surrogate when
    robust terms are present).
    """
    system = _as_system(problem)
    x = np.asarray(init, dtype=float).copy()
    t0 = time.perf_counter()
    j, r, _, cost = system.linearize(x)
    initial_cost = cost
    lam = opts.lm_lambda0
    iters = 0
    reason = "max_iters"
    for _ in range(opts.max_iters):
        g = 2.0 * (j.T @ r)
        if float(np.max(np.abs(g))) < opts.g_tol:
            reason = "gradient_tol"
            break
        normal = _NormalEquations(j, r, opts.dense)
        accepted = False
        delta = None
        while True:
            try:
                delta = normal.solve(lam)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                lam *= opts.lm_up
                if lam > opts.lm_max:
                    raise SingularNormalEquations(
                        "normal equations not positive definite at max damping")
                continue
            x_new = x + delta
            _, _, new_cost = system.residuals(x_new)
            if new_cost <= cost:
                accepted = True
                break
            lam *= opts.lm_up
            if lam > opts.lm_max:
                break
        if not accepted:
            reason = "step_tol"
            break
        assert new_cost <= cost, "accepted step increased the objective"
        step = float(np.linalg.norm(delta))
        x = x_new
        cost = new_cost
        lam = max(lam * opts.lm_down, 1e-15)
        iters += 1
        if step < opts.s_tol * (np.linalg.norm(x) + opts.s_tol):
            reason = "step_tol"
            break
        if opts.budget_s is not None and time.perf_counter() - t0 > opts.budget_s:
            reason = "max_iters"
            break
        j, r, _, cost = system.linearize(x)
    report = SolveReport(iterations=iters, initial_cost=initial_cost,
                         final_cost=cost, reason=reason,
                         wall_time=time.perf_counter() - t0)
    return x, report


def solve_irls(problem, init, opts: SolveOptions = SolveOptions()):
    """Outer re-weighting loop around solve_lm for robust reward terms.

    Freezes each robust block's weight w = exp(-||r||^2 / (2 sigma^2)),
    solves the weighted quadratic surrogate, and repeats until the largest
    weight change falls below w_tol. Reported costs are the true objective
    (with the 1 - exp terms).
    """
    system = _as_system(problem)
    x = np.asarray(init, dtype=float).copy()
    t0 = time.perf_counter()
    initial_true = system.true_cost(x)
    if system.n_welsch == 0:
        x, rep = solve_lm(system, x, opts)
        return x, replace(rep, initial_cost=initial_true,
                          final_cost=system.true_cost(x))
    sigmas = system.welsch_sigmas()
    d = system.welsch_distances(x)
    w = np.exp(-(d / sigmas) ** 2 / 2.0)
    total_inner = 0
    prev_true = initial_true
    outer_done = 0
    for outer in range(opts.outer_max):
        system.set_welsch_weights(w)
        remaining = None
        if opts.budget_s is not None:
            remaining = max(opts.budget_s - (time.perf_counter() - t0), 1e-3)
        x, rep = solve_lm(system, x, replace(opts, budget_s=remaining))
        total_inner += rep.iterations
        outer_done = outer + 1
        d = system.welsch_distances(x)
        w_new = np.exp(-(d / sigmas) ** 2 / 2.0)
        dw = float(np.max(np.abs(w_new - w))) if len(w) else 0.0
        w = w_new
        true_now = system.true_cost(x)
        assert true_now <= prev_true + 1e-9 * (1.0 + abs(prev_true)), \
            "IRLS outer iteration increased the true objective"
        prev_true = true_now
        if dw < opts.w_tol:
            break
        if opts.budget_s is not None and time.perf_counter() - t0 > opts.budget_s:
            break
    system.set_welsch_weights(w)
    report = SolveReport(iterations=total_inner, initial_cost=initial_true,
                         final_cost=prev_true, reason=rep.reason,
                         wall_time=time.perf_counter() - t0,
                         outer_iterations=outer_done)
    return x, report
