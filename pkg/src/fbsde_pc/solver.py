"""Backward predictor-corrector pass over a simulated ensemble.

Given regression models at levels i+1..i+m, one step produces, in order:
the z model (derivative weights applied to future levels against Brownian
increments), the explicit predictor model, and the corrector model whose
driver term uses the predicted value.  Levels N-1..N-m+1 are bootstrapped by
the one-step trapezoidal pair on a bridge-refined fine grid; level 0 is a
point mass, so its regressions collapse to sample means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .exceptions import (
    DegenerateIndicator,
    NonFiniteResponse,
    NotDeterministic,
    UnstableScheme,
    ValidationError,
)
from .problems import FbsdeProblem, closed_form_reference, terminal_values
from .regression import (
    DesignSolver,
    RegressionModel,
    build_basis,
    constant_model,
    truncate,
)
from .schemes import MultistepScheme, milne_factor, scheme_to_dict
from .simulation import GridSpec, PathEnsemble, refine_increments
from .stability import scheme_verdict

BOOTSTRAP_SUBSTEP_CAP = 64


def auto_substeps(m: int, h: float) -> int:
    """Refinement count keeping the one-step bootstrap error at the scheme's
    local order: r = ceil(h^{-(m-1)/2}), capped."""
    if m <= 1:
        return 1
    r = math.ceil(h ** (-(m - 1) / 2.0))
    return max(1, min(r, BOOTSTRAP_SUBSTEP_CAP))


@dataclass(frozen=True)
class SolverConfig:
    scheme: MultistepScheme
    grid: GridSpec
    basis_degree: int = 2
    y_bound: Optional[float] = None   # None -> problem-supplied bound
    z_bound: Optional[float] = None
    bootstrap_substeps: Optional[int] = None  # None -> auto
    allow_unstable: bool = False
    deterministic: bool = False
    perturb_y: float = 0.0
    perturb_z: float = 0.0
    center_z_responses: bool = True
    # subtract the martingale increments sum_k z_k(X_k) dW_k from corrector
    # responses: zero conditional mean, so every fitted conditional
    # expectation is unchanged while the terminal noise no longer telescopes
    # into Y_0 (without it the Y_0 standard error is std(phi(X_T))/sqrt(M))
    control_variate_y: bool = True
    stability_tol: float = 1e-8

    def to_dict(self) -> dict:
        return {
            "scheme": scheme_to_dict(self.scheme),
            "grid": {"T": self.grid.T, "N": self.grid.N},
            "basis_degree": self.basis_degree,
            "y_bound": self.y_bound,
            "z_bound": self.z_bound,
            "bootstrap_substeps": self.bootstrap_substeps,
            "allow_unstable": self.allow_unstable,
            "deterministic": self.deterministic,
            "perturb_y": self.perturb_y,
            "perturb_z": self.perturb_z,
            "center_z_responses": self.center_z_responses,
            "control_variate_y": self.control_variate_y,
        }


@dataclass
class BackwardSolution:
    y0: float
    z0: np.ndarray
    y_models: list
    z_models: list
    milne: np.ndarray  # indicator per step i = 0..N-m
    config: SolverConfig


@dataclass
class DeterministicSolution:
    times: np.ndarray
    y: np.ndarray
    y_tilde: np.ndarray
    milne: np.ndarray
    y0: float
    z0: np.ndarray
    config: SolverConfig


class _TerminalY:
    def __init__(self, problem: FbsdeProblem):
        self._problem = problem

    def predict(self, x):
        return np.asarray(self._problem.phi(np.asarray(x, dtype=float)))


class _TerminalZ:
    def __init__(self, problem: FbsdeProblem):
        self._problem = problem

    def predict(self, x):
        return terminal_values(self._problem, np.asarray(x, dtype=float)).z


def _float_arrays(scheme: MultistepScheme):
    corr, pred = scheme.corrector, scheme.predictor
    return (
        np.array([float(v) for v in corr.alpha]),
        float(corr.gamma0),
        np.array([float(v) for v in corr.gamma]),
        np.array([float(v) for v in pred.alpha_tilde]),
        np.array([float(v) for v in pred.gamma_tilde]),
        np.array([float(v) for v in scheme.zweights.lambda_h[1:]]),
    )


def _require_stable(scheme: MultistepScheme, allow_unstable: bool, tol: float) -> None:
    if allow_unstable:
        return
    verdict = scheme_verdict(scheme, tol=tol)
    if not verdict.is_stable:
        raise UnstableScheme(
            f"scheme {scheme.name or scheme.m}-step has verdict {verdict.status!r} "
            f"(offending roots {verdict.offending}); pass allow_unstable to override"
        )


def _check_finite(arr: np.ndarray, what: str, step: int) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteResponse(f"non-finite {what} at step {step}")


def _milne_scale(scheme: MultistepScheme) -> float:
    try:
        return float(milne_factor(scheme))
    except DegenerateIndicator:
        return float("nan")


def bootstrap(problem, config: SolverConfig, ensemble: PathEnsemble):
    """Produce regression models at the top coarse levels N-1..N-m+1.

    Runs the one-step trapezoidal predictor-corrector on a Brownian-bridge
    refined grid (auto_substeps pieces per coarse step) from T down to
    t_{N-m+1} and keeps the models at the coarse nodes.  Returns the pair
    (y models, z models) keyed by coarse node index; empty for m = 1.
    """
    basis = build_basis(problem.d, config.basis_degree)
    y_bound = problem.y_bound if config.y_bound is None else config.y_bound
    z_bound = problem.z_bound if config.z_bound is None else config.z_bound
    if config.scheme.m < 2:
        return {}, {}
    return _bootstrap(problem, config, ensemble, basis, y_bound, z_bound)


def _bootstrap(problem, config, ensemble, basis, y_bound, z_bound):
    scheme = config.scheme
    m, grid = scheme.m, config.grid
    N, h = grid.N, grid.h
    r = config.bootstrap_substeps or auto_substeps(m, h)
    start = N - m + 1
    h_f = h / r
    t_start = grid.times[start]
    d = problem.d

    fine_dw = refine_increments(ensemble, start, r)
    n_fine = (m - 1) * r
    fine_x = np.empty((ensemble.M, n_fine + 1, d))
    fine_x[:, 0, :] = ensemble.X[:, start, :]
    for k in range(n_fine):
        t = t_start + k * h_f
        xk = fine_x[:, k, :]
        drift = np.asarray(problem.b(t, xk), dtype=float)
        sig = np.asarray(problem.sigma(t, xk), dtype=float)
        if sig.ndim == 2:
            noise = fine_dw[:, k, :] @ sig.T
        else:
            noise = np.einsum("mij,mj->mi", sig, fine_dw[:, k, :])
        fine_x[:, k + 1, :] = xk + h_f * drift + noise

    term = terminal_values(problem, fine_x[:, -1, :])
    y_next = term.y
    z_next = term.z
    f_next = np.asarray(problem.f(grid.T, fine_x[:, -1, :], y_next, z_next))
    next_model = _TerminalY(problem)

    y_out, z_out = {}, {}
    for k in range(n_fine - 1, -1, -1):
        t = t_start + k * h_f
        xk = fine_x[:, k, :]
        design = basis.design_matrix(xk)
        if config.center_z_responses:
            centered = y_next - np.asarray(next_model.predict(xk))
        else:
            centered = y_next
        s_z = centered[:, None] * fine_dw[:, k, :] / h_f
        s_pred = y_next + h_f * f_next
        _check_finite(s_pred, "bootstrap predictor response", k)
        solver = DesignSolver(design)
        coef = solver.solve(np.column_stack([s_z, s_pred]))
        z_coef, pred_coef = coef[:, :d], coef[:, d]
        z_here = truncate(design @ z_coef, z_bound)
        y_pred_here = truncate(design @ pred_coef, y_bound)
        f_pred = np.asarray(problem.f(t, xk, y_pred_here, z_here))
        future = y_next
        if config.control_variate_y:
            future = y_next - np.einsum("md,md->m", z_here, fine_dw[:, k, :])
        s_corr = future + 0.5 * h_f * (f_pred + f_next)
        _check_finite(s_corr, "bootstrap corrector response", k)
        y_coef = solver.solve(s_corr)
        y_here = truncate(design @ y_coef, y_bound)
        if k % r == 0:
            node = start + k // r
            y_out[node] = RegressionModel(y_coef, basis, y_bound)
            z_out[node] = RegressionModel(z_coef, basis, z_bound)
        y_next, z_next = y_here, z_here
        next_model = RegressionModel(y_coef, basis, y_bound)
        f_next = np.asarray(problem.f(t, xk, y_here, z_here))
    return y_out, z_out


def solve(problem: FbsdeProblem, config: SolverConfig,
          ensemble: Optional[PathEnsemble] = None) -> "BackwardSolution | DeterministicSolution":
    """Full backward pass; returns estimates of (Y_0, Z_0) plus all fitted
    per-step models and the Milne local-error indicators."""
    if config.deterministic:
        return deterministic_solve(problem, config)
    if ensemble is None:
        raise ValidationError("stochastic solve needs a path ensemble")
    scheme = config.scheme
    m, grid = scheme.m, config.grid
    N, h = grid.N, grid.h
    if (ensemble.grid.N, ensemble.grid.T) != (grid.N, grid.T):
        raise ValidationError("ensemble grid does not match solver grid")
    if ensemble.d != problem.d:
        raise ValidationError("ensemble dimension does not match problem")
    if N < m:
        raise ValidationError(f"need N >= {m} for an {m}-step scheme")
    _require_stable(scheme, config.allow_unstable, config.stability_tol)

    alpha, gamma0, gamma, alpha_t, gamma_t, lam = _float_arrays(scheme)
    basis = build_basis(problem.d, config.basis_degree)
    y_bound = problem.y_bound if config.y_bound is None else config.y_bound
    z_bound = problem.z_bound if config.z_bound is None else config.z_bound
    times = grid.times
    X, W = ensemble.X, ensemble.W
    d = problem.d

    y_models: list = [None] * (N + 1)
    z_models: list = [None] * (N + 1)
    y_models[N] = _TerminalY(problem)
    z_models[N] = _TerminalZ(problem)
    if m >= 2:
        boot_y, boot_z = _bootstrap(problem, config, ensemble, basis, y_bound, z_bound)
        for node, model in boot_y.items():
            y_models[node] = model
        for node, model in boot_z.items():
            z_models[node] = model

    values: dict[int, tuple] = {}

    def level(j: int):
        if j not in values:
            xj = X[:, j, :]
            y = np.asarray(y_models[j].predict(xj))
            z = np.asarray(z_models[j].predict(xj))
            fv = np.asarray(problem.f(times[j], xj, y, z))
            values[j] = (y, z, fv)
        return values[j]

    mart = {}  # level k -> z_k(X_k) . dW_k, the control-variate increments

    def mart_increment(k: int) -> np.ndarray:
        if k not in mart:
            zk = level(k)[1]
            mart[k] = np.einsum("md,md->m", zk, ensemble.dW[:, k, :])
        return mart[k]

    factor = _milne_scale(scheme)
    milne = np.zeros(N - m + 1)
    for i in range(N - m, -1, -1):
        xi = X[:, i, :]
        s_z = np.zeros((ensemble.M, d))
        s_pred = np.zeros(ensemble.M)
        # centering the z responses by any fixed function of the current state
        # leaves E_i[. dW^T] unchanged; the one-level-ahead model removes the
        # bulk of the y spread
        proxy = np.asarray(y_models[i + 1].predict(xi)) if config.center_z_responses else None
        for j in range(1, m + 1):
            yj, _, fj = level(i + j)
            dw = W[:, i + j, :] - W[:, i, :]
            yy = yj if proxy is None else yj - proxy
            s_z += lam[j - 1] * yy[:, None] * dw
            s_pred += alpha_t[j - 1] * yj + h * gamma_t[j - 1] * fj
        s_z /= h
        if config.perturb_z:
            s_z += config.perturb_z
        _check_finite(s_pred, "predictor response", i)

        if i == 0:
            z_model = constant_model(s_z.mean(axis=0), basis, z_bound)
            pred_model = constant_model(s_pred.mean(), basis, y_bound)
            z_here = z_model.predict(xi)
            y_pred_here = pred_model.predict(xi)
            design = solver = None
        else:
            design = basis.design_matrix(xi)
            solver = DesignSolver(design)
            coef = solver.solve(np.column_stack([s_z, s_pred]))
            z_model = RegressionModel(coef[:, :d], basis, z_bound)
            pred_model = RegressionModel(coef[:, d], basis, y_bound)
            z_here = truncate(design @ coef[:, :d], z_bound)
            y_pred_here = truncate(design @ coef[:, d], y_bound)

        f_pred = np.asarray(problem.f(times[i], xi, y_pred_here, z_here))
        s_corr = h * gamma0 * f_pred
        control = None
        if config.control_variate_y:
            control = np.einsum("md,md->m", z_here, ensemble.dW[:, i, :])
        for j in range(1, m + 1):
            yj, _, fj = level(i + j)
            term = yj if control is None else yj - control
            s_corr = s_corr + alpha[j - 1] * term + h * gamma[j - 1] * fj
            if control is not None and j < m:
                control = control + mart_increment(i + j)
        if config.perturb_y:
            s_corr = s_corr + config.perturb_y
        _check_finite(s_corr, "corrector response", i)

        if i == 0:
            y_model = constant_model(s_corr.mean(), basis, y_bound)
            y_here = y_model.predict(xi)
        else:
            y_coef = solver.solve(s_corr)
            y_model = RegressionModel(y_coef, basis, y_bound)
            y_here = truncate(design @ y_coef, y_bound)

        milne[i] = factor * float(np.mean(np.abs(y_pred_here - y_here)))
        y_models[i] = y_model
        z_models[i] = z_model

    x0 = X[0:1, 0, :]
    y0 = float(np.asarray(y_models[0].predict(x0)).reshape(-1)[0])
    z0 = np.asarray(z_models[0].predict(x0), dtype=float).reshape(d)
    return BackwardSolution(y0=y0, z0=z0, y_models=y_models, z_models=z_models,
                            milne=milne, config=config)


# -- deterministic (sigma = 0) reduction ---------------------------------------

def _probe_deterministic(problem: FbsdeProblem) -> None:
    """Cheap spot checks that sigma vanishes and the driver ignores z."""
    x = problem.x0[None, :]
    for t in (0.0, problem.T / 2.0, problem.T):
        for shift in (0.0, 1.0):
            sig = np.asarray(problem.sigma(t, x + shift), dtype=float)
            if np.any(sig != 0.0):
                raise NotDeterministic("sigma is not identically zero")
    y = np.array([0.7])
    for t in (0.0, problem.T / 2.0):
        f0 = np.asarray(problem.f(t, x, y, np.zeros((1, problem.d))))
        f1 = np.asarray(problem.f(t, x, y, np.ones((1, problem.d))))
        if not np.allclose(f0, f1, rtol=0.0, atol=0.0):
            raise NotDeterministic("driver depends on z")


def _deterministic_x_path(problem: FbsdeProblem, grid: GridSpec) -> np.ndarray:
    x = np.empty((grid.N + 1, problem.d))
    x[0] = problem.x0
    for i in range(grid.N):
        drift = np.asarray(problem.b(grid.times[i], x[i][None, :]), dtype=float)
        x[i + 1] = x[i] + grid.h * drift.reshape(problem.d)
    return x


def deterministic_solve(problem: FbsdeProblem, config: SolverConfig,
                        seed_levels: str = "auto") -> DeterministicSolution:
    """Scalar scheme recursion for sigma = 0 problems (no regression).

    seed_levels picks how Y_{N-1}..Y_{N-m+1} are produced: "closed-form"
    (requires the problem's exact solution), "bootstrap" (one-step trapezoidal
    recursion on a refined grid), or "auto" (closed form when available).
    """
    _probe_deterministic(problem)
    scheme = config.scheme
    m, grid = scheme.m, config.grid
    N, h = grid.N, grid.h
    if N < m:
        raise ValidationError(f"need N >= {m} for an {m}-step scheme")
    _require_stable(scheme, config.allow_unstable, config.stability_tol)
    alpha, gamma0, gamma, alpha_t, gamma_t, _ = _float_arrays(scheme)
    times = grid.times
    xpath = _deterministic_x_path(problem, grid)
    zeros_z = np.zeros((1, problem.d))

    def fval(i: int, y: float) -> float:
        out = problem.f(times[i], xpath[i][None, :], np.array([y]), zeros_z)
        return float(np.asarray(out).reshape(-1)[0])

    y = np.empty(N + 1)
    y_tilde = np.full(N + 1, np.nan)
    y[N] = float(np.asarray(problem.phi(xpath[N][None, :])).reshape(-1)[0])

    if seed_levels not in ("auto", "closed-form", "bootstrap"):
        raise ValidationError(f"unknown seed_levels mode {seed_levels!r}")
    use_cf = seed_levels == "closed-form" or (
        seed_levels == "auto" and problem.has_closed_form)
    if use_cf and not problem.has_closed_form:
        raise ValidationError("closed-form seeding requested but unavailable")
    if m >= 2:
        if use_cf:
            for lvl in range(N - m + 1, N):
                y[lvl], _ = closed_form_reference(problem, times[lvl], xpath[lvl])
        else:
            r = config.bootstrap_substeps or auto_substeps(m, h)
            h_f = h / r
            start = N - m + 1
            n_fine = (m - 1) * r
            fx = np.empty((n_fine + 1, problem.d))
            fx[0] = xpath[start]
            for k in range(n_fine):
                t = times[start] + k * h_f
                drift = np.asarray(problem.b(t, fx[k][None, :]), dtype=float)
                fx[k + 1] = fx[k] + h_f * drift.reshape(problem.d)

            def ffine(k: int, val: float) -> float:
                t = times[start] + k * h_f
                out = problem.f(t, fx[k][None, :], np.array([val]), zeros_z)
                return float(np.asarray(out).reshape(-1)[0])

            v = float(np.asarray(problem.phi(fx[-1][None, :])).reshape(-1)[0])
            f_nxt = ffine(n_fine, v)
            for k in range(n_fine - 1, -1, -1):
                pred = v + h_f * f_nxt
                f_pred = ffine(k, pred)
                v = v + 0.5 * h_f * (f_pred + f_nxt)
                f_nxt = ffine(k, v)
                if k % r == 0:
                    y[start + k // r] = v

    f_at = np.empty(N + 1)
    for lvl in range(N - m + 1, N + 1):
        f_at[lvl] = fval(lvl, y[lvl])

    factor = _milne_scale(scheme)
    milne = np.zeros(N - m + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(N - m, -1, -1):
            pred = float(alpha_t @ y[i + 1:i + m + 1] + h * (gamma_t @ f_at[i + 1:i + m + 1]))
            f_pred = fval(i, pred)
            corr = float(alpha @ y[i + 1:i + m + 1] + h * gamma0 * f_pred
                         + h * (gamma @ f_at[i + 1:i + m + 1]))
            corr += config.perturb_y
            y[i] = corr
            y_tilde[i] = pred
            f_at[i] = fval(i, corr)
            milne[i] = factor * abs(pred - corr)

    return DeterministicSolution(times=times, y=y, y_tilde=y_tilde, milne=milne,
                                 y0=float(y[0]), z0=np.zeros(problem.d), config=config)


def milne_local_ratios(problem: FbsdeProblem, scheme: MultistepScheme,
                       grid: GridSpec) -> np.ndarray:
    """Local-error check of the Milne device on a sigma = 0 problem.

    Each step is seeded with exact future values, so |u - Y| is the local
    error; the returned ratios |u - Y| / (factor * |Ytilde - Y|) tend to 1 as
    h -> 0.
    """
    _probe_deterministic(problem)
    if not problem.has_closed_form:
        raise ValidationError("local Milne check needs a closed-form solution")
    m = scheme.m
    N, h = grid.N, grid.h
    if N < m:
        raise ValidationError(f"need N >= {m}")
    alpha, gamma0, gamma, alpha_t, gamma_t, _ = _float_arrays(scheme)
    times = grid.times
    xpath = _deterministic_x_path(problem, grid)
    zeros_z = np.zeros((1, problem.d))
    u = np.array([closed_form_reference(problem, times[i], xpath[i])[0]
                  for i in range(N + 1)])
    f_exact = np.array([
        float(np.asarray(problem.f(times[i], xpath[i][None, :],
                                   np.array([u[i]]), zeros_z)).reshape(-1)[0])
        for i in range(N + 1)
    ])
    factor = float(milne_factor(scheme))
    ratios = np.empty(N - m + 1)
    for i in range(N - m, -1, -1):
        pred = float(alpha_t @ u[i + 1:i + m + 1] + h * (gamma_t @ f_exact[i + 1:i + m + 1]))
        f_pred = float(np.asarray(problem.f(times[i], xpath[i][None, :],
                                            np.array([pred]), zeros_z)).reshape(-1)[0])
        corr = float(alpha @ u[i + 1:i + m + 1] + h * gamma0 * f_pred
                     + h * (gamma @ f_exact[i + 1:i + m + 1]))
        gap = factor * abs(pred - corr)
        ratios[i] = abs(u[i] - corr) / gap if gap > 0 else np.inf
    return ratios


def deterministic_perturbation_deviation(problem: FbsdeProblem, scheme: MultistepScheme,
                                         grid: GridSpec, delta: float,
                                         allow_unstable: bool = False) -> float:
    """|Y_0 shift| caused by injecting a constant perturbation of size delta
    into every corrector step of the deterministic recursion."""
    base = SolverConfig(scheme=scheme, grid=grid, deterministic=True,
                        allow_unstable=allow_unstable)
    clean = deterministic_solve(problem, base)
    noisy = deterministic_solve(problem, replace(base, perturb_y=delta))
    return abs(noisy.y0 - clean.y0)


def result_to_dict(solution, runtime_sec: Optional[float] = None) -> dict:
    """Result document for the CLI: estimates, indicators and the config."""
    out = {
        "y0": solution.y0,
        "z0": np.asarray(solution.z0, dtype=float).tolist(),
        "milne": np.asarray(solution.milne, dtype=float).tolist(),
        "config": solution.config.to_dict(),
    }
    if runtime_sec is not None:
        out["runtime_sec"] = runtime_sec
    return out
