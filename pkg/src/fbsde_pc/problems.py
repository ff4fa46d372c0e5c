"""Problem definitions: the decoupled FBSDE abstraction and the two built-in
benchmark problems with closed-form solutions.

All callables are vectorized over a leading trajectory axis: states x have
shape (M, d), y values (M,), z values (M, d).  sigma may return a constant
(d, d) matrix or a per-trajectory (M, d, d) stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .exceptions import NoClosedForm


@dataclass(frozen=True)
class FbsdeProblem:
    """A decoupled forward-backward SDE.

    dX = b dt + sigma dW with X_0 = x0, and backward
    Y_t = phi(X_T) + int_t^T f(s, X_s, Y_s, Z_s) ds - int_t^T Z_s dW_s.
    closed_form_y/z, when present, give the exact (Y, Z) as functions of (t, x)
    and are used purely as test oracles.
    """

    name: str
    d: int
    T: float
    x0: np.ndarray
    b: Callable
    sigma: Callable
    f: Callable
    phi: Callable
    grad_phi: Optional[Callable] = None
    y_bound: float = math.inf
    z_bound: float = math.inf
    closed_form_y: Optional[Callable] = None
    closed_form_z: Optional[Callable] = None
    # hints used by the deterministic (ODE-reduction) mode
    zero_diffusion: bool = False
    driver_z_independent: bool = False

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(self.d))

    @property
    def has_closed_form(self) -> bool:
        return self.closed_form_y is not None and self.closed_form_z is not None


@dataclass(frozen=True)
class TerminalValues:
    """Terminal backward data: y = phi(X_N) and z = grad(phi)(X_N) . sigma."""

    y: np.ndarray  # (M,)
    z: np.ndarray  # (M, d)


def finite_difference_gradient(fn: Callable, x: np.ndarray) -> np.ndarray:
    """Central differences with relative step 1e-6 * (1 + |x|), per coordinate."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for k in range(x.shape[1]):
        step = 1e-6 * (1.0 + np.abs(x[:, k]))
        hi = x.copy()
        lo = x.copy()
        hi[:, k] += step
        lo[:, k] -= step
        grad[:, k] = (fn(hi) - fn(lo)) / (2.0 * step)
    return grad


def terminal_values(problem: FbsdeProblem, x_terminal: np.ndarray) -> TerminalValues:
    """Evaluate the terminal rule at the given states (M, d)."""
    x = np.asarray(x_terminal, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    y = np.asarray(problem.phi(x), dtype=float)
    if problem.grad_phi is not None:
        grad = np.asarray(problem.grad_phi(x), dtype=float)
    else:
        grad = finite_difference_gradient(problem.phi, x)
    sig = np.asarray(problem.sigma(problem.T, x), dtype=float)
    if sig.ndim == 2:
        z = grad @ sig
    else:
        z = np.einsum("mk,mkl->ml", grad, sig)
    return TerminalValues(y=y, z=z)


def closed_form_reference(problem: FbsdeProblem, t: float, x: np.ndarray):
    """(Y, Z) of the closed-form solution at one state; raises NoClosedForm."""
    if not problem.has_closed_form:
        raise NoClosedForm(f"problem {problem.name!r} has no closed-form solution")
    x = np.asarray(x, dtype=float).reshape(1, problem.d)
    y = float(np.asarray(problem.closed_form_y(t, x)).reshape(-1)[0])
    z = np.asarray(problem.closed_form_z(t, x), dtype=float).reshape(problem.d)
    return y, z


# -- benchmark problem 1: sine terminal, self-cancelling driver ----------------

def example1(eta: float = 0.6, tau: Optional[float] = None, d: int = 2,
             T: float = 1.0, frozen_exponent: bool = False) -> FbsdeProblem:
    """Pure Brownian state (b = 0, sigma = I, so X = W) with

        phi(x) = 1 + eta + sin(tau * sum(x)),
        f(t, x, y, .) = min{1, (y - eta - 1 - sin(tau*sum(x)) * decay(t))^2},

    where decay(t) = exp(-tau^2 d (T - t)/2).  The driver vanishes along the
    exact solution, which is available in closed form.  tau defaults to
    1/sqrt(d).  frozen_exponent fixes the decay factor at its t = 0 value,
    for comparison runs; the closed form then no longer solves the equation.
    """
    if eta <= 0 or d < 1:
        raise ValueError("need eta > 0 and d >= 1")
    if tau is None:
        tau = 1.0 / math.sqrt(d)
    if tau <= 0:
        raise ValueError("need tau > 0")
    tau = float(tau)
    rate = tau * tau * d / 2.0

    def decay(t):
        if frozen_exponent:
            return math.exp(-rate * T)
        return np.exp(-rate * (T - t))

    def b(t, x):
        return np.zeros_like(x)

    def sigma(t, x):
        return np.eye(d)

    def phi(x):
        return 1.0 + eta + np.sin(tau * x.sum(axis=1))

    def grad_phi(x):
        g = tau * np.cos(tau * x.sum(axis=1))
        return np.repeat(g[:, None], d, axis=1)

    def f(t, x, y, z):
        arg = y - eta - 1.0 - np.sin(tau * x.sum(axis=1)) * decay(t)
        return np.minimum(1.0, arg * arg)

    def u(t, x):
        return 1.0 + eta + np.sin(tau * x.sum(axis=1)) * np.exp(-rate * (T - t))

    def zeta(t, x):
        g = tau * np.cos(tau * x.sum(axis=1)) * np.exp(-rate * (T - t))
        return np.repeat(g[:, None], d, axis=1)

    return FbsdeProblem(
        name="example1", d=d, T=T, x0=np.zeros(d),
        b=b, sigma=sigma, f=f, phi=phi, grad_phi=grad_phi,
        y_bound=2.0 + eta, z_bound=tau * math.sqrt(d),
        closed_form_y=u, closed_form_z=zeta,
        driver_z_independent=True,
    )


# -- benchmark problem 2: scalar logistic FBSDE --------------------------------

def example2(T: float = 1.0, x0: float = 1.0) -> FbsdeProblem:
    """Scalar decoupled FBSDE with logistic closed form.

        dX = dt / (1 + 2 e^w) + (e^w / (1 + e^w)) dW,       w = t + X_t,
        f  = -2y/(1 + 2 e^w) - (yz/(1 + e^w) - y^2 z)/2,
        phi(x) = e^{T+x} / (1 + e^{T+x}),

    with Y_t = expit(t + X_t) and Z_t = e^{2w}/(1 + e^w)^3.  The first driver
    denominator matches the drift's (1 + 2 e^w): that is the unique choice
    under which the stated closed form solves the equation (checked against
    the associated PDE in the test suite).
    """

    def b(t, x):
        return 1.0 / (1.0 + 2.0 * np.exp(t + x))

    def sigma(t, x):
        return expit(t + x)[:, :, None]

    def phi(x):
        return expit(T + x[:, 0])

    def grad_phi(x):
        s = expit(T + x[:, 0])
        return (s * (1.0 - s))[:, None]

    def f(t, x, y, z):
        w = t + x[:, 0]
        inv2 = 1.0 / (1.0 + 2.0 * np.exp(w))
        inv = expit(-w)  # 1/(1 + e^w)
        zz = z[:, 0]
        return -2.0 * y * inv2 - 0.5 * (y * zz * inv - y * y * zz)

    def u(t, x):
        return expit(t + x[:, 0])

    def zeta(t, x):
        s = expit(t + x[:, 0])
        return (s * s * expit(-(t + x[:, 0])))[:, None]

    return FbsdeProblem(
        name="example2", d=1, T=T, x0=np.array([x0]),
        b=b, sigma=sigma, f=f, phi=phi, grad_phi=grad_phi,
        y_bound=1.0, z_bound=1.0,
        closed_form_y=u, closed_form_z=zeta,
    )


# -- regression-free test problems ---------------------------------------------

def exponential_ode(T: float = 1.0, coefficient: float = -1.0) -> FbsdeProblem:
    """Noise-free reduction with driver f = coefficient * y and phi = 1.

    With sigma = 0 the backward equation is the ODE dY/dt = -f, so
    Y_t = exp(coefficient * (T - t)); the default coefficient -1 gives the
    decaying solution Y_t = e^{-(T-t)}.  Used for exact order measurement.
    """
    c = float(coefficient)

    def b(t, x):
        return np.zeros_like(x)

    def sigma(t, x):
        return np.zeros((1, 1))

    def phi(x):
        return np.ones(x.shape[0])

    def f(t, x, y, z):
        return c * y

    def u(t, x):
        return np.full(x.shape[0], math.exp(c * (T - t)))

    def zeta(t, x):
        return np.zeros((x.shape[0], 1))

    return FbsdeProblem(
        name="exponential-ode", d=1, T=T, x0=np.zeros(1),
        b=b, sigma=sigma, f=f, phi=phi,
        grad_phi=lambda x: np.zeros_like(x),
        closed_form_y=u, closed_form_z=zeta,
        zero_diffusion=True, driver_z_independent=True,
    )


def constant_problem(value: float = 1.0, d: int = 1, T: float = 1.0,
                     diffusion: float = 1.0) -> FbsdeProblem:
    """Zero driver with constant terminal payoff; Y = value and Z = 0."""

    def b(t, x):
        return np.zeros_like(x)

    def sigma(t, x):
        return diffusion * np.eye(d)

    def phi(x):
        return np.full(x.shape[0], float(value))

    def f(t, x, y, z):
        return np.zeros(x.shape[0])

    def u(t, x):
        return np.full(x.shape[0], float(value))

    def zeta(t, x):
        return np.zeros((x.shape[0], d))

    return FbsdeProblem(
        name="constant", d=d, T=T, x0=np.zeros(d),
        b=b, sigma=sigma, f=f, phi=phi,
        grad_phi=lambda x: np.zeros_like(x),
        closed_form_y=u, closed_form_z=zeta,
        zero_diffusion=(diffusion == 0.0), driver_z_independent=True,
    )


PROBLEM_REGISTRY = {
    "example1": example1,
    "example2": example2,
    "exponential-ode": exponential_ode,
    "constant": constant_problem,
}
