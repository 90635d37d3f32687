"""Synthetic finite-sum objectives with known smoothness and variance constants.

Two families are provided:

``quadratic-sine``
    ``f_i(x) = 0.5 (x - c_i)^T A (x - c_i) + eps * sum_j sin(x_j)`` with a
    shared diagonal ``A``.  Since ``grad f_i - grad f = A (cbar - c_i)`` does
    not depend on ``x``, the component variance is exact.

``logistic``
    L2-regularised logistic regression on seeded Gaussian features.

All array functions accept a batch of points of shape ``(S, d)`` so the
engine can advance many trials in lockstep.  Every reduction is either
elementwise or along a fixed axis, so a row of a batched result is bitwise
equal to the same computation done on that row alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import expit

from . import rng as _rng

KINDS = ("quadratic-sine", "logistic")


class InvalidProblemError(ValueError):
    """Raised when a problem cannot satisfy the smoothness/variance contract."""


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    kind: str
    seed: int
    n: int
    d: int
    L: float
    sigma2: float
    f_star: float
    theta0: np.ndarray
    delta0: float
    params: dict[str, Any] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    def record(self) -> dict[str, Any]:
        """Self-describing summary for result files."""
        return {
            "kind": self.kind,
            "seed": int(self.seed),
            "n": int(self.n),
            "d": int(self.d),
            "L": float(self.L),
            "sigma2": float(self.sigma2),
            "f_star": float(self.f_star),
            "delta0": float(self.delta0),
        }


@dataclass(frozen=True)
class OracleMode:
    """How stochastic gradients are produced.

    ``finite-sum`` samples components uniformly with replacement.
    ``additive-noise`` returns ``grad f(x) + zeta`` with isotropic Gaussian
    ``zeta`` and ``E|zeta|^2 = sigma2`` exactly (the problem's ``sigma2``
    unless overridden).
    """

    kind: str = "finite-sum"
    sigma2: float | None = None

    def __post_init__(self):
        if self.kind not in ("finite-sum", "additive-noise"):
            raise ValueError(f"unknown oracle mode {self.kind!r}")
        if self.sigma2 is not None:
            if self.kind != "additive-noise":
                raise ValueError("sigma2 override only applies to additive-noise")
            if not self.sigma2 >= 0:
                raise ValueError("sigma2 must be nonnegative")

    def variance(self, problem: ProblemSpec) -> float:
        if self.kind == "additive-noise" and self.sigma2 is not None:
            return float(self.sigma2)
        return float(problem.sigma2)

    def check_batch(self, problem: ProblemSpec, b: int) -> None:
        if b < 1:
            raise ValueError(f"batch size must be >= 1, got {b}")
        if self.kind == "finite-sum" and b > problem.n:
            raise ValueError(f"batch size {b} exceeds n={problem.n} in finite-sum mode")


FINITE_SUM = OracleMode()


def additive_noise(sigma2: float | None = None) -> OracleMode:
    return OracleMode("additive-noise", sigma2)


# --------------------------------------------------------------------------
# quadratic-sine


def make_quadratic_sine(
    seed: int,
    n: int,
    d: int,
    spectrum,
    eps_nc: float = 0.0,
    *,
    center_scale: float = 1.0,
    centers=None,
    theta0=None,
    theta0_scale: float = 3.0,
) -> ProblemSpec:
    """Build a quadratic-plus-sine finite sum.

    Centers are ``N(0, center_scale^2 I)`` draws from ``seed`` unless given.
    ``theta0`` defaults to a seeded ``N(0, theta0_scale^2 I)`` draw.
    """
    if n < 1 or d < 1:
        raise InvalidProblemError("n and d must be positive")
    spectrum = np.asarray(spectrum, dtype=np.float64).reshape(-1)
    if spectrum.shape != (d,):
        raise InvalidProblemError(f"spectrum must have {d} entries, got {spectrum.size}")
    if not np.all(spectrum > 0):
        raise InvalidProblemError("spectrum entries must be positive")
    if eps_nc < 0:
        raise InvalidProblemError("eps_nc must be nonnegative")

    gen = np.random.default_rng(seed)
    if centers is None:
        centers = gen.normal(0.0, center_scale, size=(n, d))
    else:
        centers = np.asarray(centers, dtype=np.float64).reshape(n, d)
    if theta0 is None:
        theta0 = gen.normal(0.0, theta0_scale, size=d)
    theta0 = np.asarray(theta0, dtype=np.float64).reshape(d)

    cbar = centers.mean(axis=0)
    shift = (cbar - centers) * spectrum
    sigma2 = float(np.mean(np.sum(shift**2, axis=1)))
    offset = 0.5 * float(np.mean(np.sum(spectrum * (cbar - centers) ** 2, axis=1)))
    f_star = offset - eps_nc * d

    params = {
        "spectrum": spectrum,
        "centers": centers,
        "cbar": cbar,
        "eps_nc": float(eps_nc),
        "offset": offset,
        "center_scale": float(center_scale),
    }
    partial = ProblemSpec("quadratic-sine", seed, n, d, float(spectrum.max() + eps_nc),
                          sigma2, f_star, theta0, 0.0, params)
    f0, _ = full_value_grad(partial, theta0)
    return _with_delta0(partial, f0)


def _qs_value_grad(p: ProblemSpec, x: np.ndarray):
    spec, cbar, eps = p.params["spectrum"], p.params["cbar"], p.params["eps_nc"]
    r = x - cbar
    val = 0.5 * np.sum(spec * r * r, axis=-1) + p.params["offset"]
    grad = spec * r
    if eps:
        val = val + eps * np.sum(np.sin(x), axis=-1)
        grad = grad + eps * np.cos(x)
    return val, grad


def _qs_component_grads(p: ProblemSpec, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    spec, eps = p.params["spectrum"], p.params["eps_nc"]
    g = spec * (x[:, None, :] - p.params["centers"][idx])
    if eps:
        g = g + eps * np.cos(x)[:, None, :]
    return g


# --------------------------------------------------------------------------
# logistic


def make_logistic(
    seed: int,
    n: int,
    d: int,
    lam: float,
    *,
    features=None,
    labels=None,
    theta0=None,
    solver_seed: int = 0,
    n_probes: int = 256,
    safety: float = 1.5,
) -> ProblemSpec:
    """L2-regularised logistic loss on seeded synthetic data.

    ``sigma2`` is ``safety`` times the largest component variance over
    ``n_probes`` points drawn uniformly from the ball of radius
    ``2 |theta0|`` around ``theta0``.  ``f_star`` comes from a damped Newton
    solve started at a ``solver_seed`` point.
    """
    if n < 1 or d < 1:
        raise InvalidProblemError("n and d must be positive")
    if lam < 0:
        raise InvalidProblemError("lambda must be nonnegative")
    gen = np.random.default_rng(seed)
    if features is None:
        X = gen.normal(size=(n, d))
        w = gen.normal(size=d)
        y = np.where(X @ w + 0.5 * gen.normal(size=n) >= 0, 1.0, -1.0)
    else:
        X = np.asarray(features, dtype=np.float64).reshape(n, d)
        y = np.asarray(labels, dtype=np.float64).reshape(n)
    if theta0 is None:
        theta0 = gen.normal(size=d)
    theta0 = np.asarray(theta0, dtype=np.float64).reshape(d)

    L = float(np.linalg.eigvalsh(X.T @ X / (4.0 * n)).max()) + lam
    if not L > 0:
        raise InvalidProblemError("smoothness constant is zero; the step-size cap 2/L is undefined")

    metadata: dict[str, Any] = {}
    if np.all(y == y[0]):
        metadata["warning"] = "degenerate data: all labels are equal"
    params = {"X": X, "y": y, "lam": float(lam)}
    p = ProblemSpec("logistic", seed, n, d, L, 0.0, 0.0, theta0, 0.0, params, metadata)

    f_star, converged = _logistic_min(p, solver_seed)
    if not converged:
        metadata["warning_fstar"] = "solver did not converge; using the trivial lower bound 0"
        f_star = 0.0

    radius = 2.0 * float(np.linalg.norm(theta0)) or 1.0
    direc = gen.normal(size=(n_probes, d))
    direc /= np.linalg.norm(direc, axis=1, keepdims=True)
    probes = theta0 + direc * (radius * gen.uniform(size=(n_probes, 1)) ** (1.0 / d))
    var = max(component_variance(p, z) for z in probes)
    metadata["sigma2_probes"] = {"count": n_probes, "radius": radius, "max_variance": var,
                                 "safety": safety}
    metadata["sigma2_global_bound"] = float(np.mean(np.sum(X * X, axis=1)))

    p = ProblemSpec("logistic", seed, n, d, L, safety * var, f_star, theta0, 0.0, params, metadata)
    f0, _ = full_value_grad(p, theta0)
    return _with_delta0(p, f0)


def _logistic_min(p: ProblemSpec, solver_seed: int, tol: float = 1e-12, max_iter: int = 200):
    X, y, lam = p.params["X"], p.params["y"], p.params["lam"]
    theta = np.random.default_rng(solver_seed).normal(size=p.d)
    for _ in range(max_iter):
        f, g = full_value_grad(p, theta)
        if np.linalg.norm(g) <= tol:
            return float(f), True
        s = expit(X @ theta * y)
        H = (X.T * (s * (1 - s))) @ X / p.n + lam * np.eye(p.d)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return float(f), False
        t = 1.0
        while t > 1e-12:
            f_new, _ = full_value_grad(p, theta - t * step)
            if f_new <= f - 1e-4 * t * (g @ step):
                break
            t *= 0.5
        theta = theta - t * step
        if not np.all(np.isfinite(theta)):
            return float(f), False
    f, g = full_value_grad(p, theta)
    # A flat direction can stall the Newton decrement just above tol.
    return float(f), bool(np.linalg.norm(g) <= 1e3 * tol)


def _lg_value_grad(p: ProblemSpec, x: np.ndarray):
    X, y, lam = p.params["X"], p.params["y"], p.params["lam"]
    margins = np.sum(X[None, :, :] * x[:, None, :], axis=-1) * y
    val = np.mean(np.logaddexp(0.0, -margins), axis=-1) + 0.5 * lam * np.sum(x * x, axis=-1)
    coef = -y * expit(-margins)
    grad = np.mean(coef[:, :, None] * X[None, :, :], axis=1) + lam * x
    return val, grad


def _lg_component_grads(p: ProblemSpec, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    X, y, lam = p.params["X"], p.params["y"], p.params["lam"]
    Xb, yb = X[idx], y[idx]
    margins = np.sum(Xb * x[:, None, :], axis=-1) * yb
    return (-yb * expit(-margins))[:, :, None] * Xb + lam * x[:, None, :]


# --------------------------------------------------------------------------
# shared oracle machinery

_VALUE_GRAD = {"quadratic-sine": _qs_value_grad, "logistic": _lg_value_grad}
_COMPONENT_GRADS = {"quadratic-sine": _qs_component_grads, "logistic": _lg_component_grads}


def _with_delta0(p: ProblemSpec, f0) -> ProblemSpec:
    delta0 = float(f0) - p.f_star
    if not delta0 > 0:
        # theta0 already optimal; keep the constant positive as required.
        delta0 = np.finfo(float).tiny
    return ProblemSpec(p.kind, p.seed, p.n, p.d, p.L, p.sigma2, p.f_star, p.theta0,
                       delta0, p.params, p.metadata)


def value_grad_batch(problem: ProblemSpec, thetas: np.ndarray):
    """Values ``(S,)`` and gradients ``(S, d)`` of ``f`` at each row."""
    return _VALUE_GRAD[problem.kind](problem, thetas)


def component_grads(problem: ProblemSpec, thetas: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """``grad f_i`` for ``i = idx[s, j]`` at ``thetas[s]``; shape ``(S, b, d)``."""
    return _COMPONENT_GRADS[problem.kind](problem, thetas, idx)


def full_value_grad(problem: ProblemSpec, theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (problem.d,):
        raise ValueError(f"theta must have shape ({problem.d},), got {theta.shape}")
    val, grad = value_grad_batch(problem, theta[None, :])
    return float(val[0]), grad[0]


def component_variance(problem: ProblemSpec, theta) -> float:
    """Brute-force ``(1/n) sum_i |grad f_i(theta) - grad f(theta)|^2``."""
    theta = np.asarray(theta, dtype=np.float64).reshape(1, problem.d)
    g = component_grads(problem, theta, np.arange(problem.n)[None, :])[0]
    return float(np.mean(np.sum((g - g.mean(axis=0)) ** 2, axis=1)))


def batch_gradient(problem: ProblemSpec, oracle: OracleMode, thetas: np.ndarray, b: int,
                   keys: np.ndarray, grads: np.ndarray | None = None) -> np.ndarray:
    """Mini-batch gradient for each row of ``thetas`` using stream ``keys``.

    In additive-noise mode the mean of ``b`` i.i.d. noise draws is sampled
    directly as ``N(0, sigma2 / (b d) I)``, which has the same law.  ``grads``
    may carry already computed full gradients at ``thetas``.
    """
    if oracle.kind == "finite-sum":
        idx = _rng.indices(keys, b, problem.n)
        return component_grads(problem, thetas, idx).mean(axis=1)
    if grads is None:
        _, grads = value_grad_batch(problem, thetas)
    s2 = oracle.variance(problem)
    if s2 == 0:
        return grads.copy()
    scale = math.sqrt(s2 / (b * problem.d))
    return grads + scale * _rng.normals(keys, problem.d)


def minibatch_gradient(problem: ProblemSpec, oracle: OracleMode, theta, b: int,
                       rng_state: _rng.StreamState) -> np.ndarray:
    """One draw of the mini-batch gradient; advances ``rng_state`` by one step."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (problem.d,):
        raise ValueError(f"theta must have shape ({problem.d},), got {theta.shape}")
    oracle.check_batch(problem, b)
    return batch_gradient(problem, oracle, theta[None, :], b, rng_state.next_keys())[0]
