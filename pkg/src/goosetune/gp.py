"""Gaussian process regression with squared-exponential kernels.

Provides posterior mean/variance, confidence bounds, the analytic gradient of
the posterior mean, and a sliding observation window (append / evict-oldest).
Models behave as snapshots: queries never mutate state, and every mutating
operation returns a new instance, so concurrent readers are always safe.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

logger = logging.getLogger(__name__)

# Jitter escalation for the Cholesky factorization, relative to prior variance.
_JITTER_START = 1e-10
_JITTER_MAX = 1e-6

PriorMean = float | Callable[[np.ndarray], np.ndarray]


class FactorizationError(RuntimeError):
    """Covariance matrix not positive definite even at maximum jitter."""


@dataclass(frozen=True)
class InputPoint:
    """One model input: controller parameters plus the task they ran under.

    ``x_opt`` holds the optimization variables (e.g. position gain, velocity
    PI gains, acceleration feedforward), ``x_tau`` the task/context variables
    (e.g. log10 stepsize, payload, drift). The GP sees their concatenation.
    """

    x_opt: np.ndarray
    x_tau: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_opt", np.atleast_1d(np.asarray(self.x_opt, dtype=float)))
        object.__setattr__(self, "x_tau", np.atleast_1d(np.asarray(self.x_tau, dtype=float)))

    @property
    def joint(self) -> np.ndarray:
        return np.concatenate([self.x_opt, self.x_tau])

    @property
    def dim(self) -> int:
        return self.x_opt.size + self.x_tau.size


@dataclass(frozen=True)
class KernelSpec:
    """Anisotropic squared-exponential kernel, one lengthscale per dimension.

    k(a, b) = prior_std**2 * exp(-0.5 * sum_d (a_d - b_d)**2 / l_d**2)
    """

    lengthscales: np.ndarray
    prior_std: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if ls.size == 0:
            raise ValueError("kernel needs at least one lengthscale")
        if not np.all(ls > 0):
            raise ValueError(f"lengthscales must be strictly positive, got {ls}")
        if not self.prior_std > 0:
            raise ValueError(f"prior_std must be strictly positive, got {self.prior_std}")
        object.__setattr__(self, "lengthscales", ls)

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    @property
    def prior_var(self) -> float:
        return self.prior_std**2

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Pairwise kernel matrix between rows of ``a`` (n,d) and ``b`` (m,d)."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if a.shape[1] != self.dim or b.shape[1] != self.dim:
            raise ValueError(
                f"kernel is {self.dim}-dimensional, got inputs of dim "
                f"{a.shape[1]} and {b.shape[1]}"
            )
        sa = a / self.lengthscales
        sb = b / self.lengthscales
        sq = (
            np.sum(sa**2, axis=1)[:, None]
            + np.sum(sb**2, axis=1)[None, :]
            - 2.0 * sa @ sb.T
        )
        return self.prior_var * np.exp(-0.5 * np.maximum(sq, 0.0))


def kernel_eval(spec: KernelSpec, x: np.ndarray, x2: np.ndarray) -> float:
    """Scalar kernel value between two points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.size != spec.dim or x2.size != spec.dim:
        raise ValueError(f"expected {spec.dim}-dimensional inputs, got {x.size} and {x2.size}")
    return float(spec(x[None, :], x2[None, :])[0, 0])


def multi_task_kernel_eval(
    spec_opt: KernelSpec, spec_tau: KernelSpec, x: InputPoint, x2: InputPoint
) -> float:
    """Product of a parameter-space kernel and a task-space kernel.

    Equals the joint SE kernel over the concatenated input with block
    lengthscales and variance ``(prior_std_opt * prior_std_tau)**2``; see
    :func:`joint_kernel`.
    """
    k_opt = kernel_eval(spec_opt, x.x_opt, x2.x_opt)
    k_tau = kernel_eval(spec_tau, x.x_tau, x2.x_tau)
    return k_tau * k_opt


def joint_kernel(spec_opt: KernelSpec, spec_tau: KernelSpec) -> KernelSpec:
    """Collapse a product-of-SE kernel into a single SE kernel over the
    concatenated input (shared variance, block lengthscales)."""
    return KernelSpec(
        lengthscales=np.concatenate([spec_opt.lengthscales, spec_tau.lengthscales]),
        prior_std=spec_opt.prior_std * spec_tau.prior_std,
    )


def _chol_with_jitter(mat: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor with escalating diagonal jitter.

    ``scale`` sets the absolute size of the jitter steps (the prior variance).
    Returns the factor and the jitter that was needed (0.0 if none).
    """
    try:
        return np.linalg.cholesky(mat), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = _JITTER_START
    eye = np.eye(mat.shape[0])
    while jitter <= _JITTER_MAX:
        try:
            L = np.linalg.cholesky(mat + jitter * scale * eye)
            logger.debug("covariance factorized with jitter %.1e", jitter * scale)
            return L, jitter * scale
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError(
        f"covariance of size {mat.shape[0]} not positive definite at max jitter"
    )


@dataclass(frozen=True)
class GpModel:
    """GP with constant (or task-dependent) prior mean and fixed hyperparameters.

    ``prior_mean`` is either a constant or a callable evaluated on full input
    rows (used for constraint models whose prior tracks a per-task limit).
    ``beta`` scales the confidence bounds: ucb/lcb = mean +/- beta * std.
    """

    kernel: KernelSpec
    noise_std: float
    prior_mean: PriorMean = 0.0
    beta: float = 3.0
    X: np.ndarray = field(default=None, repr=False)  # (n, d)
    y: np.ndarray = field(default=None, repr=False)  # (n,)
    _L: np.ndarray = field(default=None, repr=False)
    _alpha: np.ndarray = field(default=None, repr=False)
    _jitter: float = 0.0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.X is None:
            object.__setattr__(self, "X", np.empty((0, self.kernel.dim)))
            object.__setattr__(self, "y", np.empty(0))

    # -- basic introspection -------------------------------------------------

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.kernel.dim

    def mean0(self, X: np.ndarray) -> np.ndarray:
        """Prior mean evaluated at rows of X."""
        X = np.atleast_2d(X)
        if callable(self.prior_mean):
            return np.broadcast_to(
                np.asarray(self.prior_mean(X), dtype=float), (X.shape[0],)
            ).copy()
        return np.full(X.shape[0], float(self.prior_mean))

    # -- queries ---------------------------------------------------------------

    def posterior(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at query rows X (m, d) -> ((m,), (m,))."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"query dim {X.shape[1]} != model dim {self.dim}")
        mu0 = self.mean0(X)
        if self.n == 0:
            return mu0, np.full(X.shape[0], self.kernel.prior_var)
        k_star = self.kernel(self.X, X)  # (n, m)
        mean = mu0 + k_star.T @ self._alpha
        v = solve_triangular(self._L, k_star, lower=True)
        var = self.kernel.prior_var - np.sum(v**2, axis=0)
        return mean, np.maximum(var, 0.0)

    def std(self, X: np.ndarray) -> np.ndarray:
        return np.sqrt(self.posterior(X)[1])

    def lcb(self, X: np.ndarray) -> np.ndarray:
        """Lower confidence bound mean - beta * std."""
        mean, var = self.posterior(X)
        return mean - self.beta * np.sqrt(var)

    def ucb(self, X: np.ndarray) -> np.ndarray:
        """Upper confidence bound mean + beta * std."""
        mean, var = self.posterior(X)
        return mean + self.beta * np.sqrt(var)

    def confidence_width(self, X: np.ndarray) -> np.ndarray:
        """ucb - lcb = 2 * beta * std."""
        return 2.0 * self.beta * self.std(X)

    def posterior_mean_gradient(self, x: np.ndarray) -> np.ndarray:
        """Analytic gradient of the posterior mean at a single point.

        The prior mean is treated as locally constant, which holds for the
        constant priors used here (the per-task limit prior is constant in
        the optimization variables).
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.size != self.dim:
            raise ValueError(f"query dim {x.size} != model dim {self.dim}")
        if self.n == 0:
            return np.zeros(self.dim)
        k_star = self.kernel(self.X, x[None, :])[:, 0]  # (n,)
        # d/dx k(x, xi) = -k(x, xi) * (x - xi) / l^2
        diffs = (x[None, :] - self.X) / self.kernel.lengthscales**2  # (n, d)
        return -(k_star * self._alpha) @ diffs

    # -- window mutation (returns new snapshots) -------------------------------

    def add_observation(self, x: np.ndarray, y: float) -> "GpModel":
        """Append one observation; extends the factorization by one row."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.size != self.dim:
            raise ValueError(f"input dim {x.size} != model dim {self.dim}")
        if not np.isfinite(y):
            raise ValueError(f"observation must be finite, got {y}")
        if not np.all(np.isfinite(x)):
            raise ValueError("input point must be finite")
        X_new = np.vstack([self.X, x[None, :]])
        y_new = np.append(self.y, float(y))
        L = self._extend_factor(x)
        if L is None:
            L, jitter = self._factor(X_new)
        else:
            jitter = self._jitter
        return self._with_data(X_new, y_new, L, jitter)

    def remove_oldest(self) -> "GpModel":
        """Drop the first-inserted observation; rebuilds the factorization."""
        if self.n == 0:
            logger.debug("remove_oldest on empty model is a no-op")
            return self
        X_new = self.X[1:].copy()
        y_new = self.y[1:].copy()
        if X_new.shape[0] == 0:
            return GpModel(self.kernel, self.noise_std, self.prior_mean, self.beta)
        L, jitter = self._factor(X_new)
        return self._with_data(X_new, y_new, L, jitter)

    # -- internals -------------------------------------------------------------

    def _factor(self, X: np.ndarray) -> tuple[np.ndarray, float]:
        K = self.kernel(X, X) + self.noise_std**2 * np.eye(X.shape[0])
        return _chol_with_jitter(K, self.kernel.prior_var)

    def _extend_factor(self, x: np.ndarray) -> np.ndarray | None:
        """Rank-1 extension of the Cholesky factor; None if it degenerates."""
        if self.n == 0:
            d2 = self.kernel.prior_var + self.noise_std**2 + self._jitter
            return np.array([[np.sqrt(d2)]])
        k_vec = self.kernel(self.X, x[None, :])[:, 0]
        b = solve_triangular(self._L, k_vec, lower=True)
        d2 = self.kernel.prior_var + self.noise_std**2 + self._jitter - b @ b
        if d2 <= 0.0:
            return None
        n = self.n
        L = np.zeros((n + 1, n + 1))
        L[:n, :n] = self._L
        L[n, :n] = b
        L[n, n] = np.sqrt(d2)
        return L

    def _with_data(self, X, y, L, jitter) -> "GpModel":
        mu0 = self.mean0(X)
        alpha = solve_triangular(
            L.T, solve_triangular(L, y - mu0, lower=True), lower=False
        )
        return GpModel(
            kernel=self.kernel,
            noise_std=self.noise_std,
            prior_mean=self.prior_mean,
            beta=self.beta,
            X=X,
            y=y,
            _L=L,
            _alpha=alpha,
            _jitter=jitter,
        )


@dataclass(frozen=True)
class ValidityReport:
    """Outcome of the prior/confidence consistency check for a GP pair.

    ``safety_ok``: with no data, the constraint ucb exceeds the limit
    everywhere, so nothing is presumed safe. ``expansion_ok``: with no data,
    the cost lcb does not exceed the global cost lower bound, so unexplored
    points always look at least as good as anything observed.
    """

    safety_ok: bool
    expansion_ok: bool
    safety_margin: float
    expansion_margin: float

    @property
    def ok(self) -> bool:
        return self.safety_ok and self.expansion_ok

    def describe(self) -> str:
        return (
            f"safety {'pass' if self.safety_ok else 'FAIL'} "
            f"(margin {self.safety_margin:+.4g}), "
            f"expansion {'pass' if self.expansion_ok else 'FAIL'} "
            f"(margin {self.expansion_margin:+.4g})"
        )


def validate_hyperparameters(
    model_f: GpModel, model_q: GpModel, c: float, xi: float
) -> ValidityReport:
    """Check the prior settings that make the tuner safe and expansive.

    Conditions: mu0_q + beta_q * sigma_v_q > c (strict) and
    mu0_f - beta_f * sigma_v_f <= xi. A callable constraint prior is taken to
    track the limit itself (mu0_q = c), which is how the shipped
    configurations define it; the margin is then beta_q * sigma_v_q.
    """
    if callable(model_q.prior_mean):
        safety_margin = model_q.beta * model_q.kernel.prior_std
    else:
        safety_margin = float(model_q.prior_mean) + model_q.beta * model_q.kernel.prior_std - c
    if callable(model_f.prior_mean):
        raise ValueError("cost model must have a constant prior mean")
    expansion_margin = xi - (float(model_f.prior_mean) - model_f.beta * model_f.kernel.prior_std)
    return ValidityReport(
        safety_ok=safety_margin > 0.0,
        expansion_ok=expansion_margin >= 0.0,
        safety_margin=safety_margin,
        expansion_margin=expansion_margin,
    )
