"""Least-squares Monte Carlo solver for the backward equation.

Along a simulated forward ensemble the pair (Y, Z) of

    -dY(t) = f(t, X, X1, X2, Y, Z, u) dt - Z dW(t),   Y(T) = φ(X(T), X1(T))

is approximated backward in time.  At each node the conditional expectations
are replaced by linear regression of the next-node quantities on basis
functions of (X, X1):

    Z_k = proj[ Y_{k+1} ΔW_k / h ]
    Y_k = proj[ Y_{k+1} + h f(t_k, X_k, X1_k, X2_k, Y_{k+1}, Z_k, u_k) ]

The recursive cost of a policy is J = -Y(s); at the initial node the target
is averaged directly (all paths share the initial state), which also gives
the per-path samples used for common-random-number policy comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Array, FeedbackPolicy, SimConfig, StructuredModel
from .sdde import ForwardEnsemble, simulate_forward

RIDGE = 1e-10


@dataclass
class RegressionBasis:
    """Feature map (x, x1) -> (n_samples, n_features) used for projections."""

    features: Callable[[Array, Array], Array]
    description: str = "basis"


def polynomial_basis(degree: int = 2) -> RegressionBasis:
    """All monomials x^i x1^j with i + j <= degree, constant included."""

    def features(x: Array, x1: Array) -> Array:
        cols = []
        for total in range(degree + 1):
            for i in range(total + 1):
                cols.append(x**i * x1 ** (total - i))
        return np.column_stack(cols)

    return RegressionBasis(features=features, description=f"poly(deg={degree})")


def augmented_basis(base: RegressionBasis, extra: Callable[[Array, Array], Array], tag: str) -> RegressionBasis:
    """Append one extra feature column to an existing basis."""

    def features(x: Array, x1: Array) -> Array:
        return np.column_stack([base.features(x, x1), extra(x, x1)])

    return RegressionBasis(features=features, description=f"{base.description}+{tag}")


@dataclass
class BackwardPath:
    """Backward pair along one path; arrays have length n_steps + 1."""

    times: Array
    y: Array
    z: Array


@dataclass
class BackwardSolution:
    """Regression solution of the backward equation on an ensemble.

    y[:, k] for 0 < k < n_steps holds the regressed conditional-expectation
    estimates; y[:, 0] holds the per-path pathwise cost accumulations
    (regression-free, so their spread is an honest Monte Carlo error).
    y_at_s is their mean and stderr its standard error.  z[:, -1] is not
    defined by the scheme and is stored as 0.
    """

    times: Array
    y: Array
    z: Array
    y_at_s: float
    stderr: float
    degraded_steps: list = field(default_factory=list)

    def path(self, i: int) -> BackwardPath:
        return BackwardPath(times=self.times, y=self.y[i], z=self.z[i])


def _project(features: Array, target: Array, ridge: float):
    """Ridge-damped least-squares prediction of target given features.

    Falls back to the ensemble mean (constant basis) if the normal equations
    cannot be solved or produce non-finite predictions.
    """
    n = features.shape[0]
    with np.errstate(all="ignore"):
        a = features.T @ features / n + ridge * np.eye(features.shape[1])
        rhs = features.T @ target / n
        try:
            beta = np.linalg.solve(a, rhs)
            pred = features @ beta
        except np.linalg.LinAlgError:
            return np.full_like(target, target.mean()), True
    if not np.all(np.isfinite(pred)):
        return np.full_like(target, target.mean()), True
    return pred, False


def solve_backward(
    model: StructuredModel,
    ensemble: ForwardEnsemble,
    basis: RegressionBasis,
    ridge: float = RIDGE,
) -> BackwardSolution:
    """Backward regression sweep along a simulated ensemble."""
    t = ensemble.times
    h = float(t[1] - t[0])
    n_paths, n_steps = ensemble.n_paths, ensemble.n_steps
    u_all = np.moveaxis(ensemble.controls, 2, 0)

    y = np.empty((n_paths, n_steps + 1))
    z = np.zeros((n_paths, n_steps + 1))
    y[:, -1] = model.phi(ensemble.x[:, -1], ensemble.x1[:, -1])
    degraded: list = []

    for k in range(n_steps - 1, 0, -1):
        xk, x1k, x2k = ensemble.x[:, k], ensemble.x1[:, k], ensemble.x2[:, k]
        uk = u_all[:, :, k]
        feats = basis.features(xk, x1k)
        y_next = y[:, k + 1]

        z_pred, bad_z = _project(feats, y_next * ensemble.dw[:, k] / h, ridge)
        z[:, k] = z_pred
        target = y_next + h * model.generator(
            float(t[k]), xk, x1k, x2k, y_next, z_pred, uk
        )
        y_pred, bad_y = _project(feats, target, ridge)
        y[:, k] = y_pred
        if bad_z or bad_y:
            degraded.append(k)

    # Z at the initial node (shared state, so the projection is an average).
    z[:, 0] = float((y[:, 1] * ensemble.dw[:, 0] / h).mean())

    # Pathwise accumulation for the cost estimate.  Intermediate regression
    # would smooth the per-path samples and correlate them through the shared
    # fit, making the reported standard error far too small; accumulating the
    # driver along each path keeps the samples honest while the regressed
    # y[:, k] still provide the conditional-expectation functions.
    y_hat = y[:, -1].copy()
    for k in range(n_steps - 1, -1, -1):
        xk, x1k, x2k = ensemble.x[:, k], ensemble.x1[:, k], ensemble.x2[:, k]
        y_hat = y_hat + h * model.generator(
            float(t[k]), xk, x1k, x2k, y_hat, z[:, k], u_all[:, :, k]
        )
    y[:, 0] = y_hat

    y_at_s = float(y_hat.mean())
    stderr = float(y_hat.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return BackwardSolution(
        times=t, y=y, z=z, y_at_s=y_at_s, stderr=stderr, degraded_steps=degraded
    )


@dataclass
class CostEstimate:
    """Monte Carlo estimate of the recursive cost J = -Y(s)."""

    value: float
    stderr: float
    samples: Array  # per-path cost samples -Y0_i
    solution: BackwardSolution
    ensemble: ForwardEnsemble


def recursive_cost(
    model: StructuredModel,
    policy: FeedbackPolicy,
    initial_path: Callable[[float], float],
    config: SimConfig,
    basis: RegressionBasis,
) -> CostEstimate:
    """Simulate forward under a policy and return the recursive cost J = -Y(s)."""
    ensemble = simulate_forward(model, policy, initial_path, config)
    sol = solve_backward(model, ensemble, basis)
    samples = -sol.y[:, 0]
    return CostEstimate(
        value=float(samples.mean()),
        stderr=sol.stderr,
        samples=samples,
        solution=sol,
        ensemble=ensemble,
    )


def write_backward_csv(sol: BackwardSolution, stream) -> None:
    """Write the backward pair in long format: path,t,y,z."""
    stream.write("path,t,y,z\n")
    n_paths, n_nodes = sol.y.shape
    for i in range(n_paths):
        for k in range(n_nodes):
            stream.write(
                f"{i},{format(float(sol.times[k]), '.17g')},"
                f"{format(float(sol.y[i, k]), '.17g')},"
                f"{format(float(sol.z[i, k]), '.17g')}\n"
            )
