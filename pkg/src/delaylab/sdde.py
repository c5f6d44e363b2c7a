"""Forward simulation of delayed diffusions by Euler-Maruyama.

The state follows

    dX(t) = [b1 + b2·X(t−δ)] dt + σ dW(t)

with coefficients evaluated at (t, X(t), X1(t), u(t)) and the moving average

    X1(t) = ∫_{-δ}^{0} e^{λτ} X(t+τ) dτ

advanced either by its exact pathwise differential identity

    dX1 = [X(t) − e^{-λδ} X(t−δ) − λ X1(t)] dt

or by re-quadrature of the sliding window at every node.  Each path draws
its Brownian increments from a generator seeded only by (master_seed, path
index), so ensembles are reproducible path by path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, TextIO

import numpy as np

from .core import (
    Array,
    DelayBuffer,
    FeedbackPolicy,
    SimConfig,
    SimulationDivergedError,
    StructuredModel,
    derive_path_seed,
    x1_of_buffer,
)

DIVERGENCE_BOUND = 1e12


@dataclass(frozen=True)
class ForwardPath:
    """Single simulated path on the uniform grid.

    All state arrays have length n_steps + 1; dw has length n_steps.
    controls has shape (n_steps + 1, n_controls).
    """

    times: Array
    x: Array
    x1: Array
    x2: Array
    controls: Array
    dw: Array


@dataclass
class ForwardEnsemble:
    """Simulated ensemble stored as (n_paths, n_steps + 1) arrays.

    initial holds the sampled pre-history on [s − δ, s] (oldest first), so
    the full trajectory including pre-history can be reconstructed.
    """

    times: Array
    x: Array
    x1: Array
    x2: Array
    controls: Array  # (n_paths, n_steps + 1, n_controls)
    dw: Array  # (n_paths, n_steps)
    initial: Array  # (lag + 1,)
    config: SimConfig

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def n_steps(self) -> int:
        return self.x.shape[1] - 1

    def path(self, i: int) -> ForwardPath:
        return ForwardPath(
            times=self.times,
            x=self.x[i],
            x1=self.x1[i],
            x2=self.x2[i],
            controls=self.controls[i],
            dw=self.dw[i],
        )


def x1_step_ode(x1, x, x2, lam: float, delta: float, h: float):
    """One Euler step of the moving-average identity dX1 = (X − e^{-λδ}X2 − λX1)dt."""
    return x1 + h * (x - math.exp(-lam * delta) * x2 - lam * x1)


def brownian_increments(master_seed: int, n_paths: int, n_steps: int, h: float) -> Array:
    """Per-path Brownian increments, each row from its own derived seed."""
    dw = np.empty((n_paths, n_steps))
    sqrt_h = math.sqrt(h)
    for i in range(n_paths):
        rng = np.random.default_rng(derive_path_seed(master_seed, i))
        dw[i] = rng.normal(0.0, sqrt_h, n_steps)
    return dw


def simulate_forward(
    model: StructuredModel,
    policy: FeedbackPolicy,
    initial_path: Callable[[float], float],
    config: SimConfig,
) -> ForwardEnsemble:
    """Euler-Maruyama simulation of the delayed state and its summaries.

    initial_path is the deterministic segment φ(τ) for τ ∈ [−δ, 0]; it is
    sampled onto the simulation grid, which therefore must divide δ.
    Divergence (non-finite state or |X| above 1e12) aborts with the step index.
    """
    params = model.params
    h = config.step_size(params)
    lag = config.validate_grid(params)
    n_steps, n_paths = config.n_steps, config.n_paths
    n_u = policy.n_controls

    buffer = DelayBuffer.from_initial_path(initial_path, params.delta, h)
    initial = buffer.samples.copy()

    # xfull[:, j] holds X(s - δ + j h); column lag + k is node t_k.
    xfull = np.empty((n_paths, lag + n_steps + 1))
    xfull[:, : lag + 1] = initial[np.newaxis, :]

    times = params.start_s + h * np.arange(n_steps + 1)
    x1 = np.empty((n_paths, n_steps + 1))
    x1[:, 0] = x1_of_buffer(buffer, params.lam)
    controls = np.empty((n_paths, n_steps + 1, n_u))
    dw = brownian_increments(config.master_seed, n_paths, n_steps, h)

    if config.x1_method == "quadrature" and lag > 0:
        tau = np.linspace(-params.delta, 0.0, lag + 1)
        quad_w = np.exp(params.lam * tau) * h
        quad_w[0] *= 0.5
        quad_w[-1] *= 0.5
    else:
        quad_w = None

    e_minus = params.e_minus
    for k in range(n_steps):
        t = float(times[k])
        x = xfull[:, lag + k]
        x2 = xfull[:, k]
        x1k = x1[:, k]
        u = policy.at(t, x, x1k)
        controls[:, k, :] = u.T

        b = model.b1(t, x, x1k, u) + model.b2(t, x, x1k, u) * x2
        sg = model.sigma(t, x, x1k, u)
        xn = x + b * h + sg * dw[:, k]

        bad = ~np.isfinite(xn) | (np.abs(xn) > DIVERGENCE_BOUND)
        if np.any(bad):
            raise SimulationDivergedError(step=k + 1, n_bad=int(bad.sum()))
        xfull[:, lag + k + 1] = xn

        if quad_w is not None:
            x1[:, k + 1] = xfull[:, k + 1 : k + lag + 2] @ quad_w
        elif lag == 0:
            x1[:, k + 1] = 0.0
        else:
            x1[:, k + 1] = x1k + h * (x - e_minus * x2 - params.lam * x1k)

    u_T = policy.at(float(times[-1]), xfull[:, lag + n_steps], x1[:, -1])
    controls[:, -1, :] = u_T.T

    return ForwardEnsemble(
        times=times,
        x=xfull[:, lag:],
        x1=x1,
        x2=xfull[:, : n_steps + 1],
        controls=controls,
        dw=dw,
        initial=initial,
        config=config,
    )


# ---------------------------------------------------------------------------
# Pathwise chain-rule diagnostic
# ---------------------------------------------------------------------------


@dataclass
class SmoothTestFunction:
    """Test function g(t, x, x1) with the partials entering the chain rule."""

    g: Callable
    g_t: Callable
    g_x: Callable
    g_xx: Callable
    g_x1: Callable


@dataclass
class ItoCheckReport:
    """Ensemble statistics of the accumulated chain-rule defect."""

    mean: float
    stderr: float
    residuals: Array
    h: float

    @property
    def passed(self) -> bool:
        return abs(self.mean) <= 3.0 * self.stderr + 1e-14


def delayed_ito_check(
    g: SmoothTestFunction,
    ensemble: ForwardEnsemble,
    model: StructuredModel,
) -> ItoCheckReport:
    """Accumulated defect of the delayed chain rule along simulated paths.

    Per step the increment of g(t, X, X1) is compared with

        [g_t + b g_x + ½ σ² g_xx + (X − λX1 − e^{-λδ}X2) g_x1] h + g_x σ ΔW

    evaluated at the left node.  The summed defect should be centered at 0
    with spread shrinking like sqrt(h).
    """
    params = model.params
    t = ensemble.times
    h = float(t[1] - t[0])
    x, x1, x2 = ensemble.x, ensemble.x1, ensemble.x2
    u = np.moveaxis(ensemble.controls, 2, 0)  # (n_u, n_paths, n_steps + 1)

    tL = t[:-1]
    xL, x1L, x2L = x[:, :-1], x1[:, :-1], x2[:, :-1]
    uL = u[:, :, :-1]

    b = model.b1(tL, xL, x1L, uL) + model.b2(tL, xL, x1L, uL) * x2L
    sg = model.sigma(tL, xL, x1L, uL)
    drift = (
        g.g_t(tL, xL, x1L)
        + b * g.g_x(tL, xL, x1L)
        + 0.5 * sg**2 * g.g_xx(tL, xL, x1L)
        + (xL - params.lam * x1L - params.e_minus * x2L) * g.g_x1(tL, xL, x1L)
    )
    dg = g.g(t[1:], x[:, 1:], x1[:, 1:]) - g.g(tL, xL, x1L)
    defect = dg - drift * h - g.g_x(tL, xL, x1L) * sg * ensemble.dw

    residuals = defect.sum(axis=1)
    mean = float(residuals.mean())
    n = residuals.size
    stderr = float(residuals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return ItoCheckReport(mean=mean, stderr=stderr, residuals=residuals, h=h)


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_forward_csv(ensemble: ForwardEnsemble, stream: TextIO) -> None:
    """Write the ensemble in long format: path,t,x,x1,x2,u[,c],dw.

    The second control column appears only for two-control models; dw is
    blank at the terminal node.
    """
    n_u = ensemble.controls.shape[2]
    u_cols = ["u"] if n_u == 1 else ["u", "c"]
    stream.write(",".join(["path", "t", "x", "x1", "x2", *u_cols, "dw"]) + "\n")
    for i in range(ensemble.n_paths):
        for k in range(ensemble.n_steps + 1):
            row = [
                str(i),
                _fmt(ensemble.times[k]),
                _fmt(ensemble.x[i, k]),
                _fmt(ensemble.x1[i, k]),
                _fmt(ensemble.x2[i, k]),
                *[_fmt(ensemble.controls[i, k, j]) for j in range(n_u)],
                _fmt(ensemble.dw[i, k]) if k < ensemble.n_steps else "",
            ]
            stream.write(",".join(row) + "\n")
