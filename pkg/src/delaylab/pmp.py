"""Adjoint processes and maximum-condition diagnostics.

The stochastic maximum principle for the delayed recursive problem uses the
Hamiltonian

    H(t, x, x1, x2, y, z, u; p, q, k)
      = p1·b + p2·(x − λx1 − e^{-λδ}x2) + k1·σ − q·f

with a triple of first-order adjoints (p1, p2, p3), their martingale parts
(k1, k2), and a scalar factor q solving the forward equation

    dq(t) = q(t) [f_y dt + f_z dW(t)],   q(s) = 1.

When a smooth candidate value V is available, the adjoints are recovered
directly from it:

    p1 = V_x q,    k1 = (V_xx σ + V_x f_z) q,
    p2 = V_x1 q,   k2 = (V_xx1 σ + V_x1 f_z) q,   p3 ≡ 0,

with terminal values p1(T) = −φ_x q(T), p2(T) = −φ_x1 q(T), p3(T) = 0.
The p3 ≡ 0 reduction is equivalent to the pointwise identity
b2·p1 − e^{-λδ}·p2 − q·f2 = 0 along the optimal path, which is checked both
directly and by back-integrating the p3 drift from its terminal value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from .core import Array, StructuredModel
from .hjb import CheckReport, ValueCandidate
from .sdde import ForwardEnsemble, ForwardPath


@dataclass
class AdjointPath:
    """Adjoint trajectories along one forward path; arrays of length n+1."""

    times: Array
    p1: Array
    p2: Array
    p3: Array
    q: Array
    k1: Array
    k2: Array


def hamiltonian(model: StructuredModel, t, x, x1, x2, y, z, u, p1, p2, q, k1):
    """H = p1 b + p2 (x − λx1 − e^{-λδ}x2) + k1 σ − q f."""
    params = model.params
    b = model.b1(t, x, x1, u) + model.b2(t, x, x1, u) * x2
    sg = model.sigma(t, x, x1, u)
    f = model.generator(t, x, x1, x2, y, z, u)
    return (
        p1 * b
        + p2 * (x - params.lam * x1 - params.e_minus * x2)
        + k1 * sg
        - q * f
    )


def simulate_q(
    model: StructuredModel,
    ensemble: ForwardEnsemble,
    y: Array | None = None,
    z: Array | None = None,
) -> Array:
    """Forward solution of dq = q(f_y dt + f_z dW), q(s) = 1, per path.

    Uses multiplicative exponential stepping, which is exact when f_y and
    f_z are constants (the recursive-utility case) and first-order accurate
    otherwise.  The optional (y, z) arrays supply the generator's own slots;
    they default to zero, which is exact whenever f is affine in (y, z).
    """
    t = ensemble.times
    h = float(t[1] - t[0])
    n_paths, n_steps = ensemble.n_paths, ensemble.n_steps
    if y is None:
        y = np.zeros_like(ensemble.x)
    if z is None:
        z = np.zeros_like(ensemble.x)
    u_all = np.moveaxis(ensemble.controls, 2, 0)

    log_q = np.zeros((n_paths, n_steps + 1))
    for k in range(n_steps):
        tk = float(t[k])
        xk, x1k, x2k = ensemble.x[:, k], ensemble.x1[:, k], ensemble.x2[:, k]
        uk = u_all[:, :, k]
        fy = model.f_y_value(tk, xk, x1k, x2k, y[:, k], z[:, k], uk)
        fz = model.f_z_value(tk, xk, x1k, x2k, y[:, k], z[:, k], uk)
        log_q[:, k + 1] = (
            log_q[:, k] + (fy - 0.5 * fz**2) * h + fz * ensemble.dw[:, k]
        )
    return np.exp(log_q)


def adjoint_from_value(
    model: StructuredModel,
    cand: ValueCandidate,
    path: ForwardPath,
    q: Array,
) -> AdjointPath:
    """Adjoints recovered from a candidate value function along one path."""
    t, x, x1 = path.times, path.x, path.x1
    u = path.controls.T
    sg = model.sigma(t, x, x1, u)
    vx = cand.v_x(t, x, x1)
    vx1 = cand.v_x1(t, x, x1)
    y = -cand.v(t, x, x1)
    z = -sg * vx
    fz = model.f_z_value(t, x, x1, path.x2, y, z, u)
    p1 = vx * q
    p2 = vx1 * q
    k1 = (cand.v_xx(t, x, x1) * sg + vx * fz) * q
    k2 = (cand.v_xx1_value(t, x, x1) * sg + vx1 * fz) * q
    return AdjointPath(
        times=t,
        p1=np.broadcast_to(p1, x.shape).astype(float),
        p2=np.broadcast_to(p2, x.shape).astype(float),
        p3=np.zeros_like(x),
        q=np.asarray(q, float),
        k1=np.broadcast_to(k1, x.shape).astype(float),
        k2=np.broadcast_to(k2, x.shape).astype(float),
    )


def _path_yz(model, cand, path):
    """Value-consistent backward slots along a path: y = −V, z = −σV_x."""
    t, x, x1 = path.times, path.x, path.x1
    u = path.controls.T
    y = -cand.v(t, x, x1)
    z = -model.sigma(t, x, x1, u) * cand.v_x(t, x, x1)
    return np.broadcast_to(y, x.shape), np.broadcast_to(z, x.shape)


def check_p3_zero(
    model: StructuredModel,
    cand: ValueCandidate,
    path: ForwardPath,
    adjoint: AdjointPath,
    tol: float = 1e-10,
) -> CheckReport:
    """Pointwise and integrated checks that the x2-adjoint vanishes.

    Pointwise: b2·p1 − e^{-λδ}·p2 − q·f2 = 0 along the path (this is the
    drift of p3 up to sign).  Integrated: back-integration of that drift
    from p3(T) = 0 must stay at zero.  Residuals are reported relative to
    the path's largest |p1|.
    """
    params = model.params
    t, x, x1, x2 = path.times, path.x, path.x1, path.x2
    u = path.controls.T
    y, z = _path_yz(model, cand, path)
    b2 = np.broadcast_to(model.b2(t, x, x1, u), x.shape)
    f2 = np.broadcast_to(model.f2(t, x, x1, y, z, u), x.shape)
    drift = b2 * adjoint.p1 - params.e_minus * adjoint.p2 - adjoint.q * f2

    h = float(t[1] - t[0])
    p3 = np.zeros_like(x)
    for k in range(x.size - 2, -1, -1):
        p3[k] = p3[k + 1] + h * drift[k]

    scale = max(float(np.max(np.abs(adjoint.p1))), 1e-300)
    worst = max(float(np.max(np.abs(drift))), float(np.max(np.abs(p3)))) / scale
    return CheckReport(
        check="p3_zero",
        probes=x.size,
        max_residual=worst,
        tolerance=tol,
        passed=worst < tol,
        extra={
            "max_drift": float(np.max(np.abs(drift))),
            "max_backintegrated": float(np.max(np.abs(p3))),
        },
    )


def hamiltonian_control_gradient(
    model: StructuredModel,
    t,
    x,
    x1,
    x2,
    y,
    z,
    u: Array,
    p1,
    p2,
    q,
    k1,
    rel_step: float = 1e-6,
) -> Array:
    """Central-difference gradient of H in each control coordinate."""
    grads = []
    for i in range(u.shape[0]):
        e = rel_step * (1.0 + np.abs(u[i]))
        up = u.copy()
        dn = u.copy()
        up[i] = u[i] + e
        dn[i] = u[i] - e
        hu = hamiltonian(model, t, x, x1, x2, y, z, up, p1, p2, q, k1)
        hd = hamiltonian(model, t, x, x1, x2, y, z, dn, p1, p2, q, k1)
        grads.append((hu - hd) / (2.0 * e))
    return np.stack(grads)


def maximum_condition_check(
    model: StructuredModel,
    cand: ValueCandidate,
    path: ForwardPath,
    adjoint: AdjointPath,
    n_grid: int = 9,
    tol: float = 1e-6,
) -> CheckReport:
    """First-order optimality of the stored controls along a path.

    Checks |H_u| at the stored control (interior stationarity) and the
    variational inequality H_u(u*)·(u* − u) ≤ tol over a control grid.
    """
    t, x, x1, x2 = path.times, path.x, path.x1, path.x2
    u_star = path.controls.T
    y, z = _path_yz(model, cand, path)
    grad = hamiltonian_control_gradient(
        model, t, x, x1, x2, y, z, u_star, adjoint.p1, adjoint.p2, adjoint.q, adjoint.k1
    )
    max_grad = float(np.max(np.abs(grad)))

    worst_vi = -np.inf
    box = model.control_set
    for i in range(u_star.shape[0]):
        for u_alt in box.axis_grid(i, n_grid):
            worst_vi = max(worst_vi, float(np.max(grad[i] * (u_star[i] - u_alt))))

    worst = max(max_grad, worst_vi)
    return CheckReport(
        check="maximum_condition",
        probes=x.size,
        max_residual=worst,
        tolerance=tol,
        passed=worst < tol,
        extra={"max_abs_h_u": max_grad, "max_variational": worst_vi},
    )


def convexity_spot_check(
    model: StructuredModel,
    t: float,
    probes: Sequence[dict],
    rel_step: float = 3e-4,
    tol_factor: float = 1e-6,
) -> CheckReport:
    """Numerical Hessian probe of H in (x, x1, x2, y, z, u).

    Each probe supplies state/backward/control values together with the
    adjoint values (p1, p2, q, k1) at which H is frozen.  This is a sampling
    heuristic: it can only refute convexity, and only at the chosen probes.
    Passes when every Hessian eigenvalue is above −tol_factor·(1 + |λ_max|).
    """
    worst_ratio = -np.inf
    min_eigs = []
    for probe in probes:
        base = np.concatenate(
            [
                [probe["x"], probe["x1"], probe["x2"], probe["y"], probe["z"]],
                np.atleast_1d(probe["u"]).astype(float),
            ]
        )
        n_var = base.size
        p1, p2, q, k1 = probe["p1"], probe["p2"], probe["q"], probe["k1"]

        def h_of(v):
            u = v[5:]
            return float(
                hamiltonian(
                    model, t, v[0], v[1], v[2], v[3], v[4], u, p1, p2, q, k1
                )
            )

        steps = rel_step * (1.0 + np.abs(base))
        hess = np.empty((n_var, n_var))
        f0 = h_of(base)
        for i in range(n_var):
            ei = np.zeros(n_var)
            ei[i] = steps[i]
            hess[i, i] = (h_of(base + ei) - 2 * f0 + h_of(base - ei)) / steps[i] ** 2
            for j in range(i + 1, n_var):
                ej = np.zeros(n_var)
                ej[j] = steps[j]
                mixed = (
                    h_of(base + ei + ej)
                    - h_of(base + ei - ej)
                    - h_of(base - ei + ej)
                    + h_of(base - ei - ej)
                ) / (4.0 * steps[i] * steps[j])
                hess[i, j] = hess[j, i] = mixed
        eigs = np.linalg.eigvalsh(hess)
        min_eigs.append(float(eigs[0]))
        allowed = tol_factor * (1.0 + abs(float(eigs[-1])))
        worst_ratio = max(worst_ratio, float(-eigs[0] - allowed))

    return CheckReport(
        check="convexity_spot",
        probes=len(probes),
        max_residual=worst_ratio,
        tolerance=0.0,
        passed=worst_ratio <= 0.0,
        extra={"min_eigenvalues": min_eigs},
    )


def write_adjoint_csv(adjoints: Sequence[AdjointPath], stream: TextIO) -> None:
    """Write adjoint trajectories in long format: path,t,p1,p2,p3,q,k1,k2."""
    stream.write("path,t,p1,p2,p3,q,k1,k2\n")
    for i, adj in enumerate(adjoints):
        for k in range(adj.times.size):
            vals = [
                adj.times[k], adj.p1[k], adj.p2[k], adj.p3[k],
                adj.q[k], adj.k1[k], adj.k2[k],
            ]
            stream.write(
                str(i) + "," + ",".join(format(float(v), ".17g") for v in vals) + "\n"
            )
