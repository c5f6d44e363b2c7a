"""Adjoint trajectories, the maximum condition, and simulated costs.

Along simulated optimal paths this script builds the adjoint processes from
the candidate value, checks that the x2-adjoint vanishes and that the
pathwise Hamiltonian is stationary in the controls, and then compares the
regression Monte Carlo cost of the optimal policy (and scaled variants)
against the closed-form value at the initial state.
"""

import numpy as np

from delaylab import core, merton, pmp, sdde, verify

params = merton.resolve_constraints(
    r=0.03, mu0=0.08, sigma=0.2, beta=0.1, gamma=0.5,
    lam=0.1, delta=1.0, horizon_T=1.0, mu2=0.01,
)
qsol = merton.solve_q(params)
model = merton.build_model(params)
policy = merton.build_policy(params, qsol)
cand = merton.value_function(params, qsol)
basis = merton.build_basis(params)
initial = lambda tau: 1.0  # noqa: E731

config = core.SimConfig(n_steps=128, n_paths=32, master_seed=31)
ensemble = sdde.simulate_forward(model, policy, initial, config)
q = merton.exact_q_factor(params, ensemble.times)

print("adjoint diagnostics on 32 simulated optimal paths")
p3_worst = hu_worst = 0.0
for i in range(ensemble.n_paths):
    path = ensemble.path(i)
    adj = pmp.adjoint_from_value(model, cand, path, q)
    p3_worst = max(p3_worst, pmp.check_p3_zero(model, cand, path, adj).max_residual)
    hu_worst = max(
        hu_worst, pmp.maximum_condition_check(model, cand, path, adj).max_residual
    )
print(f"  worst x2-adjoint residual   {p3_worst:.3e}")
print(f"  worst control stationarity  {hu_worst:.3e}")

print("\ncost of the optimal policy vs the closed-form value")
cost_cfg = core.SimConfig(n_steps=64, n_paths=4000, master_seed=1)
check = verify.closed_form_cost_check(model, policy, cand, initial, cost_cfg, basis)
print(f"  J(u*) = {check.cost:.5f} +- {check.stderr:.5f}")
print(f"  V     = {check.reference:.5f}   -> {'PASS' if check.passed else 'FAIL'}")

print("\npaired comparison against scaled policies (common random numbers)")
perturbations = [
    verify.scaled_policy(policy, [0.75, 1.0], "u x 0.75"),
    verify.scaled_policy(policy, [1.25, 1.0], "u x 1.25"),
    verify.scaled_policy(policy, [1.0, 0.75], "c x 0.75"),
    verify.scaled_policy(policy, [1.0, 1.25], "c x 1.25"),
    verify.scaled_policy(policy, [0.0, 1.0], "u = 0"),
]
report = verify.compare_controls(
    model, policy, perturbations, initial, cost_cfg, basis
)
for comp in report.comparisons:
    print(f"  {comp.label:<9} dJ = {comp.paired_diff_mean:+.5f} "
          f"+- {comp.paired_diff_stderr:.5f}")
