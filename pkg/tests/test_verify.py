"""Value/adjoint relations, paired policy comparison, cost-vs-value check."""

import numpy as np
import pytest

from delaylab import core, merton, pmp, sdde, verify

P0 = dict(
    r=0.03, mu0=0.08, sigma=0.2, beta=0.1, gamma=0.5,
    lam=0.1, delta=1.0, horizon_T=1.0, mu2=0.01,
)

INITIAL = lambda tau: 1.0  # noqa: E731


@pytest.fixture(scope="module")
def setup():
    p = merton.resolve_constraints(**P0)
    qsol = merton.solve_q(p)
    return {
        "params": p,
        "qsol": qsol,
        "model": merton.build_model(p),
        "policy": merton.build_policy(p, qsol),
        "cand": merton.value_function(p, qsol),
        "basis": merton.build_basis(p),
    }


class TestRelations:
    def _adjoints(self, setup, ensemble):
        q = merton.exact_q_factor(setup["params"], ensemble.times)
        return [
            pmp.adjoint_from_value(setup["model"], setup["cand"], ensemble.path(i), q)
            for i in range(ensemble.n_paths)
        ]

    def test_optimal_policy_passes(self, setup):
        cfg = core.SimConfig(n_steps=128, n_paths=64, master_seed=5)
        ens = sdde.simulate_forward(setup["model"], setup["policy"], INITIAL, cfg)
        report = verify.relations_report(
            setup["model"], setup["cand"], ens, self._adjoints(setup, ens), tol=1e-4
        )
        assert report.passed, report.to_dict()

    def test_suboptimal_policy_breaks_time_slope(self, setup):
        policy = verify.scaled_policy(setup["policy"], [0.5, 1.0], "u_half")
        cfg = core.SimConfig(n_steps=64, n_paths=8, master_seed=5)
        ens = sdde.simulate_forward(setup["model"], policy, INITIAL, cfg)
        report = verify.relations_report(
            setup["model"], setup["cand"], ens, self._adjoints(setup, ens), tol=1e-4
        )
        assert not report.passed
        # V_t equals the maximized Hamiltonian, not the one at halved u.
        assert report.time_slope > 1e-3

    def test_report_serializes(self, setup):
        cfg = core.SimConfig(n_steps=32, n_paths=4, master_seed=5)
        ens = sdde.simulate_forward(setup["model"], setup["policy"], INITIAL, cfg)
        d = verify.relations_report(
            setup["model"], setup["cand"], ens, self._adjoints(setup, ens)
        ).to_dict()
        assert d["check"] == "relations"
        assert set(d["adjoint_mismatch"]) == {"p1", "p2", "k1", "k2"}


class TestCompareControls:
    def test_perturbations_cost_more(self, setup):
        perturbations = [
            verify.scaled_policy(setup["policy"], [0.75, 1.0], "u_075"),
            verify.scaled_policy(setup["policy"], [1.25, 1.0], "u_125"),
            verify.scaled_policy(setup["policy"], [1.0, 0.75], "c_075"),
            verify.scaled_policy(setup["policy"], [1.0, 1.25], "c_125"),
            verify.scaled_policy(setup["policy"], [0.0, 1.0], "u_zero"),
        ]
        cfg = core.SimConfig(n_steps=64, n_paths=2000, master_seed=11)
        report = verify.compare_controls(
            setup["model"], setup["policy"], perturbations, INITIAL, cfg,
            setup["basis"],
        )
        assert report.passed, report.to_dict()

    def test_pairing_reduces_noise(self, setup):
        # The paired stderr must beat the unpaired combination of the two
        # individual cost stderrs; that is the whole point of common random
        # numbers.
        alt = verify.scaled_policy(setup["policy"], [1.1, 1.0], "u_110")
        cfg = core.SimConfig(n_steps=32, n_paths=1000, master_seed=23)
        report = verify.compare_controls(
            setup["model"], setup["policy"], [alt], INITIAL, cfg, setup["basis"]
        )
        comp = report.comparisons[0]
        unpaired = float(np.hypot(report.base_stderr, comp.cost_stderr))
        assert comp.paired_diff_stderr < 0.5 * unpaired


class TestClosedFormCost:
    def test_optimal_cost_matches_value(self, setup):
        cfg = core.SimConfig(n_steps=64, n_paths=4000, master_seed=1)
        check = verify.closed_form_cost_check(
            setup["model"], setup["policy"], setup["cand"], INITIAL, cfg,
            setup["basis"],
        )
        assert check.passed, check.to_dict()
        assert check.stderr > 1e-4  # the error estimate must stay honest

    def test_detuned_policy_fails_with_tight_budget(self, setup):
        # Halving the risky allocation moves the cost well outside the
        # tolerance once the Monte Carlo error is small enough.
        policy = verify.scaled_policy(setup["policy"], [0.0, 0.2], "far_off")
        cfg = core.SimConfig(n_steps=64, n_paths=4000, master_seed=1)
        check = verify.closed_form_cost_check(
            setup["model"], policy, setup["cand"], INITIAL, cfg, setup["basis"]
        )
        assert not check.passed
