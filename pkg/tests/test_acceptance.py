"""Acceptance suite: one test per criterion at the standard tier.

Each test prints a ``[PASS]`` or ``[FAIL]`` line; the lines are repeated in
the terminal summary. Besides the verdict, every gate's tolerance is pinned
here so that a loosened library gate fails the suite.

Run standalone with ``python3 tests/test_acceptance.py [tier]``.
"""

import sys

import pytest

from bslab.verification import CHECKS

TIER = "standard"
SEED = 0

# gate -> tolerance, as stated for each criterion (statistical ones at 1e5 paths)
STATED = {
    1: {"exact_identity_holds": {"equals": True}, "float_identity_error": {"max": 1e-12},
        "mc_relative_variance_error": {"max": 0.01}},
    2: {"chi2_times_in_band": {"min": 8}, "endpoint_tv_coarse": {"max": 0.02}},
    3: {"ks_marginal_x1": {"max": 0.02}, "ks_tube_occupation": {"max": 0.02}},
    4: {"interval_max_error": {"max": 1e-10}, "box_max_error": {"max": 1e-10}},
    5: {"factorised_vs_bruteforce": {"max": 1e-10}, "initial_term_error": {"max": 1e-10},
        "conditional_term_error": {"max": 1e-10}, "chain_rule_sum_error": {"max": 1e-10},
        "decomposition_sum_error": {"max": 1e-10}},
    6: {"tiny_entropy_gap": {"max": 1e-6}, "entropy_nonnegative": {"min": 0.0},
        "residual": {"max": 1e-8}, "sweeps": {"max_incl": 500}},
    7: {"hjb_reduction_factors": {"range": [3.0, 5.0]}, "ns_forward_monotone": {"equals": True},
        "impermeability": {"max_incl": 0.0}, "psi_jump_error": {"max": 1e-12},
        "grad_jump_order_factor": {"range": [3.0, 5.0]}, "feynman_kac_agreement": {"min": 0.9}},
    8: {"residual_vs_divergence_free_control": {"max": 1e-3}},
    9: {"closed_form_vs_quadrature": {"max": 1e-8}, "finiteness_bound_slack": {"min": 0.0}},
    10: {"relative_error": {"max": 0.10}},
}

LINES: dict[int, str] = {}


def _relative_gates(k, r):
    """Gates whose threshold is itself a computed quantity."""
    if k == 6:
        assert r.tolerance["entropy_below_candidate"]["max_incl"] == pytest.approx(
            r.info["candidate_bound"], abs=1e-11)
        assert 0.0 <= r.measured["entropy_below_candidate"] <= \
            r.tolerance["entropy_below_candidate"]["max_incl"]
    if k == 8:
        control = r.info["compressible_control"]
        assert r.tolerance["residual_vs_compressible_control"]["max"] == pytest.approx(control / 10)


@pytest.mark.parametrize("k", sorted(CHECKS))
def test_criterion(k):
    r = CHECKS[k](TIER, SEED)
    LINES[k] = r.line()
    print(r.line())
    for gate, tol in STATED[k].items():
        assert r.tolerance[gate] == tol, f"gate {gate} tolerance drifted"
    _relative_gates(k, r)
    assert r.passed, r.line() + "\n" + repr(r.measured)


def test_every_criterion_is_checked():
    assert sorted(CHECKS) == list(range(1, 11))


if __name__ == "__main__":
    tier = sys.argv[1] if len(sys.argv) > 1 else TIER
    ok = True
    for k in sorted(CHECKS):
        r = CHECKS[k](tier, SEED)
        print(r.line(), flush=True)
        ok &= r.passed
    sys.exit(0 if ok else 1)
