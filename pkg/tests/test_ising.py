import math

import numpy as np
import pytest

from causalphi.core.errors import InvalidArgumentError
from causalphi.models.schemas import CisConfig, EmConfig
from causalphi.services.cis import phi_CIS
from causalphi.services.em import phi_CII
from causalphi.services.ips import phi_G
from causalphi.services.ising import (
    PRESETS,
    ExteriorIsingSystem,
    IsingSystem,
    exterior_joint,
    exterior_kernel,
    power_iterate,
    reduced_stationary,
    spin_states,
    stationary,
    stationary_joint,
    transition_kernel,
)
from causalphi.services.measures import phi_I, phi_SI, phi_T
from helpers import visible

V2 = PRESETS["paper-n2"].weights


def test_spin_state_order():
    assert spin_states(2).tolist() == [[-1, -1], [-1, 1], [1, -1], [1, 1]]


def test_system_validation():
    with pytest.raises(InvalidArgumentError):
        IsingSystem(np.ones((2, 3)), 1.0)
    with pytest.raises(InvalidArgumentError):
        IsingSystem(np.ones((2, 2)), -0.1)
    with pytest.raises(InvalidArgumentError):
        ExteriorIsingSystem(IsingSystem(V2, 1.0), [1.0])


# ── kernel ──


def test_kernel_at_zero_beta_is_uniform():
    kernel = transition_kernel(IsingSystem(V2, 0.0)).as_matrix()
    assert np.allclose(kernel, 0.25, rtol=0, atol=1e-15)


def test_single_node_kernel_value():
    kernel = transition_kernel(IsingSystem([[1.0]], 0.5))
    # state index 1 is +1
    assert kernel.row([1])[1] == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-12)
    assert kernel.row([1])[1] == pytest.approx(0.731059, abs=1e-6)


@pytest.mark.parametrize("beta", [0.3, 2.0, 6.0])
def test_kernel_rows_and_sign_symmetry(beta):
    K = transition_kernel(IsingSystem(PRESETS["paper-n3"].weights, beta)).as_matrix()
    assert np.allclose(K.sum(axis=1), 1.0, rtol=0, atol=1e-14)
    assert np.all((K > 0) & (K < 1))
    # negating every spin reverses both state enumerations
    assert np.allclose(K[::-1, ::-1], K, rtol=0, atol=1e-15)


# ── stationary distribution ──


def test_single_node_stationary_is_uniform():
    state = stationary(IsingSystem([[0.7]], 3.0))
    assert state.converged
    assert np.allclose(state.probs, [0.5, 0.5], atol=1e-12)


def test_zero_beta_stationary_is_uniform():
    state = stationary(IsingSystem(PRESETS["paper-n3"].weights, 0.0))
    assert np.allclose(state.probs, 1 / 8, atol=1e-12)


@pytest.mark.parametrize("beta", [0.5, 1.5, 4.0, 15.0, 25.0, 30.0])
def test_stationary_independent_of_start(beta):
    system = IsingSystem(V2, beta)
    a = stationary(system, seed=0)
    b = stationary(system, seed=99)
    assert a.converged and b.converged
    assert np.abs(a.probs - b.probs).sum() < 1e-11
    assert a.residual < 1e-12
    assert np.abs(a.probs[::-1] - a.probs).max() < 1e-12


def test_power_iteration_stops_on_l1_residual():
    K = transition_kernel(IsingSystem(V2, 1.0)).as_matrix()
    state = power_iterate(K, tol=1e-10, polish=False)
    assert state.converged
    assert state.residual == pytest.approx(np.abs(state.probs @ K - state.probs).sum(), abs=1e-18)
    assert state.residual < 1e-10


def test_reduced_stationary_on_two_state_chain():
    a, b = 1e-9, 3e-9
    K = np.array([[1 - a, a], [b, 1 - b]])
    p = reduced_stationary(K)
    assert p == pytest.approx([0.75, 0.25], rel=1e-14)
    assert reduced_stationary(np.array([[1.0, 0.0], [0.0, 1.0]])) is None


def test_power_iterate_reports_non_convergence():
    K = transition_kernel(IsingSystem(V2, 1.0)).as_matrix()
    state = power_iterate(K, tol=1e-300, max_iters=3, polish=False)
    assert not state.converged
    assert state.iterations == 3
    with pytest.raises(InvalidArgumentError):
        power_iterate(K, tol=0.0)


@pytest.mark.parametrize("beta", [0.1, 1.0, 5.0])
def test_stationary_joint_has_equal_marginals(beta):
    joint = stationary_joint(IsingSystem(V2, beta))
    p = joint.probs
    assert p.min() > 0
    assert np.allclose(p.sum(axis=(2, 3)), p.sum(axis=(0, 1)), rtol=0, atol=1e-10)


def test_zero_beta_measures_vanish():
    P = stationary_joint(IsingSystem(V2, 0.0))
    assert phi_I(P).value < 1e-8
    assert phi_SI(P).value < 1e-8
    assert phi_G(P).value < 1e-8
    assert phi_CII(P, 2, EmConfig(restarts=2)).value < 1e-8
    assert phi_CIS(P, CisConfig(multi_starts=1)).value < 1e-8


def test_diagonal_weights_have_no_cross_connections():
    P = stationary_joint(IsingSystem(np.diag([0.8, -0.5]), 1.5))
    assert phi_I(P).value > 0
    assert phi_SI(P).value < 1e-6
    assert phi_CII(P, 2, EmConfig(restarts=2)).value < 1e-6
    assert phi_CIS(P, CisConfig(multi_starts=1)).value < 1e-6


# ── exterior influence ──


def test_exterior_joint_layout_and_independence():
    system = ExteriorIsingSystem(IsingSystem(V2, 1.2), [0.4, -0.3], w_prob=0.3)
    P_ext, state = exterior_joint(system)
    assert P_ext.space.labels == ("X1", "X2", "Y1", "Y2", "W")
    assert np.allclose(P_ext.probs.sum(axis=(0, 1, 2, 3)), [0.7, 0.3], atol=1e-14)
    report = phi_T(P_ext)
    assert report.diagnostics["w_x_dependence"] < 1e-12

    averaged = exterior_kernel(system).as_matrix()
    assert np.allclose(averaged.sum(axis=1), 1.0, atol=1e-14)
    P = visible(P_ext)
    assert np.allclose(P.probs.sum(axis=(2, 3)), P.probs.sum(axis=(0, 1)), rtol=0, atol=1e-10)


def test_exterior_without_influence_matches_stochastic_interaction():
    base = IsingSystem(V2, 2.0)
    P_ext, _ = exterior_joint(ExteriorIsingSystem(base, [0.0, 0.0]))
    P = stationary_joint(base)
    assert np.allclose(visible(P_ext).probs, P.probs, rtol=0, atol=1e-10)
    assert phi_T(P_ext).value == pytest.approx(phi_SI(P).value, abs=1e-9)


def test_exterior_measures_sandwich():
    system = ExteriorIsingSystem(IsingSystem(V2, 1.0), [1.0, 1.0])
    P_ext, _ = exterior_joint(system)
    P = visible(P_ext)
    report = phi_T(P_ext)
    warm = report.projection
    assert phi_CII(P, 2, EmConfig(restarts=3), warm_start=warm).value <= report.value + 1e-9


# ── presets ──


def test_presets():
    assert sorted(PRESETS) == ["paper-n2", "paper-n3", "paper-n5"]
    for name, n in (("paper-n2", 2), ("paper-n3", 3), ("paper-n5", 5)):
        assert PRESETS[name].weights.shape == (n, n)
    assert len(PRESETS["paper-n2"].betas.values()) == 40
    assert PRESETS["paper-n3"].betas.values()[0] == 0.0


@pytest.mark.slow
def test_n2_preset_graphical_bounded_by_mutual_information():
    for beta in PRESETS["paper-n2"].betas.values():
        P = stationary_joint(IsingSystem(V2, beta))
        assert phi_G(P).value <= phi_I(P).value + 1e-9


@pytest.mark.slow
def test_n2_preset_stochastic_interaction_bounded_by_mutual_information():
    for beta in PRESETS["paper-n2"].betas.values():
        P = stationary_joint(IsingSystem(V2, beta))
        assert phi_SI(P).value <= phi_I(P).value + 1e-6


@pytest.mark.slow
def test_n5_preset_stochastic_interaction_exceeds_mutual_information():
    V5 = PRESETS["paper-n5"].weights
    gaps = []
    for beta in PRESETS["paper-n5"].betas.values():
        P = stationary_joint(IsingSystem(V5, beta))
        gaps.append(phi_SI(P).value - phi_I(P).value)
    assert max(gaps) > 1e-4


@pytest.mark.slow
def test_n3_preset_graphical_peaks_before_mutual_information():
    V3 = PRESETS["paper-n3"].weights
    betas = PRESETS["paper-n3"].betas.values()
    g, i = [], []
    for beta in betas:
        P = stationary_joint(IsingSystem(V3, beta))
        g.append(phi_G(P).value)
        i.append(phi_I(P).value)
    assert betas[int(np.argmax(g))] < betas[int(np.argmax(i))]
