import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from causalphi.core.errors import InvalidArgumentError
from causalphi.models.schemas import MeasureReport
from causalphi.models.space import JointDistribution, ProductSpace, SystemJoint
from causalphi.services.distributions import (
    conditional_mutual_information,
    independent_product,
    kl_divergence,
    make_rng,
    marginalize,
    mutual_information,
    permute_states,
    random_joint,
)
from causalphi.services.measures import phi_I, phi_SI, phi_T, project_E, project_I, project_SI
from helpers import candidates_si, kl_rows, random_extended, random_system, split_system

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_report_clamps_tiny_negative_values():
    assert MeasureReport(name="I", value=-1e-14).value == 0.0
    with pytest.raises(ValueError):
        MeasureReport(name="I", value=-1e-6)


# ── phi_I ──


def test_phi_I_zero_on_product(rng):
    space = ProductSpace.system(2, 2)
    px = marginalize(random_joint(space, rng), ["X1", "X2"])
    py = marginalize(random_joint(space, rng), ["Y1", "Y2"])
    P = SystemJoint(independent_product(px, py))
    report = phi_I(P)
    assert report.value == pytest.approx(0.0, abs=1e-14)
    assert report.projection.allclose(P.dist, atol=1e-15)


@given(seed=seeds)
def test_phi_I_is_mutual_information(seed):
    P = random_system(make_rng(seed))
    report = phi_I(P)
    assert report.value == kl_divergence(P.dist, project_I(P))
    assert report.value == pytest.approx(mutual_information(P.dist, P.past, P.present), abs=1e-13)
    assert report.value <= math.log(4) + 1e-12


# ── phi_SI ──


def test_project_SI_idempotent_on_split_joint(rng):
    P = split_system(rng)
    assert project_SI(P).allclose(P.dist, atol=1e-13)
    assert phi_SI(P).value == pytest.approx(0.0, abs=1e-12)


def test_project_SI_uniform_fixed_point():
    U = JointDistribution.uniform(ProductSpace.system(2, 2))
    assert project_SI(U).allclose(U, atol=1e-15)


@given(seed=seeds)
def test_phi_SI_closed_form_matches_projection(seed):
    P = random_system(make_rng(seed), n=3)
    report = phi_SI(P)
    assert report.value == pytest.approx(kl_divergence(P.dist, report.projection), abs=1e-10)


def test_phi_SI_single_node_is_zero(rng):
    for _ in range(10):
        assert phi_SI(random_system(rng, n=1, q=3)).value == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("instance", range(20))
def test_project_SI_beats_random_split_candidates(instance):
    rng = make_rng(instance, 4)
    P = random_system(rng)
    best = kl_divergence(P.dist, project_SI(P))
    candidates = candidates_si(rng)
    assert np.all(best <= kl_rows(P.probs, candidates) + 1e-12)


# ── phi_T ──


def test_phi_T_rejects_system_joint(random_target):
    with pytest.raises(InvalidArgumentError):
        phi_T(random_target.dist)


def test_phi_T_zero_on_split_extended(rng):
    P_ext = random_extended(rng, n=2, m=3)
    report = phi_T(P_ext)
    assert report.value == pytest.approx(0.0, abs=1e-12)
    assert report.diagnostics["kl_to_projection"] < 1e-10
    assert project_E(P_ext).allclose(P_ext, atol=1e-13)


def test_phi_T_degenerate_latent(rng):
    P = random_system(rng, n=3)
    P_ext = JointDistribution._trusted(P.space.with_latent(1), P.probs[..., None])
    expected = 0.0
    for i, (x, y) in enumerate(zip(P.past, P.present)):
        others = [lbl for j, lbl in enumerate(P.past) if j != i]
        expected += conditional_mutual_information(P.dist, [y], others, [x])
    assert phi_T(P_ext).value == pytest.approx(expected, abs=1e-12)


@given(seed=seeds)
def test_phi_T_decomposes_when_exterior_independent_of_past(seed):
    rng = make_rng(seed)
    px = rng.dirichlet(np.ones(4)).reshape(2, 2, 1, 1, 1)
    pw = rng.dirichlet(np.ones(2)).reshape(1, 1, 1, 1, 2)
    kernel = rng.dirichlet(np.ones(4), size=(2, 2, 2))  # [x1, x2, w, (y1 y2)]
    kernel = np.moveaxis(kernel.reshape(2, 2, 2, 2, 2), 2, -1)  # [x1, x2, y1, y2, w]
    space = ProductSpace.system(2, 2).with_latent(2)
    P_ext = JointDistribution._trusted(space, px * pw * kernel)

    expected = 0.0
    for x, y, other in (("X1", "Y1", "X2"), ("X2", "Y2", "X1")):
        expected += conditional_mutual_information(P_ext, [y], [other], [x])
        expected += conditional_mutual_information(P_ext, ["W"], [other], [y, x])
    report = phi_T(P_ext)
    assert report.value == pytest.approx(expected, abs=1e-10)
    assert report.diagnostics["w_x_dependence"] < 1e-12


# ── relabeling ──


@given(seed=seeds)
def test_closed_form_measures_invariant_under_relabeling(seed):
    rng = make_rng(seed)
    P = random_system(rng, n=2, q=3)
    Q = P.dist
    for label in Q.space.labels:
        Q = permute_states(Q, label, rng.permutation(3))
    Q = SystemJoint(Q)
    assert phi_I(Q).value == pytest.approx(phi_I(P).value, abs=1e-12)
    assert phi_SI(Q).value == pytest.approx(phi_SI(P).value, abs=1e-12)
