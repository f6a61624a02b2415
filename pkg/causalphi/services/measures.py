"""Closed-form measures: mutual information, stochastic interaction and the ground truth."""

from __future__ import annotations

import numpy as np

from causalphi.models.schemas import MeasureReport
from causalphi.models.space import JointDistribution, SystemJoint, as_system, require_extended
from causalphi.services.distributions import (
    conditional_entropy,
    conditional_mutual_information,
    keep_marginal,
    kl_divergence,
    mutual_information,
)


def _split_factor(arr: np.ndarray, n: int, extra: tuple[int, ...] = ()) -> np.ndarray:
    """∏_i P(y_i | x_i, extra) as a broadcastable array."""
    out = np.ones((1,) * arr.ndim)
    for i in range(n):
        joint = keep_marginal(arr, (i, n + i) + extra)
        given = keep_marginal(arr, (i,) + extra)
        out = out * (joint / given)
    return out


def project_I(P: SystemJoint | JointDistribution) -> JointDistribution:
    """Product of the X- and Y-marginals."""
    P = as_system(P)
    n, arr = P.n, P.probs
    proj = keep_marginal(arr, range(n)) * keep_marginal(arr, range(n, 2 * n))
    return JointDistribution._trusted(P.space, proj)


def phi_I(P: SystemJoint | JointDistribution) -> MeasureReport:
    P = as_system(P)
    proj = project_I(P)
    return MeasureReport(name="I", value=kl_divergence(P.dist, proj), projection=proj)


def project_SI(P: SystemJoint | JointDistribution) -> JointDistribution:
    """P(x) ∏ P(y_i | x_i): the m-projection onto the fully split model."""
    P = as_system(P)
    n, arr = P.n, P.probs
    proj = keep_marginal(arr, range(n)) * _split_factor(arr, n)
    return JointDistribution._trusted(P.space, proj)


def phi_SI(P: SystemJoint | JointDistribution) -> MeasureReport:
    """Σ_i H(Y_i | X_i) − H(Y | X)."""
    P = as_system(P)
    dist = P.dist
    value = sum(conditional_entropy(dist, y, x) for x, y in zip(P.past, P.present))
    value -= conditional_entropy(dist, P.present, P.past)
    return MeasureReport(name="SI", value=value, projection=project_SI(P))


def project_E(P_ext: JointDistribution) -> JointDistribution:
    """P(x) ∏ P(y_i | x_i, w) P(w) on the extended space."""
    require_extended(P_ext)
    arr = P_ext.probs
    n = P_ext.space.n
    w = arr.ndim - 1
    proj = keep_marginal(arr, range(n)) * keep_marginal(arr, (w,)) * _split_factor(arr, n, (w,))
    return JointDistribution._trusted(P_ext.space, proj)


def phi_T(P_ext: JointDistribution) -> MeasureReport:
    """Σ_i I(Y_i ; X_{I∖{i}} | X_i, W) on an extended joint with an observed exterior W.

    Minimizing over E equals this sum when W ⟂ X; for other joints the same
    sum is reported and ``w_x_dependence`` in the diagnostics is nonzero.
    """
    require_extended(P_ext)
    space = P_ext.space
    (w_label,) = space.latent
    value = 0.0
    for i, (x, y) in enumerate(zip(space.past, space.present)):
        others = [lbl for j, lbl in enumerate(space.past) if j != i]
        value += conditional_mutual_information(P_ext, [y], others, [x, w_label])
    proj = project_E(P_ext)
    diagnostics = {
        "kl_to_projection": kl_divergence(P_ext, proj),
        "w_x_dependence": mutual_information(P_ext, [w_label], list(space.past)),
    }
    return MeasureReport(name="T", value=value, projection=proj, diagnostics=diagnostics)
