"""Builders for random joints and vectorized in-model candidates."""

import numpy as np

from causalphi.models.families import SplitFamily
from causalphi.models.space import JointDistribution, ProductSpace, SystemJoint
from causalphi.services.distributions import random_joint
from causalphi.services.em import random_start

N_CANDIDATES = 10_000


def random_system(rng, n=2, q=2) -> SystemJoint:
    return SystemJoint(random_joint(ProductSpace.system(q, n), rng))


def split_system(rng, n=2, q=2) -> SystemJoint:
    """Random P(x) ∏ P(y_i | x_i)."""
    arr = rng.dirichlet(np.ones(q**n)).reshape((q,) * n + (1,) * n)
    for i in range(n):
        shape = [1] * (2 * n)
        shape[i], shape[n + i] = q, q
        arr = arr * rng.dirichlet(np.ones(q), size=q).reshape(shape)
    return SystemJoint(JointDistribution._trusted(ProductSpace.system(q, n), arr))


def random_extended(rng, n=2, m=2, q=2) -> JointDistribution:
    """Random member of the latent split family with |W| = m."""
    space = ProductSpace.system(q, n).with_latent(m)
    return random_start(space, SplitFamily.cii(n, m), rng)


def visible(P_ext: JointDistribution) -> SystemJoint:
    space = P_ext.space.without_latent()
    return SystemJoint(JointDistribution._trusted(space, P_ext.probs.sum(axis=-1)))


def kl_rows(p: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """D(p || c) for every candidate c along the first axis."""
    p = p.reshape(1, -1)
    c = candidates.reshape(candidates.shape[0], -1)
    return np.sum(p * (np.log(p) - np.log(c)), axis=1)


def kl_rows_first(candidates: np.ndarray, q: np.ndarray) -> np.ndarray:
    """D(c || q) for every candidate c along the first axis."""
    c = candidates.reshape(candidates.shape[0], -1)
    q = q.reshape(1, -1)
    return np.sum(c * (np.log(c) - np.log(q)), axis=1)


# ── two binary nodes: candidates drawn from each model's parametrization ──


def candidates_si(rng, count=N_CANDIDATES) -> np.ndarray:
    px = rng.dirichlet(np.ones(4), size=count).reshape(count, 2, 2)
    k1 = rng.dirichlet(np.ones(2), size=(count, 2))
    k2 = rng.dirichlet(np.ones(2), size=(count, 2))
    return np.einsum("sab,sac,sbd->sabcd", px, k1, k2)


def candidates_extended(rng, count=N_CANDIDATES, m=2) -> np.ndarray:
    px = rng.dirichlet(np.ones(4), size=count).reshape(count, 2, 2)
    pw = rng.dirichlet(np.ones(m), size=count)
    k1 = rng.dirichlet(np.ones(2), size=(count, 2, m))  # [s, x1, w, y1]
    k2 = rng.dirichlet(np.ones(2), size=(count, 2, m))
    return np.einsum("sab,sw,sawc,sbwd->sabcdw", px, pw, k1, k2)


def candidates_data_manifold(rng, target: np.ndarray, count=N_CANDIDATES, m=2) -> np.ndarray:
    cond = rng.dirichlet(np.ones(m), size=(count, target.size))
    return target.reshape(1, -1, 1) * cond


def candidates_graphical(rng, count=N_CANDIDATES) -> np.ndarray:
    f = np.exp(rng.normal(size=(count, 2, 2)))  # (x1, x2)
    g = np.exp(rng.normal(size=(count, 2, 2)))  # (y1, y2)
    h1 = np.exp(rng.normal(size=(count, 2, 2)))  # (x1, y1)
    h2 = np.exp(rng.normal(size=(count, 2, 2)))  # (x2, y2)
    arr = np.einsum("sab,scd,sac,sbd->sabcd", f, g, h1, h2)
    return arr / arr.sum(axis=(1, 2, 3, 4), keepdims=True)


def ncis_embedding(P: SystemJoint) -> JointDistribution:
    """P(x1) P(x2) P(y1 | x1, w) P(w) δ(y2 = w) for two-node P in N_CIS.

    A member of the two-node latent family with |W| = |Y2| whose visible
    marginal is P itself.
    """
    q = P.space.shape[-1]
    arr = P.probs[..., None] * np.eye(q).reshape((1, 1, 1, q, q))
    return JointDistribution._trusted(P.space.with_latent(q), arr)
