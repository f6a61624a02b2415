"""Arithmetic on discrete distributions over product spaces.

All information quantities are in nats. Axis subsets are given as label
sequences; results keep the axis order of the source space.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
from scipy.special import rel_entr, xlogy

from causalphi.core.errors import (
    DistributionFormatError,
    InvalidArgumentError,
    SpaceMismatchError,
    ZeroMarginalError,
)
from causalphi.models.space import (
    EPSILON_FLOOR,
    ConditionalKernel,
    JointDistribution,
    ProductSpace,
)

PARSE_TOL = 1e-9


# ── RNG ───────────────────────────────────────────────


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for stream ``(seed, *stream)``.

    Restart ``r`` of a solver seeded with ``seed`` draws from
    ``make_rng(seed, r)`` so results do not depend on execution order.
    """
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(key))


def random_simplex(rng: np.random.Generator, k: int, size: int | tuple[int, ...] | None = None) -> np.ndarray:
    """Flat (Dirichlet(1,...,1)) draws on the (k-1)-simplex."""
    return rng.dirichlet(np.ones(k), size=size)


def random_joint(space: ProductSpace, rng: np.random.Generator) -> JointDistribution:
    return JointDistribution._trusted(space, random_simplex(rng, space.size).reshape(space.shape))


# ── helpers ───────────────────────────────────────────


def _labels(labels: Iterable[str] | str | None) -> list[str]:
    if labels is None:
        return []
    if isinstance(labels, str):
        return [labels]
    return list(labels)


def _disjoint(*groups: Sequence[str]) -> None:
    seen: set[str] = set()
    for group in groups:
        overlap = seen & set(group)
        if overlap:
            raise InvalidArgumentError(f"axis subsets overlap on {sorted(overlap)}")
        seen |= set(group)


def keep_marginal(arr: np.ndarray, keep: Iterable[int]) -> np.ndarray:
    """Sum out every axis not in ``keep``, keeping dims for broadcasting."""
    keep = set(keep)
    drop = tuple(i for i in range(arr.ndim) if i not in keep)
    return arr.sum(axis=drop, keepdims=True) if drop else arr


def _kl_arrays(p: np.ndarray, q: np.ndarray) -> float:
    value = float(np.sum(rel_entr(p, q)))
    return math.inf if math.isinf(value) else value


# ── dist-core operations ──────────────────────────────


def marginalize(P: JointDistribution, keep: Iterable[str] | str) -> JointDistribution:
    keep = _labels(keep)
    if not keep:
        raise InvalidArgumentError("marginalize needs a nonempty keep set")
    idx = P.space.indices(keep)
    if len(idx) == len(P.space.axes):
        return P
    drop = tuple(i for i in range(len(P.space.axes)) if i not in idx)
    return JointDistribution._trusted(P.space.sub(keep), P.probs.sum(axis=drop))


def condition(P: JointDistribution, target: Iterable[str] | str, given: Iterable[str] | str) -> ConditionalKernel:
    target, given = _labels(target), _labels(given)
    _disjoint(target, given)
    if not target:
        raise InvalidArgumentError("condition needs a nonempty target set")
    t_idx, g_idx = P.space.indices(target), P.space.indices(given)
    joint = P.probs.sum(axis=tuple(i for i in range(P.probs.ndim) if i not in t_idx + g_idx))
    # reorder to (given..., target...)
    union = sorted(t_idx + g_idx)
    order = [union.index(i) for i in g_idx] + [union.index(i) for i in t_idx]
    joint = np.transpose(joint, order)
    denom = joint.sum(axis=tuple(range(len(g_idx), len(order))), keepdims=True)
    if np.any(denom == 0):
        raise ZeroMarginalError(f"zero marginal on given axes {given}")
    return ConditionalKernel(
        given_axes=tuple(P.space.axes[i] for i in g_idx),
        target_axes=tuple(P.space.axes[i] for i in t_idx),
        table=joint / denom,
    )


def recompose(kernel: ConditionalKernel, given_marginal: JointDistribution, space: ProductSpace) -> JointDistribution:
    """Inverse of ``condition``: P(g) * P(t | g) laid out in ``space`` order."""
    if given_marginal.space.labels != kernel.given:
        raise SpaceMismatchError("given marginal does not match the kernel's given axes")
    extra = (1,) * len(kernel.target)
    joint = given_marginal.probs.reshape(given_marginal.probs.shape + extra) * kernel.table
    order = kernel.given + kernel.target
    perm = [order.index(lbl) for lbl in space.labels]
    return JointDistribution._trusted(space, np.transpose(joint, perm))


def kl_divergence(P: JointDistribution, Q: JointDistribution) -> float:
    """D(P || Q) in nats; ``math.inf`` when Q vanishes where P does not."""
    if P.space != Q.space:
        raise SpaceMismatchError(f"kl_divergence over different spaces: {P.space} vs {Q.space}")
    return _kl_arrays(P.probs, Q.probs)


def entropy(P: JointDistribution, axes: Iterable[str] | str | None = None) -> float:
    arr = marginalize(P, axes).probs if axes is not None else P.probs
    return float(-np.sum(xlogy(arr, arr)))


def conditional_entropy(P: JointDistribution, target: Iterable[str] | str, given: Iterable[str] | str) -> float:
    target, given = _labels(target), _labels(given)
    _disjoint(target, given)
    if not given:
        return entropy(P, target)
    idx = P.space.indices(target + given)
    g_idx = P.space.indices(given)
    joint = P.probs.sum(axis=tuple(i for i in range(P.probs.ndim) if i not in idx), keepdims=True)
    g_marg = keep_marginal(joint, g_idx)
    return float(-np.sum(xlogy(joint, joint / g_marg)))


def mutual_information(P: JointDistribution, A: Iterable[str] | str, B: Iterable[str] | str) -> float:
    return conditional_mutual_information(P, A, B, ())


def conditional_mutual_information(
    P: JointDistribution,
    A: Iterable[str] | str,
    B: Iterable[str] | str,
    C: Iterable[str] | str = (),
) -> float:
    """I(A; B | C) = sum P(a,b,c) log[P(a,b|c) / (P(a|c) P(b|c))]."""
    A, B, C = _labels(A), _labels(B), _labels(C)
    _disjoint(A, B, C)
    if not A or not B:
        return 0.0
    a_idx, b_idx, c_idx = P.space.indices(A), P.space.indices(B), P.space.indices(C)
    union = set(a_idx + b_idx + c_idx)
    joint = P.probs.sum(axis=tuple(i for i in range(P.probs.ndim) if i not in union), keepdims=True)
    p_ac = keep_marginal(joint, a_idx + c_idx)
    p_bc = keep_marginal(joint, b_idx + c_idx)
    if c_idx:
        p_c = keep_marginal(joint, c_idx)
        reference = p_ac * p_bc / p_c
    else:
        reference = p_ac * p_bc
    return _kl_arrays(joint, reference)


# ── construction helpers ──────────────────────────────


def independent_product(P: JointDistribution, Q: JointDistribution) -> JointDistribution:
    """P ⊗ Q on the concatenated space."""
    space = ProductSpace(P.space.axes + Q.space.axes)
    arr = np.multiply.outer(P.probs, Q.probs)
    return JointDistribution._trusted(space, arr)


def permute_states(P: JointDistribution, label: str, perm: Sequence[int]) -> JointDistribution:
    """Relabel the states of one axis: new state k carries old state perm[k]."""
    axis = P.space.index(label)
    perm = np.asarray(perm, dtype=int)
    if sorted(perm.tolist()) != list(range(P.space.shape[axis])):
        raise InvalidArgumentError(f"{perm.tolist()} is not a permutation of axis {label}")
    return JointDistribution._trusted(P.space, np.take(P.probs, perm, axis=axis))


# ── text format ───────────────────────────────────────


def format_distribution(P: JointDistribution) -> str:
    lines = [f"axes: {P.space}"]
    lines.extend(f"{v:.17g}" for v in P.flat)
    return "\n".join(lines) + "\n"


def parse_distribution(text: str, *, renormalize: bool = False, floor: bool = False) -> JointDistribution:
    """Read the ``axes: label:role:card,...`` header plus one probability per line."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]
    if not lines or not lines[0].startswith("axes:"):
        raise DistributionFormatError("missing 'axes:' header line")
    try:
        space = ProductSpace.parse(lines[0][len("axes:"):])
    except InvalidArgumentError as exc:
        raise DistributionFormatError(str(exc)) from exc
    try:
        values = np.array([float(v) for v in lines[1:]])
    except ValueError as exc:
        raise DistributionFormatError(f"non-numeric probability: {exc}") from exc
    if values.size != space.size:
        raise DistributionFormatError(f"header declares {space.size} states, found {values.size} values")
    total = values.sum()
    if renormalize:
        if total <= 0:
            raise DistributionFormatError("cannot renormalize a zero vector")
        values = values / total
    elif abs(total - 1.0) > PARSE_TOL:
        raise DistributionFormatError(f"probabilities sum to {total!r}; pass --renormalize to rescale")
    else:
        values = values / total
    try:
        return JointDistribution(space, values, floor=EPSILON_FLOOR if floor else None)
    except InvalidArgumentError as exc:
        raise DistributionFormatError(str(exc)) from exc
