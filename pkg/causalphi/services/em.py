"""Alternating e/m projections for the latent split models.

The em algorithm works on the extended space X, Y, W. The data manifold
holds every joint whose (X, Y)-marginal equals the target; the model
manifold is described by a ``SplitFamily``. Each iteration does an
e-projection onto the data manifold followed by an m-projection onto the
model, so the extended divergence never increases.
"""

from __future__ import annotations

import logging
import math
from typing import Iterable, Sequence

import numpy as np

from causalphi.core.errors import InvalidArgumentError, SpaceMismatchError
from causalphi.models.families import SplitFamily
from causalphi.models.schemas import EmConfig, EmTrace, MeasureReport
from causalphi.models.space import (
    JointDistribution,
    ProductSpace,
    SystemJoint,
    as_system,
    require_extended,
)
from causalphi.services.distributions import (
    _kl_arrays,
    independent_product,
    keep_marginal,
    make_rng,
    random_simplex,
)

log = logging.getLogger(__name__)

LATENT_FLOOR = 1e-14
LIFT_EPS = 1e-6
MIXTURE_EPS = 1e-9
_TINY = np.finfo(float).tiny


def _visible(arr: np.ndarray) -> np.ndarray:
    return arr.sum(axis=-1)


def _check_family(space: ProductSpace, family: SplitFamily) -> None:
    require_extended_space(space)
    if space.n != family.n or space.shape[-1] != family.latent_size:
        raise SpaceMismatchError(
            f"family (n={family.n}, |W|={family.latent_size}) does not match space {space}"
        )


def require_extended_space(space: ProductSpace) -> None:
    if not space.is_extended:
        raise InvalidArgumentError(f"expected X..,Y..,W extended space, got {space}")


# ── projections ───────────────────────────────────────


def e_projection(Q_ext: JointDistribution, target: SystemJoint | JointDistribution) -> JointDistribution:
    """P̃(z) Q(w | z): the closest joint whose visible marginal is the target."""
    require_extended(Q_ext)
    target = as_system(target)
    if Q_ext.space.without_latent() != target.space:
        raise SpaceMismatchError(f"target space {target.space} does not match {Q_ext.space}")
    q = np.maximum(Q_ext.probs, _TINY)
    arr = target.probs[..., None] * q / q.sum(axis=-1, keepdims=True)
    return JointDistribution._trusted(Q_ext.space, arr)


def _m_projection_array(arr: np.ndarray, family: SplitFamily) -> np.ndarray:
    n = family.n
    w = arr.ndim - 1
    arr = np.maximum(arr, _TINY)

    p_w = keep_marginal(arr, (w,))
    if p_w.min() < LATENT_FLOOR:
        p_w = np.maximum(p_w, LATENT_FLOOR)
        p_w = p_w / p_w.sum()

    if family.x_factorized:
        p_x = np.ones((1,) * arr.ndim)
        for i in range(n):
            p_x = p_x * keep_marginal(arr, (i,))
    else:
        p_x = keep_marginal(arr, range(n))

    out = p_x * p_w
    for i, parents in enumerate(family.parent_of):
        pa = tuple(sorted(parents))
        joint = keep_marginal(arr, pa + (n + i, w))
        given = keep_marginal(arr, pa + (w,))
        out = out * (joint / given)
    return out / out.sum()


def m_projection(P_ext: JointDistribution, family: SplitFamily) -> JointDistribution:
    """Closest member of the family: Q(x) ∏ P(y_i | x_pa(i), w) P(w) with marginals taken from P."""
    _check_family(P_ext.space, family)
    return JointDistribution._trusted(P_ext.space, _m_projection_array(P_ext.probs, family))


# ── starts ────────────────────────────────────────────


def random_start(space: ProductSpace, family: SplitFamily, rng: np.random.Generator) -> JointDistribution:
    """A random member of the family, drawn factor by factor from flat Dirichlets."""
    _check_family(space, family)
    n, shape = family.n, space.shape
    ndim = len(shape)
    m = shape[-1]

    def placed(values: np.ndarray, axes: Sequence[int]) -> np.ndarray:
        target = [1] * ndim
        for a in axes:
            target[a] = shape[a]
        return values.reshape(target)

    if family.x_factorized:
        out = np.ones((1,) * ndim)
        for i in range(n):
            out = out * placed(random_simplex(rng, shape[i]), (i,))
    else:
        k = math.prod(shape[:n])
        out = placed(random_simplex(rng, k), range(n))
    out = out * placed(random_simplex(rng, m), (ndim - 1,))

    for i, parents in enumerate(family.parent_of):
        pa = tuple(sorted(parents))
        rows = tuple(shape[j] for j in pa) + (m,)
        kernel = random_simplex(rng, shape[n + i], size=rows)  # (pa..., w, y_i)
        kernel = np.moveaxis(kernel, -1, -2)  # (pa..., y_i, w)
        out = out * placed(kernel, pa + (n + i, ndim - 1))
    return JointDistribution._trusted(space, out / out.sum())


def independent_start(target: SystemJoint | JointDistribution, m: int) -> JointDistribution:
    """Target ⊗ uniform(W)."""
    target = as_system(target)
    latent = JointDistribution.uniform(target.space.with_latent(m).sub(["W"]))
    return independent_product(target.dist, latent)


def mixture_feasible(space: ProductSpace, m: int) -> bool:
    """True when W can index every state of (Y_1..Y_{n-1})."""
    cards = [space.axis(y).cardinality for y in space.present[:-1]]
    return math.prod(cards) <= m


def mixture_start(target: SystemJoint | JointDistribution, m: int, eps: float = MIXTURE_EPS) -> JointDistribution:
    """Member of the causal-information-integration model that almost reproduces P(x) P(y).

    W enumerates the states of Y_1..Y_{n-1}; given w those nodes are nearly
    deterministic and Y_n follows P(y_n | y_1..y_{n-1}). Spare latent states
    carry weight ``eps`` with uniform kernels.
    """
    target = as_system(target)
    space = target.space
    if not mixture_feasible(space, m):
        raise InvalidArgumentError(f"|W|={m} is too small for a mixture start on {space}")
    n = target.n
    arr = target.probs
    shape = space.shape + (m,)
    ndim = len(shape)
    cards = [shape[n + i] for i in range(n)]
    k = math.prod(cards[:-1])

    p_y = arr.sum(axis=tuple(range(n)))  # (y_1..y_n)
    p_head = p_y.sum(axis=-1).reshape(-1)  # (k,)
    tail = p_y.reshape(k, cards[-1]) / np.maximum(p_head[:, None], _TINY)

    p_w = np.full(m, eps)
    p_w[:k] = np.maximum(p_head, eps)
    p_w /= p_w.sum()

    out = keep_marginal(arr, range(n))[..., None] * p_w.reshape((1,) * (ndim - 1) + (m,))
    heads = np.array(np.unravel_index(np.arange(k), cards[:-1])).T if n > 1 else np.zeros((k, 0), int)
    for i in range(n):
        c = cards[i]
        kernel = np.full((c, m), 1.0 / c)  # (y_i, w)
        if i < n - 1:
            for w_state in range(k):
                kernel[:, w_state] = eps / (c - 1)
                kernel[heads[w_state, i], w_state] = 1.0 - eps
        else:
            kernel[:, :k] = ((1.0 - eps) * tail + eps / c).T
        target_shape = [1] * ndim
        target_shape[n + i] = c
        target_shape[-1] = m
        out = out * kernel.reshape(target_shape)
    return JointDistribution._trusted(space.with_latent(m), out / out.sum())


def lift_latent(Q_ext: JointDistribution, family: SplitFamily | None = None, eps: float = LIFT_EPS) -> JointDistribution:
    """Embed a minimizer for |W|=m into the |W|=m+1 family.

    The new latent state copies the kernels of state m-1 and takes weight
    ``eps`` away from it, so the visible marginal is unchanged.
    """
    require_extended(Q_ext)
    arr = Q_ext.probs
    m = arr.shape[-1]
    family = (family or SplitFamily.cii(Q_ext.space.n, m)).with_latent(m + 1)
    last = arr[..., m - 1 : m]
    weight = float(last.sum())
    share = min(eps, weight / 2.0) / weight if weight > 0 else 0.5
    lifted = np.concatenate([arr[..., : m - 1], last * (1.0 - share), last * share], axis=-1)
    lifted = lifted / lifted.sum()
    space = Q_ext.space.with_latent(m + 1, Q_ext.space.latent[0])
    return JointDistribution._trusted(space, _m_projection_array(lifted, family))


def reverse_latent(Q_ext: JointDistribution) -> JointDistribution:
    """Relabel latent states in reverse order."""
    require_extended(Q_ext)
    return JointDistribution._trusted(Q_ext.space, Q_ext.probs[..., ::-1])


# ── the algorithm ─────────────────────────────────────


def em_run(
    target: SystemJoint | JointDistribution,
    family: SplitFamily,
    start: JointDistribution,
    config: EmConfig | None = None,
) -> tuple[float, JointDistribution, EmTrace]:
    """Iterate e/m projections from ``start``.

    Returns the visible divergence D(target || Σ_w Q), the extended
    minimizer Q and the trace. Stops once an iteration lowers the extended
    divergence by less than ``config.tolerance``.
    """
    config = config or EmConfig()
    target = as_system(target)
    _check_family(start.space, family)
    if start.space.without_latent() != target.space:
        raise SpaceMismatchError(f"start space {start.space} does not match target {target.space}")

    p = target.probs
    q = _m_projection_array(start.probs, family)
    trace = EmTrace()
    previous = _kl_arrays(p, _visible(q))
    for it in range(1, config.max_iterations + 1):
        visible = _kl_arrays(p, _visible(q))
        e_arr = p[..., None] * q / q.sum(axis=-1, keepdims=True)
        q = _m_projection_array(e_arr, family)
        extended = _kl_arrays(e_arr, q)
        trace.visible_divergences.append(visible)
        trace.divergences.append(extended)
        trace.iterations_used = it
        if previous - extended < config.tolerance:
            trace.converged = True
            break
        previous = extended
    else:
        log.warning("em stopped after %d iterations without converging", config.max_iterations)

    trace.w_marginal = q.sum(axis=tuple(range(q.ndim - 1))).tolist()
    minimizer = JointDistribution._trusted(start.space, q)
    return _kl_arrays(p, _visible(q)), minimizer, trace


def _starts(
    target: SystemJoint,
    family: SplitFamily,
    config: EmConfig,
    warm_start: JointDistribution | None,
    reverse: bool,
) -> list[tuple[str, JointDistribution]]:
    m = family.latent_size
    space = target.space.with_latent(m)
    starts = [
        (f"random:{r}", random_start(space, family, make_rng(config.seed, r)))
        for r in range(config.restarts)
    ]
    if config.include_independent_start:
        starts.append(("independent", independent_start(target, m)))
    if config.include_mixture_start and family.is_cii and mixture_feasible(target.space, m):
        starts.append(("mixture", mixture_start(target, m)))
    if warm_start is not None:
        if warm_start.space != space:
            raise SpaceMismatchError(f"warm start lives on {warm_start.space}, expected {space}")
        starts.append(("warm", warm_start))
    if reverse:
        starts = [(label, reverse_latent(s)) for label, s in starts]
    return starts


def phi_CII(
    target: SystemJoint | JointDistribution,
    family: SplitFamily | int,
    config: EmConfig | None = None,
    warm_start: JointDistribution | None = None,
    *,
    reverse_latent_states: bool = False,
) -> MeasureReport:
    """Minimum over restarts of the em divergence to the latent split family.

    ``family`` may be a latent size, meaning the causal-information-integration
    family with that |W|. Ties between restarts go to the earliest start.
    """
    target = as_system(target)
    config = config or EmConfig()
    if isinstance(family, int):
        family = SplitFamily.cii(target.n, family)
    if family.n != target.n:
        raise SpaceMismatchError(f"family has n={family.n}, target has n={target.n}")

    runs = []
    best = None
    for label, start in _starts(target, family, config, warm_start, reverse_latent_states):
        value, minimizer, trace = em_run(target, family, start, config)
        runs.append(
            {
                "start": label,
                "divergence": value,
                "iterations": trace.iterations_used,
                "converged": trace.converged,
                "w_marginal": trace.w_marginal,
                "minimizer": minimizer,
                "trace": trace,
            }
        )
        if best is None or value < best["divergence"]:
            best = runs[-1]
    log.debug("phi_CII |W|=%d best start %s: %.6g", family.latent_size, best["start"], best["divergence"])

    projection = JointDistribution._trusted(target.space, _visible(best["minimizer"].probs))
    return MeasureReport(
        name="CII",
        value=best["divergence"],
        projection=projection,
        converged=best["trace"].converged,
        diagnostics={
            "latent_size": family.latent_size,
            "best_start": best["start"],
            "extended_minimizer": best["minimizer"],
            "trace": best["trace"],
            "restarts": runs,
        },
    )


def phi_CII_sweep(
    target: SystemJoint | JointDistribution,
    w_sizes: Iterable[int],
    config: EmConfig | None = None,
    family: SplitFamily | None = None,
    *,
    reverse_latent_states: bool = False,
) -> dict[int, MeasureReport]:
    """Φ_CII for ascending |W|, each size warm-started from the lifted previous minimizer.

    Sizes that are not consecutive are reached by lifting repeatedly.
    """
    target = as_system(target)
    sizes = sorted(set(w_sizes))
    if not sizes or sizes[0] < 1:
        raise InvalidArgumentError("w_sizes must be positive")
    base = family or SplitFamily.cii(target.n, sizes[0])
    reports: dict[int, MeasureReport] = {}
    warm = None
    for m in sizes:
        if warm is not None:
            while warm.space.shape[-1] < m:
                warm = lift_latent(warm, base.with_latent(warm.space.shape[-1]))
        report = phi_CII(
            target, base.with_latent(m), config, warm_start=warm, reverse_latent_states=reverse_latent_states
        )
        reports[m] = report
        warm = report.diagnostics["extended_minimizer"]
    return reports
