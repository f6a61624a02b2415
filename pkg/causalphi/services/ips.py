"""Iterative proportional scaling onto hierarchical log-linear models."""

from __future__ import annotations

import logging

import numpy as np

from causalphi.models.families import CliqueSystem
from causalphi.models.schemas import IpsTrace, MeasureReport
from causalphi.models.space import JointDistribution, SystemJoint, as_system
from causalphi.services.distributions import _kl_arrays, keep_marginal

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_CYCLES = 100_000


def _clique_marginals(P: JointDistribution, cliques: CliqueSystem) -> list[tuple[tuple[int, ...], np.ndarray]]:
    return [
        (idx, keep_marginal(P.probs, idx))
        for idx in (P.space.indices(c) for c in cliques.cliques)
    ]


def ips_project(
    P: JointDistribution,
    cliques: CliqueSystem,
    tol: float = DEFAULT_TOL,
    max_cycles: int = DEFAULT_MAX_CYCLES,
) -> tuple[JointDistribution, IpsTrace]:
    """m-projection of ``P`` onto the log-linear model generated by ``cliques``.

    Starts from the uniform distribution and rescales clique marginals in
    order until the largest marginal deviation falls below ``tol``.
    """
    targets = _clique_marginals(P, cliques)
    q = np.full(P.space.shape, 1.0 / P.space.size)
    trace = IpsTrace()
    for cycle in range(1, max_cycles + 1):
        for idx, target in targets:
            q = q * (target / keep_marginal(q, idx))
        deviation = max(float(np.max(np.abs(keep_marginal(q, idx) - t))) for idx, t in targets)
        trace.divergences.append(_kl_arrays(P.probs, q))
        trace.cycles = cycle
        trace.deviation = deviation
        if deviation < tol:
            trace.converged = True
            break
    else:
        log.warning("ips stopped after %d cycles, marginal deviation %.3g", max_cycles, trace.deviation)
    return JointDistribution._trusted(P.space, q / q.sum()), trace


def phi_G(
    P: SystemJoint | JointDistribution,
    tol: float = DEFAULT_TOL,
    max_cycles: int = DEFAULT_MAX_CYCLES,
) -> MeasureReport:
    """Divergence to the diagonally split graphical model."""
    P = as_system(P)
    cliques = CliqueSystem.diagonally_split(P.space)
    proj, trace = ips_project(P.dist, cliques, tol, max_cycles)
    return MeasureReport(
        name="G",
        value=_kl_arrays(P.probs, proj.probs),
        projection=proj,
        converged=trace.converged,
        diagnostics={"cycles": trace.cycles, "deviation": trace.deviation, "trace": trace},
    )
