"""Φ_CIS: divergence to the joints whose present nodes only listen to their own past.

The constraint set {Q : Q(y_i | x) = Q(y_i | x_i) for all i} is bilinear in
the probabilities, so the solver works on free logits over the full joint
and drives the constraint residuals to zero with a staged quadratic
penalty, finishing with multiplier updates at the last weight.

With Q(x) fixed to P(x) the same constraints are linear in the conditional
Q(y | x), and the divergence is convex in it. The best penalty run is
projected onto that affine set and finished with damped Newton steps in
its null space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import minimize
from scipy.special import logsumexp, rel_entr

from causalphi.models.schemas import CisConfig, MeasureReport
from causalphi.models.space import JointDistribution, ProductSpace, SystemJoint, as_system
from causalphi.services.distributions import keep_marginal, make_rng, random_simplex
from causalphi.services.measures import project_SI

log = logging.getLogger(__name__)


def _residual_arrays(q: np.ndarray, n: int) -> list[np.ndarray]:
    """Per node: Q(y_i | x) − Q(y_i | x_i) over (x, y_i)."""
    past = tuple(range(n))
    out = []
    for i in range(n):
        own = keep_marginal(q, past + (n + i,)) / keep_marginal(q, past)
        local = keep_marginal(q, (i, n + i)) / keep_marginal(q, (i,))
        out.append(own - local)
    return out


def cis_residual(Q: SystemJoint | JointDistribution) -> float:
    """max over i, x, y_i of |Q(y_i | x) − Q(y_i | x_i)|."""
    Q = as_system(Q)
    return max(float(np.max(np.abs(r))) for r in _residual_arrays(Q.probs, Q.n))


@dataclass
class StageRecord:
    mu: float
    kl: float
    residual: float
    objective: float
    iterations: int


@dataclass
class CisRun:
    start: str
    kl: float
    residual: float
    converged: bool
    probs: np.ndarray
    stages: list[StageRecord] = field(default_factory=list)


class PenalizedObjective:
    """KL(P || softmax θ) + Σ_i Σ [λ_i r_i + μ/2 r_i²] with its θ-gradient."""

    def __init__(self, P: SystemJoint):
        self.n = P.n
        self.shape = P.space.shape
        self.p = P.probs
        self.mu = 0.0
        self.multipliers = [np.zeros_like(r) for r in _residual_arrays(self.p, self.n)]

    def probs(self, theta: np.ndarray) -> np.ndarray:
        return np.exp(theta - logsumexp(theta)).reshape(self.shape)

    def kl(self, q: np.ndarray) -> float:
        return float(np.sum(rel_entr(self.p, q)))

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        n = self.n
        q = self.probs(theta)
        past = tuple(range(n))
        value = self.kl(q)
        grad_q = np.zeros(self.shape)
        B = keep_marginal(q, past)
        for i in range(n):
            A = keep_marginal(q, past + (n + i,))
            C = keep_marginal(q, (i, n + i))
            D = keep_marginal(q, (i,))
            r = A / B - C / D
            lam = self.multipliers[i]
            value += float(np.sum(lam * r + 0.5 * self.mu * r * r))
            s = lam + self.mu * r
            y_axis = n + i
            grad_q = grad_q + (
                s / B
                - np.sum(s * A, axis=y_axis, keepdims=True) / B**2
                - keep_marginal(s, (i, y_axis)) / D
                + keep_marginal(s * C, (i,)) / D**2
            )
        # dKL/dθ = Q − P; the penalty term goes through the softmax Jacobian
        grad = q - self.p + q * (grad_q - np.sum(grad_q * q))
        return value, grad.reshape(-1)

    def update_multipliers(self, q: np.ndarray) -> None:
        for i, r in enumerate(_residual_arrays(q, self.n)):
            self.multipliers[i] = self.multipliers[i] + self.mu * r


def _solve(P: SystemJoint, label: str, q0: np.ndarray, config: CisConfig) -> CisRun:
    objective = PenalizedObjective(P)
    theta = np.log(np.maximum(q0, 1e-300)).reshape(-1)
    theta -= theta.max()
    options = {"maxiter": config.max_inner_iterations, "ftol": config.inner_tolerance, "gtol": 1e-12}
    run = CisRun(start=label, kl=np.inf, residual=np.inf, converged=False, probs=q0)

    def stage() -> None:
        nonlocal theta
        res = minimize(objective, theta, jac=True, method="L-BFGS-B", options=options)
        theta = res.x
        q = objective.probs(theta)
        run.stages.append(
            StageRecord(
                mu=objective.mu,
                kl=objective.kl(q),
                residual=cis_residual(JointDistribution._trusted(P.space, q)),
                objective=float(res.fun),
                iterations=int(res.nit),
            )
        )

    for mu in config.penalty_schedule:
        objective.mu = mu
        stage()
    rounds = 0
    while run.stages[-1].residual >= config.residual_tolerance and rounds < config.max_polish_rounds:
        objective.update_multipliers(objective.probs(theta))
        stage()
        rounds += 1

    last = run.stages[-1]
    run.kl, run.residual = last.kl, last.residual
    run.converged = last.residual < config.residual_tolerance
    run.probs = objective.probs(theta)
    return run


def _reduce(runs: list[CisRun]) -> CisRun:
    """Smallest divergence among feasible runs, earliest on ties.

    Falls back to the lowest residual only when no run is feasible.
    """
    feasible = [r for r in runs if r.converged]
    pool = feasible or runs
    best = pool[0]
    for r in pool[1:]:
        if (r.kl < best.kl) if feasible else (r.residual < best.residual):
            best = r
    return best


def _as_candidate(P: SystemJoint, label: str, q: np.ndarray, config: CisConfig) -> CisRun:
    """Score an in-model joint as it is, without optimizing."""
    residual = cis_residual(JointDistribution._trusted(P.space, q))
    return CisRun(
        start=label,
        kl=float(np.sum(rel_entr(P.probs, q))),
        residual=residual,
        converged=residual < config.residual_tolerance,
        probs=q,
    )


def constraint_matrix(xs: tuple[int, ...], ys: tuple[int, ...]) -> np.ndarray:
    """Linear equations on the flattened conditional C[x, y] that define the model.

    One row per x for Σ_y C[x, y] = 1, and per node i one row per (x, s) with
    x off its reference state (all coordinates but x_i set to 0) for
    C(y_i = s | x) − C(y_i = s | ref_i(x)) = 0.
    """
    nx, ny = int(np.prod(xs)), int(np.prod(ys))
    x_idx = np.array(list(np.ndindex(*xs))).reshape(nx, len(xs))
    y_idx = np.array(list(np.ndindex(*ys))).reshape(ny, len(ys))
    rows = []
    for x in range(nx):
        row = np.zeros((nx, ny))
        row[x] = 1.0
        rows.append(row.reshape(-1))
    for i in range(len(xs)):
        ref_coords = np.zeros_like(x_idx)
        ref_coords[:, i] = x_idx[:, i]
        ref = np.ravel_multi_index(tuple(ref_coords.T), xs)
        for x in np.flatnonzero(ref != np.arange(nx)):
            for s in range(ys[i]):
                row = np.zeros((nx, ny))
                mask = y_idx[:, i] == s
                row[x, mask] += 1.0
                row[ref[x], mask] -= 1.0
                rows.append(row.reshape(-1))
    return np.array(rows)


def _newton(w: np.ndarray, c: np.ndarray, basis: np.ndarray, config: CisConfig) -> tuple[np.ndarray, int]:
    """Minimize −Σ w log c over c + span(basis), keeping c > 0."""

    def f(v: np.ndarray) -> float:
        return float(-np.sum(w * np.log(v)))

    it = 0
    for it in range(1, config.max_newton_iterations + 1):
        ratio = w / c
        g = -basis.T @ ratio
        H = (basis.T * (ratio / c)) @ basis
        d = -np.linalg.lstsq(H, g, rcond=None)[0]
        decrement = -float(g @ d)
        if decrement <= 2 * config.newton_tolerance:
            break
        step = basis @ d
        f0, t = f(c), 1.0
        while t > 1e-12:
            trial = c + t * step
            if trial.min() > 0 and f(trial) <= f0 - 0.25 * t * decrement:
                c = trial
                break
            t *= 0.5
        else:
            break
    return c, it


def _refine(P: SystemJoint, source: CisRun, config: CisConfig) -> CisRun | None:
    """Project ``source`` onto the model with Q(x) = P(x), then Newton in the null space."""
    n = P.n
    xs, ys = P.space.shape[:n], P.space.shape[n:]
    p_x = keep_marginal(P.probs, range(n))
    if np.any(p_x <= 0):
        log.debug("phi_CIS: P(x) has zeros, skipping refinement")
        return None
    basis = null_space(constraint_matrix(xs, ys))
    c0 = (project_SI(P).probs / p_x).reshape(-1)
    q = source.probs
    c_src = (q / keep_marginal(q, range(n))).reshape(-1)
    c = c0 + basis @ (basis.T @ (c_src - c0))
    if c.min() <= 0:
        c = c0
    c, iterations = _newton(P.probs.reshape(-1), c, basis, config)
    probs = p_x * c.reshape(P.space.shape)
    run = _as_candidate(P, "refined", probs, config)
    run.stages = source.stages + [
        StageRecord(mu=np.inf, kl=run.kl, residual=run.residual, objective=run.kl, iterations=iterations)
    ]
    return run


def phi_CIS(
    P: SystemJoint | JointDistribution,
    config: CisConfig | None = None,
    extra_starts: Iterable[JointDistribution] = (),
) -> MeasureReport:
    """Penalty-method minimization of KL(P || Q) subject to Q(y_i | x) = Q(y_i | x_i).

    Starts from P itself, from its stochastic-interaction projection, from
    any ``extra_starts`` and from ``config.multi_starts`` random joints. The
    split projection and the extra starts are also scored as they are, and
    the best penalty run is refined on the exact constraint set.
    """
    P = as_system(P)
    config = config or CisConfig()
    split = project_SI(P).probs
    extras = [as_system(extra).probs for extra in extra_starts]
    starts: list[tuple[str, np.ndarray]] = [("target", P.probs), ("split", split)]
    starts += [(f"extra:{k}", q) for k, q in enumerate(extras)]
    for r in range(config.multi_starts):
        rng = make_rng(config.seed, r)
        starts.append((f"random:{r}", random_simplex(rng, P.space.size).reshape(P.space.shape)))

    runs = [_solve(P, label, q0, config) for label, q0 in starts]
    runs.append(_as_candidate(P, "split:as-is", split, config))
    runs += [_as_candidate(P, f"extra:{k}:as-is", q, config) for k, q in enumerate(extras)]
    if config.refine:
        penalized = _reduce(runs[: len(starts)])
        refined = _refine(P, penalized, config)
        if refined is not None:
            runs.append(refined)
    best = _reduce(runs)
    if not best.converged:
        log.warning("phi_CIS: best residual %.3g above tolerance %.3g", best.residual, config.residual_tolerance)
    log.debug("phi_CIS best start %s: %.6g", best.start, best.kl)
    return MeasureReport(
        name="CIS",
        value=best.kl,
        projection=JointDistribution._trusted(P.space, best.probs),
        converged=best.converged,
        diagnostics={
            "residual": best.residual,
            "best_start": best.start,
            "stages": best.stages,
            "starts": [
                {"start": r.start, "kl": r.kl, "residual": r.residual, "converged": r.converged}
                for r in runs
            ],
        },
    )


def sample_NCIS(seed: int | np.random.Generator, q: int = 2) -> SystemJoint:
    """Random P(x1) P(x2) P(y1 | x1, y2) P(y2) on two nodes with q states each."""
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    px1, px2, py2 = (random_simplex(rng, q) for _ in range(3))
    kernel = random_simplex(rng, q, size=(q, q))  # [x1, y2, y1]
    arr = np.einsum("a,b,adc,d->abcd", px1, px2, kernel, py2)
    return SystemJoint(JointDistribution._trusted(ProductSpace.system(q, 2), arr))
