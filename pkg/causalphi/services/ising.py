"""Weighted binary Ising systems and their stationary joints.

Each node takes states (−1, +1) in that axis order. Present node j fires
according to P(y_j | x) = 1 / (1 + exp(−2β Σ_i v_ij x_i y_j)) and the nodes
update independently given the past.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from causalphi.core.errors import InvalidArgumentError
from causalphi.models.schemas import BetaRange, StationaryState
from causalphi.models.space import ConditionalKernel, JointDistribution, ProductSpace, SystemJoint
from causalphi.services.distributions import make_rng, random_simplex

log = logging.getLogger(__name__)

STATES = (-1, 1)
DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITERS = 1_000_000


def spin_states(n: int) -> np.ndarray:
    """All configurations in row-major order, shape (2**n, n)."""
    return np.array(list(itertools.product(STATES, repeat=n)), dtype=float)


@dataclass(frozen=True, eq=False)
class IsingSystem:
    V: np.ndarray
    beta: float

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        if V.ndim != 2 or V.shape[0] != V.shape[1] or V.shape[0] < 1:
            raise InvalidArgumentError(f"weight matrix must be square, got shape {V.shape}")
        if not np.all(np.isfinite(V)):
            raise InvalidArgumentError("weight matrix must be finite")
        if self.beta < 0:
            raise InvalidArgumentError(f"beta must be >= 0, got {self.beta}")
        V.setflags(write=False)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def space(self) -> ProductSpace:
        return ProductSpace.system(2, self.n)

    def fields(self) -> np.ndarray:
        """Σ_i v_ij x_i for every past state x, shape (2**n, n)."""
        return spin_states(self.n) @ self.V


def _product_kernel(fields: np.ndarray, beta: float) -> np.ndarray:
    """Matrix K[x, y] = ∏_j expit(2β h_j(x) y_j)."""
    n = fields.shape[1]
    ys = spin_states(n)
    # (x, y, j)
    factors = expit(2.0 * beta * fields[:, None, :] * ys[None, :, :])
    return np.prod(factors, axis=-1)


def _as_kernel(space: ProductSpace, matrix: np.ndarray) -> ConditionalKernel:
    n = space.n
    past = tuple(space.axis(x) for x in space.past)
    present = tuple(space.axis(y) for y in space.present)
    return ConditionalKernel(past, present, matrix.reshape((2,) * (2 * n)))


def transition_kernel(system: IsingSystem) -> ConditionalKernel:
    return _as_kernel(system.space, _product_kernel(system.fields(), system.beta))


def reduced_stationary(matrix: np.ndarray) -> np.ndarray | None:
    """Stationary vector of a row-stochastic matrix by state reduction.

    Grassmann–Taksar–Heyman elimination: only sums and products of
    nonnegative numbers, so every entry keeps full relative accuracy however
    slowly the chain mixes. Returns None when a state cannot reach the states
    eliminated before it.
    """
    A = np.array(matrix, dtype=float)
    size = A.shape[0]
    for k in range(size - 1, 0, -1):
        s = A[k, :k].sum()
        if s <= 0:
            return None
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    p = np.zeros(size)
    p[0] = 1.0
    for j in range(1, size):
        p[j] = p[:j] @ A[:j, j]
    return p / p.sum()


def power_iterate(
    matrix: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
    polish: bool = True,
) -> StationaryState:
    """Fixed point of p ← p K from a seeded random start.

    Iterates until the L1 residual ‖pK − p‖₁ drops below ``tol``. With
    ``polish`` the state-reduction solution replaces the iterate when it
    meets the tolerance or has the smaller residual.
    """
    if tol <= 0:
        raise InvalidArgumentError("tol must be > 0")
    p = random_simplex(make_rng(seed), matrix.shape[0])
    residual = np.inf
    it = 0
    for it in range(1, int(max_iters) + 1):
        nxt = p @ matrix
        nxt /= nxt.sum()
        residual = float(np.abs(nxt - p).sum())
        p = nxt
        if residual < tol:
            break
    residual = float(np.abs(p @ matrix - p).sum())
    if polish:
        exact = reduced_stationary(matrix)
        if exact is not None:
            exact_residual = float(np.abs(exact @ matrix - exact).sum())
            if exact_residual < tol or exact_residual <= residual:
                p, residual = exact, exact_residual
    converged = residual < tol
    if not converged:
        log.warning("stationary distribution not reached after %d iterations (residual %.3g)", it, residual)
    return StationaryState(probs=p, iterations=it, residual=residual, converged=converged)


def stationary(
    system: IsingSystem,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
) -> StationaryState:
    return power_iterate(_product_kernel(system.fields(), system.beta), tol, max_iters, seed)


def stationary_joint(
    system: IsingSystem,
    state: StationaryState | None = None,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
) -> SystemJoint:
    """P̂(x) P(y | x) on the system space."""
    state = state or stationary(system, tol, max_iters, seed)
    matrix = _product_kernel(system.fields(), system.beta)
    arr = state.probs[:, None] * matrix
    space = system.space
    return SystemJoint(JointDistribution._trusted(space, arr.reshape(space.shape)))


# ── exterior influence ───────────────────────────────


@dataclass(frozen=True, eq=False)
class ExteriorIsingSystem:
    """Ising system whose present nodes also feel an observed binary W.

    W is independent of the past with P(W=+1) = ``w_prob`` and enters node j
    with weight ``U[j]``.
    """

    base: IsingSystem
    U: np.ndarray
    w_prob: float = 0.5

    def __post_init__(self):
        U = np.array(self.U, dtype=float).reshape(-1)
        if U.shape[0] != self.base.n:
            raise InvalidArgumentError(f"need {self.base.n} exterior weights, got {U.shape[0]}")
        if not 0 < self.w_prob < 1:
            raise InvalidArgumentError("w_prob must lie in (0, 1)")
        U.setflags(write=False)
        object.__setattr__(self, "U", U)

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def w_distribution(self) -> np.ndarray:
        return np.array([1.0 - self.w_prob, self.w_prob])

    def kernels(self) -> np.ndarray:
        """K[w, x, y] for w in (−1, +1)."""
        fields = self.base.fields()
        return np.stack([_product_kernel(fields + w * self.U, self.base.beta) for w in STATES])

    def averaged_kernel(self) -> np.ndarray:
        return np.tensordot(self.w_distribution, self.kernels(), axes=1)


def exterior_kernel(system: ExteriorIsingSystem) -> ConditionalKernel:
    """P(y | x) after averaging out W."""
    return _as_kernel(system.base.space, system.averaged_kernel())


def exterior_joint(
    system: ExteriorIsingSystem,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
) -> tuple[JointDistribution, StationaryState]:
    """Extended joint P̂(x) P(w) P(y | x, w) on X.., Y.., W."""
    state = power_iterate(system.averaged_kernel(), tol, max_iters, seed)
    kernels = system.kernels()  # (w, x, y)
    arr = state.probs[None, :, None] * system.w_distribution[:, None, None] * kernels
    arr = np.moveaxis(arr, 0, -1)  # (x, y, w)
    space = system.base.space.with_latent(2)
    return JointDistribution._trusted(space, arr.reshape(space.shape)), state


# ── presets ──────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class Preset:
    name: str
    weights: np.ndarray
    betas: BetaRange


PRESETS: dict[str, Preset] = {
    "paper-n2": Preset(
        "paper-n2",
        np.array([[0.0084181, -0.2401545], [0.39270161, 0.37198751]]),
        BetaRange(start=0.1, stop=30.0, count=40),
    ),
    "paper-n3": Preset(
        "paper-n3",
        np.array(
            [
                [-0.43478388, 0.47448218, 0.36808313],
                [0.52117467, 0.00672578, -0.7387737],
                [-0.56114795, -0.96941243, -0.76408711],
            ]
        ),
        BetaRange(start=0.0, stop=3.0, count=31),
    ),
    "paper-n5": Preset(
        "paper-n5",
        np.array(
            [
                [-0.35615839, -0.09775903, 0.89743801, -0.00604247, -0.03897772],
                [-0.2260056, 0.47769717, -0.4302256, 0.18692707, 0.25140741],
                [-0.86081159, -0.18348132, -0.71528754, -0.08100602, -0.64364176],
                [-0.13967234, -0.03233011, -0.81057654, -0.33327558, -0.57447322],
                [0.18920264, -0.99054716, 0.32088358, 0.69100397, -0.69206604],
            ]
        ),
        BetaRange(start=0.0, stop=3.0, count=31),
    ),
}
