"""Product spaces, joint distributions and conditional kernels.

Every distribution is a dense tensor whose axes follow the order of its
``ProductSpace``; the row-major flattening of that tensor is the canonical
state enumeration. System spaces are laid out X1..Xn, Y1..Yn and extended
spaces append a single latent axis W.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from causalphi.core.errors import InvalidArgumentError, SpaceMismatchError

NORMALIZATION_TOL = 1e-12
EPSILON_FLOOR = 1e-12
MAX_STATES = 1 << 26


class Role(str, Enum):
    PAST = "past"
    PRESENT = "present"
    LATENT = "latent"


@dataclass(frozen=True)
class Axis:
    label: str
    role: Role
    cardinality: int

    def __post_init__(self):
        if not self.label or any(c in self.label for c in ":, \t"):
            raise InvalidArgumentError(f"invalid axis label {self.label!r}")
        minimum = 1 if self.role is Role.LATENT else 2
        if int(self.cardinality) < minimum:
            raise InvalidArgumentError(
                f"axis {self.label}: {self.role.value} cardinality must be >= {minimum}"
            )

    def __str__(self) -> str:
        return f"{self.label}:{self.role.value}:{self.cardinality}"


@dataclass(frozen=True)
class ProductSpace:
    axes: tuple[Axis, ...]

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        labels = [a.label for a in self.axes]
        if len(set(labels)) != len(labels):
            raise InvalidArgumentError(f"duplicate axis labels in {labels}")
        if math.prod(a.cardinality for a in self.axes) > MAX_STATES:
            raise InvalidArgumentError("product space too large for dense storage")

    # ── constructors ──

    @classmethod
    def system(cls, cardinalities: int | Sequence[int], n: int | None = None) -> "ProductSpace":
        """X1..Xn, Y1..Yn with per-node cardinalities (an int means all nodes)."""
        if isinstance(cardinalities, int):
            if n is None:
                raise InvalidArgumentError("node count required with a scalar cardinality")
            cards = [cardinalities] * n
        else:
            cards = list(cardinalities)
        if not cards:
            raise InvalidArgumentError("a system needs at least one node")
        past = [Axis(f"X{i + 1}", Role.PAST, c) for i, c in enumerate(cards)]
        present = [Axis(f"Y{i + 1}", Role.PRESENT, c) for i, c in enumerate(cards)]
        return cls(tuple(past + present))

    @classmethod
    def parse(cls, header: str) -> "ProductSpace":
        """Parse ``label:role:cardinality,...``.

        A header naming both past and present axes must name as many of each.
        """
        axes = []
        for token in header.split(","):
            token = token.strip()
            if not token:
                continue
            try:
                label, role, card = (part.strip() for part in token.split(":"))
                axes.append(Axis(label, Role(role), int(card)))
            except ValueError as exc:
                raise InvalidArgumentError(f"bad axis declaration {token!r}") from exc
        space = cls(tuple(axes))
        if space.past and space.present and len(space.past) != len(space.present):
            raise SpaceMismatchError(
                f"{len(space.past)} past axes but {len(space.present)} present axes in {header.strip()!r}"
            )
        return space

    def with_latent(self, m: int, label: str = "W") -> "ProductSpace":
        """Append (or replace) the latent axis with cardinality m."""
        base = tuple(a for a in self.axes if a.role is not Role.LATENT)
        return ProductSpace(base + (Axis(label, Role.LATENT, m),))

    def without_latent(self) -> "ProductSpace":
        return ProductSpace(tuple(a for a in self.axes if a.role is not Role.LATENT))

    # ── views ──

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(a.label for a in self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.cardinality for a in self.axes)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def _with_role(self, role: Role) -> tuple[str, ...]:
        return tuple(a.label for a in self.axes if a.role is role)

    @property
    def past(self) -> tuple[str, ...]:
        return self._with_role(Role.PAST)

    @property
    def present(self) -> tuple[str, ...]:
        return self._with_role(Role.PRESENT)

    @property
    def latent(self) -> tuple[str, ...]:
        return self._with_role(Role.LATENT)

    @property
    def n(self) -> int:
        return len(self.past)

    def axis(self, label: str) -> Axis:
        return self.axes[self.index(label)]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InvalidArgumentError(f"unknown axis {label!r}; space has {self.labels}") from None

    def indices(self, labels: Iterable[str]) -> tuple[int, ...]:
        """Positions of ``labels`` in space order; rejects duplicates and unknown labels."""
        labels = list(labels)
        if len(set(labels)) != len(labels):
            raise InvalidArgumentError(f"duplicate labels in {labels}")
        return tuple(sorted(self.index(lbl) for lbl in labels))

    def sub(self, labels: Iterable[str]) -> "ProductSpace":
        return ProductSpace(tuple(self.axes[i] for i in self.indices(labels)))

    @property
    def is_system(self) -> bool:
        past, present = self.past, self.present
        if not past or len(past) != len(present) or self.latent:
            return False
        if self.labels != past + present:
            return False
        return all(
            self.axis(x).cardinality == self.axis(y).cardinality for x, y in zip(past, present)
        )

    @property
    def is_extended(self) -> bool:
        return (
            len(self.latent) == 1
            and self.axes[-1].role is Role.LATENT
            and self.without_latent().is_system
        )

    def __str__(self) -> str:
        return ",".join(str(a) for a in self.axes)


class JointDistribution:
    """Immutable probability tensor over a ``ProductSpace``.

    ``strict`` rejects zero entries; ``floor`` clips every entry to at least
    ``floor`` and renormalizes (the epsilon-floor mode for user data).
    """

    __slots__ = ("space", "probs")

    def __init__(self, space: ProductSpace, probs, *, strict: bool = True, floor: float | None = None):
        arr = np.array(probs, dtype=float)
        if arr.size != space.size:
            raise InvalidArgumentError(f"expected {space.size} probabilities, got {arr.size}")
        arr = arr.reshape(space.shape)
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("probabilities must be finite")
        if floor is not None:
            arr = np.maximum(arr, floor)
            arr = arr / arr.sum()
        total = arr.sum()
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise InvalidArgumentError(f"probabilities sum to {total!r}, not 1")
        if strict and np.any(arr <= 0):
            raise InvalidArgumentError("distribution must be strictly positive (use floor= for user data)")
        if np.any(arr < 0):
            raise InvalidArgumentError("negative probability")
        arr.setflags(write=False)
        self.space = space
        self.probs = arr

    @classmethod
    def _trusted(cls, space: ProductSpace, arr: np.ndarray) -> "JointDistribution":
        """Wrap an array produced by library arithmetic without re-validating it."""
        obj = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=float).reshape(space.shape)
        arr.setflags(write=False)
        obj.space = space
        obj.probs = arr
        return obj

    @classmethod
    def uniform(cls, space: ProductSpace) -> "JointDistribution":
        return cls._trusted(space, np.full(space.shape, 1.0 / space.size))

    @property
    def flat(self) -> np.ndarray:
        return self.probs.reshape(-1)

    def allclose(self, other: "JointDistribution", atol: float = 1e-12) -> bool:
        return self.space == other.space and bool(np.allclose(self.probs, other.probs, rtol=0.0, atol=atol))

    def __repr__(self) -> str:
        return f"JointDistribution({self.space})"


@dataclass(frozen=True, eq=False)
class ConditionalKernel:
    """Table of conditionals: ``table[g..., t...] = P(t | g)``."""

    given_axes: tuple[Axis, ...]
    target_axes: tuple[Axis, ...]
    table: np.ndarray

    def __post_init__(self):
        given = {a.label for a in self.given_axes}
        target = {a.label for a in self.target_axes}
        if given & target:
            raise InvalidArgumentError(f"given and target axes overlap: {sorted(given & target)}")
        if not target:
            raise InvalidArgumentError("kernel needs at least one target axis")
        shape = tuple(a.cardinality for a in self.given_axes + self.target_axes)
        table = np.array(self.table, dtype=float).reshape(shape)
        rows = table.reshape(-1, math.prod(a.cardinality for a in self.target_axes)).sum(axis=1)
        if np.any(np.abs(rows - 1.0) > NORMALIZATION_TOL):
            raise InvalidArgumentError("kernel rows must sum to 1")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def given(self) -> tuple[str, ...]:
        return tuple(a.label for a in self.given_axes)

    @property
    def target(self) -> tuple[str, ...]:
        return tuple(a.label for a in self.target_axes)

    def row(self, given_state: Sequence[int]) -> np.ndarray:
        return self.table[tuple(given_state)].reshape(-1)

    def as_matrix(self) -> np.ndarray:
        """Rows indexed by given states, columns by target states (row-major)."""
        cols = math.prod(a.cardinality for a in self.target_axes)
        return self.table.reshape(-1, cols)


@dataclass(frozen=True)
class SystemJoint:
    """Joint of a stationary pair (X, Y): axes X1..Xn, Y1..Yn with paired cardinalities."""

    dist: JointDistribution

    def __post_init__(self):
        if not self.dist.space.is_system:
            raise InvalidArgumentError(f"not a system space: {self.dist.space}")

    @property
    def space(self) -> ProductSpace:
        return self.dist.space

    @property
    def probs(self) -> np.ndarray:
        return self.dist.probs

    @property
    def n(self) -> int:
        return self.dist.space.n

    @property
    def past(self) -> tuple[str, ...]:
        return self.dist.space.past

    @property
    def present(self) -> tuple[str, ...]:
        return self.dist.space.present


def as_system(P: "SystemJoint | JointDistribution") -> SystemJoint:
    return P if isinstance(P, SystemJoint) else SystemJoint(P)


def require_extended(P: JointDistribution) -> None:
    if not P.space.is_extended:
        raise InvalidArgumentError(f"expected X..,Y..,W extended space, got {P.space}")
