"""Descriptors of the split models the projections target."""

from __future__ import annotations

from dataclasses import dataclass

from causalphi.core.errors import InvalidArgumentError
from causalphi.models.space import ProductSpace


@dataclass(frozen=True)
class SplitFamily:
    """Extended-space model Q(x) ∏ Q(y_i | x_pa(i), w) Q(w).

    ``parent_of[i]`` holds indices of the past nodes feeding Y_{i+1}; the
    causal-information-integration model uses ``{i}`` for every node.
    ``x_factorized`` replaces Q(x) by ∏ Q(x_i).
    """

    n: int
    latent_size: int
    parent_of: tuple[frozenset[int], ...]
    x_factorized: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise InvalidArgumentError("a split family needs n >= 1")
        if self.latent_size < 1:
            raise InvalidArgumentError("latent size must be >= 1")
        parents = tuple(frozenset(p) for p in self.parent_of)
        if len(parents) != self.n:
            raise InvalidArgumentError(f"need {self.n} parent sets, got {len(parents)}")
        if any(j < 0 or j >= self.n for p in parents for j in p):
            raise InvalidArgumentError("parent indices must refer to past nodes 0..n-1")
        object.__setattr__(self, "parent_of", parents)

    @classmethod
    def cii(cls, n: int, m: int) -> "SplitFamily":
        return cls(n=n, latent_size=m, parent_of=tuple(frozenset({i}) for i in range(n)))

    @classmethod
    def ncii(cls, m: int) -> "SplitFamily":
        """Two-node family Q(x1)Q(x2) Σ_w Q(y1 | x1, w) Q(y2 | w) Q(w)."""
        return cls(n=2, latent_size=m, parent_of=(frozenset({0}), frozenset()), x_factorized=True)

    def with_latent(self, m: int) -> "SplitFamily":
        return SplitFamily(self.n, m, self.parent_of, self.x_factorized)

    @property
    def is_cii(self) -> bool:
        return not self.x_factorized and all(p == {i} for i, p in enumerate(self.parent_of))

    def extended_space(self, system_space: ProductSpace) -> ProductSpace:
        if system_space.n != self.n:
            raise InvalidArgumentError(f"family has n={self.n}, space has n={system_space.n}")
        return system_space.with_latent(self.latent_size)


@dataclass(frozen=True)
class CliqueSystem:
    cliques: tuple[tuple[str, ...], ...]

    @classmethod
    def diagonally_split(cls, space: ProductSpace) -> "CliqueSystem":
        """[{X1..Xn}, {Y1..Yn}, {X1,Y1}, ..., {Xn,Yn}]."""
        diag = tuple((x, y) for x, y in zip(space.past, space.present))
        return cls((space.past, space.present) + diag)

    def reordered(self, order: list[int]) -> "CliqueSystem":
        return CliqueSystem(tuple(self.cliques[i] for i in order))
