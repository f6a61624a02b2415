from __future__ import annotations

from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from causalphi.models.space import JointDistribution

CLAMP_TOL = 1e-12
MEASURES = ("I", "SI", "G", "CII", "CIS", "T")


# ── Reports ──

class MeasureReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    name: str
    value: float
    projection: Optional[JointDistribution] = None
    converged: bool = True
    diagnostics: dict[str, Any] = Field(default_factory=dict)

    @field_validator("value")
    @classmethod
    def _clamp(cls, v: float) -> float:
        if -CLAMP_TOL < v < 0:
            return 0.0
        if v < 0:
            raise ValueError(f"measure value {v!r} is negative beyond tolerance")
        return v


class EmTrace(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    # D(P_{i+1} || Q_i): the visible divergence of Q_i
    visible_divergences: list[float] = Field(default_factory=list)
    # D(P_{i+1} || Q_{i+1}) on the extended space
    divergences: list[float] = Field(default_factory=list)
    w_marginal: list[float] = Field(default_factory=list)
    converged: bool = False
    iterations_used: int = 0


class IpsTrace(BaseModel):
    divergences: list[float] = Field(default_factory=list)
    deviation: float = float("inf")
    cycles: int = 0
    converged: bool = False


class StationaryState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    probs: np.ndarray
    iterations: int
    residual: float
    converged: bool


# ── Solver configs ──

class EmConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    tolerance: float = Field(1e-10, gt=0)
    max_iterations: int = Field(10_000, ge=1)
    restarts: int = Field(10, ge=1)
    seed: int = 0
    include_independent_start: bool = True
    include_mixture_start: bool = True


class CisConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    penalty_schedule: tuple[float, ...] = (1e1, 1e3, 1e5, 1e7)
    inner_tolerance: float = Field(1e-12, gt=0)
    multi_starts: int = Field(20, ge=1)
    seed: int = 0
    residual_tolerance: float = Field(1e-7, gt=0)
    max_polish_rounds: int = Field(50, ge=0)
    max_inner_iterations: int = Field(5000, ge=1)
    refine: bool = True
    newton_tolerance: float = Field(1e-15, gt=0)
    max_newton_iterations: int = Field(200, ge=1)

    @field_validator("penalty_schedule")
    @classmethod
    def _increasing(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if not v or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("penalty_schedule must be strictly increasing")
        if v[-1] < 1e6:
            raise ValueError("final penalty weight must be >= 1e6")
        return v


# ── Experiment config ──

class BetaRange(BaseModel):
    start: float = Field(ge=0)
    stop: float = Field(ge=0)
    count: int = Field(ge=1)
    spacing: Literal["linear", "log"] = "linear"

    def values(self) -> list[float]:
        if self.spacing == "log":
            if self.start <= 0:
                raise ValueError("log spacing needs beta_start > 0")
            return np.geomspace(self.start, self.stop, self.count).tolist()
        return np.linspace(self.start, self.stop, self.count).tolist()


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    preset: Optional[str] = None
    weights: Optional[list[list[float]]] = Field(None, alias="V")
    exterior_weights: Optional[list[float]] = Field(None, alias="U")
    w_prob: float = Field(0.5, gt=0, lt=1)
    beta_grid: Optional[list[float]] = None
    beta_start: Optional[float] = None
    beta_stop: Optional[float] = None
    beta_count: Optional[int] = None
    beta_spacing: Literal["linear", "log"] = "linear"
    measures: list[str] = Field(default_factory=lambda: ["I", "SI", "G", "CII"])
    w_sizes: list[int] = Field(default_factory=lambda: [2])
    restarts: int = Field(10, ge=1)
    seed: int = 0
    output: Optional[str] = None
    force: bool = False
    strict: bool = False
    workers: Optional[int] = Field(None, ge=1)
    permute_latent: bool = False
    # fresh: new random start per (beta, restart); carried: each restart warm-starts from its previous minimizer
    trace_starts: Literal["fresh", "carried"] = "fresh"
    # per-solver overrides
    em_tolerance: float = Field(1e-10, gt=0)
    em_max_iterations: int = Field(10_000, ge=1)
    ips_tolerance: float = Field(1e-10, gt=0)
    ips_max_cycles: int = Field(100_000, ge=1)
    stationary_tolerance: float = Field(1e-12, gt=0)
    stationary_max_iterations: int = Field(1_000_000, ge=1)
    cis_multi_starts: int = Field(4, ge=1)
    cis_residual_tolerance: float = Field(1e-7, gt=0)
    table1_samples: int = Field(500, ge=1)
    table1_restarts: int = Field(50, ge=1)

    @field_validator("measures")
    @classmethod
    def _known_measures(cls, v: list[str]) -> list[str]:
        names = [m.strip().upper() for m in v]
        unknown = [m for m in names if m not in MEASURES]
        if unknown:
            raise ValueError(f"unknown measures {unknown}; choose from {MEASURES}")
        # canonical column order, duplicates dropped
        return [m for m in MEASURES if m in names]

    @field_validator("w_sizes")
    @classmethod
    def _positive_sizes(cls, v: list[int]) -> list[int]:
        if not v or any(m < 1 for m in v):
            raise ValueError("w_sizes must be positive integers")
        return sorted(set(v))

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        from causalphi.services.ising import PRESETS

        if self.preset is None and self.weights is None:
            raise ValueError("config needs either 'preset' or a 'V:' weight matrix")
        if self.preset is not None and self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; available: {sorted(PRESETS)}")
        V = self.weight_matrix()
        if V.ndim != 2 or V.shape[0] != V.shape[1]:
            raise ValueError(f"weight matrix must be square, got shape {V.shape}")
        if self.exterior_weights is not None and len(self.exterior_weights) != V.shape[0]:
            raise ValueError("U must have one exterior weight per node")
        if "CIS" in self.measures and V.shape[0] > 3 and not self.force:
            raise ValueError(
                "CIS requested with n > 3: very time consuming to calculate; pass --force to run anyway"
            )
        if self.beta_grid is None and self.beta_count is None and self.preset is None:
            raise ValueError("config needs 'beta_grid' or 'beta_start/beta_stop/beta_count'")
        if self.beta_grid is None and self.beta_count is not None and self.beta_spacing == "log":
            if self.beta_start is None or self.beta_start <= 0:
                raise ValueError("log spacing needs beta_start > 0")
        return self

    # ── derived views ──

    @property
    def n(self) -> int:
        return self.weight_matrix().shape[0]

    def weight_matrix(self) -> np.ndarray:
        from causalphi.services.ising import PRESETS

        if self.weights is not None:
            return np.asarray(self.weights, dtype=float)
        return PRESETS[self.preset].weights

    def betas(self) -> list[float]:
        from causalphi.services.ising import PRESETS

        if self.beta_grid is not None:
            return [float(b) for b in self.beta_grid]
        if self.beta_count is not None:
            return BetaRange(
                start=self.beta_start if self.beta_start is not None else 0.0,
                stop=self.beta_stop if self.beta_stop is not None else 1.0,
                count=self.beta_count,
                spacing=self.beta_spacing,
            ).values()
        return PRESETS[self.preset].betas.values()

    def em_config(self, restarts: int | None = None, **overrides) -> EmConfig:
        return EmConfig(
            tolerance=self.em_tolerance,
            max_iterations=self.em_max_iterations,
            restarts=restarts or self.restarts,
            seed=self.seed,
            **overrides,
        )

    def cis_config(self) -> CisConfig:
        return CisConfig(
            multi_starts=self.cis_multi_starts,
            seed=self.seed,
            residual_tolerance=self.cis_residual_tolerance,
        )
