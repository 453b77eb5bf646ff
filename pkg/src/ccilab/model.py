from __future__ import annotations

from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator


Complex = Tuple[float, float]
Format = Literal["csv", "json"]

SEED_LIMIT = 2**64


class OverrideEntry(BaseModel):
    """Explicit scattering matrix at node (j, k2); complex numbers are [re, im] pairs."""

    j: int
    k2: int
    q: Complex = (1.0, 0.0)
    r: Complex
    t: Complex

    @field_validator("k2")
    @classmethod
    def k2_even(cls, v: int) -> int:
        if v % 2:
            raise ValueError(f"k2 must be even, got {v}")
        return v


class ModelConfig(BaseModel):
    n_left: int
    n_right: int
    seed: int = 0
    deterministic_phases: bool = False
    # 0 = no periodicity; 2 = vertically translation invariant
    vertical_period: int = 0
    overrides: List[OverrideEntry] = Field(default_factory=list)

    @field_validator("seed")
    @classmethod
    def seed_in_range(cls, v: int) -> int:
        if not 0 <= v < SEED_LIMIT:
            raise ValueError(f"seed must lie in [0, 2**64), got {v}")
        return v

    @field_validator("vertical_period")
    @classmethod
    def period_even(cls, v: int) -> int:
        if v < 0 or v % 2:
            raise ValueError(f"vertical_period must be 0 or a positive even integer, got {v}")
        return v

    @model_validator(mode="after")
    def bounds_ordered(self) -> "ModelConfig":
        if self.n_left > self.n_right:
            raise ValueError(f"n_left={self.n_left} exceeds n_right={self.n_right}")
        return self


class ExperimentConfig(BaseModel):
    model: ModelConfig
    cuts: List[int] = Field(default_factory=lambda: list(range(-4, 6)))
    orbit_depth: int = Field(default=50, ge=0)
    grid_size: int = Field(default=1024, ge=64, le=65536)
    steps: int = Field(default=40, ge=0, le=10**6)
    # torus heights [k_min, k_max] for dense spectral checks
    heights: Optional[Tuple[int, int]] = None
    initial_site: Optional[Tuple[int, int]] = None
    # [j0, j1, k0, k1] for evolve; default is the strip around the initial site
    window: Optional[Tuple[int, int, int, int]] = None
    samples: int = Field(default=20, ge=1)
    output: Optional[str] = None
    format: Format = "json"

    @field_validator("cuts")
    @classmethod
    def cuts_nonempty(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("cuts must not be empty")
        return v

    @field_validator("heights")
    @classmethod
    def heights_ordered(cls, v: Optional[Tuple[int, int]]) -> Optional[Tuple[int, int]]:
        if v is not None and v[1] < v[0]:
            raise ValueError(f"heights must be [k_min, k_max] with k_min <= k_max, got {list(v)}")
        return v

    @field_validator("window")
    @classmethod
    def window_ordered(cls, v: Optional[Tuple[int, int, int, int]]) -> Optional[Tuple[int, int, int, int]]:
        if v is not None and (v[1] < v[0] or v[3] < v[2]):
            raise ValueError(f"window must be [j0, j1, k0, k1] with j0 <= j1 and k0 <= k1, got {list(v)}")
        return v
