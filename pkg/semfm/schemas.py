"""
Pydantic models for run configuration, reports and dataset manifests.
Every JSON document written by the CLI carries schema_version.
"""
from __future__ import annotations
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, field_validator, model_validator

SCHEMA_VERSION = 1


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # paths
    source_mesh: Optional[str] = None
    target_mesh: Optional[str] = None
    source_samples: Optional[str] = None
    target_samples: Optional[str] = None
    source_affordance: Optional[str] = None
    target_affordance: Optional[str] = None
    manifest: Optional[str] = None
    output_dir: Optional[str] = None
    cache_dir: Optional[str] = None

    # spectral / functional map
    k: int = Field(50, ge=1, le=512)
    k0: int = Field(20, ge=1, le=512)
    step: int = Field(5, ge=1)
    k_final: int = Field(80, ge=1, le=512)
    refine: bool = True
    reg_weight: Optional[float] = Field(None, ge=0)
    t_scale: float = Field(10.0, ge=0)

    # semantics
    n_points: int = Field(600, ge=1)
    radius: Optional[PositiveFloat] = None
    K: int = Field(5, ge=2, le=10)
    alpha: int = Field(2, ge=1)
    k_nn: int = Field(10, ge=1)
    sigma: Union[Literal["median"], PositiveFloat] = "median"

    # transfer / evaluation
    mode: Literal["pointwise", "indicator"] = "pointwise"
    threshold: float = Field(0.5, gt=0, lt=1)
    method: Literal["semfm", "fm-wks"] = "semfm"
    wks_energies: int = Field(100, ge=1)
    wks_sigma_scale: PositiveFloat = 7.0
    wks_normalized: bool = True
    geodesic_subset: int = Field(500, ge=1)
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)
    use_cache: bool = True
    ply: bool = False

    @field_validator("sigma", mode="before")
    @classmethod
    def _sigma_number(cls, v):
        if isinstance(v, str) and v != "median":
            try:
                return float(v)
            except ValueError:
                raise ValueError("sigma must be 'median' or a positive number") from None
        return v

    @model_validator(mode="after")
    def _ranges(self):
        if self.k0 > self.k_final:
            raise ValueError(f"k0 ({self.k0}) must not exceed k_final ({self.k_final})")
        if self.alpha > self.K:
            raise ValueError(f"alpha ({self.alpha}) must not exceed K ({self.K})")
        return self

    @property
    def basis_dim(self) -> int:
        """Eigenpairs to compute: enough for the initial map and the refinement ceiling."""
        return max(self.k, self.k_final) if self.refine else self.k


class TransferReport(BaseModel):
    source: str
    target: str
    method: Literal["semfm", "fm-wks"] = "semfm"
    mode: Literal["pointwise", "indicator"] = "pointwise"
    iou: Optional[float] = Field(None, ge=0, le=1)
    runtime_seconds: float = Field(..., ge=0)
    timings: Dict[str, float] = Field(default_factory=dict)
    basis_cached: bool = False
    alpha: int = 0
    anchors: List[Tuple[int, int]] = Field(default_factory=list)
    anchor_similarities: List[float] = Field(default_factory=list)
    k_trace: List[int] = Field(default_factory=list)
    n_predicted: int = 0
    geodesic_median: Optional[float] = None
    geodesic_mean: Optional[float] = None
    geodesic_median_initial: Optional[float] = None


class CategoryReport(BaseModel):
    schema_version: int = SCHEMA_VERSION
    method: Literal["semfm", "fm-wks"]
    n_objects: int = Field(..., ge=2)
    pairs: List[TransferReport]
    avg_iou: float = Field(..., ge=0, le=1)
    avg_runtime_s: float = Field(..., ge=0)
    median_geodesic_error: Optional[float] = None
    config: Dict[str, Any] = Field(default_factory=dict)


class ComparisonRow(BaseModel):
    method: str
    avg_iou: float
    avg_runtime_s: float
    median_geodesic_error: Optional[float] = None


class ObjectEntry(BaseModel):
    id: str
    mesh: str
    samples: str
    affordance: str
    parts: Optional[str] = None


class Manifest(BaseModel):
    schema_version: int = SCHEMA_VERSION
    seed: int
    spec: Dict[str, Any] = Field(default_factory=dict)
    objects: List[ObjectEntry]
    gt_affordances: List[str]
    shared_connectivity: bool = True

    @model_validator(mode="after")
    def _complete(self):
        if len(self.objects) < 2:
            raise ValueError(f"a category needs at least 2 objects, manifest lists {len(self.objects)}")
        if len(self.gt_affordances) != len(self.objects):
            raise ValueError(
                f"manifest lists {len(self.objects)} objects but {len(self.gt_affordances)} ground-truth affordances"
            )
        return self
