"""Pydantic request/response models for the HTTP surface."""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..prototypes import FitConfig


class FitConfigModel(BaseModel):
    k_max: int = Field(default=2, ge=1)
    bg_mixture_enabled: bool = True
    fg_refinement_enabled: bool = True
    max_iterations: int = Field(default=100, ge=1)

    def to_core(self) -> FitConfig:
        return FitConfig(k_max=self.k_max,
                         bg_mixture_enabled=self.bg_mixture_enabled,
                         fg_refinement_enabled=self.fg_refinement_enabled,
                         max_iterations=self.max_iterations)


class SupportItem(BaseModel):
    feature_path: str
    image_h: int | None = None
    image_w: int | None = None
    boxes: list[list[int]] | None = None
    mask_path: str | None = None


class FitRequest(BaseModel):
    support: list[SupportItem] | None = None
    support_manifest_path: str | None = None
    config: FitConfigModel = FitConfigModel()
    output_path: str | None = None
    diagnostics_path: str | None = None
    store_as: str | None = None


class DiagnosticsModel(BaseModel):
    iterations_run: int
    spawn_events: int
    empty_cluster_events: int
    stop_reason: str


class FitResponse(BaseModel):
    depth: int
    num_bg: int
    k_max: int
    diagnostics: DiagnosticsModel
    output_path: str | None = None
    diagnostics_path: str | None = None
    stored_as: str | None = None


class PredictRequest(BaseModel):
    query_feature_path: str
    image_h: int | None = None
    image_w: int | None = None
    prototypes_path: str | None = None
    prototypes_ref: str | None = None
    mask_path: str | None = None
    rle_path: str | None = None
    overlay_path: str | None = None
    source_image_path: str | None = None
    include_rle: bool = False


class PredictResponse(BaseModel):
    height: int
    width: int
    foreground_pixels: int
    mask_path: str | None = None
    rle_path: str | None = None
    overlay_path: str | None = None
    rle: dict | None = None


class EvaluateRequest(BaseModel):
    manifest_path: str
    config: FitConfigModel = FitConfigModel()
    seeds: list[int] = [0, 1, 2, 3, 4]
    tasks_per_seed: int = Field(default=1000, ge=1)
    shots: int = Field(default=1, ge=1)
    include_background_class: bool = False
    jobs: int = Field(default=1, ge=1)
    report_path: str | None = None
    csv_path: str | None = None


class EvaluateResponse(BaseModel):
    mean_iou: float
    per_seed_mean_iou: list[float]
    failed_tasks: int
    report_path: str | None = None
    csv_path: str | None = None
    report: dict


class SweepRequest(BaseModel):
    manifest_path: str
    axis: str
    values: list[int] | None = None
    config: FitConfigModel = FitConfigModel()
    seeds: list[int] = [0, 1, 2, 3, 4]
    tasks_per_seed: int = Field(default=1000, ge=1)
    shots: int = Field(default=1, ge=1)
    include_background_class: bool = False
    jobs: int = Field(default=1, ge=1)
    json_path: str | None = None
    csv_path: str | None = None
    plot_path: str | None = None


class SweepRow(BaseModel):
    axis: str
    value: int | str
    mean_iou: float


class SweepResponse(BaseModel):
    rows: list[SweepRow]
    json_path: str | None = None
    csv_path: str | None = None
    plot_path: str | None = None


class SynthRequest(BaseModel):
    scene_path: str | None = None
    scenes: list[dict] | None = None
    out_dir: str
    images_per_class: int = Field(default=6, ge=2)


class SynthResponse(BaseModel):
    manifest_path: str
    classes: list[str]
    files_written: int


class DeriveBoxesRequest(BaseModel):
    mask_path: str
    connectivity: int = 4
    min_component_px: int = Field(default=1, ge=1)


class DeriveBoxesResponse(BaseModel):
    boxes: list[list[int]]


class HealthResponse(BaseModel):
    status: str
    version: str
