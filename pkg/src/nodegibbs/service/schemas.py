"""Request and response bodies of the HTTP endpoints."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorBody(BaseModel):
    message: str
    category: str
    exit_code: int


class SimulateXorRequest(BaseModel):
    train_size: int = 5000
    test_size: int = 1200
    noise_width: float = 0.4
    seed: int = 0
    output_dir: str


class SimulateXorResponse(BaseModel):
    train_path: str
    test_path: str
    metadata_path: str
    train_size: int
    test_size: int


class PartitionPreviewRequest(BaseModel):
    widths: list[int]
    hidden_activation: str | None = None
    output_activation: str | None = None
    scheme: str = "node"
    beta: dict[int, int] | None = None


class PartitionBlockRow(BaseModel):
    block: int
    layer: int
    node: int
    sub_block: int
    size: int


class PartitionPreviewResponse(BaseModel):
    parameter_count: int
    block_count: int
    blocks: list[PartitionBlockRow]


class RunChainsRequest(BaseModel):
    config: dict
    overrides: list[str] = Field(default_factory=list)
    full_counts: bool = False
    output_dir: str | None = None


class JobCreatedResponse(BaseModel):
    job_id: str


class JobStatusResponse(BaseModel):
    job_id: str
    status: Literal["queued", "running", "done", "error"]
    error: ErrorBody | None = None
    result: dict | None = None


class DataSection(BaseModel):
    """Mirror of the config file's data section, for predict requests."""

    kind: str
    train_size: int | None = None
    test_size: int | None = None
    noise_width: float | None = None
    seed: int | None = None
    train_path: str | None = None
    test_path: str | None = None
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    standardize: bool | None = None

    def to_section(self) -> dict:
        return {k: v for k, v in self.model_dump().items() if v is not None}


class PredictRequest(BaseModel):
    trace_dir: str
    data: DataSection
    last_k: int | None = None
    output_csv: str | None = None


class PredictResponse(BaseModel):
    accuracy: float
    test_size: int
    last_k: int
    csv_path: str | None


class TransformSettings(BaseModel):
    rotation_degrees: float = 30.0
    blur_probability: float = 0.9
    blur_kernel_size: int = 9
    blur_sigma_range: tuple[float, float] = (1.0, 1.5)
    inversion_probability: float = 0.5
    seed: int = 0


class AugmentRequest(BaseModel):
    images: str
    labels: str
    kind: Literal["rotation", "blur", "inversion"]
    transform: TransformSettings = Field(default_factory=TransformSettings)
    output_images: str
    output_labels: str
    grid_csv: str | None = None
    grid_count: int = 8


class AugmentResponse(BaseModel):
    size: int
    output_images: str
    output_labels: str
    grid_csv: str | None


class TraceplotSettings(BaseModel):
    flat_indices: list[int]
    thin: int = 1


class VolatilitySettings(BaseModel):
    data: DataSection
    batch_sizes: list[int]
    draws_per_size: int = 10
    seed: int = 0
    theta: Literal["zero", "last-sample"] = "last-sample"


class DiagnosticsRequest(BaseModel):
    trace_dirs: list[str]
    levels: list[Literal["block", "node", "layer"]] = Field(
        default_factory=lambda: ["layer"]
    )
    output_dir: str
    include_partition: bool = False
    traceplot: TraceplotSettings | None = None
    volatility: VolatilitySettings | None = None


class DiagnosticsResponse(BaseModel):
    files: list[str]
