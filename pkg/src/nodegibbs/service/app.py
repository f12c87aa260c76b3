"""FastAPI application exposing the sampling pipeline over HTTP.

Long chain runs go through a thread-backed job queue (POST /chains/run
returns a job id to poll); everything else answers synchronously.
Domain errors map to HTTP 400/404 with a body carrying the CLI exit
code category, so thin clients can exit accordingly.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

import nodegibbs
from nodegibbs.config import (
    apply_overrides,
    build_architecture,
    build_experiment,
    build_partition,
    load_experiment_data,
)
from nodegibbs.data import (
    ImageTransformConfig,
    PixelStats,
    XorSimConfig,
    augment,
    load_idx,
    read_xor_csv,
    simulate_noisy_xor,
    standardize,
    write_idx,
    write_image_grid_csv,
    write_xor_csv,
)
from nodegibbs.diagnostics import (
    acceptance_rates,
    extract_traceplot,
    loglik_volatility,
    multi_chain_summary,
    write_acceptance_csv,
    write_partition_csv,
    write_rate_summary_csv,
    write_traceplot_csv,
    write_volatility_csv,
    write_volatility_summary_csv,
)
from nodegibbs.errors import ConfigError, NodeGibbsError, StorageError
from nodegibbs.inference import predictive_accuracy, write_predictions_csv
from nodegibbs.mlp import LabeledDataset, param_count
from nodegibbs.runner import (
    overall_acceptance_rate,
    run_chains,
    write_runtime_csv,
)
from nodegibbs.sampler import ChainTrace, read_trace_metadata
from nodegibbs.service import schemas
from nodegibbs.service.jobs import JobRegistry


def _run_experiment_job(request: schemas.RunChainsRequest) -> dict:
    config = apply_overrides(request.config, request.overrides)
    plan = build_experiment(config, full_counts=request.full_counts)
    if "data" not in config:
        raise ConfigError("config is missing the data section")
    train, _, stats = load_experiment_data(config["data"])
    train.validate_for(plan.arch)
    result = run_chains(
        plan.arch,
        train,
        plan.partition,
        plan.proposals,
        plan.prior,
        plan.chain,
        n_chains=plan.run.n_chains,
        base_seed=plan.run.base_seed,
        floor=plan.run.floor,
        max_attempts=plan.run.max_attempts,
        workers=plan.run.workers,
    )
    out_dir = Path(request.output_dir or plan.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_dirs = []
    for i, trace in enumerate(result.traces):
        # Embed the config echo and pixel scale so prediction can
        # rebuild the exact evaluation setting later.
        directory = trace.save(
            out_dir / f"chain-{i:02d}",
            extra={
                "experiment_config": config,
                "pixel_stats": None if stats is None else asdict(stats),
                "chain_index": i,
            },
        )
        trace_dirs.append(str(directory))
    write_runtime_csv(out_dir / "chain_runtimes.csv", result)
    return {
        "output_dir": str(out_dir),
        "trace_dirs": trace_dirs,
        "attempts": result.attempts,
        "overall_rates": [overall_acceptance_rate(t) for t in result.traces],
        "discarded": [asdict(d) for d in result.discarded],
        "retained_runtime_seconds": result.retained_runtime_seconds,
        "discarded_runtime_seconds": result.discarded_runtime_seconds,
    }


def _load_test_data(
    section: dict, stats: PixelStats | None
) -> LabeledDataset:
    """The test set a predict request describes, on the training scale."""
    kind = section.get("kind")
    if kind == "xor":
        _, test = simulate_noisy_xor(
            XorSimConfig(
                train_size=section.get("train_size", 5000),
                test_size=section.get("test_size", 1200),
                noise_width=section.get("noise_width", 0.4),
                seed=section.get("seed", 0),
            )
        )
        return test
    if kind == "xor-csv":
        if "test_path" not in section:
            raise ConfigError("data.test_path is required for kind xor-csv")
        return read_xor_csv(section["test_path"])
    if kind == "idx":
        for key in ("test_images", "test_labels"):
            if not section.get(key):
                raise ConfigError(f"data.{key} is required for kind idx")
        test = load_idx(section["test_images"], section["test_labels"])
        if stats is not None and section.get("standardize", True):
            test, _ = standardize(test, stats)
        return test
    raise ConfigError(f"data.kind must be xor, xor-csv, or idx, got {kind!r}")


def _trace_pixel_stats(meta: dict) -> PixelStats | None:
    raw = meta.get("extra", {}).get("pixel_stats")
    if raw is None:
        return None
    return PixelStats(float(raw["mean"]), float(raw["std"]))


def create_app() -> FastAPI:
    app = FastAPI(title="nodegibbs", version=nodegibbs.__version__)
    registry = JobRegistry()
    app.state.jobs = registry

    @app.exception_handler(NodeGibbsError)
    async def domain_error_handler(request: Request, exc: NodeGibbsError):
        status = 404 if isinstance(exc, StorageError) else 400
        return JSONResponse(
            status_code=status,
            content={
                "detail": {
                    "message": str(exc),
                    "category": type(exc).__name__,
                    "exit_code": exc.exit_code,
                }
            },
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=nodegibbs.__version__)

    @app.post("/simulate-xor", response_model=schemas.SimulateXorResponse)
    def simulate_xor(body: schemas.SimulateXorRequest) -> schemas.SimulateXorResponse:
        sim = XorSimConfig(
            train_size=body.train_size,
            test_size=body.test_size,
            noise_width=body.noise_width,
            seed=body.seed,
        )
        train, test = simulate_noisy_xor(sim)
        out_dir = Path(body.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        train_path = out_dir / "train.csv"
        test_path = out_dir / "test.csv"
        metadata_path = out_dir / "metadata.json"
        write_xor_csv(train_path, train)
        write_xor_csv(test_path, test)
        with open(metadata_path, "w") as fh:
            json.dump(
                {
                    "train_size": sim.train_size,
                    "test_size": sim.test_size,
                    "noise_width": sim.noise_width,
                    "seed": sim.seed,
                    "noise_law": "corner + uniform(-noise_width, noise_width) "
                    "per coordinate",
                    "corner_labels": {
                        "(0,0)": 0,
                        "(1,1)": 0,
                        "(0,1)": 1,
                        "(1,0)": 1,
                    },
                },
                fh,
                indent=2,
            )
        return schemas.SimulateXorResponse(
            train_path=str(train_path),
            test_path=str(test_path),
            metadata_path=str(metadata_path),
            train_size=train.size,
            test_size=test.size,
        )

    @app.post("/partition-preview", response_model=schemas.PartitionPreviewResponse)
    def partition_preview(
        body: schemas.PartitionPreviewRequest,
    ) -> schemas.PartitionPreviewResponse:
        arch_section: dict = {"widths": body.widths}
        if body.hidden_activation is not None:
            arch_section["hidden_activation"] = body.hidden_activation
        if body.output_activation is not None:
            arch_section["output_activation"] = body.output_activation
        arch = build_architecture(arch_section)
        partition_section: dict = {"scheme": body.scheme}
        if body.beta is not None:
            partition_section["beta"] = body.beta
        partition = build_partition(arch, partition_section)
        return schemas.PartitionPreviewResponse(
            parameter_count=param_count(arch),
            block_count=partition.block_count,
            blocks=[
                schemas.PartitionBlockRow(
                    block=q, layer=b.layer, node=b.node, sub_block=b.sub_block, size=b.size
                )
                for q, b in enumerate(partition.blocks)
            ],
        )

    @app.post("/chains/run", response_model=schemas.JobCreatedResponse)
    def chains_run(body: schemas.RunChainsRequest) -> schemas.JobCreatedResponse:
        job = registry.submit(lambda: _run_experiment_job(body))
        return schemas.JobCreatedResponse(job_id=job.job_id)

    @app.get("/jobs/{job_id}", response_model=schemas.JobStatusResponse)
    def job_status(job_id: str) -> schemas.JobStatusResponse:
        job = registry.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no such job {job_id}")
        error = None
        if job.status == "error":
            error = schemas.ErrorBody(
                message=job.error_message or "",
                category=job.error_category or "internal",
                exit_code=job.error_exit_code or 1,
            )
        return schemas.JobStatusResponse(
            job_id=job.job_id, status=job.status, error=error, result=job.result
        )

    @app.post("/predict", response_model=schemas.PredictResponse)
    def predict(body: schemas.PredictRequest) -> schemas.PredictResponse:
        meta = read_trace_metadata(body.trace_dir)
        trace = ChainTrace.load(body.trace_dir)
        test = _load_test_data(body.data.to_section(), _trace_pixel_stats(meta))
        test.validate_for(trace.arch)
        if body.output_csv is not None:
            Path(body.output_csv).parent.mkdir(parents=True, exist_ok=True)
            accuracy = write_predictions_csv(
                body.output_csv, trace.arch, trace.samples, test, last_k=body.last_k
            )
        else:
            accuracy = predictive_accuracy(
                trace.arch, trace.samples, test, last_k=body.last_k
            )
        return schemas.PredictResponse(
            accuracy=accuracy,
            test_size=test.size,
            last_k=body.last_k if body.last_k is not None else trace.samples.shape[0],
            csv_path=body.output_csv,
        )

    @app.post("/augment", response_model=schemas.AugmentResponse)
    def augment_images(body: schemas.AugmentRequest) -> schemas.AugmentResponse:
        data = load_idx(body.images, body.labels)
        transform = ImageTransformConfig(**body.transform.model_dump())
        transformed = augment(data, body.kind, transform)
        for path in (body.output_images, body.output_labels):
            Path(path).parent.mkdir(parents=True, exist_ok=True)
        write_idx(body.output_images, body.output_labels, transformed)
        grid_csv = None
        if body.grid_csv is not None:
            Path(body.grid_csv).parent.mkdir(parents=True, exist_ok=True)
            write_image_grid_csv(body.grid_csv, data, transformed, body.grid_count)
            grid_csv = body.grid_csv
        return schemas.AugmentResponse(
            size=transformed.size,
            output_images=body.output_images,
            output_labels=body.output_labels,
            grid_csv=grid_csv,
        )

    @app.post("/diagnostics", response_model=schemas.DiagnosticsResponse)
    def diagnostics(body: schemas.DiagnosticsRequest) -> schemas.DiagnosticsResponse:
        if not body.trace_dirs:
            raise ConfigError("trace_dirs must not be empty")
        traces = [ChainTrace.load(d) for d in body.trace_dirs]
        out_dir = Path(body.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = []
        for level in body.levels:
            if len(traces) == 1:
                path = out_dir / f"acceptance_rates_by_{level}.csv"
                write_acceptance_csv(path, acceptance_rates(traces[0], level), level)
            else:
                path = out_dir / f"acceptance_rate_summary_by_{level}.csv"
                write_rate_summary_csv(
                    path, multi_chain_summary(traces, level), level
                )
            files.append(str(path))
        if body.include_partition:
            path = out_dir / "partition.csv"
            write_partition_csv(path, traces[0].partition)
            files.append(str(path))
        if body.traceplot is not None:
            series = [
                extract_traceplot(traces[0], index, body.traceplot.thin)
                for index in body.traceplot.flat_indices
            ]
            path = out_dir / "traceplot.csv"
            write_traceplot_csv(path, series)
            files.append(str(path))
        if body.volatility is not None:
            train, _, _ = load_experiment_data(body.volatility.data.to_section())
            if body.volatility.theta == "zero":
                theta = np.zeros(traces[0].samples.shape[1])
                note = "zero vector"
            else:
                if traces[0].samples.shape[0] == 0:
                    raise ConfigError("trace retained no samples to evaluate at")
                theta = traces[0].samples[-1]
                note = f"last retained sample of {body.trace_dirs[0]}"
            study = loglik_volatility(
                traces[0].arch,
                theta,
                train,
                body.volatility.batch_sizes,
                draws_per_size=body.volatility.draws_per_size,
                seed=body.volatility.seed,
                theta_note=note,
            )
            samples_path = out_dir / "loglik_volatility.csv"
            summary_path = out_dir / "loglik_volatility_summary.csv"
            write_volatility_csv(samples_path, study)
            write_volatility_summary_csv(summary_path, study)
            files.extend([str(samples_path), str(summary_path)])
        return schemas.DiagnosticsResponse(files=files)

    return app
