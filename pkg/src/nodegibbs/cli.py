"""Command-line client for the sampling service.

Every subcommand talks HTTP to the service layer: against a running
server when --server is given, otherwise against an in-process
instance, so the full pipeline works with no separate daemon. Exit
codes follow the error categories: 2 config, 3 data, 4 numeric,
5 storage/IO.
"""

from __future__ import annotations

import argparse
import sys
import time
import warnings

import httpx

from nodegibbs.config import apply_overrides, load_config_file, load_preset
from nodegibbs.errors import NodeGibbsError, StorageError

POLL_INTERVAL_SECONDS = 0.2


class RemoteError(NodeGibbsError):
    """A domain error reported by the service, with its exit code."""

    def __init__(self, message: str, exit_code: int, category: str):
        super().__init__(message)
        self.exit_code = exit_code
        self.category = category


def make_client(server: str | None) -> httpx.Client:
    if server is not None:
        return httpx.Client(base_url=server, timeout=None)
    # The in-process client import warns about its own httpx pairing;
    # that packaging note is noise on every CLI invocation.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from nodegibbs.service import create_app

    return TestClient(create_app())


def check(response: httpx.Response) -> dict:
    if response.status_code >= 400:
        detail = response.json().get("detail")
        if isinstance(detail, dict) and "exit_code" in detail:
            raise RemoteError(
                detail["message"], int(detail["exit_code"]), detail["category"]
            )
        raise RemoteError(str(detail), StorageError.exit_code, "IO")
    return response.json()


def cmd_simulate_xor(args: argparse.Namespace) -> int:
    with make_client(args.server) as client:
        body = check(
            client.post(
                "/simulate-xor",
                json={
                    "train_size": args.train_size,
                    "test_size": args.test_size,
                    "noise_width": args.noise_width,
                    "seed": args.seed,
                    "output_dir": args.output_dir,
                },
            )
        )
    print(f"wrote {body['train_size']} train points: {body['train_path']}")
    print(f"wrote {body['test_size']} test points: {body['test_path']}")
    print(f"metadata: {body['metadata_path']}")
    return 0


def _load_run_config(args: argparse.Namespace) -> dict:
    if args.preset is not None:
        config = load_preset(args.preset)
    else:
        config = load_config_file(args.config)
    return apply_overrides(config, args.set or [])


def _poll_job(client: httpx.Client, job_id: str) -> dict:
    while True:
        status = check(client.get(f"/jobs/{job_id}"))
        if status["status"] == "done":
            return status["result"]
        if status["status"] == "error":
            error = status["error"]
            raise RemoteError(
                error["message"], int(error["exit_code"]), error["category"]
            )
        time.sleep(POLL_INTERVAL_SECONDS)


def cmd_run_chain(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    with make_client(args.server) as client:
        job = check(
            client.post(
                "/chains/run",
                json={
                    "config": config,
                    "full_counts": args.full_counts,
                    "output_dir": args.output_dir,
                },
            )
        )
        print(f"job {job['job_id']} started")
        result = _poll_job(client, job["job_id"])
    print(
        f"retained {len(result['trace_dirs'])} chains in {result['output_dir']} "
        f"({result['attempts']} attempts, {len(result['discarded'])} discarded)"
    )
    for directory, rate in zip(result["trace_dirs"], result["overall_rates"]):
        print(f"  rate {rate:.4f}  {directory}")
    if result["discarded"]:
        print(
            f"discarded runtime: {result['discarded_runtime_seconds']:.1f} s "
            f"(retained: {result['retained_runtime_seconds']:.1f} s)"
        )
    return 0


def _predict_data_section(args: argparse.Namespace) -> dict:
    if args.test_csv is not None:
        return {"kind": "xor-csv", "test_path": args.test_csv}
    if args.test_images is not None or args.test_labels is not None:
        section = {
            "kind": "idx",
            "test_images": args.test_images,
            "test_labels": args.test_labels,
        }
        if args.no_standardize:
            section["standardize"] = False
        return section
    return {
        "kind": "xor",
        "train_size": args.xor_train_size,
        "test_size": args.xor_test_size,
        "noise_width": args.xor_noise_width,
        "seed": args.xor_seed,
    }


def cmd_predict(args: argparse.Namespace) -> int:
    with make_client(args.server) as client:
        body = check(
            client.post(
                "/predict",
                json={
                    "trace_dir": args.trace_dir,
                    "data": _predict_data_section(args),
                    "last_k": args.last_k,
                    "output_csv": args.output_csv,
                },
            )
        )
    print(
        f"accuracy {body['accuracy']:.4f} on {body['test_size']} points "
        f"(last {body['last_k']} samples)"
    )
    if body["csv_path"]:
        print(f"predictions: {body['csv_path']}")
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    with make_client(args.server) as client:
        body = check(
            client.post(
                "/augment",
                json={
                    "images": args.images,
                    "labels": args.labels,
                    "kind": args.kind,
                    "transform": {
                        "rotation_degrees": args.rotation_degrees,
                        "blur_probability": args.blur_probability,
                        "inversion_probability": args.inversion_probability,
                        "seed": args.seed,
                    },
                    "output_images": args.output_images,
                    "output_labels": args.output_labels,
                    "grid_csv": args.grid_csv,
                    "grid_count": args.grid_count,
                },
            )
        )
    print(
        f"wrote {body['size']} {args.kind} images: "
        f"{body['output_images']}, {body['output_labels']}"
    )
    if body["grid_csv"]:
        print(f"sample grid: {body['grid_csv']}")
    return 0


def cmd_diagnostics(args: argparse.Namespace) -> int:
    payload: dict = {
        "trace_dirs": args.trace_dir,
        "levels": args.level or ["layer"],
        "output_dir": args.output_dir,
        "include_partition": args.partition_csv,
    }
    if args.traceplot_index:
        payload["traceplot"] = {
            "flat_indices": args.traceplot_index,
            "thin": args.thin,
        }
    if args.volatility_batch_size:
        if args.config is None:
            raise NodeGibbsError(
                "--volatility-batch-size needs --config for the dataset"
            )
        config = load_config_file(args.config)
        if "data" not in config:
            raise NodeGibbsError(f"{args.config} has no data section")
        payload["volatility"] = {
            "data": config["data"],
            "batch_sizes": args.volatility_batch_size,
            "draws_per_size": args.volatility_draws,
            "seed": args.volatility_seed,
            "theta": args.volatility_theta,
        }
    with make_client(args.server) as client:
        body = check(client.post("/diagnostics", json=payload))
    for path in body["files"]:
        print(path)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from nodegibbs.service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nodegibbs",
        description="Blocked Metropolis-within-Gibbs sampling for MLP posteriors.",
    )
    parser.add_argument(
        "--server",
        default=None,
        help="base URL of a running service; default runs in-process",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate-xor", help="write a noisy-XOR train/test pair")
    sim.add_argument("--output-dir", required=True)
    sim.add_argument("--train-size", type=int, default=5000)
    sim.add_argument("--test-size", type=int, default=1200)
    sim.add_argument("--noise-width", type=float, default=0.4)
    sim.add_argument("--seed", type=int, default=0)
    sim.set_defaults(func=cmd_simulate_xor)

    run = sub.add_parser("run-chain", help="run chains from a config or preset")
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument("--preset", help="name of a shipped preset")
    source.add_argument("--config", help="path to an experiment YAML file")
    run.add_argument(
        "--set",
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="override a config key (repeatable)",
    )
    run.add_argument("--output-dir", default=None)
    run.add_argument(
        "--full-counts",
        action="store_true",
        help="use the publication-scale full_chain iteration counts",
    )
    run.set_defaults(func=cmd_run_chain)

    pred = sub.add_parser("predict", help="predict from a stored trace")
    pred.add_argument("--trace-dir", required=True)
    pred.add_argument("--last-k", type=int, default=None)
    pred.add_argument("--output-csv", default=None)
    pred.add_argument("--test-csv", default=None, help="labelled x1,x2,label file")
    pred.add_argument("--test-images", default=None, help="IDX image file")
    pred.add_argument("--test-labels", default=None, help="IDX label file")
    pred.add_argument(
        "--no-standardize",
        action="store_true",
        help="skip rescaling IDX pixels by the training statistics",
    )
    pred.add_argument("--xor-train-size", type=int, default=5000)
    pred.add_argument("--xor-test-size", type=int, default=1200)
    pred.add_argument("--xor-noise-width", type=float, default=0.4)
    pred.add_argument("--xor-seed", type=int, default=0)
    pred.set_defaults(func=cmd_predict)

    aug = sub.add_parser("augment", help="transform a raw IDX image set")
    aug.add_argument("--images", required=True)
    aug.add_argument("--labels", required=True)
    aug.add_argument(
        "--kind", required=True, choices=["rotation", "blur", "inversion"]
    )
    aug.add_argument("--output-images", required=True)
    aug.add_argument("--output-labels", required=True)
    aug.add_argument("--seed", type=int, default=0)
    aug.add_argument("--rotation-degrees", type=float, default=30.0)
    aug.add_argument("--blur-probability", type=float, default=0.9)
    aug.add_argument("--inversion-probability", type=float, default=0.5)
    aug.add_argument("--grid-csv", default=None)
    aug.add_argument("--grid-count", type=int, default=8)
    aug.set_defaults(func=cmd_augment)

    diag = sub.add_parser("diagnostics", help="emit CSV tables from stored traces")
    diag.add_argument(
        "--trace-dir", action="append", required=True, help="repeatable"
    )
    diag.add_argument(
        "--level", action="append", choices=["block", "node", "layer"]
    )
    diag.add_argument("--output-dir", required=True)
    diag.add_argument(
        "--partition-csv",
        action="store_true",
        help="also export the trace's block layout table",
    )
    diag.add_argument(
        "--traceplot-index", action="append", type=int, help="repeatable"
    )
    diag.add_argument("--thin", type=int, default=1)
    diag.add_argument(
        "--volatility-batch-size", action="append", type=int, help="repeatable"
    )
    diag.add_argument("--volatility-draws", type=int, default=10)
    diag.add_argument("--volatility-seed", type=int, default=0)
    diag.add_argument(
        "--volatility-theta", choices=["zero", "last-sample"], default="last-sample"
    )
    diag.add_argument("--config", default=None, help="config supplying the dataset")
    diag.set_defaults(func=cmd_diagnostics)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NodeGibbsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except httpx.HTTPError as exc:
        print(f"error: cannot reach service: {exc}", file=sys.stderr)
        return StorageError.exit_code


if __name__ == "__main__":
    sys.exit(main())
