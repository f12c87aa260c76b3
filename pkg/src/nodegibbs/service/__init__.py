"""HTTP service exposing simulation, sampling, prediction, and diagnostics."""

from nodegibbs.service.app import create_app

__all__ = ["create_app"]
