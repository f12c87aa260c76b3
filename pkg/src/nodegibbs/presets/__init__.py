"""Shipped experiment presets, one YAML file per standard scenario."""
