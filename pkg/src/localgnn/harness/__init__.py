"""Synthetic data, file formats, experiment runs, checks and the CLI."""
