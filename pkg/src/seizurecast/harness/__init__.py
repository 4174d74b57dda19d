"""Command-line entry point, experiment configs and the checkpoint cache."""
