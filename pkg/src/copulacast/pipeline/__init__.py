"""Configuration, synthetic data, split plans, stage runners and the CLI."""
