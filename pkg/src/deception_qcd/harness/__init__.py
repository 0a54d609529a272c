"""Configuration, Monte Carlo orchestration, file output and the CLI."""
