"""Simulation-enabled action planning: scenes, multi-physics rollouts, planners, benchmarks."""

__version__ = "0.1.0"
