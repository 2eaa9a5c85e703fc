"""Discrete-event simulation, datasets, scenarios and benchmarking."""
