"""Fault-tolerant pipeline-parallel inference over a simulated swarm."""

from ._core import (
    BudgetExceeded,
    ConfigError,
    Model,
    Swarm,
    SwarmUnavailable,
    choose_start,
    failure_rate_cell,
    greedy_join,
    offload_bound,
    optimal_assignment,
    quantize_roundtrip,
    swarm_throughput,
)

__version__ = "0.1.0"

__all__ = [
    "BudgetExceeded",
    "ConfigError",
    "Model",
    "Swarm",
    "SwarmUnavailable",
    "choose_start",
    "failure_rate_cell",
    "greedy_join",
    "offload_bound",
    "optimal_assignment",
    "quantize_roundtrip",
    "swarm_throughput",
]
