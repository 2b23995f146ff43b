"""Epidemic routing in delay-tolerant networks: fluid SIR models of the
buffer-occupancy / delivery-reliability tradeoff and Monte-Carlo validation."""

from .analytic import (
    AntipacketPolicy,
    EpidemicParams,
    ReliabilityTarget,
    TimeoutPolicy,
    antipacket_buffer,
    optimal_global_timeout,
    pareto_buffer,
)
from .config import ConfigError, ScenarioConfig
from .simulator import RunMetrics, batch, run_meeting_process, run_spatial

__version__ = "0.1.0"

__all__ = [
    "AntipacketPolicy",
    "ConfigError",
    "EpidemicParams",
    "ReliabilityTarget",
    "RunMetrics",
    "ScenarioConfig",
    "TimeoutPolicy",
    "antipacket_buffer",
    "batch",
    "optimal_global_timeout",
    "pareto_buffer",
    "run_meeting_process",
    "run_spatial",
]
