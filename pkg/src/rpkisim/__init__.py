"""Discrete-event simulation of RPKI downgrade attacks, with the matching cost model."""
from .analysis import (n_attempts, overwhelming_factor, p_connectonce, p_success, packet_volume,
                       render_tables)
from .engine import Engine, EventLog, parse_duration
from .scenario import (ConfigError, ScenarioConfig, build_world, load_bundled, load_config, measure_stall,
                       monte_carlo, run_scenario)

__version__ = "0.1.0"

__all__ = ["ConfigError", "Engine", "EventLog", "ScenarioConfig", "build_world", "load_bundled", "load_config",
           "measure_stall", "monte_carlo", "n_attempts", "overwhelming_factor", "p_connectonce", "p_success",
           "packet_volume", "parse_duration", "render_tables", "run_scenario"]
