"""Equation discovery for dynamics on graphs."""

from ._core import (
    ConfigError,
    Error,
    Expr,
    StageDependencyError,
    ba_graph,
    config_hash,
    er_graph,
    mae_traj,
    rollout,
    run_stage,
    simulate,
    stencil,
    ws_graph,
)

__all__ = [
    "ConfigError",
    "Error",
    "Expr",
    "StageDependencyError",
    "ba_graph",
    "config_hash",
    "er_graph",
    "mae_traj",
    "rollout",
    "run_stage",
    "simulate",
    "stencil",
    "ws_graph",
]
