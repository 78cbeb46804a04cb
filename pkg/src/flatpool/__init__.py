"""Flat, fixed-size environment emulation and fast vectorized simulation."""

from flatpool.emulation import EmulatedEnv, Env, EpisodeAggregator, aggregate_infos, wrap
from flatpool.errors import FlatpoolError
from flatpool.spaces import (
    Box,
    Discrete,
    MapSpace,
    MultiDiscrete,
    TupleSpace,
    action_to_multidiscrete,
    flatten,
    infer_layout,
    unflatten,
)
from flatpool.vector import CodePath, VecConfig, VecEnv, open_vectorized

__version__ = "0.1.0"

__all__ = [
    "Box",
    "CodePath",
    "Discrete",
    "EmulatedEnv",
    "Env",
    "EpisodeAggregator",
    "FlatpoolError",
    "MapSpace",
    "MultiDiscrete",
    "TupleSpace",
    "VecConfig",
    "VecEnv",
    "action_to_multidiscrete",
    "aggregate_infos",
    "flatten",
    "infer_layout",
    "open_vectorized",
    "unflatten",
    "wrap",
]
