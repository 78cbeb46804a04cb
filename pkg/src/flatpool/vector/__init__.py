"""Vectorized simulation over serial or shared-memory workers."""

from flatpool.vector.config import CodePath, VecConfig, select_code_path
from flatpool.vector.layout import SharedLayout
from flatpool.vector.pool import Batch, VecEnv, live_segments, open_vectorized

__all__ = [
    "Batch",
    "CodePath",
    "SharedLayout",
    "VecConfig",
    "VecEnv",
    "live_segments",
    "open_vectorized",
    "select_code_path",
]
