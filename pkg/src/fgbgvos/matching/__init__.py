from .backend import active_backend, available_backends, set_backend
from .ops import (
    DEFAULT_WINDOWS,
    EXP_CLAMP,
    BiasPair,
    MatchMaps,
    assemble_pixel_guidance,
    global_match,
    guidance_channels,
    multi_local_match,
    pairwise_distance,
    validate_windows,
)

__all__ = [
    "DEFAULT_WINDOWS",
    "EXP_CLAMP",
    "BiasPair",
    "MatchMaps",
    "active_backend",
    "assemble_pixel_guidance",
    "available_backends",
    "global_match",
    "guidance_channels",
    "multi_local_match",
    "pairwise_distance",
    "set_backend",
    "validate_windows",
]
