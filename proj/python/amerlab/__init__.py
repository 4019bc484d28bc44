"""Synthetic multi-target retrieval laboratory."""

from amerlab._core import (
    default_config,
    evaluate,
    gen_data,
    hungarian,
    lr_at,
    mrecall,
    normalize,
    round_robin,
    sampling_p,
    search,
    train,
)

__all__ = [
    "default_config",
    "evaluate",
    "gen_data",
    "hungarian",
    "lr_at",
    "mrecall",
    "normalize",
    "round_robin",
    "sampling_p",
    "search",
    "train",
]
