# SPDX-License-Identifier: Apache-2.0
"""Attentional set aggregation for multi-view 3D reconstruction."""

from ._core import (
    ContractError,
    FormatError,
    GenerationError,
    IoError,
    NumericError,
    ShapeError,
    aggregate,
    aggregator_kinds,
    init_weights,
    iou,
    make_sample,
    search_threshold,
    selftest,
    threshold_grid,
)

__all__ = [
    "ContractError",
    "FormatError",
    "GenerationError",
    "IoError",
    "NumericError",
    "ShapeError",
    "aggregate",
    "aggregator_kinds",
    "init_weights",
    "iou",
    "make_sample",
    "search_threshold",
    "selftest",
    "threshold_grid",
]
