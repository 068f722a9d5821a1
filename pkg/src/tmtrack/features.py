"""Engineered state features for the keep/update agent.

Each view contributes a ``grid x grid`` mean-pooled luminance map followed by
six geometry features of the retained region's box, giving
``D = grid**2 + 6`` values per view and ``2 * D`` for the full state.
"""
from __future__ import annotations

import numpy as np

from .geometry import Box
from .template import Image, PredictedResult, TargetTemplate

GEOMETRY_FEATURES = 6
DEFAULT_GRID = 16


def feature_dim(grid: int = DEFAULT_GRID) -> int:
    return grid * grid + GEOMETRY_FEATURES


def cell_edges(length: int, grid: int) -> np.ndarray:
    # round-half-up of i * length / grid, in exact integer arithmetic
    i = np.arange(grid + 1, dtype=np.int64)
    return (2 * i * length + grid) // (2 * grid)


def geometry_features(box: Box, width: int, height: int) -> np.ndarray:
    cx, cy = box.center
    aspect = min(box.width / box.height, 4.0) / 4.0
    return np.array([cx / width, cy / height, box.width / width, box.height / height,
                     box.area / (width * height), aspect])


def _pooled_luminance(values: np.ndarray, origin: Box, width: int, height: int, grid: int) -> np.ndarray:
    """Pool channel sums that are zero outside ``origin`` into a luminance grid.

    ``values`` holds R+G+B for the pixels inside ``origin``; every other pixel
    of the ``width x height`` view is black.
    """
    cum = np.zeros((values.shape[0] + 1, values.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(values, axis=0, dtype=np.int64), axis=1, out=cum[1:, 1:])
    ex, ey = cell_edges(width, grid), cell_edges(height, grid)
    cx = np.clip(ex, origin.x0, origin.x1) - origin.x0
    cy = np.clip(ey, origin.y0, origin.y1) - origin.y0
    sums = (cum[np.ix_(cy[1:], cx[1:])] - cum[np.ix_(cy[:-1], cx[1:])]
            - cum[np.ix_(cy[1:], cx[:-1])] + cum[np.ix_(cy[:-1], cx[:-1])])
    counts = np.outer(np.diff(ey), np.diff(ex))
    grid_values = np.zeros((grid, grid))
    nonempty = counts > 0
    grid_values[nonempty] = sums[nonempty] / (765.0 * counts[nonempty])
    return grid_values.ravel()


def extract(view: Image, region_box: Box, grid: int = DEFAULT_GRID) -> np.ndarray:
    """Luminance grid of the whole view plus geometry of ``region_box``."""
    full = Box(0, 0, view.width, view.height)
    lum = _pooled_luminance(view.channel_sum(), full, view.width, view.height, grid)
    return np.concatenate([lum, geometry_features(region_box, view.width, view.height)])


def template_features(template: TargetTemplate, grid: int = DEFAULT_GRID) -> np.ndarray:
    """Same as ``extract(compose_template_view(template), template.box)`` without building the view."""
    frame, box = template.frame, template.box
    values = frame.channel_sum()[box.slices()]
    lum = _pooled_luminance(values, box, frame.width, frame.height, grid)
    return np.concatenate([lum, geometry_features(box, frame.width, frame.height)])


def prediction_features(prediction: PredictedResult, grid: int = DEFAULT_GRID) -> np.ndarray:
    """Same as ``extract(compose_prediction_view(prediction), prediction.box)``, computed on the mask's bbox."""
    frame, mask = prediction.frame, prediction.mask
    area = mask.bbox
    values = frame.channel_sum()[area.slices()] * mask.to_array()[area.slices()]
    lum = _pooled_luminance(values, area, frame.width, frame.height, grid)
    return np.concatenate([lum, geometry_features(prediction.box, frame.width, frame.height)])


def build_state(template: TargetTemplate, prediction: PredictedResult, grid: int = DEFAULT_GRID) -> np.ndarray:
    """Agent state: template-view features followed by prediction-view features."""
    return np.concatenate([template_features(template, grid), prediction_features(prediction, grid)])
