"""Contour overlays: ground truth in pure green, prediction in pure blue."""

from __future__ import annotations

import numpy as np

GREEN = (0, 255, 0)
BLUE = (0, 0, 255)


def contour(mask: np.ndarray) -> np.ndarray:
    """Positive pixels with at least one non-positive 4-neighbour.

    Pixels outside the image count as non-positive, so lesions touching the
    border are outlined there too.
    """
    m = np.asarray(mask).astype(bool)
    if m.ndim == 3:
        m = m[0]
    p = np.pad(m, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return m & ~interior


def render_overlay(image: np.ndarray, pred: np.ndarray, gt: np.ndarray | None = None) -> np.ndarray:
    """(3, H, W) float image in [0, 1] -> (H, W, 3) uint8 with contours drawn.

    The prediction is drawn last, so it wins where the two contours coincide.
    """
    rgb = np.clip(np.round(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    if gt is not None:
        rgb[contour(gt)] = GREEN
    rgb[contour(pred)] = BLUE
    return rgb
