"""Colour renderings: red mask boundary and optional heat-map blend."""

import numpy as np
from scipy import ndimage

RED = np.array([255, 0, 0], dtype=np.uint8)


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    inner = ndimage.binary_erosion(mask, structure=np.ones((3, 3), bool), border_value=0)
    return mask & ~inner


def heat_colors(heat: np.ndarray) -> np.ndarray:
    """Blue -> green -> red ramp for values in [0, 1]."""
    h = np.clip(np.asarray(heat, dtype=np.float64), 0.0, 1.0)
    r = np.clip(2.0 * h - 1.0, 0.0, 1.0)
    g = 1.0 - np.abs(2.0 * h - 1.0)
    b = np.clip(1.0 - 2.0 * h, 0.0, 1.0)
    return np.stack([r, g, b], axis=-1) * 255.0


def render_overlay(gray: np.ndarray, mask: np.ndarray, heatmap: np.ndarray | None = None,
                   alpha: float = 0.45) -> np.ndarray:
    gray = np.asarray(gray)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != gray.shape:
        raise ValueError(f"mask shape {mask.shape} does not match image shape {gray.shape}")
    rgb = np.repeat(gray[..., None].astype(np.float64), 3, axis=2)
    if heatmap is not None:
        heatmap = np.asarray(heatmap, dtype=np.float64)
        if heatmap.shape != gray.shape:
            raise ValueError(f"heatmap shape {heatmap.shape} does not match image shape {gray.shape}")
        a = alpha * np.clip(heatmap, 0.0, 1.0)[..., None]
        rgb = (1 - a) * rgb + a * heat_colors(heatmap)
    out = np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)
    out[mask_boundary(mask)] = RED
    return out
