"""Ground-truth encoding: per-class Gaussian heatmaps plus polar regression planes.

All output grids live at the network stride ``d``: a heatmap array has shape
``(num_classes, grid_h, grid_w)`` and is indexed ``[class, cell_y, cell_x]``;
the regression planes have shape ``(grid_h, grid_w)``. Radius targets are
stored in output-grid units (pixels / stride); the decoder multiplies back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CellCollision, DegenerateBox, OutOfBounds
from .geometry import Point2, PolarBox, polar_to_quad

# Gaussian kernels are cut at 3 sigma; the largest discarded value is e^-4.5
TRUNCATION_SIGMAS = 3.0


@dataclass(frozen=True)
class GridConfig:
    """Input size, output stride and class count of the detection grid."""

    width: int
    height: int
    stride: int = 4
    num_classes: int = 1

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.width % self.stride or self.height % self.stride:
            raise ValueError(
                f"image size {self.width}x{self.height} not divisible by "
                f"stride {self.stride}"
            )

    @property
    def grid_w(self) -> int:
        return self.width // self.stride

    @property
    def grid_h(self) -> int:
        return self.height // self.stride


@dataclass
class EncodedSample:
    """Training targets for one image.

    ``rho`` is in output-grid units; the theta planes are radians. The
    regression planes are zero away from pole cells, and the heatmap is
    exactly 1 at each pole cell in its class channel.
    """

    heatmap: np.ndarray           # (C, grid_h, grid_w) in [0, 1]
    rho: np.ndarray               # (grid_h, grid_w)
    theta1: np.ndarray            # (grid_h, grid_w)
    theta2: np.ndarray            # (grid_h, grid_w)
    pole_mask: np.ndarray         # (grid_h, grid_w) bool
    pole_cells: list[tuple[int, int, int]] = field(default_factory=list)  # (class_id, cx, cy)


def pole_cell(pole: Point2, cfg: GridConfig) -> tuple[int, int]:
    """Grid cell containing a pole point: (floor(x/d), floor(y/d))."""
    x, y = pole
    if not (0.0 <= x < cfg.width and 0.0 <= y < cfg.height):
        raise OutOfBounds(f"pole ({x}, {y}) outside {cfg.width}x{cfg.height} image")
    return int(x // cfg.stride), int(y // cfg.stride)


def _side_lengths(box: PolarBox) -> tuple[float, float]:
    # side lengths of the oriented rectangle (adjacent-corner distances),
    # not the axis-aligned extent
    c = polar_to_quad(box).corners
    return (float(np.hypot(*(c[1] - c[0]))), float(np.hypot(*(c[2] - c[1]))))


def gaussian_heatmap(boxes: list[PolarBox], cfg: GridConfig) -> np.ndarray:
    """Render per-class Gaussian peaks, one per box, merged by elementwise max.

    Each box contributes exp(-(dx^2 + dy^2) / (2 sigma^2)) around its pole
    cell with sigma = min(side lengths) / 3, converted to grid units. The
    peak value at the pole cell is exactly 1.
    """
    heat = np.zeros((cfg.num_classes, cfg.grid_h, cfg.grid_w))
    for box in boxes:
        if not 0 <= box.class_id < cfg.num_classes:
            raise ValueError(f"class_id {box.class_id} outside [0, {cfg.num_classes})")
        cx, cy = pole_cell(box.pole, cfg)
        w, h = _side_lengths(box)
        if min(w, h) <= 0.0:
            raise DegenerateBox("box has a zero-length side")
        sigma = min(w, h) / 3.0 / cfg.stride
        radius = int(math.ceil(TRUNCATION_SIGMAS * sigma))
        x0, x1 = max(cx - radius, 0), min(cx + radius, cfg.grid_w - 1)
        y0, y1 = max(cy - radius, 0), min(cy + radius, cfg.grid_h - 1)
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        r2 = (gx - cx) ** 2 + (gy - cy) ** 2
        kernel = np.exp(-r2 / (2.0 * sigma * sigma))
        kernel[r2 > (TRUNCATION_SIGMAS * sigma) ** 2] = 0.0
        ch = heat[box.class_id]
        ch[y0:y1 + 1, x0:x1 + 1] = np.maximum(ch[y0:y1 + 1, x0:x1 + 1], kernel)
    return heat


def encode_regression(boxes: list[PolarBox], cfg: GridConfig) -> EncodedSample:
    """Build the full target set for one image.

    Targets are defined at the exact pole cell only. Two boxes landing in
    the same cell are a generator bug at desk scale, so that raises
    ``CellCollision`` instead of silently overwriting.
    """
    shape = (cfg.grid_h, cfg.grid_w)
    rho = np.zeros(shape)
    theta1 = np.zeros(shape)
    theta2 = np.zeros(shape)
    mask = np.zeros(shape, dtype=bool)
    cells: list[tuple[int, int, int]] = []
    occupied: dict[tuple[int, int], int] = {}
    for i, box in enumerate(boxes):
        cx, cy = pole_cell(box.pole, cfg)
        if (cx, cy) in occupied:
            raise CellCollision(
                f"boxes {occupied[(cx, cy)]} and {i} share pole cell ({cx}, {cy})"
            )
        occupied[(cx, cy)] = i
        rho[cy, cx] = box.rho / cfg.stride
        theta1[cy, cx] = box.theta1
        theta2[cy, cx] = box.theta2
        mask[cy, cx] = True
        cells.append((box.class_id, cx, cy))
    return EncodedSample(
        heatmap=gaussian_heatmap(boxes, cfg),
        rho=rho, theta1=theta1, theta2=theta2,
        pole_mask=mask, pole_cells=cells,
    )
