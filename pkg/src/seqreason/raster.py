"""Deterministic grayscale rendering of feature vectors.

Shapes are hard-edged fills evaluated at integer pixel offsets from integer
cell centers, so the output does not depend on anti-aliasing or platform
drawing libraries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .probgen import (
    N_CELLS,
    N_GRID_VALUES,
    Feature,
    FeatureVector,
    ProblemFeatures,
    RuleKind,
    ShapeKind,
)

# vertex coordinates are snapped to this grid so sin/cos ulp noise cannot
# flip an edge pixel
_SNAP = 1024.0


def _linear(lo: float, hi: float) -> tuple[float, ...]:
    return tuple(float(v) for v in np.linspace(lo, hi, N_GRID_VALUES))


def respace(grid: tuple[float, ...], kind: RuleKind) -> tuple[float, ...]:
    """Geometric or square-root spacing between the grid's endpoints."""
    lo, hi = grid[0], grid[-1]
    t = np.arange(N_GRID_VALUES) / (N_GRID_VALUES - 1)
    if kind is RuleKind.EXPONENTIAL:
        vals = lo * (hi / lo) ** t
    elif kind is RuleKind.SQRT:
        vals = lo + (hi - lo) * np.sqrt(t)
    else:
        return grid
    vals[0], vals[-1] = lo, hi
    return tuple(float(v) for v in vals)


@dataclass(frozen=True)
class RenderConfig:
    resolution: int = 224
    background: float = 0.0
    shade_grid: tuple[float, ...] = field(default_factory=lambda: _linear(1 / 3, 1.0))
    # enclosing-circle radii as fractions of the cell width
    size_fracs: tuple[float, ...] = field(default_factory=lambda: _linear(0.15, 0.48))
    grid_dim: int = 3

    def __post_init__(self):
        if len(self.shade_grid) != N_GRID_VALUES or len(self.size_fracs) != N_GRID_VALUES:
            raise ValueError("shade and size grids must have 6 values")
        if len(set(self.shade_grid)) != N_GRID_VALUES:
            raise ValueError("shade values must be distinct")
        if any(s == self.background for s in self.shade_grid):
            raise ValueError("a shade equals the background intensity")
        if not all(0.0 <= s <= 1.0 for s in (*self.shade_grid, self.background)):
            raise ValueError("intensities must lie in [0, 1]")
        if max(self.size_fracs) > 0.5 or min(self.size_fracs) <= 0:
            raise ValueError("radii must lie in (0, cell/2]")
        if self.grid_dim ** 2 != N_CELLS:
            raise ValueError("only a 3x3 layout grid is supported")

    @property
    def cell(self) -> float:
        return self.resolution / self.grid_dim

    @property
    def size_grid(self) -> tuple[float, ...]:
        return tuple(f * self.cell for f in self.size_fracs)

    def for_rule(self, predictive: Feature, kind: RuleKind) -> RenderConfig:
        """Config whose predictive-feature grid is re-spaced for non-linear rules."""
        if kind not in (RuleKind.EXPONENTIAL, RuleKind.SQRT):
            return self
        if predictive is Feature.COLOR:
            return replace(self, shade_grid=respace(self.shade_grid, kind))
        if predictive is Feature.SIZE:
            return replace(self, size_fracs=respace(self.size_fracs, kind))
        raise ValueError(f"{kind.value} rule is not defined for {predictive.value}")

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "background": self.background,
            "shade_grid": list(self.shade_grid),
            "size_grid_px": list(self.size_grid),
            "grid_dim": self.grid_dim,
        }


def layout_positions(count: int, arrangement, cfg: RenderConfig) -> list[tuple[int, int]]:
    """(row, col) pixel centers of the first ``count`` cells of ``arrangement``."""
    if not 1 <= count <= N_CELLS:
        raise ValueError(f"count must be in [1, 9], got {count}")
    g, res = cfg.grid_dim, cfg.resolution

    def mid(i: int) -> int:
        # round((i + 0.5) * res / g) half-up, in integers
        return ((2 * i + 1) * res + g) // (2 * g)

    return [(mid(c // g), mid(c % g)) for c in arrangement[:count]]


def _polygon(kind: ShapeKind, radius: float) -> np.ndarray:
    """Vertices (dx, dy) with y pointing down the image."""
    if kind is ShapeKind.TRIANGLE:
        angles = [-90 + 120 * i for i in range(3)]
        radii = [radius] * 3
    elif kind is ShapeKind.SQUARE:
        angles = [45 + 90 * i for i in range(4)]
        radii = [radius] * 4
    elif kind is ShapeKind.HEXAGON:
        angles = [60 * i for i in range(6)]  # vertex at 0 deg => flat top
        radii = [radius] * 6
    elif kind is ShapeKind.STAR:
        inner = radius * math.sin(math.radians(18)) / math.sin(math.radians(126))
        angles = [-90 + 36 * i for i in range(10)]
        radii = [radius if i % 2 == 0 else inner for i in range(10)]
    else:
        raise ValueError(f"not a polygon: {kind}")
    pts = [(r * math.cos(math.radians(a)), r * math.sin(math.radians(a))) for a, r in zip(angles, radii)]
    return np.round(np.asarray(pts) * _SNAP) / _SNAP


def _inside_polygon(dx: np.ndarray, dy: np.ndarray, verts: np.ndarray) -> np.ndarray:
    # even-odd ray casting; handles the non-convex star
    inside = np.zeros(dx.shape, dtype=bool)
    n = len(verts)
    for i in range(n):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % n]
        if y0 == y1:
            continue
        crosses = (y0 > dy) != (y1 > dy)
        x_at = x0 + (dy - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (dx < x_at)
    return inside


def shape_mask(kind: ShapeKind, radius: float) -> np.ndarray:
    """Boolean footprint of a shape on a (2R+1)^2 patch centered at [R, R]."""
    R = int(math.ceil(radius))
    off = np.arange(-R, R + 1, dtype=np.float64)
    dy, dx = np.meshgrid(off, off, indexing="ij")
    if kind is ShapeKind.CIRCLE:
        return dx * dx + dy * dy <= radius * radius
    if kind is ShapeKind.SQUARE:
        h = radius / math.sqrt(2)
        return (np.abs(dx) <= h) & (np.abs(dy) <= h)
    return _inside_polygon(dx, dy, _polygon(kind, radius))


def draw_shape(canvas: np.ndarray, kind: ShapeKind, center: tuple[int, int], radius: float,
               shade: float, cell: float | None = None) -> np.ndarray:
    """Fill ``kind`` at ``center`` in place and return the canvas."""
    if cell is not None and radius > cell / 2:
        raise ValueError(f"radius {radius:.2f} does not fit in a cell of width {cell:.2f}")
    if radius <= 0:
        raise ValueError("radius must be positive")
    mask = shape_mask(kind, radius)
    R = mask.shape[0] // 2
    r0, c0 = center[0] - R, center[1] - R
    H, W = canvas.shape
    # clip the patch to the canvas
    pr0, pc0 = max(0, -r0), max(0, -c0)
    pr1 = mask.shape[0] - max(0, r0 + mask.shape[0] - H)
    pc1 = mask.shape[1] - max(0, c0 + mask.shape[1] - W)
    view = canvas[r0 + pr0 : r0 + pr1, c0 + pc0 : c0 + pc1]
    view[mask[pr0:pr1, pc0:pc1]] = shade
    return canvas


def render(fv: FeatureVector, cfg: RenderConfig) -> np.ndarray:
    canvas = np.full((cfg.resolution, cfg.resolution), cfg.background, dtype=np.float64)
    radius = cfg.size_grid[fv.size_idx]
    shade = cfg.shade_grid[fv.shade_idx]
    for center in layout_positions(fv.count, fv.arrangement, cfg):
        draw_shape(canvas, fv.shape_kind, center, radius, shade, cell=cfg.cell)
    return canvas


def render_problem(problem: ProblemFeatures, cfg: RenderConfig) -> tuple[np.ndarray, np.ndarray]:
    """Render to arrays of shape (5, res, res) and (4, res, res)."""
    cfg = cfg.for_rule(problem.condition.predictive, problem.condition.rule.kind)
    seq = np.stack([render(fv, cfg) for fv in problem.sequence])
    choices = np.stack([render(fv, cfg) for fv in problem.choices])
    return seq, choices


def write_pgm(image: np.ndarray, path: str | Path) -> Path:
    """Write an 8-bit binary (P5) PGM."""
    path = Path(path)
    data = np.clip(np.rint(image * 255), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
    return path


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    # exactly one whitespace byte separates the header from the raster
    data = np.frombuffer(raw[pos + 1 : pos + 1 + w * h], dtype=np.uint8).reshape(h, w)
    return data.astype(np.float64) / maxval
