"""Frame-wise crowd density maps rendered with unit-mass Gaussian kernels.

Each agent annotated in a frame contributes an isotropic 2D Gaussian (mass 1,
truncated at 4 sigma) placed at its continuous map coordinates, so the frame
integral counts the agents rendered away from the borders.
"""
from dataclasses import dataclass

import numpy as np

from ._kernels import splat_gaussians
from .errors import ConfigError

TRUNCATION_SIGMAS = 4.0


@dataclass
class SceneGeometry:
    world_min: np.ndarray
    world_max: np.ndarray
    map_size: tuple = (80, 80)  # (H, W)
    margin: float = 0.0

    def __post_init__(self):
        self.world_min = np.asarray(self.world_min, dtype=np.float64) - self.margin
        self.world_max = np.asarray(self.world_max, dtype=np.float64) + self.margin
        H, W = self.map_size
        if H < 8 or W < 8:
            raise ConfigError(f"map_size {self.map_size} too small (min 8x8)")
        if not np.all(self.world_max > self.world_min):
            raise ConfigError("degenerate geometry: world_max must exceed world_min")

    @classmethod
    def from_recording(cls, rec, map_size=(80, 80), margin=1.0):
        lo, hi = rec.bounds
        return cls(lo, hi, map_size=map_size, margin=margin)


@dataclass
class DensityMapSequence:
    M: np.ndarray  # [tau, 1, H, W], nonnegative
    geometry: SceneGeometry
    frame_ids: np.ndarray


def world_to_map(p, geometry):
    """Affine world -> continuous (row, col); also reports bounds containment."""
    p = np.asarray(p, dtype=np.float64)
    H, W = geometry.map_size
    extent = geometry.world_max - geometry.world_min
    col = (p[..., 0] - geometry.world_min[0]) / extent[0] * (W - 1)
    row = (p[..., 1] - geometry.world_min[1]) / extent[1] * (H - 1)
    in_bounds = (
        (p[..., 0] >= geometry.world_min[0])
        & (p[..., 0] <= geometry.world_max[0])
        & (p[..., 1] >= geometry.world_min[1])
        & (p[..., 1] <= geometry.world_max[1])
    )
    return row, col, in_bounds


def render_density_frame(positions, geometry, sigma_map=2.0):
    if sigma_map <= 0:
        raise ConfigError("sigma_map must be positive")
    H, W = geometry.map_size
    out = np.zeros((H, W), dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    if positions.shape[0] == 0:
        return out
    row, col, ok = world_to_map(positions, geometry)
    if not np.any(ok):
        return out
    splat_gaussians(
        out,
        np.ascontiguousarray(row[ok]),
        np.ascontiguousarray(col[ok]),
        float(sigma_map),
        float(TRUNCATION_SIGMAS * sigma_map),
    )
    return out


def render_sequence(rec, frame_ids, geometry, sigma_map=2.0):
    """Stack density frames for the observation window, including ALL agents
    annotated at each frame (not only one sample's target agent)."""
    frames = []
    for f in frame_ids:
        frames.append(render_density_frame(rec.positions_at(int(f)), geometry, sigma_map))
    M = np.stack(frames)[:, None, :, :]
    return DensityMapSequence(M=M, geometry=geometry, frame_ids=np.asarray(frame_ids))
