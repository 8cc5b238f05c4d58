"""Glue between parsed recordings, density rendering, and batched training."""
import numpy as np

from .density import SceneGeometry, render_sequence
from .training import WindowBatcher


def scene_geometry(rec, density_cfg):
    return SceneGeometry.from_recording(
        rec, map_size=(density_cfg.map_size, density_cfg.map_size),
        margin=density_cfg.margin,
    )


def render_window_maps(rec, samples, geometry, sigma):
    """Density-map sequences for each sample's observation window.

    Windows sharing (scene, t0) reuse one rendered stack.
    """
    cache = {}
    out = []
    for s in samples:
        key = (s.scene_id, s.t0)
        if key not in cache:
            cache[key] = render_sequence(rec, s.obs_frames, geometry, sigma)
        out.append(cache[key])
    return out


def build_batcher(recs_by_scene, samples, model, density_cfg, geometries=None):
    """Assemble a WindowBatcher with per-scene geometry for maps and paths."""
    from .relation import agent_region_path

    if not samples:
        return None
    if geometries is None:
        geometries = {
            sid: scene_geometry(rec, density_cfg) for sid, rec in recs_by_scene.items()
        }
    if model.cfg.no_relation:
        return WindowBatcher(samples)
    render_cache = {}
    maps, paths = [], []
    for s in samples:
        geom = geometries[s.scene_id]
        key = (s.scene_id, s.t0)
        if key not in render_cache:
            render_cache[key] = render_sequence(
                recs_by_scene[s.scene_id], s.obs_frames, geom, density_cfg.sigma
            )
        maps.append(render_cache[key].M)
        grid = model.grid_shape(geom.map_size)
        paths.append(agent_region_path(s.X[:, :2], geom, grid).cells)
    return WindowBatcher(samples, maps=np.stack(maps), paths=np.stack(paths))
