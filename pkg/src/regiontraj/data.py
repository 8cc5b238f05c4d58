"""Trajectory dataset parsing, kinematics, windowing, splits and augmentation.

Supports the ETH-UCY text format (frame_id, agent_id, x, y in meters) and the
SDD annotation format (bounding boxes in pixels). Sequences are windowed on
the annotation cadence (every 10 raw frames for ETH-UCY at 2.5 FPS, so
dt = 0.4 s between consecutive observations).
"""
import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError


@dataclass
class AgentTrack:
    agent_id: int
    frames: np.ndarray  # [n] int, strictly increasing
    positions: np.ndarray  # [n, 2] float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.frames.shape[0] != self.positions.shape[0]:
            raise DataError(
                f"agent {self.agent_id}: {self.frames.shape[0]} frames vs "
                f"{self.positions.shape[0]} positions"
            )
        if self.frames.shape[0] > 1 and not np.all(np.diff(self.frames) > 0):
            raise DataError(f"agent {self.agent_id}: frames not strictly increasing")


@dataclass
class SceneRecording:
    scene_id: str
    frame_rate: float
    bounds: tuple  # (min_xy, max_xy) world envelope of all annotations
    tracks: list

    def positions_at(self, frame_id):
        """All agent positions annotated at a raw frame id, as [n, 2]."""
        pts = [
            t.positions[np.searchsorted(t.frames, frame_id)]
            for t in self.tracks
            if np.searchsorted(t.frames, frame_id) < len(t.frames)
            and t.frames[np.searchsorted(t.frames, frame_id)] == frame_id
        ]
        if not pts:
            return np.zeros((0, 2))
        return np.stack(pts)

    def annotation_step(self):
        """Most common positive frame-id delta between consecutive annotations."""
        diffs = Counter()
        for t in self.tracks:
            if len(t.frames) > 1:
                diffs.update(np.diff(t.frames).tolist())
        if not diffs:
            return 1
        return int(diffs.most_common(1)[0][0])


@dataclass
class SequenceSample:
    scene_id: str
    agent_id: int
    t0: int  # first observed raw frame id
    X: np.ndarray  # [tau, 6] pos, vel, acc
    Y: np.ndarray  # [T, 2] future positions; Y[-1] is the goal
    neighbors: list = field(default_factory=list)  # (agent_id, [tau, 2] positions)
    obs_frames: np.ndarray = None  # [tau] raw frame ids of the observation window


@dataclass
class DatasetSplit:
    train_scenes: list
    val_scenes: list
    test_scenes: list


def _bounds(tracks):
    pts = np.concatenate([t.positions for t in tracks]) if tracks else np.zeros((1, 2))
    return pts.min(axis=0), pts.max(axis=0)


def parse_ethucy_file(path, scene_id=None, frame_rate=2.5):
    path = Path(path)
    per_agent = {}
    seen = set()
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
            try:
                frame = int(float(fields[0]))
                agent = int(float(fields[1]))
                x, y = float(fields[2]), float(fields[3])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric field")
            if (frame, agent) in seen:
                raise DataError(f"{path}:{lineno}: duplicate entry for frame {frame}, agent {agent}")
            seen.add((frame, agent))
            per_agent.setdefault(agent, []).append((frame, x, y))
    tracks = []
    for agent in sorted(per_agent):
        rows = sorted(per_agent[agent])
        frames = np.array([r[0] for r in rows])
        pos = np.array([[r[1], r[2]] for r in rows])
        tracks.append(AgentTrack(agent, frames, pos))
    return SceneRecording(
        scene_id=scene_id or path.stem,
        frame_rate=frame_rate,
        bounds=_bounds(tracks),
        tracks=tracks,
    )


def parse_sdd_annotations(path, scene_id=None, frame_rate=2.5):
    """SDD format: track_id xmin ymin xmax ymax frame lost occluded generated "label"."""
    path = Path(path)
    per_agent = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            fields = line.split(maxsplit=9)
            if len(fields) != 10:
                raise ParseError(f"{path}:{lineno}: expected 10 columns, got {len(fields)}")
            try:
                track = int(fields[0])
                xmin, ymin, xmax, ymax = (float(v) for v in fields[1:5])
                frame = int(fields[5])
                lost = int(fields[6])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric field")
            if lost == 1:
                continue
            cx, cy = (xmin + xmax) / 2.0, (ymin + ymax) / 2.0
            per_agent.setdefault(track, {})[frame] = (cx, cy)
    tracks = []
    for agent in sorted(per_agent):
        frames = np.array(sorted(per_agent[agent]))
        pos = np.array([per_agent[agent][f] for f in frames])
        tracks.append(AgentTrack(agent, frames, pos))
    return SceneRecording(
        scene_id=scene_id or path.stem,
        frame_rate=frame_rate,
        bounds=_bounds(tracks),
        tracks=tracks,
    )


def estimate_kinematics(positions, dt):
    """Backward finite differences with first-defined-value replication.

    v[i] = (p[i] - p[i-1]) / dt for i >= 1, v[0] = v[1]; accelerations come
    from the second differences (defined from i >= 2) replicated backwards.
    Degenerate lengths fall back to zeros.
    """
    p = np.asarray(positions, dtype=np.float64)
    n = p.shape[0]
    if dt <= 0:
        raise ValueError("dt must be positive")
    v = np.zeros_like(p)
    a = np.zeros_like(p)
    if n >= 2:
        v[1:] = (p[1:] - p[:-1]) / dt
        v[0] = v[1]
    if n >= 3:
        a[2:] = (p[2:] - 2 * p[1:-1] + p[:-2]) / (dt * dt)
        a[0] = a[1] = a[2]
    return v, a


def build_windows(rec, tau=8, horizon=12, stride=1):
    """One SequenceSample per agent per index with tau+horizon gap-free annotations.

    Gap-free means consecutive frame ids advance by the recording's annotation
    step. Neighbors are the other agents annotated at all tau observation
    frames of the window.
    """
    if tau < 1 or horizon < 1 or stride < 1:
        raise ValueError("tau, horizon, stride must be >= 1")
    step = rec.annotation_step()
    dt = 1.0 / rec.frame_rate
    length = tau + horizon

    # frame -> {agent_id: position} lookup for neighbor extraction
    frame_index = {}
    for t in rec.tracks:
        for f, p in zip(t.frames, t.positions):
            frame_index.setdefault(int(f), {})[t.agent_id] = p

    samples = []
    for track in rec.tracks:
        frames = track.frames
        n = len(frames)
        if n < length:
            continue
        # split into maximal runs of consecutive (step-spaced) annotations
        breaks = np.flatnonzero(np.diff(frames) != step)
        run_starts = np.concatenate(([0], breaks + 1))
        run_ends = np.concatenate((breaks + 1, [n]))
        for s, e in zip(run_starts, run_ends):
            for i in range(s, e - length + 1, stride):
                obs = slice(i, i + tau)
                fut = slice(i + tau, i + length)
                obs_frames = frames[obs]
                pos = track.positions[i : i + length]
                v, a = estimate_kinematics(pos, dt)
                X = np.concatenate([pos[:tau], v[:tau], a[:tau]], axis=1)
                neighbors = []
                for other in rec.tracks:
                    if other.agent_id == track.agent_id:
                        continue
                    npos = []
                    for f in obs_frames:
                        p = frame_index.get(int(f), {}).get(other.agent_id)
                        if p is None:
                            break
                        npos.append(p)
                    if len(npos) == tau:
                        neighbors.append((other.agent_id, np.array(npos)))
                samples.append(
                    SequenceSample(
                        scene_id=rec.scene_id,
                        agent_id=track.agent_id,
                        t0=int(obs_frames[0]),
                        X=X,
                        Y=track.positions[fut].copy(),
                        neighbors=neighbors,
                        obs_frames=obs_frames.copy(),
                    )
                )
    return samples


def rotate_scene(rec, gamma_deg):
    """Rotate all positions about the world origin; bounds are recomputed."""
    g = np.deg2rad(gamma_deg)
    R = np.array([[np.cos(g), -np.sin(g)], [np.sin(g), np.cos(g)]])
    tracks = [
        AgentTrack(t.agent_id, t.frames.copy(), t.positions @ R.T) for t in rec.tracks
    ]
    return SceneRecording(rec.scene_id, rec.frame_rate, _bounds(tracks), tracks)


def leave_one_out_split(all_scenes, held_out):
    """ETH-UCY protocol: test on one scene, train on the rest.

    Validation is carved from the training windows downstream (temporal tail
    per scene, see split_validation_windows), so val_scenes stays empty here.
    """
    if held_out not in all_scenes:
        raise ConfigError(f"unknown held-out scene {held_out!r}; have {sorted(all_scenes)}")
    train = [s for s in all_scenes if s != held_out]
    return DatasetSplit(train_scenes=train, val_scenes=[], test_scenes=[held_out])


def sdd_split_from_manifest(path):
    """Manifest lines: '<split> <video_id>' with split in train/val/test."""
    buckets = {"train": [], "val": [], "test": []}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2 or parts[0] not in buckets:
                raise ParseError(f"{path}:{lineno}: expected '<train|val|test> <video_id>'")
            buckets[parts[0]].append(parts[1])
    return DatasetSplit(buckets["train"], buckets["val"], buckets["test"])


def split_validation_windows(samples, val_fraction=0.1):
    """Temporal tail split per scene: the last fraction of windows (by t0) go to val."""
    by_scene = {}
    for s in samples:
        by_scene.setdefault(s.scene_id, []).append(s)
    train, val = [], []
    for scene_samples in by_scene.values():
        scene_samples.sort(key=lambda s: (s.t0, s.agent_id))
        n_val = int(len(scene_samples) * val_fraction)
        if n_val > 0:
            train.extend(scene_samples[:-n_val])
            val.extend(scene_samples[-n_val:])
        else:
            train.extend(scene_samples)
    return train, val


def file_checksum(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def save_window_cache(samples, out_dir, tau, horizon, stride, dt, sources=()):
    """Serialize windows as npz files plus a JSON sidecar with provenance."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tau": tau,
        "horizon": horizon,
        "stride": stride,
        "dt": dt,
        "sources": {str(p): file_checksum(p) for p in sources},
        "num_samples": len(samples),
    }
    by_scene = {}
    for s in samples:
        by_scene.setdefault(s.scene_id, []).append(s)
    for scene_id, scene_samples in sorted(by_scene.items()):
        np.savez_compressed(
            out_dir / f"{scene_id}.npz",
            X=np.stack([s.X for s in scene_samples]),
            Y=np.stack([s.Y for s in scene_samples]),
            agent_id=np.array([s.agent_id for s in scene_samples]),
            t0=np.array([s.t0 for s in scene_samples]),
            obs_frames=np.stack([s.obs_frames for s in scene_samples]),
        )
    manifest["scenes"] = sorted(by_scene)
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def load_window_cache(cache_dir):
    cache_dir = Path(cache_dir)
    with open(cache_dir / "manifest.json") as f:
        manifest = json.load(f)
    samples = []
    for scene_id in manifest["scenes"]:
        data = np.load(cache_dir / f"{scene_id}.npz")
        for i in range(data["X"].shape[0]):
            samples.append(
                SequenceSample(
                    scene_id=scene_id,
                    agent_id=int(data["agent_id"][i]),
                    t0=int(data["t0"][i]),
                    X=data["X"][i],
                    Y=data["Y"][i],
                    neighbors=[],
                    obs_frames=data["obs_frames"][i],
                )
            )
    return samples, manifest
