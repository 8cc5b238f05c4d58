"""Full predictor assembling relation, history/future encoders, multi-goal
CVAE, and the recurrent future decoder.

Positions are decoded residually: the network works in coordinates relative
to the last observed position and outputs are shifted back to world frame.
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .goals import (GoalDecoder, GoalSet, LatentDistribution, LatentNet,
                    SequenceEncoder)
from .relation import (DensityAutoencoder, RegionPath, RelationExtractor,
                       RelationVector, TemporalEncoder, agent_region_path)


@dataclass
class ModelConfig:
    ae_channels: tuple = (16, 32, 32)
    c_h: int = 64
    c_r: int = 64
    c_enc: int = 64
    d_z: int = 32
    mlp_hidden: int = 64
    dec_hidden: int = 64
    no_relation: bool = False
    no_goal: bool = False


@dataclass
class PredictionSet:
    trajectories: torch.Tensor  # [K, T, 2]
    goals: GoalSet
    relation: RelationVector


class FutureDecoder(nn.Module):
    """GRU unrolled T steps, conditioned on [R_st, goal, h_X] at every step
    and fed its previously emitted position (autoregressive)."""

    def __init__(self, cond_dim, hidden=64):
        super().__init__()
        self.hidden = hidden
        self.init_proj = nn.Linear(cond_dim, hidden)
        self.cell = nn.GRUCell(2 + cond_dim, hidden)
        self.head = nn.Linear(hidden, 2)

    def forward(self, cond, horizon):
        # cond: [N, cond_dim]; returns positions relative to last observation
        h = torch.tanh(self.init_proj(cond))
        pos = torch.zeros(cond.shape[0], 2, dtype=cond.dtype, device=cond.device)
        steps = []
        for _ in range(horizon):
            h = self.cell(torch.cat([pos, cond], dim=-1), h)
            pos = self.head(h)
            steps.append(pos)
        return torch.stack(steps, dim=1)


class TrajectoryPredictor(nn.Module):
    def __init__(self, cfg: ModelConfig = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        self.autoencoder = DensityAutoencoder(cfg.ae_channels)
        self.temporal_encoder = TemporalEncoder(self.autoencoder.latent_channels, cfg.c_h)
        self.relation_extractor = RelationExtractor(cfg.c_h, cfg.c_r)
        self.history_encoder = SequenceEncoder(6, cfg.c_enc)
        self.future_encoder = SequenceEncoder(2, cfg.c_enc)
        self.posterior_net = LatentNet(2 * cfg.c_enc, cfg.d_z, cfg.mlp_hidden)
        self.prior_net = LatentNet(cfg.c_enc, cfg.d_z, cfg.mlp_hidden)
        self.goal_decoder = GoalDecoder(cfg.d_z, cfg.c_enc, cfg.mlp_hidden)
        cond_dim = cfg.c_r + 2 + cfg.c_enc
        self.future_decoder = FutureDecoder(cond_dim, cfg.dec_hidden)

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def grid_shape(self, map_size):
        s = self.autoencoder.stride
        return (map_size[0] // s, map_size[1] // s)

    def relation_batch(self, maps, paths):
        """maps: [B, tau, 1, H, W], paths: [B, tau, 2] long -> R [B, c_r]."""
        B, tau = maps.shape[:2]
        f = self.autoencoder.encode(maps.reshape(B * tau, *maps.shape[2:]))
        c, h, w = f.shape[1:]
        f = f.reshape(B, tau, c, h, w)
        seq = f.permute(0, 3, 4, 1, 2).reshape(B * h * w, tau, c)
        out, _ = self.temporal_encoder.lstm(seq)  # [B*h*w, tau, c_h]
        h_st = out.reshape(B, h * w, tau, -1).permute(0, 2, 1, 3)  # [B, tau, h*w, c_h]
        flat_cells = (paths[:, :, 0] * w + paths[:, :, 1]).unsqueeze(-1)  # [B, tau, 1]
        gathered = torch.gather(
            h_st, 2, flat_cells.unsqueeze(-1).expand(-1, -1, -1, h_st.shape[-1])
        ).squeeze(2)  # [B, tau, c_h]
        _, (h_n, _) = self.relation_extractor.lstm(gathered)
        return h_n[0]

    def forward_batch(self, X, Y, maps, paths, last_obs, K, mode, generator=None):
        """Core batched forward pass.

        X: [B, tau, 6]; Y: [B, T, 2] or None (required for mode='train' with
        the goal module on); maps/paths may be None when no_relation is set.
        mode 'train' samples latents from the posterior, 'infer' from the prior.
        """
        cfg = self.cfg
        B = X.shape[0]
        dtype = self.dtype
        X = torch.as_tensor(X, dtype=dtype)
        last_obs = torch.as_tensor(last_obs, dtype=dtype)
        feats = torch.cat([X[..., :2] - last_obs[:, None, :], X[..., 2:]], dim=-1)
        h_X = self.history_encoder(feats)

        if cfg.no_relation:
            R = torch.zeros(B, cfg.c_r, dtype=dtype)
        else:
            maps = torch.as_tensor(maps, dtype=dtype)
            paths = torch.as_tensor(paths, dtype=torch.long)
            R = self.relation_batch(maps, paths)

        Zq = Zp = None
        if cfg.no_goal:
            K = 1
            z = torch.zeros(B, 1, cfg.d_z, dtype=dtype)
            goals_rel = torch.zeros(B, 1, 2, dtype=dtype)
        else:
            mean_p, logv_p = self.prior_net(h_X)
            Zp = LatentDistribution(mean=mean_p, log_var=logv_p)
            if mode == "train":
                if Y is None:
                    raise ValueError("training forward requires the future trajectory Y")
                Y_t = torch.as_tensor(Y, dtype=dtype)
                h_Y = self.future_encoder(Y_t - last_obs[:, None, :])
                mean_q, logv_q = self.posterior_net(torch.cat([h_X, h_Y], dim=-1))
                Zq = LatentDistribution(mean=mean_q, log_var=logv_q)
                dist = Zq
            else:
                dist = Zp
            eps = torch.randn(B, K, cfg.d_z, generator=generator, dtype=dtype)
            z = dist.mean[:, None] + torch.exp(dist.log_var / 2)[:, None] * eps
            goals_rel = self.goal_decoder(
                torch.cat([z, h_X[:, None].expand(-1, K, -1)], dim=-1)
            )

        cond = torch.cat(
            [R[:, None].expand(-1, K, -1), goals_rel, h_X[:, None].expand(-1, K, -1)],
            dim=-1,
        )
        T = Y.shape[1] if Y is not None else self._horizon
        traj_rel = self.future_decoder(cond.reshape(B * K, -1), T)
        traj = traj_rel.reshape(B, K, T, 2) + last_obs[:, None, None, :]
        goals = goals_rel + last_obs[:, None, :]
        return {
            "trajectories": traj,
            "goals": goals,
            "latents": z,
            "relation": R,
            "Zq": Zq,
            "Zp": Zp,
        }

    _horizon = 12  # default prediction horizon when Y is absent


def _sample_inputs(model, sample, maps):
    X = np.asarray(sample.X, dtype=np.float64)[None]
    last_obs = X[:, -1, :2]
    paths = None
    map_stack = None
    if not model.cfg.no_relation:
        if maps is None:
            raise ValueError("density maps required unless no_relation is set")
        map_stack = maps.M[None]
        path = agent_region_path(
            sample.X[:, :2], maps.geometry, model.grid_shape(maps.geometry.map_size)
        )
        paths = path.cells[None]
    return X, map_stack, paths, last_obs


def _to_prediction_set(out):
    return PredictionSet(
        trajectories=out["trajectories"][0],
        goals=GoalSet(goals=out["goals"][0], latents=out["latents"][0]),
        relation=RelationVector(R_st=out["relation"][0]),
    )


def forward_train(sample, maps, model, K=20, generator=None):
    """Single-sample training pass; returns (PredictionSet, Z_q, Z_p)."""
    if sample.Y is None:
        raise ValueError("training forward requires sample.Y")
    X, map_stack, paths, last_obs = _sample_inputs(model, sample, maps)
    out = model.forward_batch(
        X, np.asarray(sample.Y)[None], map_stack, paths, last_obs, K, "train", generator
    )
    return _to_prediction_set(out), out["Zq"], out["Zp"]


def forward_infer(sample, maps, model, K=20, horizon=12, generator=None):
    """Single-sample inference pass; never reads sample.Y."""
    X, map_stack, paths, last_obs = _sample_inputs(model, sample, maps)
    model._horizon = horizon
    out = model.forward_batch(X, None, map_stack, paths, last_obs, K, "infer", generator)
    return _to_prediction_set(out)


def decode_future(R_st, goal, h_X, dec, horizon=12, last_obs=None):
    """Decode one future trajectory from a relation vector, goal, and h_X."""
    dtype = next(dec.parameters()).dtype
    R_st = torch.as_tensor(R_st, dtype=dtype)
    goal = torch.as_tensor(goal, dtype=dtype)
    h_X = torch.as_tensor(h_X, dtype=dtype)
    if last_obs is None:
        last_obs = torch.zeros(2, dtype=dtype)
    last_obs = torch.as_tensor(last_obs, dtype=dtype)
    cond = torch.cat([R_st, goal - last_obs, h_X]).unsqueeze(0)
    return dec(cond, horizon)[0] + last_obs


def write_dump(records, path):
    """Serialize per-sample predictions as JSON lines.

    Record: scene_id, agent_id, t0, predictions [K, T, 2], ground_truth [T, 2].
    """
    with open(path, "w") as f:
        for rec in records:
            row = dict(rec)
            row["predictions"] = np.asarray(rec["predictions"]).tolist()
            row["ground_truth"] = np.asarray(rec["ground_truth"]).tolist()
            if "samples" in rec and rec["samples"] is not None:
                row["samples"] = np.asarray(rec["samples"]).tolist()
            f.write(json.dumps(row) + "\n")


def read_dump(path):
    records = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            rec["predictions"] = np.asarray(rec["predictions"], dtype=np.float64)
            rec["ground_truth"] = np.asarray(rec["ground_truth"], dtype=np.float64)
            if "samples" in rec:
                rec["samples"] = np.asarray(rec["samples"], dtype=np.float64)
            records.append(rec)
    return records
