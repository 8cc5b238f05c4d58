"""Composite best-of-K objective, KL annealing, two-stage training
(autoencoder pretrain then full model), and checkpointing."""
import csv
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .goals import LatentDistribution, kld
from .metrics import min_of_k
from .model import ModelConfig, TrajectoryPredictor
from .relation import DensityAutoencoder

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr0: float = 1e-3
    lr_gamma: float = 0.95
    epochs: int = 100
    K: int = 20
    beta_min: float = 1e-4
    beta_max: float = 1.0
    kl_full_epoch: int = 50
    grad_clip: float = 1.0
    seed: int = 0
    loss_min_mode: str = "goal_first"  # or "joint"
    val_fraction: float = 0.1


@dataclass
class LossBreakdown:
    goal: float
    traj: float
    kld: float
    total: float
    selected_k: int


def kl_weight(epoch, cfg):
    """Linear ramp from beta_min at epoch 0 to beta_max at kl_full_epoch."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    frac = min(epoch / cfg.kl_full_epoch, 1.0)
    return cfg.beta_min + (cfg.beta_max - cfg.beta_min) * frac


def best_of_k_loss(G, Y, goals, trajs, Zq, Zp, beta, min_mode="goal_first"):
    """Eq-style composite loss for one sample.

    goal_first: pick k* by goal distance to G, then score goal and the
    associated trajectory. joint: pick k* minimizing the combined goal +
    trajectory error. Ties break to the smallest index.
    """
    G = torch.as_tensor(G, dtype=torch.float64) if not torch.is_tensor(G) else G
    Y = torch.as_tensor(Y, dtype=G.dtype) if not torch.is_tensor(Y) else Y
    goals = torch.as_tensor(goals) if not torch.is_tensor(goals) else goals
    trajs = torch.as_tensor(trajs) if not torch.is_tensor(trajs) else trajs
    goal_dists = torch.linalg.norm(goals - G, dim=-1)  # [K]
    traj_mse = torch.mean((trajs - Y) ** 2, dim=(-2, -1))  # [K]
    goal_mse = torch.mean((goals - G) ** 2, dim=-1)  # [K]
    if min_mode == "goal_first":
        k = int(torch.argmin(goal_dists))
    elif min_mode == "joint":
        traj_dists = torch.mean(torch.linalg.norm(trajs - Y, dim=-1), dim=-1)
        k = int(torch.argmin(goal_dists + traj_dists))
    else:
        raise ValueError(f"unknown loss_min_mode {min_mode!r}")
    goal_term = goal_mse[k]
    traj_term = traj_mse[k]
    kl_term = kld(Zq, Zp) if Zq is not None else torch.zeros((), dtype=goal_term.dtype)
    total = goal_term + traj_term + beta * kl_term
    return LossBreakdown(
        goal=float(goal_term),
        traj=float(traj_term),
        kld=float(kl_term),
        total=float(total),
        selected_k=k,
    ), total


def _batched_loss(out, Y, beta, cfg, no_goal=False):
    """Mean over the batch of the per-sample composite loss (vectorized)."""
    trajs = out["trajectories"]  # [B, K, T, 2]
    Y = torch.as_tensor(Y, dtype=trajs.dtype)
    G = Y[:, -1]
    if no_goal:
        traj_term = torch.mean((trajs[:, 0] - Y) ** 2)
        return traj_term, {"goal": 0.0, "traj": float(traj_term.detach()), "kld": 0.0}
    goals = out["goals"]  # [B, K, 2]
    goal_dists = torch.linalg.norm(goals - G[:, None], dim=-1)  # [B, K]
    if cfg.loss_min_mode == "joint":
        traj_dists = torch.mean(
            torch.linalg.norm(trajs - Y[:, None], dim=-1), dim=-1
        )
        k = torch.argmin(goal_dists + traj_dists, dim=1)
    else:
        k = torch.argmin(goal_dists, dim=1)  # [B]
    b = torch.arange(trajs.shape[0])
    goal_term = torch.mean((goals[b, k] - G) ** 2)
    traj_term = torch.mean((trajs[b, k] - Y) ** 2)
    kl_term = kld(out["Zq"], out["Zp"]) / trajs.shape[0]
    total = goal_term + traj_term + beta * kl_term
    parts = {"goal": float(goal_term.detach()), "traj": float(traj_term.detach()),
             "kld": float(kl_term.detach())}
    return total, parts


def train_autoencoder(maps, cfg, model=None, log=None):
    """Pretrain the density autoencoder by map reconstruction (MSE).

    maps: [N, 1, H, W] array. Returns (model, per-epoch loss history).
    """
    torch.manual_seed(cfg.seed)
    if model is None:
        model = DensityAutoencoder()
    maps_t = torch.as_tensor(np.asarray(maps), dtype=next(model.parameters()).dtype)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr0)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=cfg.lr_gamma)
    history = []
    N = maps_t.shape[0]
    for epoch in range(cfg.epochs):
        perm = torch.randperm(N)
        epoch_losses = []
        for i in range(0, N, cfg.batch_size):
            batch = maps_t[perm[i : i + cfg.batch_size]]
            opt.zero_grad()
            loss = torch.mean((model(batch) - batch) ** 2)
            if not torch.isfinite(loss):
                raise RuntimeError(f"autoencoder loss diverged (NaN/Inf) at epoch {epoch}")
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))
        sched.step()
        history.append(float(np.mean(epoch_losses)))
        if log:
            log(epoch, history[-1])
    return model, history


class WindowBatcher:
    """Pre-tensorized windows plus rendered density maps for batched training."""

    def __init__(self, samples, maps=None, paths=None):
        self.samples = list(samples)
        self.X = np.stack([s.X for s in samples]).astype(np.float64)
        self.Y = np.stack([s.Y for s in samples]).astype(np.float64)
        self.last_obs = self.X[:, -1, :2]
        self.maps = None if maps is None else np.asarray(maps)
        self.paths = None if paths is None else np.asarray(paths)
        self.n = len(self.samples)

    def slice(self, idx):
        maps = self.maps[idx] if self.maps is not None else None
        paths = self.paths[idx] if self.paths is not None else None
        return self.X[idx], self.Y[idx], maps, paths, self.last_obs[idx]


def train_full(
    train_batcher,
    val_batcher,
    pretrained_ae,
    cfg,
    model_cfg=None,
    csv_path=None,
    checkpoint_path=None,
    log=None,
):
    """Train the full predictor with the autoencoder frozen.

    Returns (model, history) where history rows mirror the CSV metrics log
    (epoch, lr, beta, loss parts, validation min-ADE/FDE).
    """
    torch.manual_seed(cfg.seed)
    model = TrajectoryPredictor(model_cfg or ModelConfig())
    if pretrained_ae is not None:
        model.autoencoder.load_state_dict(pretrained_ae.state_dict())
    for p in model.autoencoder.parameters():
        p.requires_grad_(False)
    trainable = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(trainable, lr=cfg.lr0)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=cfg.lr_gamma)
    gen = torch.Generator().manual_seed(cfg.seed)
    history = []
    best_val = math.inf
    best_state = None
    for epoch in range(cfg.epochs):
        beta = kl_weight(epoch, cfg)
        perm = torch.randperm(train_batcher.n, generator=gen).numpy()
        parts_acc = {"goal": [], "traj": [], "kld": [], "total": []}
        for i in range(0, train_batcher.n, cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            X, Y, maps, paths, last_obs = train_batcher.slice(idx)
            opt.zero_grad()
            out = model.forward_batch(X, Y, maps, paths, last_obs, cfg.K, "train", gen)
            loss, parts = _batched_loss(out, Y, beta, cfg, no_goal=model.cfg.no_goal)
            if not torch.isfinite(loss):
                raise RuntimeError(f"training loss diverged (NaN/Inf) at epoch {epoch}")
            loss.backward()
            torch.nn.utils.clip_grad_norm_(trainable, cfg.grad_clip)
            opt.step()
            for kname in ("goal", "traj", "kld"):
                parts_acc[kname].append(parts[kname])
            parts_acc["total"].append(float(loss.detach()))
        lr_now = opt.param_groups[0]["lr"]
        sched.step()
        val_made, val_mfde = evaluate_min_ade(model, val_batcher, cfg.K, seed=cfg.seed)
        row = {
            "epoch": epoch,
            "lr": lr_now,
            "beta": beta,
            "loss_total": float(np.mean(parts_acc["total"])),
            "loss_goal": float(np.mean(parts_acc["goal"])),
            "loss_traj": float(np.mean(parts_acc["traj"])),
            "loss_kld": float(np.mean(parts_acc["kld"])),
            "val_minADE": val_made,
            "val_minFDE": val_mfde,
        }
        history.append(row)
        if log:
            log(row)
        if val_made < best_val:
            best_val = val_made
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
    if best_state is not None:
        model.load_state_dict(best_state)
    if csv_path is not None:
        write_metrics_csv(history, csv_path)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, cfg, epoch=cfg.epochs - 1)
    return model, history


@torch.no_grad()
def evaluate_min_ade(model, batcher, K, seed=0, select="min_ade"):
    """Best-of-K displacement errors of a batcher under inference sampling."""
    if batcher is None or batcher.n == 0:
        return float("nan"), float("nan")
    gen = torch.Generator().manual_seed(seed)
    X, Y, maps, paths, last_obs = batcher.slice(np.arange(batcher.n))
    model._horizon = Y.shape[1]
    out = model.forward_batch(X, None, maps, paths, last_obs, K, "infer", gen)
    trajs = out["trajectories"].numpy()
    mades, mfdes = [], []
    for b in range(batcher.n):
        if select == "min_fde_then_ade":
            a, f, _ = min_of_k(trajs[b], Y[b], mode="min_fde_then_ade")
        else:
            a, _ = min_of_k(trajs[b], Y[b], mode="min_ade")
            f = min(float(np.linalg.norm(p[-1] - Y[b][-1])) for p in trajs[b])
        mades.append(a)
        mfdes.append(f)
    return float(np.mean(mades)), float(np.mean(mfdes))


CSV_COLUMNS = [
    "epoch", "lr", "beta", "loss_total", "loss_goal", "loss_traj", "loss_kld",
    "val_minADE", "val_minFDE",
]


def write_metrics_csv(history, path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in CSV_COLUMNS})


def save_checkpoint(path, model, train_cfg, epoch=0, extra=None):
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "arch": asdict(model.cfg) if isinstance(model, TrajectoryPredictor) else {
            "ae_channels": list(model.channels)
        },
        "kind": "predictor" if isinstance(model, TrajectoryPredictor) else "autoencoder",
        "state": model.state_dict(),
        "train_config": asdict(train_cfg) if train_cfg is not None else None,
        "epoch": epoch,
        "torch_rng": torch.get_rng_state(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, weights_only=False)
    except Exception as e:
        raise ValueError(f"cannot read checkpoint {path}: {e}") from e
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    if payload["kind"] == "autoencoder":
        model = DensityAutoencoder(tuple(payload["arch"]["ae_channels"]))
    else:
        arch = dict(payload["arch"])
        arch["ae_channels"] = tuple(arch["ae_channels"])
        model = TrajectoryPredictor(ModelConfig(**arch))
    expected = model.state_dict()
    for name, tensor in payload["state"].items():
        if name not in expected:
            raise ValueError(f"checkpoint has unexpected tensor {name!r}")
        if tuple(expected[name].shape) != tuple(tensor.shape):
            raise ValueError(
                f"shape mismatch for {name!r}: checkpoint {tuple(tensor.shape)} "
                f"vs model {tuple(expected[name].shape)}"
            )
    model.load_state_dict(payload["state"])
    return model, payload
