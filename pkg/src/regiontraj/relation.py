"""Two-stage region-based relation learning.

Stage 1: a convolutional autoencoder reconstructs crowd density maps; the
spatial cells of its latent feature maps summarize the joint agent state of
the corresponding scene patch. Stage 2: a shared recurrent cell encodes each
latent cell's time series, an agent-specific mask gathers the hidden state of
the cell the agent occupied at each step, and a second recurrent cell relates
the gathered sequence into one relation vector per agent.
"""
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .density import world_to_map


@dataclass
class LatentGridSequence:
    f_s: torch.Tensor  # [tau, c_f, h, w]
    grid_shape: tuple
    channels: int


@dataclass
class IntraRegionalDynamics:
    h_st: torch.Tensor  # [tau, h, w, c_h]


@dataclass
class RegionPath:
    cells: np.ndarray  # [tau, 2] (row, col) latent-grid indices


@dataclass
class RelationVector:
    R_st: torch.Tensor  # [c_r]


class DensityAutoencoder(nn.Module):
    """Strided conv encoder with a mirrored nearest-upsample decoder.

    Total spatial stride is 2**len(channels); input maps must be divisible by
    it. The last entry of `channels` is the latent channel count c_f.
    """

    def __init__(self, channels=(16, 32, 32)):
        super().__init__()
        self.channels = tuple(channels)
        enc = []
        c_in = 1
        for c in channels:
            enc += [nn.Conv2d(c_in, c, 3, stride=2, padding=1), nn.ReLU()]
            c_in = c
        self.encoder = nn.Sequential(*enc[:-1])  # no ReLU on the latent
        dec = []
        rev = list(channels[::-1]) + [1]
        for i in range(len(channels)):
            dec += [nn.Upsample(scale_factor=2, mode="nearest"),
                    nn.Conv2d(rev[i], rev[i + 1], 3, padding=1)]
            if i < len(channels) - 1:
                dec.append(nn.ReLU())
        self.decoder = nn.Sequential(*dec)

    @property
    def stride(self):
        return 2 ** len(self.channels)

    @property
    def latent_channels(self):
        return self.channels[-1]

    def encode(self, x):
        return self.encoder(x)

    def decode(self, z):
        return self.decoder(z)

    def forward(self, x):
        return self.decode(self.encode(x))


class TemporalEncoder(nn.Module):
    """One LSTM shared across all latent-grid cells."""

    def __init__(self, c_f, c_h=64):
        super().__init__()
        self.c_h = c_h
        self.lstm = nn.LSTM(c_f, c_h, batch_first=True)


class RelationExtractor(nn.Module):
    """LSTM over the masked per-agent cell sequence; final hidden state is R_st."""

    def __init__(self, c_h=64, c_r=64):
        super().__init__()
        self.c_r = c_r
        self.lstm = nn.LSTM(c_h, c_r, batch_first=True)


def encode_maps(M, ae):
    """Encode a [tau, 1, H, W] density stack into the latent grid sequence."""
    M = torch.as_tensor(M, dtype=next(ae.parameters()).dtype)
    if M.dim() != 4 or M.shape[1] != 1:
        raise ValueError(f"expected [tau, 1, H, W] maps, got {tuple(M.shape)}")
    if M.shape[2] % ae.stride or M.shape[3] % ae.stride:
        raise ValueError(
            f"map size {tuple(M.shape[2:])} not divisible by encoder stride {ae.stride}"
        )
    f_s = ae.encode(M)
    return LatentGridSequence(
        f_s=f_s, grid_shape=tuple(f_s.shape[2:]), channels=f_s.shape[1]
    )


def decode_maps(latent, ae):
    if latent.f_s.shape[1] != ae.latent_channels:
        raise ValueError(
            f"latent has {latent.f_s.shape[1]} channels, decoder expects {ae.latent_channels}"
        )
    return ae.decode(latent.f_s)


def reconstruction_loss(M, M_hat):
    M = torch.as_tensor(M)
    M_hat = torch.as_tensor(M_hat)
    if M.shape != M_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(M.shape)} vs {tuple(M_hat.shape)}")
    return F.mse_loss(M_hat, M.to(M_hat.dtype))


def temporal_encode(latent, enc):
    """Run the shared recurrent cell over each cell's time series independently.

    Returns all tau hidden states per cell: h_st[t, r, c] depends only on
    f_s[0..t, :, r, c].
    """
    f_s = latent.f_s  # [tau, c_f, h, w]
    tau, c_f, h, w = f_s.shape
    seq = f_s.permute(2, 3, 0, 1).reshape(h * w, tau, c_f)
    out, _ = enc.lstm(seq)  # [h*w, tau, c_h]
    h_st = out.reshape(h, w, tau, enc.c_h).permute(2, 0, 1, 3)
    return IntraRegionalDynamics(h_st=h_st)


def agent_region_path(agent_positions, geometry, grid_shape):
    """Latent-grid cell occupied by the agent at each observed step.

    Positions outside the scene bounds are clamped into the grid.
    """
    h, w = grid_shape
    H, W = geometry.map_size
    row, col, _ = world_to_map(np.asarray(agent_positions), geometry)
    r = np.clip(np.floor(row / (H / h)).astype(np.int64), 0, h - 1)
    c = np.clip(np.floor(col / (W / w)).astype(np.int64), 0, w - 1)
    return RegionPath(cells=np.stack([r, c], axis=1))


def gather_path_sequence(h_st, path):
    """Pick h_st[t, path[t]] for every step t; shape [tau, c_h]."""
    cells = torch.as_tensor(path.cells, dtype=torch.long)
    tau = h_st.shape[0]
    if cells.shape[0] != tau:
        raise ValueError(f"path length {cells.shape[0]} != tau {tau}")
    if (
        cells[:, 0].min() < 0
        or cells[:, 0].max() >= h_st.shape[1]
        or cells[:, 1].min() < 0
        or cells[:, 1].max() >= h_st.shape[2]
    ):
        raise ValueError("path cell index outside the latent grid")
    t = torch.arange(tau)
    return h_st[t, cells[:, 0], cells[:, 1]]


def mask_and_relate(dynamics, path, rel):
    """Relate the agent's traversed-region dynamics into a single vector."""
    seq = gather_path_sequence(dynamics.h_st, path)  # [tau, c_h]
    _, (h_n, _) = rel.lstm(seq.unsqueeze(0))
    return RelationVector(R_st=h_n[0, 0])
