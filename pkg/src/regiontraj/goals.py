"""CVAE multi-goal estimation.

History and future GRU encoders produce h_X and h_Y; the posterior network
maps (h_X, h_Y) and the prior network maps h_X alone to diagonal-Gaussian
latent parameters. Goals are decoded from K reparameterized latent samples
concatenated with h_X. Training samples latents from the posterior, inference
from the prior; the inference path never reads Y.
"""
from dataclasses import dataclass

import torch
import torch.nn as nn

LOG_VAR_CLAMP = 10.0


@dataclass
class LatentDistribution:
    mean: torch.Tensor  # [d_z]
    log_var: torch.Tensor  # [d_z], clamped to +-LOG_VAR_CLAMP


@dataclass
class GoalSet:
    goals: torch.Tensor  # [K, 2]
    latents: torch.Tensor  # [K, d_z]


class SequenceEncoder(nn.Module):
    """GRU returning the final hidden state of the sequence."""

    def __init__(self, input_dim, hidden=64):
        super().__init__()
        self.hidden = hidden
        self.gru = nn.GRU(input_dim, hidden, batch_first=True)

    def forward(self, seq):
        # seq: [B, steps, input_dim]
        if torch.isnan(seq).any():
            raise ValueError("NaN in encoder input")
        _, h_n = self.gru(seq)
        return h_n[0]


class LatentNet(nn.Module):
    """2-layer MLP emitting (mean, log_var) of the latent distribution."""

    def __init__(self, input_dim, d_z=32, hidden=64):
        super().__init__()
        self.d_z = d_z
        self.net = nn.Sequential(
            nn.Linear(input_dim, hidden), nn.ReLU(), nn.Linear(hidden, 2 * d_z)
        )

    def forward(self, x):
        out = self.net(x)
        mean, log_var = out[..., : self.d_z], out[..., self.d_z :]
        return mean, torch.clamp(log_var, -LOG_VAR_CLAMP, LOG_VAR_CLAMP)


class GoalDecoder(nn.Module):
    """2-layer MLP from [z, h_X] to a 2D endpoint."""

    def __init__(self, d_z=32, c_enc=64, hidden=64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_z + c_enc, hidden), nn.ReLU(), nn.Linear(hidden, 2)
        )

    def forward(self, x):
        return self.net(x)


def encode_history(X, enc):
    """X: [tau, 6] -> h_X [c_enc]."""
    X = torch.as_tensor(X, dtype=next(enc.parameters()).dtype)
    return enc(X.unsqueeze(0))[0]


def encode_future(Y, enc):
    """Y: [T, 2] -> h_Y [c_enc]."""
    Y = torch.as_tensor(Y, dtype=next(enc.parameters()).dtype)
    return enc(Y.unsqueeze(0))[0]


def joint_posterior(h_X, h_Y, q_net):
    mean, log_var = q_net(torch.cat([h_X, h_Y], dim=-1))
    return LatentDistribution(mean=mean, log_var=log_var)


def prior(h_X, p_net):
    mean, log_var = p_net(h_X)
    return LatentDistribution(mean=mean, log_var=log_var)


def sample_latent(dist, K, generator=None):
    """Reparameterized draws: z_k = mean + exp(log_var / 2) * eps_k."""
    if K < 1:
        raise ValueError("K must be >= 1")
    eps = torch.randn(
        (K,) + tuple(dist.mean.shape), generator=generator, dtype=dist.mean.dtype
    )
    return dist.mean.unsqueeze(0) + torch.exp(dist.log_var / 2).unsqueeze(0) * eps


def decode_goals(Z, h_X, dec):
    K = Z.shape[0]
    goals = dec(torch.cat([Z, h_X.unsqueeze(0).expand(K, -1)], dim=-1))
    return GoalSet(goals=goals, latents=Z)


def kld(q, p):
    """Closed-form KL(q || p) for diagonal Gaussians; nonnegative."""
    if q.mean.shape != p.mean.shape:
        raise ValueError("latent dimension mismatch")
    var_q = torch.exp(q.log_var)
    var_p = torch.exp(p.log_var)
    return 0.5 * torch.sum(
        (var_q + (q.mean - p.mean) ** 2) / var_p - 1.0 + p.log_var - q.log_var
    )
