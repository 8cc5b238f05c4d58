"""Displacement metrics, KDE-based NLL, and the observation-noise robustness
harness."""
import json
from dataclasses import dataclass, field

import numpy as np

from ._kernels import kde_logpdf
from .data import SequenceSample, estimate_kinematics

NLL_LOG_DENSITY_FLOOR = -20.0
BANDWIDTH_FLOOR = 1e-6


def ade(pred, truth):
    """Mean L2 distance over the prediction horizon."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return float(np.mean(np.linalg.norm(pred - truth, axis=-1)))


def fde(pred, truth):
    """L2 distance at the final predicted step only."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return float(np.linalg.norm(pred[-1] - truth[-1]))


def min_of_k(preds, truth, mode="min_ade"):
    """Best-of-K selection over candidate trajectories.

    mode 'min_ade': (min_k ade, argmin); ties break to the smallest index.
    mode 'min_fde_then_ade': pick k* minimizing fde, report that candidate's
    (ade, fde, k*) -- the goal-conditioned evaluation protocol.
    """
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 3:
        raise ValueError("expected [K, T, 2] candidates")
    if mode == "min_ade":
        vals = [ade(p, truth) for p in preds]
        k = int(np.argmin(vals))
        return vals[k], k
    if mode == "min_fde_then_ade":
        fdes = [fde(p, truth) for p in preds]
        k = int(np.argmin(fdes))
        return ade(preds[k], truth), fdes[k], k
    raise ValueError(f"unknown mode {mode!r}")


def kde_nll(samples, truth, bandwidth=None):
    """Mean over timesteps of -log density of the ground truth under a
    per-timestep Gaussian KDE of the samples.

    Bandwidth per dimension follows Scott's rule (S**(-1/6) * std) with a
    floor of BANDWIDTH_FLOOR; log density is clamped at NLL_LOG_DENSITY_FLOOR.
    Pass `bandwidth` to override the rule (used by oracle tests).
    """
    samples = np.asarray(samples, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    S, T = samples.shape[0], samples.shape[1]
    if S < 2:
        raise ValueError("KDE-NLL needs at least 2 samples")
    nlls = np.empty(T)
    for t in range(T):
        sx = np.ascontiguousarray(samples[:, t, 0])
        sy = np.ascontiguousarray(samples[:, t, 1])
        if bandwidth is None:
            factor = S ** (-1.0 / 6.0)
            hx = max(float(np.std(sx)) * factor, BANDWIDTH_FLOOR)
            hy = max(float(np.std(sy)) * factor, BANDWIDTH_FLOOR)
        else:
            hx = hy = float(bandwidth)
        logp = kde_logpdf(sx, sy, hx, hy, float(truth[t, 0]), float(truth[t, 1]))
        nlls[t] = -max(logp, NLL_LOG_DENSITY_FLOOR)
    return float(np.mean(nlls))


def perturb_observations(sample, sigma, rng, dt=0.4):
    """Add i.i.d. Gaussian noise to the observed positions and re-derive
    velocities/accelerations; the future Y is untouched."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    X = np.array(sample.X, dtype=np.float64)
    tau = X.shape[0]
    noisy_pos = X[:, :2] + rng.normal(0.0, sigma, size=(tau, 2))
    v, a = estimate_kinematics(noisy_pos, dt)
    return SequenceSample(
        scene_id=sample.scene_id,
        agent_id=sample.agent_id,
        t0=sample.t0,
        X=np.concatenate([noisy_pos, v, a], axis=1),
        Y=sample.Y.copy(),
        neighbors=sample.neighbors,
        obs_frames=None if sample.obs_frames is None else sample.obs_frames.copy(),
    )


@dataclass
class MetricsReport:
    per_scene: dict
    aggregate: dict
    robustness: dict = None
    config_fingerprint: str = ""

    def to_dict(self):
        return {
            "per_scene": self.per_scene,
            "aggregate": self.aggregate,
            "robustness": self.robustness,
            "config_fingerprint": self.config_fingerprint,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as f:
                f.write(text + "\n")
        return text

    def table(self):
        cols = ["ade", "fde", "min_ade", "min_fde", "kde_nll"]
        lines = ["scene      " + "".join(f"{c:>10}" for c in cols)]
        for scene in sorted(self.per_scene):
            vals = self.per_scene[scene]
            lines.append(
                f"{scene:<11}" + "".join(f"{vals[c]:>10.4f}" for c in cols)
            )
        agg = self.aggregate
        lines.append("mean       " + "".join(f"{agg[c]:>10.4f}" for c in cols))
        if self.robustness:
            lines.append(
                "robustness: ade_increase={ade_increase:.4f} "
                "fde_increase={fde_increase:.4f}".format(**self.robustness)
            )
        return "\n".join(lines)


def evaluate(records, select="min_ade", fingerprint=""):
    """Per-scene and aggregate metrics over a prediction dump.

    Each record needs scene_id, predictions [K, T, 2], ground_truth [T, 2];
    an optional 'samples' array [S, T, 2] is used for KDE-NLL, otherwise the
    K predictions are. Aggregate is the unweighted mean over scenes.
    """
    if not records:
        raise ValueError("empty prediction dump")
    per_scene_acc = {}
    for rec in records:
        preds = np.asarray(rec["predictions"], dtype=np.float64)
        truth = np.asarray(rec["ground_truth"], dtype=np.float64)
        entry = per_scene_acc.setdefault(
            rec["scene_id"], {k: [] for k in ("ade", "fde", "min_ade", "min_fde", "kde_nll")}
        )
        entry["ade"].append(float(np.mean([ade(p, truth) for p in preds])))
        entry["fde"].append(float(np.mean([fde(p, truth) for p in preds])))
        if select == "min_fde_then_ade":
            a, f, _ = min_of_k(preds, truth, mode="min_fde_then_ade")
        else:
            a, _ = min_of_k(preds, truth, mode="min_ade")
            f = min(fde(p, truth) for p in preds)
        entry["min_ade"].append(a)
        entry["min_fde"].append(f)
        kde_samples = rec.get("samples")
        if kde_samples is None:
            kde_samples = preds
        if kde_samples.shape[0] >= 2:
            entry["kde_nll"].append(kde_nll(kde_samples, truth))
        else:
            entry["kde_nll"].append(float("nan"))
    per_scene = {
        scene: {k: float(np.mean(v)) for k, v in vals.items()}
        for scene, vals in per_scene_acc.items()
    }
    aggregate = {
        k: float(np.mean([per_scene[s][k] for s in per_scene]))
        for k in ("ade", "fde", "min_ade", "min_fde", "kde_nll")
    }
    return MetricsReport(per_scene=per_scene, aggregate=aggregate,
                         config_fingerprint=fingerprint)
