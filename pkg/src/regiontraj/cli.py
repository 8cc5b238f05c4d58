"""Command line entry points: prepare-data, pretrain-ae, train, evaluate,
perturb-eval."""
import argparse
import json
import sys
import time
import traceback
from pathlib import Path

import numpy as np
import torch

from . import pipeline
from .config import load_config, save_config
from .data import (build_windows, leave_one_out_split, load_window_cache,
                   parse_ethucy_file, parse_sdd_annotations, rotate_scene,
                   save_window_cache, sdd_split_from_manifest,
                   split_validation_windows)
from .errors import ConfigError, DataError, ParseError
from .metrics import evaluate as evaluate_records
from .metrics import kde_nll, min_of_k, perturb_observations
from .model import ModelConfig, TrajectoryPredictor, read_dump, write_dump
from .training import (evaluate_min_ade, load_checkpoint, save_checkpoint,
                       train_autoencoder, train_full, write_metrics_csv)


def _scene_path(cfg, scene):
    return Path(cfg.data.root) / f"{scene}.txt"


def _load_recordings(cfg, scenes):
    recs = {}
    for scene in scenes:
        path = _scene_path(cfg, scene)
        if not path.exists():
            raise ConfigError(f"scene file not found: {path}")
        if cfg.data.dataset == "sdd":
            recs[scene] = parse_sdd_annotations(path, scene_id=scene,
                                                frame_rate=cfg.data.frame_rate)
        else:
            recs[scene] = parse_ethucy_file(path, scene_id=scene,
                                            frame_rate=cfg.data.frame_rate)
    return recs


def _split(cfg):
    if cfg.data.dataset == "sdd":
        if not cfg.data.sdd_manifest:
            raise ConfigError("sdd dataset requires data.sdd_manifest")
        return sdd_split_from_manifest(cfg.data.sdd_manifest)
    if not cfg.data.held_out:
        raise ConfigError("ethucy dataset requires data.held_out")
    return leave_one_out_split(cfg.data.scenes, cfg.data.held_out)


def _windows(cfg, rec):
    return build_windows(rec, tau=cfg.data.tau, horizon=cfg.data.horizon,
                         stride=cfg.data.stride)


def _prepare_inmemory(cfg, with_augmentation=True):
    """Recordings, window splits, and (for training) rotation-augmented copies."""
    split = _split(cfg)
    recs = _load_recordings(
        cfg, split.train_scenes + split.val_scenes + split.test_scenes
    )
    train_samples = []
    for scene in split.train_scenes:
        train_samples.extend(_windows(cfg, recs[scene]))
        if with_augmentation and cfg.data.augment_rotations:
            for gamma in range(cfg.data.rotation_step_deg, 360,
                               cfg.data.rotation_step_deg):
                rot = rotate_scene(recs[scene], gamma)
                rot.scene_id = f"{scene}|rot{gamma}"
                recs[rot.scene_id] = rot
                train_samples.extend(_windows(cfg, rot))
    if split.val_scenes:
        val_samples = []
        for scene in split.val_scenes:
            val_samples.extend(_windows(cfg, recs[scene]))
    else:
        train_samples, val_samples = split_validation_windows(
            train_samples, cfg.train.val_fraction
        )
    test_samples = []
    for scene in split.test_scenes:
        test_samples.extend(_windows(cfg, recs[scene]))
    return recs, train_samples, val_samples, test_samples


def _run_dir(cfg, args):
    if args.run_dir:
        d = Path(args.run_dir)
    else:
        d = Path(cfg.out_dir) / f"{time.strftime('%Y%m%d-%H%M%S')}-{cfg.fingerprint()}"
    d.mkdir(parents=True, exist_ok=True)
    save_config(cfg, d / "config.yaml")
    return d


def _apply_determinism(cfg):
    if cfg.deterministic:
        torch.set_num_threads(1)
    torch.manual_seed(cfg.train.seed)
    np.random.seed(cfg.train.seed)


def cmd_prepare_data(cfg, args):
    if args.scenes:
        keep = set(args.scenes.split(","))
        cfg.data.scenes = [s for s in cfg.data.scenes if s in keep]
        if cfg.data.held_out not in cfg.data.scenes:
            cfg.data.held_out = cfg.data.scenes[0] if cfg.data.scenes else ""
    recs, train_s, val_s, test_s = _prepare_inmemory(cfg)
    cache_dir = Path(cfg.cache_dir)
    sources = [
        _scene_path(cfg, s) for s in cfg.data.scenes if _scene_path(cfg, s).exists()
    ]
    manifest = save_window_cache(
        train_s + val_s + test_s, cache_dir, cfg.data.tau, cfg.data.horizon,
        cfg.data.stride, 1.0 / cfg.data.frame_rate, sources=sources,
    )
    if args.verify:
        on_disk = json.loads((cache_dir / "manifest.json").read_text())
        for src, checksum in on_disk["sources"].items():
            if manifest["sources"].get(src) != checksum:
                raise DataError(f"checksum mismatch for {src}")
    print(f"cached {manifest['num_samples']} windows "
          f"({len(train_s)} train / {len(val_s)} val / {len(test_s)} test) "
          f"in {cache_dir}")
    return 0


def cmd_pretrain_ae(cfg, args):
    _apply_determinism(cfg)
    run_dir = _run_dir(cfg, args)
    recs, train_s, _, _ = _prepare_inmemory(cfg)
    geometries = {
        sid: pipeline.scene_geometry(rec, cfg.density) for sid, rec in recs.items()
    }
    seen = set()
    frames = []
    for s in train_s:
        key = (s.scene_id, s.t0)
        if key in seen:
            continue
        seen.add(key)
        seq = pipeline.render_window_maps(
            recs[s.scene_id], [s], geometries[s.scene_id], cfg.density.sigma
        )[0]
        frames.append(seq.M)
    maps = np.concatenate(frames) if frames else np.zeros((0, 1, 80, 80))
    from .relation import DensityAutoencoder

    model = DensityAutoencoder(cfg.model.ae_channels)
    model, history = train_autoencoder(maps, cfg.train, model=model)
    save_checkpoint(run_dir / "autoencoder.pt", model, cfg.train,
                    epoch=cfg.train.epochs - 1)
    with open(run_dir / "ae_history.json", "w") as f:
        json.dump(history, f)
    print(f"pretrained autoencoder on {maps.shape[0]} frames; "
          f"loss {history[0]:.6f} -> {history[-1]:.6f}; saved to {run_dir}")
    return 0


def _build_model(cfg, ablations=()):
    mc = ModelConfig(
        ae_channels=tuple(cfg.model.ae_channels),
        c_h=cfg.model.c_h, c_r=cfg.model.c_r, c_enc=cfg.model.c_enc,
        d_z=cfg.model.d_z, mlp_hidden=cfg.model.mlp_hidden,
        dec_hidden=cfg.model.dec_hidden,
        no_relation="no_relation" in ablations or cfg.model.no_relation,
        no_goal="no_goal" in ablations or cfg.model.no_goal,
    )
    return TrajectoryPredictor(mc)


def cmd_train(cfg, args):
    _apply_determinism(cfg)
    run_dir = _run_dir(cfg, args)
    ablations = args.ablate or []
    model = _build_model(cfg, ablations)
    recs, train_s, val_s, _ = _prepare_inmemory(cfg)
    train_b = pipeline.build_batcher(recs, train_s, model, cfg.density)
    val_b = pipeline.build_batcher(recs, val_s, model, cfg.density)
    if train_b is None:
        raise DataError("no training windows produced; check data paths and tau/horizon")
    ae = None
    if not model.cfg.no_relation:
        if args.autoencoder:
            ae, _ = load_checkpoint(args.autoencoder)
        else:
            raise ConfigError(
                "training with the relation module requires --autoencoder "
                "(run pretrain-ae first)"
            )
    model, history = train_full(
        train_b, val_b, ae, cfg.train, model_cfg=model.cfg,
        csv_path=run_dir / "metrics.csv", checkpoint_path=run_dir / "model.pt",
    )
    last = history[-1]
    print(f"trained {cfg.train.epochs} epochs; "
          f"final loss {last['loss_total']:.4f}, val minADE {last['val_minADE']:.4f}; "
          f"artifacts in {run_dir}")
    return 0


def _predict_records(model, batcher, K, seed, kde_samples=0, horizon=12):
    gen = torch.Generator().manual_seed(seed)
    records = []
    with torch.no_grad():
        model._horizon = horizon
        X, Y, maps, paths, last_obs = batcher.slice(np.arange(batcher.n))
        out = model.forward_batch(X, None, maps, paths, last_obs, K, "infer", gen)
        trajs = out["trajectories"].numpy()
        samples = None
        if kde_samples and kde_samples > K and not model.cfg.no_goal:
            out_s = model.forward_batch(
                X, None, maps, paths, last_obs, kde_samples, "infer", gen
            )
            samples = out_s["trajectories"].numpy()
        for b in range(batcher.n):
            s = batcher.samples[b]
            rec = {
                "scene_id": s.scene_id.split("|")[0],
                "agent_id": s.agent_id,
                "t0": s.t0,
                "predictions": trajs[b],
                "ground_truth": Y[b],
            }
            if samples is not None:
                rec["samples"] = samples[b]
            records.append(rec)
    return records


def cmd_evaluate(cfg, args):
    _apply_determinism(cfg)
    run_dir = _run_dir(cfg, args)
    select = args.select or cfg.eval.select
    K = args.k or cfg.eval.k
    if args.dump:
        records = read_dump(args.dump)
    else:
        if not args.checkpoint:
            raise ConfigError("evaluate needs --checkpoint or --dump")
        model, _ = load_checkpoint(args.checkpoint)
        recs, _, _, test_s = _prepare_inmemory(cfg, with_augmentation=False)
        batcher = pipeline.build_batcher(recs, test_s, model, cfg.density)
        if batcher is None:
            raise DataError("no test windows produced")
        records = _predict_records(
            model, batcher, K, cfg.train.seed,
            kde_samples=cfg.eval.kde_samples, horizon=cfg.data.horizon,
        )
        write_dump(records, run_dir / "dump.jsonl")
    report = evaluate_records(records, select=select, fingerprint=cfg.fingerprint())
    report.to_json(run_dir / "report.json")
    print(report.table())
    return 0


def cmd_perturb_eval(cfg, args):
    _apply_determinism(cfg)
    run_dir = _run_dir(cfg, args)
    sigma = cfg.eval.sigma if args.sigma is None else args.sigma
    if not args.checkpoint:
        raise ConfigError("perturb-eval needs --checkpoint")
    model, _ = load_checkpoint(args.checkpoint)
    recs, _, _, test_s = _prepare_inmemory(cfg, with_augmentation=False)
    batcher = pipeline.build_batcher(recs, test_s, model, cfg.density)
    if batcher is None:
        raise DataError("no test windows produced")
    K = args.k or cfg.eval.k
    clean = evaluate_min_ade(model, batcher, K, seed=cfg.train.seed,
                             select=cfg.eval.select)

    rng = np.random.default_rng(cfg.train.seed)
    dt = 1.0 / cfg.data.frame_rate
    noisy_samples = [perturb_observations(s, sigma, rng, dt=dt) for s in test_s]
    noisy_recs = {}
    for sid, rec in recs.items():
        from .data import AgentTrack, SceneRecording, _bounds

        tracks = [
            AgentTrack(t.agent_id, t.frames.copy(),
                       t.positions + rng.normal(0.0, sigma, t.positions.shape))
            for t in rec.tracks
        ]
        noisy_recs[sid] = SceneRecording(sid, rec.frame_rate, _bounds(tracks), tracks)
    geometries = {
        sid: pipeline.scene_geometry(recs[sid], cfg.density) for sid in recs
    }
    noisy_b = pipeline.build_batcher(
        noisy_recs, noisy_samples, model, cfg.density, geometries=geometries
    )
    perturbed = evaluate_min_ade(model, noisy_b, K, seed=cfg.train.seed,
                                 select=cfg.eval.select)
    result = {
        "sigma": sigma,
        "clean_min_ade": clean[0], "clean_min_fde": clean[1],
        "perturbed_min_ade": perturbed[0], "perturbed_min_fde": perturbed[1],
        "ade_increase": perturbed[0] - clean[0],
        "fde_increase": perturbed[1] - clean[1],
    }
    with open(run_dir / "robustness.json", "w") as f:
        json.dump(result, f, indent=2, sort_keys=True)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="regiontraj")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override config values, e.g. --set train.epochs=5")
    p.add_argument("--run-dir", help="output directory (default: timestamp+hash)")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded, bit-reproducible runs")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare-data", help="parse, window, augment, and cache")
    sp.add_argument("--scenes", help="comma-separated subset of scenes")
    sp.add_argument("--verify", action="store_true")
    sp.set_defaults(func=cmd_prepare_data)

    sp = sub.add_parser("pretrain-ae", help="pretrain the density autoencoder")
    sp.set_defaults(func=cmd_pretrain_ae)

    sp = sub.add_parser("train", help="train the full predictor")
    sp.add_argument("--autoencoder", help="pretrained autoencoder checkpoint")
    sp.add_argument("--ablate", action="append", choices=["no_relation", "no_goal"])
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="evaluate a checkpoint or dump")
    sp.add_argument("--checkpoint")
    sp.add_argument("--dump", help="evaluate an existing JSONL prediction dump")
    sp.add_argument("--k", type=int)
    sp.add_argument("--select", choices=["min_ade", "min_fde_then_ade"])
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("perturb-eval", help="observation-noise robustness study")
    sp.add_argument("--checkpoint")
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--k", type=int)
    sp.set_defaults(func=cmd_perturb_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        if args.deterministic:
            cfg.deterministic = True
        return args.func(cfg, args)
    except (ConfigError, ParseError, DataError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
