import numpy as np
import pytest
import torch

from regiontraj.data import build_windows
from regiontraj.density import SceneGeometry, render_sequence
from regiontraj.model import (ModelConfig, TrajectoryPredictor, decode_future,
                              forward_infer, forward_train, read_dump,
                              write_dump)
from regiontraj.synthetic import synthetic_recording

TINY = ModelConfig(ae_channels=(4,), c_h=8, c_r=8, c_enc=8, d_z=4,
                   mlp_hidden=8, dec_hidden=8)


def _sample_and_maps(map_size=(16, 16), seed=0):
    rec = synthetic_recording(n_agents=4, group_size=4, seed=seed, noise=0.0)
    sample = build_windows(rec)[0]
    geom = SceneGeometry.from_recording(rec, margin=2.0, map_size=map_size)
    maps = render_sequence(rec, sample.obs_frames, geom)
    return sample, maps


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return TrajectoryPredictor(TINY)


class TestDecodeFuture:
    def test_output_shape(self, model):
        torch.manual_seed(1)
        out = decode_future(torch.rand(8), torch.rand(2), torch.rand(8),
                            model.future_decoder, horizon=12)
        assert tuple(out.shape) == (12, 2)

    def test_zeroed_head_emits_bias_every_step(self):
        torch.manual_seed(2)
        m = TrajectoryPredictor(TINY)
        with torch.no_grad():
            m.future_decoder.head.weight.zero_()
            m.future_decoder.head.bias.copy_(torch.tensor([0.25, -0.75]))
        out = decode_future(torch.rand(8), torch.rand(2), torch.rand(8),
                            m.future_decoder, horizon=5)
        assert torch.allclose(out, torch.tensor([0.25, -0.75]).expand(5, -1))

    def test_last_obs_offset(self, model):
        torch.manual_seed(3)
        R, g, h = torch.rand(8), torch.rand(2), torch.rand(8)
        base = decode_future(R, g, h, model.future_decoder)
        shift = torch.tensor([10.0, -3.0])
        moved = decode_future(R, g + shift, h, model.future_decoder,
                              last_obs=shift)
        assert torch.allclose(moved, base + shift, atol=1e-5)


class TestForwardShapes:
    def test_train_shapes(self, model):
        sample, maps = _sample_and_maps()
        gen = torch.Generator().manual_seed(0)
        pred, Zq, Zp = forward_train(sample, maps, model, K=5, generator=gen)
        assert tuple(pred.trajectories.shape) == (5, 12, 2)
        assert tuple(pred.goals.goals.shape) == (5, 2)
        assert Zq.mean.shape == Zp.mean.shape == (1, TINY.d_z)

    def test_infer_shapes(self, model):
        sample, maps = _sample_and_maps()
        pred = forward_infer(sample, maps, model, K=3,
                             generator=torch.Generator().manual_seed(0))
        assert tuple(pred.trajectories.shape) == (3, 12, 2)
        assert tuple(pred.relation.R_st.shape) == (TINY.c_r,)

    def test_outputs_finite(self, model):
        sample, maps = _sample_and_maps(seed=5)
        pred = forward_infer(sample, maps, model, K=8,
                             generator=torch.Generator().manual_seed(1))
        assert torch.isfinite(pred.trajectories).all()
        assert torch.isfinite(pred.goals.goals).all()

    def test_custom_horizon(self, model):
        sample, maps = _sample_and_maps()
        pred = forward_infer(sample, maps, model, K=2, horizon=7,
                             generator=torch.Generator().manual_seed(2))
        assert tuple(pred.trajectories.shape) == (2, 7, 2)


class TestDeterminismAndIsolation:
    def test_infer_deterministic_given_seed(self, model):
        sample, maps = _sample_and_maps()
        a = forward_infer(sample, maps, model, K=4,
                          generator=torch.Generator().manual_seed(7))
        b = forward_infer(sample, maps, model, K=4,
                          generator=torch.Generator().manual_seed(7))
        assert torch.equal(a.trajectories, b.trajectories)

    def test_infer_ignores_future(self, model):
        sample, maps = _sample_and_maps()
        clean = forward_infer(sample, maps, model, K=4,
                              generator=torch.Generator().manual_seed(9))
        sample.Y = np.full_like(sample.Y, np.nan)
        corrupted = forward_infer(sample, maps, model, K=4,
                                  generator=torch.Generator().manual_seed(9))
        assert torch.equal(clean.trajectories, corrupted.trajectories)

    def test_train_depends_on_future(self, model):
        sample, maps = _sample_and_maps()
        p1, _, _ = forward_train(sample, maps, model, K=4,
                                 generator=torch.Generator().manual_seed(3))
        sample.Y = sample.Y + 5.0
        p2, _, _ = forward_train(sample, maps, model, K=4,
                                 generator=torch.Generator().manual_seed(3))
        assert not torch.allclose(p1.trajectories, p2.trajectories)

    def test_no_relation_ignores_maps(self):
        torch.manual_seed(4)
        cfg = ModelConfig(ae_channels=(4,), c_h=8, c_r=8, c_enc=8, d_z=4,
                          mlp_hidden=8, dec_hidden=8, no_relation=True)
        m = TrajectoryPredictor(cfg)
        sample, maps = _sample_and_maps()
        with_maps = forward_infer(sample, maps, m, K=3,
                                  generator=torch.Generator().manual_seed(5))
        without = forward_infer(sample, None, m, K=3,
                                generator=torch.Generator().manual_seed(5))
        assert torch.equal(with_maps.trajectories, without.trajectories)
        assert torch.all(with_maps.relation.R_st == 0)

    def test_no_goal_is_deterministic_single_mode(self):
        torch.manual_seed(6)
        cfg = ModelConfig(ae_channels=(4,), c_h=8, c_r=8, c_enc=8, d_z=4,
                          mlp_hidden=8, dec_hidden=8, no_goal=True)
        m = TrajectoryPredictor(cfg)
        sample, maps = _sample_and_maps()
        a = forward_infer(sample, maps, m, K=20)
        b = forward_infer(sample, maps, m, K=20)
        assert tuple(a.trajectories.shape) == (1, 12, 2)
        assert torch.equal(a.trajectories, b.trajectories)

    def test_train_requires_future(self, model):
        sample, maps = _sample_and_maps()
        sample.Y = None
        with pytest.raises(ValueError):
            forward_train(sample, maps, model)

    def test_relation_needs_maps(self, model):
        sample, _ = _sample_and_maps()
        with pytest.raises(ValueError):
            forward_infer(sample, None, model)


class TestBatchConsistency:
    def test_batched_matches_per_sample(self, model):
        samples_maps = [_sample_and_maps(seed=s) for s in (0, 5)]
        from regiontraj.model import _sample_inputs

        Xs, Ms, Ps, Ls = [], [], [], []
        for sample, maps in samples_maps:
            X, M, P, L = _sample_inputs(model, sample, maps)
            Xs.append(X); Ms.append(M); Ps.append(P); Ls.append(L)
        batched = model.forward_batch(
            np.concatenate(Xs), None, np.concatenate(Ms), np.concatenate(Ps),
            np.concatenate(Ls), 1, "infer",
            generator=torch.Generator().manual_seed(0),
        )
        # zero the latent path so the generator draw order cannot differ
        singles = []
        for sample, maps in samples_maps:
            X, M, P, L = _sample_inputs(model, sample, maps)
            singles.append(model.forward_batch(
                X, None, M, P, L, 1, "infer",
                generator=torch.Generator().manual_seed(0)))
        for i, out in enumerate(singles):
            assert torch.allclose(batched["relation"][i], out["relation"][0],
                                  atol=1e-5)


def test_end_to_end_gradient_matches_finite_differences():
    torch.manual_seed(8)
    model = TrajectoryPredictor(TINY).double()
    sample, maps = _sample_and_maps()

    def loss_fn():
        # fresh generator each call keeps the latent noise frozen
        pred, Zq, Zp = forward_train(sample, maps, model, K=2,
                                     generator=torch.Generator().manual_seed(11))
        Y = torch.as_tensor(sample.Y, dtype=torch.float64)
        errs = ((pred.trajectories - Y.unsqueeze(0)) ** 2).mean(dim=(1, 2))
        from regiontraj.goals import kld

        return errs.min() + 0.1 * kld(Zq, Zp)

    loss = loss_fn()
    loss.backward()
    rng = np.random.default_rng(2)
    params = [p for p in model.parameters() if p.grad is not None]
    checked = 0
    while checked < 20:
        p = params[rng.integers(len(params))]
        idx = tuple(rng.integers(s) for s in p.shape)
        grad = float(p.grad[idx])
        eps = 1e-6
        with torch.no_grad():
            p[idx] += eps
            up = float(loss_fn())
            p[idx] -= 2 * eps
            down = float(loss_fn())
            p[idx] += eps
        fd = (up - down) / (2 * eps)
        if abs(fd) < 1e-9 and abs(grad) < 1e-9:
            continue
        assert grad == pytest.approx(fd, rel=1e-3, abs=1e-7)
        checked += 1


def test_dump_round_trip(tmp_path, model):
    sample, maps = _sample_and_maps()
    pred = forward_infer(sample, maps, model, K=3,
                         generator=torch.Generator().manual_seed(0))
    rec = {
        "scene_id": sample.scene_id,
        "agent_id": sample.agent_id,
        "t0": int(sample.t0),
        "predictions": pred.trajectories.detach().numpy(),
        "ground_truth": sample.Y,
    }
    path = tmp_path / "dump.jsonl"
    write_dump([rec], path)
    loaded = read_dump(path)
    assert len(loaded) == 1
    assert loaded[0]["scene_id"] == sample.scene_id
    assert np.allclose(loaded[0]["predictions"],
                       pred.trajectories.detach().numpy(), atol=1e-12)
    assert np.allclose(loaded[0]["ground_truth"], sample.Y)
