import dataclasses

import numpy as np
import pytest

from hopnet import engine
from hopnet.config import Config
from hopnet.errors import NonFiniteLoss, OutOfRange
from hopnet.features import NormalizerSet
from hopnet.model import ModelParams, ModelSpec
from hopnet.sim import ObjectSpec, SimState, run, simulate_trajectory, trajectory_from_states
from hopnet.trajectory import Trajectory

from _scenes import NO_GRAVITY


def sphere_config(hidden=8, steps=20):
    cfg = Config()
    cfg.dataset = dataclasses.replace(cfg.dataset, shapes=("sphere",), min_objects=2, max_objects=2)
    cfg.model.hidden = hidden
    cfg.training.steps = steps
    cfg.training.lr_decay_steps = max(steps, 1)
    cfg.training.log_every = 5
    return cfg


def small_trajectories(n=1, steps=12, cfg=None):
    cfg = cfg or sphere_config()
    return [simulate_trajectory(seed, cfg.dataset, steps) for seed in range(n)]


def line_trajectory(xs):
    """A single free sphere whose x position follows ``xs`` exactly."""
    spec = ObjectSpec.sphere(0.2, 1.0, 0.5, 0.5)
    pos = np.zeros((len(xs), 1, 3))
    pos[:, 0, 0] = xs
    quat = np.tile([1.0, 0, 0, 0], (len(xs), 1, 1))
    return Trajectory([spec], pos, quat)


# -- targets ---------------------------------------------------------------


def test_constant_velocity_gives_zero_acceleration():
    traj = line_trajectory([0.0, 0.25, 0.5, 0.75])
    node_acc, obj_acc = engine.compute_targets(traj, 1)
    assert np.abs(node_acc).max() < 1e-12
    assert np.abs(obj_acc).max() < 1e-12


def test_second_difference_by_substitution():
    traj = line_trajectory([0.0, 1.0, 2.5])
    node_acc, obj_acc = engine.compute_targets(traj, 1)
    np.testing.assert_allclose(node_acc[:, 0], 0.5, atol=1e-12)
    np.testing.assert_allclose(obj_acc[0], [0.5, 0.0, 0.0], atol=1e-12)


def test_targets_ignore_global_translation():
    traj = small_trajectories(1, steps=6)[0]
    moved = Trajectory(traj.specs, traj.positions + [17.0, -3.0, 5.0], traj.quaternions)
    for t in (1, 3):
        a, b = engine.compute_targets(traj, t), engine.compute_targets(moved, t)
        np.testing.assert_allclose(a[0], b[0], atol=1e-9)
        np.testing.assert_allclose(a[1], b[1], atol=1e-9)


def test_targets_out_of_range():
    traj = line_trajectory([0.0, 1.0, 2.5])
    with pytest.raises(OutOfRange):
        engine.compute_targets(traj, 0)
    with pytest.raises(OutOfRange):
        engine.compute_targets(traj, 2)


# -- loss ------------------------------------------------------------------


def _sample_and_norms():
    traj = small_trajectories(1, steps=4)[0]
    scene = engine.SceneData.from_trajectory(traj, 0.25)
    sample = engine.make_sample(scene, 2)
    norms = NormalizerSet()
    norms.node_target.update(sample.node_acc)
    norms.object_target.update(sample.object_acc)
    nt = norms.node_target.normalize(sample.node_acc)
    ot = norms.object_target.normalize(sample.object_acc)
    return sample, norms, nt, ot


def test_perfect_prediction_has_zero_loss():
    sample, norms, nt, ot = _sample_and_norms()
    assert engine.loss(nt, ot, sample, norms) == 0.0


def test_unit_offset_costs_one_plus_weight():
    sample, norms, nt, ot = _sample_and_norms()
    assert engine.loss(nt + 1, ot + 1, sample, norms, 1.0) == pytest.approx(2.0, abs=1e-12)
    assert engine.loss(nt + 1, ot + 1, sample, norms, 0.3) == pytest.approx(1.3, abs=1e-12)


def test_halving_object_weight_halves_object_term():
    sample, norms, nt, ot = _sample_and_norms()
    rng = np.random.default_rng(0)
    pn = nt + rng.normal(size=nt.shape)
    po = ot + rng.normal(size=ot.shape)
    node_only = engine.loss(pn, po, sample, norms, 0.0)
    full = engine.loss(pn, po, sample, norms, 1.0) - node_only
    half = engine.loss(pn, po, sample, norms, 0.5) - node_only
    assert half == pytest.approx(full / 2, rel=1e-12)


def test_static_rows_do_not_count():
    sample, norms, nt, ot = _sample_and_norms()
    nt = nt.copy()
    nt[~sample.node_mask] += 100.0
    ot = ot.copy()
    ot[~sample.object_mask] += 100.0
    assert engine.loss(nt, ot, sample, norms) == 0.0


# -- noise -----------------------------------------------------------------


def test_zero_sigma_returns_sample_unchanged():
    sample, *_ = _sample_and_norms()
    assert engine.inject_noise(sample, 0.0, np.random.default_rng(0)) is sample


def test_random_walk_noise_statistics():
    sample, *_ = _sample_and_norms()
    rng = np.random.default_rng(5)
    sigma = 1e-3
    draws_t, draws_prev = [], []
    dyn = np.flatnonzero(sample.node_mask)
    while sum(len(d) for d in draws_t) < 100_000:
        noisy = engine.inject_noise(sample, sigma, rng)
        draws_t.append((noisy.history.current - sample.history.current)[dyn])
        draws_prev.append((noisy.history.previous - sample.history.previous)[dyn])
    at_t = np.concatenate(draws_t)
    at_prev = np.concatenate(draws_prev)
    assert np.all(np.abs(at_t.std(axis=0) / (sigma * np.sqrt(2)) - 1) < 0.05)
    assert np.all(np.abs(at_prev.std(axis=0) / sigma - 1) < 0.05)
    assert np.all(noisy.history.current[~sample.node_mask] == sample.history.current[~sample.node_mask])


def test_noise_targets_still_reach_true_next_frame():
    traj = small_trajectories(1, steps=4)[0]
    scene = engine.SceneData.from_trajectory(traj, 0.25)
    sample = engine.make_sample(scene, 2)
    mesh = scene.cc.mesh
    noisy = engine.inject_noise(sample, 1e-3, np.random.default_rng(1), mesh.node_object, mesh.num_objects)
    h = noisy.history
    np.testing.assert_allclose(noisy.node_acc + 2 * h.current - h.previous, scene.nodes[3], atol=1e-12)


def test_noise_is_reproducible():
    sample, *_ = _sample_and_norms()
    a = engine.inject_noise(sample, 1e-3, np.random.default_rng(9))
    b = engine.inject_noise(sample, 1e-3, np.random.default_rng(9))
    assert a.history.current.tobytes() == b.history.current.tobytes()
    assert a.node_acc.tobytes() == b.node_acc.tobytes()


# -- optimiser and training ------------------------------------------------


def test_learning_rate_schedule_endpoints():
    t = Config().training
    assert engine.learning_rate(0, t) == pytest.approx(t.lr_start)
    assert engine.learning_rate(t.lr_decay_steps, t) == pytest.approx(t.lr_end)
    assert engine.learning_rate(10 * t.lr_decay_steps, t) == pytest.approx(t.lr_end)
    mid = engine.learning_rate(t.lr_decay_steps // 2, t)
    assert mid == pytest.approx(np.sqrt(t.lr_start * t.lr_end))


def test_gradient_clipping_caps_global_norm():
    grads = {"a": np.full(4, 3.0), "b": np.full(2, 4.0)}
    clipped, norm = engine.clip_gradients(grads, 1.0)
    assert norm == pytest.approx(np.sqrt(36 + 32))
    total = np.sqrt(sum(np.sum(g * g) for g in clipped.values()))
    assert total == pytest.approx(1.0)
    same, _ = engine.clip_gradients({"a": np.array([0.1])}, 1.0)
    assert same["a"][0] == 0.1


def test_zero_learning_rate_leaves_parameters_unchanged():
    cfg = sphere_config(steps=5)
    cfg.training.lr_start = 0.0
    trajs = small_trajectories(1, steps=6, cfg=cfg)
    init = ModelParams.initialize(ModelSpec.from_config(cfg.model), cfg.model.seed)
    params, _ = engine.train(trajs, cfg)
    for name, arr in init.arrays.items():
        assert arr.tobytes() == params.arrays[name].tobytes()


def test_training_is_bitwise_deterministic():
    cfg = sphere_config(steps=8)
    trajs = small_trajectories(1, steps=6, cfg=cfg)
    a, log_a = engine.train(trajs, cfg)
    b, log_b = engine.train(trajs, cfg)
    for name in a.arrays:
        assert a.arrays[name].tobytes() == b.arrays[name].tobytes()
    assert log_a.step_losses() == log_b.step_losses()


def test_single_sample_overfits():
    cfg = sphere_config(hidden=16, steps=500)
    cfg.training.noise_std = 0.0
    cfg.training.lr_end = cfg.training.lr_start
    traj = small_trajectories(1, steps=1, cfg=cfg)[0]
    assert traj.num_frames == 3
    _, log = engine.train([traj], cfg)
    assert log.samples == 1
    assert log.final_loss < 0.01 * log.initial_loss


def test_loss_mostly_decreases_over_first_steps():
    """Fixed single-sample batch, default lr: loss non-increasing in >= 95% of 10 seeded runs."""
    cfg = sphere_config(hidden=16, steps=50)
    cfg.training.noise_std = 0.0
    traj = small_trajectories(1, steps=1, cfg=cfg)[0]
    monotone = 0
    for seed in range(10):
        cfg.model.seed = seed
        cfg.training.log_every = 1
        _, log = engine.train([traj], cfg)
        losses = log.step_losses()
        # the logged loss at step s is evaluated before update s is applied
        monotone += all(b <= a * (1 + 1e-9) for a, b in zip(losses, losses[1:]))
    assert monotone >= 9.5


def test_log_records_epochs_and_summary(tmp_path):
    cfg = sphere_config(steps=12)
    trajs = small_trajectories(1, steps=4, cfg=cfg)
    _, log = engine.train(trajs, cfg, out_dir=tmp_path)
    epochs = [r for r in log.records if r["kind"] == "epoch"]
    assert [e["samples"] for e in epochs] == [4, 4, 4]
    path = tmp_path / "log.jsonl"
    log.write(path)
    lines = path.read_text().splitlines()
    assert '"kind": "summary"' in lines[-1]


def test_checkpoints_written_on_cadence(tmp_path):
    cfg = sphere_config(steps=6)
    cfg.training.checkpoint_every = 3
    engine.train(small_trajectories(1, steps=4, cfg=cfg), cfg, out_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.glob("*.ckpt")) == ["step_3.ckpt", "step_6.ckpt"]


def test_non_finite_loss_names_the_sample():
    cfg = sphere_config(steps=3)
    trajs = small_trajectories(1, steps=4, cfg=cfg)
    params = ModelParams.initialize(ModelSpec.from_config(cfg.model), 0)
    params.arrays["decoder.nodes.l2.b"][:] = np.nan
    with pytest.raises(NonFiniteLoss) as err:
        engine.train(trajs, cfg, params=params)
    assert err.value.sample_id.startswith("0:")


def test_slow_collision_mask_zero_keeps_everything():
    cfg = sphere_config()
    scenes = [engine.SceneData.from_trajectory(t, 0.25) for t in small_trajectories(1, steps=10, cfg=cfg)]
    index, skipped = engine.training_index(scenes, 0.0)
    assert skipped == 0 and len(index) == 10
    index, skipped = engine.training_index(scenes, 10.0)
    assert skipped > 0 and len(index) + skipped == 10


# -- rollout ---------------------------------------------------------------


def zero_model(spec=ModelSpec(hidden=8)):
    params = ModelParams.initialize(spec, 0)
    for name in params.arrays:
        if name.startswith("decoder.nodes.l2"):
            params.arrays[name][:] = 0.0
    return params


def test_zero_model_extrapolates_inertially():
    traj = small_trajectories(1, steps=3)[0]
    params = zero_model()
    res = engine.rollout(traj, params, horizon=3)
    pos = [traj.positions[0], traj.positions[1]]
    for h in range(3):
        pos.append(2 * pos[-1] - pos[-2])
        np.testing.assert_allclose(res.positions[h], pos[-1], atol=1e-9)


def test_ground_truth_accelerations_reproduce_next_frame():
    cfg = sphere_config()
    traj = simulate_trajectory(3, cfg.dataset, 30)
    res = engine.rollout(traj, horizon=1, predictor=engine.ground_truth_predictor(traj))
    np.testing.assert_allclose(res.positions[0], traj.positions[2], atol=1e-9)
    np.testing.assert_allclose(res.nodes[0], traj.nodes_at(2), atol=1e-9)
    long = engine.rollout(traj, horizon=30, predictor=engine.ground_truth_predictor(traj))
    np.testing.assert_allclose(long.nodes[-1], traj.nodes_at(31), atol=1e-8)


def test_rollout_keeps_objects_rigid_and_quaternions_unit():
    traj = small_trajectories(1, steps=3)[0]
    params = ModelParams.initialize(ModelSpec(hidden=8), 1)
    res = engine.rollout(traj, params, horizon=6)
    mesh = traj.scene_mesh()
    for k, spec in enumerate(traj.specs):
        idx = np.flatnonzero(mesh.node_object == k)[:12]
        ref = np.linalg.norm(spec.nodes[:12, None] - spec.nodes[None, :12], axis=-1)
        for frame in res.nodes:
            d = np.linalg.norm(frame[idx][:, None] - frame[idx][None], axis=-1)
            assert np.abs(d - ref).max() < 1e-9
    assert np.abs(np.linalg.norm(res.quaternions, axis=-1) - 1).max() < 1e-9
    assert np.all(res.residuals >= 0)
    assert res.to_trajectory().num_frames == 8
    assert np.all(res.positions[:, 0] == traj.positions[0, 0])


def test_rollout_only_reads_initial_frames():
    traj = small_trajectories(1, steps=5)[0]
    params = ModelParams.initialize(ModelSpec(hidden=8), 2)
    spoiled = Trajectory(
        traj.specs,
        np.concatenate([traj.positions[:2], traj.positions[2:] + 1.0]),
        traj.quaternions,
    )
    a = engine.rollout(traj, params, horizon=3)
    b = engine.rollout(spoiled, params, horizon=3)
    assert a.positions.tobytes() == b.positions.tobytes()


def test_rollout_in_free_space_matches_oracle_without_gravity():
    specs = [ObjectSpec.sphere(0.2, 1.0, 0.5, 0.5)]
    state = SimState.at_rest([[0.0, 0.0, 2.0]]).with_velocity([[0.01, 0.0, 0.0]], [[0.0, 0.02, 0.0]])
    traj = trajectory_from_states(specs, run(specs, state, 6, NO_GRAVITY))
    res = engine.rollout(traj, horizon=5, predictor=lambda h, s, t: np.zeros_like(h.current))
    np.testing.assert_allclose(res.positions, traj.positions[2:], atol=1e-9)
