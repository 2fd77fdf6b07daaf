"""Training and autoregressive rollout.

Targets are second differences of node positions,
``a^t = x^{t+1} - 2 x^t + x^{t-1}``, and a rollout step integrates the
predicted acceleration back with ``x^{t+1} = a^t + 2 x^t - x^{t-1}`` before
projecting every dynamic object onto the nearest rigid motion of its mesh.

The training log written by :meth:`TrainLog.write` is line-delimited JSON. Each
line is one record with a ``kind`` key:

* ``{"kind": "step", "step", "loss", "lr", "wall_time"}`` every ``log_every``
  optimizer steps and at the last step;
* ``{"kind": "epoch", "epoch", "mean_loss", "samples"}`` after each full pass
  (and for a trailing partial pass);
* ``{"kind": "summary", "initial_loss", "final_loss", "skipped_frames",
  "samples", "steps"}`` once at the end.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .autodiff import Tape
from .complex import build_complex, detect_contacts
from .errors import EmptyDynamicSet, NonFiniteLoss, OutOfRange
from .features import FrameHistory, build_features, normalize, object_centers
from .geometry import hamilton_product, quat_from_matrix, quat_normalize, shape_match
from .model import ModelParams, ModelSpec, Network
from .trajectory import Trajectory, posed_nodes

# ---------------------------------------------------------------------------
# targets and samples


def second_difference(previous, current, following):
    return following - 2.0 * current + previous


def compute_targets(traj, t):
    """Node ``(N, 3)`` and object-centre ``(K, 3)`` accelerations at frame ``t``."""
    if t < 1 or t + 1 >= traj.num_frames:
        raise OutOfRange(f"frame {t} needs neighbours inside [0, {traj.num_frames - 1}]")
    prev, cur, nxt = (traj.nodes_at(i) for i in (t - 1, t, t + 1))
    node_acc = second_difference(prev, cur, nxt)
    mesh = traj.scene_mesh()
    k = mesh.num_objects
    centers = [object_centers(x, mesh.node_object, k) for x in (prev, cur, nxt)]
    return node_acc, second_difference(*centers)


@dataclass
class SceneData:
    """Per-trajectory constants reused by every sample of that trajectory."""

    traj: Trajectory
    cc: object
    physical: np.ndarray
    nodes: np.ndarray  # (T, N, 3)
    node_mask: np.ndarray
    object_mask: np.ndarray

    @classmethod
    def from_trajectory(cls, traj, contact_radius):
        mesh = traj.scene_mesh()
        dynamic = ~mesh.static
        return cls(
            traj,
            build_complex(mesh, contact_radius),
            traj.physical_params(),
            traj.all_nodes(),
            dynamic[mesh.node_object],
            dynamic,
        )


@dataclass
class TrainingSample:
    sample_id: str
    history: FrameHistory
    node_acc: np.ndarray
    object_acc: np.ndarray
    node_mask: np.ndarray
    object_mask: np.ndarray


def make_sample(scene, t, sample_id=None):
    nodes = scene.nodes
    if t < 1 or t + 1 >= len(nodes):
        raise OutOfRange(f"frame {t} needs neighbours inside [0, {len(nodes) - 1}]")
    history = FrameHistory.from_frames(nodes[0], nodes[t - 1], nodes[t], before=nodes[t - 2] if t >= 2 else None)
    node_acc = second_difference(nodes[t - 1], nodes[t], nodes[t + 1])
    mesh = scene.cc.mesh
    k = mesh.num_objects
    centers = [object_centers(nodes[i], mesh.node_object, k) for i in (t - 1, t, t + 1)]
    return TrainingSample(
        sample_id or f"{scene.traj.seed}:{t}",
        history,
        node_acc,
        second_difference(*centers),
        scene.node_mask,
        scene.object_mask,
    )


def inject_noise(sample, sigma, rng, node_object=None, num_objects=None):
    """Random-walk position noise on the two input frames of dynamic nodes.

    Frame ``t-1`` gets ``n1 ~ N(0, sigma^2)`` and frame ``t`` gets
    ``n1 + n2`` with a fresh ``n2``. Targets are shifted so that integrating
    them from the noisy frames lands on the true next frame.
    """
    if sigma == 0:
        return sample
    n = len(sample.node_mask)
    mask = sample.node_mask[:, None]
    first = rng.normal(0.0, sigma, size=(n, 3)) * mask
    second = first + rng.normal(0.0, sigma, size=(n, 3)) * mask
    h = sample.history
    history = FrameHistory(h.reference, h.previous + first, h.current + second, h.before)
    shift = -2.0 * second + first
    node_acc = sample.node_acc + shift
    object_acc = sample.object_acc
    if node_object is not None:
        object_acc = object_acc + object_centers(shift, node_object, num_objects)
    return TrainingSample(sample.sample_id, history, node_acc, object_acc, sample.node_mask, sample.object_mask)


# ---------------------------------------------------------------------------
# loss


def loss_on_tape(tape, node_pred, object_pred, sample, normalizers, object_weight=1.0):
    """MSE over normalised dynamic-node accelerations plus weighted object MSE."""
    node_target = normalizers.node_target.normalize(sample.node_acc)
    object_target = normalizers.object_target.normalize(sample.object_acc)
    node_term = tape.mean_squared_error(node_pred, node_target, sample.node_mask)
    object_term = tape.mean_squared_error(object_pred, object_target, sample.object_mask)
    return tape.add(node_term, tape.scale(object_term, object_weight))


def loss(pred_node_acc, pred_obj_acc, sample, normalizers, object_weight=1.0):
    """Scalar loss for normalised predictions given as plain arrays."""
    tape = Tape(record=False)
    value = loss_on_tape(tape, tape.const(pred_node_acc), tape.const(pred_obj_acc), sample, normalizers, object_weight)
    return float(value.value)


def sample_features(sample, scene, spec, normalizers, contact_radius=None):
    radius = spec.contact_radius if contact_radius is None else contact_radius
    cc = detect_contacts(scene.cc, sample.history.current, radius)
    raw = build_features(sample.history, cc, scene.physical, center_distance=not spec.no_center_mass_distance)
    return cc, normalize(raw, normalizers, update=False)


def sample_loss(params, scene, sample, object_weight=1.0):
    cc, bundle = sample_features(sample, scene, params.spec, params.normalizers)
    tape = Tape(record=False)
    node_pred, obj_pred = Network(params, tape).forward(bundle, cc)
    return float(loss_on_tape(tape, node_pred, obj_pred, sample, params.normalizers, object_weight).value)


class FeatureCache:
    """Contacts and normalised features of clean samples, keyed by ``(scene_no, t)``.

    Clean features depend only on the trajectory and the frozen normalisers, so
    they can be reused across evaluations and noise-free training steps. At most
    ``capacity`` entries are kept; later samples are recomputed on demand.
    """

    def __init__(self, capacity=2048):
        self.capacity = capacity
        self.entries = {}

    def get(self, key, scene, sample, spec, normalizers):
        hit = self.entries.get(key)
        if hit is None:
            hit = sample_features(sample, scene, spec, normalizers)
            if len(self.entries) < self.capacity:
                self.entries[key] = hit
        return hit


def dataset_loss(params, scenes, index, object_weight=1.0, cache=None):
    """Noise-free mean loss over ``index`` entries ``(scene_no, t)``."""
    values = []
    for i, t in index:
        sample = make_sample(scenes[i], t)
        if cache is None:
            values.append(sample_loss(params, scenes[i], sample, object_weight))
            continue
        cc, bundle = cache.get((i, t), scenes[i], sample, params.spec, params.normalizers)
        tape = Tape(record=False)
        node_pred, obj_pred = Network(params, tape).forward(bundle, cc)
        values.append(float(loss_on_tape(tape, node_pred, obj_pred, sample, params.normalizers, object_weight).value))
    return float(np.mean(values)) if values else float("nan")


# ---------------------------------------------------------------------------
# optimiser


def learning_rate(step, cfg):
    """Exponential decay from ``lr_start`` to ``lr_end`` over ``lr_decay_steps``."""
    if cfg.lr_start == 0:
        return 0.0
    frac = min(step / cfg.lr_decay_steps, 1.0) if cfg.lr_decay_steps > 0 else 1.0
    return float(cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac)


@dataclass
class OptimizerState:
    """Adam moments per parameter plus the number of updates taken."""

    first: dict
    second: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays):
        return cls({k: np.zeros_like(v) for k, v in arrays.items()}, {k: np.zeros_like(v) for k, v in arrays.items()})


def clip_gradients(grads, max_norm):
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def adam_update(arrays, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam step on ``arrays``."""
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name, g in grads.items():
        m = state.first[name]
        v = state.second[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        arrays[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    skipped_frames: int = 0
    samples: int = 0
    steps: int = 0

    def summary(self):
        return {
            "kind": "summary",
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "skipped_frames": self.skipped_frames,
            "samples": self.samples,
            "steps": self.steps,
        }

    def step_losses(self):
        return [r["loss"] for r in self.records if r["kind"] == "step"]

    def write(self, path):
        with open(path, "w") as fh:
            for rec in self.records + [self.summary()]:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def training_index(scenes, slow_threshold=0.0, contact_radius=None):
    """``(scene_no, t)`` pairs to train on and the number of masked frames.

    With a positive ``slow_threshold`` a frame is skipped when it has contacts
    and none of them closes faster than the threshold. Contact-free frames are
    always kept.
    """
    from .evaluate import contact_closing_speeds

    index = []
    skipped = 0
    for i, scene in enumerate(scenes):
        for t in range(1, scene.traj.num_frames - 1):
            if slow_threshold > 0:
                speeds = contact_closing_speeds(scene.traj, t, contact_radius or scene.cc.contact_radius, scene.cc)
                if len(speeds) and speeds.max() < slow_threshold:
                    skipped += 1
                    continue
            index.append((i, t))
    return index, skipped


def fit_normalizers(params, scenes, index):
    """One statistics pass over clean samples, then the statistics stay frozen."""
    norms = params.normalizers
    for i, t in index:
        scene = scenes[i]
        sample = make_sample(scene, t)
        cc = detect_contacts(scene.cc, sample.history.current, params.spec.contact_radius)
        raw = build_features(sample.history, cc, scene.physical, center_distance=not params.spec.no_center_mass_distance)
        normalize(raw, norms, update=True)
        norms.node_target.update(sample.node_acc[sample.node_mask])
        norms.object_target.update(sample.object_acc[sample.object_mask])


def train(trajectories, config, out_dir=None, params=None, progress=None):
    """Fit a model to ``trajectories``; returns ``(params, TrainLog)``.

    Samples are visited in a freshly shuffled order each epoch, drawn from a
    generator seeded by ``config.training.seed``. Checkpoints are written to
    ``out_dir/step_<n>.ckpt`` every ``checkpoint_every`` steps when ``out_dir``
    is given.
    """
    tcfg = config.training
    spec = ModelSpec.from_config(config.model)
    if params is None:
        params = ModelParams.initialize(spec, config.model.seed)
    scenes = [SceneData.from_trajectory(t, spec.contact_radius) for t in trajectories]
    index, skipped = training_index(scenes, tcfg.slow_collision_threshold, spec.contact_radius)
    if not index:
        raise ValueError("no training samples: every trajectory is shorter than three frames or fully masked")
    log = TrainLog(skipped_frames=skipped, samples=len(index))
    if params.normalizers.node_target.count == 0:
        fit_normalizers(params, scenes, index)
    cache = FeatureCache()
    log.initial_loss = dataset_loss(params, scenes, index, tcfg.object_loss_weight, cache)

    order_rng = np.random.default_rng([tcfg.seed, 0])
    noise_rng = np.random.default_rng([tcfg.seed, 1])
    opt = OptimizerState.zeros_like(params.arrays)
    out_dir = Path(out_dir) if out_dir is not None else None
    start = time.perf_counter()
    order = []
    epoch = 0
    epoch_losses = []
    for step in range(1, tcfg.steps + 1):
        if not order:
            order = list(order_rng.permutation(len(index)))
        i, t = index[order.pop(0)]
        scene = scenes[i]
        mesh = scene.cc.mesh
        sample = make_sample(scene, t, f"{i}:{t}")
        if tcfg.noise_std > 0:
            sample = inject_noise(sample, tcfg.noise_std, noise_rng, mesh.node_object, mesh.num_objects)
            cc, bundle = sample_features(sample, scene, spec, params.normalizers)
        else:
            cc, bundle = cache.get((i, t), scene, sample, spec, params.normalizers)
        tape = Tape()
        net = Network(params, tape)
        node_pred, obj_pred = net.forward(bundle, cc)
        value = loss_on_tape(tape, node_pred, obj_pred, sample, params.normalizers, tcfg.object_loss_weight)
        loss_value = float(value.value)
        if not np.isfinite(loss_value):
            raise NonFiniteLoss(sample.sample_id, loss_value)
        tape.backward(value)
        grads, _ = clip_gradients(net.gradients(), tcfg.grad_clip)
        lr = learning_rate(step - 1, tcfg)
        adam_update(params.arrays, grads, opt, lr, tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps)
        epoch_losses.append(loss_value)

        if step % max(tcfg.log_every, 1) == 0 or step == tcfg.steps:
            rec = {"kind": "step", "step": step, "loss": loss_value, "lr": lr, "wall_time": time.perf_counter() - start}
            log.records.append(rec)
            if progress is not None:
                progress(rec)
        if not order or step == tcfg.steps:
            log.records.append(
                {"kind": "epoch", "epoch": epoch, "mean_loss": float(np.mean(epoch_losses)), "samples": len(epoch_losses)}
            )
            epoch += 1
            epoch_losses = []
        if out_dir is not None and tcfg.checkpoint_every > 0 and step % tcfg.checkpoint_every == 0:
            checkpoint.save(out_dir / f"step_{step}.ckpt", params, {"step": step})
    log.steps = tcfg.steps
    log.final_loss = dataset_loss(params, scenes, index, tcfg.object_loss_weight, cache)
    return params, log


# ---------------------------------------------------------------------------
# rollout


@dataclass
class RolloutResult:
    """Predicted poses for ``horizon`` new frames following the two history frames."""

    initial: Trajectory
    positions: np.ndarray  # (H, K, 3)
    quaternions: np.ndarray  # (H, K, 4)
    nodes: np.ndarray  # (H, N, 3)
    residuals: np.ndarray  # (H, K); zero for static objects

    @property
    def horizon(self):
        return len(self.positions)

    def to_trajectory(self):
        init = self.initial
        return Trajectory(
            init.specs,
            np.concatenate([init.positions[:2], self.positions]),
            np.concatenate([init.quaternions[:2], self.quaternions]),
            init.seed,
            init.generator_version,
            dict(init.extra, rollout=True),
            list(init.object_ids),
        )


def model_predictor(params):
    """Wrap ``params`` as ``f(history, scene, t) -> node accelerations`` in metres/step^2."""
    spec = params.spec

    def predict(history, scene, t):
        cc = detect_contacts(scene.cc, history.current, spec.contact_radius)
        raw = build_features(history, cc, scene.physical, center_distance=not spec.no_center_mass_distance)
        bundle = normalize(raw, params.normalizers, update=False)
        node_pred, _ = Network(params).forward(bundle, cc)
        return params.normalizers.node_target.denormalize(node_pred.value)

    return predict


def ground_truth_predictor(traj):
    """Predictor that replays the true accelerations of ``traj`` (test oracle)."""
    nodes = traj.all_nodes()

    def predict(history, scene, t):
        return second_difference(nodes[t - 1], nodes[t], nodes[t + 1])

    return predict


def rollout(initial, params=None, horizon=1, predictor=None, contact_radius=None):
    """Autoregressive rollout from the first two frames of ``initial``.

    Only frames 0 and 1 of ``initial`` are read. Frame 0 is also the reference
    frame for centre-of-mass features. Pass ``predictor`` to replace the model
    with any ``f(history, scene, t) -> (N, 3)`` acceleration source, where
    ``t`` is the index of the current frame.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    initial = initial.truncated(2)
    if initial.num_frames < 2:
        raise OutOfRange("rollout needs two initial frames")
    if not np.any(~initial.static):
        raise EmptyDynamicSet("scene has no dynamic objects to roll out")
    if predictor is None:
        if params is None:
            raise ValueError("either params or predictor is required")
        predictor = model_predictor(params)
    radius = contact_radius or (params.spec.contact_radius if params is not None else 0.25)
    scene = SceneData.from_trajectory(initial, radius)
    specs = initial.specs
    mesh = scene.cc.mesh
    dynamic = np.flatnonzero(~mesh.static)
    obj_nodes = [np.flatnonzero(mesh.node_object == k) for k in range(mesh.num_objects)]

    pos = [initial.positions[0], initial.positions[1]]
    quat = [initial.quaternions[0], initial.quaternions[1]]
    frames = [scene.nodes[0], scene.nodes[1]]
    out_pos, out_quat, out_nodes, out_res = [], [], [], []
    for step in range(horizon):
        history = FrameHistory.from_frames(
            frames[0], frames[-2], frames[-1], before=frames[-3] if len(frames) >= 3 else None
        )
        acc = predictor(history, scene, step + 1)
        integrated = acc + 2.0 * frames[-1] - frames[-2]
        new_pos = pos[-1].copy()
        new_quat = quat[-1].copy()
        residual = np.zeros(mesh.num_objects)
        for k in dynamic:
            ref = posed_nodes([specs[k]], pos[-1][k : k + 1], quat[-1][k : k + 1])
            fit = shape_match(ref, integrated[obj_nodes[k]])
            new_pos[k] = fit.matrix @ pos[-1][k] + fit.translation
            new_quat[k] = quat_normalize(hamilton_product(quat_from_matrix(fit.matrix), quat[-1][k]))
            residual[k] = fit.residual
        nodes = posed_nodes(specs, new_pos, new_quat)
        pos.append(new_pos)
        quat.append(new_quat)
        frames.append(nodes)
        out_pos.append(new_pos)
        out_quat.append(new_quat)
        out_nodes.append(nodes)
        out_res.append(residual)
    return RolloutResult(initial, np.array(out_pos), np.array(out_quat), np.array(out_nodes), np.array(out_res))
