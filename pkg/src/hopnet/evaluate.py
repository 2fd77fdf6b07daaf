"""Rollout metrics, collision-speed statistics and counterfactual edits."""

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np

from .complex import build_complex, contact_pairs
from .errors import EditOnStatic, HorizonClamped, LengthMismatch, UnknownObject
from .geometry import hamilton_product, quat_inverse, quat_to_matrix
from .trajectory import Trajectory

METRIC_MODES = ("paper", "squared")
REPORT_SCHEMA = "hopnet-metrics-1"
SPEED_BIN_WIDTH = 0.01


def _dynamic_rows(n, dynamic):
    if dynamic is None:
        return np.ones(n, dtype=bool)
    dynamic = np.asarray(dynamic, dtype=bool)
    if dynamic.shape != (n,):
        raise LengthMismatch(f"dynamic mask has shape {dynamic.shape}, expected ({n},)")
    return dynamic


def rmse_pos(pred, true, dynamic=None):
    """Root of the mean squared position error over dynamic objects (metres)."""
    pred = np.asarray(pred, dtype=float)
    true = np.asarray(true, dtype=float)
    if pred.shape != true.shape:
        raise LengthMismatch(f"predicted positions {pred.shape} vs true {true.shape}")
    rows = _dynamic_rows(len(pred), dynamic)
    err = pred[rows] - true[rows]
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


def orientation_error_degrees(pred, true):
    """Per-object angle ``(360/pi) * arcsin(|vec(q_pred * q_true^-1)|)`` in degrees."""
    pred = np.asarray(pred, dtype=float)
    true = np.asarray(true, dtype=float)
    pred = pred / np.linalg.norm(pred, axis=-1, keepdims=True)
    true = true / np.linalg.norm(true, axis=-1, keepdims=True)
    # vector part of pred * conj(true), grouped so identical inputs cancel
    # exactly: w_t v_p - w_p v_t - v_p x v_t
    wp, vp = pred[..., :1], pred[..., 1:]
    wt, vt = true[..., :1], true[..., 1:]
    vec = (wt * vp - wp * vt) - np.cross(vp, vt)
    s = np.clip(np.linalg.norm(vec, axis=-1), 0.0, 1.0)
    return (360.0 / np.pi) * np.arcsin(s)


def rmse_ori(pred, true, dynamic=None, mode="paper"):
    """Orientation error over dynamic objects.

    ``paper`` mode takes the square root of the mean per-object angle, so its
    unit is the square root of a degree. ``squared`` mode is the conventional
    root-mean-square angle in degrees.
    """
    pred = np.asarray(pred, dtype=float)
    true = np.asarray(true, dtype=float)
    if pred.shape != true.shape:
        raise LengthMismatch(f"predicted quaternions {pred.shape} vs true {true.shape}")
    if mode not in METRIC_MODES:
        raise ValueError(f"metric mode must be one of {METRIC_MODES}, got {mode!r}")
    rows = _dynamic_rows(len(pred), dynamic)
    angles = orientation_error_degrees(pred[rows], true[rows])
    return float(np.sqrt(np.mean(angles if mode == "paper" else angles * angles)))


# ---------------------------------------------------------------------------
# reports


def _aligned(pred, truth):
    if list(pred.object_ids) != list(truth.object_ids):
        raise LengthMismatch(f"object ids differ: {pred.object_ids} vs {truth.object_ids}")


def resolve_horizons(requested, available):
    """Clamp each requested horizon to ``available`` (warning once if any is clamped)."""
    if available < 1:
        raise LengthMismatch("trajectories have no predicted frames to evaluate")
    out = []
    clamped = [t for t in requested if t > available]
    if clamped:
        warnings.warn(
            f"horizons {clamped} exceed the {available} available steps; using {available}",
            HorizonClamped,
            stacklevel=3,
        )
    for t in requested:
        t = min(int(t), available)
        if t < 1:
            raise ValueError("horizons must be positive")
        if t not in out:
            out.append(t)
    return out


def metric_report(pred, truth, horizons=(25, 50, 75, 100), mode="paper", dataset_id=None, checkpoint_id=None):
    """Metrics at frame ``1 + T`` for every horizon ``T`` (frames 0 and 1 are history)."""
    _aligned(pred, truth)
    available = min(pred.num_frames, truth.num_frames) - 2
    dynamic = ~truth.static
    rows = []
    for t in resolve_horizons(list(horizons), available):
        f = 1 + t
        pos_err = np.linalg.norm(pred.positions[f] - truth.positions[f], axis=1)
        ori_err = orientation_error_degrees(pred.quaternions[f], truth.quaternions[f])
        rows.append(
            {
                "horizon": t,
                "rmse_pos": rmse_pos(pred.positions[f], truth.positions[f], dynamic),
                "rmse_ori": rmse_ori(pred.quaternions[f], truth.quaternions[f], dynamic, mode),
                "per_object": [
                    {"object_id": int(oid), "position_error": float(pos_err[k]), "orientation_error_deg": float(ori_err[k])}
                    for k, oid in enumerate(truth.object_ids)
                    if dynamic[k]
                ],
            }
        )
    return {
        "schema": REPORT_SCHEMA,
        "dataset": dataset_id,
        "checkpoint": checkpoint_id,
        "metric_mode": mode,
        "requested_horizons": [int(t) for t in horizons],
        "available_horizon": int(available),
        "horizons": rows,
    }


# ---------------------------------------------------------------------------
# collision speeds


@dataclass
class Histogram:
    """Counts over bins ``[i * width, (i + 1) * width)``."""

    width: float
    counts: np.ndarray

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def edges(self):
        return np.arange(len(self.counts) + 1) * self.width

    def bin_of(self, speed):
        # the tiny offset keeps speeds that sit on a bin edge (0.2 as 0.19999...)
        # in the bin they name
        return int(np.floor(speed / self.width + 1e-9))


def point_velocities(traj, t, obj, points):
    """Finite-difference velocity ``p(t) - p(t-1)`` of body-fixed points of object ``obj``."""
    r_now = quat_to_matrix(traj.quaternions[t, obj])
    r_prev = quat_to_matrix(traj.quaternions[t - 1, obj])
    local = (points - traj.positions[t, obj]) @ r_now
    return points - (local @ r_prev.T + traj.positions[t - 1, obj])


def contact_closing_speeds(traj, t, contact_radius, cc=None):
    """Relative speed of the closest points of every directed contact at frame ``t``."""
    if t < 1:
        raise ValueError("closing speeds need frame t-1")
    cc = build_complex(traj.scene_mesh(), contact_radius) if cc is None else cc
    pairs, p_s, p_r, _ = contact_pairs(cc, traj.nodes_at(t), contact_radius)
    if len(pairs) == 0:
        return np.zeros(0)
    obj_s = cc.face_object[pairs[:, 0]]
    obj_r = cc.face_object[pairs[:, 1]]
    v_s = np.zeros_like(p_s)
    v_r = np.zeros_like(p_r)
    for k in range(traj.num_objects):
        sel = obj_s == k
        if np.any(sel):
            v_s[sel] = point_velocities(traj, t, k, p_s[sel])
        sel = obj_r == k
        if np.any(sel):
            v_r[sel] = point_velocities(traj, t, k, p_r[sel])
    speeds = np.linalg.norm(v_s - v_r, axis=1)
    # each unordered face pair is two directed contacts
    return np.repeat(speeds, 2)


def collision_speed_histogram(trajectories, contact_radius, width=SPEED_BIN_WIDTH):
    """Histogram of closest-point relative speeds over every (contact, frame) pair."""
    speeds = []
    for traj in trajectories:
        cc = build_complex(traj.scene_mesh(), contact_radius)
        for t in range(1, traj.num_frames):
            speeds.append(contact_closing_speeds(traj, t, contact_radius, cc))
    speeds = np.concatenate(speeds) if speeds else np.zeros(0)
    hist = Histogram(width, np.zeros(0, dtype=np.int64))
    if len(speeds) == 0:
        hist.counts = np.zeros(1, dtype=np.int64)
        return hist
    bins = np.floor(speeds / width + 1e-9).astype(np.int64)
    hist.counts = np.bincount(bins, minlength=1).astype(np.int64)
    return hist


# ---------------------------------------------------------------------------
# counterfactual edits


@dataclass(frozen=True)
class RemoveObject:
    object_id: int


@dataclass(frozen=True)
class SetMass:
    object_id: int
    mass: float


@dataclass(frozen=True)
class SetVelocity:
    object_id: int
    velocity: tuple


@dataclass(frozen=True)
class SetPose:
    object_id: int
    position: tuple
    quaternion: tuple


def _locate(initial, object_id):
    k = initial.index_of(object_id)
    if k is None:
        raise UnknownObject(f"no object with id {object_id}")
    if initial.specs[k].static:
        raise EditOnStatic(f"object {object_id} is static and cannot be edited")
    return k


def apply_counterfactual(initial, edit):
    """Return new history frames (0 and 1) with ``edit`` applied to both.

    Objects are addressed by their stable ids, so edits touching different
    objects commute.
    """
    initial = initial.truncated(2)
    if initial.num_frames != 2:
        raise LengthMismatch("counterfactual edits need two history frames")
    k = _locate(initial, edit.object_id)
    specs = list(initial.specs)
    pos = initial.positions.copy()
    quat = initial.quaternions.copy()
    ids = list(initial.object_ids)

    if isinstance(edit, RemoveObject):
        keep = [i for i in range(len(specs)) if i != k]
        return Trajectory(
            [specs[i] for i in keep], pos[:, keep], quat[:, keep], initial.seed, initial.generator_version,
            dict(initial.extra), [ids[i] for i in keep],
        )
    if isinstance(edit, SetMass):
        if not edit.mass > 0:
            raise ValueError("mass must be positive")
        specs[k] = dataclasses.replace(specs[k], mass=float(edit.mass))
    elif isinstance(edit, SetVelocity):
        pos[0, k] = pos[1, k] - np.asarray(edit.velocity, dtype=float)
    elif isinstance(edit, SetPose):
        new_q = np.asarray(edit.quaternion, dtype=float)
        new_q = new_q / np.linalg.norm(new_q)
        delta = hamilton_product(quat[1, k], quat_inverse(quat[0, k]))
        velocity = pos[1, k] - pos[0, k]
        pos[1, k] = np.asarray(edit.position, dtype=float)
        pos[0, k] = pos[1, k] - velocity
        quat[1, k] = new_q
        quat[0, k] = hamilton_product(quat_inverse(delta), new_q)
    else:
        raise TypeError(f"unknown edit {edit!r}")
    return Trajectory(specs, pos, quat, initial.seed, initial.generator_version, dict(initial.extra), ids)


def apply_counterfactuals(initial, edits):
    out = initial.truncated(2)
    for edit in edits:
        out = apply_counterfactual(out, edit)
    return out
