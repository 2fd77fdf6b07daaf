"""One simulator step: semi-implicit Euler with sequential contact impulses.

Order of operations inside :func:`step`:

1. gravity is added to every dynamic body's linear velocity;
2. contacts (including speculative ones that could close this step) are
   gathered in ascending object-index order;
3. a fixed number of projected Gauss-Seidel sweeps apply normal and Coulomb
   friction impulses with accumulated clamping. If the resolved velocities
   carry more kinetic energy than before, the sweep is redone with zero
   restitution;
4. positions and orientations are advanced with the new velocities. The
   angular velocity keeps its world direction; for bodies with unequal
   principal moments it is rescaled so that the rotational kinetic energy is
   the same in the new orientation;
5. remaining penetration deeper than a small slop is reduced by a Baumgarte
   fraction through a direct positional shift (linear only);
6. an energy guard works per island (bodies linked by a contact this step).
   Before integration it scales an island's velocities down if the island
   would otherwise end the step with more mechanical energy than it started
   with; after projection it shortens any shift that lifted the island past
   that budget. Islands never exchange energy through the guard, so bodies
   that touch nothing are unaffected.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import NumericalBlowup
from ..geometry import hamilton_product, quat_from_rotvec, quat_normalize, quat_to_matrix
from .bodies import SimState, body_energies, world_inverse_inertia
from .contacts import find_contacts

PENETRATION_SLOP = 2e-4
SPECULATIVE_PAD = 1e-3
ENERGY_ROUNDING = 1e-12


@dataclass(frozen=True)
class PhysicsConfig:
    gravity: tuple = (0.0, 0.0, -0.0098)
    iterations: int = 10
    baumgarte: float = 0.2
    max_speed: float = 5.0
    slop: float = PENETRATION_SLOP

    @classmethod
    def from_dataset(cls, cfg):
        return cls(tuple(cfg.gravity), cfg.solver_iterations, cfg.baumgarte, cfg.max_speed)


@dataclass
class StepReport:
    contacts: int = 0
    restitution_dropped: bool = False
    energy_clamped: bool = False


def _cross(u, v):
    # np.cross carries heavy per-call overhead for single 3-vectors.
    return np.array([u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]])


def _tangents(n):
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = _cross(n, helper)
    t1 /= np.linalg.norm(t1)
    return t1, _cross(n, t1)


class _Row:
    __slots__ = ("a", "b", "ja", "jb", "wa", "wb", "k")

    def __init__(self, a, b, ra, rb, d, inv_m, inv_i):
        self.a, self.b = a, b
        self.ja = np.concatenate([d, _cross(ra, d)])
        self.jb = -np.concatenate([d, _cross(rb, d)])
        self.wa = np.concatenate([inv_m[a] * self.ja[:3], inv_i[a] @ self.ja[3:]])
        self.wb = np.concatenate([inv_m[b] * self.jb[:3], inv_i[b] @ self.jb[3:]])
        self.k = float(self.ja @ self.wa + self.jb @ self.wb)

    def velocity(self, vel):
        return float(self.ja @ vel[self.a] + self.jb @ vel[self.b])

    def apply(self, vel, impulse):
        vel[self.a] += self.wa * impulse
        vel[self.b] += self.wb * impulse


def _rotational_energy(spec, quat, w):
    w_body = quat_to_matrix(quat).T @ w
    return 0.5 * float(w_body @ (spec.inertia_diagonal * w_body))


def _kinetic(vel, specs, quats):
    total = 0.0
    for k, spec in enumerate(specs):
        if spec.static:
            continue
        v = vel[k, :3]
        total += 0.5 * spec.mass * float(v @ v) + _rotational_energy(spec, quats[k], vel[k, 3:])
    return total


def _solve(vel0, rows, targets, mus, iterations):
    vel = vel0.copy()
    lam_n = np.zeros(len(rows))
    lam_t = np.zeros((len(rows), 2))
    for _ in range(iterations):
        for c, (normal, t1, t2) in enumerate(rows):
            if normal.k <= 0:
                continue
            dl = (targets[c] - normal.velocity(vel)) / normal.k
            new = max(lam_n[c] + dl, 0.0)
            normal.apply(vel, new - lam_n[c])
            lam_n[c] = new
            if mus[c] <= 0:
                continue
            old = lam_t[c].copy()
            trial = old - np.array([t1.velocity(vel) / t1.k, t2.velocity(vel) / t2.k])
            bound = mus[c] * lam_n[c]
            mag = float(np.linalg.norm(trial))
            if mag > bound:
                trial *= bound / mag
            t1.apply(vel, trial[0] - old[0])
            t2.apply(vel, trial[1] - old[1])
            lam_t[c] = trial
    return vel


def _speculative_margins(specs, vel, gravity):
    g = float(np.linalg.norm(gravity))
    out = np.zeros(len(specs))
    for k, spec in enumerate(specs):
        if spec.static:
            continue
        out[k] = np.linalg.norm(vel[k, :3]) + np.linalg.norm(vel[k, 3:]) * spec.bounding_radius + g + SPECULATIVE_PAD
    return out


class _Islands:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def join(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)

    def groups(self, members):
        out = {}
        for k in members:
            out.setdefault(self.find(k), []).append(k)
        return [out[r] for r in sorted(out)]


def _over_budget(energy, budget):
    return energy > budget + ENERGY_ROUNDING * (1.0 + abs(budget))


def _limit_velocities(specs, state, vel, energy_before, islands, gravity):
    """Scale island velocities so the coming position update cannot add energy.

    For a scale ``s`` applied to an island's post-impulse velocities, its
    end-of-step energy (before projection) is ``a*s^2 + b*s + c``; the largest
    ``s <= 1`` within the pre-step budget is used. Returns True if any island
    was scaled. Stopping the island (``s = 0``) always fits the budget, so a
    valid scale exists.
    """
    dynamic = [k for k, s in enumerate(specs) if not s.static]
    clamped = False
    for group in islands.groups(dynamic):
        a = b = c = 0.0
        for k in group:
            spec = specs[k]
            v = vel[k, :3]
            a += 0.5 * spec.mass * float(v @ v) + _rotational_energy(spec, state.quaternions[k], vel[k, 3:])
            b -= spec.mass * float(gravity @ v)
            c -= spec.mass * float(gravity @ state.positions[k])
        budget = float(energy_before[group].sum())
        if a <= 0 or not _over_budget(a + b + c, budget):
            continue
        disc = b * b - 4.0 * a * (c - budget)
        scale = (-b + np.sqrt(disc)) / (2.0 * a) if disc >= 0 else -b / (2.0 * a)
        vel[group] *= min(max(scale, 0.0), 1.0)
        clamped = True
    return clamped


def _limit_projection(specs, new, unprojected, energy_before, islands, gravity):
    """Partly undo an island's projection shift if it lifted the island's energy."""
    energy_after = body_energies(specs, new, gravity)
    dynamic = [k for k, s in enumerate(specs) if not s.static]
    clamped = False
    for group in islands.groups(dynamic):
        budget = float(energy_before[group].sum())
        after = float(energy_after[group].sum())
        if not _over_budget(after, budget):
            continue
        lift = sum(-specs[k].mass * float(gravity @ (new.positions[k] - unprojected[k])) for k in group)
        if lift <= 0:
            continue
        keep = min(max(1.0 - (after - budget) / lift, 0.0), 1.0)
        new.positions[group] = unprojected[group] + keep * (new.positions[group] - unprojected[group])
        clamped = True
    return clamped


def _project_positions(specs, positions, quaternions, cfg, islands):
    contacts = find_contacts(specs, positions, quaternions, np.zeros(len(specs)))
    deepest = {}
    for c in contacts:
        key = (c.a, c.b)
        if c.gap < -cfg.slop and (key not in deepest or c.gap < deepest[key].gap):
            deepest[key] = c
    for (a, b), c in sorted(deepest.items()):
        islands.join(a, b)
        wa, wb = specs[a].inverse_mass, specs[b].inverse_mass
        total = wa + wb
        if total == 0:
            continue
        shift = cfg.baumgarte * (-c.gap - cfg.slop) / total
        positions[a] += c.normal * (shift * wa)
        positions[b] -= c.normal * (shift * wb)


def step(state, specs, cfg=PhysicsConfig(), report=None):
    """Advance ``state`` by one unit time step and return the new state."""
    gravity = np.asarray(cfg.gravity, dtype=float)
    g_norm = float(np.linalg.norm(gravity))
    energy_before = body_energies(specs, state, gravity)
    dynamic = np.array([not s.static for s in specs])
    inv_m = np.array([s.inverse_mass for s in specs])
    inv_i = [world_inverse_inertia(s, q) for s, q in zip(specs, state.quaternions)]

    vel = np.concatenate([state.linear_velocity, state.angular_velocity], axis=1)
    vel[dynamic, :3] += gravity
    vel[~dynamic] = 0.0

    contacts = find_contacts(specs, state.positions, state.quaternions, _speculative_margins(specs, vel, gravity))
    islands = _Islands(len(specs))
    rows, mus, rests = [], [], []
    bounce_threshold = 2.0 * g_norm + 1e-9
    for c in contacts:
        if dynamic[c.a] and dynamic[c.b]:
            islands.join(c.a, c.b)
        ra = c.point - state.positions[c.a]
        rb = c.point - state.positions[c.b]
        t1, t2 = _tangents(c.normal)
        normal = _Row(c.a, c.b, ra, rb, c.normal, inv_m, inv_i)
        rows.append((normal, _Row(c.a, c.b, ra, rb, t1, inv_m, inv_i), _Row(c.a, c.b, ra, rb, t2, inv_m, inv_i)))
        vn0 = normal.velocity(vel)
        e = specs[c.a].restitution * specs[c.b].restitution
        mus.append(np.sqrt(specs[c.a].friction * specs[c.b].friction))
        gap = max(c.gap, 0.0)
        if vn0 < -bounce_threshold and gap + vn0 < 0:
            rests.append((-vn0, -gap, e))
        else:
            rests.append((0.0, -gap, 0.0))

    def targets_for(scale):
        return [s * e * scale if s * e * scale > 0 else floor for s, floor, e in rests]

    resolved = _solve(vel, rows, targets_for(1.0), mus, cfg.iterations)
    dropped = False
    if rows and _kinetic(resolved, specs, state.quaternions) > _kinetic(vel, specs, state.quaternions):
        resolved = _solve(vel, rows, targets_for(0.0), mus, cfg.iterations)
        dropped = True

    clamped = _limit_velocities(specs, state, resolved, energy_before, islands, gravity)

    positions = state.positions.copy()
    quats = state.quaternions.copy()
    for k in np.flatnonzero(dynamic):
        positions[k] += resolved[k, :3]
        w = resolved[k, 3:]
        if np.any(w != 0):
            quats[k] = quat_normalize(hamilton_product(quat_from_rotvec(w), quats[k]))
            # Free rotation keeps the spin axis fixed in the world; rescale the
            # rate so rotational kinetic energy is unchanged by the new pose.
            if np.all(specs[k].inertia_diagonal == specs[k].inertia_diagonal[0]):
                continue
            before = _rotational_energy(specs[k], state.quaternions[k], w)
            after = _rotational_energy(specs[k], quats[k], w)
            resolved[k, 3:] = w * np.sqrt(before / after)
    unprojected = positions.copy()
    _project_positions(specs, positions, quats, cfg, islands)

    new = SimState(positions, quats, resolved[:, :3].copy(), resolved[:, 3:].copy(), state.step + 1)
    clamped = _limit_projection(specs, new, unprojected, energy_before, islands, gravity) or clamped

    speeds = np.linalg.norm(new.linear_velocity, axis=1)
    if not np.all(np.isfinite(new.positions)) or np.any(speeds > cfg.max_speed):
        raise NumericalBlowup(f"speed {speeds.max():.3g} exceeds cap {cfg.max_speed} at step {new.step}")
    if report is not None:
        report.contacts = len(contacts)
        report.restitution_dropped = dropped
        report.energy_clamped = clamped
    return new
