"""Deterministic impulse-based rigid-body simulator used as ground truth."""

from .bodies import ObjectSpec, SimState, mechanical_energy
from .contacts import Contact, find_contacts, min_separation
from .physics import PhysicsConfig, StepReport, step
from .scenes import generate_scene, run, simulate_trajectory, trajectory_from_states
