from .broadphase import Aabb, aabb_pairs, aabb_pairs_bruteforce
from .quaternion import (
    IDENTITY,
    hamilton_product,
    quat_canonical,
    quat_conjugate,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_from_rotvec,
    quat_inverse,
    quat_normalize,
    quat_rotate,
    quat_to_matrix,
    quat_vector_norm,
)
from .shape_matching import RigidFit, jacobi_eigh, shape_match
from .triangles import closest_points, closest_points_batch, triangle_normal
