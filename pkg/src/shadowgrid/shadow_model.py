"""Closed-form model of how a moving shadow edge biases a voxel mean.

A thin occluder at distance ``rho_l`` from the Lidar casts a shadow onto a
surface ``rho_v`` farther away. When the Lidar moves by ``delta_cap``, the
shadow edge moves by ``rho_v / rho_l * delta_cap`` (similar triangles), and
under a one-dimensional uniform-density approximation the mean of the lit
points in a voxel cut by that edge moves by half as much.

These functions are reference oracles for the validation suite; the matcher
never calls them.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ShadowScenario:
    rho_l: float  # lidar to occluder [m]
    rho_v: float  # occluder to voxel [m]
    delta_cap: float  # lidar displacement parallel to the edge shift [m]

    def __post_init__(self):
        if not self.rho_l > 0:
            raise ValueError("rho_l must be positive")
        if self.rho_v < 0:
            raise ValueError("rho_v must be non-negative")


def shadow_edge_shift(s: ShadowScenario) -> float:
    return s.rho_v / s.rho_l * s.delta_cap


def apparent_mean_shift(s: ShadowScenario) -> float:
    """Magnitude of the voxel-mean shift; assumes the edge stays inside the voxel."""
    return 0.5 * shadow_edge_shift(s)
