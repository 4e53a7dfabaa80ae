"""Coordinate conversions and rigid-body transforms.

Conventions used throughout the package:

* Spherical coordinates are ``(r, alpha, beta)`` with azimuth ``alpha`` in
  ``[-pi, pi)`` measured from +x toward +y, and elevation ``beta`` in
  ``[-pi/2, pi/2]`` measured up from the x-y plane.
* A :class:`RigidTransform` maps secondary-scan coordinates ``p`` into
  primary-scan coordinates as ``q = R @ p - t``. The translation is
  *subtracted*; solver Jacobians are written against this form.
* Euler angles are intrinsic Z-Y-X: ``R = Rz(psi) @ Ry(theta) @ Rx(phi)``
  (yaw, pitch, roll).

Functions accept a single point of shape ``(3,)`` or a batch ``(n, 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi
GIMBAL_GUARD = 1e-6
_ORIGIN_EPS = 1e-12


class DegenerateOriginError(ValueError):
    """Raised when a point too close to the origin has no defined direction."""


class GimbalLockError(ValueError):
    """Raised when Z-Y-X Euler angles cannot be recovered uniquely."""


def wrap_angle(a):
    """Wrap angles into ``[-pi, pi)``."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, TWO_PI) - np.pi
    # mod can round up to exactly 2*pi for inputs just below an odd multiple of pi
    return np.where(w >= np.pi, w - TWO_PI, w)


def cartesian_from_spherical(sph) -> np.ndarray:
    """Convert ``(r, alpha, beta)`` rows to ``(x, y, z)`` rows."""
    sph = np.asarray(sph, dtype=float)
    r, alpha, beta = sph[..., 0], sph[..., 1], sph[..., 2]
    cb = np.cos(beta)
    return np.stack([r * np.cos(alpha) * cb, r * np.sin(alpha) * cb, r * np.sin(beta)], axis=-1)


def spherical_from_cartesian(q, *, check_origin: bool = True) -> np.ndarray:
    """Convert ``(x, y, z)`` rows to ``(r, alpha, beta)`` rows.

    On the poles (x = y = 0) the azimuth is defined as 0.

    Raises:
        DegenerateOriginError: if any point lies within 1e-12 m of the origin
            and ``check_origin`` is set.
    """
    q = np.asarray(q, dtype=float)
    x, y, z = q[..., 0], q[..., 1], q[..., 2]
    rho = np.hypot(x, y)
    r = np.hypot(rho, z)
    if check_origin and np.any(r < _ORIGIN_EPS):
        raise DegenerateOriginError("point at the origin has no spherical direction")
    alpha = wrap_angle(np.arctan2(y, x))
    alpha = np.where(rho == 0.0, 0.0, alpha)
    beta = np.arctan2(z, rho)
    return np.stack([r, alpha, beta], axis=-1)


def _rx(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_euler(phi: float, theta: float, psi: float) -> np.ndarray:
    """Roll/pitch/yaw to a rotation matrix, ``Rz(psi) @ Ry(theta) @ Rx(phi)``."""
    return _rz(psi) @ _ry(theta) @ _rx(phi)


def euler_from_rotation(R) -> tuple[float, float, float]:
    """Inverse of :func:`rotation_from_euler`, returning ``(phi, theta, psi)``.

    Raises:
        GimbalLockError: if pitch is within 1e-6 rad of +-pi/2.
    """
    R = np.asarray(R, dtype=float)
    s = -R[2, 0]
    c = np.hypot(R[2, 1], R[2, 2])
    theta = np.arctan2(s, c)
    if abs(abs(theta) - np.pi / 2) < GIMBAL_GUARD:
        raise GimbalLockError(f"pitch {theta:.9f} rad is at gimbal lock")
    phi = np.arctan2(R[2, 1], R[2, 2])
    psi = np.arctan2(R[1, 0], R[0, 0])
    return float(phi), float(theta), float(psi)


def euler_derivatives(phi: float, theta: float, psi: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partial derivatives of the Z-Y-X rotation with respect to roll, pitch and yaw."""
    Rx, Ry, Rz = _rx(phi), _ry(theta), _rz(psi)
    cx, sx = np.cos(phi), np.sin(phi)
    cy, sy = np.cos(theta), np.sin(theta)
    cz, sz = np.cos(psi), np.sin(psi)
    dRx = np.array([[0.0, 0.0, 0.0], [0.0, -sx, -cx], [0.0, cx, -sx]])
    dRy = np.array([[-sy, 0.0, cy], [0.0, 0.0, 0.0], [-cy, 0.0, -sy]])
    dRz = np.array([[-sz, -cz, 0.0], [cz, -sz, 0.0], [0.0, 0.0, 0.0]])
    return Rz @ Ry @ dRx, Rz @ dRy @ Rx, dRz @ Ry @ Rx


@dataclass(frozen=True)
class RigidTransform:
    """Rotation plus subtracted translation: ``q = rotation @ p - translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("transform has non-finite entries")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation is not a proper orthonormal matrix")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_state(cls, state) -> "RigidTransform":
        """Build from the 6-vector ``(x, y, z, phi, theta, psi)``."""
        x, y, z, phi, theta, psi = np.asarray(state, dtype=float)
        return cls(rotation_from_euler(phi, theta, psi), np.array([x, y, z]))

    @classmethod
    def from_pose(cls, position, yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0) -> "RigidTransform":
        """Sensor-to-world transform for a sensor located at ``position``.

        With the subtracted-translation convention, ``translation = -position``.
        """
        return cls(rotation_from_euler(roll, pitch, yaw), -np.asarray(position, dtype=float))

    @property
    def position(self) -> np.ndarray:
        """Image of the source-frame origin, i.e. ``-translation``."""
        return -self.translation

    def state(self) -> np.ndarray:
        phi, theta, psi = euler_from_rotation(self.rotation)
        return np.array([*self.translation, phi, theta, psi])

    def apply(self, p) -> np.ndarray:
        return apply_transform(self, p)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)


def apply_transform(t: RigidTransform, p) -> np.ndarray:
    """Map points into the target frame: ``R @ p - translation``."""
    p = np.asarray(p, dtype=float)
    return p @ t.rotation.T - t.translation


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``b`` first, then ``a``."""
    R = a.rotation @ b.rotation
    t = a.rotation @ b.translation + a.translation
    return RigidTransform(_reorthonormalize(R), t)


def invert(t: RigidTransform) -> RigidTransform:
    Rt = t.rotation.T
    return RigidTransform(Rt, -Rt @ t.translation)


def relative_transform(primary_pose: RigidTransform, secondary_pose: RigidTransform) -> RigidTransform:
    """Transform taking secondary-sensor coordinates into primary-sensor coordinates.

    Both poses map their sensor frame into the world frame.
    """
    return compose(invert(primary_pose), secondary_pose)


def _reorthonormalize(R: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out
