"""Small Lie-group layer: R^n, SO(2), SE(2), SO(3), SE(3).

All perturbations are on the left, ``X <- exp(xi^) X``, and tangent vectors of
the SE(n) groups are ordered ``[phi; rho]`` (rotation block first).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

_SMALL_ANGLE = 1e-7
_PI_GUARD = 1e-9

KINDS = ("R", "SO2", "SE2", "SO3", "SE3")


class LieError(ValueError):
    """Raised on dimension mismatches and logarithm singularities."""


def wedge_so3(phi):
    x, y, z = phi
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee_so3(W):
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def _so2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _so3_exp(phi):
    theta = np.linalg.norm(phi)
    W = wedge_so3(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * W @ W
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * W + b * W @ W


def _so3_log(C):
    s = 0.5 * np.linalg.norm(vee_so3(C - C.T))
    c = 0.5 * (np.trace(C) - 1.0)
    theta = np.arctan2(s, c)
    if np.pi - theta < _PI_GUARD:
        raise LieError("SO(3) logarithm is singular at a rotation of pi")
    if theta < _SMALL_ANGLE:
        return vee_so3(C - C.T) * 0.5 * (1.0 + theta**2 / 6.0)
    return vee_so3(C - C.T) * (theta / (2.0 * np.sin(theta)))


def _so3_left_jacobian(phi):
    theta = np.linalg.norm(phi)
    W = wedge_so3(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + W @ W / 6.0
    return (
        np.eye(3)
        + (1.0 - np.cos(theta)) / theta**2 * W
        + (theta - np.sin(theta)) / theta**3 * W @ W
    )


def _so3_left_jacobian_inv(phi):
    theta = np.linalg.norm(phi)
    W = wedge_so3(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + W @ W / 12.0
    coef = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) - 0.5 * W + coef * W @ W


def _se2_v(theta):
    """Left Jacobian of SO(2) acting on the translation block of SE(2)."""
    if abs(theta) < _SMALL_ANGLE:
        a = 1.0 - theta**2 / 6.0
        b = 0.5 * theta
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta
    return np.array([[a, -b], [b, a]])


@dataclass(frozen=True)
class ManifoldElement:
    """A state on R^n or one of the rotation/rigid-body groups.

    For ``kind == "R"`` only ``coords`` is set. Rotation groups carry
    ``rotation`` and, for SE(n), ``translation``.
    """

    kind: str
    coords: Optional[np.ndarray] = None
    rotation: Optional[np.ndarray] = None
    translation: Optional[np.ndarray] = None

    @property
    def dof(self) -> int:
        return tangent_dim(self)

    def matrix(self) -> np.ndarray:
        if self.kind == "R":
            raise LieError("R^n elements have no matrix form")
        if self.kind in ("SO2", "SO3"):
            return self.rotation.copy()
        n = self.rotation.shape[0]
        T = np.eye(n + 1)
        T[:n, :n] = self.rotation
        T[:n, n] = self.translation
        return T

    def __matmul__(self, other: "ManifoldElement") -> "ManifoldElement":
        return compose(self, other)


def real_vector(values) -> ManifoldElement:
    return ManifoldElement("R", coords=np.atleast_1d(np.asarray(values, dtype=float)).copy())


def rotation(C) -> ManifoldElement:
    C = np.asarray(C, dtype=float)
    return ManifoldElement("SO2" if C.shape == (2, 2) else "SO3", rotation=C.copy())


def pose(C, r) -> ManifoldElement:
    C = np.asarray(C, dtype=float)
    kind = "SE2" if C.shape == (2, 2) else "SE3"
    return ManifoldElement(kind, rotation=C.copy(), translation=np.asarray(r, dtype=float).copy())


def identity(kind: str, n: int = 1) -> ManifoldElement:
    if kind == "R":
        return real_vector(np.zeros(n))
    if kind == "SO2":
        return rotation(np.eye(2))
    if kind == "SO3":
        return rotation(np.eye(3))
    if kind == "SE2":
        return pose(np.eye(2), np.zeros(2))
    if kind == "SE3":
        return pose(np.eye(3), np.zeros(3))
    raise LieError(f"unknown manifold kind {kind!r}")


def tangent_dim(X: ManifoldElement) -> int:
    if X.kind == "R":
        return X.coords.shape[0]
    return {"SO2": 1, "SE2": 3, "SO3": 3, "SE3": 6}[X.kind]


def _expected_dim(kind: str, xi: np.ndarray) -> int:
    if kind == "R":
        return xi.shape[0]
    try:
        return {"SO2": 1, "SE2": 3, "SO3": 3, "SE3": 6}[kind]
    except KeyError:
        raise LieError(f"unknown manifold kind {kind!r}") from None


def exp_map(xi, kind: str) -> ManifoldElement:
    """Group exponential of a tangent vector (``[phi; rho]`` for SE(n))."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.ndim != 1 or xi.shape[0] != _expected_dim(kind, xi):
        raise LieError(f"tangent vector of shape {xi.shape} does not fit {kind}")
    if not np.all(np.isfinite(xi)):
        raise LieError("tangent vector is not finite")
    if kind == "R":
        return real_vector(xi)
    if kind == "SO2":
        return rotation(_so2(xi[0]))
    if kind == "SE2":
        return pose(_so2(xi[0]), _se2_v(xi[0]) @ xi[1:])
    if kind == "SO3":
        return rotation(_so3_exp(xi))
    return pose(_so3_exp(xi[:3]), _so3_left_jacobian(xi[:3]) @ xi[3:])


def _so2_angle(C):
    theta = np.arctan2(C[1, 0], C[0, 0])
    if np.pi - abs(theta) < _PI_GUARD:
        raise LieError("SO(2) logarithm is singular at a rotation of pi")
    return theta


def log_map(X: ManifoldElement) -> np.ndarray:
    if X.kind == "R":
        return X.coords.copy()
    if X.kind == "SO2":
        return np.array([_so2_angle(X.rotation)])
    if X.kind == "SE2":
        theta = _so2_angle(X.rotation)
        rho = np.linalg.solve(_se2_v(theta), X.translation)
        return np.concatenate(([theta], rho))
    if X.kind == "SO3":
        return _so3_log(X.rotation)
    if X.kind == "SE3":
        phi = _so3_log(X.rotation)
        return np.concatenate((phi, _so3_left_jacobian_inv(phi) @ X.translation))
    raise LieError(f"unknown manifold kind {X.kind!r}")


def inverse(X: ManifoldElement) -> ManifoldElement:
    if X.kind == "R":
        return real_vector(-X.coords)
    Ct = X.rotation.T
    if X.kind in ("SO2", "SO3"):
        return rotation(Ct)
    return pose(Ct, -Ct @ X.translation)


def compose(X: ManifoldElement, Y: ManifoldElement) -> ManifoldElement:
    if X.kind != Y.kind:
        raise LieError(f"cannot compose {X.kind} with {Y.kind}")
    if X.kind == "R":
        if X.coords.shape != Y.coords.shape:
            raise LieError("R^n dimension mismatch")
        return real_vector(X.coords + Y.coords)
    C = X.rotation @ Y.rotation
    if X.kind in ("SO2", "SO3"):
        return rotation(C)
    return pose(C, X.rotation @ Y.translation + X.translation)


def oplus(X: ManifoldElement, xi) -> ManifoldElement:
    """Left perturbation ``exp(xi^) X``; plain addition on R^n."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.shape != (tangent_dim(X),):
        raise LieError(f"perturbation of shape {xi.shape} does not fit {X.kind} with {tangent_dim(X)} dof")
    if X.kind == "R":
        return real_vector(X.coords + xi)
    return compose(exp_map(xi, X.kind), X)


def ominus(X1: ManifoldElement, X2: ManifoldElement) -> np.ndarray:
    """``log(X1 X2^-1)``, so that ``oplus(X2, ominus(X1, X2)) == X1``."""
    if X1.kind != X2.kind:
        raise LieError(f"cannot subtract {X2.kind} from {X1.kind}")
    if X1.kind == "R":
        if X1.coords.shape != X2.coords.shape:
            raise LieError("R^n dimension mismatch")
        return X1.coords - X2.coords
    return log_map(compose(X1, inverse(X2)))


def orthonormality_error(X: ManifoldElement) -> float:
    """Frobenius norm of ``C^T C - I`` plus the determinant deviation."""
    if X.kind == "R":
        return 0.0
    C = X.rotation
    n = C.shape[0]
    return float(np.linalg.norm(C.T @ C - np.eye(n)) + abs(np.linalg.det(C) - 1.0))


def rotation_block(kind: str) -> slice:
    """Tangent slice holding the rotation coordinates of ``kind``."""
    return {"SO2": slice(0, 1), "SE2": slice(0, 1), "SO3": slice(0, 3), "SE3": slice(0, 3)}[kind]


def translation_block(kind: str) -> slice:
    return {"SE2": slice(1, 3), "SE3": slice(3, 6)}[kind]
