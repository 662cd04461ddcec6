"""State space and symmetry of the radar-aided inertial navigation system.

The physical state couples an extended pose (attitude, velocity, position)
with a 9-dimensional bias vector (gyroscope, accelerometer and a virtual
velocity bias), the radar-to-IMU extrinsic pose, and a sliding window of
past radar poses ("clones").

The symmetry group acting on that state is the tangent group of the extended
poses (an extended pose paired with an algebra vector that shifts the
biases), times one rigid transform for the calibration and one per clone.
The filter estimates a group element; the physical estimate is the image of
the identity-origin state under the group action.  Error coordinates are the
group logarithm of the group element carrying the estimate onto the truth,
which is what gives the filter its large basin of attraction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .lie import (
    SE3,
    SE23,
    Gal3,
    TangentSE23,
    project_algebra,
    project_group,
)

GRAVITY = np.array([0.0, 0.0, -9.81])


def gravity_generator(gravity=GRAVITY) -> np.ndarray:
    """Gal(3) algebra coordinates whose exponential applies gravity and the
    unit time shift over a step: (0, -g, 0, 1)."""
    return np.concatenate([np.zeros(3), -np.asarray(gravity, dtype=float), np.zeros(3), [1.0]])


@dataclass(frozen=True)
class SystemState:
    """Physical state: extended pose, biases, radar extrinsics, pose clones.

    pose    5x5 extended pose (attitude, velocity m/s, position m)
    bias    (9,) gyro bias rad/s, accel bias m/s^2, virtual velocity bias m/s
    cal     4x4 radar pose in the IMU frame
    clones  past radar poses, 4x4 each
    stamps  clone timestamps, strictly increasing
    """

    pose: np.ndarray
    bias: np.ndarray
    cal: np.ndarray
    clones: tuple = ()
    stamps: tuple = ()

    def __post_init__(self):
        if len(self.clones) != len(self.stamps):
            raise ValueError("one timestamp per clone required")
        if any(b >= a for a, b in zip(self.stamps[1:], self.stamps)):
            raise ValueError("clone timestamps must be strictly increasing")

    @property
    def n_clones(self) -> int:
        return len(self.clones)

    def attitude(self) -> np.ndarray:
        return self.pose[0:3, 0:3]

    def velocity(self) -> np.ndarray:
        return self.pose[0:3, 3]

    def position(self) -> np.ndarray:
        return self.pose[0:3, 4]

    def radar_pose(self) -> np.ndarray:
        """Current radar pose in the world frame."""
        return project_group(SE23, SE3, self.pose) @ self.cal


def identity_state(n_clones: int = 0, stamps: tuple = ()) -> SystemState:
    if not stamps:
        stamps = tuple(float(i) for i in range(n_clones))
    return SystemState(
        pose=np.eye(5),
        bias=np.zeros(9),
        cal=np.eye(4),
        clones=tuple(np.eye(4) for _ in range(n_clones)),
        stamps=tuple(stamps),
    )


@dataclass(frozen=True)
class SymmetryElement:
    """Element of the symmetry group.

    nav         5x5 extended pose transporting the navigation states
    bias_shift  (9,) algebra vector shifting the biases (tangent-group slot)
    cal         4x4 transport of the extrinsic pose
    clones      4x4 transports of the pose clones
    """

    nav: np.ndarray
    bias_shift: np.ndarray
    cal: np.ndarray
    clones: tuple = ()

    @property
    def n_clones(self) -> int:
        return len(self.clones)


def group_identity(n_clones: int = 0) -> SymmetryElement:
    return SymmetryElement(
        nav=np.eye(5),
        bias_shift=np.zeros(9),
        cal=np.eye(4),
        clones=tuple(np.eye(4) for _ in range(n_clones)),
    )


def group_compose(X: SymmetryElement, Y: SymmetryElement) -> SymmetryElement:
    if X.n_clones != Y.n_clones:
        raise ValueError("clone count mismatch")
    nav, shift = TangentSE23.compose((X.nav, X.bias_shift), (Y.nav, Y.bias_shift))
    return SymmetryElement(
        nav=nav,
        bias_shift=shift,
        cal=X.cal @ Y.cal,
        clones=tuple(Fx @ Fy for Fx, Fy in zip(X.clones, Y.clones)),
    )


def group_inverse(X: SymmetryElement) -> SymmetryElement:
    nav, shift = TangentSE23.inverse((X.nav, X.bias_shift))
    return SymmetryElement(
        nav=nav,
        bias_shift=shift,
        cal=SE3.inverse(X.cal),
        clones=tuple(SE3.inverse(F) for F in X.clones),
    )


def group_exp(eps) -> SymmetryElement:
    """Group exponential of stacked error coordinates
    (9 nav, 9 bias, 6 extrinsic, 6 per clone)."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape[0] < 24 or (eps.shape[0] - 24) % 6 != 0:
        raise ValueError(f"error vector length {eps.shape[0]} is not 24 + 6k")
    k = (eps.shape[0] - 24) // 6
    nav, shift = TangentSE23.exp(eps[0:9], eps[9:18])
    return SymmetryElement(
        nav=nav,
        bias_shift=shift,
        cal=SE3.exp(eps[18:24]),
        clones=tuple(SE3.exp(eps[24 + 6 * i : 30 + 6 * i]) for i in range(k)),
    )


def group_log(X: SymmetryElement) -> np.ndarray:
    nav, shift = TangentSE23.log((X.nav, X.bias_shift))
    parts = [nav, shift, SE3.log(X.cal)]
    parts.extend(SE3.log(F) for F in X.clones)
    return np.concatenate(parts)


@dataclass(frozen=True)
class SystemInput:
    """System input: IMU-driven navigation input plus bias and calibration
    drive terms.

    nav  (10,) gyro rad/s, accel m/s^2, virtual velocity input (zero), unit 1
    tau  (9,) bias evolution input
    mu   (6,) extrinsic evolution input
    """

    nav: np.ndarray
    tau: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        if np.asarray(self.nav).shape != (10,):
            raise ValueError("nav input must be a 10-vector")
        if self.nav[9] != 1.0:
            raise ValueError("nav input unit slot must be exactly 1")

    @property
    def gyro(self) -> np.ndarray:
        return self.nav[0:3]

    @property
    def accel(self) -> np.ndarray:
        return self.nav[3:6]

    @staticmethod
    def from_imu(gyro, accel) -> "SystemInput":
        nav = np.concatenate([np.asarray(gyro, dtype=float),
                              np.asarray(accel, dtype=float),
                              np.zeros(3), [1.0]])
        return SystemInput(nav=nav, tau=np.zeros(9), mu=np.zeros(6))


# --- actions -----------------------------------------------------------------

def state_action(X: SymmetryElement, xi: SystemState) -> SystemState:
    """Right action of the symmetry group on the state space."""
    if X.n_clones != xi.n_clones:
        raise ValueError("clone count mismatch")
    nav_inv = SE23.inverse(X.nav)
    return SystemState(
        pose=xi.pose @ X.nav,
        bias=SE23.adjoint(nav_inv) @ (xi.bias - X.bias_shift),
        cal=project_group(SE23, SE3, nav_inv) @ xi.cal @ X.cal,
        clones=tuple(P @ F for P, F in zip(xi.clones, X.clones)),
        stamps=xi.stamps,
    )


def state_action_inverse(origin: SystemState, xi: SystemState) -> SymmetryElement:
    """The unique group element carrying origin onto xi (the action is free
    and transitive, so this is well defined)."""
    if origin.n_clones != xi.n_clones:
        raise ValueError("clone count mismatch")
    nav = SE23.inverse(origin.pose) @ xi.pose
    return SymmetryElement(
        nav=nav,
        bias_shift=origin.bias - SE23.adjoint(nav) @ xi.bias,
        cal=SE3.inverse(origin.cal) @ project_group(SE23, SE3, nav) @ xi.cal,
        clones=tuple(
            SE3.inverse(Po) @ P for Po, P in zip(origin.clones, xi.clones)
        ),
    )


def input_action(X: SymmetryElement, u: SystemInput) -> SystemInput:
    """Right action of the symmetry group on the input space.  Preserves the
    unit slot of the navigation input."""
    nav_inv = SE23.inverse(X.nav)
    w = Gal3.adjoint(project_group(SE23, Gal3, nav_inv)) @ (
        u.nav - project_algebra(SE23, Gal3, X.bias_shift)
    )
    return SystemInput(
        nav=w,
        tau=SE23.adjoint(nav_inv) @ u.tau,
        mu=SE3.adjoint(SE3.inverse(X.cal)) @ u.mu,
    )


# --- dynamics and lift ---------------------------------------------------------

def _input_step(u: SystemInput, bias: np.ndarray, dt: float) -> np.ndarray:
    """Gal(3) increment of the bias-corrected navigation input over dt."""
    return Gal3.exp(dt * (u.nav - project_algebra(SE23, Gal3, bias)))


def discrete_dynamics(xi: SystemState, u: SystemInput, dt: float,
                      gravity=GRAVITY) -> SystemState:
    """Exact zero-order-hold discretization of the navigation kinematics.

    The extended pose is sandwiched between the gravity increment and the
    bias-corrected input increment, both Galilean exponentials; their time
    shifts cancel so the result projects back to an extended pose without
    loss.  Biases and extrinsics integrate their drive inputs; clones are
    static.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    drift = Gal3.exp(-dt * gravity_generator(gravity))
    pose_g = project_group(SE23, Gal3, xi.pose)
    pose = project_group(Gal3, SE23, drift @ pose_g @ _input_step(u, xi.bias, dt))
    return replace(
        xi,
        pose=pose,
        bias=xi.bias + dt * u.tau,
        cal=xi.cal @ SE3.exp(dt * u.mu),
    )


def lift(xi: SystemState, u: SystemInput, dt: float, gravity=GRAVITY) -> SymmetryElement:
    """Group increment whose action reproduces one step of the dynamics:
    state_action(lift(xi, u, dt), xi) == discrete_dynamics(xi, u, dt).
    Clone slots are static, so their lift is the identity."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    pose_g = project_group(SE23, Gal3, xi.pose)
    grav_local = Gal3.adjoint(Gal3.inverse(pose_g)) @ gravity_generator(gravity)
    nav = project_group(
        Gal3, SE23, Gal3.exp(-dt * grav_local) @ _input_step(u, xi.bias, dt)
    )
    cal_inv = SE3.inverse(xi.cal)
    return SymmetryElement(
        nav=nav,
        bias_shift=xi.bias - SE23.adjoint(nav) @ (xi.bias + dt * u.tau),
        cal=cal_inv @ project_group(SE23, SE3, nav) @ xi.cal @ SE3.exp(dt * u.mu),
        clones=tuple(np.eye(4) for _ in xi.clones),
    )


def lifted_step(X: SymmetryElement, origin: SystemState, u: SystemInput,
                dt: float, gravity=GRAVITY) -> SymmetryElement:
    """One step of the lifted dynamics on the group, anchored at origin.

    Equals composing X with the lift at the current estimate, but the
    extrinsic slot is evaluated in the rearranged form
    origin.cal^-1 * pose-projection(nav+) * estimated-extrinsic * exp(mu dt):
    the direct product X.cal @ lift(...).cal sandwiches the lift between the
    extrinsic factor and its inverse, which doubles any off-orthonormal
    rounding error in that factor every step and diverges geometrically on
    long runs.  The rearrangement touches the factor once, so rounding error
    only accumulates linearly.
    """
    est = state_action(X, origin)
    L = lift(est, u, dt, gravity)
    nav, shift = TangentSE23.compose((X.nav, X.bias_shift), (L.nav, L.bias_shift))
    cal = (
        SE3.inverse(origin.cal)
        @ project_group(SE23, SE3, nav)
        @ est.cal
        @ SE3.exp(dt * u.mu)
    )
    return SymmetryElement(nav=nav, bias_shift=shift, cal=cal, clones=X.clones)


# --- error chart ----------------------------------------------------------------

def error_coordinates(X_hat: SymmetryElement, xi: SystemState,
                      origin: SystemState) -> np.ndarray:
    """Normal coordinates of the discrepancy between the estimate X_hat and
    the true state xi, anchored at origin.  Zero exactly when xi is the
    estimate's image of the origin."""
    e = state_action(group_inverse(X_hat), xi)
    return group_log(state_action_inverse(origin, e))


def error_inverse(eps) -> SymmetryElement:
    """Group element realizing the given error coordinates; inverse of
    error_coordinates in the sense that the error of group_compose(
    error_inverse(eps), X_hat) relative to X_hat is eps."""
    return group_exp(eps)
