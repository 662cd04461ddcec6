"""The equivariant filter: propagation with analytic linearization matrices,
stacked Doppler and point-constraint updates, and clone lifecycle.

A belief pairs a symmetry-group element (the estimate) with the covariance of
the error coordinates (9 nav + 9 bias + 6 extrinsic + 6 per clone).  All
operations take a belief and return a successor; beliefs are never mutated,
so independent runs can share nothing and proceed in parallel.

Process noise is a 25x25 matrix of continuous-time densities over the input
vector (10 navigation slots, 9 bias drive, 6 calibration drive); the
propagation injects B Q B^T / dt, which scales the net noise with dt as the
densities require.  The unit input slot carries no noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .lie import (
    SE3,
    SE23,
    Gal3,
    drop_time_block,
    drop_time_row,
    project_group,
    select_rot_pos_rows,
)
from .measurements import (
    DopplerNoiseSpec,
    doppler_model,
    doppler_rows,
    point_constraint_model,
    point_rows,
)
from .symmetry import (
    GRAVITY,
    SymmetryElement,
    SystemInput,
    SystemState,
    error_inverse,
    gravity_generator,
    group_compose,
    group_inverse,
    identity_state,
    input_action,
    lifted_step,
    state_action,
    state_action_inverse,
)

log = logging.getLogger(__name__)

CHI2_GATE_1DOF = 6.63   # 99% quantile


def process_noise(gyro=0.0, accel=0.0, virtual_velocity=0.0,
                  gyro_walk=0.0, accel_walk=0.0, virtual_walk=0.0,
                  cal_rot_walk=0.0, cal_pos_walk=0.0) -> np.ndarray:
    """Diagonal 25x25 input noise density matrix.  Arguments are densities
    (unit/sqrt(Hz) for sensor noise, unit*sqrt(Hz) drive for random walks)."""
    diag = np.concatenate([
        np.full(3, gyro**2),
        np.full(3, accel**2),
        np.full(3, virtual_velocity**2),
        [0.0],                       # the unit slot is deterministic
        np.full(3, gyro_walk**2),
        np.full(3, accel_walk**2),
        np.full(3, virtual_walk**2),
        np.full(3, cal_rot_walk**2),
        np.full(3, cal_pos_walk**2),
    ])
    return np.diag(diag)


@dataclass(frozen=True)
class FilterBelief:
    """Estimate on the symmetry group with its error covariance and the clone
    registry (timestamps and the feature ids each clone can still match)."""

    sym: SymmetryElement
    cov: np.ndarray
    stamps: tuple = ()
    features: tuple = ()
    last_input: SystemInput | None = None
    last_time: float | None = None

    @property
    def n_clones(self) -> int:
        return self.sym.n_clones

    @property
    def dof(self) -> int:
        return 24 + 6 * self.n_clones


def _check_covariance(cov: np.ndarray, dof: int) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (dof, dof):
        raise ValueError(f"covariance must be {dof}x{dof}, got {cov.shape}")
    if np.max(np.abs(cov - cov.T)) > 1e-9:
        raise ValueError("covariance must be symmetric")
    if np.min(np.linalg.eigvalsh(0.5 * (cov + cov.T))) < -1e-9:
        raise ValueError("covariance must be positive semidefinite")
    return 0.5 * (cov + cov.T)


def initialize(xi_init: SystemState, cov_init) -> FilterBelief:
    """Start a belief whose mean reproduces xi_init exactly."""
    cov = _check_covariance(cov_init, 24 + 6 * xi_init.n_clones)
    origin = identity_state(xi_init.n_clones, xi_init.stamps)
    return FilterBelief(
        sym=state_action_inverse(origin, xi_init),
        cov=cov,
        stamps=tuple(xi_init.stamps),
        features=tuple(frozenset() for _ in range(xi_init.n_clones)),
    )


def estimated_state(belief: FilterBelief) -> SystemState:
    origin = identity_state(belief.n_clones, belief.stamps)
    return state_action(belief.sym, origin)


_GRAVITY_STEP_CACHE: dict = {}


def _gravity_step(dt: float, gravity) -> tuple[np.ndarray, np.ndarray]:
    """Gravity increment exponential and its adjoint; constant per step size,
    so cached (one entry per dt/gravity pair seen)."""
    key = (dt, tuple(np.asarray(gravity, dtype=float)))
    hit = _GRAVITY_STEP_CACHE.get(key)
    if hit is None:
        grav_exp = Gal3.exp(-dt * gravity_generator(gravity))
        hit = (grav_exp, Gal3.adjoint(grav_exp))
        _GRAVITY_STEP_CACHE.clear()
        _GRAVITY_STEP_CACHE[key] = hit
    return hit


def propagation_matrices(origin_input: SystemInput, X: SymmetryElement,
                         dt: float, gravity=GRAVITY) -> tuple[np.ndarray, np.ndarray]:
    """Discrete-time error transition matrix and input noise matrix.

    Both are analytic: the error propagation factors into the adjoints of the
    gravity increment and the origin-input increment plus left-Jacobian terms,
    so no numerical differentiation is needed.  Clone blocks are identity in
    the transition and zero in the noise matrix.
    """
    k = X.n_clones
    grav_exp, grav_adj = _gravity_step(dt, gravity)
    input_exp = Gal3.exp(dt * origin_input.nav)
    input_jl = Gal3.left_jacobian(dt * origin_input.nav)

    gamma = drop_time_block(grav_adj)
    upsilon = drop_time_block(Gal3.adjoint(input_exp))
    a1 = gamma @ drop_time_block(input_jl) * dt
    a2 = SE3.adjoint(project_group(Gal3, SE3, grav_exp @ input_exp))

    dof = 24 + 6 * k
    A = np.eye(dof)
    A[0:9, 0:9] = gamma
    A[0:9, 9:18] = a1
    A[9:18, 9:18] = gamma @ upsilon
    A[18:24, 0:9] = select_rot_pos_rows(gamma - gamma @ upsilon)
    A[18:24, 9:18] = select_rot_pos_rows(a1)
    A[18:24, 18:24] = a2

    b1 = drop_time_row(
        -(grav_adj @ input_jl @ Gal3.adjoint(project_group(SE23, Gal3, X.nav))) * dt
    )
    b2 = -a2 @ SE3.left_jacobian(dt * origin_input.mu) @ SE3.adjoint(X.cal) * dt

    B = np.zeros((dof, 25))
    B[0:9, 0:10] = b1
    B[9:18, 10:19] = gamma @ upsilon @ SE23.adjoint(X.nav) * dt
    B[18:24, 0:10] = select_rot_pos_rows(b1)
    B[18:24, 19:25] = b2
    return A, B


def propagate(belief: FilterBelief, u: SystemInput, dt: float, Q: np.ndarray,
              dt_max: float = 0.1, gravity=GRAVITY) -> FilterBelief:
    """One prediction step: covariance through the analytic matrices, mean
    through the lifted dynamics."""
    if not 0.0 < dt <= dt_max:
        raise ValueError(f"bad timestep {dt}")
    origin = identity_state(belief.n_clones, belief.stamps)
    origin_input = input_action(group_inverse(belief.sym), u)
    A, B = propagation_matrices(origin_input, belief.sym, dt, gravity)
    cov = A @ belief.cov @ A.T + (B @ Q @ B.T) / dt
    cov = 0.5 * (cov + cov.T)
    sym = lifted_step(belief.sym, origin, u, dt, gravity)
    return replace(belief, sym=sym, cov=cov)


def _apply_update(belief: FilterBelief, C: np.ndarray, residuals: np.ndarray,
                  noise_diag: np.ndarray, gate: float | None) -> FilterBelief:
    """Shared gain computation: stacked rows, diagonal measurement noise,
    optional per-row chi-square gate applied before solving."""
    if gate is not None:
        innovation_var = np.einsum("ij,jk,ik->i", C, belief.cov, C) + noise_diag
        keep = residuals**2 <= gate * innovation_var
        if not np.any(keep):
            return belief
        C, residuals, noise_diag = C[keep], residuals[keep], noise_diag[keep]

    S = C @ belief.cov @ C.T + np.diag(noise_diag)
    S = 0.5 * (S + S.T)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        log.warning("singular innovation covariance; update skipped")
        return belief
    if np.min(np.diag(L)) ** 2 <= 1e-12 * np.max(np.diag(S)):
        log.warning("near-singular innovation covariance; update skipped")
        return belief

    K = np.linalg.solve(L.T, np.linalg.solve(L, C @ belief.cov)).T
    correction = error_inverse(K @ residuals)
    sym = group_compose(correction, belief.sym)
    cov = (np.eye(belief.dof) - K @ C) @ belief.cov
    cov = 0.5 * (cov + cov.T)
    return replace(belief, sym=sym, cov=cov)


def update_doppler(belief: FilterBelief, detections, gyro,
                   noise: DopplerNoiseSpec, gate: float | None = None) -> FilterBelief:
    """Stacked update over all Doppler returns of one scan."""
    detections = list(detections)
    if not detections:
        raise ValueError("empty scan")
    xi_hat = estimated_state(belief)
    origin_input = input_action(group_inverse(belief.sym),
                                SystemInput.from_imu(gyro, np.zeros(3)))
    R7 = noise.cov()
    rows, residuals, noise_diag = [], [], []
    for det in detections:
        row, d = doppler_rows(belief.sym, origin_input.gyro, det.point)
        rows.append(row)
        residuals.append(det.doppler - doppler_model(xi_hat, det.point, gyro))
        noise_diag.append(float(d @ R7 @ d))
    return _apply_update(belief, np.array(rows), np.array(residuals),
                         np.array(noise_diag), gate)


def update_msc(belief: FilterBelief, matches, noise: DopplerNoiseSpec,
               gate: float | None = CHI2_GATE_1DOF) -> FilterBelief:
    """Stacked update over feature re-observations against pose clones."""
    matches = list(matches)
    if not matches:
        raise ValueError("no matches")
    xi_hat = estimated_state(belief)
    R6 = noise.point_pair_cov()
    rows, residuals, noise_diag = [], [], []
    for m in matches:
        if not 0 <= m.clone_index < belief.n_clones:
            raise ValueError(f"invalid clone index {m.clone_index}")
        row, d = point_rows(belief.sym, m.clone_index, m.point_then)
        rows.append(row)
        predicted = point_constraint_model(xi_hat, m.clone_index, m.point_then)
        residuals.append(np.linalg.norm(m.point_now) - predicted)
        noise_diag.append(float(d @ R6 @ d))
    return _apply_update(belief, np.array(rows), np.array(residuals),
                         np.array(noise_diag), gate)


def _clone_error_jacobian(belief: FilterBelief, step: float = 1e-6) -> np.ndarray:
    """Sensitivity of the new clone's error to the current error, by central
    differences through the chart.  With the identity origin this equals
    selecting the extrinsic block, but differencing keeps it convention-proof.

    Only the chart path that reaches the radar pose is evaluated: the bias
    slot and the clone factors never enter it (their columns are identically
    zero), which keeps the differencing at a few matrix products per column.
    """
    nav_hat, cal_hat = belief.sym.nav, belief.sym.cal
    pose_hat = project_group(SE23, SE3, nav_hat)
    # radar pose of the estimate, written through the same chain as below
    radar_hat_inv = SE3.inverse(pose_hat @ SE3.inverse(pose_hat) @ cal_hat)

    def clone_error(eps):
        nav = SE23.exp(eps[0:9]) @ nav_hat
        cal_factor = SE3.exp(eps[18:24]) @ cal_hat
        pose = project_group(SE23, SE3, nav)
        radar = pose @ SE3.inverse(pose) @ cal_factor
        return SE3.log(radar @ radar_hat_inv)

    J = np.zeros((6, belief.dof))
    cols = list(range(0, 9)) + list(range(18, 24))
    for i in cols:
        eps = np.zeros(24)
        eps[i] = step
        plus = clone_error(eps)
        eps[i] = -step
        minus = clone_error(eps)
        J[:, i] = (plus - minus) / (2.0 * step)
    return J


def clone_augment(belief: FilterBelief, stamp: float, feature_ids,
                  k_max: int = 10) -> FilterBelief:
    """Append a clone of the current radar pose with a consistently
    correlated covariance block."""
    if belief.n_clones >= k_max:
        raise ValueError("clone window full; marginalize first")
    if belief.stamps and stamp <= belief.stamps[-1]:
        raise ValueError("clone timestamps must be strictly increasing")
    Jc = _clone_error_jacobian(belief)
    n = belief.dof
    cov = np.zeros((n + 6, n + 6))
    cov[0:n, 0:n] = belief.cov
    cross = Jc @ belief.cov
    cov[n:, 0:n] = cross
    cov[0:n, n:] = cross.T
    cov[n:, n:] = Jc @ belief.cov @ Jc.T
    sym = replace(belief.sym, clones=belief.sym.clones + (belief.sym.cal.copy(),))
    return replace(
        belief,
        sym=sym,
        cov=cov,
        stamps=belief.stamps + (float(stamp),),
        features=belief.features + (frozenset(feature_ids),),
    )


def clone_marginalize(belief: FilterBelief, index: int) -> FilterBelief:
    """Drop one clone and its covariance rows and columns."""
    if not 0 <= index < belief.n_clones:
        raise ValueError(f"invalid clone index {index}")
    sel = list(range(belief.dof))
    del sel[24 + 6 * index : 30 + 6 * index]
    clones = tuple(F for i, F in enumerate(belief.sym.clones) if i != index)
    return replace(
        belief,
        sym=replace(belief.sym, clones=clones),
        cov=belief.cov[np.ix_(sel, sel)],
        stamps=tuple(s for i, s in enumerate(belief.stamps) if i != index),
        features=tuple(f for i, f in enumerate(belief.features) if i != index),
    )


def retain_features(belief: FilterBelief, index: int, feature_ids) -> FilterBelief:
    """Shrink a clone's matchable feature set (lifecycle bookkeeping)."""
    features = list(belief.features)
    features[index] = frozenset(feature_ids)
    return replace(belief, features=tuple(features))
