"""Shared test utilities: random element generators and numerical oracles."""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from eqfrio.lie import SO3


def random_coords(rng, group, rot_scale=1.0, lin_scale=1.0):
    """Random algebra coordinates with the rotation block scaled separately."""
    v = lin_scale * rng.standard_normal(group.dim)
    v[0:3] = rot_scale * rng.standard_normal(3)
    return v


def random_element(rng, group, rot_scale=1.0, lin_scale=1.0):
    return group.exp(random_coords(rng, group, rot_scale, lin_scale))


def random_rotation(rng, scale=1.0):
    return SO3.exp(scale * rng.standard_normal(3))


def expm_oracle(group, coords):
    """Scaling-and-squaring matrix exponential of the wedge embedding."""
    return expm(group.wedge(coords))


def adjoint_conjugation_oracle(group, X):
    """Adjoint matrix built column-wise from X wedge(e_i) X^-1."""
    n = group.dim
    Xinv = group.inverse(X)
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        cols.append(group.vee(X @ group.wedge(e) @ Xinv))
    return np.column_stack(cols)


def left_jacobian_quadrature_oracle(group, coords, panels=64):
    """Simpson quadrature of the integral of Ad(exp(s u)) over s in [0, 1]."""
    assert panels % 2 == 0
    s = np.linspace(0.0, 1.0, panels + 1)
    weights = np.ones(panels + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    weights *= (s[1] - s[0]) / 3.0
    total = np.zeros((group.dim, group.dim))
    for si, wi in zip(s, weights):
        total += wi * group.adjoint(group.exp(si * coords))
    return total


def central_difference(func, x0, step=1e-6):
    """Central finite-difference Jacobian of func at x0, one column per input."""
    x0 = np.asarray(x0, dtype=float)
    f0 = np.atleast_1d(np.asarray(func(x0), dtype=float))
    J = np.zeros((f0.size, x0.size))
    for i in range(x0.size):
        dx = np.zeros_like(x0)
        dx[i] = step
        fp = np.atleast_1d(np.asarray(func(x0 + dx), dtype=float))
        fm = np.atleast_1d(np.asarray(func(x0 - dx), dtype=float))
        J[:, i] = (fp - fm) / (2.0 * step)
    return J


def assert_close(actual, desired, rtol, label=""):
    """Relative Frobenius-norm comparison with a scale-aware floor."""
    actual = np.asarray(actual, dtype=float)
    desired = np.asarray(desired, dtype=float)
    scale = max(np.linalg.norm(desired), 1e-12)
    err = np.linalg.norm(actual - desired) / scale
    assert err <= rtol, f"{label} relative error {err:.3e} > {rtol:.1e}"
