"""Reference instances and initial-state samplers used by the tests and the CLI."""
from __future__ import annotations

import numpy as np

from .model import ProblemInstance

A_3D = np.array([[0.53, -2.17, 0.62],
                 [0.22, -0.06, 0.51],
                 [-0.92, -1.01, 1.69]])
B_3D = np.array([[0.4], [0.7], [0.9]])


def example2(N: int = 7, eps: float = 0.25, x0=(0.0, -1.0)) -> ProblemInstance:
    """Second-order unstable plant with ``Q = P = 2I``, ``R = 5``."""
    return ProblemInstance(A=[[0.9, 0.2], [0.8, 1.5]], B=[[0.6], [0.8]], Q=2 * np.eye(2), R=[[5.0]],
                           P=2 * np.eye(2), x0=list(x0), eps=eps, N=N)


def plant3d(x0, eps: float = 0.2, N: int = 8) -> ProblemInstance:
    """Third-order unstable plant with ``Q = P = 2I``, ``R = 5``."""
    return ProblemInstance(A=A_3D, B=B_3D, Q=2 * np.eye(3), R=[[5.0]], P=2 * np.eye(3),
                           x0=np.asarray(x0, dtype=float), eps=eps, N=N)


def mpc_instance(eps: float = 0.4, N: int = 6) -> ProblemInstance:
    """Receding-horizon setup started from ``[0, sqrt(2)/2, -sqrt(2)/2]``."""
    r = np.sqrt(2.0) / 2.0
    return plant3d([0.0, r, -r], eps=eps, N=N)


def half_sphere_points(count: int) -> np.ndarray:
    """``count`` near-equidistant unit vectors ``[sin t cos p, sin t sin p, cos t]`` with p in [0, pi].

    Golden-angle spiral: ``cos t`` is stratified uniformly, which makes the
    points equal-area, and p advances by the golden angle modulo pi.
    """
    if count < 1:
        raise ValueError("count must be positive")
    i = np.arange(count)
    ct = 1.0 - (2.0 * i + 1.0) / count
    st = np.sqrt(1.0 - ct ** 2)
    phi = np.mod(i * np.pi * (3.0 - np.sqrt(5.0)), np.pi)
    return np.column_stack([st * np.cos(phi), st * np.sin(phi), ct])


def circle_initial_states(radius: float = 1.2, count: int = 12) -> np.ndarray:
    """``radius * [sin(pi k / 6), cos(pi k / 6)]`` for ``k = 0 .. count-1``."""
    k = np.arange(count)
    return radius * np.column_stack([np.sin(np.pi * k / 6.0), np.cos(np.pi * k / 6.0)])
