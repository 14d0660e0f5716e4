"""Sheep flock dynamics: velocities, analytic Jacobians, accelerations.

The flock model is first order. Each sheep's velocity is an
attraction/repulsion sum over the other sheep (zero at separation r_s)
plus an inverse-cube repulsion away from every dog, squashed per axis
through tanh so no component ever reaches v_bar. Dogs influence sheep
*accelerations* only through the velocity Jacobians, which is what the
herding controller exploits.

The Jacobian formulas are derived directly from the velocity law and are
pinned to central finite differences in the test suite rather than
trusted as typeset anywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from shepherd._backend import CoincidentAgentsError, flock_terms
from shepherd.params import FlockParams, WorldState

__all__ = [
    "CoincidentAgentsError",
    "FlockState",
    "evaluate_flock",
    "sheep_velocity",
    "sheep_jacobian_wrt_sheep",
    "sheep_jacobian_wrt_dog",
    "sheep_acceleration",
]

DEFAULT_EPS = 1e-9


@dataclass(frozen=True)
class FlockState:
    """Batched dynamics terms for one world snapshot.

    velocities  (n, 2)        saturated sheep velocities
    raw         (n, 2)        unsaturated velocities (tanh argument * v_bar)
    jac_sheep   (n, n, 2, 2)  d vel_i / d x_sheep_k (zero diagonal blocks)
    jac_dog     (n, m, 2, 2)  d vel_i / d x_dog_j
    """

    velocities: np.ndarray
    raw: np.ndarray
    jac_sheep: np.ndarray | None
    jac_dog: np.ndarray | None

    def accelerations(self, dog_velocities: np.ndarray) -> np.ndarray:
        """Sheep accelerations for the given dog velocity command (m, 2)."""
        if self.jac_sheep is None:
            raise ValueError("flock state was evaluated without Jacobians")
        dv = np.asarray(dog_velocities, dtype=float).reshape(-1, 2)
        rel_s = self.velocities[None, :, :] - self.velocities[:, None, :]
        acc = np.einsum("ikcd,ikd->ic", self.jac_sheep, rel_s)
        if dv.shape[0]:
            rel_d = dv[None, :, :] - self.velocities[:, None, :]
            acc += np.einsum("ijcd,ijd->ic", self.jac_dog, rel_d)
        return acc


def evaluate_flock(world: WorldState, params: FlockParams,
                   jacobians: bool = True, eps: float = DEFAULT_EPS) -> FlockState:
    """Evaluate velocities (and optionally Jacobians) for the whole flock."""
    vel, raw, jac_s, jac_d = flock_terms(
        world.sheep, world.dogs, params.k_s, params.k_d, params.r_s,
        params.v_bar, eps, jacobians)
    return FlockState(vel, raw, jac_s, jac_d)


def sheep_velocity(world: WorldState, params: FlockParams, i: int,
                   eps: float = DEFAULT_EPS) -> np.ndarray:
    """Velocity of sheep i, each component strictly inside (-v_bar, v_bar)."""
    _check_sheep_index(world, i)
    state = evaluate_flock(world, params, jacobians=False, eps=eps)
    return state.velocities[i].copy()


def sheep_jacobian_wrt_sheep(world: WorldState, params: FlockParams,
                             i: int, k: int, eps: float = DEFAULT_EPS) -> np.ndarray:
    """2x2 block d vel_i / d x_sheep_k for k != i."""
    _check_sheep_index(world, i)
    _check_sheep_index(world, k)
    if i == k:
        raise IndexError("self-Jacobian requested: the velocity sum excludes k == i")
    state = evaluate_flock(world, params, jacobians=True, eps=eps)
    return state.jac_sheep[i, k].copy()


def sheep_jacobian_wrt_dog(world: WorldState, params: FlockParams,
                           i: int, j: int, eps: float = DEFAULT_EPS) -> np.ndarray:
    """2x2 block d vel_i / d x_dog_j."""
    _check_sheep_index(world, i)
    if not 0 <= j < world.m:
        raise IndexError(f"dog index {j} out of range [0, {world.m})")
    state = evaluate_flock(world, params, jacobians=True, eps=eps)
    return state.jac_dog[i, j].copy()


def sheep_acceleration(world: WorldState, params: FlockParams,
                       sheep_velocities: np.ndarray, dog_velocities: np.ndarray,
                       i: int, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Acceleration of sheep i given every agent's current velocity.

    Chain rule through the velocity law: position rates enter via the
    Jacobian blocks, and translation invariance folds the sheep's own
    block into relative-velocity terms.
    """
    _check_sheep_index(world, i)
    state = evaluate_flock(world, params, jacobians=True, eps=eps)
    sv = np.asarray(sheep_velocities, dtype=float).reshape(-1, 2)
    dv = np.asarray(dog_velocities, dtype=float).reshape(-1, 2)
    acc = np.einsum("kcd,kd->c", state.jac_sheep[i], sv - sv[i])
    if dv.shape[0]:
        acc += np.einsum("jcd,jd->c", state.jac_dog[i], dv - sv[i])
    return acc


def _check_sheep_index(world: WorldState, i: int):
    if not 0 <= i < world.n:
        raise IndexError(f"sheep index {i} out of range [0, {world.n})")
