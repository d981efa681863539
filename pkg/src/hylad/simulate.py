"""Ground-truth integration of the catalog systems.

Classical fixed-step RK4 with a configurable number of substeps per saved
frame. Bouncing-ball wall events are handled by post-substep reflection;
the rigid-body quaternion is renormalized after every substep.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch

from .systems import (
    PET_A2,
    PET_A3,
    PET_L1,
    PET_L2,
    PET_L3,
    PET_TAU,
    NumericDomainError,
    SystemSpec,
    full_derivative_batch,
    plasma_input,
    quat_normalize,
)

DEFAULT_SUBSTEPS = 10


@dataclass
class Trajectory:
    """States saved on the system's observation time grid."""

    states: np.ndarray  # [T+1, state_dim]
    times: np.ndarray  # [T+1]
    full_params: dict
    system: str


@dataclass(frozen=True)
class PETInputConfig:
    a1: float
    a2: float = PET_A2
    a3: float = PET_A3
    lambda1: float = PET_L1
    lambda2: float = PET_L2
    lambda3: float = PET_L3
    tau: float = PET_TAU


def pet_input(t, cfg: PETInputConfig):
    """Plasma concentration at time t (minutes)."""
    tt = torch.as_tensor(t, dtype=torch.float64)
    a1 = torch.as_tensor(cfg.a1, dtype=torch.float64)
    out = plasma_input(tt, a1)
    return float(out) if out.ndim == 0 else out.numpy()


def rk4_step(derivative_fn: Callable, z: torch.Tensor, t: torch.Tensor, dt,
             check: bool = True) -> torch.Tensor:
    k1 = derivative_fn(z, t)
    k2 = derivative_fn(z + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = derivative_fn(z + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = derivative_fn(z + dt * k3, t + dt)
    out = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if check and not torch.isfinite(out).all():
        raise NumericDomainError(f"non-finite state after RK4 step at t={float(t.reshape(-1)[0])}")
    return out


def reflect_ball(z: torch.Tensor, wall: float) -> torch.Tensor:
    """Mirror positions that crossed a wall and negate the matching velocity.

    Applied per axis independently; a corner hit reflects both axes.
    """
    pos, vel = z[..., :2], z[..., 2:]
    over = pos > wall
    under = pos < -wall
    pos = torch.where(over, 2.0 * wall - pos, pos)
    pos = torch.where(under, -2.0 * wall - pos, pos)
    vel = torch.where(over | under, -vel, vel)
    return torch.cat([pos, vel], dim=-1)


def handle_ball_collision(z_before: np.ndarray, z_after: np.ndarray, wall: float = 5.0) -> np.ndarray:
    """Post-step event fixup for a single state (walls at +/- wall)."""
    del z_before  # reflection depends only on where the step landed
    return reflect_ball(torch.as_tensor(z_after, dtype=torch.float64), wall).numpy()


def _postprocess(spec: SystemSpec, z: torch.Tensor) -> torch.Tensor:
    if spec.name == "bouncing_ball":
        return reflect_ball(z, spec.shared_constants["wall"])
    if spec.name == "rigid_body":
        q = quat_normalize(z[..., 3:7])
        return torch.cat([z[..., :3], q, z[..., 7:]], dim=-1)
    return z


def state_times(spec: SystemSpec) -> np.ndarray:
    """Time grid the state trajectory is saved on.

    For the scan-based system the states live on the scan boundaries
    (frames+1 points); the other systems save one state per frame.
    """
    if spec.name == "pet":
        return np.linspace(0.0, spec.t_end, spec.frames + 1)
    return spec.time_grid


def integrate_batch(
    spec: SystemSpec,
    params: dict,
    z0: torch.Tensor,
    substeps: int = DEFAULT_SUBSTEPS,
    derivative=None,
    save_substates: bool = False,
):
    """Integrate a batch of initial states under shared-shape parameters.

    ``params`` values broadcast against the batch dimension of ``z0``.
    Returns states of shape [T+1, B, state_dim] on the saved grid, or with
    ``save_substates`` the dense grid of every substep boundary
    ([T*substeps+1, B, state_dim]).
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    deriv = derivative or (lambda z, t: full_derivative_batch(spec, z, t, params))
    grid = state_times(spec)
    z = z0
    saved = [z]
    dense = [z]
    for idx in range(len(grid) - 1):
        dt = (grid[idx + 1] - grid[idx]) / substeps
        for s in range(substeps):
            t = torch.as_tensor(grid[idx] + s * dt, dtype=z.dtype, device=z.device)
            try:
                z = rk4_step(deriv, z, t, dt)
            except NumericDomainError as err:
                raise NumericDomainError(f"{err} (frame {idx + 1})") from None
            z = _postprocess(spec, z)
            if save_substates:
                dense.append(z)
        saved.append(z)
    stacked = torch.stack(dense if save_substates else saved)
    return stacked


def integrate_trajectory(
    spec: SystemSpec,
    full_params: dict,
    z0: np.ndarray,
    substeps: int = DEFAULT_SUBSTEPS,
) -> Trajectory:
    """Single ground-truth trajectory on the spec's saved time grid."""
    p = {k: torch.as_tensor(v, dtype=torch.float64) for k, v in full_params.items()}
    z0t = torch.as_tensor(z0, dtype=torch.float64)[None, :]
    states = integrate_batch(spec, p, z0t, substeps)[:, 0, :]
    return Trajectory(
        states=states.numpy(),
        times=state_times(spec),
        full_params=dict(full_params),
        system=spec.name,
    )


def pet_dense_total_concentration(
    spec: SystemSpec, params: dict, quad_per_scan: int, substeps_per_quad: int = 2
) -> tuple[np.ndarray, np.ndarray]:
    """Densely sampled C_T(t) for the scan-window quadrature.

    Returns (times, ct) with ``quad_per_scan`` intervals per scan, i.e.
    frames*quad_per_scan+1 points of the per-region total concentration.
    """
    p = {k: torch.as_tensor(v, dtype=torch.float64) for k, v in params.items()}
    n_dense = spec.frames * quad_per_scan
    times = np.linspace(0.0, spec.t_end, n_dense + 1)
    z = torch.zeros(1, spec.state_dim, dtype=torch.float64)
    out = [z]
    deriv = lambda zz, tt: full_derivative_batch(spec, zz, tt, p)
    for idx in range(n_dense):
        dt = (times[idx + 1] - times[idx]) / substeps_per_quad
        for s in range(substeps_per_quad):
            t = torch.as_tensor(times[idx] + s * dt, dtype=torch.float64)
            z = rk4_step(deriv, z, t, dt)
        out.append(z)
    states = torch.stack(out)[:, 0, :]
    r = spec.num_regions
    ct = (states[:, :r] + states[:, r:]).numpy()
    return times, ct
