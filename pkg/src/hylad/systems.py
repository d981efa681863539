"""Benchmark system catalog: governing equations, parameter ranges, splits.

Each system carries a *full* derivative (used to generate ground truth), a
*partial* derivative (the imperfect prior available to models), and the exact
residual between them. Parameters are tagged by role: present in the prior
(identifiable physics), absent from the prior (the gap the neural component
must capture), or initial-condition-like.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import torch
import yaml


class ParamRole(str, Enum):
    PRESENT_IN_PRIOR = "present_in_prior"
    ABSENT_FROM_PRIOR = "absent_from_prior"
    INITIAL_CONDITION = "initial_condition"


class ParameterError(KeyError):
    """A derivative evaluation was missing a required symbol."""


class NumericDomainError(ValueError):
    """A state or intermediate value left the finite numeric domain."""


@dataclass(frozen=True)
class ParamRange:
    """Sampling range of one dynamics parameter.

    ``ood_range`` is set only for parameters whose test distribution moves
    outside the training range; it must then be disjoint from ``id_range``.
    Discrete-valued parameters (the bouncing-ball direction index) list their
    admissible values instead and keep the ranges as hulls.
    """

    name: str
    role: ParamRole
    id_range: tuple[float, float]
    ood_range: Optional[tuple[float, float]] = None
    choices_id: Optional[tuple[float, ...]] = None
    choices_ood: Optional[tuple[float, ...]] = None
    per_region: bool = False

    def __post_init__(self):
        if self.ood_range is not None and self.choices_id is None:
            lo_i, hi_i = self.id_range
            lo_o, hi_o = self.ood_range
            if max(lo_i, lo_o) < min(hi_i, hi_o):
                raise ValueError(f"id/ood ranges overlap for {self.name}")

    def hull(self) -> tuple[float, float]:
        """Smallest interval containing both the ID and OOD supports."""
        lo, hi = self.id_range
        if self.ood_range is not None:
            lo, hi = min(lo, self.ood_range[0]), max(hi, self.ood_range[1])
        if self.choices_id is not None:
            vals = self.choices_id + (self.choices_ood or ())
            lo, hi = min(vals), max(vals)
        return lo, hi


@dataclass(frozen=True)
class StateVector:
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise NumericDomainError("state contains non-finite entries")


@dataclass(frozen=True)
class SystemSpec:
    """Static description of one benchmark system."""

    name: str
    state_dim: int
    partial_state_dim: int
    full_params: tuple[ParamRange, ...]
    init_ranges: tuple[tuple[str, float, float], ...]
    shared_constants: dict = field(default_factory=dict)
    t_end: float = 0.0
    frames: int = 0
    obs_shape: tuple[int, int, int] = (32, 32, 1)
    num_regions: int = 0

    @property
    def time_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.frames)

    def params_by_role(self, role: ParamRole) -> tuple[ParamRange, ...]:
        return tuple(p for p in self.full_params if p.role == role)

    @property
    def blue_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params_by_role(ParamRole.PRESENT_IN_PRIOR))

    @property
    def red_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params_by_role(ParamRole.ABSENT_FROM_PRIOR))

    @property
    def group_key(self) -> tuple[str, ...]:
        """Parameter names that define "same dynamics" for episode grouping."""
        return self.blue_names + self.red_names

    def param_box(self, names: Sequence[str]) -> list[tuple[str, float, float, int]]:
        """(name, lo, hi, width) squash boxes, width>1 for per-region params."""
        by_name = {p.name: p for p in self.full_params}
        out = []
        for n in names:
            p = by_name[n]
            lo, hi = p.hull()
            out.append((n, lo, hi, self.num_regions if p.per_region else 1))
        return out

    def to_yaml(self) -> str:
        doc = {
            "name": self.name,
            "state_dim": self.state_dim,
            "partial_state_dim": self.partial_state_dim,
            "time_grid": {"t_end": self.t_end, "frames": self.frames},
            "obs_shape": list(self.obs_shape),
            "shared_constants": dict(self.shared_constants),
            "parameters": [
                {
                    "name": p.name,
                    "role": p.role.value,
                    "id_range": list(p.id_range),
                    **({"ood_range": list(p.ood_range)} if p.ood_range else {}),
                    **({"choices_id": list(p.choices_id)} if p.choices_id else {}),
                    **({"choices_ood": list(p.choices_ood)} if p.choices_ood else {}),
                    **({"per_region": True} if p.per_region else {}),
                }
                for p in self.full_params
            ],
            "initial_conditions": [
                {"name": n, "range": [lo, hi]} for n, lo, hi in self.init_ranges
            ],
        }
        return yaml.safe_dump(doc, sort_keys=False)


# ---------------------------------------------------------------------------
# Catalog definitions
# ---------------------------------------------------------------------------

PI = math.pi

# Plasma input constants for the tracer-kinetics system. The eigenvalues act
# as decay rates (the input must vanish at large t); A1 is sampled per series.
PET_A2 = 21.8798
PET_A3 = 20.8113
PET_L1 = 4.1339
PET_L2 = 0.1191
PET_L3 = 0.0104
PET_TAU = 110.0
PET_REGIONS = 5
# Fixed normalization applied when tissue activity is painted into frames,
# chosen above the largest scan-mean activity any admissible draw can reach.
PET_VALUE_SCALE = 260.0

_CATALOG: dict[str, SystemSpec] = {}


def _register(spec: SystemSpec) -> SystemSpec:
    _CATALOG[spec.name] = spec
    return spec


PENDULUM = _register(
    SystemSpec(
        name="pendulum",
        state_dim=2,
        partial_state_dim=2,
        full_params=(
            ParamRange("G", ParamRole.PRESENT_IN_PRIOR, (5.0, 15.0)),
            # Damping upper OOD bound: 1.2 in the summary table, 1.25 in the
            # range listing; the summary value is used (see README).
            ParamRange("beta", ParamRole.ABSENT_FROM_PRIOR, (0.0, 1.0), (1.0, 1.2)),
        ),
        init_ranges=(("phi0", -PI / 2, PI / 2), ("phidot0", -2.0, 2.0)),
        shared_constants={"L": 2.0},
        t_end=5.0,
        frames=25,
        obs_shape=(32, 32, 1),
    )
)

MASS_SPRING = _register(
    SystemSpec(
        name="mass_spring",
        state_dim=4,  # (x1, x2, v1, v2)
        partial_state_dim=4,
        full_params=(
            ParamRange("k", ParamRole.PRESENT_IN_PRIOR, (5.0, 15.0)),
            ParamRange("beta", ParamRole.ABSENT_FROM_PRIOR, (0.0, 1.0), (1.0, 1.5)),
        ),
        init_ranges=(("x10", -4.0, -2.0), ("x20", 2.0, 4.0)),
        shared_constants={"l0": 6.0, "m1": 1.0, "m2": 1.0},
        t_end=5.0,
        frames=25,
        obs_shape=(32, 32, 3),
    )
)

_BALL_ID = tuple(float(i) for i in list(range(-6, 0)) + list(range(2, 8)))
_BALL_OOD = (-8.0, -7.0, 0.0, 1.0)

BOUNCING_BALL = _register(
    SystemSpec(
        name="bouncing_ball",
        state_dim=4,  # (x, y, vx, vy)
        partial_state_dim=4,
        full_params=(
            ParamRange("G", ParamRole.PRESENT_IN_PRIOR, (0.0, 5.0)),
            ParamRange(
                "i",
                ParamRole.ABSENT_FROM_PRIOR,
                (-6.0, 7.0),
                choices_id=_BALL_ID,
                choices_ood=_BALL_OOD,
            ),
        ),
        init_ranges=(("x0", -4.0, 4.0), ("y0", -4.0, 4.0)),
        shared_constants={"wall": 5.0},
        t_end=2.5,
        frames=25,
        obs_shape=(32, 32, 1),
    )
)

RIGID_BODY = _register(
    SystemSpec(
        name="rigid_body",
        state_dim=13,  # position 3, quaternion (x,y,z,w) 4, v 3, omega 3
        partial_state_dim=13,
        full_params=(
            ParamRange("psi", ParamRole.PRESENT_IN_PRIOR, (-PI, PI)),
            ParamRange("phi", ParamRole.ABSENT_FROM_PRIOR, (PI / 8, PI / 2), (0.0, PI / 8)),
        ),
        init_ranges=(("x0", -1.0, 1.0), ("y0", -1.0, 1.0)),
        # Uniform solid cube of edge 1: inertia (m/6)*Id. The push is applied
        # at a fixed body corner, giving the torque lever arm.
        shared_constants={"m": 8.0, "f": 10.0, "edge": 1.0, "lever": 0.5},
        t_end=1.0,
        frames=30,
        obs_shape=(64, 64, 3),
    )
)

DOUBLE_PENDULUM = _register(
    SystemSpec(
        name="double_pendulum",
        state_dim=4,  # (phi1, phi2, phidot1, phidot2)
        partial_state_dim=4,
        full_params=(
            ParamRange("G", ParamRole.PRESENT_IN_PRIOR, (5.0, 15.0)),
            ParamRange("m_ratio", ParamRole.ABSENT_FROM_PRIOR, (0.5, 1.5), (1.5, 2.0)),
        ),
        init_ranges=(("phi10", -PI / 2, PI / 2), ("phi20", -PI / 8, PI / 8)),
        shared_constants={"L1": 1.5, "L2": 1.5},
        t_end=4.0,
        frames=40,
        obs_shape=(32, 32, 3),
    )
)

# Two-tissue exchange rates are shared by all voxels of a region; the region
# count is fixed by the synthetic activity mask. ID/OOD for the rates absent
# from the one-tissue prior split each published range at its upper fifth.
PET = _register(
    SystemSpec(
        name="pet",
        state_dim=2 * PET_REGIONS,  # (C_E per region, C_M per region)
        partial_state_dim=PET_REGIONS,  # collapsed total concentration
        full_params=(
            ParamRange("k1", ParamRole.PRESENT_IN_PRIOR, (0.1, 0.3), per_region=True),
            ParamRange("k2", ParamRole.PRESENT_IN_PRIOR, (0.01, 0.3), per_region=True),
            ParamRange("k3", ParamRole.ABSENT_FROM_PRIOR, (0.01, 0.082), (0.082, 0.1), per_region=True),
            ParamRange("k4", ParamRole.ABSENT_FROM_PRIOR, (0.01, 0.042), (0.042, 0.05), per_region=True),
            ParamRange("A1", ParamRole.INITIAL_CONDITION, (100.0, 200.0)),
        ),
        init_ranges=(),  # tracer-free start: all concentrations zero
        shared_constants={
            "A2": PET_A2,
            "A3": PET_A3,
            "lambda1": PET_L1,
            "lambda2": PET_L2,
            "lambda3": PET_L3,
            "tau": PET_TAU,
            "value_scale": PET_VALUE_SCALE,
        },
        t_end=40.0,
        frames=80,  # scan count; the state grid has frames+1 points
        obs_shape=(32, 32, 1),
        num_regions=PET_REGIONS,
    )
)

SYSTEM_NAMES = tuple(_CATALOG)


def get_system(name: str) -> SystemSpec:
    try:
        return _CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown system {name!r}; expected one of {SYSTEM_NAMES}") from None


# ---------------------------------------------------------------------------
# Derivative fields (torch, batched, autograd-safe)
# ---------------------------------------------------------------------------


def _need(params: dict, name: str, system: str) -> torch.Tensor:
    try:
        return params[name]
    except KeyError:
        raise ParameterError(f"{system}: missing parameter {name!r}") from None


def plasma_input(t: torch.Tensor, a1: torch.Tensor) -> torch.Tensor:
    """Arterial tracer concentration driving the compartment exchange."""
    e1 = torch.exp(-PET_L1 * t)
    e2 = torch.exp(-PET_L2 * t)
    e3 = torch.exp(-PET_L3 * t)
    return (a1 * t - PET_A2 - PET_A3) * e1 + PET_A2 * e2 + PET_A3 * e3


def _full_pendulum(z, t, p):
    g = _need(p, "G", "pendulum")
    beta = _need(p, "beta", "pendulum")
    L = PENDULUM.shared_constants["L"]
    phi, phidot = z[..., 0], z[..., 1]
    return torch.stack([phidot, -(g / L) * torch.sin(phi) - beta * phidot], dim=-1)


def _partial_pendulum(z, t, p):
    g = _need(p, "G", "pendulum")
    L = PENDULUM.shared_constants["L"]
    phi, phidot = z[..., 0], z[..., 1]
    return torch.stack([phidot, -(g / L) * torch.sin(phi)], dim=-1)


def _spring_force(z, k):
    c = MASS_SPRING.shared_constants
    x1, x2 = z[..., 0], z[..., 1]
    xt = x1 - x2
    mag = torch.abs(xt)
    sign = torch.sign(xt)
    return sign * k * (mag - c["l0"])


def _full_mass_spring(z, t, p):
    k = _need(p, "k", "mass_spring")
    beta = _need(p, "beta", "mass_spring")
    c = MASS_SPRING.shared_constants
    v1, v2 = z[..., 2], z[..., 3]
    vt = v1 - v2
    f = _spring_force(z, k)
    dv1 = -f / c["m1"] - (beta / c["m1"]) * vt
    dv2 = f / c["m2"] + (beta / c["m2"]) * vt
    return torch.stack([v1, v2, dv1, dv2], dim=-1)


def _partial_mass_spring(z, t, p):
    k = _need(p, "k", "mass_spring")
    c = MASS_SPRING.shared_constants
    v1, v2 = z[..., 2], z[..., 3]
    f = _spring_force(z, k)
    return torch.stack([v1, v2, -f / c["m1"], f / c["m2"]], dim=-1)


def _ball_angle(p):
    if "phi" in p:
        return p["phi"]
    return _need(p, "i", "bouncing_ball") * (PI / 8.0)


def _full_bouncing_ball(z, t, p):
    g = _need(p, "G", "bouncing_ball")
    phi = _ball_angle(p)
    vx, vy = z[..., 2], z[..., 3]
    ax = g * torch.cos(phi)
    ay = g * torch.sin(phi)
    return torch.stack([vx, vy, ax.expand_as(vx), ay.expand_as(vy)], dim=-1)


def _partial_bouncing_ball(z, t, p):
    g = _need(p, "G", "bouncing_ball")
    vx, vy = z[..., 2], z[..., 3]
    zero = torch.zeros_like(vx)
    return torch.stack([vx, vy, zero, (-g).expand_as(vy)], dim=-1)


def quat_normalize(q: torch.Tensor) -> torch.Tensor:
    return q / q.norm(dim=-1, keepdim=True).clamp_min(1e-12)


def quat_rotate(q: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Rotate vectors by unit quaternions in (x, y, z, w) layout."""
    u, w = q[..., :3], q[..., 3:4]
    uv = torch.cross(u, v, dim=-1)
    uuv = torch.cross(u, uv, dim=-1)
    return v + 2.0 * (w * uv + uuv)


def rigid_state_derivative(z, force_world):
    c = RIGID_BODY.shared_constants
    m = c["m"]
    inertia = m / 6.0  # isotropic for the cube, so the gyroscopic term vanishes
    q = z[..., 3:7]
    v = z[..., 7:10]
    w = z[..., 10:13]
    lever_body = torch.full_like(force_world, c["lever"])
    lever_world = quat_rotate(quat_normalize(q), lever_body)
    torque = torch.cross(lever_world, force_world, dim=-1)
    # dq/dt = 0.5 * (omega ⊗ q) with omega in the world frame
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    qx, qy, qz, qw = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    dq = 0.5 * torch.stack(
        [
            wx * qw + wy * qz - wz * qy,
            -wx * qz + wy * qw + wz * qx,
            wx * qy - wy * qx + wz * qw,
            -wx * qx - wy * qy - wz * qz,
        ],
        dim=-1,
    )
    return torch.cat([v, dq, force_world / m, torque / inertia], dim=-1)


def _rigid_force(p, full: bool):
    f = RIGID_BODY.shared_constants["f"]
    psi = _need(p, "psi", "rigid_body")
    if full:
        phi = _need(p, "phi", "rigid_body")
        return f * torch.stack(
            [torch.cos(psi) * torch.sin(phi), torch.sin(psi) * torch.sin(phi), torch.cos(phi)],
            dim=-1,
        )
    zero = torch.zeros_like(psi)
    return f * torch.stack([torch.cos(psi), torch.sin(psi), zero], dim=-1)


def _full_rigid_body(z, t, p):
    return rigid_state_derivative(z, _rigid_force(p, full=True))


def _partial_rigid_body(z, t, p):
    return rigid_state_derivative(z, _rigid_force(p, full=False))


def _dp_core(z, g, m_ratio):
    c = DOUBLE_PENDULUM.shared_constants
    L1, L2 = c["L1"], c["L2"]
    p1, p2 = z[..., 0], z[..., 1]
    d1, d2 = z[..., 2], z[..., 3]
    cosd = torch.cos(p1 - p2)
    sind = torch.sin(p1 - p2)
    denom = m_ratio + sind**2
    num1 = g * torch.sin(p2) * cosd - sind * (L1 * d1**2 * cosd + L2 * d2**2) - (m_ratio + 1.0) * g * torch.sin(p1)
    num2 = (m_ratio + 1.0) * (L1 * d1**2 * sind - g * torch.sin(p2) + g * torch.sin(p1) * cosd) + L2 * d2**2 * cosd * sind
    return torch.stack([d1, d2, num1 / (L1 * denom), num2 / (L2 * denom)], dim=-1)


def _full_double_pendulum(z, t, p):
    g = _need(p, "G", "double_pendulum")
    m_ratio = _need(p, "m_ratio", "double_pendulum")
    return _dp_core(z, g, m_ratio)


def _partial_double_pendulum(z, t, p):
    # The prior ignores the mass difference: the full form at unit mass ratio.
    g = _need(p, "G", "double_pendulum")
    return _dp_core(z, g, torch.ones_like(g))


def _full_pet(z, t, p):
    """Two-tissue exchange on z = [C_E (R), C_M (R)] with known plasma input."""
    k1 = _need(p, "k1", "pet")
    k2 = _need(p, "k2", "pet")
    k3 = _need(p, "k3", "pet")
    k4 = _need(p, "k4", "pet")
    a1 = _need(p, "A1", "pet")
    r = PET_REGIONS
    ce, cm = z[..., :r], z[..., r:]
    cp = plasma_input(t, a1)[..., None]
    dce = -(k2 + k3) * ce + k4 * cm + k1 * cp
    dcm = k3 * ce - k4 * cm
    return torch.cat([dce, dcm], dim=-1)


def _partial_pet(z, t, p):
    """One-tissue prior on the collapsed state z = C_T (R)."""
    k1 = _need(p, "k1", "pet")
    k2 = _need(p, "k2", "pet")
    a1 = _need(p, "A1", "pet")
    cp = plasma_input(t, a1)[..., None]
    return -k2 * z + k1 * cp


_FULL = {
    "pendulum": _full_pendulum,
    "mass_spring": _full_mass_spring,
    "bouncing_ball": _full_bouncing_ball,
    "rigid_body": _full_rigid_body,
    "double_pendulum": _full_double_pendulum,
    "pet": _full_pet,
}

_PARTIAL = {
    "pendulum": _partial_pendulum,
    "mass_spring": _partial_mass_spring,
    "bouncing_ball": _partial_bouncing_ball,
    "rigid_body": _partial_rigid_body,
    "double_pendulum": _partial_double_pendulum,
    "pet": _partial_pet,
}


def _as_tensor_params(params: dict, dtype, device=None) -> dict:
    out = {}
    for k, v in params.items():
        out[k] = torch.as_tensor(v, dtype=dtype, device=device)
    return out


def full_derivative_batch(spec: SystemSpec, z: torch.Tensor, t: torch.Tensor, params: dict) -> torch.Tensor:
    return _FULL[spec.name](z, t, params)


def partial_derivative_batch(spec: SystemSpec, z: torch.Tensor, t: torch.Tensor, params: dict) -> torch.Tensor:
    return _PARTIAL[spec.name](z, t, params)


def collapse_state(spec: SystemSpec, z: torch.Tensor) -> torch.Tensor:
    """Project a full-physics state onto the prior's coordinates."""
    if spec.name == "pet":
        r = spec.num_regions
        return z[..., :r] + z[..., r:]
    return z


def residual_truth_batch(spec: SystemSpec, z: torch.Tensor, t: torch.Tensor, params: dict) -> torch.Tensor:
    """Exact derivative gap in the prior's coordinates, for evaluation only.

    For the compartment system this is the gap of the collapsed total
    concentration; elsewhere full and partial share the state space.
    """
    full = full_derivative_batch(spec, z, t, params)
    if spec.name == "pet":
        r = spec.num_regions
        d_ct_true = full[..., :r] + full[..., r:]
        blue = {k: params[k] for k in ("k1", "k2", "A1")}
        d_ct_prior = partial_derivative_batch(spec, collapse_state(spec, z), t, blue)
        return d_ct_true - d_ct_prior
    blue = {k: v for k, v in params.items() if k in spec.blue_names or k == "A1"}
    return full - partial_derivative_batch(spec, z, t, blue)


def _single(fn, spec, z, params, t):
    if isinstance(z, StateVector):
        t = z.t
        z = z.values
    z_arr = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z_arr)):
        raise NumericDomainError(f"{spec.name}: non-finite state")
    zt = torch.from_numpy(z_arr)
    tt = torch.tensor(float(t), dtype=torch.float64)
    p = _as_tensor_params(params, torch.float64)
    return fn(spec, zt, tt, p).numpy()


def full_derivative(spec: SystemSpec, z, params: dict, t: float = 0.0) -> np.ndarray:
    """dz/dt of the data-generating equations at one state."""
    return _single(full_derivative_batch, spec, z, params, t)


def partial_derivative(spec: SystemSpec, z, c_p: dict, t: float = 0.0) -> np.ndarray:
    """dz/dt of the prior physics; rejects symbols absent from the prior."""
    extra = set(c_p) - set(spec.blue_names) - {"A1"}
    if extra:
        raise ParameterError(f"{spec.name}: partial physics does not accept {sorted(extra)}")
    return _single(partial_derivative_batch, spec, z, c_p, t)


def residual_truth(spec: SystemSpec, z, full_params: dict, t: float = 0.0) -> np.ndarray:
    return _single(residual_truth_batch, spec, z, full_params, t)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _sample_range(rng: np.random.Generator, p: ParamRange, split: str):
    if p.choices_id is not None:
        vals = p.choices_id if split != "test_ood" else p.choices_ood
        return float(vals[rng.integers(len(vals))])
    lo, hi = p.id_range if (split != "test_ood" or p.ood_range is None) else p.ood_range
    return float(rng.uniform(lo, hi))


def sample_dynamics_params(spec: SystemSpec, split: str, rng: np.random.Generator) -> dict:
    """Draw one red+blue parameter tuple for the given split."""
    if split not in ("train", "test_id", "test_ood"):
        raise ValueError(f"unknown split {split!r}")
    out = {}
    for p in spec.full_params:
        if p.role == ParamRole.INITIAL_CONDITION:
            continue
        if p.per_region:
            out[p.name] = np.array(
                [_sample_range(rng, p, split) for _ in range(spec.num_regions)]
            )
        else:
            out[p.name] = _sample_range(rng, p, split)
    return out


def sample_known(spec: SystemSpec, rng: np.random.Generator) -> dict:
    """Per-series inputs known to the model (the plasma-input coefficient)."""
    out = {}
    for p in spec.params_by_role(ParamRole.INITIAL_CONDITION):
        out[p.name] = float(rng.uniform(*p.id_range))
    return out


def sample_initial_state(spec: SystemSpec, rng: np.random.Generator) -> np.ndarray:
    vals = {n: float(rng.uniform(lo, hi)) for n, lo, hi in spec.init_ranges}
    name = spec.name
    if name == "pendulum":
        return np.array([vals["phi0"], vals["phidot0"]])
    if name == "mass_spring":
        return np.array([vals["x10"], vals["x20"], 0.0, 0.0])
    if name == "bouncing_ball":
        return np.array([vals["x0"], vals["y0"], 0.0, 0.0])
    if name == "rigid_body":
        z = np.zeros(13)
        z[0], z[1] = vals["x0"], vals["y0"]
        z[6] = 1.0  # identity quaternion, w last
        return z
    if name == "double_pendulum":
        return np.array([vals["phi10"], vals["phi20"], 0.0, 0.0])
    if name == "pet":
        return np.zeros(spec.state_dim)
    raise KeyError(name)


def sample_params(spec: SystemSpec, split: str, rng: np.random.Generator):
    """One full draw: dynamics parameters plus per-series values and z0."""
    params = sample_dynamics_params(spec, split, rng)
    params.update(sample_known(spec, rng))
    return params, sample_initial_state(spec, rng)


def write_system_specs(out_dir) -> None:
    """Dump every system's ranges to an auditable text file."""
    import pathlib

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, spec in _CATALOG.items():
        (out / f"{name}.yaml").write_text(spec.to_yaml())
