"""Hybrid latent-dynamics model: physics term + hypernetwork-generated residual.

The latent derivative is the system's prior physics with identified
parameters plus a small per-group residual network whose weights come from a
hypernetwork conditioned on a context code. Codes are produced by
permutation-invariant context encoders (mean over per-series embeddings);
the initial latent state comes from a convolutional encoder over the first
few frames. Decoding is either the differentiable renderer (known emission)
or a learned MLP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from . import render as R
from . import simulate as sim
from . import systems as S

DYNAMICS_MODES = ("full_physics_oracle", "purely_physics", "purely_neural",
                  "global_hybrid", "meta_hybrid")
STRATEGIES = ("recon", "meta", "mixed")
DECODERS = ("physics", "neural", "neural_with_prior")
RESIDUAL_INPUTS = ("prior", "state")


class ConfigurationError(ValueError):
    pass


@dataclass
class ModelConfig:
    system: str
    strategy: str = "meta"
    dynamics_mode: str = "meta_hybrid"
    decoder: str = "physics"
    code_dim: int = 16
    num_filters: int = 8
    init_frames: int = 3
    residual_inputs: str = "prior"  # "state" feeds the full state to the residual
    weak_prior: bool = False  # pendulum-only: prior knows damping, not gravity
    latent_dim: Optional[int] = None  # abstract latent width for neural decoders
    rollout_substeps: int = 1

    def __post_init__(self):
        if self.dynamics_mode not in DYNAMICS_MODES:
            raise ConfigurationError(f"unknown dynamics_mode {self.dynamics_mode!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")
        if self.decoder not in DECODERS:
            raise ConfigurationError(f"unknown decoder {self.decoder!r}")
        if self.residual_inputs not in RESIDUAL_INPUTS:
            raise ConfigurationError(f"unknown residual_inputs {self.residual_inputs!r}")
        if self.weak_prior and self.system != "pendulum":
            raise ConfigurationError("the weak prior variant is defined for the pendulum")


# Derivative rows the residual writes into, per system (prior coordinates).
_RESIDUAL_ROWS = {
    "pendulum": (1,),
    "mass_spring": (2, 3),
    "bouncing_ball": (2, 3),
    "double_pendulum": (2, 3),
    "pet": None,  # per-region, all rows
    "rigid_body": None,  # residual acts in force space
}

# State components fed to the residual under the informed ("prior") selector.
_PRIOR_FEATS = {
    "pendulum": (1,),
    "mass_spring": (2, 3),
    "double_pendulum": (0, 1, 2, 3),
}

# Kinematic rows retained by the purely neural variants: these map the state
# linearly to the derivative (positions integrate velocities).
_KINEMATIC = {
    "mass_spring": {0: 2, 1: 3},
    "bouncing_ball": {0: 2, 1: 3},
    "double_pendulum": {0: 2, 1: 3},
}

_POSITION_COMPS = {
    "pendulum": (0,),
    "mass_spring": (0, 1),
    "bouncing_ball": (0, 1),
    "double_pendulum": (0, 1),
    "rigid_body": tuple(range(7)),
    "pet": tuple(range(S.PET_REGIONS)),
}


def residual_param_count(in_dim: int, out_dim: int, hidden: int = 8, layers: int = 4) -> int:
    n = in_dim * hidden + hidden
    n += (layers - 1) * (hidden * hidden + hidden)
    n += hidden * out_dim + out_dim
    return n


def unpack_residual_weights(phi: torch.Tensor, in_dim: int, out_dim: int,
                            hidden: int = 8, layers: int = 4) -> list:
    """Split a flat weight vector into per-layer (W, b) pairs, once per rollout."""
    b = phi.shape[0]
    dims = [(hidden, in_dim)] + [(hidden, hidden)] * (layers - 1) + [(out_dim, hidden)]
    packs, off = [], 0
    for o, i in dims:
        w = phi[:, off : off + o * i].reshape(b, i, o)
        off += o * i
        bias = phi[:, off : off + o][:, None, :]
        off += o
        packs.append((w, bias))
    return packs


def residual_mlp_apply(x: torch.Tensor, packs: list) -> torch.Tensor:
    """x: [B, M, in_dim] through per-sample weights -> [B, M, out_dim]."""
    h = x
    last = len(packs) - 1
    for li, (w, bias) in enumerate(packs):
        h = torch.baddbmm(bias, h, w)
        if li < last:
            h = torch.nn.functional.silu(h)
    return h


def residual_mlp_forward(x: torch.Tensor, phi: torch.Tensor, in_dim: int, out_dim: int,
                         hidden: int = 8, layers: int = 4) -> torch.Tensor:
    """Per-sample MLP with externally supplied flat weights."""
    return residual_mlp_apply(x, unpack_residual_weights(phi, in_dim, out_dim, hidden, layers))


class HyperNetwork(nn.Module):
    """Maps a context code to the flat weight vector of the residual MLP."""

    def __init__(self, code_dim: int, out_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(code_dim, 16), nn.SiLU(),
            nn.Linear(16, 16), nn.SiLU(),
            nn.Linear(16, 16), nn.SiLU(),
            nn.Linear(16, 8), nn.SiLU(),
            nn.Linear(8, out_dim),
        )
        # keep the generated residual small at the start of training
        with torch.no_grad():
            self.net[-1].weight.mul_(0.1)
            self.net[-1].bias.mul_(0.1)

    def forward(self, c_n):
        return self.net(c_n)


class InitialEncoder(nn.Module):
    """First-frames -> initial latent state."""

    def __init__(self, in_channels: int, hw: tuple[int, int], out_dim: int,
                 num_filters: int, known_dim: int = 0):
        super().__init__()
        nf = num_filters
        self.conv = nn.Sequential(
            nn.Conv2d(in_channels, nf, 5, stride=2, padding=2),
            nn.BatchNorm2d(nf),
            nn.LeakyReLU(0.1),
            nn.Conv2d(nf, nf * 2, 5, stride=2, padding=2),
            nn.BatchNorm2d(nf * 2),
            nn.LeakyReLU(0.1),
            nn.Conv2d(nf * 2, nf, 5, stride=2, padding=2),
            nn.Tanh(),
        )
        h, w = hw
        flat = nf * (h // 8) * (w // 8)
        self.head = nn.Linear(flat + known_dim, out_dim)

    def forward(self, frames, known=None):
        # frames: [B, l, H, W, C]
        b, l, h, w, c = frames.shape
        x = frames.permute(0, 1, 4, 2, 3).reshape(b, l * c, h, w)
        feat = self.conv(x).reshape(b, -1)
        if known is not None:
            feat = torch.cat([feat, known], dim=-1)
        return self.head(feat)


class SpatialTemporalBlock(nn.Module):
    def __init__(self, t_in, t_out, n_in, n_out, last=False):
        super().__init__()
        self.conv = nn.Conv2d(n_in, n_out, 5, stride=2, padding=2)
        self.bn = None if last else nn.BatchNorm2d(n_out)
        self.act = nn.Tanh() if last else nn.LeakyReLU(0.1)
        self.lin_t = nn.Linear(t_in, t_out)

    def forward(self, x):
        # x: [B, T, C, H, W]
        b, t, c, h, w = x.shape
        y = self.conv(x.reshape(b * t, c, h, w))
        if self.bn is not None:
            y = self.bn(y)
        y = self.act(y)
        _, c2, h2, w2 = y.shape
        y = y.reshape(b, t, c2, h2, w2).permute(0, 2, 3, 4, 1)
        y = self.lin_t(y)
        return y.permute(0, 4, 1, 2, 3)


class SeriesEncoder(nn.Module):
    """Spatio-temporal trunk embedding one whole series to a flat feature."""

    def __init__(self, t_steps: int, channels: int, hw: tuple[int, int], num_filters: int):
        super().__init__()
        nf = num_filters
        self.blocks = nn.Sequential(
            SpatialTemporalBlock(t_steps, t_steps // 2, channels, nf),
            SpatialTemporalBlock(t_steps // 2, t_steps // 4, nf, nf * 2),
            SpatialTemporalBlock(t_steps // 4, 1, nf * 2, nf, last=True),
        )
        h, w = hw
        self.out_dim = nf * (h // 8) * (w // 8)

    def forward(self, series):
        # series: [B, T, H, W, C]
        x = series.permute(0, 1, 4, 2, 3)
        y = self.blocks(x)
        return y.reshape(series.shape[0], -1)


class BoxHead(nn.Module):
    """Affine-sigmoid head squashing raw features into a parameter box."""

    def __init__(self, in_dim: int, box: list[tuple[str, float, float, int]]):
        super().__init__()
        self.names = [b[0] for b in box]
        self.widths = [b[3] for b in box]
        total = sum(self.widths)
        lo = torch.tensor([b[1] for b in box for _ in range(b[3])])
        hi = torch.tensor([b[2] for b in box for _ in range(b[3])])
        self.register_buffer("lo", lo)
        self.register_buffer("hi", hi)
        self.lin = nn.Linear(in_dim, total)

    @property
    def out_dim(self):
        return int(self.lo.shape[0])

    def forward(self, feat):
        return self.lo + (self.hi - self.lo) * torch.sigmoid(self.lin(feat))

    def vec_to_params(self, vec: torch.Tensor) -> dict:
        out, idx = {}, 0
        for name, width in zip(self.names, self.widths):
            sl = vec[..., idx : idx + width]
            out[name] = sl[..., 0] if width == 1 else sl
            idx += width
        return out


class NeuralDecoder(nn.Module):
    def __init__(self, in_dim: int, obs_shape: tuple[int, int, int]):
        super().__init__()
        h, w, c = obs_shape
        self.obs_shape = obs_shape
        self.net = nn.Sequential(
            nn.Linear(in_dim, 32), nn.ReLU(),
            nn.Linear(32, 128), nn.ReLU(),
            nn.Linear(128, 512), nn.ReLU(),
            nn.Linear(512, h * w * c),
        )

    def forward(self, z):
        out = self.net(z)
        return out.reshape(*z.shape[:-1], *self.obs_shape)


class HybridModel(nn.Module):
    def __init__(self, cfg: ModelConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.cfg = cfg
        self.spec = S.get_system(cfg.system)
        self._selector_cache: dict = {}
        spec = self.spec

        self.model_state_dim = (
            spec.state_dim if cfg.dynamics_mode == "full_physics_oracle" else spec.partial_state_dim
        )
        self.abstract_latent = cfg.decoder != "physics" and cfg.dynamics_mode == "purely_neural"
        if self.abstract_latent:
            self.latent_dim = cfg.latent_dim or 2 * self.model_state_dim
        else:
            self.latent_dim = self.model_state_dim

        h, w, c = spec.obs_shape
        t_steps = spec.frames
        self.known_dim = len(spec.params_by_role(S.ParamRole.INITIAL_CONDITION))

        # physics code layout
        if cfg.dynamics_mode == "full_physics_oracle":
            box_names = list(spec.blue_names + spec.red_names)
        elif cfg.weak_prior:
            box_names = ["beta"]
        else:
            box_names = list(spec.blue_names)
        box = spec.param_box(box_names)
        if cfg.system == "bouncing_ball" and "i" in box_names:
            # the direction enters the equations as an angle; identify it directly
            box = [(("phi", -math.pi, 7 * math.pi / 8, 1) if n == "i" else (n, lo, hi, wd))
                   for (n, lo, hi, wd) in box]
        if cfg.weak_prior:
            box = [("beta", 0.0, 1.2, 1)]
        self._box = box

        self.needs_cp = not (
            cfg.dynamics_mode == "purely_neural"
            and cfg.system not in ("bouncing_ball", "rigid_body")
        )
        self.needs_cn = cfg.dynamics_mode in ("meta_hybrid", "purely_neural")
        self.has_residual = cfg.dynamics_mode in ("meta_hybrid", "purely_neural", "global_hybrid")

        in_dim, out_dim = self._residual_io()
        self.residual_in, self.residual_out = in_dim, out_dim
        self.residual_params = residual_param_count(in_dim, out_dim) if self.has_residual else 0

        nf = cfg.num_filters
        self.initial_encoder = InitialEncoder(
            cfg.init_frames * c, (h, w), self.latent_dim, nf, self.known_dim
        )

        if cfg.strategy == "recon":
            self.recon_trunk = SeriesEncoder(t_steps, c, (h, w), nf)
            feat = self.recon_trunk.out_dim + self.known_dim
            if self.needs_cp:
                self.recon_cp_head = BoxHead(feat, box)
            if self.needs_cn:
                self.recon_cn_head = nn.Linear(feat, cfg.code_dim)
        else:
            if self.needs_cn:
                self.context_trunk_n = SeriesEncoder(t_steps, c, (h, w), nf)
                self.context_head_n = nn.Linear(self.context_trunk_n.out_dim + self.known_dim,
                                                cfg.code_dim)
            if self.needs_cp:
                self.context_trunk_p = SeriesEncoder(t_steps, c, (h, w), nf)
                self.context_head_p = BoxHead(self.context_trunk_p.out_dim + self.known_dim, box)

        if self.needs_cn:
            self.hypernet = HyperNetwork(cfg.code_dim, self.residual_params)
        if cfg.dynamics_mode == "global_hybrid":
            self.global_residual = nn.Parameter(0.01 * torch.randn(self.residual_params))

        if cfg.decoder == "physics":
            if self.abstract_latent:
                raise ConfigurationError("physics decoder needs a physical latent state")
            if cfg.system == "pet":
                mask = torch.from_numpy(R.build_roi_mask((h, w)).reshape(-1).astype(np.int64))
                self.register_buffer("pet_mask_flat", mask)
        else:
            dec_in = len(self._decoder_comps())
            self.neural_decoder = NeuralDecoder(dec_in, spec.obs_shape)

        if dtype != torch.float32:
            self.to(dtype)

    # -- residual plumbing ---------------------------------------------------

    def _residual_io(self) -> tuple[int, int]:
        name = self.cfg.system
        if self.abstract_latent:
            return self.latent_dim, self.latent_dim
        if name == "pet":
            return 1, 1
        if name == "rigid_body":
            return 1, 3  # direction angle -> force correction
        if name == "bouncing_ball":
            return 1, 2  # gravity magnitude -> acceleration correction
        if self.cfg.dynamics_mode == "purely_neural" and name == "pendulum":
            return 2, 2
        if self.cfg.weak_prior:
            return 1, 1
        if self.cfg.residual_inputs == "state" or self.cfg.dynamics_mode == "purely_neural":
            return self.model_state_dim, len(_RESIDUAL_ROWS[name])
        return len(_PRIOR_FEATS[name]), len(_RESIDUAL_ROWS[name])

    def _residual_feats(self, z: torch.Tensor, cp_vec: Optional[torch.Tensor]) -> torch.Tensor:
        # z: [B, M, sd]; returns [B, M', in_dim] where M' may fold regions
        name = self.cfg.system
        if self.abstract_latent:
            return z
        if name == "pet":
            return z.reshape(z.shape[0], -1, 1)
        if name in ("bouncing_ball", "rigid_body"):
            if cp_vec is None:
                raise ConfigurationError(f"{name}: residual input is the physics code")
            return cp_vec[:, None, :1].expand(z.shape[0], z.shape[1], 1)
        if self.cfg.weak_prior:
            return z[..., 0:1]
        if self.cfg.residual_inputs == "state" or self.cfg.dynamics_mode == "purely_neural":
            return z
        idx = _PRIOR_FEATS[name]
        return z[..., list(idx)]

    def _place_residual(self, z: torch.Tensor, res: torch.Tensor) -> torch.Tensor:
        name = self.cfg.system
        if self.abstract_latent:
            return res
        if name == "pet":
            return res.reshape(z.shape)
        if name == "rigid_body":
            if self.cfg.dynamics_mode == "purely_neural":
                # the mass/inertia structure is retained; only the force is learned
                return S.rigid_state_derivative(z, res)
            return self._rigid_force_to_deriv(z, res)
        if name == "pendulum" and self.cfg.dynamics_mode == "purely_neural":
            return res
        return torch.einsum("bmo,os->bms", res, self._row_selector(z))

    @staticmethod
    def _rigid_force_to_deriv(z: torch.Tensor, force: torch.Tensor) -> torch.Tensor:
        c = S.RIGID_BODY.shared_constants
        q = S.quat_normalize(z[..., 3:7])
        lever = S.quat_rotate(q, torch.full_like(force, c["lever"]))
        torque = torch.cross(lever, force, dim=-1)
        zero7 = z[..., :7] * 0.0
        return torch.cat([zero7, force / c["m"], torque / (c["m"] / 6.0)], dim=-1)

    def residual_forward(self, z: torch.Tensor, phi: torch.Tensor,
                         cp_vec: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Residual contribution to dz/dt. z: [B, M, sd], phi: [B, P]."""
        feats = self._residual_feats(z, cp_vec)
        res = residual_mlp_forward(feats, phi, self.residual_in, self.residual_out)
        return self._place_residual(z, res)

    def _row_selector(self, z: torch.Tensor) -> torch.Tensor:
        rows = _RESIDUAL_ROWS[self.cfg.system]
        key = (z.dtype, z.shape[-1])
        cached = self._selector_cache.get(key)
        if cached is None:
            sel = torch.zeros(len(rows), z.shape[-1], dtype=z.dtype, device=z.device)
            for j, r in enumerate(rows):
                sel[j, r] = 1.0
            self._selector_cache[key] = sel
            cached = sel
        return cached

    # -- dynamics -------------------------------------------------------------

    def _cp_params(self, cp_vec: Optional[torch.Tensor], known: Optional[torch.Tensor]) -> dict:
        params = {}
        if cp_vec is not None:
            head = self._box
            idx = 0
            for name, lo, hi, width in head:
                sl = cp_vec[..., idx : idx + width]
                params[name] = sl[..., 0] if width == 1 else sl
                idx += width
        if known is not None and self.known_dim:
            for j, p in enumerate(self.spec.params_by_role(S.ParamRole.INITIAL_CONDITION)):
                params[p.name] = known[..., j]
        return params

    def _physics_term(self, z, t, params):
        mode = self.cfg.dynamics_mode
        if mode == "full_physics_oracle":
            return S.full_derivative_batch(self.spec, z, t, params)
        if mode == "purely_neural":
            return self._kinematic_term(z)
        if self.cfg.weak_prior:
            phi_dot = z[..., 1]
            return torch.stack([phi_dot, -params["beta"] * phi_dot], dim=-1)
        return S.partial_derivative_batch(self.spec, z, t, params)

    def _kinematic_term(self, z):
        rows = _KINEMATIC.get(self.cfg.system)
        if rows is None or self.abstract_latent:
            return None
        key = ("kin", z.dtype, z.shape[-1])
        sel = self._selector_cache.get(key)
        if sel is None:
            sel = torch.zeros(z.shape[-1], z.shape[-1], dtype=z.dtype, device=z.device)
            for dst, src in rows.items():
                sel[dst, src] = 1.0
            self._selector_cache[key] = sel
        return torch.einsum("bms,ds->bmd", z, sel)

    def _broadcast_params(self, cp_vec, known) -> dict:
        params = self._cp_params(cp_vec, known)
        # parameters broadcast over the M axis
        return {k: (v[:, None] if v.ndim == 1 else v[:, None, :])
                for k, v in params.items()}

    def dynamics(self, z: torch.Tensor, t: torch.Tensor, cp_vec: Optional[torch.Tensor],
                 phi: Optional[torch.Tensor], known: Optional[torch.Tensor],
                 _params: Optional[dict] = None, _packs: Optional[list] = None) -> torch.Tensor:
        """Hybrid derivative on [B, M, sd] latent states."""
        params = _params if _params is not None else self._broadcast_params(cp_vec, known)
        dz = self._physics_term(z, t, params)
        if self.has_residual and phi is not None:
            packs = _packs if _packs is not None else unpack_residual_weights(
                phi, self.residual_in, self.residual_out)
            feats = self._residual_feats(z, cp_vec)
            res = self._place_residual(z, residual_mlp_apply(feats, packs))
            dz = res if dz is None else dz + res
        if dz is None:
            raise ConfigurationError("dynamics produced no terms")
        return dz

    def make_phi(self, c_n: Optional[torch.Tensor], batch: int) -> Optional[torch.Tensor]:
        if not self.has_residual:
            return None
        if self.cfg.dynamics_mode == "global_hybrid":
            return self.global_residual[None, :].expand(batch, -1)
        return self.hypernet(c_n)

    def rollout(self, z0: torch.Tensor, cp_vec: Optional[torch.Tensor],
                phi: Optional[torch.Tensor], known: Optional[torch.Tensor],
                substeps: Optional[int] = None) -> torch.Tensor:
        """Integrate the hybrid field over the observation grid.

        z0: [B, sd] -> [B, T+1, sd]; differentiable end to end.
        """
        substeps = substeps or self.cfg.rollout_substeps
        grid = sim.state_times(self.spec)
        z = z0[:, None, :]
        params = self._broadcast_params(cp_vec, known)
        packs = None
        if self.has_residual and phi is not None:
            packs = unpack_residual_weights(phi, self.residual_in, self.residual_out)
        deriv = lambda zz, tt: self.dynamics(zz, tt, cp_vec, phi, known,
                                             _params=params, _packs=packs)
        out = [z]
        for idx in range(len(grid) - 1):
            dt = (grid[idx + 1] - grid[idx]) / substeps
            for s in range(substeps):
                t = torch.as_tensor(grid[idx] + s * dt, dtype=z.dtype, device=z.device)
                z = sim.rk4_step(deriv, z, t, dt, check=False)
                z = self._postprocess(z)
            if not torch.isfinite(z).all():
                raise S.NumericDomainError(f"non-finite latent state at frame {idx + 1}")
            out.append(z)
        return torch.cat(out, dim=1)

    def _postprocess(self, z):
        name = self.cfg.system
        if name == "bouncing_ball" and not self.abstract_latent:
            return sim.reflect_ball(z, self.spec.shared_constants["wall"])
        if name == "rigid_body" and not self.abstract_latent:
            q = S.quat_normalize(z[..., 3:7])
            return torch.cat([z[..., :3], q, z[..., 7:]], dim=-1)
        return z

    # -- encoders -------------------------------------------------------------

    def _known_feat(self, known: Optional[torch.Tensor]) -> Optional[torch.Tensor]:
        if known is None or not self.known_dim:
            return None
        lo = torch.tensor([p.id_range[0] for p in
                           self.spec.params_by_role(S.ParamRole.INITIAL_CONDITION)],
                          dtype=known.dtype, device=known.device)
        hi = torch.tensor([p.id_range[1] for p in
                           self.spec.params_by_role(S.ParamRole.INITIAL_CONDITION)],
                          dtype=known.dtype, device=known.device)
        return (known - lo) / (hi - lo) - 0.5

    def encode_initial(self, frames: torch.Tensor, known: Optional[torch.Tensor] = None) -> torch.Tensor:
        """First ``init_frames`` frames -> z0. frames: [B, >=l, H, W, C]."""
        l = self.cfg.init_frames
        if frames.shape[1] < l:
            raise ValueError(f"need at least {l} frames, got {frames.shape[1]}")
        z0 = self.initial_encoder(frames[:, :l], self._known_feat(known))
        if self.cfg.system == "rigid_body" and not self.abstract_latent:
            q = S.quat_normalize(z0[..., 3:7])
            z0 = torch.cat([z0[..., :3], q, z0[..., 7:]], dim=-1)
        return z0

    def encode_context(self, context: torch.Tensor, known: Optional[torch.Tensor] = None):
        """Mean-aggregated codes from a context set [B, k, T, H, W, C]."""
        b, k = context.shape[:2]
        flat = context.reshape(b * k, *context.shape[2:])
        kf = self._known_feat(known.reshape(b * k, -1)) if known is not None else None
        c_n = c_p = None
        if self.needs_cn:
            feat = self.context_trunk_n(flat)
            if kf is not None:
                feat = torch.cat([feat, kf], dim=-1)
            c_n = self.context_head_n(feat).reshape(b, k, -1).mean(dim=1)
        if self.needs_cp:
            feat = self.context_trunk_p(flat)
            if kf is not None:
                feat = torch.cat([feat, kf], dim=-1)
            c_p = self.context_head_p(feat).reshape(b, k, -1).mean(dim=1)
        return c_p, c_n

    def encode_cp_series(self, series: torch.Tensor, known: Optional[torch.Tensor] = None):
        """Physics code from a single full series (per-query identification)."""
        if not self.needs_cp:
            return None
        feat = self.context_trunk_p(series)
        kf = self._known_feat(known) if known is not None else None
        if kf is not None:
            feat = torch.cat([feat, kf], dim=-1)
        return self.context_head_p(feat)

    def encode_recon(self, series: torch.Tensor, known: Optional[torch.Tensor] = None):
        """Joint code inference from the series itself (reconstruction strategy)."""
        feat = self.recon_trunk(series)
        kf = self._known_feat(known) if known is not None else None
        if kf is not None:
            feat = torch.cat([feat, kf], dim=-1)
        c_p = self.recon_cp_head(feat) if self.needs_cp else None
        c_n = self.recon_cn_head(feat) if self.needs_cn else None
        return c_p, c_n

    # -- decoding -------------------------------------------------------------

    def _decoder_comps(self):
        if self.cfg.decoder == "neural_with_prior":
            if self.abstract_latent:
                return tuple(range(self.latent_dim // 2))
            return _POSITION_COMPS[self.cfg.system]
        return tuple(range(self.latent_dim))

    def decode_series(self, traj: torch.Tensor) -> torch.Tensor:
        """Latent trajectory [B, T+1, latent] -> frames [B, F, H, W, C]."""
        cfg = self.cfg
        if cfg.system == "pet":
            ct = traj
            if self.model_state_dim == self.spec.state_dim:  # oracle carries both tissues
                rgn = self.spec.num_regions
                ct = traj[..., :rgn] + traj[..., rgn:]
            if cfg.decoder == "physics":
                return self._decode_pet_scans(ct)
            vals = ct[:, 1:, :]
            frames = self.neural_decoder(vals[..., self._decoder_comps()])
            return frames
        if cfg.decoder == "physics":
            return R.decode_frames(cfg.system, traj)
        comps = self._decoder_comps()
        return self.neural_decoder(traj[..., list(comps)])

    def _decode_pet_scans(self, ct: torch.Tensor) -> torch.Tensor:
        # trapezoidal within-scan mean of the decayed activity
        spec = self.spec
        bounds = torch.as_tensor(sim.state_times(spec), dtype=ct.dtype, device=ct.device)
        decay = torch.exp(-bounds / spec.shared_constants["tau"])
        vals = ct * decay[None, :, None]
        means = 0.5 * (vals[:, :-1, :] + vals[:, 1:, :]) / spec.shared_constants["value_scale"]
        b, k, rgn = means.shape
        lut = torch.cat([means.new_zeros(b, k, 1), means], dim=-1)
        flat = lut[..., self.pet_mask_flat]
        h, w, _ = spec.obs_shape
        return flat.reshape(b, k, h, w, 1)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        """Single-state decode (physics systems)."""
        if self.cfg.system == "pet":
            raise ConfigurationError("scan frames need the trajectory; use decode_series")
        return self.decode_series(z[:, None, :])[:, 0]

    def parameter_blocks(self) -> dict[str, list[str]]:
        """Named parameter groups for masking checks and checkpoints."""
        blocks: dict[str, list[str]] = {}
        for name, _ in self.named_parameters():
            blocks.setdefault(name.split(".")[0], []).append(name)
        return blocks
