"""Differentiable emission: state -> image for every benchmark system.

One soft-rasterization path serves both data generation and the model's
physics-based decoder, so the two agree bit-for-bit. Objects are drawn as
Gaussian-edged blobs and segments composited with a saturating union; the
cube uses flat-shaded orthographic faces in painter's order. All canvas
constants (world boxes, radii, colors) are fixed here so rendered frames
are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .systems import (
    PET_REGIONS,
    PET_TAU,
    PET_VALUE_SCALE,
    SystemSpec,
    get_system,
    quat_normalize,
    quat_rotate,
)


@dataclass
class ObservationSeries:
    frames: np.ndarray  # [T, H, W, C] in [0, 1] (noise may exceed the box)
    times: np.ndarray  # [T]
    system: str
    noise_snr_db: Optional[float] = None


# World half-extents of the square canvas, per system.
WORLD_HALF = {
    "pendulum": 2.75,
    "mass_spring": 8.0,
    "bouncing_ball": 5.0,
    "rigid_body": 3.0,
    "double_pendulum": 3.75,
}

BLOB_SIGMA = 1.5  # px, generic disc
ROD_SIGMA = 0.8  # px
ROD_GAIN = 0.5
CUBE_EDGE_SOFT = 0.8  # px, face edge softness
CUBE_LIGHT = (0.37, 0.28, 0.89)  # normalized below
CUBE_COLOR = (0.85, 0.40, 0.25)
CUBE_AMBIENT = 0.25

_GRID_CACHE: dict = {}


def _pixel_grid(system: str, hw: tuple[int, int], dtype, device):
    key = (system, hw, dtype, str(device))
    if key not in _GRID_CACHE:
        h, w = hw
        half = WORLD_HALF[system]
        pitch = 2.0 * half / w
        cols = torch.arange(w, dtype=dtype, device=device) + 0.5
        rows = torch.arange(h, dtype=dtype, device=device) + 0.5
        xs = -half + cols * pitch
        ys = half - rows * (2.0 * half / h)
        gx = xs[None, :].expand(h, w)
        gy = ys[:, None].expand(h, w)
        _GRID_CACHE[key] = (gx, gy, pitch)
    return _GRID_CACHE[key]


def pixel_pitch(system: str) -> float:
    spec = get_system(system)
    return 2.0 * WORLD_HALF[system] / spec.obs_shape[1]


def _blob(gx, gy, cx, cy, sigma_world):
    # cx, cy: [B]; grids [H, W] -> intensity [B, H, W]
    d2 = (gx[None] - cx[:, None, None]) ** 2 + (gy[None] - cy[:, None, None]) ** 2
    return torch.exp(-d2 / (2.0 * sigma_world**2))


def _segment(gx, gy, ax, ay, bx, by, sigma_world):
    px = gx[None] - ax[:, None, None]
    py = gy[None] - ay[:, None, None]
    ex = (bx - ax)[:, None, None]
    ey = (by - ay)[:, None, None]
    ee = (ex**2 + ey**2).clamp_min(1e-12)
    t = ((px * ex + py * ey) / ee).clamp(0.0, 1.0)
    dx = px - t * ex
    dy = py - t * ey
    return torch.exp(-(dx**2 + dy**2) / (2.0 * sigma_world**2))


def _union(*layers):
    acc = None
    for lay in layers:
        acc = lay if acc is None else acc + lay - acc * lay
    return acc


def _world_sigma(system, sigma_px):
    return sigma_px * pixel_pitch(system)


def _render_pendulum(z, hw, dtype, device):
    gx, gy, _ = _pixel_grid("pendulum", hw, dtype, device)
    L = get_system("pendulum").shared_constants["L"]
    phi = z[..., 0]
    bx = L * torch.sin(phi)
    by = -L * torch.cos(phi)
    zero = torch.zeros_like(bx)
    bob = _blob(gx, gy, bx, by, _world_sigma("pendulum", BLOB_SIGMA))
    rod = ROD_GAIN * _segment(gx, gy, zero, zero, bx, by, _world_sigma("pendulum", ROD_SIGMA))
    return _union(bob, rod)[..., None]


def _render_mass_spring(z, hw, dtype, device):
    gx, gy, _ = _pixel_grid("mass_spring", hw, dtype, device)
    x1, x2 = z[..., 0], z[..., 1]
    zero = torch.zeros_like(x1)
    sig = _world_sigma("mass_spring", BLOB_SIGMA + 0.3)
    d1 = _blob(gx, gy, x1, zero, sig)
    d2 = _blob(gx, gy, x2, zero, sig)
    blank = torch.zeros_like(d1)
    return torch.stack([d1, d2, blank], dim=-1)


def _render_ball(z, hw, dtype, device):
    gx, gy, _ = _pixel_grid("bouncing_ball", hw, dtype, device)
    disc = _blob(gx, gy, z[..., 0], z[..., 1], _world_sigma("bouncing_ball", BLOB_SIGMA))
    return disc[..., None]


def _render_double_pendulum(z, hw, dtype, device):
    gx, gy, _ = _pixel_grid("double_pendulum", hw, dtype, device)
    c = get_system("double_pendulum").shared_constants
    p1, p2 = z[..., 0], z[..., 1]
    zero = torch.zeros_like(p1)
    x1 = c["L1"] * torch.sin(p1)
    y1 = -c["L1"] * torch.cos(p1)
    x2 = x1 + c["L2"] * torch.sin(p2)
    y2 = y1 - c["L2"] * torch.cos(p2)
    sig_b = _world_sigma("double_pendulum", 1.3)
    sig_r = _world_sigma("double_pendulum", ROD_SIGMA)
    bob1 = _blob(gx, gy, x1, y1, sig_b)
    bob2 = _blob(gx, gy, x2, y2, sig_b)
    rods = ROD_GAIN * _union(
        _segment(gx, gy, zero, zero, x1, y1, sig_r),
        _segment(gx, gy, x1, y1, x2, y2, sig_r),
    )
    return torch.stack([bob1, bob2, rods], dim=-1)


_CUBE_CORNERS = np.array(
    [[sx, sy, sz] for sx in (-0.5, 0.5) for sy in (-0.5, 0.5) for sz in (-0.5, 0.5)]
)
# Vertex indices per face, wound counterclockwise seen from outside.
_CUBE_FACES = np.array(
    [
        [0, 1, 3, 2],  # -x
        [4, 6, 7, 5],  # +x
        [0, 4, 5, 1],  # -y
        [2, 3, 7, 6],  # +y
        [0, 2, 6, 4],  # -z
        [1, 5, 7, 3],  # +z
    ]
)
_CUBE_NORMALS = np.array(
    [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]], dtype=float
)


def _render_rigid_body(z, hw, dtype, device):
    gx, gy, pitch = _pixel_grid("rigid_body", hw, dtype, device)
    b = z.shape[0]
    edge = get_system("rigid_body").shared_constants["edge"]
    pos = z[..., :3]
    q = quat_normalize(z[..., 3:7])
    corners = torch.as_tensor(_CUBE_CORNERS * edge, dtype=dtype, device=device)
    verts = quat_rotate(q[:, None, :], corners[None, :, :].expand(b, 8, 3)) + pos[:, None, :]
    normals_body = torch.as_tensor(_CUBE_NORMALS, dtype=dtype, device=device)
    normals = quat_rotate(q[:, None, :], normals_body[None].expand(b, 6, 3))
    light = torch.as_tensor(CUBE_LIGHT, dtype=dtype, device=device)
    light = light / light.norm()
    lambert = (normals @ light).clamp_min(0.0)
    base = torch.as_tensor(CUBE_COLOR, dtype=dtype, device=device)
    shade = CUBE_AMBIENT + (1.0 - CUBE_AMBIENT) * lambert  # [B, 6]

    soft = CUBE_EDGE_SOFT * pitch
    face_verts = verts[:, torch.as_tensor(_CUBE_FACES.reshape(-1), device=device), :]
    face_verts = face_verts.reshape(b, 6, 4, 3)
    depth = face_verts[..., 2].mean(dim=-1)  # camera looks along -z from +z
    order = torch.argsort(depth, dim=1)  # far to near

    img = torch.zeros(b, *hw, 3, dtype=dtype, device=device)
    for rank in range(6):
        fidx = order[:, rank]
        fv = face_verts[torch.arange(b, device=device), fidx]  # [B, 4, 3]
        vx, vy = fv[..., 0], fv[..., 1]
        # Soft inside test of the projected quad; winding sign keeps it valid
        # for back faces whose projection is wound the other way.
        area = torch.zeros(b, dtype=dtype, device=device)
        for e in range(4):
            x0, y0 = vx[:, e], vy[:, e]
            x1, y1 = vx[:, (e + 1) % 4], vy[:, (e + 1) % 4]
            area = area + (x0 * y1 - x1 * y0)
        sign = torch.where(area >= 0, torch.ones_like(area), -torch.ones_like(area))
        alpha = torch.ones(b, *hw, dtype=dtype, device=device)
        for e in range(4):
            x0, y0 = vx[:, e], vy[:, e]
            x1, y1 = vx[:, (e + 1) % 4], vy[:, (e + 1) % 4]
            ex, ey = x1 - x0, y1 - y0
            elen = torch.sqrt(ex**2 + ey**2).clamp_min(1e-12)
            d = (ex[:, None, None] * (gy[None] - y0[:, None, None])
                 - ey[:, None, None] * (gx[None] - x0[:, None, None])) / elen[:, None, None]
            alpha = alpha * torch.sigmoid(sign[:, None, None] * d / soft)
        color = base[None, :] * shade[torch.arange(b, device=device), fidx][:, None]
        img = img * (1.0 - alpha[..., None]) + color[:, None, None, :] * alpha[..., None]
    return img


def decode_frames(system: str, z: torch.Tensor) -> torch.Tensor:
    """Differentiable emission of a batch of states to frames [B, H, W, C]."""
    spec = get_system(system)
    h, w, _ = spec.obs_shape
    flat = z.reshape(-1, z.shape[-1])
    dtype, device = flat.dtype, flat.device
    if system == "pendulum":
        out = _render_pendulum(flat, (h, w), dtype, device)
    elif system == "mass_spring":
        out = _render_mass_spring(flat, (h, w), dtype, device)
    elif system == "bouncing_ball":
        out = _render_ball(flat, (h, w), dtype, device)
    elif system == "double_pendulum":
        out = _render_double_pendulum(flat, (h, w), dtype, device)
    elif system == "rigid_body":
        out = _render_rigid_body(flat, (h, w), dtype, device)
    elif system == "pet":
        raise ValueError("scan frames come from the imaging model, see pet_emit/PetDecoder")
    else:
        raise KeyError(system)
    return out.reshape(*z.shape[:-1], h, w, out.shape[-1])


def physics_decoder(system: str, z: torch.Tensor) -> torch.Tensor:
    """Known-form emission g(z); identical code path to render_state."""
    return decode_frames(system, z)


def render_state(system: str, z) -> np.ndarray:
    with torch.no_grad():
        zt = torch.as_tensor(np.asarray(z, dtype=np.float32))[None, :]
        return decode_frames(system, zt)[0].numpy()


def render_series(spec: SystemSpec, states: np.ndarray, times: np.ndarray) -> ObservationSeries:
    with torch.no_grad():
        zt = torch.as_tensor(np.asarray(states, dtype=np.float32))
        frames = decode_frames(spec.name, zt).clamp(0.0, 1.0).numpy()
    return ObservationSeries(frames=frames, times=np.asarray(times, dtype=np.float64), system=spec.name)


# ---------------------------------------------------------------------------
# Scan-based imaging model
# ---------------------------------------------------------------------------


def build_roi_mask(hw: tuple[int, int] = (32, 32)) -> np.ndarray:
    """Fixed synthetic activity mask: 5 labeled regions inside an ellipse.

    Label 0 is background; 1..5 are a cortical ring, an inner ring, left and
    right deep regions, and a central core.
    """
    h, w = hw
    rows = np.arange(h)[:, None] + 0.5
    cols = np.arange(w)[None, :] + 0.5
    cy, cx = h / 2.0, w / 2.0
    rho = np.sqrt(((cols - cx) / (0.46 * w)) ** 2 + ((rows - cy) / (0.40 * h)) ** 2)
    mask = np.zeros((h, w), dtype=np.int32)
    mask[rho <= 1.0] = 1
    mask[rho <= 0.78] = 2
    inner = rho <= 0.55
    mask[inner & (cols < cx)] = 3
    mask[inner & (cols >= cx)] = 4
    mask[rho <= 0.25] = 5
    return mask


@dataclass
class PETImagingConfig:
    roi_mask: np.ndarray
    scan_period: float = 0.5
    num_scans: int = 80
    tau: float = PET_TAU
    quadrature_points: int = 8
    value_scale: float = PET_VALUE_SCALE

    def __post_init__(self):
        if self.roi_mask.max() > PET_REGIONS:
            raise ValueError("mask labels exceed the region count")


def default_pet_config() -> PETImagingConfig:
    return PETImagingConfig(roi_mask=build_roi_mask())


def _simpson_weights(n: int) -> np.ndarray:
    if n % 2 != 0:
        raise ValueError("composite Simpson needs an even interval count")
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def scan_means(ct_dense: np.ndarray, times: np.ndarray, cfg: PETImagingConfig) -> np.ndarray:
    """Per-scan mean decayed activity, one row per scan: [K, R].

    ``ct_dense`` holds C_T on a uniform grid with ``quadrature_points``
    intervals per scan window.
    """
    q = cfg.quadrature_points
    k = cfg.num_scans
    if ct_dense.shape[0] < k * q + 1:
        raise ValueError(
            f"need {k * q + 1} dense samples for {k} scans at {q} points/scan, got {ct_dense.shape[0]}"
        )
    decay = np.exp(-times / cfg.tau) if math.isfinite(cfg.tau) else np.ones_like(times)
    integrand = ct_dense * decay[:, None]
    wts = _simpson_weights(q)
    dt = cfg.scan_period / q
    out = np.empty((k, ct_dense.shape[1]))
    for s in range(k):
        seg = integrand[s * q : s * q + q + 1]
        out[s] = (wts[:, None] * seg).sum(axis=0) * dt / cfg.scan_period
    return out


def paint_regions(values: np.ndarray, cfg: PETImagingConfig) -> np.ndarray:
    """Region values [..., R] -> frames [..., H, W, 1] via the mask."""
    mask = cfg.roi_mask
    lead = values.shape[:-1]
    lut = np.concatenate([np.zeros(lead + (1,)), values], axis=-1)
    flat = lut.reshape(-1, lut.shape[-1])[:, mask.reshape(-1)]
    return flat.reshape(lead + mask.shape + (1,))


def pet_emit(ct_dense: np.ndarray, times: np.ndarray, cfg: PETImagingConfig) -> ObservationSeries:
    """Assemble scan frames from a densely sampled total-concentration curve."""
    means = scan_means(ct_dense, times, cfg) / cfg.value_scale
    mask = cfg.roi_mask
    lut = np.concatenate([np.zeros((means.shape[0], 1)), means], axis=1)
    frames = lut[:, mask.reshape(-1)].reshape(means.shape[0], *mask.shape, 1)
    scan_ends = (np.arange(cfg.num_scans) + 1) * cfg.scan_period
    return ObservationSeries(
        frames=frames.astype(np.float32), times=scan_ends, system="pet", noise_snr_db=None
    )


def add_observation_noise(series: ObservationSeries, snr_db, rng: np.random.Generator) -> ObservationSeries:
    """White Gaussian noise scaled so the empirical per-series SNR is exact.

    Noisy frames are stored unclipped so the stated SNR remains measurable.
    """
    if snr_db is None or snr_db == math.inf:
        return series
    x = series.frames.astype(np.float64)
    p_signal = float(np.mean(x**2))
    target = p_signal / (10.0 ** (snr_db / 10.0))
    noise = rng.standard_normal(x.shape)
    noise *= math.sqrt(target / float(np.mean(noise**2)))
    return ObservationSeries(
        frames=(x + noise).astype(np.float32),
        times=series.times,
        system=series.system,
        noise_snr_db=float(snr_db),
    )


def measured_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    p_signal = float(np.mean(clean.astype(np.float64) ** 2))
    p_noise = float(np.mean((noisy.astype(np.float64) - clean.astype(np.float64)) ** 2))
    return 10.0 * math.log10(p_signal / p_noise)


def export_png(frame: np.ndarray, path) -> None:
    """8-bit linear quantization of a [0,1] frame, for debugging."""
    from PIL import Image

    arr = (np.clip(frame, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    if arr.shape[-1] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path)
