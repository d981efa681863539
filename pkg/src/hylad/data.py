"""Dataset generation, persistence, and episode serving.

On-disk layout: one directory per split holding raw tensors in the HYLD
container (8-byte-aligned header: magic, version, dtype code, rank, dims;
little-endian row-major payload) plus a YAML manifest at the root. Ground
truth state trajectories are stored for evaluation but are gated behind an
explicit flag so training paths cannot read them by accident.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import yaml

from . import render as R
from . import simulate as sim
from . import systems as S

MAGIC = b"HYLD"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i4")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int32"): 2}

SPLITS = ("train", "test_id", "test_ood")


class FormatError(ValueError):
    """Container magic/version/dtype did not match."""


def write_tensor(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, code, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype(_DTYPES[code], copy=False).tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        version, code, rank = struct.unpack("<III", fh.read(12))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if code not in _DTYPES:
            raise FormatError(f"{path}: unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        payload = fh.read()
    arr = np.frombuffer(payload, dtype=_DTYPES[code])
    expect = int(np.prod(dims)) if rank else 1
    if arr.size != expect:
        raise FormatError(f"{path}: payload holds {arr.size} values, dims say {expect}")
    return arr.reshape(dims).copy()


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def param_columns(spec: S.SystemSpec) -> list[str]:
    cols = []
    by_name = {p.name: p for p in spec.full_params}
    for name in spec.group_key:
        if by_name[name].per_region:
            cols.extend(f"{name}_r{j}" for j in range(spec.num_regions))
        else:
            cols.append(name)
    return cols


def params_from_row(spec: S.SystemSpec, row: np.ndarray) -> dict:
    """Rebuild a dynamics-parameter dict from one group_params row."""
    by_name = {p.name: p for p in spec.full_params}
    out, idx = {}, 0
    for name in spec.group_key:
        if by_name[name].per_region:
            out[name] = np.asarray(row[idx : idx + spec.num_regions], dtype=np.float64)
            idx += spec.num_regions
        else:
            out[name] = float(row[idx])
            idx += 1
    return out


def known_columns(spec: S.SystemSpec) -> list[str]:
    return [p.name for p in spec.params_by_role(S.ParamRole.INITIAL_CONDITION)]


@dataclass
class DatasetManifest:
    system: str
    seed: int
    per_group: int
    groups: dict
    counts: dict
    time_grid: dict
    obs_shape: list
    state_dim: int
    dynamics_group_key: list
    param_cols: list
    known_cols: list
    files: dict
    snr_db: Optional[float] = None
    format_version: int = FORMAT_VERSION

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.__dict__, sort_keys=True)

    @staticmethod
    def load(path) -> "DatasetManifest":
        doc = yaml.safe_load(Path(path).read_text())
        return DatasetManifest(**doc)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def _split_groups(groups) -> dict:
    if isinstance(groups, dict):
        return dict(groups)
    m = int(groups)
    return {"train": m, "test_id": max(1, round(m / 3)), "test_ood": max(1, round(m / 3))}


def _batched_params(spec: S.SystemSpec, draws: list[dict], knowns: list[dict]) -> dict:
    out = {}
    for name in spec.group_key:
        vals = np.stack([np.atleast_1d(np.asarray(d[name], dtype=np.float64)) for d in draws])
        out[name] = torch.from_numpy(vals[:, 0] if vals.shape[1] == 1 else vals)
    for name in known_columns(spec):
        out[name] = torch.tensor([k[name] for k in knowns], dtype=torch.float64)
    return out


def _render_split_frames(spec: S.SystemSpec, states: torch.Tensor) -> np.ndarray:
    n, t, sd = states.shape
    chunks = []
    step = max(1, 2_000_000 // (spec.obs_shape[0] * spec.obs_shape[1] * t))
    for lo in range(0, n, step):
        z = states[lo : lo + step].reshape(-1, sd).to(torch.float32)
        with torch.no_grad():
            fr = R.decode_frames(spec.name, z).clamp_(0.0, 1.0)
        chunks.append(fr.reshape(-1, t, *fr.shape[1:]).numpy())
    return np.concatenate(chunks, axis=0)


def _generate_split(spec: S.SystemSpec, split: str, m_groups: int, per_group: int,
                    rng: np.random.Generator, substeps: int):
    draws, knowns, z0s, gids = [], [], [], []
    group_rows = []
    for g in range(m_groups):
        params = S.sample_dynamics_params(spec, split, rng)
        row = []
        for name in spec.group_key:
            row.extend(np.atleast_1d(params[name]).tolist())
        group_rows.append(row)
        for _ in range(per_group):
            draws.append(params)
            knowns.append(S.sample_known(spec, rng))
            z0s.append(S.sample_initial_state(spec, rng))
            gids.append(g)
    batched = _batched_params(spec, draws, knowns)
    z0 = torch.from_numpy(np.stack(z0s))

    if spec.name == "pet":
        # integrate on the dense quadrature grid directly
        quad = R.default_pet_config().quadrature_points
        n_dense = spec.frames * quad
        times_dense = np.linspace(0.0, spec.t_end, n_dense + 1)
        z = z0
        out = [z]
        deriv = lambda zz, tt: S.full_derivative_batch(spec, zz, tt, batched)
        for idx in range(n_dense):
            dt = (times_dense[idx + 1] - times_dense[idx]) / 2
            for s2 in range(2):
                t = torch.as_tensor(times_dense[idx] + s2 * dt, dtype=z.dtype)
                z = sim.rk4_step(deriv, z, t, dt)
            out.append(z)
        dense_states = torch.stack(out)  # [Nd+1, N, 10]
        rgn = spec.num_regions
        ct_dense = (dense_states[..., :rgn] + dense_states[..., rgn:]).numpy()
        cfg = R.default_pet_config()
        decay = np.exp(-times_dense / cfg.tau)
        integrand = ct_dense * decay[:, None, None]
        wts = R._simpson_weights(quad)
        dt_q = cfg.scan_period / quad
        means = np.empty((spec.frames, ct_dense.shape[1], rgn))
        for k in range(spec.frames):
            seg = integrand[k * quad : k * quad + quad + 1]
            means[k] = (wts[:, None, None] * seg).sum(axis=0) * dt_q / cfg.scan_period
        means = means / cfg.value_scale
        mask = cfg.roi_mask
        lut = np.concatenate([np.zeros((spec.frames, means.shape[1], 1)), means], axis=2)
        frames = lut[:, :, mask.reshape(-1)].reshape(spec.frames, means.shape[1], *mask.shape)
        frames = np.transpose(frames, (1, 0, 2, 3))[..., None].astype(np.float32)
        states = dense_states[::quad].transpose(0, 1).numpy().astype(np.float32)
        frame_times = (np.arange(spec.frames) + 1) * cfg.scan_period
    else:
        traj = sim.integrate_batch(spec, batched, z0, substeps=substeps)  # [T, N, sd]
        states_t = traj.transpose(0, 1)  # [N, T, sd]
        frames = _render_split_frames(spec, states_t)
        states = states_t.numpy().astype(np.float32)
        frame_times = spec.time_grid

    return {
        "frames": frames,
        "states": states,
        "group_ids": np.asarray(gids, dtype=np.int32),
        "group_params": np.asarray(group_rows, dtype=np.float32),
        "series_known": np.asarray([[k[n] for n in known_columns(spec)] for k in knowns],
                                   dtype=np.float32).reshape(len(knowns), -1),
        "frame_times": np.asarray(frame_times, dtype=np.float64),
        "state_times": np.asarray(sim.state_times(spec), dtype=np.float64),
    }


def generate_dataset(spec: S.SystemSpec, out_dir, groups, per_group: int, seed: int,
                     snr_db: Optional[float] = None, substeps: int = sim.DEFAULT_SUBSTEPS) -> Path:
    """Sample dynamics groups, integrate, render, and persist all splits."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    group_counts = _split_groups(groups)
    files: dict = {}
    counts = {}
    for split_idx, split in enumerate(SPLITS):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), split_idx]))
        arrays = _generate_split(spec, split, group_counts[split], per_group, rng, substeps)
        if snr_db is not None:
            noise_rng = np.random.default_rng(np.random.SeedSequence([int(seed), split_idx, 7]))
            arrays["clean_frames"] = arrays["frames"]
            noisy = np.empty_like(arrays["frames"])
            for i in range(arrays["frames"].shape[0]):
                series = R.ObservationSeries(arrays["frames"][i], arrays["frame_times"],
                                             spec.name)
                noisy[i] = R.add_observation_noise(series, snr_db, noise_rng).frames
            arrays["frames"] = noisy
        sdir = root / split
        sdir.mkdir(exist_ok=True)
        files[split] = {}
        for name, arr in arrays.items():
            if arr.size == 0 and name == "series_known":
                continue
            write_tensor(sdir / f"{name}.hyld", arr)
            files[split][name] = list(arr.shape)
        counts[split] = int(arrays["frames"].shape[0])
    manifest = DatasetManifest(
        system=spec.name,
        seed=int(seed),
        per_group=int(per_group),
        groups={k: int(v) for k, v in group_counts.items()},
        counts=counts,
        time_grid={"t_end": float(spec.t_end), "frames": int(spec.frames)},
        obs_shape=list(spec.obs_shape),
        state_dim=int(spec.state_dim),
        dynamics_group_key=list(spec.group_key),
        param_cols=param_columns(spec),
        known_cols=known_columns(spec),
        files=files,
        snr_db=None if snr_db is None else float(snr_db),
    )
    (root / "manifest.yaml").write_text(manifest.to_yaml())
    return root


def validate_dataset(root) -> list[str]:
    """Compare the manifest against the files on disk; return problems."""
    root = Path(root)
    problems = []
    manifest = DatasetManifest.load(root / "manifest.yaml")
    for split, entries in manifest.files.items():
        for name, dims in entries.items():
            path = root / split / f"{name}.hyld"
            if not path.exists():
                problems.append(f"missing {path}")
                continue
            arr = read_tensor(path)
            if list(arr.shape) != list(dims):
                problems.append(f"{path}: shape {list(arr.shape)} != manifest {dims}")
        n = manifest.counts[split]
        dims = entries.get("frames")
        if dims and dims[0] != n:
            problems.append(f"{split}: frames count {dims[0]} != manifest count {n}")
    return problems


# ---------------------------------------------------------------------------
# Serving
# ---------------------------------------------------------------------------


@dataclass
class Episode:
    """k context and d query series sharing one dynamics parameter tuple.

    ``query`` holds the stored (possibly noisy) observations the model may
    condition on; ``query_clean`` holds the noiseless frames used as scoring
    targets (identical to ``query`` for noiseless datasets).
    """

    context: torch.Tensor  # [k, T, H, W, C]
    query: torch.Tensor  # [d, T, H, W, C]
    query_clean: torch.Tensor
    context_known: Optional[torch.Tensor]  # [k, n_known]
    query_known: Optional[torch.Tensor]
    params: dict  # shared dynamics parameters; evaluation only
    group: int
    context_idx: np.ndarray
    query_idx: np.ndarray


class EpisodeError(ValueError):
    pass


@dataclass
class SplitData:
    frames: torch.Tensor
    clean_frames: torch.Tensor
    group_ids: np.ndarray
    group_params: np.ndarray
    series_known: Optional[torch.Tensor]
    frame_times: np.ndarray
    state_times: np.ndarray
    _states: Optional[torch.Tensor]
    members: list = field(default_factory=list)


class DatasetReader:
    """Immutable in-memory view of a generated dataset.

    ``allow_state_access`` gates the ground-truth state trajectories, which
    exist for evaluation only.
    """

    def __init__(self, root, allow_state_access: bool = False):
        self.root = Path(root)
        self.manifest = DatasetManifest.load(self.root / "manifest.yaml")
        self.spec = S.get_system(self.manifest.system)
        self.allow_state_access = allow_state_access
        self._splits: dict[str, SplitData] = {}

    def split(self, name: str) -> SplitData:
        if name not in self._splits:
            sdir = self.root / name
            frames = torch.from_numpy(read_tensor(sdir / "frames.hyld"))
            clean_path = sdir / "clean_frames.hyld"
            clean = torch.from_numpy(read_tensor(clean_path)) if clean_path.exists() else frames
            gids = read_tensor(sdir / "group_ids.hyld")
            gparams = read_tensor(sdir / "group_params.hyld")
            known_path = sdir / "series_known.hyld"
            known = torch.from_numpy(read_tensor(known_path)) if known_path.exists() else None
            states = None
            states_path = sdir / "states.hyld"
            if states_path.exists():
                states = torch.from_numpy(read_tensor(states_path))
            members = [np.flatnonzero(gids == g) for g in range(gparams.shape[0])]
            self._splits[name] = SplitData(
                frames=frames,
                clean_frames=clean,
                group_ids=gids,
                group_params=gparams,
                series_known=known,
                frame_times=read_tensor(sdir / "frame_times.hyld"),
                state_times=read_tensor(sdir / "state_times.hyld"),
                _states=states,
                members=members,
            )
        return self._splits[name]

    def states(self, name: str) -> torch.Tensor:
        if not self.allow_state_access:
            raise PermissionError(
                "ground-truth states are evaluation-only; open the reader with "
                "allow_state_access=True in evaluation code"
            )
        st = self.split(name)._states
        if st is None:
            raise FileNotFoundError(f"no states stored for split {name}")
        return st

    def group_params_dict(self, split: str, group: int) -> dict:
        row = self.split(split).group_params[group]
        return params_from_row(self.spec, row)

    def sample_episode(self, split: str, k: int, d: int, rng: np.random.Generator,
                       group_pool: Optional[Sequence[int]] = None) -> Episode:
        data = self.split(split)
        pool = list(group_pool) if group_pool is not None else list(range(len(data.members)))
        group = int(pool[rng.integers(len(pool))])
        members = data.members[group]
        if len(members) < k + d:
            raise EpisodeError(
                f"group {group} in split {split} has {len(members)} members; "
                f"episode needs k+d={k + d}"
            )
        pick = rng.choice(len(members), size=k + d, replace=False)
        ctx_idx = members[pick[:k]]
        qry_idx = members[pick[k:]]
        known = data.series_known
        return Episode(
            context=data.frames[ctx_idx],
            query=data.frames[qry_idx],
            query_clean=data.clean_frames[qry_idx],
            context_known=None if known is None else known[ctx_idx],
            query_known=None if known is None else known[qry_idx],
            params=self.group_params_dict(split, group),
            group=group,
            context_idx=ctx_idx,
            query_idx=qry_idx,
        )


def sample_episode(reader: DatasetReader, split: str, k: int, d: int,
                   rng: np.random.Generator) -> Episode:
    return reader.sample_episode(split, k, d, rng)
