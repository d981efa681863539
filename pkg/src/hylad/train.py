"""Training loop for the three identification strategies.

recon: codes are inferred from the series being reconstructed.
meta:  both codes come from a disjoint context set; the loss scores
       forecasts of query series from their own first frames.
mixed: the neural code comes from context, the physics code from the
       query series itself.

Adam at 1e-3, episodes resampled every step, periodic validation on
held-out groups with the best-validation parameters retained.
"""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
import yaml

from . import data as D
from .models import HybridModel, ModelConfig


@dataclass
class TrainConfig:
    model: ModelConfig
    k: Union[int, tuple[int, int]] = 1  # a tuple trains with variable context size
    d: int = 4
    lr: float = 1e-3
    batch_episodes: int = 8
    steps: int = 2000
    seed: int = 0
    val_every: int = 100
    val_groups: int = 4
    val_episodes: int = 8
    patience: int = 20

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if isinstance(self.k, list):
            self.k = tuple(self.k)
        if self.model.strategy == "recon" and self.k not in (0, 1):
            raise ValueError("the reconstruction strategy does not use context sets")

    def to_dict(self) -> dict:
        doc = asdict(self)
        if isinstance(doc["k"], tuple):
            doc["k"] = list(doc["k"])
        return doc


@dataclass
class TrainResult:
    model: HybridModel
    history: list
    best_val: float
    final_loss: float
    checkpoint_dir: Optional[Path]
    diverged: bool = False


def _draw_k(cfg: TrainConfig, rng: np.random.Generator) -> int:
    if isinstance(cfg.k, tuple):
        return int(rng.integers(cfg.k[0], cfg.k[1] + 1))
    return int(cfg.k)


def _stack_episodes(eps: list[D.Episode]):
    ctx = torch.stack([e.context for e in eps])
    qry = torch.stack([e.query for e in eps])
    ck = qk = None
    if eps[0].context_known is not None:
        ck = torch.stack([e.context_known for e in eps])
        qk = torch.stack([e.query_known for e in eps])
    return ctx, qry, ck, qk


def episode_loss(model: HybridModel, ctx, qry, ck, qk) -> torch.Tensor:
    """Meta/mixed objective: forecast query frames from identified codes."""
    b, k = ctx.shape[:2]
    d = qry.shape[1]
    cp, cn = model.encode_context(ctx, ck)
    qry_flat = qry.reshape(b * d, *qry.shape[2:])
    qk_flat = qk.reshape(b * d, -1) if qk is not None else None
    if model.cfg.strategy == "mixed" and model.needs_cp:
        cp_q = model.encode_cp_series(qry_flat, qk_flat)
    elif cp is not None:
        cp_q = cp.repeat_interleave(d, dim=0)
    else:
        cp_q = None
    phi = model.make_phi(cn, b)
    phi_q = phi.repeat_interleave(d, dim=0) if phi is not None else None
    z0 = model.encode_initial(qry_flat, qk_flat)
    traj = model.rollout(z0, cp_q, phi_q, qk_flat)
    pred = model.decode_series(traj)
    return torch.mean((pred - qry_flat) ** 2)


def recon_loss(model: HybridModel, series, known) -> torch.Tensor:
    """Reconstruction objective: codes come from the series itself."""
    cp, cn = model.encode_recon(series, known)
    phi = model.make_phi(cn, series.shape[0])
    z0 = model.encode_initial(series, known)
    traj = model.rollout(z0, cp, phi, known)
    pred = model.decode_series(traj)
    return torch.mean((pred - series) ** 2)


def _series_pool(split: D.SplitData, groups: Sequence[int]) -> np.ndarray:
    return np.concatenate([split.members[g] for g in groups])


def _recon_batch(split: D.SplitData, pool: np.ndarray, n: int, rng: np.random.Generator):
    idx = pool[rng.choice(len(pool), size=min(n, len(pool)), replace=False)]
    known = split.series_known[idx] if split.series_known is not None else None
    return split.frames[idx], known


def train(cfg: TrainConfig, reader: D.DatasetReader, out_dir=None,
          log_every: int = 50) -> TrainResult:
    torch.manual_seed(cfg.seed)
    model = HybridModel(cfg.model)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    val_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))

    split = reader.split("train")
    n_groups = split.group_params.shape[0]
    n_val = min(cfg.val_groups, max(0, n_groups - 1))
    train_pool = list(range(n_groups - n_val))
    val_pool = list(range(n_groups - n_val, n_groups))
    per_group = reader.manifest.per_group
    recon = cfg.model.strategy == "recon"

    if recon:
        pool_idx = _series_pool(split, train_pool)
        val_idx = _series_pool(split, val_pool)
        val_batch = _recon_batch(split, val_idx, cfg.val_episodes, val_rng)
    else:
        k_val = _draw_k(cfg, val_rng) if isinstance(cfg.k, tuple) else int(cfg.k)
        val_eps = []
        for _ in range(cfg.val_episodes):
            d_eff = max(1, min(cfg.d, per_group - k_val))
            val_eps.append(reader.sample_episode("train", k_val, d_eff, val_rng,
                                                 group_pool=val_pool))

    def validate() -> float:
        model.eval()
        with torch.no_grad():
            if recon:
                loss = recon_loss(model, *val_batch)
            else:
                total = 0.0
                for e in val_eps:
                    total += float(episode_loss(
                        model, e.context[None], e.query[None],
                        None if e.context_known is None else e.context_known[None],
                        None if e.query_known is None else e.query_known[None]))
                loss = total / len(val_eps)
        model.train()
        return float(loss)

    history = []
    best_val = math.inf
    best_state = copy.deepcopy(model.state_dict())
    bad_vals = 0
    diverged = False
    t_start = time.time()
    model.train()
    last_loss = math.nan
    for step in range(1, cfg.steps + 1):
        if recon:
            series, known = _recon_batch(split, pool_idx, cfg.batch_episodes, rng)
            loss = recon_loss(model, series, known)
        else:
            k = _draw_k(cfg, rng)
            d_eff = max(1, min(cfg.d, per_group - k))
            eps = [reader.sample_episode("train", k, d_eff, rng, group_pool=train_pool)
                   for _ in range(cfg.batch_episodes)]
            loss = episode_loss(model, *_stack_episodes(eps))
        if not torch.isfinite(loss):
            diverged = True
            break
        opt.zero_grad()
        loss.backward()
        opt.step()
        last_loss = loss.detach().item()
        rec = {"step": step, "loss": last_loss}
        if step % cfg.val_every == 0 or step == cfg.steps:
            val = validate()
            rec["val_loss"] = val
            if val < best_val:
                best_val = val
                best_state = copy.deepcopy(model.state_dict())
                bad_vals = 0
            else:
                bad_vals += 1
            if bad_vals > cfg.patience:
                history.append(rec)
                break
        if step % log_every == 0 or "val_loss" in rec:
            rec["elapsed"] = round(time.time() - t_start, 2)
            history.append(rec)

    model.load_state_dict(best_state)
    model.eval()
    ckpt = None
    if out_dir is not None:
        ckpt = save_checkpoint(Path(out_dir), model, cfg, history, best_val)
    return TrainResult(model=model, history=history, best_val=best_val,
                       final_loss=last_loss, checkpoint_dir=ckpt, diverged=diverged)


# ---------------------------------------------------------------------------
# Checkpoints: one container file per named tensor plus a YAML header
# ---------------------------------------------------------------------------


def save_checkpoint(out_dir: Path, model: HybridModel, cfg: TrainConfig,
                    history: list, best_val: float) -> Path:
    out_dir = Path(out_dir)
    params_dir = out_dir / "params"
    params_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        if arr.dtype == np.int64:
            arr = arr.astype(np.int32)
        D.write_tensor(params_dir / (name.replace(".", "__") + ".hyld"), arr)
        names.append(name)
    header = {
        "config": cfg.to_dict(),
        "tensors": names,
        "best_val": float(best_val),
        "steps_run": int(history[-1]["step"]) if history else 0,
    }
    (out_dir / "checkpoint.yaml").write_text(yaml.safe_dump(header, sort_keys=True))
    with open(out_dir / "metrics.jsonl", "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec) + "\n")
    return out_dir


def load_checkpoint(ckpt_dir) -> tuple[HybridModel, TrainConfig]:
    ckpt_dir = Path(ckpt_dir)
    header = yaml.safe_load((ckpt_dir / "checkpoint.yaml").read_text())
    cfg = TrainConfig(**header["config"])
    model = HybridModel(cfg.model)
    state = {}
    for name in header["tensors"]:
        arr = D.read_tensor(ckpt_dir / "params" / (name.replace(".", "__") + ".hyld"))
        ref = model.state_dict()[name]
        state[name] = torch.from_numpy(arr).to(ref.dtype).reshape(ref.shape)
    model.load_state_dict(state)
    model.eval()
    return model, cfg
