"""Metrics and evaluation protocols.

Two protocols: the *reconstruction task* identifies codes from a test series
and reproduces that same series; the *prediction task* identifies codes from
a context set and forecasts a disjoint series of the same dynamics group from
its own first frames. Metrics cover the observation space (MSE, VPT, PSNR),
the state space where the latent is physically meaningful, and direct
identification scores for the physics code and the residual function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import yaml

from . import data as D
from . import systems as S
from .models import HybridModel

DEFAULT_VPT_EPSILON = 0.01

# Derivative components the residual writes into, for the residual-fit score.
_AFFECTED_ROWS = {
    "pendulum": (1,),
    "mass_spring": (2, 3),
    "bouncing_ball": (2, 3),
    "double_pendulum": (2, 3),
    "rigid_body": tuple(range(7, 13)),
    "pet": tuple(range(S.PET_REGIONS)),
}


def mse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return float(np.mean((pred - truth) ** 2))


def per_frame_mse(pred, truth) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return ((pred - truth) ** 2).reshape(pred.shape[0], -1).mean(axis=1)


def vpt(pred, truth, epsilon: float) -> float:
    """Fraction of the horizon before the per-frame MSE first exceeds epsilon."""
    errs = per_frame_mse(pred, truth)
    over = np.flatnonzero(errs > epsilon)
    horizon = len(errs) - 1
    if len(over) == 0:
        return 1.0
    if horizon == 0:
        return 0.0
    return float(over[0]) / horizon


def psnr(pred, truth) -> float:
    """10 log10(MAX^2 / MSE) with MAX taken over the true series."""
    err = mse(pred, truth)
    if err == 0.0:
        return math.inf
    peak = float(np.max(np.asarray(truth, dtype=np.float64)))
    return 10.0 * math.log10(peak**2 / err)


def cp_error(cp_hat, cp_true) -> float:
    return mse(cp_hat, cp_true)


def true_cp_vector(model: HybridModel, params: dict) -> np.ndarray:
    """Ground-truth physics code in the model's identification layout."""
    out = []
    for name, _, _, width in model._box:
        if name == "phi" and model.cfg.system == "bouncing_ball":
            val = params["i"] * (math.pi / 8.0)
        else:
            val = params[name]
        arr = np.atleast_1d(np.asarray(val, dtype=np.float64))
        if arr.size != width:
            raise ValueError(f"parameter {name} width {arr.size} != {width}")
        out.extend(arr.tolist())
    return np.asarray(out)


def cn_fit_error(model: HybridModel, phi: torch.Tensor, cp_vec: Optional[torch.Tensor],
                 states_full: torch.Tensor, params: dict) -> float:
    """MSE between the identified residual field and the exact derivative gap.

    ``states_full`` are ground-truth states of the episode's group; the
    comparison is restricted to the derivative components the residual acts on.
    """
    spec = model.spec
    t0 = torch.zeros((), dtype=torch.float64)
    p64 = {k: torch.as_tensor(v, dtype=torch.float64) for k, v in params.items()}
    if spec.name == "pet":
        p64["A1"] = torch.as_tensor(150.0, dtype=torch.float64)  # cancels in the gap
    truth = S.residual_truth_batch(spec, states_full.to(torch.float64), t0, p64)
    z_model = S.collapse_state(spec, states_full).to(torch.float32)
    with torch.no_grad():
        res = model.residual_forward(z_model[None], phi[:1],
                                     None if cp_vec is None else cp_vec[:1])[0]
    rows = list(_AFFECTED_ROWS[spec.name])
    if spec.name == "pet":
        truth_rows = truth  # already in collapsed coordinates
        res_rows = res
    else:
        truth_rows = truth[..., rows]
        res_rows = res[..., rows]
    return mse(res_rows.numpy(), truth_rows.numpy())


@dataclass
class EvalConfig:
    protocol: str  # recon_task | prediction_task
    split: str = "test_id"
    k: int = 1
    episodes: int = 24
    epsilon: float = DEFAULT_VPT_EPSILON
    seed: int = 0
    cn_fit_states: int = 512

    def __post_init__(self):
        if self.protocol not in ("recon_task", "prediction_task"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class EvalReport:
    system: str
    protocol: str
    split: str
    k: int
    epsilon: float
    episodes: int
    dynamics_mode: str
    decoder: str
    strategy: str
    seed: int
    metrics: dict = field(default_factory=dict)

    def to_yaml(self) -> str:
        return yaml.safe_dump(asdict(self), sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_yaml())

    @staticmethod
    def load(path) -> "EvalReport":
        return EvalReport(**yaml.safe_load(Path(path).read_text()))

    def mean(self, name: str) -> float:
        return self.metrics[name]["mean"]


def _identify(model: HybridModel, context, context_known, query, query_known):
    """Codes per the model's strategy; query identification for mixed c_p."""
    if model.cfg.strategy == "recon":
        cp, cn = model.encode_recon(context[:, 0], None if context_known is None
                                    else context_known[:, 0])
        return cp, cn
    cp, cn = model.encode_context(context, context_known)
    if model.cfg.strategy == "mixed" and model.needs_cp:
        cp = model.encode_cp_series(query, query_known)
    return cp, cn


def _zseries_for_metrics(model: HybridModel, traj: torch.Tensor) -> np.ndarray:
    return S.collapse_state(model.spec, traj).numpy()


def run_protocol(model: HybridModel, reader: D.DatasetReader, cfg: EvalConfig) -> EvalReport:
    if not reader.allow_state_access:
        reader = D.DatasetReader(reader.root, allow_state_access=True)
    rng = np.random.default_rng(cfg.seed)
    spec = model.spec
    include_z = model.cfg.decoder == "physics" and model.cfg.dynamics_mode != "purely_neural"
    split = reader.split(cfg.split)
    states_all = reader.states(cfg.split)
    per_group = reader.manifest.per_group
    model.eval()

    acc: dict[str, list] = {}

    def push(name, value):
        acc.setdefault(name, []).append(float(value))

    for _ in range(cfg.episodes):
        if cfg.protocol == "recon_task":
            ep = reader.sample_episode(cfg.split, 1, 1, rng)
            target_frames = ep.context[0:1]
            target_clean = split.clean_frames[ep.context_idx[0:1]]
            target_states = states_all[ep.context_idx[0:1]]
            query, query_known = ep.context[0:1], (
                None if ep.context_known is None else ep.context_known[0:1])
            context, context_known = ep.context[0:1][None], (
                None if ep.context_known is None else ep.context_known[0:1][None])
        else:
            k = min(cfg.k, per_group - 1)
            ep = reader.sample_episode(cfg.split, k, 1, rng)
            target_frames = ep.query
            target_clean = ep.query_clean
            target_states = states_all[ep.query_idx]
            query, query_known = ep.query, ep.query_known
            context = ep.context[None]
            context_known = None if ep.context_known is None else ep.context_known[None]

        with torch.no_grad():
            cp, cn = _identify(model, context, context_known, query, query_known)
            phi = model.make_phi(cn, cp.shape[0] if cp is not None else 1)
            z0 = model.encode_initial(query, query_known)
            traj = model.rollout(z0, cp, phi, query_known)
            pred = model.decode_series(traj)

        pred_np = pred[0].numpy()
        truth_np = target_clean[0].numpy()
        push("x_mse", mse(pred_np, truth_np))
        push("x_vpt", vpt(pred_np, truth_np, cfg.epsilon))
        push("psnr", psnr(pred_np, truth_np))
        if include_z:
            z_pred = _zseries_for_metrics(model, traj[0])
            z_true = S.collapse_state(spec, target_states[0]).numpy()
            push("z_mse", mse(z_pred, z_true))
            push("z_vpt", vpt(z_pred[:, None], z_true[:, None], cfg.epsilon))
        if model.needs_cp and cp is not None:
            push("cp_mse", cp_error(cp[0].numpy(), true_cp_vector(model, ep.params)))
        if model.needs_cn and model.has_residual:
            group_members = split.members[ep.group]
            grp_states = states_all[group_members].reshape(-1, states_all.shape[-1])
            pick = rng.choice(grp_states.shape[0],
                              size=min(cfg.cn_fit_states, grp_states.shape[0]),
                              replace=False)
            push("cn_fit", cn_fit_error(model, phi, cp, grp_states[pick], ep.params))

    metrics = {
        name: {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        for name, vals in acc.items()
    }
    return EvalReport(
        system=spec.name,
        protocol=cfg.protocol,
        split=cfg.split,
        k=cfg.k,
        epsilon=cfg.epsilon,
        episodes=cfg.episodes,
        dynamics_mode=model.cfg.dynamics_mode,
        decoder=model.cfg.decoder,
        strategy=model.cfg.strategy,
        seed=cfg.seed,
        metrics=metrics,
    )


def aggregate_reports(reports: list[EvalReport]) -> dict:
    """Mean and across-seed std of each metric's per-run mean."""
    names = sorted({m for r in reports for m in r.metrics})
    out = {}
    for name in names:
        vals = [r.metrics[name]["mean"] for r in reports if name in r.metrics]
        out[name] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)),
                     "n_seeds": len(vals)}
    return out
