"""Training stages for the hierarchical predictor and its baselines.

Stage 1 trains the context encoder and the high-level predictor jointly on
multi-hop latent prediction with an EMA target encoder.  Stages 2 and 3 train
the medium and low predictors teacher-forced inside frozen-embedding brackets.
Stage 4 regresses the semantic actor onto oracle actions.  The same machinery
trains the single-level baselines (one predictor, full chain) and the
supervised / autoencoder references.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import nn
from .errors import TrainingDiverged
from .rng import DOMAIN_TRAIN_ORDER, make_rng


class FrameTable:
    """Per-trajectory frame grid with stacked-observation gather.

    frames has shape (n_traj, n_steps, frame_dim); stacking replicates the
    first frame below step 0 and lays frames oldest first, matching the online
    frame-stacking path.
    """

    def __init__(self, frames: np.ndarray, frame_stack: int):
        if frames.ndim != 3:
            raise ValueError("frames must be (n_traj, n_steps, frame_dim)")
        self.frames = frames
        self.frame_stack = int(frame_stack)
        self.n_traj, self.n_steps, self.frame_dim = frames.shape
        self.in_dim = self.frame_dim * self.frame_stack
        self._offsets = np.arange(-(self.frame_stack - 1), 1)

    def stack(self, traj_idx: np.ndarray, step_idx: np.ndarray, frame_stack: Optional[int] = None) -> np.ndarray:
        k = self.frame_stack if frame_stack is None else int(frame_stack)
        ti = np.asarray(traj_idx, dtype=np.intp)
        si = np.asarray(step_idx, dtype=np.intp)
        offsets = self._offsets if k == self.frame_stack else np.arange(-(k - 1), 1)
        idx = np.maximum(si[:, None] + offsets[None, :], 0)
        gathered = self.frames[ti[:, None], idx]
        return np.ascontiguousarray(gathered, dtype=np.float64).reshape(len(ti), k * self.frame_dim)


@dataclass
class StageResult:
    losses: list = field(default_factory=list)
    rejected_steps: int = 0
    embedding_std_min: Optional[float] = None
    embedding_std_mean: Optional[float] = None
    collapsed: Optional[bool] = None


def _batches(n_samples: int, batch_size: int, rng) -> list:
    perm = rng.permutation(n_samples)
    return [perm[i : i + batch_size] for i in range(0, n_samples, batch_size)]


def _check_finite(loss: float, model_id: int, stage: str, epoch: int, batch: int) -> None:
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss in {stage} (model {model_id}, epoch {epoch}, batch {batch})")


def train_latent_chain(
    encoder: nn.Mlp,
    target_encoder: nn.Mlp,
    predictor: nn.Mlp,
    frames: FrameTable,
    actions: np.ndarray,
    stride: int,
    n_hops: int,
    anchor_stride: int,
    ema_rate: float,
    sgd: nn.SgdConfig,
    epochs: int,
    seed: int,
    model_id: int,
    stage_id: int = 1,
) -> StageResult:
    """Joint encoder + predictor training on autoregressive latent hops.

    Targets come from the target encoder and receive no gradients; the target
    encoder tracks the context encoder by EMA after every applied step.
    """
    n_traj, n_actions = actions.shape
    horizon = stride * n_hops
    anchor_positions = np.arange(0, n_actions - horizon + 1, anchor_stride)
    samples = [(ti, p) for ti in range(n_traj) for p in anchor_positions]
    ti_all = np.array([s[0] for s in samples], dtype=np.intp)
    p_all = np.array([s[1] for s in samples], dtype=np.intp)
    n_samples = len(samples)
    embed_dim = predictor.out_dim

    result = StageResult()
    for epoch in range(epochs):
        order_rng = make_rng(seed, DOMAIN_TRAIN_ORDER, model_id, stage_id, epoch)
        epoch_loss = 0.0
        for b_idx, batch in enumerate(_batches(n_samples, sgd.batch_size, order_rng)):
            ti = ti_all[batch]
            p = p_all[batch]
            x0 = frames.stack(ti, p)
            z0, enc_cache = nn.forward(encoder, x0)

            z = z0
            hop_caches = []
            gouts = []
            batch_loss = 0.0
            for s in range(1, n_hops + 1):
                block = actions[ti[:, None], (p + (s - 1) * stride)[:, None] + np.arange(stride)]
                inp = np.concatenate([z, block], axis=1)
                z, cache = nn.forward(predictor, inp)
                hop_caches.append(cache)
                target, _ = nn.forward(target_encoder, frames.stack(ti, p + s * stride))
                loss, gout = nn.cosine_loss(z, target)
                batch_loss += loss / n_hops
                gouts.append(gout / n_hops)
            _check_finite(batch_loss, model_id, f"stage{stage_id}", epoch, b_idx)

            pred_grads = nn.zero_grads(predictor)
            carry = None
            for s in reversed(range(n_hops)):
                g = gouts[s] if carry is None else gouts[s] + carry
                pg, gin = nn.backward(predictor, hop_caches[s], g)
                pred_grads = nn.add_grads(pred_grads, pg)
                carry = gin[:, :embed_dim]
            enc_grads, _ = nn.backward(encoder, enc_cache, carry)

            applied = nn.sgd_step_joint([(encoder, enc_grads), (predictor, pred_grads)], sgd)
            if applied:
                nn.ema_update(target_encoder, encoder, ema_rate)
            else:
                result.rejected_steps += 1
            epoch_loss += batch_loss * len(batch)
        result.losses.append(epoch_loss / n_samples)

    probe = frames.stack(ti_all[:256], p_all[:256])
    z_probe, _ = nn.forward(encoder, probe)
    stds = z_probe.std(axis=0)
    result.embedding_std_min = float(stds.min())
    result.embedding_std_mean = float(stds.mean())
    result.collapsed = bool(result.embedding_std_min <= 1e-3)
    return result


def train_bracket_chain(
    predictor: nn.Mlp,
    grids: np.ndarray,
    actions: np.ndarray,
    grid_stride: int,
    span_hops: int,
    sgd: nn.SgdConfig,
    epochs: int,
    seed: int,
    model_id: int,
    stage_id: int,
) -> StageResult:
    """Interval filling at one level over frozen grid embeddings.

    grids holds precomputed embeddings on the level's step grid (n_traj,
    n_grid, d); an anchor is any grid index G that starts a full interval, the
    bracket is the stored embedding at G + span_hops, and hop j regresses the
    autoregressive chain onto the stored embedding at G + j.  Only the
    predictor trains.
    """
    result = StageResult()
    if span_hops < 2:
        return result
    n_traj, n_grid, embed_dim = grids.shape
    anchor_grid = np.arange(0, n_grid - span_hops, span_hops)
    samples = [(ti, g) for ti in range(n_traj) for g in anchor_grid]
    ti_all = np.array([s[0] for s in samples], dtype=np.intp)
    g_all = np.array([s[1] for s in samples], dtype=np.intp)
    n_samples = len(samples)

    for epoch in range(epochs):
        order_rng = make_rng(seed, DOMAIN_TRAIN_ORDER, model_id, stage_id, epoch)
        epoch_loss = 0.0
        for b_idx, batch in enumerate(_batches(n_samples, sgd.batch_size, order_rng)):
            ti = ti_all[batch]
            g = g_all[batch]
            z = grids[ti, g]
            zb = grids[ti, g + span_hops]
            hop_caches = []
            gouts = []
            batch_loss = 0.0
            for j in range(1, span_hops):
                block = actions[ti[:, None], ((g + j - 1) * grid_stride)[:, None] + np.arange(grid_stride)]
                inp = np.concatenate([z, zb, block], axis=1)
                z, cache = nn.forward(predictor, inp)
                hop_caches.append(cache)
                loss, gout = nn.cosine_loss(z, grids[ti, g + j])
                batch_loss += loss / (span_hops - 1)
                gouts.append(gout / (span_hops - 1))
            _check_finite(batch_loss, model_id, f"stage{stage_id}", epoch, b_idx)

            pred_grads = nn.zero_grads(predictor)
            carry = None
            for j in reversed(range(span_hops - 1)):
                grad = gouts[j] if carry is None else gouts[j] + carry
                pg, gin = nn.backward(predictor, hop_caches[j], grad)
                pred_grads = nn.add_grads(pred_grads, pg)
                carry = gin[:, :embed_dim]

            if not nn.sgd_step_joint([(predictor, pred_grads)], sgd):
                result.rejected_steps += 1
            epoch_loss += batch_loss * len(batch)
        result.losses.append(epoch_loss / n_samples)
    return result


def train_regression(
    net: nn.Mlp,
    fetch: Callable,
    targets: np.ndarray,
    sgd: nn.SgdConfig,
    epochs: int,
    seed: int,
    model_id: int,
    stage_id: int,
) -> StageResult:
    """Minibatch MSE regression; fetch(idx) materializes the input batch."""
    n_samples = targets.shape[0]
    y = targets if targets.ndim == 2 else targets[:, None]
    result = StageResult()
    for epoch in range(epochs):
        order_rng = make_rng(seed, DOMAIN_TRAIN_ORDER, model_id, stage_id, epoch)
        epoch_loss = 0.0
        for b_idx, batch in enumerate(_batches(n_samples, sgd.batch_size, order_rng)):
            x = fetch(batch)
            out, cache = nn.forward(net, x)
            loss, gout = nn.mse_loss(out, y[batch])
            _check_finite(loss, model_id, f"stage{stage_id}", epoch, b_idx)
            grads, _ = nn.backward(net, cache, gout)
            if not nn.sgd_step_joint([(net, grads)], sgd):
                result.rejected_steps += 1
            epoch_loss += loss * len(batch)
        result.losses.append(epoch_loss / n_samples)
    return result


def train_autoencoder(
    encoder: nn.Mlp,
    decoder: nn.Mlp,
    fetch: Callable,
    n_samples: int,
    sgd: nn.SgdConfig,
    epochs: int,
    seed: int,
    model_id: int,
    stage_id: int = 1,
) -> StageResult:
    """Joint encoder/decoder pixel reconstruction."""
    result = StageResult()
    for epoch in range(epochs):
        order_rng = make_rng(seed, DOMAIN_TRAIN_ORDER, model_id, stage_id, epoch)
        epoch_loss = 0.0
        for b_idx, batch in enumerate(_batches(n_samples, sgd.batch_size, order_rng)):
            x = fetch(batch)
            z, enc_cache = nn.forward(encoder, x)
            recon, dec_cache = nn.forward(decoder, z)
            loss, gout = nn.mse_loss(recon, x)
            _check_finite(loss, model_id, f"stage{stage_id}", epoch, b_idx)
            dec_grads, gin = nn.backward(decoder, dec_cache, gout)
            enc_grads, _ = nn.backward(encoder, enc_cache, gin)
            if not nn.sgd_step_joint([(encoder, enc_grads), (decoder, dec_grads)], sgd):
                result.rejected_steps += 1
            epoch_loss += loss * len(batch)
        result.losses.append(epoch_loss / n_samples)

    probe = fetch(np.arange(min(256, n_samples)))
    z_probe, _ = nn.forward(encoder, probe)
    stds = z_probe.std(axis=0)
    result.embedding_std_min = float(stds.min())
    result.embedding_std_mean = float(stds.mean())
    result.collapsed = bool(result.embedding_std_min <= 1e-3)
    return result
