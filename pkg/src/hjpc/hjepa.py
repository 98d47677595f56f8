"""Three-level hierarchical latent predictor.

A shared context encoder maps stacked observation frames to an embedding.
Three predictors roll the embedding forward jointly: the high level jumps in
strides of ``depth_high`` steps conditioned on the action block it skips, the
medium level fills between high anchors conditioned additionally on the
bracketing future embedding, and the low level fills the remaining offsets the
same way inside each medium interval.  A target encoder (EMA copy of the
context encoder) provides regression targets during training and is never
updated by gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import nn
from .errors import ConfigurationError

LEVEL_HIGH = "high"
LEVEL_MEDIUM = "medium"
LEVEL_LOW = "low"

KIND_CONTEXT_ENCODER = "context_encoder"
KIND_TARGET_ENCODER = "target_encoder"
KIND_PREDICTOR_HIGH = "predictor_high"
KIND_PREDICTOR_MEDIUM = "predictor_medium"
KIND_PREDICTOR_LOW = "predictor_low"
KIND_ACTOR = "actor"


@dataclass(frozen=True)
class HjepaConfig:
    embed_dim: int = 256
    frame_stack: int = 2
    horizon: int = 20
    depth_high: int = 4
    depth_medium: int = 2
    depth_low: int = 1
    ema_rate: float = 0.99
    encoder_widths: tuple = (1024, 512)
    predictor_hidden: int = 1024
    actor_hidden: int = 128

    def __post_init__(self):
        k, h, m, l = self.horizon, self.depth_high, self.depth_medium, self.depth_low
        if not (1 <= l <= m <= h <= k):
            raise ConfigurationError(f"need 1 <= depth_low <= depth_medium <= depth_high <= horizon, got {l}/{m}/{h}/{k}")
        if k % h or h % m or m % l:
            raise ConfigurationError(
                f"divisibility violated: horizon={k} depth_high={h} depth_medium={m} depth_low={l}"
            )
        offsets = level_offsets(k, h, m, l)
        covered = sorted(offsets[LEVEL_HIGH] + offsets[LEVEL_MEDIUM] + offsets[LEVEL_LOW])
        if covered != list(range(1, k + 1)):
            raise ConfigurationError(
                f"level offsets do not tile 1..{k}: depth_high={h} depth_medium={m} depth_low={l}"
            )
        if self.embed_dim < 1 or self.frame_stack < 1:
            raise ConfigurationError("embed_dim and frame_stack must be positive")
        if not 0.0 <= self.ema_rate <= 1.0:
            raise ConfigurationError(f"ema_rate must lie in [0, 1], got {self.ema_rate}")
        if len(self.encoder_widths) < 1 or any(w < 1 for w in self.encoder_widths):
            raise ConfigurationError("encoder_widths must be positive")
        if self.predictor_hidden < 1 or self.actor_hidden < 1:
            raise ConfigurationError("hidden widths must be positive")


def level_offsets(horizon: int, depth_high: int, depth_medium: int, depth_low: int) -> dict:
    """Partition of target offsets 1..horizon into the three prediction levels.

    High owns multiples of its depth; medium owns remaining multiples of its
    depth; low owns whatever is left.
    """
    high = [j for j in range(1, horizon + 1) if j % depth_high == 0]
    medium = [j for j in range(1, horizon + 1) if j % depth_medium == 0 and j % depth_high != 0]
    low = [j for j in range(1, horizon + 1) if j % depth_medium != 0]
    return {LEVEL_HIGH: high, LEVEL_MEDIUM: medium, LEVEL_LOW: low}


@dataclass(frozen=True)
class PlanEntry:
    offset: int
    level: str
    conditioning: tuple  # offsets of the embeddings this prediction consumes


def rollout_plan(cfg: HjepaConfig) -> list:
    """Generation-ordered plan: high chain, then medium fills, then low fills."""
    k, h, m, l = cfg.horizon, cfg.depth_high, cfg.depth_medium, cfg.depth_low
    plan = []
    for s in range(1, k // h + 1):
        plan.append(PlanEntry(s * h, LEVEL_HIGH, ((s - 1) * h,)))
    if m < h:
        for start in range(0, k, h):
            prev = start
            for j in range(1, h // m):
                plan.append(PlanEntry(start + j * m, LEVEL_MEDIUM, (prev, start + h)))
                prev = start + j * m
    if l < m:
        for start in range(0, k, m):
            prev = start
            for j in range(1, m // l):
                plan.append(PlanEntry(start + j * l, LEVEL_LOW, (prev, start + m)))
                prev = start + j * l
    return plan


# -------------------------------------------------------------------- bundles


@dataclass
class ModelBundle:
    cfg: HjepaConfig
    context_encoder: nn.Mlp
    target_encoder: nn.Mlp
    predictor_high: nn.Mlp
    predictor_medium: nn.Mlp
    predictor_low: nn.Mlp
    actor: nn.Mlp

    def components(self) -> dict:
        return {
            KIND_CONTEXT_ENCODER: self.context_encoder,
            KIND_TARGET_ENCODER: self.target_encoder,
            KIND_PREDICTOR_HIGH: self.predictor_high,
            KIND_PREDICTOR_MEDIUM: self.predictor_medium,
            KIND_PREDICTOR_LOW: self.predictor_low,
            KIND_ACTOR: self.actor,
        }


def encoder_dims(input_dim: int, widths: Sequence[int], embed_dim: int) -> tuple:
    """Encoder layout: widen, one residual block at the widest layer, narrow."""
    dims = [input_dim, widths[0], widths[0]] + list(widths[1:]) + [embed_dim]
    residual = [False, True] + [False] * (len(widths) - 1 + 1)
    return dims, tuple(residual)


def build_encoder(input_dim: int, cfg: HjepaConfig, rng, unit_output: bool = True) -> nn.Mlp:
    """Residual MLP encoder; by default embeddings live on the unit sphere.

    The alignment loss is scale-invariant, so without the projection the
    predictors are free to inflate norms hop over hop, which starves the
    actor at rollout time. Reconstruction-trained encoders opt out.
    """
    dims, residual = encoder_dims(input_dim, cfg.encoder_widths, cfg.embed_dim)
    return nn.init_mlp(dims, rng, residual=residual, unit_output=unit_output)


def build_predictor(embed_dim: int, conditioning_dim: int, hidden: int, rng) -> nn.Mlp:
    return nn.init_mlp([embed_dim + conditioning_dim, hidden, embed_dim], rng, unit_output=True)


def build_actor(embed_dim: int, hidden: int, rng) -> nn.Mlp:
    return nn.init_mlp([embed_dim, hidden, 1], rng)


def build_bundle(cfg: HjepaConfig, input_dim: int, rng) -> ModelBundle:
    d = cfg.embed_dim
    encoder = build_encoder(input_dim, cfg, rng)
    return ModelBundle(
        cfg=cfg,
        context_encoder=encoder,
        target_encoder=encoder.clone(),
        predictor_high=build_predictor(d, cfg.depth_high, cfg.predictor_hidden, rng),
        predictor_medium=build_predictor(d, d + cfg.depth_medium, cfg.predictor_hidden, rng),
        predictor_low=build_predictor(d, d + cfg.depth_low, cfg.predictor_hidden, rng),
        actor=build_actor(d, cfg.actor_hidden, rng),
    )


def save_bundle(path, bundle: ModelBundle) -> list:
    from . import serial

    cfg = bundle.cfg
    meta = {
        "kind": "hjepa",
        "embed_dim": cfg.embed_dim,
        "frame_stack": cfg.frame_stack,
        "horizon": cfg.horizon,
        "depth_high": cfg.depth_high,
        "depth_medium": cfg.depth_medium,
        "depth_low": cfg.depth_low,
        "ema_rate": repr(cfg.ema_rate),
        "encoder_widths": ",".join(str(w) for w in cfg.encoder_widths),
        "predictor_hidden": cfg.predictor_hidden,
        "actor_hidden": cfg.actor_hidden,
    }
    return serial.save_model_dir(path, bundle.components(), meta)


def load_bundle(path) -> ModelBundle:
    from . import serial

    components, meta = serial.load_model_dir(path)
    if meta.get("kind") != "hjepa":
        raise ValueError(f"{path} does not hold a hierarchical bundle")
    cfg = HjepaConfig(
        embed_dim=int(meta["embed_dim"]),
        frame_stack=int(meta["frame_stack"]),
        horizon=int(meta["horizon"]),
        depth_high=int(meta["depth_high"]),
        depth_medium=int(meta["depth_medium"]),
        depth_low=int(meta["depth_low"]),
        ema_rate=float(meta["ema_rate"]),
        encoder_widths=tuple(int(w) for w in meta["encoder_widths"].split(",")),
        predictor_hidden=int(meta["predictor_hidden"]),
        actor_hidden=int(meta["actor_hidden"]),
    )
    return ModelBundle(
        cfg=cfg,
        context_encoder=components[KIND_CONTEXT_ENCODER],
        target_encoder=components[KIND_TARGET_ENCODER],
        predictor_high=components[KIND_PREDICTOR_HIGH],
        predictor_medium=components[KIND_PREDICTOR_MEDIUM],
        predictor_low=components[KIND_PREDICTOR_LOW],
        actor=components[KIND_ACTOR],
    )


@dataclass
class SingleLevelBundle:
    """Flat baseline: one predictor rolled at a fixed stride."""

    embed_dim: int
    frame_stack: int
    horizon: int
    depth: int
    encoder: nn.Mlp
    target_encoder: nn.Mlp
    predictor: nn.Mlp
    actor: nn.Mlp

    def components(self) -> dict:
        return {
            KIND_CONTEXT_ENCODER: self.encoder,
            KIND_TARGET_ENCODER: self.target_encoder,
            "predictor": self.predictor,
            KIND_ACTOR: self.actor,
        }


def build_single_level(cfg: HjepaConfig, depth: int, input_dim: int, rng) -> SingleLevelBundle:
    if cfg.horizon % depth:
        raise ConfigurationError(f"horizon {cfg.horizon} not a multiple of stride {depth}")
    encoder = build_encoder(input_dim, cfg, rng)
    return SingleLevelBundle(
        embed_dim=cfg.embed_dim,
        frame_stack=cfg.frame_stack,
        horizon=cfg.horizon,
        depth=depth,
        encoder=encoder,
        target_encoder=encoder.clone(),
        predictor=build_predictor(cfg.embed_dim, depth, cfg.predictor_hidden, rng),
        actor=build_actor(cfg.embed_dim, cfg.actor_hidden, rng),
    )


def save_single_level(path, bundle: SingleLevelBundle) -> list:
    from . import serial

    meta = {
        "kind": "single_level",
        "embed_dim": bundle.embed_dim,
        "frame_stack": bundle.frame_stack,
        "horizon": bundle.horizon,
        "depth": bundle.depth,
    }
    return serial.save_model_dir(path, bundle.components(), meta)


def load_single_level(path) -> SingleLevelBundle:
    from . import serial

    components, meta = serial.load_model_dir(path)
    if meta.get("kind") != "single_level":
        raise ValueError(f"{path} does not hold a single-level bundle")
    return SingleLevelBundle(
        embed_dim=int(meta["embed_dim"]),
        frame_stack=int(meta["frame_stack"]),
        horizon=int(meta["horizon"]),
        depth=int(meta["depth"]),
        encoder=components[KIND_CONTEXT_ENCODER],
        target_encoder=components[KIND_TARGET_ENCODER],
        predictor=components["predictor"],
        actor=components[KIND_ACTOR],
    )


# ------------------------------------------------------------------- encoding


def encode(encoder: nn.Mlp, obs: np.ndarray) -> np.ndarray:
    """Embedding(s) for one stacked observation (in_dim,) or a batch (B, in_dim)."""
    out, _ = nn.forward(encoder, obs)
    return out


# -------------------------------------------------------- teacher-forced hops


def predict_high(predictor: nn.Mlp, z_start: np.ndarray, actions: np.ndarray, depth: int, horizon: int) -> list:
    """Autoregressive high-level chain from offset 0.

    actions holds the logged forces for offsets 0..horizon-1; hop s consumes
    the block [(s-1)*depth, s*depth).  Returns [(offset, embedding)].
    """
    if horizon % depth:
        raise ConfigurationError(f"horizon {horizon} not a multiple of stride {depth}")
    out = []
    z = np.asarray(z_start, dtype=np.float64)
    for s in range(1, horizon // depth + 1):
        block = np.asarray(actions[(s - 1) * depth : s * depth], dtype=np.float64)
        z, _ = nn.forward(predictor, np.concatenate([z, block]))
        out.append((s * depth, z))
    return out


def _bracket_chain(predictor, z_start, z_bracket, actions, stride, span, base_offset):
    out = []
    z = np.asarray(z_start, dtype=np.float64)
    zb = np.asarray(z_bracket, dtype=np.float64)
    for j in range(1, span // stride):
        block = np.asarray(actions[(j - 1) * stride : j * stride], dtype=np.float64)
        z, _ = nn.forward(predictor, np.concatenate([z, zb, block]))
        out.append((base_offset + j * stride, z))
    return out


def predict_medium(predictor, z_start, z_bracket, actions, depth_medium, depth_high, base_offset=0):
    """Fill one high-level interval: offsets base+m, base+2m, ... below base+h.

    Each hop conditions on the running embedding, the bracketing embedding at
    the interval end, and the skipped action block; actions holds the logged
    forces for the interval's first (h/m - 1) * m steps or more.
    """
    return _bracket_chain(predictor, z_start, z_bracket, actions, depth_medium, depth_high, base_offset)


def predict_low(predictor, z_start, z_bracket, actions, depth_low, depth_medium, base_offset=0):
    """Fill one medium interval the same way at the finest stride."""
    return _bracket_chain(predictor, z_start, z_bracket, actions, depth_low, depth_medium, base_offset)


# ------------------------------------------------------------ closed rollouts


@dataclass
class RolloutResult:
    """Latent rollout over offsets 0..horizon.

    embeddings maps every offset (0 included) to its predicted embedding;
    actions, present when an actor drives the rollout, holds one planned force
    per offset 0..horizon (horizon + 1 entries).
    """

    embeddings: dict
    actions: Optional[np.ndarray] = None


def _plan_actions(horizon, actor_fn, logged):
    if (actor_fn is None) == (logged is None):
        raise ValueError("exactly one of actor_fn / logged actions required")
    if logged is not None:
        work = np.asarray(logged, dtype=np.float64)[:horizon].copy()
        if work.shape[0] != horizon:
            raise ValueError(f"need {horizon} logged actions, got {work.shape[0]}")
        return work, None
    return None, actor_fn


def hierarchical_rollout(
    bundle: ModelBundle,
    z0: np.ndarray,
    actions: Optional[np.ndarray] = None,
    actor_fn: Optional[Callable] = None,
) -> RolloutResult:
    """Coarse-to-fine latent rollout from the current embedding.

    With logged actions the rollout is teacher-forced.  With an actor the
    action plan starts as actor(z0) everywhere and each offset's entry is
    replaced by actor(z_hat) as soon as that offset's embedding is produced;
    coarser levels therefore consume the plan as refined so far, in the fixed
    high -> medium -> low order.
    """
    cfg = bundle.cfg
    k, h, m, l = cfg.horizon, cfg.depth_high, cfg.depth_medium, cfg.depth_low
    work, fn = _plan_actions(k, actor_fn, actions)
    emitted = None
    if fn is not None:
        u0 = fn(z0)
        work = np.full(k, u0, dtype=np.float64)
        emitted = np.empty(k + 1, dtype=np.float64)
        emitted[0] = u0

    zhat = {0: np.asarray(z0, dtype=np.float64)}

    def note(offset, z):
        zhat[offset] = z
        if fn is not None:
            val = fn(z)
            emitted[offset] = val
            if offset < k:
                work[offset] = val

    z = zhat[0]
    for s in range(1, k // h + 1):
        block = work[(s - 1) * h : s * h]
        z, _ = nn.forward(bundle.predictor_high, np.concatenate([z, block]))
        note(s * h, z)
    if m < h:
        for start in range(0, k, h):
            z = zhat[start]
            zb = zhat[start + h]
            for j in range(1, h // m):
                block = work[start + (j - 1) * m : start + j * m]
                z, _ = nn.forward(bundle.predictor_medium, np.concatenate([z, zb, block]))
                note(start + j * m, z)
    if l < m:
        for start in range(0, k, m):
            z = zhat[start]
            zb = zhat[start + m]
            for j in range(1, m // l):
                block = work[start + (j - 1) * l : start + j * l]
                z, _ = nn.forward(bundle.predictor_low, np.concatenate([z, zb, block]))
                note(start + j * l, z)
    return RolloutResult(embeddings=zhat, actions=emitted)


def strided_rollout(
    predictor: nn.Mlp,
    z0: np.ndarray,
    depth: int,
    horizon: int,
    actions: Optional[np.ndarray] = None,
    actor_fn: Optional[Callable] = None,
) -> RolloutResult:
    """Single-level rollout at a fixed stride.

    Embeddings exist at multiples of the stride; lookups between stride points
    hold the latest one (embedding_at_offset).  With depth 1 this is the plain
    one-step chain and reproduces hierarchical_rollout with all depths 1
    bit for bit.
    """
    if horizon % depth:
        raise ConfigurationError(f"horizon {horizon} not a multiple of stride {depth}")
    work, fn = _plan_actions(horizon, actor_fn, actions)
    emitted = None
    if fn is not None:
        u0 = fn(z0)
        work = np.full(horizon, u0, dtype=np.float64)
        emitted = np.empty(horizon + 1, dtype=np.float64)
        emitted[0:depth] = u0

    zhat = {0: np.asarray(z0, dtype=np.float64)}
    z = zhat[0]
    for s in range(1, horizon // depth + 1):
        off = s * depth
        block = work[(s - 1) * depth : off]
        z, _ = nn.forward(predictor, np.concatenate([z, block]))
        zhat[off] = z
        if fn is not None:
            val = fn(z)
            emitted[off : min(off + depth, horizon + 1)] = val
            if off < horizon:
                work[off : min(off + depth, horizon)] = val
    return RolloutResult(embeddings=zhat, actions=emitted)


def embedding_at_offset(result: RolloutResult, offset: int, depth: int = 1) -> np.ndarray:
    """Embedding for an arbitrary offset: exact if present, else latest stride point."""
    if offset in result.embeddings:
        return result.embeddings[offset]
    return result.embeddings[(offset // depth) * depth]


def semantic_actor(actor: nn.Mlp, z: np.ndarray, params) -> "Action":
    """Force command from an embedding, saturated to the plant's bounds."""
    from .plant import clamp_action

    out, _ = nn.forward(actor, z)
    return clamp_action(float(out[0]), params)


def actor_force_fn(actor: nn.Mlp, params) -> Callable:
    def fn(z):
        return semantic_actor(actor, z, params).force

    return fn


# ----------------------------------------------------------- batched planning


def actor_forces(actor: nn.Mlp, z: np.ndarray, params) -> np.ndarray:
    """Saturated forces for a batch of embeddings (B, d) -> (B,)."""
    out, _ = nn.forward(actor, z)
    return np.clip(out[:, 0], params.u_min, params.u_max)


def hierarchical_plan_batch(bundle: ModelBundle, z0: np.ndarray, params) -> np.ndarray:
    """Action plans (B, horizon+1) for a batch of start embeddings.

    Each row follows the same coarse-to-fine actor-in-the-loop refinement as
    hierarchical_rollout; the batch form exists for the many-episode sweep,
    where per-sample rollouts would dominate the runtime.
    """
    cfg = bundle.cfg
    k, h, m, l = cfg.horizon, cfg.depth_high, cfg.depth_medium, cfg.depth_low
    z0 = np.asarray(z0, dtype=np.float64)
    u0 = actor_forces(bundle.actor, z0, params)
    work = np.repeat(u0[:, None], k, axis=1)
    emitted = np.empty((z0.shape[0], k + 1))
    emitted[:, 0] = u0
    zhat = {0: z0}

    def note(offset, z):
        zhat[offset] = z
        val = actor_forces(bundle.actor, z, params)
        emitted[:, offset] = val
        if offset < k:
            work[:, offset] = val

    z = z0
    for s in range(1, k // h + 1):
        block = work[:, (s - 1) * h : s * h]
        z, _ = nn.forward(bundle.predictor_high, np.concatenate([z, block], axis=1))
        note(s * h, z)
    if m < h:
        for start in range(0, k, h):
            z = zhat[start]
            zb = zhat[start + h]
            for j in range(1, h // m):
                block = work[:, start + (j - 1) * m : start + j * m]
                z, _ = nn.forward(bundle.predictor_medium, np.concatenate([z, zb, block], axis=1))
                note(start + j * m, z)
    if l < m:
        for start in range(0, k, m):
            z = zhat[start]
            zb = zhat[start + m]
            for j in range(1, m // l):
                block = work[:, start + (j - 1) * l : start + j * l]
                z, _ = nn.forward(bundle.predictor_low, np.concatenate([z, zb, block], axis=1))
                note(start + j * l, z)
    return emitted


def strided_plan_batch(predictor: nn.Mlp, actor: nn.Mlp, z0: np.ndarray, depth: int, horizon: int, params) -> np.ndarray:
    """Batched single-level plans (B, horizon+1), holding forces between stride points."""
    if horizon % depth:
        raise ConfigurationError(f"horizon {horizon} not a multiple of stride {depth}")
    z0 = np.asarray(z0, dtype=np.float64)
    u0 = actor_forces(actor, z0, params)
    work = np.repeat(u0[:, None], horizon, axis=1)
    emitted = np.empty((z0.shape[0], horizon + 1))
    emitted[:, 0:depth] = u0[:, None]
    z = z0
    for s in range(1, horizon // depth + 1):
        off = s * depth
        block = work[:, (s - 1) * depth : off]
        z, _ = nn.forward(predictor, np.concatenate([z, block], axis=1))
        val = actor_forces(actor, z, params)
        emitted[:, off : min(off + depth, horizon + 1)] = val[:, None]
        if off < horizon:
            work[:, off : min(off + depth, horizon)] = val[:, None]
    return emitted
