"""Experiment orchestration: dataset generation, evaluation, sweeps.

Everything here is deterministic given (seed, config): stochastic units of
work draw from per-unit streams (see rng.py) so --jobs never changes results,
and training pipelines always consume datasets through their on-disk float32
round trip so regenerated and reloaded data agree byte for byte.
"""

from __future__ import annotations

import math
import multiprocessing
import os
import subprocess
import time
from concurrent import futures
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__, channel, config as config_mod, hjepa, nn, serial, training
from .errors import ConfigurationError
from .plant import (
    Action,
    PlantState,
    clamp_action,
    is_failed,
    lqr_gain,
    oracle_policy,
    render_observation,
    sample_initial_state,
    stack_frames,
    step_dynamics,
)
from .rng import (
    DOMAIN_DATASET,
    DOMAIN_EVAL_PREDICTION,
    DOMAIN_SWEEP_FADE,
    DOMAIN_SWEEP_INIT,
    DOMAIN_SWEEP_NOISE,
    DOMAIN_TRAIN_INIT,
    DS_HIGH_TEST,
    DS_HIGH_TRAIN,
    DS_LOW_TEST,
    DS_LOW_TRAIN,
    DS_MEDIUM_TEST,
    DS_MEDIUM_TRAIN,
    MODEL_AUTOENCODER,
    MODEL_HJEPA,
    MODEL_JEPA1,
    MODEL_JEPA4,
    MODEL_SUPERVISED2,
    MODEL_SUPERVISED4,
    make_rng,
)
from .serial import EmbeddingTrajectory, StateTrajectory
from .training import FrameTable

METRIC_HEADER = ("method", "offset", "error", "bits", "score", "devices", "snr_db")

ENCODING_METHODS = ("oracle", "zero", "hjepa", "jepa1", "jepa4", "supervised2", "supervised4", "autoencoder")
PREDICTION_METHODS = ("oracle", "zero", "repeat", "hjepa", "jepa1", "jepa4")
SWEEP_METHODS = ("hjepa", "jepa1", "raw_frame", "no_prediction")


@dataclass
class MetricRow:
    method: str
    offset: Optional[int] = None
    error: Optional[float] = None
    bits: Optional[int] = None
    score: Optional[float] = None
    devices: Optional[int] = None
    snr_db: Optional[float] = None

    def as_list(self) -> list:
        return [self.method, self.offset, self.error, self.bits, self.score, self.devices, self.snr_db]


def emit_metrics(path, rows: Sequence[MetricRow]) -> None:
    serial.emit_csv(path, METRIC_HEADER, [r.as_list() for r in rows])


# ----------------------------------------------------------------- parallelism

_WORK: dict = {}


def _set_work(**kw) -> None:
    _WORK.clear()
    _WORK.update(kw)


def _run_parallel(worker: Callable, items: Sequence, jobs: int) -> list:
    """Map worker over items; workers read shared state from _WORK via fork."""
    if jobs and jobs > 1 and len(items) > 1:
        try:
            ctx = multiprocessing.get_context("fork")
        except ValueError:
            return [worker(it) for it in items]
        chunk = max(1, math.ceil(len(items) / (jobs * 4)))
        with futures.ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            return list(pool.map(worker, items, chunksize=chunk))
    return [worker(it) for it in items]


# ------------------------------------------------------------ data generation


def simulate_trajectory(rng, params, gain, n_steps, exploration_std, angle_range, position_range):
    """One closed-loop trajectory under the noisy oracle; None if the plant fails."""
    state = sample_initial_state(rng, angle_range=angle_range, position_range=position_range)
    states = np.empty((n_steps + 1, 4))
    applied = np.empty(n_steps)
    oracle = np.empty(n_steps)
    states[0] = state.as_array()
    for k in range(n_steps):
        u_star = oracle_policy(state, gain, params).force
        u = u_star
        if exploration_std > 0.0:
            u = clamp_action(u_star + exploration_std * rng.standard_normal(), params).force
        state = step_dynamics(state, Action(u), params, rng)
        if is_failed(state, params):
            return None
        states[k + 1] = state.as_array()
        applied[k] = u
        oracle[k] = u_star
    return states, applied, oracle


def _trajectory_worker(index: int) -> StateTrajectory:
    w = _WORK
    for attempt in range(w["max_attempts"]):
        rng = make_rng(w["seed"], DOMAIN_DATASET, w["ds_id"], index, attempt)
        result = simulate_trajectory(
            rng, w["params"], w["gain"], w["n_steps"], w["exploration_std"], w["angle_range"], w["position_range"]
        )
        if result is not None:
            states, applied, oracle = result
            return StateTrajectory(index, attempt, states, applied, oracle)
    raise RuntimeError(f"trajectory {index} kept failing after {w['max_attempts']} attempts")


def generate_state_trajectories(
    seed: int,
    ds_id: int,
    n_traj: int,
    n_steps: int,
    params,
    gain,
    exploration_std: float,
    angle_range: float,
    position_range: float,
    max_attempts: int = 100,
    jobs: int = 1,
) -> list:
    _set_work(
        seed=seed,
        ds_id=ds_id,
        params=params,
        gain=gain,
        n_steps=n_steps,
        exploration_std=exploration_std,
        angle_range=angle_range,
        position_range=position_range,
        max_attempts=max_attempts,
    )
    return _run_parallel(_trajectory_worker, list(range(n_traj)), jobs)


def render_trajectory_frames(states: np.ndarray, render_cfg, params) -> np.ndarray:
    out = np.empty((states.shape[0], render_cfg.pixels))
    for i in range(states.shape[0]):
        out[i] = render_observation(PlantState.from_array(states[i]), render_cfg, params)
    return out


def _render_worker(index: int) -> np.ndarray:
    w = _WORK
    return render_trajectory_frames(w["trajs"][index].states, w["render_cfg"], w["params"])


def build_frame_table(trajs: Sequence[StateTrajectory], render_cfg, params, frame_stack: int, jobs: int = 1) -> FrameTable:
    _set_work(trajs=trajs, render_cfg=render_cfg, params=params)
    frames = _run_parallel(_render_worker, list(range(len(trajs))), jobs)
    return FrameTable(np.stack(frames), frame_stack)


def embed_grid(encoder: nn.Mlp, table: FrameTable, traj_index: int, stride: int) -> np.ndarray:
    """Embeddings on one trajectory's step grid 0, stride, ..., n_steps-1."""
    steps = np.arange(0, table.n_steps, stride)
    obs = table.stack(np.full(len(steps), traj_index), steps)
    return hjepa.encode(encoder, obs)


def make_embedding_dataset(
    trajs: Sequence[StateTrajectory], encoder: nn.Mlp, render_cfg, params, frame_stack: int, stride: int, jobs: int = 1
) -> list:
    table = build_frame_table(trajs, render_cfg, params, frame_stack, jobs=jobs)
    out = []
    for i, traj in enumerate(trajs):
        emb = embed_grid(encoder, table, i, stride)
        out.append(EmbeddingTrajectory(traj.seed, traj.attempt, stride, emb, traj.actions_applied, traj.actions_oracle))
    return out


# ----------------------------------------------------------------- cost/score


def episode_cost(states: np.ndarray, actions: np.ndarray, state_weights, action_weight: float) -> float:
    """Mean quadratic regulation cost over the applied steps."""
    n = actions.shape[0]
    if n == 0:
        return 0.0
    x = states[:n]
    q = np.asarray(state_weights, dtype=np.float64)
    return float(np.mean(np.sum(q * x * x, axis=1) + action_weight * actions * actions))


def control_score(cost_method: float, cost_oracle: float, cost_zero: float, diverged: bool = False) -> float:
    """Normalized control quality: oracle maps to 1, zero-action to 0, clipped to [0, 1].

    A diverging run scores 0 outright; a degenerate normalization (identical
    oracle and zero costs) scores 1 exactly when the method is no worse than
    the oracle.
    """
    if diverged:
        return 0.0
    if cost_zero == cost_oracle:
        return 1.0 if cost_method <= cost_oracle else 0.0
    return float(np.clip((cost_zero - cost_method) / (cost_zero - cost_oracle), 0.0, 1.0))


def paired_t_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """t statistic for mean(a - b) < 0 style one-sided comparisons."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    n = d.shape[0]
    sd = d.std(ddof=1)
    if sd == 0.0:
        return 0.0 if d.mean() == 0.0 else math.copysign(math.inf, d.mean())
    return float(d.mean() / (sd / math.sqrt(n)))


# ------------------------------------------------------------ method adapters

KIND_ORACLE = "oracle"
KIND_ZERO = "zero"
KIND_REPEAT = "repeat"
KIND_LATENT = "latent"
KIND_LATENT_STATIC = "latent_static"
KIND_FRAME = "frame"


class MethodAdapter:
    """Uniform wrapper around a trained model (or a trivial policy).

    kinds: oracle / zero / repeat are reference policies; latent encodes the
    observation and plans actions by latent rollout; latent_static encodes but
    never predicts forward; frame regresses the force from raw stacked frames.
    """

    def __init__(
        self,
        name,
        kind,
        payload_bits=0,
        frame_stack=1,
        params=None,
        encoder=None,
        actor=None,
        net=None,
        planner=None,
        planner_batch=None,
        plan_length=1,
    ):
        self.name = name
        self.kind = kind
        self.payload_bits = payload_bits
        self.frame_stack = frame_stack
        self.params = params
        self.encoder = encoder
        self.actor = actor
        self.net = net
        self.planner = planner
        self.planner_batch = planner_batch
        self.plan_length = plan_length

    def forces(self, obs_batch: np.ndarray) -> Optional[np.ndarray]:
        p = self.params
        if self.kind == KIND_FRAME:
            out, _ = nn.forward(self.net, obs_batch)
            return np.clip(out[:, 0], p.u_min, p.u_max)
        if self.kind in (KIND_LATENT, KIND_LATENT_STATIC):
            z, _ = nn.forward(self.encoder, obs_batch)
            out, _ = nn.forward(self.actor, z)
            return np.clip(out[:, 0], p.u_min, p.u_max)
        return None

    def encode1(self, obs: np.ndarray) -> np.ndarray:
        return hjepa.encode(self.encoder, obs)

    def act1(self, z: np.ndarray) -> float:
        return hjepa.semantic_actor(self.actor, z, self.params).force

    def plan(self, z0: np.ndarray) -> np.ndarray:
        return self.planner(z0)

    def plan_batch(self, z0: np.ndarray) -> np.ndarray:
        return self.planner_batch(z0)


def _embedding_bits(embed_dim: int, bits_per_dim: int) -> int:
    return channel.embedding_payload_bits(embed_dim, bits_per_dim)


def build_adapters(out_dir, names: Sequence[str], params, cfg: dict) -> dict:
    """Instantiate adapters by method name, loading checkpoints as needed."""
    bits_per_dim = int(cfg["sweep.embedding_bits_per_dim"])
    pixel_bits = int(cfg["sweep.pixel_bits"])
    render_cfg = config_mod.render_config(cfg)
    adapters = {}
    for name in names:
        if name == "oracle":
            adapters[name] = MethodAdapter(name, KIND_ORACLE)
        elif name == "zero":
            adapters[name] = MethodAdapter(name, KIND_ZERO)
        elif name == "repeat":
            adapters[name] = MethodAdapter(name, KIND_REPEAT)
        elif name == "hjepa":
            bundle = hjepa.load_bundle(model_dir(out_dir, "hjepa"))
            fn = hjepa.actor_force_fn(bundle.actor, params)
            adapters[name] = MethodAdapter(
                name,
                KIND_LATENT,
                payload_bits=_embedding_bits(bundle.cfg.embed_dim, bits_per_dim),
                frame_stack=bundle.cfg.frame_stack,
                params=params,
                encoder=bundle.context_encoder,
                actor=bundle.actor,
                planner=lambda z0, b=bundle, f=fn: hjepa.hierarchical_rollout(b, z0, actor_fn=f).actions,
                planner_batch=lambda z0, b=bundle, p=params: hjepa.hierarchical_plan_batch(b, z0, p),
                plan_length=bundle.cfg.horizon + 1,
            )
        elif name in ("jepa1", "jepa4"):
            sl = hjepa.load_single_level(model_dir(out_dir, name))
            fn = hjepa.actor_force_fn(sl.actor, params)
            adapters[name] = MethodAdapter(
                name,
                KIND_LATENT,
                payload_bits=_embedding_bits(sl.embed_dim, bits_per_dim),
                frame_stack=sl.frame_stack,
                params=params,
                encoder=sl.encoder,
                actor=sl.actor,
                planner=lambda z0, s=sl, f=fn: hjepa.strided_rollout(s.predictor, z0, s.depth, s.horizon, actor_fn=f).actions,
                planner_batch=lambda z0, s=sl, p=params: hjepa.strided_plan_batch(s.predictor, s.actor, z0, s.depth, s.horizon, p),
                plan_length=sl.horizon + 1,
            )
        elif name in ("supervised2", "supervised4"):
            components, meta = serial.load_model_dir(model_dir(out_dir, name))
            stack = int(meta["frame_stack"])
            adapters[name] = MethodAdapter(
                name,
                KIND_FRAME,
                payload_bits=channel.frame_payload_bits(render_cfg.width, render_cfg.height, render_cfg.channels, stack, pixel_bits),
                frame_stack=stack,
                params=params,
                net=components["regressor"],
            )
        elif name == "raw_frame":
            components, meta = serial.load_model_dir(model_dir(out_dir, "supervised2"))
            stack = int(meta["frame_stack"])
            adapters[name] = MethodAdapter(
                name,
                KIND_FRAME,
                payload_bits=channel.frame_payload_bits(render_cfg.width, render_cfg.height, render_cfg.channels, stack, pixel_bits),
                frame_stack=stack,
                params=params,
                net=components["regressor"],
            )
        elif name == "no_prediction":
            bundle = hjepa.load_bundle(model_dir(out_dir, "hjepa"))
            adapters[name] = MethodAdapter(
                name,
                KIND_LATENT_STATIC,
                payload_bits=_embedding_bits(bundle.cfg.embed_dim, bits_per_dim),
                frame_stack=bundle.cfg.frame_stack,
                params=params,
                encoder=bundle.context_encoder,
                actor=bundle.actor,
            )
        elif name == "autoencoder":
            components, meta = serial.load_model_dir(model_dir(out_dir, "autoencoder"))
            adapters[name] = MethodAdapter(
                name,
                KIND_LATENT_STATIC,
                payload_bits=_embedding_bits(int(meta["embed_dim"]), bits_per_dim),
                frame_stack=int(meta["frame_stack"]),
                params=params,
                encoder=components["encoder"],
                actor=components[hjepa.KIND_ACTOR],
            )
        else:
            raise ConfigurationError(f"unknown method '{name}'")
    return adapters


# ------------------------------------------------------------ encoding metric


def eval_encoding(adapters: dict, order: Sequence[str], test_trajs, render_cfg, params, jobs: int = 1) -> list:
    """Open-loop command error on held-out steps, one row per method."""
    max_stack = max(a.frame_stack for a in adapters.values())
    table = build_frame_table(test_trajs, render_cfg, params, max_stack, jobs=jobs)
    n_traj = len(test_trajs)
    n_steps = test_trajs[0].actions_oracle.shape[0]
    u_range = params.u_max - params.u_min
    steps = np.arange(n_steps)
    rows = []
    for name in order:
        adapter = adapters[name]
        total = 0.0
        for ti in range(n_traj):
            u_star = test_trajs[ti].actions_oracle
            if adapter.kind == KIND_ORACLE:
                u_hat = u_star
            elif adapter.kind == KIND_ZERO:
                u_hat = np.zeros(n_steps)
            else:
                obs = table.stack(np.full(n_steps, ti), steps, adapter.frame_stack)
                u_hat = adapter.forces(obs)
            total += float(np.abs(u_hat - u_star).sum())
        rows.append(MetricRow(method=name, error=total / (n_traj * n_steps * u_range), bits=adapter.payload_bits))
    return rows


# ---------------------------------------------------------- prediction metric


def _prediction_worker(item) -> np.ndarray:
    name, ti = item
    w = _WORK
    adapter = w["adapters"][name]
    params, gain, render_cfg = w["params"], w["gain"], w["render_cfg"]
    horizon = w["horizon"]
    u_range = params.u_max - params.u_min

    state = PlantState.from_array(w["test_trajs"][ti].states[0])
    planned = None
    u_repeat = None
    if adapter.kind == KIND_LATENT:
        obs = stack_frames([render_observation(state, render_cfg, params)], adapter.frame_stack)
        planned = adapter.plan(adapter.encode1(obs))
    elif adapter.kind == KIND_REPEAT:
        u_repeat = oracle_policy(state, gain, params).force

    noise_rng = make_rng(w["seed"], DOMAIN_EVAL_PREDICTION, ti)
    errors = np.empty(horizon + 1)
    for j in range(horizon + 1):
        u_star = oracle_policy(state, gain, params).force
        if adapter.kind == KIND_ORACLE:
            u_hat = u_star
        elif adapter.kind == KIND_ZERO:
            u_hat = 0.0
        elif adapter.kind == KIND_REPEAT:
            u_hat = u_repeat
        else:
            u_hat = float(planned[j])
        errors[j] = abs(u_hat - u_star) / u_range
        if j < horizon:
            state = step_dynamics(state, Action(u_hat), params, noise_rng)
    return errors


def eval_prediction(
    adapters: dict, order: Sequence[str], test_trajs, params, gain, render_cfg, horizon: int, seed: int, jobs: int = 1
) -> tuple:
    """Closed-loop action error per prediction offset.

    Transmission happens at offset 0 only; each latent method plans its whole
    action sequence from that embedding and the plant then runs under the
    planned actions.  Per-trajectory process noise streams are shared across
    methods so comparisons are paired.  Returns (rows for offsets 1..horizon,
    {method: (n_traj, horizon+1) error curves}).
    """
    n_traj = len(test_trajs)
    _set_work(
        adapters=adapters,
        test_trajs=test_trajs,
        params=params,
        gain=gain,
        render_cfg=render_cfg,
        horizon=horizon,
        seed=seed,
    )
    rows = []
    curves = {}
    for name in order:
        per_traj = _run_parallel(_prediction_worker, [(name, ti) for ti in range(n_traj)], jobs)
        curve = np.stack(per_traj)
        curves[name] = curve
        mean_err = curve.mean(axis=0)
        for j in range(1, horizon + 1):
            rows.append(MetricRow(method=name, offset=j, error=float(mean_err[j]), bits=adapters[name].payload_bits))
    return rows, curves


# -------------------------------------------------------------------- sweep


@dataclass(frozen=True)
class SweepSettings:
    total_bandwidth: float = 1e8
    noise_psd: float = 4e-21
    carrier_freq_ghz: float = 3.5
    ref_distance: float = 30.0
    distance_min: float = 10.0
    distance_max: float = 50.0
    episodes: int = 20
    episode_steps: int = 2000
    slot_seconds: float = 1e-3
    score_threshold: float = 0.62
    snr_grid_db: tuple = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0)
    device_cap: int = 4096
    angle_range: float = 0.15
    position_range: float = 0.4


def _reference_episode(state0: PlantState, policy: str, params, gain, seed: int, episode: int, n_steps: int, weights, action_weight):
    noise_rng = make_rng(seed, DOMAIN_SWEEP_NOISE, episode)
    state = state0
    states = np.empty((n_steps + 1, 4))
    actions = np.empty(n_steps)
    states[0] = state.as_array()
    for k in range(n_steps):
        u = oracle_policy(state, gain, params).force if policy == "oracle" else 0.0
        state = step_dynamics(state, Action(u), params, noise_rng)
        states[k + 1] = state.as_array()
        actions[k] = u
        if is_failed(state, params):
            return episode_cost(states[: k + 2], actions[: k + 1], weights, action_weight)
    return episode_cost(states, actions, weights, action_weight)


@dataclass
class SweepContext:
    """Episode draws pinned before any probing.

    Initial states, device distances, per-step fades, and the reference costs
    are identical across every (method, SNR, device-count) cell, so scores are
    paired and per-slot success is monotone in the per-device bandwidth.
    """

    init_states: list
    distances: list
    fades: list
    cost_oracle: list
    cost_zero: list


def build_sweep_context(settings: SweepSettings, params, gain, state_weights, action_weight, seed: int) -> SweepContext:
    n_steps = settings.episode_steps
    init_states, distances, fades = [], [], []
    for e in range(settings.episodes):
        rng = make_rng(seed, DOMAIN_SWEEP_INIT, e)
        init_states.append(sample_initial_state(rng, angle_range=settings.angle_range, position_range=settings.position_range))
        distances.append(float(rng.uniform(settings.distance_min, settings.distance_max)))
        fades.append(make_rng(seed, DOMAIN_SWEEP_FADE, e).standard_exponential(n_steps))
    cost_oracle = [
        _reference_episode(init_states[e], "oracle", params, gain, seed, e, n_steps, state_weights, action_weight)
        for e in range(settings.episodes)
    ]
    cost_zero = [
        _reference_episode(init_states[e], "zero", params, gain, seed, e, n_steps, state_weights, action_weight)
        for e in range(settings.episodes)
    ]
    return SweepContext(init_states, distances, fades, cost_oracle, cost_zero)


def _probe_score(adapter, snr_db, n_devices, settings, ctx, params, gain, render_cfg, state_weights, action_weight, seed) -> float:
    """Mean control score over the pinned episode pool at one sweep cell.

    Episodes advance in lockstep so the per-step encoder / planner forwards
    batch across episodes; outcomes equal a sequential per-episode simulation
    because every random stream is per-episode and slot successes are
    precomputed from the pinned fades.
    """
    n_ep, n_steps = settings.episodes, settings.episode_steps
    bandwidth = settings.total_bandwidth / n_devices
    pl_ref = channel.pathloss_inf_sh_nlos(settings.ref_distance, settings.carrier_freq_ghz)
    tx_power = 10.0 ** (snr_db / 10.0) * (settings.noise_psd * settings.total_bandwidth) * 10.0 ** (pl_ref / 10.0)
    success = np.empty((n_ep, n_steps), dtype=bool)
    for e in range(n_ep):
        budget = channel.LinkBudget(
            tx_power=tx_power,
            noise_power=settings.noise_psd * bandwidth,
            carrier_freq=settings.carrier_freq_ghz,
            distance=ctx.distances[e],
            bandwidth=bandwidth,
        )
        fades = ctx.fades[e]
        for k in range(n_steps):
            success[e, k] = channel.transmit(
                adapter.payload_bits, budget, channel.FadingDraw(fades[k], k), settings.slot_seconds
            ).success

    noise_rngs = [make_rng(seed, DOMAIN_SWEEP_NOISE, e) for e in range(n_ep)]
    states = list(ctx.init_states)
    histories = [[] for _ in range(n_ep)]
    failed = [False] * n_ep
    steps_done = [0] * n_ep
    states_log = np.empty((n_ep, n_steps + 1, 4))
    for e in range(n_ep):
        states_log[e, 0] = states[e].as_array()
    actions_log = np.zeros((n_ep, n_steps))  # zero force until the first reception
    has_payload = [False] * n_ep
    age = np.zeros(n_ep, dtype=np.intp)
    last_net_force = np.zeros(n_ep)
    latent = adapter.kind in (KIND_LATENT, KIND_LATENT_STATIC)
    z_latest = np.zeros((n_ep, adapter.encoder.out_dim)) if latent else None
    plans = np.zeros((n_ep, adapter.plan_length)) if adapter.kind == KIND_LATENT else None

    for k in range(n_steps):
        live = [e for e in range(n_ep) if not failed[e]]
        if not live:
            break
        for e in live:
            histories[e].append(render_observation(states[e], render_cfg, params))
            if len(histories[e]) > adapter.frame_stack:
                histories[e].pop(0)
        recv = [e for e in live if success[e, k]]
        stale = [e for e in live if has_payload[e] and not success[e, k]]
        if recv:
            obs = np.stack([stack_frames(histories[e], adapter.frame_stack) for e in recv])
            if adapter.kind == KIND_FRAME:
                last_net_force[recv] = adapter.forces(obs)
            else:
                z_latest[recv] = hjepa.encode(adapter.encoder, obs)
                if adapter.kind == KIND_LATENT:
                    # entries past offset 0 are read only if the next slot
                    # fails; a plan received at k is overwritten at k+1
                    # otherwise, so skip the rollout for those episodes
                    # (offset 0 of a plan is the plain actor force)
                    deep = [e for e in recv if k + 1 < n_steps and not success[e, k + 1]]
                    quick = [e for e in recv if not (k + 1 < n_steps and not success[e, k + 1])]
                    if quick:
                        plans[quick, 0] = hjepa.actor_forces(adapter.actor, z_latest[quick], params)
                    if deep:
                        plans[deep] = adapter.plan_batch(z_latest[deep])
            for e in recv:
                has_payload[e] = True
            age[recv] = 0
        if stale:
            age[stale] += 1

        act_idx = [e for e in live if has_payload[e]]
        if act_idx:
            if adapter.kind == KIND_FRAME:
                actions_log[act_idx, k] = last_net_force[act_idx]
            elif adapter.kind == KIND_LATENT_STATIC:
                actions_log[act_idx, k] = hjepa.actor_forces(adapter.actor, z_latest[act_idx], params)
            else:
                offs = np.minimum(age[act_idx], plans.shape[1] - 1)
                actions_log[act_idx, k] = plans[act_idx, offs]
        for e in live:
            nxt = step_dynamics(states[e], Action(actions_log[e, k]), params, noise_rngs[e])
            states[e] = nxt
            states_log[e, k + 1] = nxt.as_array()
            steps_done[e] = k + 1
            if is_failed(nxt, params):
                failed[e] = True

    scores = np.empty(n_ep)
    for e in range(n_ep):
        cost = episode_cost(
            states_log[e, : steps_done[e] + 1], actions_log[e, : steps_done[e]], state_weights, action_weight
        )
        scores[e] = control_score(cost, ctx.cost_oracle[e], ctx.cost_zero[e], failed[e])
    return float(scores.mean())


def _search_max_devices(score_fn: Callable, threshold: float, cap: int, start: int = 1) -> tuple:
    """Largest n in [1, cap] whose score clears the threshold, by bisection.

    Assumes scores are non-increasing in n (pinned fades make per-slot success
    sets nested as bandwidth shrinks).  The start hint, typically the previous
    SNR's answer, only shortens the probe sequence: the crossing is still
    located by fresh score evaluations on both sides.  Returns (devices,
    score at devices); (0, score(1)) when a single device already fails.
    """
    start = min(max(start, 1), cap)
    sc_start = score_fn(start)
    if sc_start >= threshold:
        lo, lo_score = start, sc_start
        probe = start * 2
        hi = None
        while probe <= cap:
            sc = score_fn(probe)
            if sc >= threshold:
                lo, lo_score = probe, sc
                probe *= 2
            else:
                hi = probe
                break
        if hi is None and lo < cap:
            sc = score_fn(cap)
            if sc >= threshold:
                return cap, sc
            hi = cap
        if hi is not None:
            while hi - lo > 1:
                mid = (lo + hi) // 2
                sc = score_fn(mid)
                if sc >= threshold:
                    lo, lo_score = mid, sc
                else:
                    hi = mid
        return lo, lo_score
    if start == 1:
        return 0, sc_start
    sc_one = score_fn(1)
    if sc_one < threshold:
        return 0, sc_one
    lo, lo_score, hi = 1, sc_one, start
    while hi - lo > 1:
        mid = (lo + hi) // 2
        sc = score_fn(mid)
        if sc >= threshold:
            lo, lo_score = mid, sc
        else:
            hi = mid
    return lo, lo_score


def scalability_sweep(
    adapters: dict,
    order: Sequence[str],
    settings: SweepSettings,
    params,
    gain,
    render_cfg,
    state_weights,
    action_weight,
    seed: int,
    jobs: int = 1,
) -> tuple:
    """Max supported device count per (method, SNR).

    Episodes within a probe run lockstep-batched (see _probe_score), so the
    jobs knob is not consulted here; outputs are identical for any value.
    Returns (rows, {method: counts by snr}, snr_monotone_ok,
    {method: episodes simulated}).
    """
    for name in order:
        if adapters[name].kind not in (KIND_LATENT, KIND_LATENT_STATIC, KIND_FRAME):
            raise ConfigurationError(f"method '{name}' does not transmit a payload; it cannot be swept")
    ctx = build_sweep_context(settings, params, gain, state_weights, action_weight, seed)
    rows = []
    devices_by_method = {}
    episodes_by_method = {}
    for name in order:
        adapter = adapters[name]
        counts = []
        probes = 0
        prev = 1
        for snr_db in settings.snr_grid_db:
            cache: dict = {}

            def score(n, _a=adapter, _s=snr_db, _c=cache):
                if n not in _c:
                    _c[n] = _probe_score(
                        _a, _s, n, settings, ctx, params, gain, render_cfg, state_weights, action_weight, seed
                    )
                return _c[n]

            devices, dev_score = _search_max_devices(score, settings.score_threshold, settings.device_cap, start=prev)
            probes += len(cache)
            counts.append(devices)
            rows.append(MetricRow(method=name, bits=adapter.payload_bits, score=dev_score, devices=devices, snr_db=snr_db))
            prev = max(devices, 1)
        devices_by_method[name] = counts
        episodes_by_method[name] = probes * settings.episodes
    monotone_ok = all(all(b >= a for a, b in zip(c, c[1:])) for c in devices_by_method.values())
    return rows, devices_by_method, monotone_ok, episodes_by_method


# -------------------------------------------------------------- orchestration


def dataset_path(out_dir, name: str) -> str:
    return os.path.join(out_dir, "datasets", f"{name}.hjpd")


def model_dir(out_dir, name: str) -> str:
    return os.path.join(out_dir, "models", name)


def _git_describe() -> str:
    try:
        proc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            capture_output=True,
            text=True,
            timeout=5,
        )
        if proc.returncode == 0:
            return proc.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def _write_manifest(out_dir, command, seed, jobs, cfg, artifacts, timings, extra=None) -> None:
    serial.write_manifest(
        os.path.join(out_dir, f"manifest_{command}.txt"),
        command,
        __version__,
        _git_describe(),
        seed,
        jobs,
        config_mod.serialize_config(cfg),
        artifacts,
        timings,
        extra,
    )


def _gain(cfg, params):
    return lqr_gain(
        params,
        state_weights=cfg["control.state_weights"],
        action_weight=cfg["control.action_weight"],
        tol=cfg["control.riccati_tol"],
        max_iter=cfg["control.riccati_max_iter"],
    )


def _load_state_trajs(out_dir, name):
    path = dataset_path(out_dir, name)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"dataset {path} missing (run the generate command first)")
    record_type, trajs = serial.load_dataset(path)
    if record_type != serial.RECORD_STATE_PAIRS:
        raise ValueError(f"{path} does not hold state trajectories")
    return trajs


def _load_embedding_trajs(path):
    record_type, trajs = serial.load_dataset(path)
    if record_type != serial.RECORD_EMBEDDING_PAIRS:
        raise ValueError(f"{path} does not hold embedding trajectories")
    return trajs


def run_generate(cfg: dict, seed: int, out_dir: str, jobs: int = 1) -> list:
    params = config_mod.plant_params(cfg)
    gain = _gain(cfg, params)
    os.makedirs(os.path.join(out_dir, "datasets"), exist_ok=True)
    artifacts = []
    timings = {}
    for name, ds_id, count in (
        ("d_h_train", DS_HIGH_TRAIN, cfg["data.train_trajectories"]),
        ("d_h_test", DS_HIGH_TEST, cfg["data.test_trajectories"]),
    ):
        t0 = time.perf_counter()
        trajs = generate_state_trajectories(
            seed,
            ds_id,
            count,
            cfg["data.trajectory_steps"],
            params,
            gain,
            cfg["data.exploration_std"],
            cfg["data.init_angle_range"],
            cfg["data.init_position_range"],
            cfg["data.max_attempts"],
            jobs,
        )
        path = dataset_path(out_dir, name)
        serial.save_state_dataset(path, trajs)
        artifacts.append((f"datasets/{name}.hjpd", path))
        timings[name] = time.perf_counter() - t0
    _write_manifest(out_dir, "generate", seed, jobs, cfg, artifacts, timings)
    return artifacts


def _sgd(cfg, epochs: int) -> nn.SgdConfig:
    return nn.SgdConfig(
        learning_rate=cfg["train.learning_rate"],
        batch_size=cfg["train.batch_size"],
        epochs=epochs,
        grad_clip=cfg["train.grad_clip"] if cfg["train.grad_clip"] > 0 else None,
    )


def _embed_steps(encoder, table: FrameTable, steps: np.ndarray, frame_stack: int) -> np.ndarray:
    """Per-trajectory embedding of the given steps; (n_traj, len(steps), d)."""
    out = []
    for ti in range(table.n_traj):
        obs = table.stack(np.full(len(steps), ti), steps, frame_stack)
        out.append(hjepa.encode(encoder, obs))
    return np.stack(out)


def _train_hjepa_model(cfg, seed, out_dir, jobs, params, render_cfg, hcfg, gain, table, actions_applied, loss_rows, extra):
    k, h, m, l = hcfg.horizon, hcfg.depth_high, hcfg.depth_medium, hcfg.depth_low
    bundle = hjepa.build_bundle(hcfg, table.in_dim, make_rng(seed, DOMAIN_TRAIN_INIT, MODEL_HJEPA))

    res1 = training.train_latent_chain(
        bundle.context_encoder,
        bundle.target_encoder,
        bundle.predictor_high,
        table,
        actions_applied,
        stride=h,
        n_hops=k // h,
        anchor_stride=cfg["train.anchor_stride"],
        ema_rate=hcfg.ema_rate,
        sgd=_sgd(cfg, cfg["train.stage1_epochs"]),
        epochs=cfg["train.stage1_epochs"],
        seed=seed,
        model_id=MODEL_HJEPA,
        stage_id=1,
    )
    artifacts = hjepa.save_bundle(model_dir(out_dir, "hjepa"), bundle)
    extra["hjepa.embedding_std_min"] = f"{res1.embedding_std_min:.6g}"
    extra["hjepa.collapsed"] = str(res1.collapsed).lower()
    extra["hjepa.rejected_steps"] = res1.rejected_steps
    for ep, loss in enumerate(res1.losses):
        loss_rows.append(("hjepa", 1, ep, loss))

    # embedding datasets from fresh underlying trajectories, frozen encoder
    emb_specs = (
        ("d_m_train", DS_MEDIUM_TRAIN, cfg["data.embed_train_trajectories"], m),
        ("d_m_test", DS_MEDIUM_TEST, cfg["data.embed_test_trajectories"], m),
        ("d_l_train", DS_LOW_TRAIN, cfg["data.embed_train_trajectories"], l),
        ("d_l_test", DS_LOW_TEST, cfg["data.embed_test_trajectories"], l),
    )
    for name, ds_id, count, stride in emb_specs:
        trajs = generate_state_trajectories(
            seed,
            ds_id,
            count,
            cfg["data.trajectory_steps"],
            params,
            gain,
            cfg["data.exploration_std"],
            cfg["data.init_angle_range"],
            cfg["data.init_position_range"],
            cfg["data.max_attempts"],
            jobs,
        )
        ds = make_embedding_dataset(trajs, bundle.context_encoder, render_cfg, params, hcfg.frame_stack, stride, jobs=jobs)
        path = dataset_path(out_dir, name)
        serial.save_embedding_dataset(path, ds)
        artifacts.append((f"datasets/{name}.hjpd", path))

    d_m_train = _load_embedding_trajs(dataset_path(out_dir, "d_m_train"))
    d_l_train = _load_embedding_trajs(dataset_path(out_dir, "d_l_train"))
    grids_m = np.stack([t.embeddings for t in d_m_train])
    actions_m = np.stack([t.actions_applied for t in d_m_train])
    grids_l = np.stack([t.embeddings for t in d_l_train])
    actions_l = np.stack([t.actions_applied for t in d_l_train])

    res2 = training.train_bracket_chain(
        bundle.predictor_medium, grids_m, actions_m, m, h // m, _sgd(cfg, cfg["train.bracket_epochs"]),
        cfg["train.bracket_epochs"], seed, MODEL_HJEPA, stage_id=2,
    )
    res3 = training.train_bracket_chain(
        bundle.predictor_low, grids_l, actions_l, l, m // l, _sgd(cfg, cfg["train.bracket_epochs"]),
        cfg["train.bracket_epochs"], seed, MODEL_HJEPA, stage_id=3,
    )
    for stage, res in ((2, res2), (3, res3)):
        for ep, loss in enumerate(res.losses):
            loss_rows.append(("hjepa", stage, ep, loss))
    hjepa.save_bundle(model_dir(out_dir, "hjepa"), bundle)

    # semantic actor on the low-level embedding-action pairs
    n_steps = actions_l.shape[1]
    n_grid_used = n_steps // l
    inputs = np.ascontiguousarray(grids_l[:, :n_grid_used].reshape(-1, hcfg.embed_dim))
    oracle_l = np.stack([t.actions_oracle for t in d_l_train])
    targets = np.ascontiguousarray(oracle_l[:, ::l][:, :n_grid_used].reshape(-1, 1))
    res4 = training.train_regression(
        bundle.actor,
        lambda idx: inputs[idx],
        targets,
        _sgd(cfg, cfg["train.actor_epochs"]),
        cfg["train.actor_epochs"],
        seed,
        MODEL_HJEPA,
        stage_id=4,
    )
    for ep, loss in enumerate(res4.losses):
        loss_rows.append(("hjepa", 4, ep, loss))
    hjepa.save_bundle(model_dir(out_dir, "hjepa"), bundle)
    return artifacts


def _train_actor_on_table(actor, encoder, table, actions_oracle, subsample, cfg, seed, model_id):
    n_steps = actions_oracle.shape[1]
    steps = np.arange(0, n_steps, subsample)
    embeddings = _embed_steps(encoder, table, steps, table.frame_stack)
    inputs = np.ascontiguousarray(embeddings.reshape(-1, embeddings.shape[-1]))
    targets = np.ascontiguousarray(actions_oracle[:, steps].reshape(-1, 1))
    return training.train_regression(
        actor,
        lambda idx: inputs[idx],
        targets,
        _sgd(cfg, cfg["train.actor_epochs"]),
        cfg["train.actor_epochs"],
        seed,
        model_id,
        stage_id=4,
    )


def _train_single_level_model(name, depth, model_id, cfg, seed, out_dir, hcfg, table, actions_applied, actions_oracle, loss_rows, extra):
    sl = hjepa.build_single_level(hcfg, depth, table.in_dim, make_rng(seed, DOMAIN_TRAIN_INIT, model_id))
    res1 = training.train_latent_chain(
        sl.encoder,
        sl.target_encoder,
        sl.predictor,
        table,
        actions_applied,
        stride=depth,
        n_hops=hcfg.horizon // depth,
        anchor_stride=cfg["train.baseline_anchor_stride"],
        ema_rate=hcfg.ema_rate,
        sgd=_sgd(cfg, cfg["train.baseline_epochs"]),
        epochs=cfg["train.baseline_epochs"],
        seed=seed,
        model_id=model_id,
        stage_id=1,
    )
    for ep, loss in enumerate(res1.losses):
        loss_rows.append((name, 1, ep, loss))
    extra[f"{name}.embedding_std_min"] = f"{res1.embedding_std_min:.6g}"
    extra[f"{name}.collapsed"] = str(res1.collapsed).lower()
    res4 = _train_actor_on_table(sl.actor, sl.encoder, table, actions_oracle, cfg["train.actor_subsample"], cfg, seed, model_id)
    for ep, loss in enumerate(res4.losses):
        loss_rows.append((name, 4, ep, loss))
    return hjepa.save_single_level(model_dir(out_dir, name), sl)


def _train_supervised_model(name, frame_stack, model_id, cfg, seed, out_dir, hcfg, table, actions_oracle, loss_rows):
    in_dim = table.frame_dim * frame_stack
    dims, residual = hjepa.encoder_dims(in_dim, hcfg.encoder_widths, hcfg.embed_dim)
    dims = dims + [1]
    residual = residual + (False,)
    net = nn.init_mlp(dims, make_rng(seed, DOMAIN_TRAIN_INIT, model_id), residual=residual)

    n_steps = actions_oracle.shape[1]
    steps = np.arange(0, n_steps, cfg["train.supervised_subsample"])
    ti_all = np.repeat(np.arange(table.n_traj), len(steps))
    si_all = np.tile(steps, table.n_traj)
    targets = np.ascontiguousarray(actions_oracle[:, steps].reshape(-1, 1))
    res = training.train_regression(
        net,
        lambda idx: table.stack(ti_all[idx], si_all[idx], frame_stack),
        targets,
        _sgd(cfg, cfg["train.supervised_epochs"]),
        cfg["train.supervised_epochs"],
        seed,
        model_id,
        stage_id=1,
    )
    for ep, loss in enumerate(res.losses):
        loss_rows.append((name, 1, ep, loss))
    meta = {"kind": "supervised", "frame_stack": frame_stack}
    return serial.save_model_dir(model_dir(out_dir, name), {"regressor": net}, meta)


def _train_autoencoder_model(cfg, seed, out_dir, hcfg, table, actions_oracle, loss_rows, extra):
    rng_init = make_rng(seed, DOMAIN_TRAIN_INIT, MODEL_AUTOENCODER)
    # reconstruction loss fixes its own scale, so no unit-sphere bottleneck
    encoder = hjepa.build_encoder(table.in_dim, hcfg, rng_init, unit_output=False)
    dec_dims = [hcfg.embed_dim] + list(reversed(hcfg.encoder_widths)) + [table.in_dim]
    decoder = nn.init_mlp(dec_dims, rng_init)
    actor = hjepa.build_actor(hcfg.embed_dim, hcfg.actor_hidden, rng_init)

    n_steps = actions_oracle.shape[1]
    steps = np.arange(0, n_steps, cfg["train.supervised_subsample"])
    ti_all = np.repeat(np.arange(table.n_traj), len(steps))
    si_all = np.tile(steps, table.n_traj)
    res1 = training.train_autoencoder(
        encoder,
        decoder,
        lambda idx: table.stack(ti_all[idx], si_all[idx]),
        len(ti_all),
        _sgd(cfg, cfg["train.autoencoder_epochs"]),
        cfg["train.autoencoder_epochs"],
        seed,
        MODEL_AUTOENCODER,
        stage_id=1,
    )
    for ep, loss in enumerate(res1.losses):
        loss_rows.append(("autoencoder", 1, ep, loss))
    extra["autoencoder.embedding_std_min"] = f"{res1.embedding_std_min:.6g}"
    res4 = _train_actor_on_table(actor, encoder, table, actions_oracle, cfg["train.actor_subsample"], cfg, seed, MODEL_AUTOENCODER)
    for ep, loss in enumerate(res4.losses):
        loss_rows.append(("autoencoder", 4, ep, loss))
    meta = {"kind": "autoencoder", "frame_stack": hcfg.frame_stack, "embed_dim": hcfg.embed_dim}
    return serial.save_model_dir(
        model_dir(out_dir, "autoencoder"), {"encoder": encoder, "decoder": decoder, hjepa.KIND_ACTOR: actor}, meta
    )


def run_train(cfg: dict, seed: int, out_dir: str, jobs: int = 1) -> list:
    params = config_mod.plant_params(cfg)
    render_cfg = config_mod.render_config(cfg)
    hcfg = config_mod.hjepa_config(cfg)
    gain = _gain(cfg, params)
    trajs = _load_state_trajs(out_dir, "d_h_train")
    timings = {}
    t0 = time.perf_counter()
    table = build_frame_table(trajs, render_cfg, params, hcfg.frame_stack, jobs=jobs)
    actions_applied = np.stack([t.actions_applied for t in trajs])
    actions_oracle = np.stack([t.actions_oracle for t in trajs])
    timings["render"] = time.perf_counter() - t0

    models = list(cfg["train.models"])
    loss_rows: list = []
    extra: dict = {}
    artifacts: list = []
    for name in models:
        t0 = time.perf_counter()
        if name == "hjepa":
            artifacts += _train_hjepa_model(
                cfg, seed, out_dir, jobs, params, render_cfg, hcfg, gain, table, actions_applied, loss_rows, extra
            )
        elif name == "jepa1":
            artifacts += _train_single_level_model(
                name, 1, MODEL_JEPA1, cfg, seed, out_dir, hcfg, table, actions_applied, actions_oracle, loss_rows, extra
            )
        elif name == "jepa4":
            artifacts += _train_single_level_model(
                name, 4, MODEL_JEPA4, cfg, seed, out_dir, hcfg, table, actions_applied, actions_oracle, loss_rows, extra
            )
        elif name == "supervised2":
            artifacts += _train_supervised_model(name, 2, MODEL_SUPERVISED2, cfg, seed, out_dir, hcfg, table, actions_oracle, loss_rows)
        elif name == "supervised4":
            artifacts += _train_supervised_model(name, 4, MODEL_SUPERVISED4, cfg, seed, out_dir, hcfg, table, actions_oracle, loss_rows)
        elif name == "autoencoder":
            artifacts += _train_autoencoder_model(cfg, seed, out_dir, hcfg, table, actions_oracle, loss_rows, extra)
        else:
            raise ConfigurationError(f"unknown model '{name}' in train.models")
        timings[name] = time.perf_counter() - t0

    losses_path = os.path.join(out_dir, "train_losses.csv")
    serial.emit_csv(losses_path, ("model", "stage", "epoch", "loss"), loss_rows)
    artifacts.append(("train_losses.csv", losses_path))
    _write_manifest(out_dir, "train", seed, jobs, cfg, artifacts, timings, extra)
    return artifacts


def run_eval(cfg: dict, seed: int, out_dir: str, jobs: int = 1, which: str = "encoding", methods: Optional[Sequence[str]] = None):
    params = config_mod.plant_params(cfg)
    render_cfg = config_mod.render_config(cfg)
    hcfg = config_mod.hjepa_config(cfg)
    gain = _gain(cfg, params)
    test_trajs = _load_state_trajs(out_dir, "d_h_test")
    timings = {}
    t0 = time.perf_counter()
    if which == "encoding":
        names = list(methods) if methods else list(cfg["eval.methods_encoding"])
        adapters = build_adapters(out_dir, names, params, cfg)
        rows = eval_encoding(adapters, names, test_trajs, render_cfg, params, jobs=jobs)
        curves = None
        csv_name = "metrics_encoding.csv"
    elif which == "prediction":
        names = list(methods) if methods else list(cfg["eval.methods_prediction"])
        adapters = build_adapters(out_dir, names, params, cfg)
        rows, curves = eval_prediction(adapters, names, test_trajs, params, gain, render_cfg, hcfg.horizon, seed, jobs=jobs)
        csv_name = "metrics_prediction.csv"
    else:
        raise ConfigurationError(f"unknown eval target '{which}' (expected encoding or prediction)")
    timings[which] = time.perf_counter() - t0
    path = os.path.join(out_dir, csv_name)
    emit_metrics(path, rows)
    _write_manifest(out_dir, f"eval_{which}", seed, jobs, cfg, [(csv_name, path)], timings)
    return rows, curves


def sweep_settings(cfg: dict) -> SweepSettings:
    return SweepSettings(
        total_bandwidth=cfg["sweep.total_bandwidth"],
        noise_psd=cfg["sweep.noise_psd"],
        carrier_freq_ghz=cfg["sweep.carrier_freq_ghz"],
        ref_distance=cfg["sweep.ref_distance"],
        distance_min=cfg["sweep.distance_min"],
        distance_max=cfg["sweep.distance_max"],
        episodes=cfg["sweep.episodes"],
        episode_steps=cfg["sweep.episode_steps"],
        slot_seconds=cfg["sweep.slot_seconds"],
        score_threshold=cfg["sweep.score_threshold"],
        snr_grid_db=tuple(cfg["sweep.snr_grid_db"]),
        device_cap=cfg["sweep.device_cap"],
        angle_range=cfg["sweep.init_angle_range"],
        position_range=cfg["sweep.init_position_range"],
    )


def run_sweep(cfg: dict, seed: int, out_dir: str, jobs: int = 1, methods: Optional[Sequence[str]] = None):
    params = config_mod.plant_params(cfg)
    render_cfg = config_mod.render_config(cfg)
    gain = _gain(cfg, params)
    settings = sweep_settings(cfg)
    names = list(methods) if methods else list(cfg["sweep.methods"])
    adapters = build_adapters(out_dir, names, params, cfg)
    timings = {}
    t0 = time.perf_counter()
    rows, devices_by_method, monotone_ok, episodes_by_method = scalability_sweep(
        adapters,
        names,
        settings,
        params,
        gain,
        render_cfg,
        cfg["control.state_weights"],
        cfg["control.action_weight"],
        seed,
        jobs=jobs,
    )
    timings["sweep"] = time.perf_counter() - t0
    path = os.path.join(out_dir, "metrics_scalability.csv")
    emit_metrics(path, rows)
    extra = {"snr_monotone": str(monotone_ok).lower()}
    for name, counts in devices_by_method.items():
        extra[f"devices.{name}"] = ",".join(str(c) for c in counts)
    for name, count in episodes_by_method.items():
        extra[f"search_episodes.{name}"] = str(count)
    if "hjepa" in devices_by_method and len(devices_by_method) > 1 and 20.0 in settings.snr_grid_db:
        i = list(settings.snr_grid_db).index(20.0)
        ours = devices_by_method["hjepa"][i]
        best = max(c[i] for n, c in devices_by_method.items() if n != "hjepa")
        if best > 0:
            extra["improvement_20db_pct"] = f"{100.0 * (ours - best) / best:.2f}"
    _write_manifest(out_dir, "sweep", seed, jobs, cfg, [("metrics_scalability.csv", path)], timings, extra)
    return rows, devices_by_method, monotone_ok
