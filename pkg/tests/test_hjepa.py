import numpy as np
import pytest

from hjpc import hjepa, nn
from hjpc.errors import ConfigurationError
from hjpc.hjepa import (
    LEVEL_HIGH,
    LEVEL_LOW,
    LEVEL_MEDIUM,
    HjepaConfig,
    PlanEntry,
    build_bundle,
    build_single_level,
    hierarchical_plan_batch,
    hierarchical_rollout,
    level_offsets,
    rollout_plan,
    strided_plan_batch,
    strided_rollout,
)
from hjpc.plant import PlantParams

TINY = dict(embed_dim=6, frame_stack=1, encoder_widths=(12, 8), predictor_hidden=10, actor_hidden=5)


def _bundle(horizon=8, h=4, m=2, l=1, input_dim=9, seed=0):
    cfg = HjepaConfig(horizon=horizon, depth_high=h, depth_medium=m, depth_low=l, **TINY)
    return build_bundle(cfg, input_dim, np.random.default_rng(seed))


# ------------------------------------------------------------- config / tiling


def test_default_config_valid():
    HjepaConfig()


def test_level_offsets_reference_partition():
    offs = level_offsets(8, 4, 2, 1)
    assert offs[LEVEL_HIGH] == [4, 8]
    assert offs[LEVEL_MEDIUM] == [2, 6]
    assert offs[LEVEL_LOW] == [1, 3, 5, 7]


def test_level_offsets_medium_empty_when_equal():
    offs = level_offsets(8, 4, 4, 2)
    assert offs[LEVEL_HIGH] == [4, 8]
    assert offs[LEVEL_MEDIUM] == []
    assert offs[LEVEL_LOW] == [1, 2, 3, 5, 6, 7]


@pytest.mark.parametrize(
    "kw",
    [
        dict(horizon=20, depth_high=3),  # 3 does not divide 20
        dict(horizon=8, depth_high=4, depth_medium=3),  # 3 does not divide 4
        dict(horizon=8, depth_high=2, depth_medium=4),  # m > h
        dict(horizon=8, depth_high=16),  # h > horizon
        dict(ema_rate=1.5),
        dict(embed_dim=0),
    ],
)
def test_config_rejects_bad_tilings(kw):
    with pytest.raises(ConfigurationError):
        HjepaConfig(**kw)


def test_rollout_plan_order_and_conditioning():
    cfg = HjepaConfig(horizon=8, depth_high=4, depth_medium=2, depth_low=1, **TINY)
    plan = rollout_plan(cfg)
    assert plan[:2] == [PlanEntry(4, LEVEL_HIGH, (0,)), PlanEntry(8, LEVEL_HIGH, (4,))]
    assert PlanEntry(2, LEVEL_MEDIUM, (0, 4)) in plan
    assert PlanEntry(6, LEVEL_MEDIUM, (4, 8)) in plan
    assert PlanEntry(3, LEVEL_LOW, (2, 4)) in plan
    assert PlanEntry(7, LEVEL_LOW, (6, 8)) in plan
    assert sorted(e.offset for e in plan) == list(range(1, 9))
    # generation order: all high entries precede medium, medium precede low
    levels = [e.level for e in plan]
    assert levels == sorted(levels, key=(LEVEL_HIGH, LEVEL_MEDIUM, LEVEL_LOW).index)


def test_predictor_conditioning_dims():
    bundle = _bundle()
    d = bundle.cfg.embed_dim
    assert bundle.predictor_high.in_dim == d + 4
    assert bundle.predictor_medium.in_dim == 2 * d + 2
    assert bundle.predictor_low.in_dim == 2 * d + 1
    assert bundle.actor.in_dim == d and bundle.actor.out_dim == 1
    assert bundle.context_encoder.in_dim == 9


def test_target_encoder_starts_as_clone():
    bundle = _bundle()
    assert np.array_equal(bundle.context_encoder.flat(), bundle.target_encoder.flat())
    bundle.context_encoder.weights[0][0, 0] += 1.0
    assert not np.array_equal(bundle.context_encoder.flat(), bundle.target_encoder.flat())


# ------------------------------------------------------------------- rollouts


def test_teacher_forced_chain_matches_manual():
    bundle = _bundle()
    rng = np.random.default_rng(1)
    z0 = rng.normal(size=6)
    actions = rng.normal(size=8)
    out = hjepa.predict_high(bundle.predictor_high, z0, actions, 4, 8)
    z, _ = nn.forward(bundle.predictor_high, np.concatenate([z0, actions[0:4]]))
    assert out[0][0] == 4 and np.array_equal(out[0][1], z)
    z2, _ = nn.forward(bundle.predictor_high, np.concatenate([z, actions[4:8]]))
    assert out[1][0] == 8 and np.array_equal(out[1][1], z2)


def test_hierarchical_rollout_covers_all_offsets():
    bundle = _bundle()
    rng = np.random.default_rng(2)
    res = hierarchical_rollout(bundle, rng.normal(size=6), actions=rng.normal(size=8))
    assert sorted(res.embeddings) == list(range(0, 9))
    assert res.actions is None


def test_trivial_depths_reduce_to_single_level():
    # h = m = l = 1: the hierarchy is exactly the one-step chain, bit for bit
    bundle = _bundle(horizon=4, h=1, m=1, l=1)
    rng = np.random.default_rng(3)
    z0 = rng.normal(size=6)
    actions = rng.normal(size=4)
    hier = hierarchical_rollout(bundle, z0, actions=actions)
    flat = strided_rollout(bundle.predictor_high, z0, 1, 4, actions=actions)
    assert sorted(hier.embeddings) == sorted(flat.embeddings)
    for off in flat.embeddings:
        assert np.array_equal(hier.embeddings[off], flat.embeddings[off])

    params = PlantParams(process_noise_std=0.0)
    fn = hjepa.actor_force_fn(bundle.actor, params)
    hier_a = hierarchical_rollout(bundle, z0, actor_fn=fn)
    flat_a = strided_rollout(bundle.predictor_high, z0, 1, 4, actor_fn=fn)
    assert np.array_equal(hier_a.actions, flat_a.actions)


def test_rollout_requires_exactly_one_action_source():
    bundle = _bundle()
    z0 = np.zeros(6)
    with pytest.raises(ValueError):
        hierarchical_rollout(bundle, z0)
    with pytest.raises(ValueError):
        hierarchical_rollout(bundle, z0, actions=np.zeros(8), actor_fn=lambda z: 0.0)
    with pytest.raises(ValueError):
        hierarchical_rollout(bundle, z0, actions=np.zeros(5))


def test_strided_rollout_divisibility():
    bundle = _bundle()
    with pytest.raises(ConfigurationError):
        strided_rollout(bundle.predictor_high, np.zeros(6), 3, 8, actions=np.zeros(8))


def test_embedding_at_offset_floor_rule():
    emb = {0: np.zeros(2), 4: np.ones(2)}
    res = hjepa.RolloutResult(embeddings=emb)
    assert np.array_equal(hjepa.embedding_at_offset(res, 4, depth=4), emb[4])
    assert np.array_equal(hjepa.embedding_at_offset(res, 6, depth=4), emb[4])
    assert np.array_equal(hjepa.embedding_at_offset(res, 3, depth=4), emb[0])


# ------------------------------------------------------------ batched planning


def test_hierarchical_plan_batch_matches_rollout():
    bundle = _bundle()
    params = PlantParams(process_noise_std=0.0)
    rng = np.random.default_rng(5)
    z0 = rng.normal(size=(7, 6))
    plans = hierarchical_plan_batch(bundle, z0, params)
    assert plans.shape == (7, 9)
    fn = hjepa.actor_force_fn(bundle.actor, params)
    for i in range(7):
        single = hierarchical_rollout(bundle, z0[i], actor_fn=fn)
        assert np.allclose(plans[i], single.actions, atol=1e-10)


def test_strided_plan_batch_matches_rollout():
    bundle = build_single_level(
        HjepaConfig(horizon=8, depth_high=4, depth_medium=2, depth_low=1, **TINY), 4, 9, np.random.default_rng(6)
    )
    params = PlantParams(process_noise_std=0.0)
    rng = np.random.default_rng(7)
    z0 = rng.normal(size=(5, 6))
    plans = strided_plan_batch(bundle.predictor, bundle.actor, z0, 4, 8, params)
    assert plans.shape == (5, 9)
    fn = hjepa.actor_force_fn(bundle.actor, params)
    for i in range(5):
        single = strided_rollout(bundle.predictor, z0[i], 4, 8, actor_fn=fn)
        assert np.allclose(plans[i], single.actions, atol=1e-10)


def test_plan_offset_zero_is_actor_force():
    bundle = _bundle()
    params = PlantParams(process_noise_std=0.0)
    z0 = np.random.default_rng(8).normal(size=(4, 6))
    plans = hierarchical_plan_batch(bundle, z0, params)
    assert np.array_equal(plans[:, 0], hjepa.actor_forces(bundle.actor, z0, params))


def test_actor_saturation():
    params = PlantParams(process_noise_std=0.0)
    actor = nn.init_mlp([3, 4, 1], np.random.default_rng(9))
    actor.weights[-1][:] = 100.0
    actor.biases[-1][:] = 100.0
    assert hjepa.semantic_actor(actor, np.ones(3), params).force == params.u_max
    forces = hjepa.actor_forces(actor, np.ones((3, 3)), params)
    assert np.all(forces == params.u_max)


def test_encode_single_equals_batch_row():
    bundle = _bundle()
    rng = np.random.default_rng(10)
    obs = rng.uniform(size=(3, 9))
    batch = hjepa.encode(bundle.context_encoder, obs)
    single = hjepa.encode(bundle.context_encoder, obs[1])
    assert np.allclose(single, batch[1], atol=1e-12)


# -------------------------------------------------------------- serialization


def test_bundle_round_trip(tmp_path):
    bundle = _bundle()
    hjepa.save_bundle(tmp_path / "m", bundle)
    loaded = hjepa.load_bundle(tmp_path / "m")
    assert loaded.cfg == bundle.cfg
    for kind, net in bundle.components().items():
        got = loaded.components()[kind]
        # checkpoints round-trip through float32 by design
        assert np.array_equal(got.flat(), net.flat().astype(np.float32).astype(np.float64))
        assert got.activations == net.activations and got.residual == net.residual


def test_single_level_round_trip(tmp_path):
    cfg = HjepaConfig(horizon=8, depth_high=4, depth_medium=2, depth_low=1, **TINY)
    bundle = build_single_level(cfg, 2, 9, np.random.default_rng(11))
    hjepa.save_single_level(tmp_path / "s", bundle)
    loaded = hjepa.load_single_level(tmp_path / "s")
    assert (loaded.embed_dim, loaded.depth, loaded.horizon) == (6, 2, 8)
    assert np.array_equal(
        loaded.predictor.flat(), bundle.predictor.flat().astype(np.float32).astype(np.float64)
    )


def test_load_bundle_rejects_wrong_kind(tmp_path):
    cfg = HjepaConfig(horizon=8, depth_high=4, depth_medium=2, depth_low=1, **TINY)
    bundle = build_single_level(cfg, 2, 9, np.random.default_rng(12))
    hjepa.save_single_level(tmp_path / "s", bundle)
    with pytest.raises(ValueError):
        hjepa.load_bundle(tmp_path / "s")


def test_single_level_stride_must_divide():
    cfg = HjepaConfig(horizon=8, depth_high=4, depth_medium=2, depth_low=1, **TINY)
    with pytest.raises(ConfigurationError):
        build_single_level(cfg, 3, 9, np.random.default_rng(13))
