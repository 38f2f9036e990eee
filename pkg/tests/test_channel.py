import numpy as np
import pytest

from v2xshare.channel import (
    EAST,
    NORTH,
    PlacementError,
    composite_gain,
    draw_small_scale,
    init_scenario,
    large_scale_gain,
    on_lane,
    path_loss_v2i,
    path_loss_v2v,
    step_mobility,
    update_large_scale,
    update_small_scale,
)
from v2xshare.config import ConfigError, ScenarioConfig

from conftest import small_scenario


def _snapshot(state):
    f = state.fading
    return [state.positions, state.headings, state.topology.v2v_tx, state.topology.v2v_rx,
            state.topology.v2i_tx] + [getattr(f, n) for n in (
                "v2v", "v2v_bs", "v2i_bs", "v2i_v2v",
                "v2v_small", "v2v_bs_small", "v2i_bs_small", "v2i_v2v_small")]


def test_init_scenario_builds_links_on_lanes(env):
    topo = env.topology
    assert len(topo.v2i_tx) == 4 and len(topo.v2v_pairs) == 4
    assert len(env.positions) == 4 + 2 * 4
    assert all(tx != rx for tx, rx in topo.v2v_pairs)
    used = list(topo.v2i_tx) + list(topo.v2v_tx) + list(topo.v2v_rx)
    assert sorted(used) == list(range(12))
    assert on_lane(env).all()
    assert env.fading.v2v.shape == (4, 4) and env.fading.v2v_small.shape == (4, 4, 4)


def test_init_scenario_is_deterministic():
    cfg = ScenarioConfig()
    a, b = init_scenario(cfg, 7), init_scenario(cfg, 7)
    for x, y in zip(_snapshot(a), _snapshot(b)):
        np.testing.assert_array_equal(x, y)
    c = init_scenario(cfg, 8)
    assert not np.array_equal(a.positions, c.positions)


def test_v2v_receiver_is_nearest_free_vehicle(env):
    from v2xshare.channel import torus_distance

    taken = set()
    for tx, rx in env.topology.v2v_pairs:
        free = [i for i in range(len(env.positions)) if i >= 4 and i not in taken]
        d = {i: torus_distance(env.positions[tx], env.positions[i], env.cfg) for i in free}
        assert rx == min(d, key=d.get)
        taken.add(rx)


@pytest.mark.parametrize("field", ["num_v2v_links", "num_v2i_links"])
def test_zero_links_is_a_config_error(field):
    cfg = ScenarioConfig(**{field: 0})
    with pytest.raises(ConfigError):
        init_scenario(cfg, 0)


def test_lanes_wider_than_blocks_is_a_placement_error():
    with pytest.raises(PlacementError):
        init_scenario(ScenarioConfig(block_width=10.0, lanes_per_direction=2), 0)


def test_mid_segment_kinematics():
    state = init_scenario(small_scenario(), 1)
    lane_y = 433.0 - 1.75  # eastbound lane 0 of the road at y = 433
    state.positions[0] = [100.0, lane_y]
    state.headings[0] = EAST
    state.lanes[0] = 0
    before = state.positions.copy()
    step_mobility(state, 0.1)
    np.testing.assert_allclose(state.positions[0], [101.5, lane_y], atol=1e-12)
    assert state.headings[0] == EAST
    assert on_lane(state)[0]
    assert not np.array_equal(before[1:], np.zeros_like(before[1:]))


def test_zero_dt_is_identity(env):
    before = env.positions.copy(), env.headings.copy()
    draws = env.mobility_rng.bit_generator.state
    step_mobility(env, 0.0)
    np.testing.assert_array_equal(env.positions, before[0])
    np.testing.assert_array_equal(env.headings, before[1])
    assert env.mobility_rng.bit_generator.state == draws


def test_vehicles_stay_on_lanes_over_many_steps():
    state = init_scenario(ScenarioConfig(), 11)
    turned = set()
    for _ in range(10_000):
        step_mobility(state, 0.5)
        assert on_lane(state).all()
        turned.update(int(h) for h in state.headings)
    assert turned == {0, 1, 2, 3}


def test_turns_at_intersection_use_configured_probabilities():
    cfg = small_scenario(num_v2v_links=1, num_v2i_links=1, turn_left_prob=0.25, turn_right_prob=0.25)
    counts = np.zeros(4)
    state = init_scenario(cfg, 5)
    for _ in range(4000):
        # park vehicle 0 just south of the intersection at (250, 433), heading north
        state.positions[0] = [250.0 + 1.75, 433.0 - 1.0]
        state.headings[0] = NORTH
        state.lanes[0] = 0
        step_mobility(state, 2.0 / cfg.vehicle_speed)
        counts[state.headings[0]] += 1
        assert on_lane(state)[0]
    freq = counts / counts.sum()
    # N straight 0.5, E right 0.25, W left 0.25, never S
    np.testing.assert_allclose(freq, [0.5, 0.25, 0.0, 0.25], atol=0.04)


def test_v2i_path_loss_at_one_km():
    cfg = ScenarioConfig()
    pl = path_loss_v2i(1000.0, cfg)
    assert pl == pytest.approx(128.1, abs=1e-12)
    assert large_scale_gain(pl, 0.0) == pytest.approx(10 ** -12.81, rel=1e-12)


def test_v2v_path_loss_hand_value():
    cfg = ScenarioConfig()
    # 38.77 + 16.7*log10(100) + 18.2*log10(2)
    expected = 38.77 + 33.4 + 18.2 * 0.30102999566398120
    assert path_loss_v2v(100.0, cfg) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("law", [path_loss_v2i, path_loss_v2v])
def test_large_scale_gain_decreases_with_distance(law):
    cfg = ScenarioConfig()
    d = np.geomspace(cfg.min_distance_clip, 5000.0, 200)
    a = large_scale_gain(law(d, cfg), 0.0)
    assert np.all(np.diff(a) < 0)
    assert large_scale_gain(law(2 * 50.0, cfg), 0.0) < large_scale_gain(law(50.0, cfg), 0.0)


def test_distance_is_clipped():
    cfg = ScenarioConfig()
    for law in (path_loss_v2i, path_loss_v2v):
        assert law(0.0, cfg) == law(cfg.min_distance_clip, cfg)
        assert np.isfinite(large_scale_gain(law(0.0, cfg), 0.0))


def test_small_scale_is_unit_mean_exponential():
    draws = draw_small_scale(np.random.default_rng(0), 1_000_000)
    assert draws.min() >= 0.0
    assert abs(draws.mean() - 1.0) < 0.01


def test_small_scale_is_reproducible_and_per_band(env):
    a = init_scenario(env.cfg, 7)
    update_small_scale(a)
    update_small_scale(env)
    np.testing.assert_array_equal(a.fading.v2v_small, env.fading.v2v_small)
    # bands are drawn independently
    assert not np.allclose(env.fading.v2v_small[..., 0], env.fading.v2v_small[..., 1])


def test_large_scale_is_band_independent_and_redrawn(env):
    g = env.fading.gains()
    ratio = g["v2v"] / env.fading.v2v_small
    np.testing.assert_allclose(ratio, np.broadcast_to(env.fading.v2v[..., None], ratio.shape), rtol=1e-12)
    before = env.fading.v2i_bs.copy()
    update_large_scale(env)
    assert not np.array_equal(before, env.fading.v2i_bs)


def test_shadowing_off_gives_pure_path_loss():
    cfg = small_scenario(shadow_std_v2i=0.0, shadow_std_v2v=0.0)
    state = init_scenario(cfg, 2)
    from v2xshare.channel import link_distances

    d = link_distances(state)
    np.testing.assert_allclose(state.fading.v2i_bs, large_scale_gain(path_loss_v2i(d["v2i_bs"], cfg), 0.0))
    np.testing.assert_allclose(state.fading.v2v, large_scale_gain(path_loss_v2v(d["v2v"], cfg), 0.0))


def test_episode_sequence_is_bit_identical():
    def trace(seed):
        s = init_scenario(ScenarioConfig(), seed)
        out = []
        for _ in range(5):
            step_mobility(s, 0.1)
            update_large_scale(s)
            for _ in range(3):
                update_small_scale(s)
                out += [a.copy() for a in _snapshot(s)]
        return out

    for x, y in zip(trace(4), trace(4)):
        np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize("a,l,expected", [(1e-10, 2.0, 2e-10), (1e-10, 0.0, 0.0), (1.0, 1.0, 1.0)])
def test_composite_gain(a, l, expected):
    assert composite_gain(a, l) == expected
