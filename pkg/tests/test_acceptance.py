"""Acceptance gate: one test per criterion, each at its stated tolerance.

Every test records a pass/fail line that is printed in the terminal summary
(see ``conftest.py``). The learning criteria share one MARL and one SARL run.
"""

import time

import numpy as np
import pytest

from v2xshare.channel import draw_small_scale, init_scenario, large_scale_gain, path_loss_v2i, path_loss_v2v
from v2xshare.cli import main
from v2xshare.comm import TransmitDecision, compute_link_state, dbm_to_watt, link_capacity, v2i_sinr
from v2xshare.config import ScenarioConfig, TrainConfig
from v2xshare.dqn import QNetwork, load_checkpoint, loss_and_grads, save_checkpoint
from v2xshare.evaluation import (
    emit_success_curve,
    emit_training_curve,
    evaluate,
    evaluate_learners,
    moving_average,
    read_summary_csv,
    write_summary_csv,
)
from v2xshare.mdp import decode_action, encode_action, n_actions
from v2xshare.training import LOG_NAME, read_records_csv, run_marl_training, run_sarl_training

from conftest import ACCEPTANCE, small_scenario, small_train_config

DESK_EPISODES = 600
DESK_PAYLOAD = 1060.0


def report(n, ok, detail):
    ACCEPTANCE.append((n, bool(ok), detail))
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"criterion {n}: {detail}"


def desk_config(**kw) -> TrainConfig:
    """Default config at Y = X = 2, 600 episodes, P = 1060 B."""
    cfg = TrainConfig(episodes=DESK_EPISODES, payload_bytes=DESK_PAYLOAD, **kw)
    cfg.scenario.num_v2i_links = 2
    cfg.scenario.num_v2v_links = 2
    return cfg


@pytest.fixture(scope="module")
def marl_run():
    t0 = time.perf_counter()
    log, learners = run_marl_training(desk_config())
    return log, learners, time.perf_counter() - t0


@pytest.fixture(scope="module")
def sarl_run():
    cfg = desk_config()
    log, learners = run_sarl_training(cfg)
    return cfg, log, learners


def _numeric_grad(net, z, a, y, h=1e-5):
    out = []
    for p in net.parameters():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp, _ = loss_and_grads(net, z, a, y)
            p[idx] = old - h
            lm, _ = loss_and_grads(net, z, a, y)
            p[idx] = old
            g[idx] = (lp - lm) / (2 * h)
        out.append(g)
    return out


def test_criterion_1_gradient_check():
    rng = np.random.default_rng(20)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        dims = list(rng.integers(1, 9, size=rng.integers(3, 6)))
        net = QNetwork.initialise(dims, rng)
        for b in net.biases:
            b += rng.normal(scale=0.2, size=b.shape)
        n = int(rng.integers(1, 9))
        z = rng.normal(size=(n, dims[0]))
        a = rng.integers(dims[-1], size=n)
        y = rng.normal(size=n)
        _, grads = loss_and_grads(net, z, a, y)
        for g, gn in zip(grads, _numeric_grad(net, z, a, y)):
            scale = np.maximum(np.maximum(np.abs(g), np.abs(gn)), 1e-6)
            worst = max(worst, float(np.max(np.abs(g - gn) / scale)))
    elapsed = time.perf_counter() - t0
    report(1, worst <= 1e-4 and elapsed < 10.0, f"max relative error {worst:.2e} (<= 1e-4), {elapsed:.2f} s (< 10 s)")


def test_criterion_2_units_and_codec():
    failures = []
    if dbm_to_watt(0.0) != 1e-3:
        failures.append("0 dBm")
    if abs(dbm_to_watt(23.0) - 0.19952623149688797) > 1e-12 * 0.2:
        failures.append("23 dBm")
    if dbm_to_watt(-100.0) != 0.0:
        failures.append("-100 dBm")
    for y in (1, 2, 3, 4, 8):
        decoded = [decode_action(i, y) for i in range(n_actions(y))]
        if len(set(decoded)) != 4 * y:
            failures.append(f"codec Y={y} not injective")
        for i, (band, power) in enumerate(decoded):
            if encode_action(band, [23.0, 10.0, 5.0, -100.0].index(power), y) != i:
                failures.append(f"codec Y={y} idx {i}")
    for w in (1e5, 1e6, 1.8e7):
        if link_capacity(w, 1.0) != w or link_capacity(2 * w, 3.0) != 4 * w:
            failures.append(f"capacity W={w:g}")
    report(2, not failures, "all exact" if not failures else ", ".join(failures))


def test_criterion_3_fading_statistics():
    t0 = time.perf_counter()
    mean = float(draw_small_scale(np.random.default_rng(3), 1_000_000).mean())
    cfg = ScenarioConfig(shadow_std_v2i=0.0, shadow_std_v2v=0.0)
    d = np.geomspace(1.0, 3000.0, 1000)
    monotone = all(
        np.all(np.diff(large_scale_gain(law(d[d >= cfg.min_distance_clip], cfg), 0.0)) < 0)
        for law in (path_loss_v2i, path_loss_v2v))
    elapsed = time.perf_counter() - t0
    ok = abs(mean - 1.0) <= 0.01 and monotone and elapsed < 5.0
    report(3, ok, f"small-scale mean {mean:.5f} (|err| <= 1%), large-scale monotone={monotone}, {elapsed:.2f} s")


def test_criterion_4_sinr_properties():
    rng = np.random.default_rng(4)
    cfg = small_scenario(num_v2i_links=3, num_v2v_links=4)
    env = init_scenario(cfg, 0)
    f = env.fading
    violations = 0
    checked = 0
    for _ in range(1000):
        f.v2v = 10 ** rng.uniform(-12, -5, size=(4, 4))
        f.v2v_bs = 10 ** rng.uniform(-14, -8, size=4)
        f.v2i_bs = 10 ** rng.uniform(-14, -8, size=3)
        f.v2i_v2v = 10 ** rng.uniform(-13, -6, size=(3, 4))
        for name in ("v2v", "v2v_bs", "v2i_bs", "v2i_v2v"):
            setattr(f, name + "_small", rng.exponential(size=getattr(f, name).shape + (3,)))
        bands = rng.integers(3, size=4)
        power = rng.uniform(-10.0, 23.0, size=4)
        x, other = rng.choice(4, size=2, replace=False)
        bands[other] = bands[x]  # force a co-channel interferer
        base_v2i, base_v2v, _ = compute_link_state(TransmitDecision(bands, power), env, cfg)

        up = power.copy()
        up[x] += rng.uniform(0.5, 10.0)
        v2i_up, v2v_up, _ = compute_link_state(TransmitDecision(bands, up), env, cfg)
        louder = power.copy()
        louder[other] += rng.uniform(0.5, 10.0)
        v2i_l, v2v_l, _ = compute_link_state(TransmitDecision(bands, louder), env, cfg)
        y = bands[x]
        checked += 1
        violations += not (v2v_up[x] > base_v2v[x])  # own power raises own SINR
        violations += not (v2v_l[x] < base_v2v[x])  # interferer power lowers it
        violations += not (v2i_up[y] < base_v2i[y])  # sharer power lowers V2I SINR

    # silent sharers leave V2I SINR bit-identical to the no-sharer value
    bit_identical = True
    for _ in range(200):
        bands = rng.integers(3, size=4)
        silent = TransmitDecision(bands, np.full(4, -100.0))
        for yb in range(3):
            alone = v2i_sinr(yb, silent, env, cfg, active=np.zeros(4, dtype=bool))
            vec, _, _ = compute_link_state(silent, env, cfg)
            bit_identical &= v2i_sinr(yb, silent, env, cfg) == alone and vec[yb] == alone
    report(4, violations == 0 and bit_identical,
           f"{violations} monotonicity violations over {checked} configurations, "
           f"silent sharers bit-identical={bit_identical}")


def test_criterion_5_determinism(tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("env.num_v2i_links = 2\nenv.num_v2v_links = 2\ntrain.episodes = 5\n"
                        "train.payload_bytes = 1060\ndqn.hidden = 32, 16\ndqn.batch_size = 16\n")
    outs = []
    for name in ("a", "b"):
        assert main(["train", "--config", str(cfg_file), "--mode", "marl", "--seed", "3",
                     "--out", str(tmp_path / name)]) == 0
        outs.append(tmp_path / name)
    files = [LOG_NAME, "agent0.v2xq", "agent1.v2xq"]
    same_files = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files)

    one = small_train_config(episodes=5, scenario=small_scenario(num_v2v_links=1))
    m_log, m = run_marl_training(one)
    s_log, s = run_sarl_training(one)
    same_modes = (np.array_equal(m_log.cum_rewards, s_log.cum_rewards)
                  and all(np.array_equal(p, q) for p, q in zip(m[0].net.parameters(), s[0].net.parameters())))
    report(5, same_files and same_modes,
           f"rerun byte-identical={same_files}, MARL==SARL at X=1: {same_modes}")


def test_criterion_6_learning_signal(marl_run):
    log, _, elapsed = marl_run
    r = log.cum_rewards
    first, last = r[:50].mean(), r[-50:].mean()
    gain = last / first - 1.0
    ok = gain >= 0.10 and elapsed < 15 * 60
    report(6, ok, f"final-50 mean {last:.2f} vs first-50 mean {first:.2f}: {gain:+.1%} (need >= +10%), "
                  f"{elapsed:.0f} s")


def test_criterion_7_baseline_dominance(sarl_run):
    cfg, _, learners = sarl_run
    sarl = evaluate_learners(learners, "sarl", cfg, n_episodes=100, payload_bytes=DESK_PAYLOAD)
    rnd = evaluate("random", cfg, n_episodes=100, payload_bytes=DESK_PAYLOAD)
    gap = sarl.v2v_success_prob - rnd.v2v_success_prob
    report(7, gap >= 0.05,
           f"SARL success {sarl.v2v_success_prob:.4f} vs random {rnd.v2v_success_prob:.4f}: "
           f"gap {gap:+.4f} (need >= +0.05)")


def test_criterion_8_convergence_shape(marl_run):
    log, _, _ = marl_run
    ma = moving_average(log.cum_rewards, 50)
    third = len(ma) // 3
    early, late = float(np.std(ma[:third])), float(np.std(ma[-third:]))
    report(8, late < early, f"moving-average SD final third {late:.2f} vs first third {early:.2f} (need lower)")


def test_criterion_9_file_round_trips(tmp_path, marl_run):
    log, learners, _ = marl_run
    rng = np.random.default_rng(9)
    net = learners[0].net
    save_checkpoint(net, tmp_path / "a.v2xq")
    z = rng.normal(size=(100, net.layer_dims[0]))
    ckpt_ok = np.array_equal(net.forward(z), load_checkpoint(tmp_path / "a.v2xq").forward(z))

    log.write_csv(tmp_path / LOG_NAME)
    csv_ok = _same_with_nan(read_records_csv(tmp_path / LOG_NAME), [row.csv_row() for row in log.rows])
    curve = emit_training_curve(log, 50, tmp_path / "reward_curve.csv")
    csv_ok &= read_records_csv(tmp_path / "reward_curve.csv") == curve
    summary = evaluate("random", desk_config(), n_episodes=10)
    write_summary_csv([summary], tmp_path / "eval_summary.csv")
    csv_ok &= [s.csv_row() for s in read_summary_csv(tmp_path / "eval_summary.csv")] == [summary.csv_row()]
    rows, agg = emit_success_curve(summary.delivered_fracs, tmp_path / "success_curve.csv")
    csv_ok &= read_records_csv(tmp_path / "success_curve.csv") == rows + [
        {"test_episode": "mean", "delivered_frac": agg}]
    report(9, ckpt_ok and csv_ok, f"checkpoint forward bit-identical={ckpt_ok}, CSVs reparse identically={csv_ok}")


def _same_with_nan(a, b):
    # nan != nan, so compare those fields by kind
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        if ra.keys() != rb.keys():
            return False
        for k in ra:
            va, vb = ra[k], rb[k]
            if isinstance(vb, float) and np.isnan(vb):
                if not (isinstance(va, float) and np.isnan(va)):
                    return False
            elif va != vb:
                return False
    return True
