"""Episode loop and the MARL / SARL / random training drivers.

Per episode: move vehicles, redraw large-scale fading, reset payloads, then
run ``steps_per_episode`` steps in which all agents act at once on
observations built from the previous step's interference. Every agent gets
the same global reward. Gradient updates happen after the episode.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .channel import EnvState, init_scenario, refresh_pairing, step_mobility, update_large_scale, update_small_scale
from .comm import PayloadState, advance_payload, compute_rates, watt_to_dbm
from .config import TrainConfig, dump_config
from .dqn import (
    DivergenceError,
    ReplayMemory,
    TrainState,
    Transition,
    act_epsilon_greedy,
    save_checkpoint,
    train_step,
)
from .mdp import OBS_LAYOUT_VERSION, build_observation, compute_reward, decode_actions, n_actions, obs_dim

log = logging.getLogger(__name__)

LOG_COLUMNS = ("episode", "epsilon", "cum_reward", "mean_loss", "delivered_frac", "avg_v2i_mbps")
MANIFEST_NAME = "run_manifest.txt"
LOG_NAME = "training_log.csv"
CHECKPOINT_SUFFIX = ".v2xq"

# obs (X, d), epsilon -> action indices (X,)
Policy = Callable[[np.ndarray, float], np.ndarray]


def epsilon_at(episode: int, start: float = 1.0, end: float = 0.02, anneal_episodes: int = 2400) -> float:
    """Linear decay from `start` to `end` over `anneal_episodes`, flat afterwards."""
    if episode < 0:
        raise ValueError("episode must be >= 0")
    if anneal_episodes <= 0 or episode >= anneal_episodes:
        return end
    return start + (end - start) * (episode / anneal_episodes)


@dataclass
class EpisodeRecord:
    episode: int
    epsilon: float
    cum_reward: float
    mean_loss: float
    delivered: tuple[bool, ...]
    avg_v2i_rate: float  # bits/s, V2I sum rate averaged over steps
    step_rewards: tuple[float, ...] = field(default=(), repr=False)
    actions: np.ndarray | None = field(default=None, repr=False)  # (steps, X)

    @property
    def delivered_frac(self) -> float:
        return sum(self.delivered) / len(self.delivered)

    @property
    def avg_v2i_mbps(self) -> float:
        return self.avg_v2i_rate / 1e6

    def csv_row(self) -> dict[str, object]:
        return {
            "episode": self.episode,
            "epsilon": self.epsilon,
            "cum_reward": self.cum_reward,
            "mean_loss": self.mean_loss,
            "delivered_frac": self.delivered_frac,
            "avg_v2i_mbps": self.avg_v2i_mbps,
        }


@dataclass
class TrainingLog:
    config: TrainConfig
    seed: int
    rows: list[EpisodeRecord] = field(default_factory=list)

    def append(self, rec: EpisodeRecord) -> None:
        self.rows.append(rec)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def cum_rewards(self) -> np.ndarray:
        return np.array([r.cum_reward for r in self.rows])

    def write_csv(self, path: str | Path) -> None:
        write_records_csv(path, LOG_COLUMNS, [r.csv_row() for r in self.rows])


def _fmt(value) -> str:
    # repr round-trips floats exactly
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def write_records_csv(path: str | Path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def read_records_csv(path: str | Path) -> list[dict[str, object]]:
    """Read one of our CSVs back; integer-looking fields become int, others float or str."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for k, v in row.items():
                try:
                    parsed[k] = int(v)
                except ValueError:
                    try:
                        parsed[k] = float(v)
                    except ValueError:
                        parsed[k] = v
            out.append(parsed)
    return out


def read_training_log(path: str | Path) -> list[dict[str, object]]:
    return read_records_csv(path)


@dataclass
class Learner:
    """One Q-network with its replay memory and its own random stream."""

    state: TrainState
    memory: ReplayMemory
    rng: np.random.Generator

    @property
    def net(self):
        return self.state.online


def make_learner(cfg: TrainConfig, index: int) -> Learner:
    n_bands = cfg.scenario.num_v2i_links
    init_ss, behaviour_ss = np.random.SeedSequence([cfg.seed, 1, index]).spawn(2)
    d = cfg.dqn
    dims = [obs_dim(n_bands), *d.hidden, n_actions(n_bands)]
    state = TrainState.create(
        dims, np.random.default_rng(init_ss),
        learning_rate=d.learning_rate, gamma=d.gamma, batch_size=d.batch_size,
        target_sync_period=d.target_sync_period, grad_clip=d.grad_clip, optimizer=d.optimizer,
    )
    return Learner(state, ReplayMemory(d.replay_capacity, dims[0]), np.random.default_rng(behaviour_ss))


def network_policy(learners: list[Learner], owners: list[int]) -> Policy:
    """Each link acts from its own observation through the network it is owned by."""

    def policy(obs: np.ndarray, epsilon: float) -> np.ndarray:
        actions = np.empty(len(obs), dtype=np.int64)
        for x, z in enumerate(obs):
            learner = learners[owners[x]]
            q = learner.net.forward(z[None, :])[0]
            actions[x] = act_epsilon_greedy(q, epsilon, learner.rng)
        return actions

    return policy


def random_policy(rng: np.random.Generator, n_bands: int) -> Policy:
    def policy(obs: np.ndarray, epsilon: float) -> np.ndarray:
        return rng.integers(n_actions(n_bands), size=len(obs))

    return policy


def fixed_policy(actions) -> Policy:
    actions = np.asarray(actions, dtype=np.int64)

    def policy(obs: np.ndarray, epsilon: float) -> np.ndarray:
        return actions.copy()

    return policy


def run_episode(env: EnvState, policy: Policy, epsilon: float, cfg: TrainConfig,
                episode: int = 0, payload_bytes: float | None = None,
                collect: bool = True) -> tuple[EpisodeRecord, list[list[Transition]]]:
    """Play one episode on an environment whose large-scale fading is current."""
    sc = cfg.scenario
    n_v2v, n_bands = sc.num_v2v_links, sc.num_v2i_links
    payload = PayloadState.fresh(n_v2v, cfg.payload_bytes if payload_bytes is None else payload_bytes,
                                 sc.time_budget)
    prev_interf = np.full((n_v2v, n_bands), float(sc.noise_power))
    transitions: list[list[Transition]] = [[] for _ in range(n_v2v)]
    rewards = []
    v2i_sum = 0.0
    actions_log = np.empty((sc.steps_per_episode, n_v2v), dtype=np.int64)

    obs = np.stack([build_observation(env, x, payload, prev_interf[x]) for x in range(n_v2v)])
    for t in range(sc.steps_per_episode):
        actions = policy(obs, epsilon)
        actions_log[t] = actions
        decision = decode_actions(actions, n_bands)
        active = ~payload.delivered if sc.silence_delivered else None
        rates, interference = compute_rates(decision, env, sc, active)
        advance_payload(payload, rates, sc.step_dt)
        reward = compute_reward(rates, payload, cfg.reward, sc.bandwidth)
        rewards.append(reward)
        v2i_sum += float(np.sum(rates.v2i_rate))
        update_small_scale(env)
        prev_interf = watt_to_dbm(interference)
        next_obs = np.stack([build_observation(env, x, payload, prev_interf[x]) for x in range(n_v2v)])
        if collect:
            terminal = t == sc.steps_per_episode - 1
            for x in range(n_v2v):
                transitions[x].append(Transition(obs[x], int(actions[x]), reward, next_obs[x],
                                                 terminal, OBS_LAYOUT_VERSION))
        obs = next_obs

    record = EpisodeRecord(
        episode=episode,
        epsilon=float(epsilon),
        cum_reward=float(math.fsum(rewards)),
        mean_loss=math.nan,
        delivered=tuple(bool(d) for d in payload.delivered),
        avg_v2i_rate=v2i_sum / sc.steps_per_episode,
        step_rewards=tuple(rewards),
        actions=actions_log,
    )
    return record, transitions


def start_episode(env: EnvState, cfg: TrainConfig) -> None:
    """Per-episode slow update: move vehicles, refresh links, redraw large-scale fading."""
    step_mobility(env, cfg.scenario.time_budget)
    if cfg.scenario.repair_links_each_episode:
        refresh_pairing(env)
    update_large_scale(env)


def checkpoint_names(mode: str, n_links: int) -> list[str]:
    if mode == "sarl":
        return ["shared" + CHECKPOINT_SUFFIX]
    return [f"agent{x}{CHECKPOINT_SUFFIX}" for x in range(n_links)]


def _write_checkpoints(learners: list[Learner], mode: str, directory: Path) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for learner, name in zip(learners, checkpoint_names(mode, len(learners))):
        path = directory / name
        save_checkpoint(learner.net, path)
        paths.append(path)
    return paths


def write_manifest(cfg: TrainConfig, out_dir: Path) -> None:
    header = (f"# training run manifest\n# observation layout version {OBS_LAYOUT_VERSION}\n"
              f"# seeds: scenario={cfg.seed}, test={cfg.seed + cfg.test_seed_offset}\n")
    (out_dir / MANIFEST_NAME).write_text(header + dump_config(cfg), encoding="utf-8")


def _prepare_out(out_dir, cfg: TrainConfig) -> Path | None:
    if out_dir is None:
        return None
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(cfg, out)
    except OSError as exc:
        raise OSError(f"cannot write to output directory {out}: {exc.strerror}") from None
    return out


def _train(cfg: TrainConfig, mode: str, out_dir=None) -> tuple[TrainingLog, list[Learner]]:
    cfg = dataclasses.replace(cfg, mode=mode)
    cfg.validate()
    sc = cfg.scenario
    n_v2v = sc.num_v2v_links
    out = _prepare_out(out_dir, cfg)
    env = init_scenario(sc, cfg.seed)
    tlog = TrainingLog(cfg, cfg.seed)

    if mode == "random":
        learners = []
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
        policy = random_policy(rng, sc.num_v2i_links)
        owners = []
    else:
        n_nets = 1 if mode == "sarl" else n_v2v
        learners = [make_learner(cfg, k) for k in range(n_nets)]
        owners = [0] * n_v2v if mode == "sarl" else list(range(n_v2v))
        policy = network_policy(learners, owners)

    try:
        for ep in range(cfg.episodes):
            eps = epsilon_at(ep, cfg.eps_start, cfg.eps_end, cfg.anneal_episodes) if learners else 1.0
            start_episode(env, cfg)
            record, transitions = run_episode(env, policy, eps, cfg, episode=ep, collect=bool(learners))
            record.actions = None
            record.step_rewards = ()
            losses = []
            if learners:
                for t in range(sc.steps_per_episode):
                    for x in range(n_v2v):
                        learners[owners[x]].memory.push(transitions[x][t])
                for learner in learners:
                    for _ in range(cfg.dqn.updates_per_episode):
                        if len(learner.memory) < cfg.dqn.batch_size:
                            break
                        batch = learner.memory.sample(cfg.dqn.batch_size, learner.rng)
                        losses.append(train_step(learner.state, batch, episode=ep))
            record.mean_loss = float(np.mean(losses)) if losses else math.nan
            tlog.append(record)
            if out is not None and learners and cfg.checkpoint_every > 0 and (ep + 1) % cfg.checkpoint_every == 0:
                _write_checkpoints(learners, mode, out / "checkpoints" / f"ep{ep + 1:05d}")
            if (ep + 1) % 100 == 0:
                log.info("%s episode %d: eps=%.3f cum_reward=%.2f delivered=%.2f",
                         mode, ep + 1, eps, record.cum_reward, record.delivered_frac)
    except DivergenceError:
        if out is not None:
            tlog.write_csv(out / LOG_NAME)
        raise

    if out is not None:
        tlog.write_csv(out / LOG_NAME)
        if learners:
            _write_checkpoints(learners, mode, out)
    return tlog, learners


def run_marl_training(cfg: TrainConfig, out_dir=None) -> tuple[TrainingLog, list[Learner]]:
    """One Q-network and replay memory per V2V link."""
    return _train(cfg, "marl", out_dir)


def run_sarl_training(cfg: TrainConfig, out_dir=None) -> tuple[TrainingLog, list[Learner]]:
    """A single shared Q-network and replay memory drive every V2V link."""
    return _train(cfg, "sarl", out_dir)


def run_random_baseline(cfg: TrainConfig, out_dir=None) -> TrainingLog:
    return _train(cfg, "random", out_dir)[0]


def run_training(cfg: TrainConfig, out_dir=None):
    return _train(cfg, cfg.mode, out_dir)
