"""Greedy evaluation of trained policies, model comparison and curve export."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import init_scenario
from .config import ConfigError, TrainConfig, load_config
from .dqn import CheckpointError, QNetwork, load_checkpoint
from .mdp import n_actions, obs_dim
from .training import (
    MANIFEST_NAME,
    EpisodeRecord,
    Policy,
    checkpoint_names,
    random_policy,
    read_records_csv,
    run_episode,
    start_episode,
    write_records_csv,
)

MODEL_ORDER = ("MARL", "SARL", "RANDOM")
SUMMARY_COLUMNS = ("model", "episodes", "payload_bytes", "v2v_success_prob", "avg_v2i_mbps")
SUMMARY_NAME = "eval_summary.csv"
SUCCESS_CURVE_NAME = "success_curve.csv"
REWARD_CURVE_NAME = "reward_curve.csv"


@dataclass
class EvalSummary:
    model: str
    n_episodes: int
    payload_bytes: float
    v2v_success_prob: float
    avg_v2i_mbps: float
    episodes: list[EpisodeRecord] = field(default_factory=list, repr=False)
    config: TrainConfig | None = field(default=None, repr=False)

    def csv_row(self) -> dict[str, object]:
        return {
            "model": self.model,
            "episodes": self.n_episodes,
            "payload_bytes": float(self.payload_bytes),
            "v2v_success_prob": self.v2v_success_prob,
            "avg_v2i_mbps": self.avg_v2i_mbps,
        }

    @property
    def delivered_fracs(self) -> list[float]:
        return [r.delivered_frac for r in self.episodes]


@dataclass
class LoadedPolicy:
    """Networks restored from a training run directory."""

    mode: str
    nets: list[QNetwork]
    config: TrainConfig


def greedy_policy(nets: list[QNetwork], owners: list[int]) -> Policy:
    def policy(obs: np.ndarray, epsilon: float) -> np.ndarray:
        return np.array([int(np.argmax(nets[owners[x]].forward(z))) for x, z in enumerate(obs)],
                        dtype=np.int64)

    return policy


def owners_for(mode: str, n_links: int) -> list[int]:
    return [0] * n_links if mode == "sarl" else list(range(n_links))


def load_policy(checkpoint_dir: str | Path) -> LoadedPolicy:
    """Read ``run_manifest.txt`` and the matching checkpoint files."""
    root = Path(checkpoint_dir)
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        # periodic snapshots live two levels below the manifest
        for parent in root.parents[:2]:
            if (parent / MANIFEST_NAME).is_file():
                manifest = parent / MANIFEST_NAME
                break
        else:
            raise CheckpointError(f"{root}: no {MANIFEST_NAME} found")
    cfg = load_config(manifest)
    if cfg.mode not in ("marl", "sarl"):
        raise CheckpointError(f"{manifest}: mode {cfg.mode!r} has no networks")
    sc = cfg.scenario
    nets = []
    for name in checkpoint_names(cfg.mode, sc.num_v2v_links):
        net = load_checkpoint(root / name)
        dims = net.layer_dims
        if dims[0] != obs_dim(sc.num_v2i_links) or dims[-1] != n_actions(sc.num_v2i_links):
            raise CheckpointError(f"{root / name}: layer dims {dims} do not fit Y={sc.num_v2i_links}")
        nets.append(net)
    return LoadedPolicy(cfg.mode, nets, cfg)


def summarise(model: str, records: list[EpisodeRecord], payload_bytes: float,
              cfg: TrainConfig | None = None) -> EvalSummary:
    if not records:
        raise ValueError("no episodes to summarise")
    n_links = len(records[0].delivered)
    delivered = sum(sum(r.delivered) for r in records)
    return EvalSummary(
        model=model.upper(),
        n_episodes=len(records),
        payload_bytes=float(payload_bytes),
        v2v_success_prob=delivered / (n_links * len(records)),
        avg_v2i_mbps=float(np.mean([r.avg_v2i_mbps for r in records])),
        episodes=list(records),
        config=cfg,
    )


def evaluate(model, cfg: TrainConfig | None = None, n_episodes: int | None = None,
             payload_bytes: float | None = None, seed: int | None = None) -> EvalSummary:
    """Run greedy test episodes for ``model`` (a LoadedPolicy, or ``"random"``).

    Test episodes use a scenario seeded with ``seed + test_seed_offset`` so
    they never share a channel trajectory with training. Two evaluations
    with the same config and seed see identical channels.
    """
    if isinstance(model, LoadedPolicy):
        cfg = cfg or model.config
        label = model.mode
    elif isinstance(model, str) and model.lower() == "random":
        if cfg is None:
            raise ConfigError("random evaluation needs a config")
        label = "random"
    else:
        raise ValueError(f"cannot evaluate {model!r}")
    n_episodes = cfg.test_episodes if n_episodes is None else n_episodes
    payload_bytes = cfg.payload_bytes if payload_bytes is None else payload_bytes
    seed = cfg.seed if seed is None else seed
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if payload_bytes <= 0:
        raise ValueError("payload_bytes must be positive")
    sc = cfg.scenario

    if isinstance(model, LoadedPolicy):
        if len(model.nets) != (1 if model.mode == "sarl" else sc.num_v2v_links):
            raise CheckpointError(f"{len(model.nets)} networks do not fit {model.mode} with X={sc.num_v2v_links}")
        policy = greedy_policy(model.nets, owners_for(model.mode, sc.num_v2v_links))
    else:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2, 1]))
        policy = random_policy(rng, sc.num_v2i_links)

    test_seed = seed + cfg.test_seed_offset
    env = init_scenario(sc, test_seed)
    records = []
    for ep in range(n_episodes):
        start_episode(env, cfg)
        rec, _ = run_episode(env, policy, 0.0, cfg, episode=ep, payload_bytes=payload_bytes, collect=False)
        rec.actions = None
        records.append(rec)
    cfg = dataclasses.replace(cfg, seed=seed)
    return summarise(label, records, payload_bytes, cfg)


def evaluate_learners(learners, mode: str, cfg: TrainConfig, **kwargs) -> EvalSummary:
    """Evaluate in-memory networks straight after training."""
    return evaluate(LoadedPolicy(mode, [l.net for l in learners], cfg), cfg, **kwargs)


def write_summary_csv(summaries, path: str | Path) -> None:
    write_records_csv(path, SUMMARY_COLUMNS, [s.csv_row() for s in summaries])


def read_summary_csv(path: str | Path) -> list[EvalSummary]:
    out = []
    for row in read_records_csv(path):
        try:
            out.append(EvalSummary(str(row["model"]), int(row["episodes"]), float(row["payload_bytes"]),
                                   float(row["v2v_success_prob"]), float(row["avg_v2i_mbps"])))
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{path}: not an evaluation summary ({exc})") from None
    return out


def _model_rank(label: str) -> int:
    return MODEL_ORDER.index(label) if label in MODEL_ORDER else len(MODEL_ORDER)


def compare_models(summaries: list[EvalSummary]) -> str:
    """Fixed-width table, one row per model, MARL then SARL then RANDOM."""
    if len(summaries) < 2:
        raise ValueError("need at least two summaries to compare")
    ref = summaries[0]
    for s in summaries[1:]:
        if s.payload_bytes != ref.payload_bytes or s.n_episodes != ref.n_episodes:
            raise ConfigError(
                f"cannot compare {s.model} ({s.n_episodes} episodes, P={s.payload_bytes:g}) "
                f"with {ref.model} ({ref.n_episodes} episodes, P={ref.payload_bytes:g})")
        if s.config is not None and ref.config is not None and (
                s.config.scenario != ref.config.scenario or s.config.seed != ref.config.seed):
            raise ConfigError(f"{s.model} and {ref.model} were evaluated under different configs")
    ordered = sorted(summaries, key=lambda s: _model_rank(s.model.upper()))
    header = f"{'Model':<8}{'Average V2I Rate (Mbps)':>26}{'V2V Success Probability':>26}"
    lines = [header, "-" * len(header)]
    for s in ordered:
        lines.append(f"{s.model:<8}{s.avg_v2i_mbps:>26.5f}{s.v2v_success_prob:>26.4f}")
    return "\n".join(lines)


def moving_average(values, window: int) -> np.ndarray:
    """Trailing mean; the first entries average over what is available."""
    if window < 1:
        raise ValueError("window must be >= 1")
    v = np.asarray(values, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def emit_training_curve(log, window: int = 50, path: str | Path | None = None) -> list[dict]:
    """(episode, cum_reward, moving_average) rows from a TrainingLog or row dicts."""
    rows = log.rows if hasattr(log, "rows") else log
    episodes = [int(r.episode if hasattr(r, "episode") else r["episode"]) for r in rows]
    rewards = [float(r.cum_reward if hasattr(r, "cum_reward") else r["cum_reward"]) for r in rows]
    ma = moving_average(rewards, window) if rewards else np.array([])
    out = [{"episode": e, "cum_reward": c, "moving_average": float(m)}
           for e, c, m in zip(episodes, rewards, ma)]
    if path is not None:
        write_records_csv(path, ("episode", "cum_reward", "moving_average"), out)
    return out


def emit_success_curve(fractions, path: str | Path | None = None) -> tuple[list[dict], float]:
    """Per-test-episode delivered fraction; the last CSV row carries the mean."""
    fr = [float(f) for f in fractions]
    aggregate = float(np.mean(fr)) if fr else float("nan")
    rows = [{"test_episode": i, "delivered_frac": f} for i, f in enumerate(fr)]
    if path is not None:
        write_records_csv(path, ("test_episode", "delivered_frac"),
                          rows + [{"test_episode": "mean", "delivered_frac": aggregate}])
    return rows, aggregate


def plot_curves(csv_path: str | Path, out_path: str | Path, window: int = 50) -> Path:
    """Render a training log or a success curve CSV as a vector figure."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_records_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path}: no data rows")
    out_path = Path(out_path)
    fmt = out_path.suffix.lstrip(".").lower() or "svg"
    if fmt not in ("svg", "pdf", "eps", "ps"):
        raise ValueError(f"{out_path}: use a vector format (svg, pdf, eps)")
    cols = set(rows[0])
    if "cum_reward" in cols:
        fig, axes = plt.subplots(2 if "delivered_frac" in cols else 1, 1, figsize=(7, 6), sharex=True,
                                 squeeze=False)
        curve = emit_training_curve(rows, window)
        ep = [r["episode"] for r in curve]
        ax = axes[0, 0]
        ax.plot(ep, [r["cum_reward"] for r in curve], lw=0.6, alpha=0.4, label="per episode")
        ax.plot(ep, [r["moving_average"] for r in curve], lw=1.5, label=f"{window}-episode average")
        ax.set_ylabel("cumulative reward")
        ax.legend(loc="lower right")
        if "delivered_frac" in cols:
            ax = axes[1, 0]
            ax.plot(ep, moving_average([r["delivered_frac"] for r in rows], window), lw=1.5)
            ax.set_ylabel("V2V delivered fraction")
            ax.set_ylim(-0.02, 1.02)
        axes[-1, 0].set_xlabel("training episode")
    elif "delivered_frac" in cols:
        data = [r for r in rows if isinstance(r.get("test_episode"), int)]
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot([r["test_episode"] for r in data], [r["delivered_frac"] for r in data], marker=".", lw=0.8)
        mean = np.mean([r["delivered_frac"] for r in data])
        ax.axhline(mean, color="k", lw=0.8, ls="--", label=f"mean {mean:.4f}")
        ax.set_xlabel("test episode")
        ax.set_ylabel("V2V success probability")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="lower right")
    else:
        raise ValueError(f"{csv_path}: expected a training log or success curve")
    fig.tight_layout()
    fig.savefig(out_path, format=fmt)
    plt.close(fig)
    return out_path
