"""Deep Q-network in plain NumPy: MLP value net, replay memory, gradient training.

Everything is float64 and driven by explicit ``np.random.Generator`` objects,
so a fixed seed reproduces the parameter trajectory bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mdp import OBS_LAYOUT_VERSION

CHECKPOINT_MAGIC = b"V2XQ"
CHECKPOINT_FORMAT_VERSION = 1


class DivergenceError(FloatingPointError):
    def __init__(self, message: str, episode: int | None = None):
        super().__init__(message if episode is None else f"episode {episode}: {message}")
        self.episode = episode


class InsufficientDataError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class LayoutMismatchError(ValueError):
    pass


class QNetwork:
    """Fully connected net, rectifier on hidden layers, identity output.

    ``weights[i]`` has shape ``(in, out)`` so a batch is pushed through as
    ``h @ W + b``.
    """

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray],
                 layout_version: int = OBS_LAYOUT_VERSION):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input dim {w.shape[0]} != previous output dim")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
        self.layout_version = layout_version

    @classmethod
    def initialise(cls, layer_dims, rng: np.random.Generator,
                   layout_version: int = OBS_LAYOUT_VERSION) -> "QNetwork":
        """Glorot-uniform weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, layout_version)

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def forward(self, z: np.ndarray) -> np.ndarray:
        return self.activations(z)[-1]

    def activations(self, z: np.ndarray) -> list[np.ndarray]:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.layer_dims[0]:
            raise ValueError(f"observation length {z.shape[-1]} != network input {self.layer_dims[0]}")
        acts = [z]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = acts[-1] @ w + b
            acts.append(h if i == last else np.maximum(h, 0.0))
        return acts

    def copy(self) -> "QNetwork":
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.layout_version)

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())


def forward(net: QNetwork, z: np.ndarray) -> np.ndarray:
    return net.forward(z)


def act_epsilon_greedy(q: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform random action with probability `epsilon`, else the first argmax."""
    q = np.asarray(q)
    if q.size == 0:
        raise ValueError("empty Q vector")
    if rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


@dataclass
class Transition:
    z: np.ndarray
    a: int
    r: float
    z_next: np.ndarray
    terminal: bool
    layout_version: int = OBS_LAYOUT_VERSION


@dataclass
class Batch:
    z: np.ndarray  # (B, d)
    a: np.ndarray  # (B,)
    r: np.ndarray  # (B,)
    z_next: np.ndarray  # (B, d)
    terminal: np.ndarray  # (B,) bool

    def __len__(self) -> int:
        return len(self.a)

    @classmethod
    def from_transitions(cls, ts: list[Transition]) -> "Batch":
        return cls(
            z=np.stack([t.z for t in ts]),
            a=np.array([t.a for t in ts], dtype=np.int64),
            r=np.array([t.r for t in ts], dtype=np.float64),
            z_next=np.stack([t.z_next for t in ts]),
            terminal=np.array([t.terminal for t in ts], dtype=bool),
        )


class ReplayMemory:
    """Bounded FIFO transition store backed by ring buffers."""

    def __init__(self, capacity: int, obs_dim: int, layout_version: int = OBS_LAYOUT_VERSION):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.layout_version = layout_version
        self._z = np.zeros((capacity, obs_dim))
        self._z_next = np.zeros((capacity, obs_dim))
        self._a = np.zeros(capacity, dtype=np.int64)
        self._r = np.zeros(capacity)
        self._terminal = np.zeros(capacity, dtype=bool)
        self._next = 0  # slot the next push writes to
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def _order(self) -> np.ndarray:
        start = (self._next - self._size) % self.capacity
        return (start + np.arange(self._size)) % self.capacity

    def push(self, t: Transition) -> None:
        if t.layout_version != self.layout_version:
            raise LayoutMismatchError(
                f"transition layout v{t.layout_version} != memory layout v{self.layout_version}")
        i = self._next
        self._z[i] = t.z
        self._z_next[i] = t.z_next
        self._a[i] = t.a
        self._r[i] = t.r
        self._terminal[i] = t.terminal
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _batch(self, slots: np.ndarray) -> Batch:
        return Batch(self._z[slots].copy(), self._a[slots].copy(), self._r[slots].copy(),
                     self._z_next[slots].copy(), self._terminal[slots].copy())

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if batch_size > self._size:
            raise InsufficientDataError(f"need {batch_size} transitions, have {self._size}")
        picks = rng.choice(self._size, size=batch_size, replace=False)
        return self._batch(self._order()[picks])

    def __iter__(self):
        for i in self._order():
            yield Transition(self._z[i].copy(), int(self._a[i]), float(self._r[i]),
                             self._z_next[i].copy(), bool(self._terminal[i]), self.layout_version)


def push(mem: ReplayMemory, t: Transition) -> None:
    mem.push(t)


def sample_minibatch(mem: ReplayMemory, batch_size: int, rng: np.random.Generator) -> Batch:
    return mem.sample(batch_size, rng)


def td_target(t: Transition, target_net: QNetwork, gamma: float) -> float:
    if t.terminal:
        return float(t.r)
    return float(t.r + gamma * np.max(target_net.forward(t.z_next)))


def td_targets(batch: Batch, target_net: QNetwork, gamma: float) -> np.ndarray:
    bootstrap = np.max(target_net.forward(batch.z_next), axis=1)
    return batch.r + np.where(batch.terminal, 0.0, gamma * bootstrap)


def loss_and_grads(net: QNetwork, z: np.ndarray, actions: np.ndarray, targets: np.ndarray):
    """Mean squared TD error on the taken actions and its exact gradient.

    Returns ``(loss, grads)`` with ``grads`` ordered like ``net.parameters()``.
    """
    acts = net.activations(z)
    q = acts[-1]
    n = len(actions)
    rows = np.arange(n)
    err = q[rows, actions] - targets
    loss = float(np.mean(err ** 2))

    delta = np.zeros_like(q)
    delta[rows, actions] = 2.0 * err / n
    grads_w, grads_b = [], []
    for i in range(len(net.weights) - 1, -1, -1):
        grads_w.append(acts[i].T @ delta)
        grads_b.append(delta.sum(axis=0))
        if i:
            delta = (delta @ net.weights[i].T) * (acts[i] > 0.0)
    grads = []
    for gw, gb in zip(reversed(grads_w), reversed(grads_b)):
        grads += [gw, gb]
    return loss, grads


@dataclass
class TrainState:
    online: QNetwork
    target: QNetwork
    learning_rate: float = 1e-3
    gamma: float = 0.99
    batch_size: int = 64
    target_sync_period: int = 400
    grad_clip: float | None = 10.0
    optimizer: str = "sgd"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    steps: int = field(default=0)
    # Adam first/second moment estimates, one per parameter array
    moments: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.online.layer_dims != self.target.layer_dims:
            raise ValueError("online and target networks must share layer dims")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.optimizer == "adam" and not self.moments:
            self.moments = [np.zeros_like(p) for p in self.online.parameters() for _ in (0, 1)]

    @classmethod
    def create(cls, layer_dims, rng: np.random.Generator, **kwargs) -> "TrainState":
        online = QNetwork.initialise(layer_dims, rng)
        return cls(online=online, target=online.copy(), **kwargs)


def sync_target(s: TrainState) -> None:
    s.target = s.online.copy()


def train_step(s: TrainState, batch: Batch, episode: int | None = None) -> float:
    """One SGD step on the batch; returns the loss before the step.

    The target network only supplies the bootstrap values and is synced to
    the online network every ``target_sync_period`` steps.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    # non-finite values are caught below and reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        targets = td_targets(batch, s.target, s.gamma)
        loss, grads = loss_and_grads(s.online, batch.z, batch.a, targets)
        norm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
    if not (np.isfinite(loss) and np.isfinite(norm)):
        raise DivergenceError(f"non-finite loss ({loss}) or gradient norm ({norm})", episode)
    if s.grad_clip is not None and norm > s.grad_clip:
        grads = [g * (s.grad_clip / norm) for g in grads]
    s.steps += 1
    if s.optimizer == "sgd":
        for p, g in zip(s.online.parameters(), grads):
            p -= s.learning_rate * g
    else:
        b1, b2 = s.adam_betas
        lr = s.learning_rate * np.sqrt(1.0 - b2 ** s.steps) / (1.0 - b1 ** s.steps)
        for i, (p, g) in enumerate(zip(s.online.parameters(), grads)):
            m, v = s.moments[2 * i], s.moments[2 * i + 1]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * m / (np.sqrt(v) + s.adam_eps)
    if s.steps % s.target_sync_period == 0:
        sync_target(s)
    return loss


def save_checkpoint(net: QNetwork, path: str | Path) -> None:
    """Binary layout (little endian)::

        b"V2XQ", u32 format version, u32 observation layout version,
        u32 layer count L, (L + 1) x u32 layer dims,
        then per layer: weights (in x out, row-major) and bias as float64.
    """
    dims = net.layer_dims
    parts = [struct.pack("<4sIII", CHECKPOINT_MAGIC, CHECKPOINT_FORMAT_VERSION,
                         net.layout_version, len(net.weights)),
             struct.pack(f"<{len(dims)}I", *dims)]
    for w, b in zip(net.weights, net.biases):
        parts.append(w.astype("<f8").tobytes(order="C"))
        parts.append(b.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path, expected_layout: int = OBS_LAYOUT_VERSION) -> QNetwork:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read ({exc.strerror})") from None
    head = struct.calcsize("<4sIII")
    if len(data) < head:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, layout, n_layers = struct.unpack_from("<4sIII", data)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    if layout != expected_layout:
        raise CheckpointError(f"{path}: observation layout v{layout}, expected v{expected_layout}")
    if n_layers < 1:
        raise CheckpointError(f"{path}: no layers")
    offset = head
    if len(data) < offset + 4 * (n_layers + 1):
        raise CheckpointError(f"{path}: truncated layer dims")
    dims = struct.unpack_from(f"<{n_layers + 1}I", data, offset)
    offset += 4 * (n_layers + 1)
    expected = offset + 8 * sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))
    if len(data) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes, found {len(data)}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=offset)
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(w.reshape(fan_in, fan_out).astype(np.float64))
        biases.append(b.astype(np.float64))
    return QNetwork(weights, biases, layout_version=layout)
