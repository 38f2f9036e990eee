"""Urban vehicular scenario: Manhattan-grid mobility, link topology, fading.

The map is a grid of ``num_blocks_x * num_blocks_y`` blocks whose edges wrap
around (a torus), so vehicles never leave and the number of links stays
fixed. Distances use the minimum-image convention on that torus.

Channel power gain on band ``y`` is ``a * l[y]``: ``a`` is the large-scale
gain (path loss and log-normal shadowing, frequency independent, redrawn once
per episode) and ``l[y]`` is unit-mean exponential small-scale fading power,
redrawn every time step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, ScenarioConfig

NORTH, EAST, SOUTH, WEST = 0, 1, 2, 3
HEADING_NAMES = "NESW"
# unit step (dx, dy) per heading
_DIRECTION = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0]])


class PlacementError(ConfigError):
    """The grid cannot hold the requested lanes or vehicles."""


@dataclass
class Vehicle:
    id: int
    position: tuple[float, float]
    heading: str
    speed: float


@dataclass
class LinkTopology:
    v2i_tx: np.ndarray  # (Y,) vehicle id transmitting on band y
    v2v_tx: np.ndarray  # (X,)
    v2v_rx: np.ndarray  # (X,)

    @property
    def v2v_pairs(self) -> list[tuple[int, int]]:
        return [(int(t), int(r)) for t, r in zip(self.v2v_tx, self.v2v_rx)]


@dataclass
class FadingState:
    """Large-scale gains ``a`` per directed pair and small-scale ``l`` per pair and band.

    Array layouts (linear power gains)::

        v2v      (X, X)      V2V tx i -> V2V rx j (diagonal: own link)
        v2v_bs   (X,)        V2V tx -> base station
        v2i_bs   (Y,)        V2I tx -> base station
        v2i_v2v  (Y, X)      V2I tx y -> V2V rx x

    The ``*_small`` arrays carry an extra trailing band axis of length Y.
    """

    v2v: np.ndarray
    v2v_bs: np.ndarray
    v2i_bs: np.ndarray
    v2i_v2v: np.ndarray
    v2v_small: np.ndarray
    v2v_bs_small: np.ndarray
    v2i_bs_small: np.ndarray
    v2i_v2v_small: np.ndarray

    def gains(self) -> dict[str, np.ndarray]:
        """Composite per-band gains ``a * l`` for every link family."""
        return {
            "v2v": composite_gain(self.v2v[..., None], self.v2v_small),
            "v2v_bs": composite_gain(self.v2v_bs[..., None], self.v2v_bs_small),
            "v2i_bs": composite_gain(self.v2i_bs[..., None], self.v2i_bs_small),
            "v2i_v2v": composite_gain(self.v2i_v2v[..., None], self.v2i_v2v_small),
        }


@dataclass
class EnvState:
    cfg: ScenarioConfig
    positions: np.ndarray  # (N, 2) metres
    headings: np.ndarray  # (N,) int in NESW order
    lanes: np.ndarray  # (N,) lane index within the direction
    speeds: np.ndarray  # (N,)
    topology: LinkTopology
    mobility_rng: np.random.Generator
    shadow_rng: np.random.Generator
    fading_rng: np.random.Generator
    fading: FadingState | None = None
    sim_time: float = 0.0
    large_scale_updates: int = field(default=0, repr=False)
    small_scale_updates: int = field(default=0, repr=False)

    @property
    def vehicles(self) -> list[Vehicle]:
        return [
            Vehicle(i, (float(p[0]), float(p[1])), HEADING_NAMES[h], float(s))
            for i, (p, h, s) in enumerate(zip(self.positions, self.headings, self.speeds))
        ]

    @property
    def bs_position(self) -> np.ndarray:
        return np.asarray(self.cfg.bs_xy, dtype=float)


def composite_gain(a, l):
    """Channel power gain as the product of large- and small-scale gains."""
    return a * l


def path_loss_v2i(d: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """Vehicle-to-base-station path loss in dB, ``d`` in metres."""
    d = np.maximum(np.asarray(d, dtype=float), cfg.min_distance_clip)
    return cfg.v2i_pl_intercept + cfg.v2i_pl_slope * np.log10(d / 1000.0)


def path_loss_v2v(d: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """Vehicle-to-vehicle LOS path loss in dB, ``d`` in metres."""
    d = np.maximum(np.asarray(d, dtype=float), cfg.min_distance_clip)
    f_ghz = cfg.carrier_freq / 1e9
    return cfg.v2v_pl_intercept + cfg.v2v_pl_slope * np.log10(d) + cfg.v2v_pl_freq_coef * np.log10(f_ghz)


def large_scale_gain(path_loss_db, shadow_db):
    return 10.0 ** (-(path_loss_db + shadow_db) / 10.0)


# ---------------------------------------------------------------------------
# grid geometry


def _check_grid(cfg: ScenarioConfig) -> None:
    road_width = 2 * cfg.lanes_per_direction * cfg.lane_width
    if road_width >= min(cfg.block_width, cfg.block_height):
        raise PlacementError(
            f"roads {road_width:g} m wide do not fit blocks of "
            f"{cfg.block_width:g} x {cfg.block_height:g} m"
        )


def lane_offset(heading: int, lane: int, cfg: ScenarioConfig) -> float:
    """Signed offset of a lane from its road centreline (drive on the right)."""
    off = (lane + 0.5) * cfg.lane_width
    return off if heading in (NORTH, WEST) else -off


def _axes(heading: int) -> tuple[int, int]:
    """(along-axis, cross-axis) indices for a heading."""
    return (1, 0) if heading in (NORTH, SOUTH) else (0, 1)


def _spacing(axis: int, cfg: ScenarioConfig) -> float:
    # roads crossing a path along `axis` are spaced one block apart on that axis
    return cfg.block_width if axis == 0 else cfg.block_height


def lane_coordinates(heading: int, cfg: ScenarioConfig) -> np.ndarray:
    """All cross-axis coordinates of lanes carrying traffic in `heading`."""
    _, cross = _axes(heading)
    w, h = cfg.map_size
    length = (w, h)[cross]
    n_roads = cfg.num_blocks_x if cross == 0 else cfg.num_blocks_y
    centres = np.arange(n_roads) * _spacing(cross, cfg)
    offs = [lane_offset(heading, k, cfg) for k in range(cfg.lanes_per_direction)]
    return np.sort(np.mod(centres[:, None] + np.array(offs)[None, :], length).ravel())


def on_lane(state: EnvState, tol: float = 1e-6) -> np.ndarray:
    """Per-vehicle predicate: inside the map and centred on a lane of its heading."""
    cfg = state.cfg
    w, h = cfg.map_size
    ok = np.empty(len(state.headings), dtype=bool)
    for i, (pos, hd) in enumerate(zip(state.positions, state.headings)):
        along, cross = _axes(int(hd))
        inside = 0.0 <= pos[0] < w and 0.0 <= pos[1] < h
        lanes = lane_coordinates(int(hd), cfg)
        length = (w, h)[cross]
        diff = np.abs(lanes - pos[cross])
        diff = np.minimum(diff, length - diff)
        ok[i] = inside and bool(diff.min() <= tol)
    return ok


def torus_distance(p: np.ndarray, q: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """Minimum-image Euclidean distance between broadcastable point arrays."""
    size = np.array(cfg.map_size)
    delta = np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))
    delta = np.minimum(delta, size - delta)
    return np.hypot(delta[..., 0], delta[..., 1])


def _place_vehicles(cfg: ScenarioConfig, n: int, rng: np.random.Generator):
    w, h = cfg.map_size
    vertical_len = cfg.num_blocks_x * h
    horizontal_len = cfg.num_blocks_y * w
    p_vertical = vertical_len / (vertical_len + horizontal_len)
    positions = np.empty((n, 2))
    headings = np.empty(n, dtype=np.int64)
    lanes = np.empty(n, dtype=np.int64)
    for i in range(n):
        vertical = rng.random() < p_vertical
        heading = (NORTH, SOUTH)[rng.integers(2)] if vertical else (EAST, WEST)[rng.integers(2)]
        along, cross = _axes(heading)
        n_roads = cfg.num_blocks_x if cross == 0 else cfg.num_blocks_y
        road = rng.integers(n_roads)
        lane = rng.integers(cfg.lanes_per_direction)
        length_along = (w, h)[along]
        length_cross = (w, h)[cross]
        positions[i, along] = rng.random() * length_along
        centre = road * _spacing(cross, cfg)
        positions[i, cross] = np.mod(centre + lane_offset(heading, lane, cfg), length_cross)
        headings[i] = heading
        lanes[i] = lane
    return positions, headings, lanes


def _pair_links(positions: np.ndarray, cfg: ScenarioConfig) -> LinkTopology:
    n_v2v, n_v2i = cfg.num_v2v_links, cfg.num_v2i_links
    tx = np.arange(n_v2v)
    free = set(range(n_v2v, n_v2v + n_v2v + n_v2i))
    rx = np.empty(n_v2v, dtype=np.int64)
    for x in tx:
        cand = np.array(sorted(free))
        d = torus_distance(positions[x], positions[cand], cfg)
        rx[x] = cand[int(np.argmin(d))]
        free.discard(int(rx[x]))
    return LinkTopology(v2i_tx=np.array(sorted(free), dtype=np.int64), v2v_tx=tx, v2v_rx=rx)


def init_scenario(cfg: ScenarioConfig, seed: int) -> EnvState:
    """Drop ``Y + 2X`` vehicles, pair V2V links by nearest neighbour, draw fading.

    Vehicles ``0..X-1`` are the V2V transmitters; each picks the nearest
    vehicle not yet taken as its receiver. The leftover Y vehicles carry the
    V2I uplinks, V2I link ``y`` owning band ``y``.
    """
    cfg.validate()
    _check_grid(cfg)
    place_ss, mob_ss, shadow_ss, fading_ss = np.random.SeedSequence(seed).spawn(4)
    n = cfg.num_v2i_links + 2 * cfg.num_v2v_links
    positions, headings, lanes = _place_vehicles(cfg, n, np.random.default_rng(place_ss))
    state = EnvState(
        cfg=cfg,
        positions=positions,
        headings=headings,
        lanes=lanes,
        speeds=np.full(n, float(cfg.vehicle_speed)),
        topology=_pair_links(positions, cfg),
        mobility_rng=np.random.default_rng(mob_ss),
        shadow_rng=np.random.default_rng(shadow_ss),
        fading_rng=np.random.default_rng(fading_ss),
    )
    update_large_scale(state)
    update_small_scale(state)
    return state


def refresh_pairing(state: EnvState) -> EnvState:
    """Re-pair every V2V transmitter with its currently nearest free vehicle.

    Transmitter identities are fixed, so agent ``x`` keeps driving link ``x``;
    receivers and the V2I vehicles are reassigned from current positions.
    """
    state.topology = _pair_links(state.positions, state.cfg)
    return state


def _advance_one(state: EnvState, i: int, dist: float) -> None:
    cfg = state.cfg
    size = cfg.map_size
    pos = state.positions[i]
    heading = int(state.headings[i])
    lane = int(state.lanes[i])
    p_left, p_right = cfg.turn_left_prob, cfg.turn_right_prob
    while True:
        along, cross = _axes(heading)
        sign = _DIRECTION[heading, along]
        spacing = _spacing(along, cfg)
        s = pos[along]
        if sign > 0:
            nxt = (np.floor(s / spacing) + 1.0) * spacing
        else:
            nxt = (np.ceil(s / spacing) - 1.0) * spacing
        gap = abs(nxt - s)
        if gap > dist:
            pos[along] = np.mod(s + sign * dist, size[along])
            break
        dist -= gap
        pos[along] = np.mod(nxt, size[along])
        u = state.mobility_rng.random()
        if u < p_left:
            new_heading = (heading - 1) % 4
        elif u < p_left + p_right:
            new_heading = (heading + 1) % 4
        else:
            continue
        # snap onto the crossing road: along-coordinate to the intersection
        # centre of the old road, cross-coordinate onto the new lane
        new_along, new_cross = _axes(new_heading)
        old_road = np.round(pos[cross] / _spacing(cross, cfg)) * _spacing(cross, cfg)
        pos[new_along] = np.mod(old_road, size[new_along])
        pos[new_cross] = np.mod(nxt + lane_offset(new_heading, lane, cfg), size[new_cross])
        heading = new_heading
    state.headings[i] = heading


def step_mobility(state: EnvState, dt: float) -> EnvState:
    """Move every vehicle ``speed * dt`` along its lane, turning at intersections."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return state
    for i in range(len(state.speeds)):
        _advance_one(state, i, float(state.speeds[i] * dt))
    state.sim_time += dt
    return state


def link_distances(state: EnvState) -> dict[str, np.ndarray]:
    topo = state.topology
    pos = state.positions
    bs = state.bs_position
    cfg = state.cfg
    return {
        "v2v": torus_distance(pos[topo.v2v_tx][:, None, :], pos[topo.v2v_rx][None, :, :], cfg),
        "v2v_bs": torus_distance(pos[topo.v2v_tx], bs, cfg),
        "v2i_bs": torus_distance(pos[topo.v2i_tx], bs, cfg),
        "v2i_v2v": torus_distance(pos[topo.v2i_tx][:, None, :], pos[topo.v2v_rx][None, :, :], cfg),
    }


def update_large_scale(state: EnvState) -> EnvState:
    """Redraw path loss and shadowing for every needed directed pair."""
    cfg = state.cfg
    d = link_distances(state)
    rng = state.shadow_rng
    gains = {}
    for name, law, std in (
        ("v2v", path_loss_v2v, cfg.shadow_std_v2v),
        ("v2v_bs", path_loss_v2i, cfg.shadow_std_v2i),
        ("v2i_bs", path_loss_v2i, cfg.shadow_std_v2i),
        ("v2i_v2v", path_loss_v2v, cfg.shadow_std_v2v),
    ):
        shadow = rng.normal(0.0, std, size=d[name].shape)
        gains[name] = large_scale_gain(law(d[name], cfg), shadow)
    if state.fading is None:
        empty = np.empty(0)
        state.fading = FadingState(**gains, v2v_small=empty, v2v_bs_small=empty,
                                   v2i_bs_small=empty, v2i_v2v_small=empty)
    else:
        for name, value in gains.items():
            setattr(state.fading, name, value)
    state.large_scale_updates += 1
    return state


def draw_small_scale(rng: np.random.Generator, shape) -> np.ndarray:
    """Rayleigh-envelope power samples: i.i.d. Exponential(1)."""
    return rng.exponential(1.0, size=shape)


def update_small_scale(state: EnvState) -> EnvState:
    n_bands = state.cfg.num_v2i_links
    fading = state.fading
    rng = state.fading_rng
    for name in ("v2v", "v2v_bs", "v2i_bs", "v2i_v2v"):
        large = getattr(fading, name)
        setattr(fading, name + "_small", draw_small_scale(rng, large.shape + (n_bands,)))
    state.small_scale_updates += 1
    return state
