"""SINR, Shannon rates and payload bookkeeping under V2V reuse of V2I bands.

V2I link ``y`` is an uplink to the base station on its own band ``y``. A V2V
link that picks band ``y`` interferes with that uplink at the base station,
and the uplink plus every other V2V link on ``y`` interferes at its receiver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import EnvState
from .config import ScenarioConfig

POWER_LEVELS_DBM = (23.0, 10.0, 5.0, -100.0)
# the lowest power level is a sentinel for "not transmitting"
SILENT_DBM = -100.0


def dbm_to_watt(p):
    """dBm to watts, with the -100 dBm sentinel mapped to exactly 0 W."""
    p = np.asarray(p, dtype=float)
    watts = np.where(p == SILENT_DBM, 0.0, 10.0 ** (p / 10.0) * 1e-3)
    return float(watts) if watts.ndim == 0 else watts


def watt_to_dbm(w):
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore"):
        out = 10.0 * np.log10(w * 1e3)
    return float(out) if out.ndim == 0 else out


@dataclass
class TransmitDecision:
    bands: np.ndarray  # (X,) int
    power_dbm: np.ndarray  # (X,)

    def __post_init__(self):
        self.bands = np.asarray(self.bands, dtype=np.int64)
        self.power_dbm = np.asarray(self.power_dbm, dtype=float)

    @property
    def power_watt(self) -> np.ndarray:
        return np.atleast_1d(dbm_to_watt(self.power_dbm))


@dataclass
class LinkRates:
    v2i_rate: np.ndarray  # (Y,) bits/s
    v2v_rate: np.ndarray  # (X,) bits/s


@dataclass
class PayloadState:
    remaining: np.ndarray  # (X,) bytes, real-valued
    time_left: float
    delivered: np.ndarray  # (X,) bool
    payload_bytes: float
    time_budget: float

    @classmethod
    def fresh(cls, n_links: int, payload_bytes: float, time_budget: float) -> "PayloadState":
        return cls(
            remaining=np.full(n_links, float(payload_bytes)),
            time_left=float(time_budget),
            delivered=np.zeros(n_links, dtype=bool),
            payload_bytes=float(payload_bytes),
            time_budget=float(time_budget),
        )

    def copy(self) -> "PayloadState":
        return PayloadState(self.remaining.copy(), self.time_left, self.delivered.copy(),
                            self.payload_bytes, self.time_budget)


def noise_watt(cfg: ScenarioConfig) -> float:
    # plain conversion: the noise floor is never the transmit-off sentinel
    return 10.0 ** (cfg.noise_power / 10.0) * 1e-3


def v2i_sinr(y: int, decision: TransmitDecision, env: EnvState, cfg: ScenarioConfig,
             active: np.ndarray | None = None) -> float:
    g = env.fading.gains()
    signal = dbm_to_watt(cfg.v2i_tx_power) * g["v2i_bs"][y, y]
    interference = noise_watt(cfg)
    p = decision.power_watt
    for x in range(len(decision.bands)):
        if decision.bands[x] == y and (active is None or active[x]):
            interference += p[x] * g["v2v_bs"][x, y]
    return signal / interference


def v2v_sinr(x: int, decision: TransmitDecision, env: EnvState, cfg: ScenarioConfig,
             active: np.ndarray | None = None) -> float:
    p = decision.power_watt
    if p[x] == 0.0 or (active is not None and not active[x]):
        return 0.0
    g = env.fading.gains()
    y = decision.bands[x]
    signal = p[x] * g["v2v"][x, x, y]
    interference = noise_watt(cfg) + dbm_to_watt(cfg.v2i_tx_power) * g["v2i_v2v"][y, x, y]
    for k in range(len(decision.bands)):
        if k != x and decision.bands[k] == y and (active is None or active[k]):
            interference += p[k] * g["v2v"][k, x, y]
    return signal / interference


def link_capacity(bandwidth, sinr):
    """Shannon capacity ``W log2(1 + sinr)`` in bits/s."""
    return bandwidth * np.log2(1.0 + np.asarray(sinr, dtype=float))


def compute_link_state(decision: TransmitDecision, env: EnvState, cfg: ScenarioConfig,
                       active: np.ndarray | None = None):
    """Vectorised SINRs for all links plus the interference seen at V2V receivers.

    Returns ``(v2i_sinr (Y,), v2v_sinr (X,), interference_watt (X, Y))`` where
    the last array is noise plus every transmission received on each band at
    each V2V receiver, excluding the receiver's own transmitter.
    """
    g = env.fading.gains()
    n_v2v = len(decision.bands)
    n_bands = cfg.num_v2i_links
    p = decision.power_watt.copy()
    if active is not None:
        p = np.where(active, p, 0.0)
    noise = noise_watt(cfg)
    p_v2i = dbm_to_watt(cfg.v2i_tx_power)
    on_band = np.zeros((n_v2v, n_bands))
    on_band[np.arange(n_v2v), decision.bands] = p  # (X, Y) transmit power per band

    bands = np.arange(n_bands)
    v2i_signal = p_v2i * g["v2i_bs"][bands, bands]
    v2i_interf = noise + np.einsum("xy,xy->y", on_band, g["v2v_bs"])
    v2i = v2i_signal / v2i_interf

    # received power at each V2V rx, per band, from every V2V tx
    rx_from_v2v = np.einsum("ky,kxy->kxy", on_band, g["v2v"])  # (tx k, rx x, band)
    from_v2i = p_v2i * g["v2i_v2v"][bands, :, bands].T  # (rx x, band)
    idx = np.arange(n_v2v)
    own = rx_from_v2v[idx, idx, :].copy()  # (X, Y)
    rx_from_v2v[idx, idx, :] = 0.0
    interference = noise + from_v2i + rx_from_v2v.sum(axis=0)
    signal = own[idx, decision.bands]
    v2v = np.where(signal > 0.0, signal / interference[idx, decision.bands], 0.0)
    if cfg.sinr_cap_db is not None:
        cap = 10.0 ** (cfg.sinr_cap_db / 10.0)
        v2i = np.minimum(v2i, cap)
        v2v = np.minimum(v2v, cap)
    return v2i, v2v, interference


def compute_rates(decision: TransmitDecision, env: EnvState, cfg: ScenarioConfig,
                  active: np.ndarray | None = None) -> tuple[LinkRates, np.ndarray]:
    v2i, v2v, interference = compute_link_state(decision, env, cfg, active)
    rates = LinkRates(link_capacity(cfg.bandwidth, v2i), link_capacity(cfg.bandwidth, v2v))
    return rates, interference


def advance_payload(p: PayloadState, rates: LinkRates, dt: float) -> PayloadState:
    """Drain ``rate * dt / 8`` bytes from every undelivered link, clamped at zero."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    p.remaining = np.maximum(0.0, p.remaining - rates.v2v_rate * dt / 8.0)
    p.time_left = max(0.0, p.time_left - dt)
    p.delivered = p.delivered | (p.remaining == 0.0)
    return p
