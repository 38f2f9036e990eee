"""Agent-facing MDP pieces: observation layout, (band, power) action codec, reward."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import EnvState
from .comm import POWER_LEVELS_DBM, LinkRates, PayloadState, TransmitDecision
from .config import RewardWeights

# bump whenever the observation layout or normalisation changes
OBS_LAYOUT_VERSION = 1
FEATURES_PER_BAND = 4
N_POWER_LEVELS = len(POWER_LEVELS_DBM)


class ActionError(ValueError):
    pass


@dataclass(frozen=True)
class ObservationNorm:
    loss_shift_db: float = -80.0
    interference_shift_db: float = 114.0
    scale: float = 1.0 / 60.0
    clamp: float = 5.0


def obs_dim(n_bands: int) -> int:
    return FEATURES_PER_BAND * n_bands + 2


def n_actions(n_bands: int) -> int:
    return N_POWER_LEVELS * n_bands


def encode_action(band: int, power_idx: int, n_bands: int) -> int:
    if not (0 <= band < n_bands and 0 <= power_idx < N_POWER_LEVELS):
        raise ActionError(f"no action for band={band}, power_idx={power_idx} with {n_bands} bands")
    return band * N_POWER_LEVELS + power_idx


def decode_action(idx: int, n_bands: int) -> tuple[int, float]:
    """Action index -> (band, transmit power in dBm)."""
    if not 0 <= idx < n_actions(n_bands):
        raise ActionError(f"action index {idx} outside [0, {n_actions(n_bands)})")
    band, power_idx = divmod(int(idx), N_POWER_LEVELS)
    return band, POWER_LEVELS_DBM[power_idx]


def decode_actions(actions, n_bands: int) -> TransmitDecision:
    pairs = [decode_action(int(a), n_bands) for a in actions]
    return TransmitDecision([b for b, _ in pairs], [p for _, p in pairs])


def _normalise(values_db: np.ndarray, shift: float, norm: ObservationNorm) -> np.ndarray:
    out = (values_db + shift) * norm.scale
    return np.clip(np.nan_to_num(out, nan=norm.clamp, posinf=norm.clamp, neginf=-norm.clamp),
                   -norm.clamp, norm.clamp)


def build_observation(env: EnvState, x: int, payload: PayloadState, prev_interf_dbm,
                      norm: ObservationNorm = ObservationNorm()) -> np.ndarray:
    """Observation of V2V agent `x`, length ``4Y + 2``.

    For each band ``y`` (slot ``4y + k``): k=0 own link gain, k=1 own tx to
    base station gain, k=2 band owner's V2I tx to own rx gain (all as
    attenuation in dB), k=3 interference power measured at own rx on the
    previous step (dBm). The last two slots are the remaining payload and
    remaining time fractions.
    """
    g = env.fading.gains()
    n_bands = env.cfg.num_v2i_links
    bands = np.arange(n_bands)
    with np.errstate(divide="ignore"):
        loss = -10.0 * np.log10(np.stack([
            g["v2v"][x, x, :],
            g["v2v_bs"][x, :],
            g["v2i_v2v"][bands, x, bands],
        ]))
    feats = np.empty((n_bands, FEATURES_PER_BAND))
    feats[:, :3] = _normalise(loss, norm.loss_shift_db, norm).T
    feats[:, 3] = _normalise(np.asarray(prev_interf_dbm, dtype=float), norm.interference_shift_db, norm)
    tail = [payload.remaining[x] / payload.payload_bytes, payload.time_left / payload.time_budget]
    return np.concatenate([feats.ravel(), np.clip(tail, 0.0, 1.0)])


def compute_reward(rates: LinkRates, payload: PayloadState, w: RewardWeights, bandwidth: float) -> float:
    """Weighted V2I sum spectral efficiency plus per-link V2V delivery term.

    An undelivered V2V link contributes its spectral efficiency; a delivered
    one contributes the constant bonus ``beta``.
    """
    v2i = np.sum(rates.v2i_rate) / bandwidth
    v2v = np.where(payload.remaining > 0.0, rates.v2v_rate / bandwidth, w.beta)
    return float(w.lambda_c * v2i + w.lambda_p * np.sum(v2v))
