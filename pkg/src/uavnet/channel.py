"""UAV-to-ground and UAV-to-UAV link gains and Shannon capacities.

Path loss for UtG links follows the urban-macro aerial-UE table (valid for
UAV heights in (22.5, 300] m); UtU links use free-space (Friis) loss.
Small-scale fading is Rician (15 dB K factor by default) under LoS and
Rayleigh under NLoS, normalized to unit mean power. LoS/NLoS is decided
geometrically by the world model, never probabilistically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

THERMAL_NOISE_DBM_PER_HZ = -174.0
# 20*log10(4*pi/c) for Friis loss with d in meters and f in Hz
FREE_SPACE_CONST_DB = -147.55
UTG_H_MIN_M = 22.5
UTG_H_MAX_M = 300.0


class AltitudeOutOfModelError(ValueError):
    """UAV altitude outside the (22.5, 300] m regime of the UtG path-loss table."""


def noise_power_dbm(bandwidth_hz: float, noise_figure_db: float = 0.0) -> float:
    """Thermal noise power over the given bandwidth."""
    return THERMAL_NOISE_DBM_PER_HZ + 10.0 * math.log10(bandwidth_hz) + noise_figure_db


@dataclass(frozen=True)
class ChannelParams:
    fc_ghz: float = 2.0
    bandwidth_hz: float = 10e6
    noise_power_dbm: float = -104.0  # -174 dBm/Hz + 10*log10(10 MHz)
    rician_k_db: float = 15.0

    def __post_init__(self):
        if self.fc_ghz <= 0:
            raise ValueError(f"fc_ghz must be positive, got {self.fc_ghz}")
        if self.bandwidth_hz <= 0:
            raise ValueError(f"bandwidth_hz must be positive, got {self.bandwidth_hz}")


@dataclass
class LinkSample:
    """One evaluated radio link."""

    tx_id: int
    rx_id: int
    d3d_m: float
    los: bool
    path_loss_db: float
    small_scale_power_gain: float
    channel_gain_linear: float
    capacity_bps: float

    @staticmethod
    def build(tx_id, rx_id, d3d_m, los, path_loss_db, ss_gain, p_tx_dbm, params: ChannelParams):
        gain = 10.0 ** (-path_loss_db / 10.0) * ss_gain
        cap = link_capacity_bps(p_tx_dbm, path_loss_db, ss_gain,
                                params.noise_power_dbm, params.bandwidth_hz)
        return LinkSample(tx_id, rx_id, d3d_m, los, path_loss_db, ss_gain, gain, cap)


def utg_path_loss_db(d3d_m: float, h_uav_m: float, fc_ghz: float, los: bool) -> float:
    """UtG path loss in dB for a UAV at h_uav_m serving a ground user at 3-D distance d3d_m.

    LoS:  28.0 + 22*log10(d3d) + 20*log10(fc_ghz)
    NLoS: -17.5 + (46 - 7*log10(h))*log10(d3d) + 20*log10(40*pi*fc/3),
          floored at the LoS value (the NLoS fit crosses below LoS under ~12 m).
    """
    if d3d_m <= 0:
        raise ValueError(f"d3d_m must be positive, got {d3d_m}")
    if not (UTG_H_MIN_M < h_uav_m <= UTG_H_MAX_M):
        raise AltitudeOutOfModelError(
            f"h_uav_m={h_uav_m} outside aerial regime ({UTG_H_MIN_M}, {UTG_H_MAX_M}] m")
    pl_los = 28.0 + 22.0 * math.log10(d3d_m) + 20.0 * math.log10(fc_ghz)
    if los:
        return pl_los
    pl_nlos = (-17.5 + (46.0 - 7.0 * math.log10(h_uav_m)) * math.log10(d3d_m)
               + 20.0 * math.log10(40.0 * math.pi * fc_ghz / 3.0))
    return max(pl_nlos, pl_los)


def utu_path_loss_db(d_m: float, fc_ghz: float) -> float:
    """Free-space loss between two UAVs: 20*log10(d) + 20*log10(f_hz) - 147.55."""
    if d_m <= 0:
        raise ValueError(f"d_m must be positive, got {d_m}")
    return 20.0 * math.log10(d_m) + 20.0 * math.log10(fc_ghz * 1e9) + FREE_SPACE_CONST_DB


def small_scale_power_gain(los: bool, rician_k_db: float, rng: np.random.Generator,
                           size=None):
    """Draw |h|^2 with E[|h|^2] = 1: Rician(K) under LoS, Rayleigh under NLoS.

    Returns a scalar when size is None, else an ndarray of the given shape.
    """
    if los:
        k = 10.0 ** (rician_k_db / 10.0)
        n = 1 if size is None else size
        # h = sqrt(K/(K+1)) e^{j phi} + sqrt(1/(K+1)) CN(0,1)
        phase = rng.uniform(0.0, 2.0 * math.pi, n)
        scatter = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
        h = math.sqrt(k / (k + 1.0)) * np.exp(1j * phase) + math.sqrt(1.0 / (k + 1.0)) * scatter
        gain = np.abs(h) ** 2
    else:
        gain = rng.exponential(1.0, size=1 if size is None else size)
    if size is None:
        return float(gain[0] if np.ndim(gain) else gain)
    return gain


def link_capacity_bps(p_tx_dbm: float, path_loss_db: float, ss_gain,
                      noise_dbm: float, bandwidth_hz: float):
    """Shannon rate B*log2(1 + SNR) with SNR from the dB link budget.

    Accepts scalar or array ss_gain; zero gain gives zero capacity.
    """
    if bandwidth_hz <= 0:
        raise ValueError(f"bandwidth_hz must be positive, got {bandwidth_hz}")
    ss = np.asarray(ss_gain, dtype=float)
    if np.any(ss < 0):
        raise ValueError("small-scale gain must be nonnegative")
    with np.errstate(divide="ignore"):
        gain_db = 10.0 * np.log10(ss, out=np.full(ss.shape, -np.inf), where=ss > 0)
    snr_db = p_tx_dbm - path_loss_db + gain_db - noise_dbm
    snr = 10.0 ** (snr_db / 10.0)
    cap = bandwidth_hz * np.log2(1.0 + snr)
    if np.isscalar(ss_gain):
        return float(cap)
    return cap


def capacity_from_gain_db(p_tx_dbm: float, gain_db, noise_dbm: float, bandwidth_hz: float):
    """Shannon rate from a total channel gain in dB (path loss + fading combined)."""
    snr = 10.0 ** ((p_tx_dbm + np.asarray(gain_db, dtype=float) - noise_dbm) / 10.0)
    cap = bandwidth_hz * np.log2(1.0 + snr)
    if np.isscalar(gain_db):
        return float(cap)
    return cap
