"""Uplink wireless model: indoor-factory NLoS path loss, Rayleigh block fading,
SNR, Shannon capacity, analytic outage, and the per-slot transmission gate.

All functions are pure; fading draws come from an explicit numpy Generator so
devices and blocks can be simulated in parallel with independent streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError

# Default InF-SH NLoS coefficients: PL_dB = 32.4 + 23 log10(d_m) + 20 log10(f_GHz)
PATHLOSS_CONST_DB = 32.4
PATHLOSS_DIST_COEF = 23.0
PATHLOSS_FREQ_COEF = 20.0


def pathloss_inf_sh_nlos(
    distance: float,
    carrier_freq: float,
    const_db: float = PATHLOSS_CONST_DB,
    dist_coef: float = PATHLOSS_DIST_COEF,
    freq_coef: float = PATHLOSS_FREQ_COEF,
) -> float:
    """NLoS path loss in dB at ``distance`` meters and ``carrier_freq`` GHz."""
    if distance < 1.0:
        raise ValueError("path-loss model requires distance >= 1 m")
    return const_db + dist_coef * math.log10(distance) + freq_coef * math.log10(carrier_freq)


@dataclass(frozen=True)
class LinkBudget:
    tx_power: float  # W
    noise_power: float  # W, total in-band noise
    carrier_freq: float  # GHz
    distance: float  # m
    bandwidth: float  # Hz
    pathloss_db: Optional[float] = None  # derived from distance/carrier when omitted

    def __post_init__(self):
        for name in ("tx_power", "noise_power", "carrier_freq", "distance", "bandwidth"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"LinkBudget.{name} must be positive")
        if self.pathloss_db is None:
            object.__setattr__(
                self, "pathloss_db", pathloss_inf_sh_nlos(self.distance, self.carrier_freq)
            )
        if self.pathloss_db < 0:
            raise ConfigurationError("pathloss_db must be >= 0")


@dataclass(frozen=True)
class FadingDraw:
    gain_sq: float  # |H|^2, exponential with unit mean under Rayleigh fading
    block_index: int = 0

    def __post_init__(self):
        if self.gain_sq < 0:
            raise ConfigurationError("gain_sq must be >= 0")


@dataclass(frozen=True)
class TransmissionOutcome:
    success: bool
    achieved_rate: float  # bit/s
    required_rate: float  # bit/s


def sample_fading(rng: np.random.Generator, block_index: int = 0) -> FadingDraw:
    """Squared magnitude of a unit-variance complex Gaussian: Exponential(mean 1)."""
    return FadingDraw(float(rng.standard_exponential()), block_index)


def snr(budget: LinkBudget, fade: FadingDraw) -> float:
    return 10.0 ** (-budget.pathloss_db / 10.0) * budget.tx_power * fade.gain_sq / budget.noise_power


def capacity(gamma: float, bandwidth: float) -> float:
    """Shannon rate W log2(1 + gamma) in bit/s."""
    if gamma < 0:
        raise ValueError("SNR must be >= 0")
    return bandwidth * math.log2(1.0 + gamma)


def outage_prob_analytic(budget: LinkBudget, required_rate: float) -> float:
    """P(capacity < required_rate) under Exponential(1) fading."""
    if required_rate < 0:
        raise ValueError("required_rate must be >= 0")
    threshold = 2.0 ** (required_rate / budget.bandwidth) - 1.0
    return 1.0 - math.exp(
        -(10.0 ** (budget.pathloss_db / 10.0)) * (budget.noise_power / budget.tx_power) * threshold
    )


def transmit(payload_bits: float, budget: LinkBudget, fade: FadingDraw, slot: float) -> TransmissionOutcome:
    """Success iff the instantaneous capacity covers payload_bits within one slot."""
    if slot <= 0:
        raise ValueError("slot duration must be positive")
    required = payload_bits / slot
    achieved = capacity(snr(budget, fade), budget.bandwidth)
    return TransmissionOutcome(achieved >= required, achieved, required)


def equal_split(total_bandwidth: float, n_devices: int) -> float:
    """Equal-share allocator W_i = W_tot / |I|; the pluggable default."""
    if n_devices < 1:
        raise ValueError("need at least one device")
    return total_bandwidth / n_devices


def embedding_payload_bits(embed_dim: int, bits_per_dim: int = 32) -> int:
    return embed_dim * bits_per_dim


def frame_payload_bits(width: int, height: int, channels: int, frame_stack: int, pixel_bits: int = 8) -> int:
    return width * height * channels * frame_stack * pixel_bits
