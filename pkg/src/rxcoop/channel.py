"""Tapped-delay-line fading model and the interference-channel map.

Channels are block-static over one frame and independent across frames
and across (receiver, transmitter) pairs.  The model works directly on
per-subcarrier flat gains; no time-domain waveform is simulated.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "PowerDelayProfile",
    "ChannelRealization",
    "draw_channel",
    "channel_covariance",
    "apply_channel",
    "calibrate_gamma",
]

# Extended Typical Urban tap values (delays ns, powers dB).
_ETU_DELAYS_NS = (0.0, 50.0, 120.0, 200.0, 230.0, 500.0, 1600.0, 2300.0, 5000.0)
_ETU_POWERS_DB = (-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, -3.0, -5.0, -7.0)

DEFAULT_SUBCARRIER_SPACING_HZ = 15e3


@dataclass(frozen=True)
class PowerDelayProfile:
    """Tap delays (seconds) and linear tap powers, normalized to unit sum."""

    delays_s: np.ndarray
    powers: np.ndarray

    def __post_init__(self):
        d = np.array(self.delays_s, dtype=np.float64)
        p = np.array(self.powers, dtype=np.float64)
        if d.ndim != 1 or d.shape != p.shape or d.size == 0:
            raise ValueError("delays and powers must be equal-length nonempty vectors")
        if np.any(d < 0) or np.any(np.diff(d) < 0):
            raise ValueError("delays must be nonnegative and ascending")
        if np.any(p <= 0):
            raise ValueError("powers must be positive")
        p = p / p.sum()
        d.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "delays_s", d)
        object.__setattr__(self, "powers", p)

    @property
    def n_taps(self) -> int:
        return self.delays_s.shape[0]

    @classmethod
    def etu(cls) -> "PowerDelayProfile":
        delays = np.array(_ETU_DELAYS_NS) * 1e-9
        powers = 10.0 ** (np.array(_ETU_POWERS_DB) / 10.0)
        return cls(delays, powers)

    @classmethod
    def single_tap(cls) -> "PowerDelayProfile":
        return cls(np.array([0.0]), np.array([1.0]))

    @classmethod
    def from_file(cls, path) -> "PowerDelayProfile":
        """Read lines of "delay_ns power_db"; blank lines and # comments skipped."""
        delays, powers = [], []
        for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{ln}: expected 'delay_ns power_db'")
            delays.append(float(parts[0]) * 1e-9)
            powers.append(10.0 ** (float(parts[1]) / 10.0))
        return cls(np.array(delays), np.array(powers))


def _steering(pdp: PowerDelayProfile, spacing_hz: float, n: int) -> np.ndarray:
    # Row i is exp(-j 2 pi f_i tau_t) with f_i = i * spacing (0-based index).
    freqs = np.arange(n) * spacing_hz
    return np.exp(-2j * np.pi * freqs[:, None] * pdp.delays_s[None, :])


def draw_channel(
    pdp: PowerDelayProfile, subcarrier_spacing_hz: float, n_subcarriers: int, rng
) -> np.ndarray:
    """One Rayleigh realization of the frequency response on n subcarriers."""
    if n_subcarriers < 1:
        raise ValueError("need at least one subcarrier")
    scale = np.sqrt(pdp.powers / 2.0)
    amps = scale * (rng.standard_normal(pdp.n_taps) + 1j * rng.standard_normal(pdp.n_taps))
    return _steering(pdp, subcarrier_spacing_hz, n_subcarriers) @ amps


def channel_covariance(pdp: PowerDelayProfile, spacing_hz: float, n: int) -> np.ndarray:
    """Subcarrier covariance of the frequency response; unit diagonal."""
    w = _steering(pdp, spacing_hz, n)
    cov = (w * pdp.powers[None, :]) @ w.conj().T
    return 0.5 * (cov + cov.conj().T)


@dataclass(frozen=True)
class ChannelRealization:
    """Per-frame frequency responses h[l, k, :] and noise precisions gamma[l]."""

    h: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=np.complex128)
        g = np.atleast_1d(np.array(self.gamma, dtype=np.float64))
        if h.ndim != 3 or h.shape[0] != h.shape[1]:
            raise ValueError("h must have shape (K, K, n_subcarriers)")
        if g.shape != (h.shape[0],):
            raise ValueError("one noise precision per receiver required")
        if np.any(g <= 0):
            raise ValueError("noise precisions must be positive")
        h.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "gamma", g)

    @property
    def n_receivers(self) -> int:
        return self.h.shape[0]


def apply_channel(frames, real: ChannelRealization, rng) -> list[np.ndarray]:
    """Received vectors y_l = sum_k h[l,k] * x_k + noise, one per receiver.

    Noise is drawn as a unit-variance complex vector scaled by
    gamma^{-1/2}, so runs with equal seeds share noise shapes across
    noise levels.
    """
    xs = frames.x if hasattr(frames, "x") else tuple(frames)
    k_users = len(xs)
    n = xs[0].shape[0]
    if real.h.shape != (k_users, k_users, n):
        raise ValueError("channel dimensions do not match the frames")
    received = []
    for l in range(k_users):
        y = np.zeros(n, dtype=np.complex128)
        for k in range(k_users):
            y += real.h[l, k] * xs[k]
        unit = np.sqrt(0.5) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        received.append(y + unit / np.sqrt(real.gamma[l]))
    return received


def calibrate_gamma(target_snr_db: float, pdp: PowerDelayProfile) -> float:
    """Noise precision that realizes the target mean SNR.

    SNR is gamma * E[||h||^2] / n_subcarriers; with the unit-power profile
    the per-subcarrier mean gain is 1, so gamma = 10^(dB/10).
    """
    if not np.isfinite(target_snr_db):
        raise ValueError("target SNR must be finite")
    return 10.0 ** (target_snr_db / 10.0) / float(pdp.powers.sum())
