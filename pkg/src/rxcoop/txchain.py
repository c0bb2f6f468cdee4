"""Per-user transmit chain: info bits to the pilot-multiplexed symbol frame."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .convcode import DEFAULT_GENERATORS, ConvolutionalCode, encode
from .seeds import frame_rng, mix64

__all__ = [
    "QPSK_ALPHABET",
    "FrameConfig",
    "TransmittedFrame",
    "encode",
    "interleave",
    "deinterleave",
    "map_qpsk",
    "make_pilots",
    "assemble_frame",
]

# Gray-mapped QPSK, indexed by (b0, b1) in {00, 01, 10, 11}:
# s = ((1 - 2*b0) + 1j*(1 - 2*b1)) / sqrt(2).
QPSK_ALPHABET = np.array(
    [1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j], dtype=np.complex128
) / np.sqrt(2.0)
QPSK_ALPHABET.setflags(write=False)


def _pilot_positions(n_total: int, n_pilots: int) -> np.ndarray:
    # Evenly spaced across the band: j_m = round((m - 0.5) * total / L),
    # half-up rounding, collisions pushed to the next free index.
    taken: list[int] = []
    for m in range(1, n_pilots + 1):
        j = int(np.floor((m - 0.5) * n_total / n_pilots + 0.5))
        j = min(max(j, 1), n_total)
        while j in taken:
            j += 1
        if j > n_total:
            raise ValueError("cannot place pilots: band too small")
        taken.append(j)
    return np.array(taken, dtype=np.int64) - 1  # 0-based


@dataclass(frozen=True)
class FrameConfig:
    """Static frame layout shared by all users and receivers."""

    n_users: int = 2
    info_bits: int = 50
    bits_per_symbol: int = 2
    pilot_count: int = 16
    generators: tuple[int, ...] = DEFAULT_GENERATORS
    interleaver_seed: int = 0x1CE5EED
    pilot_seed: int = 0x9107F00D

    def __post_init__(self):
        if self.n_users < 1 or self.info_bits < 1 or self.pilot_count < 1:
            raise ValueError("n_users, info_bits and pilot_count must be positive")
        if self.bits_per_symbol != 2:
            raise ValueError("only QPSK (2 bits/symbol) is supported")
        if self.coded_bits % self.bits_per_symbol:
            raise ValueError("coded length must divide evenly into symbols")

    @property
    def code(self) -> ConvolutionalCode:
        return ConvolutionalCode(self.generators)

    @property
    def coded_bits(self) -> int:
        return self.code.coded_length(self.info_bits)

    @property
    def data_symbols(self) -> int:
        return self.coded_bits // self.bits_per_symbol

    @property
    def frame_len(self) -> int:
        return self.data_symbols + self.pilot_count

    @property
    def pilot_indices(self) -> np.ndarray:
        return _frame_indices(self.frame_len, self.pilot_count)[0]

    @property
    def data_indices(self) -> np.ndarray:
        return _frame_indices(self.frame_len, self.pilot_count)[1]

    def interleaver_seed_for(self, user: int) -> int:
        return mix64(self.interleaver_seed, user)


@lru_cache(maxsize=32)
def _frame_indices(frame_len: int, pilot_count: int):
    pilots = _pilot_positions(frame_len, pilot_count)
    mask = np.ones(frame_len, dtype=bool)
    mask[pilots] = False
    data = np.flatnonzero(mask)
    pilots.setflags(write=False)
    data.setflags(write=False)
    return pilots, data


@dataclass(frozen=True)
class TransmittedFrame:
    """One frame per user: info bits, coded bits and the symbol vector."""

    u: tuple[np.ndarray, ...]
    c: tuple[np.ndarray, ...]
    x: tuple[np.ndarray, ...]

    @property
    def n_users(self) -> int:
        return len(self.u)


@lru_cache(maxsize=64)
def _permutation(seed: int, length: int) -> np.ndarray:
    perm = frame_rng(seed, 0).permutation(length)
    perm.setflags(write=False)
    return perm


def interleave(c: np.ndarray, seed: int) -> np.ndarray:
    """Apply the seed-keyed pseudo-random permutation."""
    c = np.asarray(c)
    return c[_permutation(seed, c.shape[0])]


def deinterleave(d: np.ndarray, seed: int) -> np.ndarray:
    """Invert :func:`interleave` for the same seed."""
    d = np.asarray(d)
    out = np.empty_like(d)
    out[_permutation(seed, d.shape[0])] = d
    return out


def map_qpsk(bits: np.ndarray) -> np.ndarray:
    """Gray-map a bit vector, two bits per symbol, to unit-energy QPSK."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.ndim != 1 or bits.shape[0] % 2:
        raise ValueError("need an even-length bit vector")
    idx = 2 * bits[0::2] + bits[1::2]
    return QPSK_ALPHABET[idx]


def make_pilots(seed: int, length: int, user: int = 0) -> np.ndarray:
    """Deterministic per-user QPSK pilot sequence.

    Every receiver regenerates all users' pilots from the shared seed,
    so the sequence depends only on (seed, user).
    """
    if length < 1:
        raise ValueError("need at least one pilot")
    rng = frame_rng(mix64(seed, user), 0)
    return QPSK_ALPHABET[rng.integers(0, 4, size=length)]


def assemble_frame(u_per_user, config: FrameConfig) -> TransmittedFrame:
    """Encode, interleave, map and pilot-multiplex every user's bits."""
    if len(u_per_user) != config.n_users:
        raise ValueError("one info-bit vector per user required")
    us, cs, xs = [], [], []
    pilots_at = config.pilot_indices
    data_at = config.data_indices
    for k, u in enumerate(u_per_user):
        u = np.asarray(u, dtype=np.int64)
        if u.shape != (config.info_bits,):
            raise ValueError(f"user {k}: expected {config.info_bits} info bits")
        c = interleave(encode(u, config.generators), config.interleaver_seed_for(k))
        x = np.empty(config.frame_len, dtype=np.complex128)
        x[data_at] = map_qpsk(c)
        x[pilots_at] = make_pilots(config.pilot_seed, config.pilot_count, user=k)
        for arr in (u, c, x):
            arr.setflags(write=False)
        us.append(u)
        cs.append(c)
        xs.append(x)
    return TransmittedFrame(u=tuple(us), c=tuple(cs), x=tuple(xs))
