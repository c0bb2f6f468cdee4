"""Terminated convolutional encoding and trellis tables.

The default code is the rate-1/3, constraint-length-7 code with octal
generators (133, 171, 165).  Tables produced here drive both the
encoder and the forward-backward decoder.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = ["ConvolutionalCode", "DEFAULT_GENERATORS", "encode"]

DEFAULT_GENERATORS = (0o133, 0o171, 0o165)


def _taps(generator: int, constraint_length: int) -> np.ndarray:
    # MSB is the coefficient of the current input bit.
    bits = [(generator >> (constraint_length - 1 - m)) & 1 for m in range(constraint_length)]
    return np.array(bits, dtype=np.int64)


@dataclass(frozen=True)
class ConvolutionalCode:
    """Feedforward convolutional code defined by its generator polynomials."""

    generators: tuple[int, ...] = DEFAULT_GENERATORS
    constraint_length: int = 7

    def __post_init__(self):
        if not self.generators:
            raise ValueError("need at least one generator")
        top = 1 << self.constraint_length
        if any(not 0 < g < top for g in self.generators):
            raise ValueError("generator does not fit the constraint length")

    @property
    def memory(self) -> int:
        return self.constraint_length - 1

    @property
    def n_streams(self) -> int:
        return len(self.generators)

    @property
    def n_states(self) -> int:
        return 1 << self.memory

    def coded_length(self, n_info: int) -> int:
        return self.n_streams * (n_info + self.memory)

    def tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Trellis tables (next_state[s, b], out_bits[s, b, g]).

        State packs the most recent input at the top bit, so the successor
        of state s under input b is (b << (memory-1)) | (s >> 1).
        """
        return _trellis_tables(self.generators, self.constraint_length)


@lru_cache(maxsize=8)
def _trellis_tables(generators: tuple[int, ...], constraint_length: int):
    mem = constraint_length - 1
    n_states = 1 << mem
    next_state = np.empty((n_states, 2), dtype=np.int64)
    out_bits = np.empty((n_states, 2, len(generators)), dtype=np.int64)
    for s in range(n_states):
        for b in (0, 1):
            reg = (b << mem) | s
            next_state[s, b] = (b << (mem - 1)) | (s >> 1)
            for gi, g in enumerate(generators):
                out_bits[s, b, gi] = bin(reg & g).count("1") & 1
    next_state.setflags(write=False)
    out_bits.setflags(write=False)
    return next_state, out_bits


def encode(u: np.ndarray, generators: tuple[int, ...] = DEFAULT_GENERATORS) -> np.ndarray:
    """Terminated encoding of an info-bit vector.

    The encoder starts and ends in the all-zero state (the full
    convolution implicitly appends the flushing tail), and the per-input
    outputs of the generators are interleaved: output length is
    n_streams * (len(u) + memory).
    """
    code = ConvolutionalCode(tuple(generators))
    u = np.asarray(u, dtype=np.int64)
    if u.ndim != 1:
        raise ValueError("u must be a bit vector")
    streams = [np.convolve(u, _taps(g, code.constraint_length)) % 2 for g in code.generators]
    return np.stack(streams, axis=1).reshape(-1)
