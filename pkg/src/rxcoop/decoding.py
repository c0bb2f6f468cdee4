"""Soft demapping, soft mapping and exact forward-backward decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import expit

from .convcode import ConvolutionalCode
from .messages import (
    PROB_FLOOR,
    BitSoftMessage,
    SymbolSoftMessage,
    bit_product_raw,
    BIT_CONFLICTS,
)
from .txchain import QPSK_ALPHABET, deinterleave, interleave

__all__ = [
    "DecoderIO",
    "demap",
    "map_soft",
    "bcjr_decode",
    "decode_pass",
    "hard_decide",
]


@dataclass(frozen=True)
class DecoderIO:
    """Decoder input and outputs for one user's codeword."""

    coded_prior: BitSoftMessage
    coded_extrinsic: BitSoftMessage
    info_app: BitSoftMessage


def _clamped_logs(p1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.clip(p1, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return np.log1p(-p), np.log(p)


def _demap_core(mean: np.ndarray, prec: np.ndarray, prior_p1: np.ndarray) -> np.ndarray:
    d2 = np.abs(mean[:, None] - QPSK_ALPHABET[None, :]) ** 2
    log_lik = -prec[:, None] * d2
    l0b0, l1b0 = _clamped_logs(prior_p1[0::2])
    l0b1, l1b1 = _clamped_logs(prior_p1[1::2])
    # Alphabet index is 2*b0 + b1.
    e1_b0 = np.logaddexp(log_lik[:, 2] + l0b1, log_lik[:, 3] + l1b1)
    e0_b0 = np.logaddexp(log_lik[:, 0] + l0b1, log_lik[:, 1] + l1b1)
    e1_b1 = np.logaddexp(log_lik[:, 1] + l0b0, log_lik[:, 3] + l1b0)
    e0_b1 = np.logaddexp(log_lik[:, 0] + l0b0, log_lik[:, 2] + l1b0)
    out = np.empty(2 * mean.shape[0], dtype=np.float64)
    out[0::2] = expit(e1_b0 - e0_b0)
    out[1::2] = expit(e1_b1 - e0_b1)
    bad = ~np.isfinite(out)
    if np.any(bad):
        out[bad] = 0.5
        BIT_CONFLICTS.bump(int(bad.sum()))
    return out


def demap(obs_mean, obs_prec, bit_priors: BitSoftMessage) -> BitSoftMessage:
    """Per-bit extrinsics of the Gaussian symbol observations.

    Gray QPSK carries the two bits of symbol i at positions (2i, 2i+1);
    each bit's extrinsic sums the observation likelihood over the symbols
    consistent with that bit, weighted by the other bit's prior only.
    """
    mean = np.asarray(obs_mean, dtype=np.complex128)
    prec = np.asarray(obs_prec, dtype=np.float64)
    if len(bit_priors) != 2 * mean.shape[0]:
        raise ValueError("need two prior bits per symbol")
    return BitSoftMessage(_demap_core(mean, prec, bit_priors.p1))


_B0_OF_S = np.array([0.0, 0.0, 1.0, 1.0])
_B1_OF_S = np.array([0.0, 1.0, 0.0, 1.0])


def _map_soft_core(p1: np.ndarray) -> np.ndarray:
    pb0 = p1[0::2][:, None]
    pb1 = p1[1::2][:, None]
    return (pb0 * _B0_OF_S + (1.0 - pb0) * (1.0 - _B0_OF_S)) * (
        pb1 * _B1_OF_S + (1.0 - pb1) * (1.0 - _B1_OF_S)
    )


def map_soft(bit_msgs: BitSoftMessage) -> SymbolSoftMessage:
    """Per-symbol weights over the QPSK alphabet from incoming bit beliefs."""
    p1 = bit_msgs.p1
    if p1.shape[0] % 2:
        raise ValueError("need two bits per symbol")
    return SymbolSoftMessage(_map_soft_core(p1))


@njit(cache=True)
def _lse2(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    if b == -np.inf:
        return a
    return a + np.log1p(np.exp(b - a))


@njit(cache=True)
def _bcjr_kernel(lp0, lp1, next_state, out_bits, n_info, n_tail):
    n_steps = n_info + n_tail
    n_states, _, n_streams = out_bits.shape
    neg_inf = -np.inf

    branch = np.empty((n_steps, n_states, 2))
    for t in range(n_steps):
        base = t * n_streams
        for s in range(n_states):
            for b in range(2):
                m = 0.0
                for g in range(n_streams):
                    if out_bits[s, b, g] == 1:
                        m += lp1[base + g]
                    else:
                        m += lp0[base + g]
                branch[t, s, b] = m

    alpha = np.full((n_steps + 1, n_states), neg_inf)
    alpha[0, 0] = 0.0
    for t in range(n_steps):
        b_top = 2 if t < n_info else 1  # tail steps force input 0
        for s in range(n_states):
            a = alpha[t, s]
            if a == neg_inf:
                continue
            for b in range(b_top):
                ns = next_state[s, b]
                alpha[t + 1, ns] = _lse2(alpha[t + 1, ns], a + branch[t, s, b])
        peak = neg_inf
        for s in range(n_states):
            if alpha[t + 1, s] > peak:
                peak = alpha[t + 1, s]
        for s in range(n_states):
            alpha[t + 1, s] -= peak

    beta = np.full((n_steps + 1, n_states), neg_inf)
    beta[n_steps, 0] = 0.0
    for t in range(n_steps - 1, -1, -1):
        b_top = 2 if t < n_info else 1
        for s in range(n_states):
            acc = neg_inf
            for b in range(b_top):
                nxt = beta[t + 1, next_state[s, b]]
                if nxt == neg_inf:
                    continue
                acc = _lse2(acc, branch[t, s, b] + nxt)
            beta[t, s] = acc
        peak = neg_inf
        for s in range(n_states):
            if beta[t, s] > peak:
                peak = beta[t, s]
        for s in range(n_states):
            beta[t, s] -= peak

    # Branch posteriors accumulate linearly: alpha and beta rows are
    # normalized to peak 0 and branch metrics are log-probabilities, so
    # every exponent is <= 0 and the sums cannot overflow.
    info_p1 = np.empty(n_info)
    post_l0 = np.empty(n_steps * n_streams)
    post_l1 = np.empty(n_steps * n_streams)
    acc = np.empty((n_streams, 2))
    for t in range(n_steps):
        b_top = 2 if t < n_info else 1
        base = t * n_streams
        in1 = 0.0
        in0 = 0.0
        for g in range(n_streams):
            acc[g, 0] = 0.0
            acc[g, 1] = 0.0
        for s in range(n_states):
            a = alpha[t, s]
            if a == neg_inf:
                continue
            for b in range(b_top):
                m = a + branch[t, s, b] + beta[t + 1, next_state[s, b]]
                if m == neg_inf:
                    continue
                p = np.exp(m)
                if b == 1:
                    in1 += p
                else:
                    in0 += p
                for g in range(n_streams):
                    acc[g, out_bits[s, b, g]] += p
        if t < n_info:
            info_p1[t] = in1 / (in1 + in0)
        for g in range(n_streams):
            post_l0[base + g] = np.log(acc[g, 0]) if acc[g, 0] > 0.0 else neg_inf
            post_l1[base + g] = np.log(acc[g, 1]) if acc[g, 1] > 0.0 else neg_inf
    return info_p1, post_l0, post_l1


def bcjr_decode(coded_prior: BitSoftMessage, code: ConvolutionalCode) -> DecoderIO:
    """Exact MAP bit marginals of the terminated code.

    Runs the forward-backward recursion in the log domain over the full
    trellis.  Outputs are the info-bit posteriors and the coded-bit
    extrinsics (posterior with the prior divided out).
    """
    c_len = len(coded_prior)
    n_streams = code.n_streams
    if c_len % n_streams:
        raise ValueError("prior length is not a whole number of trellis steps")
    n_info = c_len // n_streams - code.memory
    if n_info < 1:
        raise ValueError("prior too short for the terminated trellis")
    lp0, lp1 = _clamped_logs(coded_prior.p1)
    next_state, out_bits = code.tables()
    info_p1, post_l0, post_l1 = _bcjr_kernel(
        lp0, lp1, next_state, out_bits, n_info, code.memory
    )
    ext_p1 = expit((post_l1 - lp1) - (post_l0 - lp0))
    bad = ~np.isfinite(ext_p1)
    if np.any(bad):
        ext_p1 = np.where(bad, 0.5, ext_p1)
        BIT_CONFLICTS.bump(int(bad.sum()))
    return DecoderIO(
        coded_prior=coded_prior,
        coded_extrinsic=BitSoftMessage(ext_p1),
        info_app=BitSoftMessage(info_p1),
    )


def decode_pass(state, incoming) -> DecoderIO:
    """One decoding update of a receiver's own user.

    The decoder input combines the own demap extrinsic with the incoming
    peer demap messages (all in the interleaved codeword domain), is
    deinterleaved, decoded, and the outputs stored back interleaved.
    """
    own = state.own_user
    seed = state.config.interleaver_seed_for(own)
    parts = [state.demap_ext[own]] + [np.asarray(m.p1 if hasattr(m, "p1") else m) for m in incoming]
    prior_c, conflict = bit_product_raw(parts)
    if np.any(conflict):
        BIT_CONFLICTS.bump(int(conflict.sum()))
    io = bcjr_decode(BitSoftMessage(deinterleave(prior_c, seed)), state.config.code)
    state.coded_ext = interleave(io.coded_extrinsic.p1, seed)
    state.info_app = io.info_app.p1
    return io


def hard_decide(belief) -> np.ndarray:
    """Hard bit decisions from info-bit beliefs; exact ties decide 0."""
    p1 = belief.p1 if hasattr(belief, "p1") else np.asarray(belief)
    return (p1 > 0.5).astype(np.int64)
