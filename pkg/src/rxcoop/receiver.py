"""Per-receiver state and the mean-field half of the receiver.

Covers channel-weight estimation, noise-precision estimation and soft
symbol detection.  Each operation mutates only the state of its own
receiver, so different receivers can be updated independently between
exchange barriers.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from .channel import PowerDelayProfile, _steering
from .messages import (
    GammaMessage,
    GaussianVectorMessage,
    SymbolSoftMessage,
    gaussian_product,
    gamma_mean,
)
from .txchain import QPSK_ALPHABET, FrameConfig, make_pilots

__all__ = [
    "ChannelPrior",
    "ReceiverState",
    "SymbolObservation",
    "channel_observation",
    "channel_belief",
    "noise_precision_update",
    "symbol_observation",
    "symbol_app",
    "pilot_init",
    "detection_sweep",
    "run_detection",
    "update_channel",
]

# Floor on d_o, relative to the observation count, so a perfect residual
# cannot produce an unbounded precision estimate.
_D_O_FLOOR = 1e-12


class SymbolObservation(NamedTuple):
    """Gaussian symbol likelihoods on the data indices, as mean/precision."""

    mean: np.ndarray
    precision: np.ndarray


class ChannelPrior:
    """Zero-mean Gaussian prior over the frequency response, in tap space.

    The covariance is W diag(p) W^H with one column per tap, so posterior
    solves run in the tap dimension (a handful of taps) instead of the
    subcarrier dimension.  Results coincide with gaussian_product on the
    equivalent full-covariance message.
    """

    def __init__(self, pdp: PowerDelayProfile, subcarrier_spacing_hz: float, n_subcarriers: int):
        self.pdp = pdp
        self.spacing_hz = subcarrier_spacing_hz
        self.n = n_subcarriers
        self._w = _steering(pdp, subcarrier_spacing_hz, n_subcarriers)
        self._w.setflags(write=False)
        self._inv_powers = 1.0 / pdp.powers

    def covariance(self, indices=None) -> np.ndarray:
        w = self._w if indices is None else self._w[indices]
        cov = (w * self.pdp.powers[None, :]) @ w.conj().T
        return 0.5 * (cov + cov.conj().T)

    def message(self, indices=None) -> GaussianVectorMessage:
        cov = self.covariance(indices)
        return GaussianVectorMessage.full(np.zeros(cov.shape[0], dtype=np.complex128), cov)

    def posterior(
        self,
        obs_mean: np.ndarray,
        obs_prec: np.ndarray,
        obs_indices=None,
        eval_indices=None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and marginal variances given diagonal observations.

        Observations live on obs_indices (default: all subcarriers); the
        belief is evaluated on eval_indices (default: all).
        """
        rows = self._w if obs_indices is None else self._w[obs_indices]
        d = np.asarray(obs_prec, dtype=np.float64)
        q = np.diag(self._inv_powers).astype(np.complex128)
        q += (rows.conj().T * d[None, :]) @ rows
        rhs = rows.conj().T @ (d * np.asarray(obs_mean, dtype=np.complex128))
        out_rows = self._w if eval_indices is None else self._w[eval_indices]
        stacked = np.concatenate([rhs[:, None], out_rows.conj().T], axis=1)
        try:
            sol = np.linalg.solve(q, stacked)
        except np.linalg.LinAlgError:
            sol = np.linalg.solve(q + _D_O_FLOOR * np.eye(q.shape[0]), stacked)
        mean = out_rows @ sol[:, 0]
        var = np.einsum("it,ti->i", out_rows, sol[:, 1:]).real
        return mean, np.maximum(var, 0.0)


class ReceiverState:
    """Everything one receiver tracks about one frame.

    Arrays are indexed (user, subcarrier); coded-bit buffers live in the
    interleaved codeword domain.  Exchange buffers keep the most recent
    payloads until the next exchange stage overwrites them.
    """

    def __init__(self, y: np.ndarray, own_user: int, config: FrameConfig, prior: ChannelPrior):
        f = config.frame_len
        k_users = config.n_users
        y = np.asarray(y, dtype=np.complex128)
        if y.shape != (f,):
            raise ValueError("received vector length does not match the frame")
        if not 0 <= own_user < k_users:
            raise ValueError("own_user out of range")
        if prior.n != f:
            raise ValueError("prior size does not match the frame")
        self.y = y
        self.own_user = own_user
        self.config = config
        self.prior = prior
        self.genie_channel = False
        self.genie_noise = False
        self.pilot_idx = config.pilot_indices
        self.data_idx = config.data_indices

        self.hhat = np.zeros((k_users, f), dtype=np.complex128)
        self.hvar = np.ones((k_users, f), dtype=np.float64)
        self.gamma_hat = 1.0

        self.xhat = np.zeros((k_users, f), dtype=np.complex128)
        self.xvar = np.ones((k_users, f), dtype=np.float64)
        p_idx = config.pilot_indices
        for k in range(k_users):
            self.xhat[k, p_idx] = make_pilots(config.pilot_seed, config.pilot_count, user=k)
        self.xvar[:, p_idx] = 0.0

        n_data = config.data_symbols
        self.xobs_mean = np.zeros((k_users, n_data), dtype=np.complex128)
        self.xobs_prec = np.zeros((k_users, n_data), dtype=np.float64)
        self.beta = np.full((k_users, n_data, 4), 0.25)

        c_len = config.coded_bits
        self.demap_ext = np.full((k_users, c_len), 0.5)
        self.coded_ext = np.full(c_len, 0.5)
        self.info_app = np.full(config.info_bits, 0.5)
        self.bit_prior_c = np.full((k_users, c_len), 0.5)

        self.owner_bound_in: dict[int, np.ndarray] = {}
        self.combined_in: dict[int, np.ndarray] = {}
        self.demap_ready = False
        self.decode_ready = False
        self.stage_a_done: int | None = None
        self.seen_packets: set = set()
        self.noise_clamps = 0

        self._pilot_obs_mean = np.zeros((k_users, config.pilot_count), dtype=np.complex128)
        self._pilot_obs_prec = np.zeros((k_users, config.pilot_count), dtype=np.float64)

    @property
    def n_users(self) -> int:
        return self.config.n_users


def _residual(state: ReceiverState, exclude: int, indices) -> np.ndarray:
    r = state.y[indices].copy()
    for k in range(state.n_users):
        if k != exclude:
            r -= state.hhat[k, indices] * state.xhat[k, indices]
    return r


def _channel_obs_core(state: ReceiverState, k: int, idx) -> tuple[np.ndarray, np.ndarray]:
    r = _residual(state, k, idx)
    v = state.xvar[k, idx] + np.abs(state.xhat[k, idx]) ** 2
    safe = np.where(v > 0, v, 1.0)
    mean = np.where(v > 0, np.conj(state.xhat[k, idx]) * r / safe, 0.0)
    prec = state.gamma_hat * v
    return mean, prec


def channel_observation(state: ReceiverState, k: int, indices=None) -> GaussianVectorMessage:
    """Per-subcarrier channel pseudo-observation for user k.

    Interference from the other users is cancelled with their current
    symbol means; indices where the symbol carries no energy get zero
    precision instead of failing.
    """
    idx = slice(None) if indices is None else indices
    mean, prec = _channel_obs_core(state, k, idx)
    with np.errstate(divide="ignore"):
        variances = np.where(prec > 0, 1.0 / np.where(prec > 0, prec, 1.0), np.inf)
    return GaussianVectorMessage.diagonal(mean, variances)


def channel_belief(prior: GaussianVectorMessage, obs: GaussianVectorMessage) -> GaussianVectorMessage:
    """Combine the channel prior with pseudo-observations (precisions add)."""
    return gaussian_product(prior, obs)


def update_channel(state: ReceiverState, k: int) -> None:
    """Refresh the channel belief of user k from a fresh observation."""
    obs_mean, obs_prec = _channel_obs_core(state, k, slice(None))
    mean, var = state.prior.posterior(obs_mean, obs_prec)
    state.hhat[k] = mean
    state.hvar[k] = var


def _noise_terms(state: ReceiverState, indices) -> float:
    r = state.y[indices].copy()
    extra = 0.0
    for k in range(state.n_users):
        h = state.hhat[k, indices]
        hv = state.hvar[k, indices]
        x = state.xhat[k, indices]
        xv = state.xvar[k, indices]
        r -= h * x
        extra += float(np.sum(xv * hv + hv * np.abs(x) ** 2 + xv * np.abs(h) ** 2))
    return float(np.sum(np.abs(r) ** 2)) + extra


def noise_precision_update(state: ReceiverState, indices=None) -> tuple[GammaMessage, float]:
    """Recompute the noise-precision belief from current residual statistics.

    With non-informative priors the belief is Ga(n_obs, d_o) and the point
    estimate is n_obs/d_o.  A vanishing d_o is clamped and counted rather
    than letting the precision blow up.
    """
    idx = slice(None) if indices is None else indices
    n_obs = state.y[idx].shape[0]
    d_o = _noise_terms(state, idx)
    floor = _D_O_FLOOR * n_obs
    if d_o < floor:
        d_o = floor
        state.noise_clamps += 1
    belief = GammaMessage(shape=float(n_obs), rate=d_o)
    state.gamma_hat = gamma_mean(belief)
    return belief, state.gamma_hat


def symbol_observation(state: ReceiverState, k: int) -> SymbolObservation:
    """Gaussian symbol likelihoods for user k on the data indices."""
    d_idx = state.data_idx
    r = _residual(state, k, d_idx)
    w = state.hvar[k, d_idx] + np.abs(state.hhat[k, d_idx]) ** 2
    safe = np.where(w > 0, w, 1.0)
    mean = np.where(w > 0, np.conj(state.hhat[k, d_idx]) * r / safe, 0.0)
    prec = state.gamma_hat * w
    return SymbolObservation(mean=mean, precision=prec)


def _symbol_app_core(
    weights: np.ndarray,
    mean: np.ndarray,
    prec: np.ndarray,
    constellation: np.ndarray = QPSK_ALPHABET,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d2 = np.abs(mean[:, None] - constellation[None, :]) ** 2
    with np.errstate(divide="ignore"):
        logw = np.where(weights > 0, np.log(np.where(weights > 0, weights, 1.0)), -np.inf)
    logw = logw - prec[:, None] * d2
    logw -= logw.max(axis=1, keepdims=True)
    app = np.exp(logw)
    app /= app.sum(axis=1, keepdims=True)
    xh = app @ constellation
    xv = np.maximum((app @ (np.abs(constellation) ** 2)).real - np.abs(xh) ** 2, 0.0)
    return app, xh, xv


def symbol_app(
    obs: SymbolObservation,
    extrinsic: SymbolSoftMessage,
    constellation: np.ndarray = QPSK_ALPHABET,
) -> tuple[SymbolSoftMessage, np.ndarray, np.ndarray]:
    """Symbol posteriors and their first two moments.

    Combines the mapper weights with the Gaussian observation likelihood
    per data symbol; the moments feed back into detection and estimation.
    """
    mean = np.asarray(obs.mean, dtype=np.complex128)
    prec = np.asarray(obs.precision, dtype=np.float64)
    app, xh, xv = _symbol_app_core(extrinsic.weights, mean, prec, constellation)
    return SymbolSoftMessage(app), xh, xv


def detection_sweep(state: ReceiverState) -> None:
    """One detection pass: refresh observations and moments user by user."""
    d_idx = state.data_idx
    for k in range(state.n_users):
        obs = symbol_observation(state, k)
        state.xobs_mean[k] = obs.mean
        state.xobs_prec[k] = obs.precision
        _, xh, xv = _symbol_app_core(state.beta[k], obs.mean, obs.precision)
        state.xhat[k, d_idx] = xh
        state.xvar[k, d_idx] = xv


@njit(cache=True)
def _detection_kernel(
    y_d, hhat_d, hvar_d, xhat_d, xvar_d, log_beta, obs_mean, obs_prec, gamma, n_det, const
):
    """n_det sequential detection passes over the data indices, in place.

    Scalar form of symbol_observation followed by the symbol-posterior
    moments, user by user; the last pass's observations stay in
    obs_mean/obs_prec.
    """
    k_users, n = hhat_d.shape
    n_const = const.shape[0]
    e2 = np.empty(n_const)
    for s in range(n_const):
        e2[s] = abs(const[s]) ** 2
    for _ in range(n_det):
        for k in range(k_users):
            for i in range(n):
                r = y_d[i]
                for kp in range(k_users):
                    if kp != k:
                        r -= hhat_d[kp, i] * xhat_d[kp, i]
                h = hhat_d[k, i]
                w = hvar_d[k, i] + (h.real * h.real + h.imag * h.imag)
                if w > 0.0:
                    mu = np.conj(h) * r / w
                else:
                    mu = 0.0 + 0.0j
                prec = gamma * w
                obs_mean[k, i] = mu
                obs_prec[k, i] = prec
                peak = -np.inf
                for s in range(n_const):
                    ds = mu - const[s]
                    m = log_beta[k, i, s] - prec * (ds.real * ds.real + ds.imag * ds.imag)
                    if m > peak:
                        peak = m
                    e2[s] = m  # reuse as scratch for the exponents
                tot = 0.0
                xh = 0.0 + 0.0j
                ms = 0.0
                for s in range(n_const):
                    p = np.exp(e2[s] - peak)
                    tot += p
                    xh += p * const[s]
                    ms += p * (const[s].real ** 2 + const[s].imag ** 2)
                xh /= tot
                ms /= tot
                xv = ms - (xh.real * xh.real + xh.imag * xh.imag)
                if xv < 0.0:
                    xv = 0.0
                xhat_d[k, i] = xh
                xvar_d[k, i] = xv


def run_detection(state: ReceiverState, n_det: int) -> None:
    """Run n_det detection passes through the compiled kernel."""
    if n_det < 1:
        return
    d_idx = state.data_idx
    xhat_d = state.xhat[:, d_idx]
    xvar_d = state.xvar[:, d_idx]
    with np.errstate(divide="ignore"):
        log_beta = np.where(state.beta > 0, np.log(np.where(state.beta > 0, state.beta, 1.0)), -np.inf)
    _detection_kernel(
        state.y[d_idx],
        state.hhat[:, d_idx],
        state.hvar[:, d_idx],
        xhat_d,
        xvar_d,
        log_beta,
        state.xobs_mean,
        state.xobs_prec,
        state.gamma_hat,
        n_det,
        QPSK_ALPHABET,
    )
    state.xhat[:, d_idx] = xhat_d
    state.xvar[:, d_idx] = xvar_d


def pilot_init(state: ReceiverState, n_in: int) -> ReceiverState:
    """Initial channel and noise estimation from pilot positions only.

    Runs n_in passes of per-user estimation plus a pilot-restricted noise
    update, then extends the last pilot observations to the whole band
    through the prior.  n_in = 0 leaves the priors untouched.
    """
    if n_in < 0:
        raise ValueError("n_in must be nonnegative")
    p_idx = state.pilot_idx
    for _ in range(n_in):
        for k in range(state.n_users):
            obs_mean, obs_prec = _channel_obs_core(state, k, p_idx)
            state._pilot_obs_mean[k] = obs_mean
            state._pilot_obs_prec[k] = obs_prec
            mean, var = state.prior.posterior(
                obs_mean, obs_prec, obs_indices=p_idx, eval_indices=p_idx
            )
            state.hhat[k, p_idx] = mean
            state.hvar[k, p_idx] = var
        if not state.genie_noise:
            noise_precision_update(state, indices=p_idx)
    for k in range(state.n_users):
        mean, var = state.prior.posterior(
            state._pilot_obs_mean[k], state._pilot_obs_prec[k], obs_indices=p_idx
        )
        state.hhat[k] = mean
        state.hvar[k] = var
    d_idx = state.data_idx
    state.xhat[:, d_idx] = 0.0
    state.xvar[:, d_idx] = 1.0
    state.xobs_mean[:] = 0.0
    state.xobs_prec[:] = 0.0
    state.beta[:] = 0.25
    return state
