"""Exchange protocol and the per-frame iteration scheduler.

Receivers run local iterations independently; at scheduled iteration
indices they synchronize through a two-phase packet exchange.  Phase A
carries each receiver's demap extrinsics to the user's owner; after a
barrier, phase B carries the owner's combined belief back to the peers.
All payloads live in the interleaved codeword domain, since a receiver
only knows its own user's interleaver.
"""

from __future__ import annotations

import struct
from collections import defaultdict, deque
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache

import numpy as np

from .channel import DEFAULT_SUBCARRIER_SPACING_HZ, ChannelRealization, PowerDelayProfile
from .decoding import _demap_core, _map_soft_core, decode_pass, hard_decide
from .messages import BIT_CONFLICTS, BitSoftMessage, bit_product_raw
from .receiver import (
    ChannelPrior,
    ReceiverState,
    _symbol_app_core,
    noise_precision_update,
    pilot_init,
    run_detection,
    update_channel,
)
from .txchain import FrameConfig, TransmittedFrame

__all__ = [
    "ExchangeSchedule",
    "ExchangePacket",
    "PacketPhase",
    "ProtocolError",
    "WireFormatError",
    "InMemoryTransport",
    "WireLoopbackTransport",
    "parse_schedule",
    "build_owner_bound",
    "build_peer_bound",
    "apply_incoming",
    "serialize_packet",
    "parse_packet",
    "transport_roundtrip",
    "run_frame",
    "FrameResult",
    "default_prior",
]


class ProtocolError(RuntimeError):
    """Exchange messages used out of order, duplicated or misaddressed."""


class WireFormatError(ValueError):
    """Malformed packet bytes; carries the offending byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ExchangeSchedule:
    """Iteration budget and the iteration indices followed by an exchange."""

    n_it: int = 20
    t_e: tuple[int, ...] = ()
    name: str = "nex0"

    def __post_init__(self):
        if self.n_it < 1:
            raise ValueError("need at least one iteration")
        t = tuple(int(v) for v in self.t_e)
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("exchange indices must be strictly increasing")
        if t and (t[0] < 1 or t[-1] > self.n_it - 1):
            raise ValueError("exchange indices must lie in [1, n_it-1]")
        object.__setattr__(self, "t_e", t)

    @property
    def n_ex(self) -> int:
        return len(self.t_e)


_NAMED_SCHEDULES = {
    "nex0": (),
    "nex1": (1,),
    "nex2": (1, 5),
    "full": None,  # exchange after every iteration
}


def parse_schedule(spec: str, n_it: int = 20) -> ExchangeSchedule:
    """Resolve a schedule name or an explicit "nex:t1,t2,..." spec."""
    spec = spec.strip()
    if spec in _NAMED_SCHEDULES:
        t_e = _NAMED_SCHEDULES[spec]
        if t_e is None:
            t_e = tuple(range(1, n_it))
        return ExchangeSchedule(n_it=n_it, t_e=t_e, name=spec)
    if spec.startswith("nex:"):
        body = spec[len("nex:") :].strip()
        try:
            t_e = tuple(int(v) for v in body.split(",")) if body else ()
        except ValueError as exc:
            raise ValueError(f"bad exchange index list in schedule {spec!r}") from exc
        name = "t" + "-".join(str(v) for v in t_e) if t_e else "nex0"
        return ExchangeSchedule(n_it=n_it, t_e=t_e, name=name)
    raise ValueError(
        f"unknown schedule {spec!r}; use one of {sorted(_NAMED_SCHEDULES)} or nex:t1,t2,..."
    )


class PacketPhase(IntEnum):
    DEMAP_EXTRINSIC = 0
    OWNER_COMBINED = 1


@dataclass(frozen=True)
class ExchangePacket:
    """One coded-bit soft message in flight between two receivers.

    Payload probabilities are quantized to float32 on construction so the
    in-memory path and the wire path carry bit-identical values.
    """

    frame_id: int
    stage_index: int
    sender: int
    recipient: int
    user_id: int
    phase: PacketPhase
    payload: BitSoftMessage

    def __post_init__(self):
        if not 0 <= self.frame_id < 1 << 64:
            raise ValueError("frame_id must fit an unsigned 64-bit field")
        if not 0 <= self.stage_index < 1 << 16:
            raise ValueError("stage_index must fit an unsigned 16-bit field")
        for label, v in (("sender", self.sender), ("recipient", self.recipient), ("user_id", self.user_id)):
            if not 0 <= v < 256:
                raise ValueError(f"{label} must fit an unsigned byte")
        if self.sender == self.recipient:
            raise ValueError("a receiver does not exchange with itself")
        phase = PacketPhase(self.phase)
        if phase is PacketPhase.DEMAP_EXTRINSIC and self.user_id != self.recipient:
            raise ValueError("demap-extrinsic packets must target the user's owner")
        if phase is PacketPhase.OWNER_COMBINED and self.user_id != self.sender:
            raise ValueError("owner-combined packets must carry the sender's own user")
        object.__setattr__(self, "phase", phase)
        quantized = self.payload.p1.astype(np.float32).astype(np.float64)
        object.__setattr__(self, "payload", BitSoftMessage(quantized))


_HEADER = struct.Struct("<4sQHBBBBI6x")
_MAGIC = b"CIC1"
_OFF_SENDER = 14
_OFF_PHASE = 17
_OFF_COUNT = 18
_OFF_PAYLOAD = _HEADER.size


def serialize_packet(packet: ExchangePacket) -> bytes:
    header = _HEADER.pack(
        _MAGIC,
        packet.frame_id,
        packet.stage_index,
        packet.sender,
        packet.recipient,
        packet.user_id,
        int(packet.phase),
        len(packet.payload),
    )
    return header + packet.payload.p1.astype("<f4").tobytes()


def parse_packet(buf: bytes) -> ExchangePacket:
    if len(buf) < _HEADER.size:
        raise WireFormatError("buffer shorter than the packet header", offset=len(buf))
    magic, frame_id, stage, sender, recipient, user_id, phase, count = _HEADER.unpack_from(buf)
    if magic != _MAGIC:
        raise WireFormatError("bad magic", offset=0)
    if phase not in (0, 1):
        raise WireFormatError(f"unknown phase {phase}", offset=_OFF_PHASE)
    expected = _OFF_PAYLOAD + 4 * count
    if len(buf) != expected:
        raise WireFormatError(
            f"bit_count {count} implies {expected} bytes, got {len(buf)}", offset=_OFF_COUNT
        )
    p1 = np.frombuffer(buf, dtype="<f4", offset=_OFF_PAYLOAD, count=count).astype(np.float64)
    bad = np.flatnonzero(~((p1 >= 0.0) & (p1 <= 1.0)))
    if bad.size:
        raise WireFormatError(
            f"payload value {p1[bad[0]]!r} outside [0, 1]", offset=_OFF_PAYLOAD + 4 * int(bad[0])
        )
    try:
        return ExchangePacket(
            frame_id=frame_id,
            stage_index=stage,
            sender=sender,
            recipient=recipient,
            user_id=user_id,
            phase=PacketPhase(phase),
            payload=BitSoftMessage(p1),
        )
    except ValueError as exc:
        raise WireFormatError(f"inconsistent header fields: {exc}", offset=_OFF_SENDER) from exc


def transport_roundtrip(packet: ExchangePacket) -> ExchangePacket:
    """Serialize and parse back; payloads survive bit-exactly."""
    return parse_packet(serialize_packet(packet))


class InMemoryTransport:
    """Per-(sender, recipient) FIFO queues with deterministic delivery order."""

    def __init__(self):
        self._queues: dict[tuple[int, int], deque] = defaultdict(deque)
        self.packets_sent = 0

    def send(self, packet: ExchangePacket) -> None:
        self._queues[(packet.sender, packet.recipient)].append(self._encode(packet))
        self.packets_sent += 1

    def collect(self, recipient: int) -> list[ExchangePacket]:
        out = []
        for (sender, rcpt), queue in sorted(self._queues.items()):
            if rcpt != recipient:
                continue
            while queue:
                out.append(self._decode(queue.popleft()))
        return out

    def _encode(self, packet: ExchangePacket):
        return packet

    def _decode(self, item) -> ExchangePacket:
        return item


class WireLoopbackTransport(InMemoryTransport):
    """Same queues, but every packet crosses the byte-level wire format."""

    def _encode(self, packet: ExchangePacket) -> bytes:
        return serialize_packet(packet)

    def _decode(self, item: bytes) -> ExchangePacket:
        return parse_packet(item)


def build_owner_bound(state: ReceiverState, k: int, frame_id: int, stage_index: int) -> ExchangePacket:
    """Phase-A packet: this receiver's demap extrinsic of user k, to owner k."""
    if k == state.own_user or not 0 <= k < state.n_users:
        raise ValueError("owner-bound packets go to other users' owners")
    if not state.demap_ready:
        raise ProtocolError("demap extrinsics not computed yet this iteration")
    return ExchangePacket(
        frame_id=frame_id,
        stage_index=stage_index,
        sender=state.own_user,
        recipient=k,
        user_id=k,
        phase=PacketPhase.DEMAP_EXTRINSIC,
        payload=BitSoftMessage(state.demap_ext[k]),
    )


def build_peer_bound(state: ReceiverState, k: int, frame_id: int, stage_index: int) -> ExchangePacket:
    """Phase-B packet: the owner's combined belief of its own user, to peer k.

    Combines the own demap extrinsic, the decoder extrinsic and the
    owner-bound payloads received this stage from receivers other than k.
    """
    own = state.own_user
    if k == own or not 0 <= k < state.n_users:
        raise ValueError("peer-bound packets go to the other receivers")
    if not (state.demap_ready and state.decode_ready):
        raise ProtocolError("demap/decoder extrinsics not available yet")
    if state.stage_a_done != stage_index:
        raise ProtocolError("phase A of this stage has not been delivered")
    parts = [state.demap_ext[own], state.coded_ext]
    for peer in sorted(state.owner_bound_in):
        if peer != k:
            parts.append(state.owner_bound_in[peer])
    payload, conflict = bit_product_raw(parts)
    if np.any(conflict):
        BIT_CONFLICTS.bump(int(conflict.sum()))
    return ExchangePacket(
        frame_id=frame_id,
        stage_index=stage_index,
        sender=own,
        recipient=k,
        user_id=own,
        phase=PacketPhase.OWNER_COMBINED,
        payload=BitSoftMessage(payload),
    )


def apply_incoming(state: ReceiverState, packets) -> ReceiverState:
    """Store validated exchange payloads into the persistent buffers.

    Owner-bound payloads feed the own user's decoder input and mapper
    prior; owner-combined payloads become the interferers' mapper priors.
    Buffers persist until a later stage overwrites them.
    """
    for pkt in packets:
        if pkt.recipient != state.own_user:
            raise ProtocolError(f"packet addressed to receiver {pkt.recipient}")
        if not 0 <= pkt.user_id < state.n_users:
            raise ProtocolError(f"packet for unknown user {pkt.user_id}")
        if len(pkt.payload) != state.config.coded_bits:
            raise ProtocolError("payload length does not match the codeword")
        key = (pkt.stage_index, int(pkt.phase), pkt.sender, pkt.user_id)
        if key in state.seen_packets:
            raise ProtocolError(f"duplicate packet {key}")
        state.seen_packets.add(key)
        if pkt.phase is PacketPhase.DEMAP_EXTRINSIC:
            state.owner_bound_in[pkt.sender] = pkt.payload.p1
            state.stage_a_done = pkt.stage_index
        else:
            state.combined_in[pkt.user_id] = pkt.payload.p1
    return state


@dataclass(frozen=True)
class FrameResult:
    """Per-iteration decoding errors and protocol diagnostics for one frame."""

    errors: np.ndarray  # (n_it, n_users) info-bit errors after each iteration
    bits_per_user: int
    packets_sent: int
    noise_clamps: int
    conflicts: int
    decisions: np.ndarray  # final hard decisions, (n_users, info_bits)


@lru_cache(maxsize=4)
def _cached_prior(pdp_key, spacing_hz: float, n: int) -> ChannelPrior:
    delays, powers = pdp_key
    pdp = PowerDelayProfile(np.array(delays), np.array(powers))
    return ChannelPrior(pdp, spacing_hz, n)


def default_prior(
    config: FrameConfig,
    pdp: PowerDelayProfile | None = None,
    spacing_hz: float = DEFAULT_SUBCARRIER_SPACING_HZ,
) -> ChannelPrior:
    pdp = pdp or PowerDelayProfile.etu()
    key = (tuple(pdp.delays_s.tolist()), tuple(pdp.powers.tolist()))
    return _cached_prior(key, spacing_hz, config.frame_len)


def _refresh_priors(state: ReceiverState) -> None:
    # Bit priors n_{c->fM}: freshest decoder extrinsic for the own user,
    # persisted exchange buffers for everyone.
    own = state.own_user
    for k in range(state.n_users):
        if k == own:
            parts = [state.coded_ext] + [
                state.owner_bound_in[p] for p in sorted(state.owner_bound_in)
            ]
            p1, conflict = bit_product_raw(parts)
            if np.any(conflict):
                BIT_CONFLICTS.bump(int(conflict.sum()))
            state.bit_prior_c[k] = p1
        elif k in state.combined_in:
            state.bit_prior_c[k] = state.combined_in[k]
        else:
            state.bit_prior_c[k] = 0.5


def _demap_and_decode(state: ReceiverState) -> None:
    for k in range(state.n_users):
        state.demap_ext[k] = _demap_core(
            state.xobs_mean[k], state.xobs_prec[k], state.bit_prior_c[k]
        )
    state.demap_ready = True
    incoming = [state.owner_bound_in[p] for p in sorted(state.owner_bound_in)]
    decode_pass(state, incoming)
    state.decode_ready = True


def _local_iteration(state: ReceiverState, n_det: int) -> None:
    d_idx = state.data_idx
    _refresh_priors(state)
    for k in range(state.n_users):
        state.beta[k] = _map_soft_core(state.bit_prior_c[k])
        _, xh, xv = _symbol_app_core(state.beta[k], state.xobs_mean[k], state.xobs_prec[k])
        state.xhat[k, d_idx] = xh
        state.xvar[k, d_idx] = xv
    if not state.genie_channel:
        for k in range(state.n_users):
            update_channel(state, k)
    if not state.genie_noise:
        noise_precision_update(state)
    run_detection(state, n_det)
    _demap_and_decode(state)


def _exchange_stage(states, order, transport, frame_id: int, stage_index: int) -> None:
    # Phase A: every packet is built from pre-stage state before delivery.
    phase_a = []
    for l in order:
        s = states[l]
        for k in range(s.n_users):
            if k != l:
                phase_a.append(build_owner_bound(s, k, frame_id, stage_index))
    for pkt in phase_a:
        transport.send(pkt)
    for l in order:
        apply_incoming(states[l], transport.collect(l))
    # Phase B, after the barrier.
    phase_b = []
    for l in order:
        s = states[l]
        for k in range(s.n_users):
            if k != l:
                phase_b.append(build_peer_bound(s, k, frame_id, stage_index))
    for pkt in phase_b:
        transport.send(pkt)
    for l in order:
        apply_incoming(states[l], transport.collect(l))


def run_frame(
    config: FrameConfig,
    schedule: ExchangeSchedule,
    channel: ChannelRealization,
    frames: TransmittedFrame,
    received,
    *,
    n_in: int = 10,
    n_det: int = 5,
    genie_channel: bool = False,
    genie_noise: bool = False,
    transport=None,
    prior: ChannelPrior | None = None,
    frame_id: int = 0,
    receiver_order=None,
) -> FrameResult:
    """Run the full iterative algorithm on one frame for all receivers.

    Iteration 1 is the initialization stage; each later iteration is a
    local iteration, preceded by an exchange stage when the schedule says
    so.  Bit errors are recorded after every iteration's decode.
    """
    k_users = config.n_users
    if len(received) != k_users or frames.n_users != k_users:
        raise ValueError("need one received vector and one frame per user")
    if schedule.n_ex > 0 and k_users < 2:
        raise ValueError("exchanges require at least two receivers")
    order = tuple(receiver_order) if receiver_order is not None else tuple(range(k_users))
    if sorted(order) != list(range(k_users)):
        raise ValueError("receiver_order must be a permutation of the receivers")
    transport = transport if transport is not None else InMemoryTransport()
    prior = prior if prior is not None else default_prior(config)

    conflicts_before = BIT_CONFLICTS.count
    states = [ReceiverState(received[l], l, config, prior) for l in range(k_users)]
    for l, s in enumerate(states):
        if genie_channel:
            s.genie_channel = True
            s.hhat[:] = channel.h[l]
            s.hvar[:] = 0.0
        if genie_noise:
            s.genie_noise = True
            s.gamma_hat = float(channel.gamma[l])

    errors = np.zeros((schedule.n_it, k_users), dtype=np.int64)

    def record(t: int) -> None:
        for l in order:
            decided = hard_decide(states[l].info_app)
            errors[t - 1, l] = int(np.sum(decided != frames.u[l]))

    # Initialization (iteration 1)
    for l in order:
        s = states[l]
        if not genie_channel:
            pilot_init(s, n_in)
        if not genie_noise:
            noise_precision_update(s)
        for _ in range(n_det):
            detection_sweep(s)
        _demap_and_decode(s)
    record(1)

    t, e = 1, 0
    while t < schedule.n_it:
        if e < schedule.n_ex and schedule.t_e[e] == t:
            _exchange_stage(states, order, transport, frame_id, stage_index=t)
            e += 1
        for l in order:
            _local_iteration(states[l], n_det)
        t += 1
        record(t)

    decisions = np.stack([hard_decide(states[l].info_app) for l in range(k_users)])
    return FrameResult(
        errors=errors,
        bits_per_user=config.info_bits,
        packets_sent=transport.packets_sent,
        noise_clamps=sum(s.noise_clamps for s in states),
        conflicts=BIT_CONFLICTS.count - conflicts_before,
        decisions=decisions,
    )
