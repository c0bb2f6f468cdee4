"""Link-level simulator for cooperating iterative receivers.

K transmitter-receiver pairs share a band; each receiver estimates its
channels and noise level, detects and decodes iteratively, and exchanges
coded-bit soft information with the other receivers over scheduled
synchronization stages.
"""

from .channel import (
    ChannelRealization,
    PowerDelayProfile,
    apply_channel,
    calibrate_gamma,
    channel_covariance,
    draw_channel,
)
from .convcode import ConvolutionalCode, encode
from .coop import (
    ExchangePacket,
    ExchangeSchedule,
    FrameResult,
    InMemoryTransport,
    PacketPhase,
    ProtocolError,
    WireFormatError,
    WireLoopbackTransport,
    apply_incoming,
    build_owner_bound,
    build_peer_bound,
    default_prior,
    parse_schedule,
    run_frame,
    transport_roundtrip,
)
from .decoding import DecoderIO, bcjr_decode, decode_pass, demap, hard_decide, map_soft
from .harness import BerRecord, RunConfig, run_sweep, write_csv
from .messages import (
    BitSoftMessage,
    DegenerateMessageError,
    GammaMessage,
    GaussianVectorMessage,
    SymbolSoftMessage,
    bit_message_product,
    gamma_mean,
    gaussian_product,
    normalize,
)
from .receiver import (
    ChannelPrior,
    ReceiverState,
    SymbolObservation,
    channel_belief,
    channel_observation,
    detection_sweep,
    noise_precision_update,
    pilot_init,
    symbol_app,
    symbol_observation,
    update_channel,
)
from .txchain import (
    QPSK_ALPHABET,
    FrameConfig,
    TransmittedFrame,
    assemble_frame,
    deinterleave,
    interleave,
    make_pilots,
    map_qpsk,
)

__version__ = "0.1.0"
