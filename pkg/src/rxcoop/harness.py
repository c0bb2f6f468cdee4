"""Monte-Carlo sweep driver: SNR x schedule BER aggregation and CSV output.

Frame seeds are derived from (master seed, frame index), so bits,
channels and noise shapes are shared across SNR points and schedules,
and results do not depend on how frames are split across workers.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import (
    DEFAULT_SUBCARRIER_SPACING_HZ,
    ChannelRealization,
    PowerDelayProfile,
    apply_channel,
    calibrate_gamma,
    draw_channel,
)
from .coop import ChannelPrior, ExchangeSchedule, parse_schedule, run_frame
from .seeds import frame_rng
from .txchain import FrameConfig, assemble_frame

__all__ = ["RunConfig", "BerRecord", "run_sweep", "write_csv", "CSV_HEADER"]

CSV_HEADER = "snr_db,schedule,iteration,user,bit_errors,bits_total,ber"


@dataclass(frozen=True)
class RunConfig:
    """Everything one sweep needs; defaults mirror the reference scenario."""

    frame: FrameConfig = field(default_factory=FrameConfig)
    snr_db: tuple[float, ...] = (4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0)
    schedule_specs: tuple[str, ...] = ("nex0", "nex1", "nex2", "full")
    n_it: int = 20
    n_in: int = 10
    n_det: int = 5
    frames: int = 200
    master_seed: int = 1
    threads: int = 1
    genie_channel: bool = False
    genie_noise: bool = False
    out_path: str = "ber.csv"
    subcarrier_spacing_hz: float = DEFAULT_SUBCARRIER_SPACING_HZ
    pdp_file: str | None = None

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("need at least one frame")
        if self.threads < 1:
            raise ValueError("need at least one worker")
        if not self.snr_db:
            raise ValueError("need at least one SNR point")
        if not self.schedule_specs:
            raise ValueError("need at least one schedule")

    def schedules(self) -> tuple[ExchangeSchedule, ...]:
        return tuple(parse_schedule(s, self.n_it) for s in self.schedule_specs)

    def pdp(self) -> PowerDelayProfile:
        if self.pdp_file is not None:
            return PowerDelayProfile.from_file(self.pdp_file)
        return PowerDelayProfile.etu()


@dataclass(frozen=True)
class BerRecord:
    """One aggregated BER point."""

    snr_db: float
    schedule: str
    iteration: int
    user: int
    bit_errors: int
    bits_total: int

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_total


def _simulate_range(config: RunConfig, start: int, stop: int) -> np.ndarray:
    """Error tensor (snr, schedule, iteration, user) for a frame range."""
    frame_cfg = config.frame
    schedules = config.schedules()
    pdp = config.pdp()
    prior = ChannelPrior(pdp, config.subcarrier_spacing_hz, frame_cfg.frame_len)
    k = frame_cfg.n_users
    gammas = [calibrate_gamma(snr, pdp) for snr in config.snr_db]
    errors = np.zeros((len(config.snr_db), len(schedules), config.n_it, k), dtype=np.int64)
    for frame_index in range(start, stop):
        for si, gamma in enumerate(gammas):
            rng = frame_rng(config.master_seed, frame_index)
            u = [rng.integers(0, 2, size=frame_cfg.info_bits) for _ in range(k)]
            frames = assemble_frame(u, frame_cfg)
            h = np.empty((k, k, frame_cfg.frame_len), dtype=np.complex128)
            for l in range(k):
                for j in range(k):
                    h[l, j] = draw_channel(
                        pdp, config.subcarrier_spacing_hz, frame_cfg.frame_len, rng
                    )
            real = ChannelRealization(h=h, gamma=np.full(k, gamma))
            received = apply_channel(frames, real, rng)
            for ci, schedule in enumerate(schedules):
                result = run_frame(
                    frame_cfg,
                    schedule,
                    real,
                    frames,
                    received,
                    n_in=config.n_in,
                    n_det=config.n_det,
                    genie_channel=config.genie_channel,
                    genie_noise=config.genie_noise,
                    prior=prior,
                    frame_id=frame_index,
                )
                errors[si, ci] += result.errors
    return errors


def _chunk_bounds(n_frames: int, n_workers: int) -> list[tuple[int, int]]:
    sizes = [n_frames // n_workers + (1 if i < n_frames % n_workers else 0) for i in range(n_workers)]
    bounds, at = [], 0
    for size in sizes:
        if size:
            bounds.append((at, at + size))
            at += size
    return bounds


def run_sweep(config: RunConfig) -> list[BerRecord]:
    """Simulate all (SNR, schedule) pairs and aggregate per-iteration BER."""
    schedules = config.schedules()
    bounds = _chunk_bounds(config.frames, config.threads)
    if len(bounds) > 1:
        with multiprocessing.Pool(len(bounds)) as pool:
            parts = pool.starmap(_simulate_range, [(config, a, b) for a, b in bounds])
        errors = np.sum(parts, axis=0)
    else:
        errors = _simulate_range(config, 0, config.frames)
    bits_total = config.frames * config.frame.info_bits
    records = []
    for si, snr in enumerate(config.snr_db):
        for ci, schedule in enumerate(schedules):
            for t in range(config.n_it):
                for user in range(config.frame.n_users):
                    records.append(
                        BerRecord(
                            snr_db=float(snr),
                            schedule=schedule.name,
                            iteration=t + 1,
                            user=user + 1,
                            bit_errors=int(errors[si, ci, t, user]),
                            bits_total=bits_total,
                        )
                    )
    return records


def write_csv(records, path) -> None:
    """Write records sorted by (schedule, snr, iteration, user), LF endings."""
    records = list(records)
    if not records:
        raise ValueError("no records to write")
    records.sort(key=lambda r: (r.schedule, r.snr_db, r.iteration, r.user))
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            f"{r.snr_db:g},{r.schedule},{r.iteration},{r.user},"
            f"{r.bit_errors},{r.bits_total},{r.ber:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")
