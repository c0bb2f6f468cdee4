"""Command-line entry point for BER sweeps.

Exit codes: 0 on success, 2 on configuration errors, 3 on I/O errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .harness import RunConfig, run_sweep, write_csv
from .txchain import FrameConfig

__all__ = ["main", "load_config_file", "ConfigError"]


class ConfigError(ValueError):
    """Invalid configuration contents (bad key, value or schedule)."""


_FRAME_KEYS = {
    "users": ("n_users", int),
    "info_bits": ("info_bits", int),
    "pilot_count": ("pilot_count", int),
    "interleaver_seed": ("interleaver_seed", int),
    "pilot_seed": ("pilot_seed", int),
}

_RUN_KEYS = {
    "n_it": ("n_it", int),
    "n_in": ("n_in", int),
    "n_det": ("n_det", int),
    "frames": ("frames", int),
    "seed": ("master_seed", int),
    "threads": ("threads", int),
    "out": ("out_path", str),
    "subcarrier_spacing_hz": ("subcarrier_spacing_hz", float),
    "pdp_file": ("pdp_file", str),
    "genie_channel": ("genie_channel", None),
    "genie_noise": ("genie_noise", None),
}


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def load_config_file(path: str) -> dict:
    """Parse "key = value" lines; # starts a comment, lists are comma-separated.

    Schedules are an exception: entries are separated by semicolons because
    explicit schedule specs contain commas.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    frame_kwargs: dict = {}
    run_kwargs: dict = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        try:
            if key in _FRAME_KEYS:
                name, conv = _FRAME_KEYS[key]
                frame_kwargs[name] = conv(raw)
            elif key == "generators_octal":
                frame_kwargs["generators"] = tuple(int(v.strip(), 8) for v in raw.split(","))
            elif key == "snr_db":
                run_kwargs["snr_db"] = tuple(float(v) for v in raw.split(","))
            elif key == "schedules":
                run_kwargs["schedule_specs"] = tuple(
                    s.strip() for s in raw.split(";") if s.strip()
                )
            elif key in _RUN_KEYS:
                name, conv = _RUN_KEYS[key]
                run_kwargs[name] = _parse_bool(raw) if conv is None else conv(raw)
            else:
                raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{path}:{ln}: bad value for {key!r}: {exc}") from exc
    return {"frame": frame_kwargs, "run": run_kwargs}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rxcoop",
        description="Monte-Carlo BER sweeps for cooperating iterative receivers",
    )
    parser.add_argument("--config", help="config file of 'key = value' lines")
    parser.add_argument("--snr", help="comma-separated SNR list in dB (overrides config)")
    parser.add_argument("--frames", type=int, help="Monte-Carlo frames per SNR point")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument(
        "--schedule",
        action="append",
        help="schedule name (nex0/nex1/nex2/full) or 'nex:t1,t2,...'; repeatable",
    )
    parser.add_argument("--threads", type=int, help="worker processes over frames")
    parser.add_argument("--out", help="output CSV path")
    parser.add_argument("--genie-channel", action="store_true", default=None,
                        help="give receivers the exact channel weights")
    parser.add_argument("--genie-noise", action="store_true", default=None,
                        help="give receivers the exact noise precision")
    return parser


def build_run_config(args) -> RunConfig:
    frame_kwargs: dict = {}
    run_kwargs: dict = {}
    if args.config:
        loaded = load_config_file(args.config)
        frame_kwargs.update(loaded["frame"])
        run_kwargs.update(loaded["run"])
    if args.snr is not None:
        try:
            run_kwargs["snr_db"] = tuple(float(v) for v in args.snr.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad --snr list: {exc}") from exc
    if args.frames is not None:
        run_kwargs["frames"] = args.frames
    if args.seed is not None:
        run_kwargs["master_seed"] = args.seed
    if args.schedule:
        run_kwargs["schedule_specs"] = tuple(args.schedule)
    if args.threads is not None:
        run_kwargs["threads"] = args.threads
    if args.out is not None:
        run_kwargs["out_path"] = args.out
    if args.genie_channel:
        run_kwargs["genie_channel"] = True
    if args.genie_noise:
        run_kwargs["genie_noise"] = True
    try:
        config = RunConfig(frame=FrameConfig(**frame_kwargs), **run_kwargs)
        config.schedules()  # validate now so errors exit with the config code
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = build_run_config(args)
    except ConfigError as exc:
        print(f"rxcoop: config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"rxcoop: cannot read config: {exc}", file=sys.stderr)
        return 3
    try:
        records = run_sweep(config)
        write_csv(records, config.out_path)
    except OSError as exc:
        print(f"rxcoop: I/O error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"rxcoop: config error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(records)} records to {config.out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
