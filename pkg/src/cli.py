from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Optional, Sequence

import pandas as pd
from rich.panel import Panel
from rich.table import Table

from src.audio_player import DEFAULT_PWM_CARRIER_HZ, PlayMode, load_wav, render, resample_for_playback
from src.channel_sim import ChannelConfig, analyze_sweep, apply_channel, sweep_signal, synthesize
from src.config import Settings
from src.errors import (
    ClockError,
    ConfigError,
    CoreBindingError,
    CrcError,
    ModemError,
    SampleRateMismatch,
    SchedulerBusyError,
    WavFormatError,
)
from src.framing import encode_stream, segment_payload
from src.log import console, err_console, setup_logging
from src.manifest import RunManifest
from src.modem import FskConfig, OfdmConfig, fsk_modulate, ofdm_modulate
from src.profiles import load_profile, model_to_dict
from src.receiver import EventKind, ReceiverConfig, receive_events
from src.reporting import (
    LEAD_S,
    TAIL_S,
    BerSetup,
    ber_grid,
    core_scaling,
    distance_profile,
    export_tables_to_csv,
    run_evaluation,
)
from src.scheduler import RunMode, available_cores, run_schedule
from src.waveform import read_wav, write_wav

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_HARDWARE = 3

SWEEP_RATE = 48_000

REAL_NOTICE = (
    "REAL mode drives the CPU cores directly. Whether the power supply emits an "
    "audible carrier depends on the hardware; this tool does not verify it."
)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _step(text: str) -> None:
    err_console.print(f"[bold cyan]{text}[/bold cyan]")


def _table(df: pd.DataFrame, title: str) -> Table:
    table = Table(title=title)
    for col in df.columns:
        table.add_column(str(col), justify="right")
    for row in df.itertuples(index=False):
        table.add_row(*(f"{v:.4g}" if isinstance(v, float) else str(v) for v in row))
    return table


def parse_payload(data: Optional[str], file: Optional[str]) -> bytes:
    if file:
        raw = Path(file).read_bytes()
    else:
        text = (data or "").strip().replace("_", "").replace(" ", "")
        if text.lower().startswith("0x"):
            text = text[2:]
        if len(text) % 2:
            raise ConfigError(f"hex payload needs whole bytes, got {len(text)} digits")
        try:
            raw = bytes.fromhex(text)
        except ValueError as exc:
            raise ConfigError(f"not a hex payload: {data!r}") from exc
    if not raw:
        raise ConfigError("empty payload")
    return raw


# --- commands -------------------------------------------------------------------

def cmd_transmit(args: argparse.Namespace, s: Settings, manifest: RunManifest) -> int:
    _step("1) Frame payload")
    payloads = segment_payload(parse_payload(args.data, args.file))
    bits = encode_stream(payloads)
    symbol_ms = 1000.0 / args.rate

    _step("2) Modulate")
    if args.ofdm:
        ofdm = OfdmConfig(tuple(args.ofdm), symbol_ms, max_cores=len(available_cores()) if args.real else None)
        schedule = ofdm_modulate(bits, ofdm)
        band = (min(ofdm.subcarriers) - args.rate, max(ofdm.subcarriers) + args.rate)
    else:
        f0, f1 = args.fsk or (s.f0, s.f1)
        schedule = fsk_modulate(bits, FskConfig(f0, f1, symbol_ms, cores=args.cores))
        band = (min(f0, f1) - args.rate, max(f0, f1) + args.rate)
    err_console.print(
        f"[green]{len(payloads)} frame(s), {bits.size} bits, {schedule.duration_ms / 1000:.2f} s[/green]"
    )
    if args.schedule_out:
        Path(args.schedule_out).write_text(schedule.to_text(), encoding="utf-8")
        manifest.outputs["schedule"] = str(args.schedule_out)

    if args.real:
        err_console.print(Panel(REAL_NOTICE, style="bold yellow"))
        _step("3) Drive cores")
        trace = run_schedule(schedule, RunMode.REAL, max_freq=s.max_carrier_hz)
        out = Path(args.trace_out or Path(args.output_dir) / "transmit-trace.csv")
        out.parent.mkdir(parents=True, exist_ok=True)
        trace.to_frame().to_csv(out, index=False)
        manifest.outputs["trace"] = str(out)
        err_console.print(f"[green]Trace:[/green] {out}")
        return EXIT_OK

    _step("3) Synthesize and write WAV")
    model = load_profile(args.profile)
    wave = synthesize(schedule, model, s.sample_rate).padded(LEAD_S, TAIL_S)
    wave = apply_channel(wave, ChannelConfig(snr_db=args.snr, band=band, seed=args.seed))
    out = write_wav(args.out or Path(args.output_dir) / "transmit.wav", wave)
    manifest.seeds["noise"] = args.seed
    manifest.outputs["wav"] = str(out)
    manifest.config["profile"] = model_to_dict(model)
    err_console.print(f"[green]Wrote:[/green] {out}")
    return EXIT_OK


def cmd_receive(args: argparse.Namespace, s: Settings, manifest: RunManifest) -> int:
    _step("1) Read recording")
    wave = read_wav(args.wav)
    overrides = dict(
        sample_rate=wave.sample_rate,
        smoothing_window=s.smoothing_window,
        lost_signal_timeout=s.lost_signal_timeout,
        detection_margin_db=s.detection_margin_db,
        band=s.band,
        max_hop=s.hop,
        max_fft_size=s.fft_size,
    )
    if args.fft_size:
        overrides["fft_size"] = args.fft_size
    if args.hop:
        overrides["hop"] = args.hop
    cfg = ReceiverConfig.for_symbol_time(1.0 / args.rate, **overrides)
    manifest.config["receiver"] = asdict(cfg)

    _step("2) Demodulate")
    events = receive_events(wave, cfg)
    for e in events:
        if e.kind is EventKind.PAYLOAD:
            console.print(e.hex, highlight=False)

    frame = pd.DataFrame(
        [{"time_s": round(e.time, 4), "event": e.kind.value, "payload": e.hex, "detail": e.detail} for e in events],
        columns=["time_s", "event", "payload", "detail"],
    )
    if args.events:
        Path(args.events).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(args.events, index=False)
        manifest.outputs["events"] = str(args.events)
    if len(frame):
        err_console.print(_table(frame, "Receiver events"))

    crc_errors = int((frame["event"] == EventKind.CRC_ERROR.value).sum())
    if crc_errors and args.strict:
        err_console.print(f"[red]{crc_errors} frame(s) failed the CRC[/red]")
        return EXIT_DATA
    return EXIT_OK


def cmd_ber(args: argparse.Namespace, s: Settings, manifest: RunManifest) -> int:
    model = load_profile(args.profile)
    f0, f1 = args.fsk or (s.f0, s.f1)
    setup = BerSetup(f0=f0, f1=f1, cores=args.cores, sample_rate=s.sample_rate, model=model)
    _step(f"1) BER grid: {len(args.snr)} SNR x {len(args.rate)} bitrate, {args.bits} bits per cell")
    df = ber_grid(args.snr, args.rate, bits=args.bits, seed=args.seed, setup=setup, workers=args.workers)
    manifest.seeds["grid"] = args.seed

    _step("2) Export CSV")
    paths = export_tables_to_csv({args.name: df}, out_dir=str(Path(args.output_dir) / "reports"))
    manifest.outputs.update(paths)
    console.print(_table(df, "Bit error rate"))
    err_console.print(f"[green]Exported files:[/green] {paths}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, s: Settings, manifest: RunManifest) -> int:
    model = load_profile(args.profile)
    manifest.config["profile"] = model_to_dict(model)
    _step(f"1) Sweep {args.low:g}-{args.high:g} Hz over {args.duration:g} s on {model.name}")
    schedule = sweep_signal(args.low, args.high, args.duration, slot_ms=args.slot_ms, cores=args.cores)
    wave = synthesize(schedule, model, SWEEP_RATE)
    if args.snr is not None:
        wave = apply_channel(wave, ChannelConfig(snr_db=args.snr, band=(args.low, args.high), seed=args.seed))
        manifest.seeds["noise"] = args.seed
    out = write_wav(args.out or Path(args.output_dir) / f"sweep-{model.name}.wav", wave)
    manifest.outputs["wav"] = str(out)

    _step("2) Detect passbands")
    report = analyze_sweep(wave, args.low, args.high, args.duration, slot_ms=args.slot_ms)
    bands = pd.DataFrame(report.bands, columns=["low_hz", "high_hz"])
    console.print(_table(bands, f"Detected bands ({model.name})"))
    matched = report.matches(model, span=(args.low, args.high))
    err_console.print("[green]matches profile[/green]" if matched else "[yellow]differs from profile mask[/yellow]")
    paths = export_tables_to_csv(
        {f"sweep-{model.name}-bands": bands, f"sweep-{model.name}-levels": report.levels},
        out_dir=str(Path(args.output_dir) / "reports"),
    )
    manifest.outputs.update(paths)
    manifest.notes.append(f"profile match: {matched}")
    return EXIT_OK


def cmd_play(args: argparse.Namespace, s: Settings, manifest: RunManifest) -> int:
    _step("1) Load WAV")
    stream = resample_for_playback(load_wav(args.wav), args.carrier)
    _step(f"2) Render {args.mode} at {args.carrier:g} Hz")
    schedule = render(stream, args.mode, args.carrier, args.levels, cores=args.cores, pwm_offset=args.offset)

    if args.target == RunMode.REAL.value:
        err_console.print(Panel(REAL_NOTICE, style="bold yellow"))
        _step("3) Drive cores")
        run_schedule(schedule, RunMode.REAL, max_freq=s.max_carrier_hz)
        return EXIT_OK

    _step("3) Synthesize and write WAV")
    model = load_profile(args.profile)
    wave = synthesize(schedule, model, s.sample_rate)
    out = write_wav(args.out or Path(args.output_dir) / "play.wav", wave)
    manifest.outputs["wav"] = str(out)
    err_console.print(f"[green]Wrote:[/green] {out}")
    return EXIT_OK


def cmd_cores(args: argparse.Namespace, s: Settings, manifest: RunManifest) -> int:
    _step(f"1) SNR for 1..{args.max_cores} cores at {args.freq:g} Hz")
    df = core_scaling(max_cores=args.max_cores, freq=args.freq, model=load_profile(args.profile), seed=args.seed)
    paths = export_tables_to_csv({"core_scaling": df}, out_dir=str(Path(args.output_dir) / "reports"))
    manifest.seeds["noise"] = args.seed
    manifest.outputs.update(paths)
    console.print(_table(df, "Core-count scaling"))
    return EXIT_OK


def cmd_distance(args: argparse.Namespace, s: Settings, manifest: RunManifest) -> int:
    _step(f"1) SNR at {len(args.distances)} distance(s)")
    df = distance_profile(
        args.distances,
        freq=args.freq,
        model=load_profile(args.profile),
        exponent=args.exponent,
        seed=args.seed,
    )
    paths = export_tables_to_csv({"distance": df}, out_dir=str(Path(args.output_dir) / "reports"))
    manifest.seeds["noise"] = args.seed
    manifest.outputs.update(paths)
    console.print(_table(df, "SNR versus distance"))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, s: Settings, manifest: RunManifest) -> int:
    f0, f1 = args.fsk or (s.f0, s.f1)
    setup = BerSetup(f0=f0, f1=f1, cores=args.cores, sample_rate=s.sample_rate, model=load_profile(args.profile))
    _step("1) BER grid, core scaling and distance profile")
    report, paths = run_evaluation(
        snrs=args.snr,
        bitrates=args.rate,
        bits=args.bits,
        distances_cm=args.distances,
        seed=args.seed,
        out_dir=str(Path(args.output_dir) / "reports"),
        workers=args.workers,
        setup=setup,
    )
    manifest.seeds["grid"] = args.seed
    manifest.outputs.update(paths)

    _step("2) Summary")
    summary = pd.DataFrame([asdict(report)])
    err_console.print(_table(summary, "Evaluation"))
    err_console.print(f"[green]Exported files:[/green] {paths}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------

def build_parser(s: Settings) -> argparse.ArgumentParser:
    parser = _Parser(prog="psu-modem", description="Power-supply acoustic modem toolkit.")
    parser.add_argument("--output-dir", default=s.output_dir, help="where WAV, CSV and manifests go")
    parser.add_argument("--log-level", default=s.log_level)
    parser.add_argument("--manifest", type=Path, help="manifest path (default: <output-dir>/manifests/...)")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, func: Callable, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, description=help)
        p.set_defaults(func=func)
        return p

    p = command("transmit", cmd_transmit, "Frame and modulate a payload; write a WAV (SIM) or drive cores (REAL).")
    p.add_argument("data", nargs="?", help="hex payload, e.g. 0xDEADBEEF")
    p.add_argument("--file", help="send the bytes of this file instead")
    mod = p.add_mutually_exclusive_group()
    mod.add_argument("--fsk", nargs=2, type=float, metavar=("F0", "F1"))
    mod.add_argument("--ofdm", nargs="+", type=float, metavar="HZ", help="one sub-carrier per core")
    p.add_argument("--rate", type=float, default=s.bitrate, help="bit/s (symbol rate)")
    p.add_argument("--cores", type=int, default=s.cores)
    target = p.add_mutually_exclusive_group()
    target.add_argument("--sim", dest="real", action="store_false", help="synthesize a WAV (default)")
    target.add_argument("--real", dest="real", action="store_true", help="drive the CPU cores")
    p.set_defaults(real=False)
    p.add_argument("--snr", type=float, default=s.snr_db, help="simulated in-band SNR in dB (inf: no noise)")
    p.add_argument("--profile", default="FULL", help="PSU preset name or JSON file")
    p.add_argument("--seed", type=int, default=s.seed)
    p.add_argument("--out", type=Path)
    p.add_argument("--schedule-out", type=Path, help="also write the symbol schedule as text")
    p.add_argument("--trace-out", type=Path, help="REAL mode: CSV of realized edges")

    p = command("receive", cmd_receive, "Decode payloads from a WAV recording.")
    p.add_argument("wav", type=Path)
    p.add_argument("--rate", type=float, default=s.bitrate, help="expected bit/s, sizes the FFT")
    p.add_argument("--fft-size", type=int)
    p.add_argument("--hop", type=int)
    p.add_argument("--strict", action="store_true", help="exit 2 if any frame fails the CRC")
    p.add_argument("--events", type=Path, help="write the event log as CSV")

    p = command("ber", cmd_ber, "Bit error rate over an SNR x bitrate grid (simulated channel).")
    p.add_argument("--snr", nargs="+", type=float, default=[0, 5, 10, 20, 30])
    p.add_argument("--rate", nargs="+", type=float, default=[s.bitrate])
    p.add_argument("--bits", type=int, default=1000)
    p.add_argument("--fsk", nargs=2, type=float, metavar=("F0", "F1"))
    p.add_argument("--cores", type=int, default=s.cores)
    p.add_argument("--profile", default="FULL")
    p.add_argument("--seed", type=int, default=s.seed)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--name", default="ber", help="CSV base name")

    p = command("sweep", cmd_sweep, "Synthesize a chirp through a PSU profile and report its passbands.")
    p.add_argument("--profile", default="FULL")
    p.add_argument("--low", type=float, default=100.0)
    p.add_argument("--high", type=float, default=24_000.0)
    p.add_argument("--duration", type=float, default=10.0, help="seconds")
    p.add_argument("--slot-ms", type=float, default=20.0)
    p.add_argument("--cores", type=int, default=s.cores)
    p.add_argument("--snr", type=float, help="add noise at this SNR (dB)")
    p.add_argument("--seed", type=int, default=s.seed)
    p.add_argument("--out", type=Path)

    p = command("play", cmd_play, "Play a WAV through the channel with AM or PWM.")
    p.add_argument("wav", type=Path)
    p.add_argument("--mode", choices=[m.value for m in PlayMode], type=str.upper, default=PlayMode.PWM.value)
    p.add_argument("--target", choices=["SIM", RunMode.REAL.value], type=str.upper, default="SIM")
    p.add_argument("--carrier", type=float, default=DEFAULT_PWM_CARRIER_HZ)
    p.add_argument("--levels", type=int, default=8, help="AM core levels or PWM resolution")
    p.add_argument("--cores", type=int, help="PWM: cores driven together (default 1)")
    p.add_argument("--offset", action="store_true", help="PWM: map [-1, 1] onto duty [0, 1]")
    p.add_argument("--profile", default="FULL")
    p.add_argument("--out", type=Path)

    p = command("cores", cmd_cores, "SNR versus active core count.")
    p.add_argument("--max-cores", type=int, default=8)
    p.add_argument("--freq", type=float, default=s.f0)
    p.add_argument("--profile", default="FULL")
    p.add_argument("--seed", type=int, default=s.seed)

    p = command("distance", cmd_distance, "SNR versus receiver distance.")
    p.add_argument("--distances", nargs="+", type=float, default=[20, 50, 100, 150, 200, 250])
    p.add_argument("--freq", type=float, default=s.f0)
    p.add_argument("--exponent", type=float, default=2.0)
    p.add_argument("--profile", default="FULL")
    p.add_argument("--seed", type=int, default=s.seed)

    p = command("evaluate", cmd_evaluate, "All simulated instruments at once: BER grid, core scaling, distance.")
    p.add_argument("--snr", nargs="+", type=float, default=[0, 5, 10, 20, 30])
    p.add_argument("--rate", nargs="+", type=float, default=[s.bitrate])
    p.add_argument("--bits", type=int, default=1000)
    p.add_argument("--distances", nargs="+", type=float, default=[20, 50, 100, 150, 200, 250])
    p.add_argument("--fsk", nargs=2, type=float, metavar=("F0", "F1"))
    p.add_argument("--cores", type=int, default=s.cores)
    p.add_argument("--profile", default="FULL")
    p.add_argument("--seed", type=int, default=s.seed)
    p.add_argument("--workers", type=int, default=1)
    return parser


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, (CoreBindingError, ClockError, SchedulerBusyError)):
        return EXIT_HARDWARE
    if isinstance(exc, (WavFormatError, CrcError, SampleRateMismatch)):
        return EXIT_DATA
    return EXIT_USAGE


def main(argv: Optional[Sequence[str]] = None) -> int:
    settings = Settings()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser(settings).parse_args(argv)
    setup_logging(args.log_level)

    snapshot = {k: v for k, v in vars(args).items() if not callable(v)}
    manifest = RunManifest(command=args.command, argv=argv, config={"settings": asdict(settings), "args": snapshot})
    try:
        code = args.func(args, settings, manifest)
    except (ModemError, OSError) as exc:
        code = _exit_code(exc) if isinstance(exc, ModemError) else EXIT_DATA
        err_console.print(f"[red]{type(exc).__name__}:[/red] {exc}")
    except Exception:
        code = EXIT_USAGE
        err_console.print("[bold red]Unexpected failure[/bold red]")
        err_console.print_exception()
    manifest.finish(code)
    path = manifest.write(args.manifest, out_dir=args.output_dir)
    log.debug("manifest written to %s", path)
    return code
