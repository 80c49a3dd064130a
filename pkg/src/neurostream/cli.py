"""Command line entry points: ``neurostream <command> --help``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from .errors import NeuroStreamError

log = logging.getLogger("neurostream")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = os.environ.get("NEUROSTREAM_LOG", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (NeuroStreamError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(1)


def _positive(ctx, param, value):
    if value is not None and value < 1:
        raise click.BadParameter(f"{param.name} must be ≥ 1")
    return value


def _load_dataset(paths, hop, grid_path):
    from .core import default_grid, grid_from_config
    from .dataset import chunks_from_recording
    from .io import container_read

    grid = grid_from_config(Path(grid_path).read_text()) if grid_path else default_grid()
    parts = []
    for p in paths:
        c = container_read(p)
        parts.append(chunks_from_recording(c.samples(), c.channel_names, c.sampling_rate, grid, hop=hop))
    return np.concatenate(parts) if parts else np.empty((0, 16, 10, 9), np.float32)


@click.group(cls=_Group)
def main():
    """Real-time EEG compression with a 3D convolutional autoencoder."""
    _setup_logging()


@main.command()
@click.option("--out", "out", type=click.Path(dir_okay=False, writable=True), required=True,
              help="Container file to write.")
@click.option("--duration", type=float, default=60.0, show_default=True, help="Seconds of signal.")
@click.option("--fs", type=float, default=512.0, show_default=True, help="Sampling rate in Hz.")
@click.option("--seed", type=int, default=0, show_default=True, help="Generator seed.")
@click.option("--frame-size", type=int, default=32, show_default=True, callback=_positive,
              help="Samples per stored frame.")
def synth(out, duration, fs, seed, frame_size):
    """Generate synthetic EEG for the default electrode grid."""
    from .core import default_grid
    from .io import container_write, frames_from_samples
    from .synthetic import synthetic_eeg

    if duration <= 0:
        raise click.BadParameter("duration must be positive", param_hint="--duration")
    labels = default_grid().labels
    x = synthetic_eeg(labels, fs, duration, seed)
    frames = frames_from_samples(x, fs, labels, frame_size)
    container_write(out, frames, fs, labels)
    click.echo(f"wrote {len(frames)} frames ({x.shape[0]} samples x {x.shape[1]} channels) to {out}")


@main.command("import")
@click.option("--csv", "csv_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Comma separated table, one column per channel.")
@click.option("--fs", type=float, required=True, help="Sampling rate in Hz.")
@click.option("--out", type=click.Path(dir_okay=False, writable=True), required=True,
              help="Container file to write.")
@click.option("--labels", default=None, help="Comma separated channel labels (overrides a header row).")
@click.option("--header/--no-header", default=None, help="Force or forbid a header row (default: detect).")
@click.option("--frame-size", type=int, default=32, show_default=True, callback=_positive,
              help="Samples per stored frame.")
def import_(csv_path, fs, out, labels, header, frame_size):
    """Convert a CSV recording into a signal container."""
    from .io import container_write, csv_import

    if fs <= 0:
        raise click.BadParameter("fs must be positive", param_hint="--fs")
    names = [s.strip() for s in labels.split(",")] if labels else None
    c = csv_import(csv_path, fs, names, header, frame_size)
    container_write(out, c.frames, c.sampling_rate, c.channel_names)
    click.echo(f"wrote {len(c.frames)} frames, {c.num_channels} channels to {out}")


@main.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False), multiple=True, required=True,
              help="Raw signal container(s); may be repeated.")
@click.option("--epochs", type=int, default=50, show_default=True, callback=_positive)
@click.option("--folds", type=int, default=3, show_default=True)
@click.option("--repeats", type=int, default=3, show_default=True, callback=_positive)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--batch-size", type=int, default=64, show_default=True, callback=_positive)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--optimizer", type=click.Choice(["adam", "sgd"]), default="adam", show_default=True)
@click.option("--normalize/--no-normalize", default=False, show_default=True,
              help="Per-cell z-scoring fitted on training folds.")
@click.option("--hop", type=int, default=16, show_default=True, callback=_positive,
              help="Stride between training chunks, in decimated samples.")
@click.option("--subject", default="synthetic", show_default=True, help="Label for report rows.")
@click.option("--grid", "grid_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Electrode grid document (default: built-in layout).")
@click.option("--report", type=click.Path(dir_okay=False, writable=True), default=None,
              help="Write the per-fold table here as CSV.")
@click.option("--select", is_flag=True, help="Run the 5-fold grid search over learning rate and code size first.")
@click.option("--out", type=click.Path(dir_okay=False, writable=True), required=True,
              help="Checkpoint trained on all data.")
def train(data, epochs, folds, repeats, seed, batch_size, lr, optimizer, normalize, hop, subject,
          grid_path, report, select, out):
    """Cross-validate, then train on everything and save a checkpoint."""
    from .autoencoder import AutoencoderModel, TrainConfig, checkpoint_save, crossvalidate, model_selection
    from .autoencoder import train as fit

    if folds < 2:
        raise click.BadParameter("folds must be ≥ 2", param_hint="--folds")
    if lr < 0:
        raise click.BadParameter("lr must be ≥ 0", param_hint="--lr")
    x = _load_dataset(data, hop, grid_path)
    cfg = TrainConfig(epochs=epochs, batch_size=batch_size, lr=lr, optimizer=optimizer, folds=folds,
                      repeats=repeats, seed=seed, normalize=normalize)
    click.echo(f"{len(x)} chunks from {len(data)} file(s)", err=True)
    if select:
        (lr, code_size), rows = model_selection(x, cfg)
        for r in rows:
            click.echo(f"select lr={r['lr']:g} code={r['code_size']} mse={r['mse_mean']:.6g}", err=True)
        cfg.lr, cfg.code_size = lr, code_size
    rep = crossvalidate(x, cfg, subject=subject)
    table = rep.to_table()
    click.echo(table, nl=False)
    click.echo(f"# mean {rep.mean:.6g} std {rep.std:.6g} (per-element MSE, uV^2)")
    if report:
        Path(report).write_text(table)
    model = AutoencoderModel(code_size=cfg.code_size, seed=seed)
    fit(model, x, cfg)
    checkpoint_save(model, out)
    click.echo(f"checkpoint written to {out}", err=True)


@main.command("eval")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), multiple=True, required=True)
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--hop", type=int, default=16, show_default=True, callback=_positive)
@click.option("--grid", "grid_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--index-free", is_flag=True, help="Decode without pool indices (window-origin placement).")
def eval_(data, checkpoint, hop, grid_path, index_free):
    """Reconstruction error of a checkpoint on container data."""
    from .autoencoder import checkpoint_load, evaluate_mse

    model = checkpoint_load(checkpoint)
    x = _load_dataset(data, hop, grid_path)
    if index_free:
        diffs = [model.decode_batch(model.encode_batch(x[i : i + 256])[0]) - x[i : i + 256]
                 for i in range(0, len(x), 256)]
        mse = float(np.mean(np.concatenate(diffs).astype(np.float64) ** 2))
    else:
        mse = evaluate_mse(model, x)
    click.echo(json.dumps({"chunks": int(len(x)), "mse": mse, "unit": "per-element uV^2"}))


@main.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False, writable=True), required=True,
              help="Container of codes (one 1x128 record per chunk).")
@click.option("--hop", type=int, default=8, show_default=True, callback=_positive)
@click.option("--grid", "grid_path", type=click.Path(exists=True, dir_okay=False), default=None)
def encode(data, checkpoint, out, hop, grid_path):
    """Encode a recording offline with the same window/hop as the streaming node."""
    from .autoencoder import checkpoint_load
    from .core import LatentCode
    from .io import code_to_frame, container_write

    model = checkpoint_load(checkpoint)
    x = _load_dataset([data], hop, grid_path)
    frames = []
    for i in range(0, len(x), 256):
        z, _ = model.encode_batch(x[i : i + 256])
        frames.extend(code_to_frame(LatentCode(v, i + k, 0)) for k, v in enumerate(z))
    container_write(out, frames, 128.0 / hop, None)
    click.echo(f"wrote {len(frames)} codes to {out}")


def _write_jitter(record, path):
    Path(path).write_text(record.intervals_csv())
    hist = Path(path).with_suffix(".hist.csv")
    hist.write_text(record.histogram_csv())
    return hist


def _stream(source, checkpoint, rate, duration, record, jitter, seed):
    from .autoencoder import AutoencoderModel, checkpoint_load
    from .bus import PlaybackSource, SyntheticSource, jitter_report, run_stream

    model = checkpoint_load(checkpoint) if checkpoint else AutoencoderModel(seed=seed)
    src = SyntheticSource(seed=seed) if source == "synthetic" else PlaybackSource.from_file(source)
    graph = run_stream(src, model, duration=duration, frame_rate=rate, record_path=record)
    acq, enc = graph.acquisition, graph.encoder
    errors = graph.errors()
    summary = {"frames": acq.published, "codes": enc.codes_published, "dropped": enc.dropped,
               "source_exhausted": acq.exhausted}
    if len(enc.output_times) >= 2:
        rep = jitter_report(enc.output_times, nominal_ms=1000.0 / rate)
        summary.update(rep.summary())
        if jitter:
            summary["histogram"] = str(_write_jitter(rep, jitter))
    click.echo(json.dumps(summary, indent=2))
    if errors:
        for name, err in errors.items():
            click.echo(f"error: {name}: {err}", err=True)
        sys.exit(1)


@main.command()
@click.option("--source", required=True,
              help="Container file to play back, or 'synthetic'.")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--rate", type=float, default=16.0, show_default=True, help="Acquisition frame rate (Hz).")
@click.option("--duration", type=float, default=None, help="Seconds to run (default: until the source ends).")
@click.option("--record", type=click.Path(dir_okay=False, writable=True), default=None,
              help="Record /encoded to this container.")
@click.option("--jitter", type=click.Path(dir_okay=False, writable=True), default=None,
              help="Write output intervals (ms, one per line); histogram goes to *.hist.csv.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for the synthetic source.")
def stream(source, checkpoint, rate, duration, record, jitter, seed):
    """Run acquisition -> encoder (-> recorder) in real time."""
    if source != "synthetic" and not Path(source).is_file():
        raise click.BadParameter(f"source file {source!r} does not exist", param_hint="--source")
    if rate <= 0:
        raise click.BadParameter("rate must be positive", param_hint="--rate")
    if duration is None and source == "synthetic":
        raise click.BadParameter("a synthetic source needs --duration", param_hint="--duration")
    _stream(source, checkpoint, rate, duration, record, jitter, seed)


@main.command("bench-jitter")
@click.option("--duration", type=float, default=60.0, show_default=True)
@click.option("--rate", type=float, default=16.0, show_default=True)
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Model to serve (default: freshly initialised).")
@click.option("--jitter", type=click.Path(dir_okay=False, writable=True), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
def bench_jitter(duration, rate, checkpoint, jitter, seed):
    """Stream synthetic EEG and report /encoded interval statistics."""
    if duration <= 0 or rate <= 0:
        raise click.BadParameter("duration and rate must be positive")
    _stream("synthetic", checkpoint, rate, duration, None, jitter, seed)


FLOOR_DB = -300.0


def response_table(kind: str, points: int, fs: float = 512.0, fmin: float = 0.1, extra=()):
    from .dsp import BANDPASS_HIGH_HZ, BANDPASS_LOW_HZ, BANDPASS_ORDER, NOTCH_HZ, NOTCH_Q
    from .dsp import design_butterworth_bandpass, design_notch

    if kind == "notch":
        cascade = design_notch(NOTCH_HZ, NOTCH_Q, fs)
    else:
        cascade = design_butterworth_bandpass(BANDPASS_ORDER, BANDPASS_LOW_HZ, BANDPASS_HIGH_HZ, fs)
    freqs = np.concatenate([[0.0], np.geomspace(fmin, fs / 2, points), np.asarray(extra, float)])
    freqs = np.unique(freqs)
    mag = np.abs(cascade.response(freqs, fs))
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(mag)
    db = np.maximum(np.nan_to_num(db, neginf=FLOOR_DB), FLOOR_DB)
    return cascade, freqs, db


@main.command("filter-response")
@click.option("--filter", "kind", type=click.Choice(["notch", "bandpass"]), required=True)
@click.option("--points", type=int, default=200, show_default=True, callback=_positive,
              help="Log-spaced frequencies between 0.1 Hz and Nyquist (0 Hz is always included).")
@click.option("--fs", type=float, default=512.0, show_default=True)
@click.option("--at", "at", type=float, multiple=True, help="Additional frequencies (Hz) to evaluate.")
@click.option("--sos", type=click.Path(dir_okay=False, writable=True), default=None,
              help="Also write the second-order-section table (b0 b1 b2 a1 a2 per line).")
def filter_response(kind, points, fs, at, sos):
    """Magnitude response table (Hz, dB) of the preprocessing filters."""
    cascade, freqs, db = response_table(kind, points, fs, extra=at)
    click.echo("hz,db")
    for f, d in zip(freqs, db):
        click.echo(f"{f:.6g},{d:.6f}")
    if sos:
        Path(sos).write_text(cascade.to_table())


if __name__ == "__main__":
    main()
