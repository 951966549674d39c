"""Command-line interface: synthesis, processing, evaluation, benchmarking.

Every data command runs in-process by default. Passing ``--server URL`` (or
setting ``RAES_SERVER``) turns the CLI into a thin client of the HTTP
service: audio is shipped as base64 float32, paths inside configs and
reports are interpreted on the server, and results come back over the same
connection. ``bench`` always runs in-process — a benchmark measured across a
network hop would time the wrong thing.

The ``RAES_THREADS`` environment variable caps dataset-synthesis
parallelism; all other commands are single-stream.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import click
import httpx
import numpy as np

from raes import __version__
from raes.audio import DEFAULT_SAMPLE_RATE, AudioSignal, read_wav, write_wav
from raes.metrics import evaluate_dataset, mflops_per_frame, rt_factor
from raes.nn import (
    ARCHITECTURE,
    WeightFormatError,
    identity_mask_bundle,
    load_weights,
    random_bundle,
    save_weights,
)
from raes.pipeline import process_file, process_signals
from raes.synth.dataset import label_histogram, load_manifest, synth_dataset
from raes.synth.sources import build_corpus
from raes.targets import dump_targets


def _post(server: str, path: str, payload: dict) -> dict:
    """POST to the service; translate any failure into a CLI error."""
    try:
        with httpx.Client(base_url=server, timeout=600.0) as client:
            response = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        raise click.ClickException(f"cannot reach server {server}: {exc}")
    if response.status_code != 200:
        try:
            detail = response.json()["detail"]
        except (ValueError, KeyError):
            detail = response.text
        raise click.ClickException(f"server returned {response.status_code}: {detail}")
    return response.json()


def _b64_f32(samples: np.ndarray) -> str:
    return base64.b64encode(
        np.ascontiguousarray(samples, dtype="<f4").tobytes()
    ).decode("ascii")


def _f32_from_b64(payload: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(payload), dtype="<f4").astype(np.float64)


def _print_histogram(histogram: dict) -> None:
    names = {"0": "near-end single", "1": "far-end single", "2": "double talk"}
    for key in ("0", "1", "2"):
        click.echo(f"  label {key} ({names[key]}): {histogram.get(key, 0)} frames")


@click.group()
@click.version_option(__version__)
@click.option("--server", envvar="RAES_SERVER", default=None, metavar="URL",
              help="Run against a service at URL instead of in-process "
                   "(also read from RAES_SERVER).")
@click.pass_context
def main(ctx: click.Context, server: str | None) -> None:
    """Residual-echo suppression toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON synthesis config.")
@click.pass_context
def synth(ctx: click.Context, config_path: str) -> None:
    """Generate a synthetic mixture dataset from a JSON config."""
    server = ctx.obj["server"]
    if server:
        with open(config_path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
        body = _post(server, "/synth", {"config": config})
        manifest_path = body["manifest_path"]
        count, files = body["count"], body["files_written"]
        histogram = body["label_histogram"]
    else:
        try:
            manifest_path = synth_dataset(config_path)
            entries = load_manifest(manifest_path)
        except ValueError as exc:
            raise click.ClickException(str(exc))
        count, files = len(entries), 4 * len(entries)
        histogram = label_histogram(entries)
    click.echo(f"wrote {count} records ({files} files)")
    click.echo(f"manifest: {manifest_path}")
    _print_histogram(histogram)


@main.command()
@click.option("--mic", "mic_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Microphone WAV.")
@click.option("--ref", "ref_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Far-end reference WAV.")
@click.option("--model", "model_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Weight file (.raes); required unless --af-only.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False),
              help="Output WAV for the near-end estimate.")
@click.option("--af-only", is_flag=True,
              help="Bypass the network; emit the adaptive filter error.")
@click.option("--dtd-gate", "dtd_gate", type=float, default=None,
              help="Confidence in [0.5, 1] for hard double-talk gating.")
@click.pass_context
def process(ctx: click.Context, mic_path: str, ref_path: str, model_path: str | None,
            out_path: str, af_only: bool, dtd_gate: float | None) -> None:
    """Suppress echo in a microphone recording."""
    server = ctx.obj["server"]
    if not af_only and model_path is None:
        raise click.ClickException("a --model is required unless --af-only is set")
    try:
        if server:
            mic = read_wav(mic_path)
            ref = read_wav(ref_path)
            payload = {
                "mic_b64": _b64_f32(mic.samples),
                "farend_b64": _b64_f32(ref.samples),
                "af_only": af_only,
                "dtd_gate_confidence": dtd_gate,
            }
            if model_path is not None:
                payload["weights_b64"] = base64.b64encode(
                    Path(model_path).read_bytes()).decode("ascii")
            body = _post(server, "/process", payload)
            out = AudioSignal(_f32_from_b64(body["out_b64"]), mic.sample_rate)
            write_wav(out_path, out)
        else:
            out = process_file(mic_path, ref_path, out_path, model_path,
                               af_only=af_only, dtd_gate_confidence=dtd_gate)
    except (ValueError, WeightFormatError, OSError) as exc:
        raise click.ClickException(str(exc))
    click.echo(f"wrote {out_path} ({len(out)} samples)")


def _format_metric(value, digits: int) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def _print_eval_table(report: dict) -> None:
    click.echo(f"{'SER bucket':<12}{'records':>8}{'ERLE (dB)':>12}{'STOI':>8}")
    for key in ("0", "-5", "-10"):
        bucket = report["buckets"][key]
        click.echo(f"{key + ' dB':<12}{bucket['count']:>8}"
                   f"{_format_metric(bucket['mean_erle_db'], 2):>12}"
                   f"{_format_metric(bucket['mean_stoi'], 3):>8}")
    overall = report["overall"]
    click.echo(f"{'overall':<12}{overall['count']:>8}"
               f"{_format_metric(overall['mean_erle_db'], 2):>12}"
               f"{_format_metric(overall['mean_stoi'], 3):>8}")
    if report["missing"]:
        click.echo(f"missing processed files: {', '.join(report['missing'])}")


@main.command(name="eval")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Dataset manifest.jsonl.")
@click.option("--processed", "processed_dir", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Directory of processed WAVs, one <record dir>.wav each.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False),
              help="Where to write the JSON report.")
@click.pass_context
def eval_cmd(ctx: click.Context, manifest_path: str, processed_dir: str,
             out_path: str) -> None:
    """Score processed records against their manifest (ERLE / STOI)."""
    server = ctx.obj["server"]
    try:
        if server:
            report = _post(server, "/eval", {
                "manifest_path": str(Path(manifest_path).resolve()),
                "processed_dir": str(Path(processed_dir).resolve()),
            })["report"]
        else:
            report = evaluate_dataset(manifest_path, processed_dir)
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc))
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    _print_eval_table(report)
    click.echo(f"report: {out_path}")


@main.command()
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Weight file (.raes).")
@click.option("--seconds", default=60.0, show_default=True,
              help="Benchmark audio duration (>= 10).")
@click.option("--seed", default=0, show_default=True, help="Benchmark noise seed.")
def bench(model_path: str, seconds: float, seed: int) -> None:
    """Measure the real-time factor and report analytic complexity.

    Always runs in-process, regardless of --server."""
    try:
        weights = load_weights(model_path)
    except (WeightFormatError, OSError) as exc:
        raise click.ClickException(str(exc))
    rng = np.random.default_rng(seed)
    n = int(round(seconds * DEFAULT_SAMPLE_RATE))
    mic = 0.1 * rng.standard_normal(n)
    farend = 0.1 * rng.standard_normal(n)
    try:
        factor = rt_factor(lambda audio: process_signals(audio, farend, weights), mic)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    size_mb = Path(model_path).stat().st_size / 1e6
    click.echo(f"real-time factor: {factor:.4f}")
    click.echo(f"complexity: {mflops_per_frame():.6f} MFLOPs/frame")
    click.echo(f"parameters: {ARCHITECTURE.parameter_count():,}")
    click.echo(f"model size: {size_mb:.2f} MB")


@main.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Dataset manifest.jsonl.")
@click.option("--out-dir", "out_dir", default=None, type=click.Path(file_okay=False),
              help="Directory for the .raet dumps (default: next to the manifest).")
@click.pass_context
def targets(ctx: click.Context, manifest_path: str, out_dir: str | None) -> None:
    """Extract training tensors (.raet) for every record in a manifest."""
    server = ctx.obj["server"]
    try:
        if server:
            payload = {"manifest_path": str(Path(manifest_path).resolve())}
            if out_dir is not None:
                payload["out_dir"] = str(Path(out_dir).resolve())
            written = _post(server, "/dataset/targets", payload)["written"]
        else:
            written = [str(p) for p in dump_targets(manifest_path, out_dir)]
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc))
    for path in written:
        click.echo(path)
    click.echo(f"wrote {len(written)} target dumps")


@main.command(name="init-model")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False),
              help="Where to write the weight file.")
@click.option("--kind", type=click.Choice(["identity", "random"]), default="identity",
              show_default=True,
              help="identity: unity mask / uniform detector; random: He-initialized.")
@click.option("--seed", default=0, show_default=True, help="Seed for --kind random.")
def init_model(out_path: str, kind: str, seed: int) -> None:
    """Write a ready-to-run weight file."""
    bundle = identity_mask_bundle() if kind == "identity" else random_bundle(seed)
    try:
        save_weights(bundle, out_path)
    except OSError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"wrote {out_path} ({Path(out_path).stat().st_size} bytes)")


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="Directory for the demo corpus.")
@click.option("--seed", default=0, show_default=True)
def corpus(out_dir: str, seed: int) -> None:
    """Build a small synthetic speech/music source corpus."""
    try:
        dirs = build_corpus(out_dir, seed=seed)
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc))
    for name, path in dirs.items():
        click.echo(f"{name}: {path}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("raes.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
