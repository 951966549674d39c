"""HTTP service exposing the echo-suppression toolkit.

Wraps the core package behind a small JSON API so non-Python clients (and
the bundled CLI in client mode) can synthesize data, process audio, run the
network, and score results without linking against the package. Audio and
tensors cross the wire as base64-encoded little-endian float32 buffers —
compact, byte-exact, and the same precision the WAV files carry, so a
round trip through the service produces the same file a local run would.

Stateful streaming sessions live in an in-memory registry keyed by opaque
ids: open one with the model once, push equal-length mic/far-end chunks of
any size, and read back the same number of processed samples per push.
"""

from __future__ import annotations

import base64
import binascii
import os
import tempfile
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from raes import __version__
from raes.audio import DEFAULT_SAMPLE_RATE
from raes.metrics import evaluate_dataset, mflops_per_frame, rt_factor
from raes.nn import InferenceError, WeightBundle, WeightFormatError, forward, load_weights
from raes.nn.arch import ARCHITECTURE, INPUT_SHAPE
from raes.pipeline import PipelineState, process_signals, process_stream
from raes.synth.dataset import label_histogram, load_manifest, synth_dataset
from raes.targets import dump_targets


def _decode_f32(payload: str, name: str) -> np.ndarray:
    """Base64 → float64 samples (transport precision is float32)."""
    try:
        raw = base64.b64decode(payload, validate=True)
    except binascii.Error as exc:
        raise HTTPException(400, detail=f"{name} is not valid base64: {exc}")
    if len(raw) % 4 != 0:
        raise HTTPException(400, detail=f"{name} length {len(raw)} is not a multiple of 4 bytes")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def _encode_f32(samples: np.ndarray) -> str:
    return base64.b64encode(
        np.ascontiguousarray(samples, dtype="<f4").tobytes()
    ).decode("ascii")


def _resolve_weights(weights_b64: str | None, weights_path: str | None,
                     required: bool) -> WeightBundle | None:
    """Load a weight bundle from inline bytes or a server-local path."""
    if weights_b64 is not None and weights_path is not None:
        raise HTTPException(400, detail="pass weights_b64 or weights_path, not both")
    if weights_b64 is None and weights_path is None:
        if required:
            raise HTTPException(400, detail="a model is required: pass weights_b64 or weights_path")
        return None
    try:
        if weights_b64 is not None:
            try:
                raw = base64.b64decode(weights_b64, validate=True)
            except binascii.Error as exc:
                raise HTTPException(400, detail=f"weights_b64 is not valid base64: {exc}")
            handle, tmp_path = tempfile.mkstemp(suffix=".raes")
            try:
                with os.fdopen(handle, "wb") as fh:
                    fh.write(raw)
                return load_weights(tmp_path)
            finally:
                os.unlink(tmp_path)
        return load_weights(weights_path)
    except WeightFormatError as exc:
        raise HTTPException(400, detail=f"invalid model: {exc}")
    except OSError as exc:
        raise HTTPException(400, detail=f"cannot read model: {exc}")


class HealthResponse(BaseModel):
    status: str
    version: str


class ProcessRequest(BaseModel):
    mic_b64: str
    farend_b64: str
    weights_b64: str | None = None
    weights_path: str | None = None
    af_only: bool = False
    dtd_gate_confidence: float | None = None


class ProcessResponse(BaseModel):
    out_b64: str
    n_samples: int


class SynthRequest(BaseModel):
    config: dict


class SynthResponse(BaseModel):
    manifest_path: str
    count: int
    files_written: int
    label_histogram: dict[str, int]


class EvalRequest(BaseModel):
    manifest_path: str
    processed_dir: str


class EvalResponse(BaseModel):
    report: dict


class BenchRequest(BaseModel):
    weights_b64: str | None = None
    weights_path: str | None = None
    seconds: float = 60.0
    seed: int = 0


class BenchResponse(BaseModel):
    rt_factor: float
    mflops_per_frame: float
    model_bytes: int
    parameters: int


class ForwardRequest(BaseModel):
    features_b64: str
    weights_b64: str | None = None
    weights_path: str | None = None


class ForwardResponse(BaseModel):
    masks_b64: str
    dtd_b64: str
    count: int


class TargetsRequest(BaseModel):
    manifest_path: str
    out_dir: str | None = None


class TargetsResponse(BaseModel):
    written: list[str]


class StreamOpenRequest(BaseModel):
    weights_b64: str | None = None
    weights_path: str | None = None
    af_only: bool = False
    dtd_gate_confidence: float | None = None


class StreamOpenResponse(BaseModel):
    stream_id: str
    latency: int
    sample_rate: int


class StreamChunkRequest(BaseModel):
    mic_b64: str
    farend_b64: str


class StreamChunkResponse(BaseModel):
    out_b64: str
    n_samples: int


class StreamCloseResponse(BaseModel):
    closed: bool


def create_app() -> FastAPI:
    app = FastAPI(title="raes", version=__version__)
    streams: dict[str, PipelineState] = {}
    lock = threading.Lock()

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/process", response_model=ProcessResponse)
    def process(request: ProcessRequest) -> ProcessResponse:
        mic = _decode_f32(request.mic_b64, "mic_b64")
        farend = _decode_f32(request.farend_b64, "farend_b64")
        weights = _resolve_weights(request.weights_b64, request.weights_path,
                                   required=not request.af_only)
        try:
            out = process_signals(mic, farend, weights, af_only=request.af_only,
                                  dtd_gate_confidence=request.dtd_gate_confidence)
        except ValueError as exc:
            raise HTTPException(400, detail=str(exc))
        return ProcessResponse(out_b64=_encode_f32(out), n_samples=out.shape[0])

    @app.post("/synth", response_model=SynthResponse)
    def synth(request: SynthRequest) -> SynthResponse:
        try:
            manifest_path = synth_dataset(request.config)
            entries = load_manifest(manifest_path)
        except ValueError as exc:
            raise HTTPException(400, detail=str(exc))
        return SynthResponse(
            manifest_path=str(manifest_path),
            count=len(entries),
            files_written=4 * len(entries),
            label_histogram=label_histogram(entries),
        )

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(request: EvalRequest) -> EvalResponse:
        manifest = Path(request.manifest_path)
        if not manifest.is_file():
            raise HTTPException(400, detail=f"manifest does not exist: {manifest}")
        try:
            report = evaluate_dataset(manifest, request.processed_dir)
        except (ValueError, OSError) as exc:
            raise HTTPException(400, detail=str(exc))
        return EvalResponse(report=report)

    @app.post("/bench", response_model=BenchResponse)
    def bench(request: BenchRequest) -> BenchResponse:
        weights = _resolve_weights(request.weights_b64, request.weights_path,
                                   required=True)
        if request.weights_path is not None:
            model_bytes = os.path.getsize(request.weights_path)
        else:
            model_bytes = len(base64.b64decode(request.weights_b64))
        rng = np.random.default_rng(request.seed)
        n = int(round(request.seconds * DEFAULT_SAMPLE_RATE))
        mic = 0.1 * rng.standard_normal(n)
        farend = 0.1 * rng.standard_normal(n)
        try:
            factor = rt_factor(lambda audio: process_signals(audio, farend, weights), mic)
        except ValueError as exc:
            raise HTTPException(400, detail=str(exc))
        return BenchResponse(
            rt_factor=factor,
            mflops_per_frame=mflops_per_frame(),
            model_bytes=model_bytes,
            parameters=ARCHITECTURE.parameter_count(),
        )

    @app.post("/model/forward", response_model=ForwardResponse)
    def model_forward(request: ForwardRequest) -> ForwardResponse:
        weights = _resolve_weights(request.weights_b64, request.weights_path,
                                   required=True)
        flat = _decode_f32(request.features_b64, "features_b64")
        frame_elems = int(np.prod(INPUT_SHAPE))
        if flat.shape[0] == 0 or flat.shape[0] % frame_elems != 0:
            raise HTTPException(
                400,
                detail=f"features_b64 holds {flat.shape[0]} values, expected a "
                       f"positive multiple of {frame_elems} (shape {INPUT_SHAPE})",
            )
        features = flat.astype(np.float32).reshape(-1, *INPUT_SHAPE)
        masks = np.empty((features.shape[0], 64), dtype=np.float32)
        dtd = np.empty((features.shape[0], 3), dtype=np.float32)
        try:
            for i, feature in enumerate(features):
                output = forward(feature, weights)
                masks[i] = output.mask
                dtd[i] = output.dtd
        except (ValueError, InferenceError) as exc:
            raise HTTPException(400, detail=str(exc))
        return ForwardResponse(
            masks_b64=_encode_f32(masks),
            dtd_b64=_encode_f32(dtd),
            count=features.shape[0],
        )

    @app.post("/dataset/targets", response_model=TargetsResponse)
    def dataset_targets(request: TargetsRequest) -> TargetsResponse:
        manifest = Path(request.manifest_path)
        if not manifest.is_file():
            raise HTTPException(400, detail=f"manifest does not exist: {manifest}")
        try:
            written = dump_targets(manifest, request.out_dir)
        except (ValueError, OSError) as exc:
            raise HTTPException(400, detail=str(exc))
        return TargetsResponse(written=[str(path) for path in written])

    @app.post("/streams", response_model=StreamOpenResponse)
    def open_stream(request: StreamOpenRequest) -> StreamOpenResponse:
        weights = _resolve_weights(request.weights_b64, request.weights_path,
                                   required=not request.af_only)
        try:
            state = PipelineState(weights=weights, af_only=request.af_only,
                                  dtd_gate_confidence=request.dtd_gate_confidence)
        except ValueError as exc:
            raise HTTPException(400, detail=str(exc))
        stream_id = uuid.uuid4().hex
        with lock:
            streams[stream_id] = state
        return StreamOpenResponse(stream_id=stream_id, latency=state.latency,
                                  sample_rate=DEFAULT_SAMPLE_RATE)

    @app.post("/streams/{stream_id}", response_model=StreamChunkResponse)
    def push_chunk(stream_id: str, request: StreamChunkRequest) -> StreamChunkResponse:
        with lock:
            state = streams.get(stream_id)
        if state is None:
            raise HTTPException(404, detail=f"no open stream with id {stream_id}")
        mic = _decode_f32(request.mic_b64, "mic_b64")
        farend = _decode_f32(request.farend_b64, "farend_b64")
        try:
            out, _ = process_stream(mic, farend, state)
        except ValueError as exc:
            raise HTTPException(400, detail=str(exc))
        return StreamChunkResponse(out_b64=_encode_f32(out), n_samples=out.shape[0])

    @app.delete("/streams/{stream_id}", response_model=StreamCloseResponse)
    def close_stream(stream_id: str) -> StreamCloseResponse:
        with lock:
            state = streams.pop(stream_id, None)
        if state is None:
            raise HTTPException(404, detail=f"no open stream with id {stream_id}")
        return StreamCloseResponse(closed=True)

    return app


app = create_app()
