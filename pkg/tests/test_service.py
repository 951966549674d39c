"""Tests for the HTTP service: JSON/base64 API over the core package."""

import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import speech_like
from raes import __version__
from raes.audio import read_wav, write_wav
from raes.nn import forward, identity_mask_bundle, random_bundle, save_weights
from raes.pipeline import PipelineState, process_signals, process_stream
from raes.service import create_app
from raes.synth import build_corpus
from raes.targets import load_targets


def b64_f32(x) -> str:
    return base64.b64encode(np.asarray(x, dtype="<f4").tobytes()).decode()


def f32_from_b64(payload: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(payload), dtype="<f4")


def quantized(x) -> np.ndarray:
    """The float64 signal a server reconstructs from float32 transport."""
    return np.asarray(x, dtype=np.float32).astype(np.float64)


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app()) as c:
        yield c


@pytest.fixture(scope="module")
def identity_model_b64(tmp_path_factory):
    path = tmp_path_factory.mktemp("svc_model") / "identity.raes"
    save_weights(identity_mask_bundle(), path)
    return base64.b64encode(path.read_bytes()).decode()


@pytest.fixture(scope="module")
def random_model_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("svc_model_rand") / "random.raes"
    save_weights(random_bundle(17), path)
    return str(path)


@pytest.fixture(scope="module")
def synth_setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc_synth")
    corpus = build_corpus(root / "corpus", seed=5)
    return root, corpus


class TestHealth:
    def test_health_reports_ok_and_version(self, client):
        response = client.get("/health")
        assert response.status_code == 200
        assert response.json() == {"status": "ok", "version": __version__}


class TestProcess:
    def test_matches_local_pipeline_exactly(self, client, identity_model_b64, rng):
        mic = speech_like(0.8, rng)
        far = speech_like(0.8, rng)
        response = client.post("/process", json={
            "mic_b64": b64_f32(mic),
            "farend_b64": b64_f32(far),
            "weights_b64": identity_model_b64,
        })
        assert response.status_code == 200
        body = response.json()
        local = process_signals(quantized(mic), quantized(far), identity_mask_bundle())
        assert body["n_samples"] == len(local)
        assert np.array_equal(f32_from_b64(body["out_b64"]),
                              local.astype(np.float32))

    def test_af_only_needs_no_model(self, client, rng):
        mic = speech_like(0.5, rng)
        far = speech_like(0.5, rng)
        response = client.post("/process", json={
            "mic_b64": b64_f32(mic), "farend_b64": b64_f32(far), "af_only": True,
        })
        assert response.status_code == 200
        local = process_signals(quantized(mic), quantized(far), af_only=True)
        assert np.array_equal(f32_from_b64(response.json()["out_b64"]),
                              local.astype(np.float32))

    def test_missing_model_is_client_error(self, client, rng):
        mic = speech_like(0.2, rng)
        response = client.post("/process", json={
            "mic_b64": b64_f32(mic), "farend_b64": b64_f32(mic),
        })
        assert response.status_code == 400
        assert "model" in response.json()["detail"]

    def test_length_mismatch_is_client_error(self, client, identity_model_b64):
        response = client.post("/process", json={
            "mic_b64": b64_f32(np.zeros(256)),
            "farend_b64": b64_f32(np.zeros(128)),
            "weights_b64": identity_model_b64,
        })
        assert response.status_code == 400

    def test_invalid_base64_is_client_error(self, client, identity_model_b64):
        response = client.post("/process", json={
            "mic_b64": "!!!not-base64!!!",
            "farend_b64": b64_f32(np.zeros(128)),
            "weights_b64": identity_model_b64,
        })
        assert response.status_code == 400
        assert "base64" in response.json()["detail"]

    def test_corrupt_model_is_client_error(self, client, rng):
        mic = speech_like(0.2, rng)
        response = client.post("/process", json={
            "mic_b64": b64_f32(mic), "farend_b64": b64_f32(mic),
            "weights_b64": base64.b64encode(b"XXXXnot a model").decode(),
        })
        assert response.status_code == 400
        assert "invalid model" in response.json()["detail"]

    def test_both_model_sources_rejected(self, client, identity_model_b64,
                                         random_model_path, rng):
        mic = speech_like(0.2, rng)
        response = client.post("/process", json={
            "mic_b64": b64_f32(mic), "farend_b64": b64_f32(mic),
            "weights_b64": identity_model_b64,
            "weights_path": random_model_path,
        })
        assert response.status_code == 400
        assert "not both" in response.json()["detail"]


class TestStreams:
    def test_chunked_session_matches_local_stream(self, client, identity_model_b64, rng):
        mic = speech_like(0.6, rng)
        far = speech_like(0.6, rng)
        opened = client.post("/streams", json={"weights_b64": identity_model_b64})
        assert opened.status_code == 200
        stream_id = opened.json()["stream_id"]
        assert opened.json()["latency"] == 128
        assert opened.json()["sample_rate"] == 16000

        state = PipelineState(weights=identity_mask_bundle())
        split = len(mic) // 3
        collected = []
        local = []
        for lo, hi in [(0, split), (split, len(mic))]:
            response = client.post(f"/streams/{stream_id}", json={
                "mic_b64": b64_f32(mic[lo:hi]),
                "farend_b64": b64_f32(far[lo:hi]),
            })
            assert response.status_code == 200
            chunk = f32_from_b64(response.json()["out_b64"])
            assert response.json()["n_samples"] == hi - lo == len(chunk)
            collected.append(chunk)
            out, state = process_stream(quantized(mic[lo:hi]),
                                        quantized(far[lo:hi]), state)
            local.append(out.astype(np.float32))
        assert np.array_equal(np.concatenate(collected), np.concatenate(local))

        closed = client.delete(f"/streams/{stream_id}")
        assert closed.status_code == 200
        assert closed.json() == {"closed": True}

    def test_closed_stream_rejects_pushes(self, client, identity_model_b64):
        stream_id = client.post("/streams", json={
            "weights_b64": identity_model_b64,
        }).json()["stream_id"]
        client.delete(f"/streams/{stream_id}")
        response = client.post(f"/streams/{stream_id}", json={
            "mic_b64": b64_f32(np.zeros(64)),
            "farend_b64": b64_f32(np.zeros(64)),
        })
        assert response.status_code == 404

    def test_unknown_stream_is_404(self, client):
        assert client.delete("/streams/deadbeef").status_code == 404
        assert client.post("/streams/deadbeef", json={
            "mic_b64": b64_f32(np.zeros(64)),
            "farend_b64": b64_f32(np.zeros(64)),
        }).status_code == 404

    def test_af_only_stream_needs_no_model(self, client, rng):
        mic = speech_like(0.3, rng)
        opened = client.post("/streams", json={"af_only": True})
        assert opened.status_code == 200
        stream_id = opened.json()["stream_id"]
        response = client.post(f"/streams/{stream_id}", json={
            "mic_b64": b64_f32(mic), "farend_b64": b64_f32(mic),
        })
        assert response.status_code == 200
        client.delete(f"/streams/{stream_id}")

    def test_invalid_gate_confidence_rejected(self, client, identity_model_b64):
        response = client.post("/streams", json={
            "weights_b64": identity_model_b64,
            "dtd_gate_confidence": 0.3,
        })
        assert response.status_code == 400
        assert "confidence" in response.json()["detail"]

    def test_chunk_length_mismatch_rejected(self, client, identity_model_b64):
        stream_id = client.post("/streams", json={
            "weights_b64": identity_model_b64,
        }).json()["stream_id"]
        response = client.post(f"/streams/{stream_id}", json={
            "mic_b64": b64_f32(np.zeros(64)),
            "farend_b64": b64_f32(np.zeros(32)),
        })
        assert response.status_code == 400
        client.delete(f"/streams/{stream_id}")


class TestModelForward:
    def test_matches_local_forward_exactly(self, client, random_model_path, rng):
        features = rng.standard_normal((3, 2, 40, 32)).astype(np.float32)
        response = client.post("/model/forward", json={
            "features_b64": b64_f32(features.ravel()),
            "weights_path": random_model_path,
        })
        assert response.status_code == 200
        body = response.json()
        assert body["count"] == 3
        masks = f32_from_b64(body["masks_b64"]).reshape(3, 64)
        dtd = f32_from_b64(body["dtd_b64"]).reshape(3, 3)
        weights = random_bundle(17)
        for i in range(3):
            local = forward(features[i], weights)
            assert np.array_equal(masks[i], local.mask)
            assert np.array_equal(dtd[i], local.dtd)

    def test_wrong_feature_size_rejected(self, client, random_model_path):
        response = client.post("/model/forward", json={
            "features_b64": b64_f32(np.zeros(100)),
            "weights_path": random_model_path,
        })
        assert response.status_code == 400
        assert "2560" in response.json()["detail"]

    def test_model_required(self, client):
        response = client.post("/model/forward", json={
            "features_b64": b64_f32(np.zeros(2560)),
        })
        assert response.status_code == 400


@pytest.fixture(scope="module")
def dataset(client, synth_setup):
    root, corpus = synth_setup
    out = root / "records"
    config = {
        "farend_dirs": [str(corpus["farend"])],
        "nearend_dirs": [str(corpus["nearend"])],
        "count": 2,
        "seed": 13,
        "output_dir": str(out),
        "duration_s": 1.5,
        "nearend_silent_ratio": 0.0,
    }
    response = client.post("/synth", json={"config": config})
    assert response.status_code == 200
    return out, response.json()


class TestSynthEvalTargets:
    def test_synth_writes_dataset_and_summary(self, dataset):
        out, body = dataset
        assert body["count"] == 2
        assert body["files_written"] == 8
        assert (out / "manifest.jsonl").is_file()
        frames_per_record = (int(1.5 * 16000) - 128) // 64 + 1
        assert sum(body["label_histogram"].values()) == 2 * frames_per_record

    def test_synth_rejects_bad_config(self, client):
        response = client.post("/synth", json={"config": {"count": 1}})
        assert response.status_code == 400
        assert "missing required fields" in response.json()["detail"]

    def test_synth_names_missing_source_dir(self, client, synth_setup):
        root, corpus = synth_setup
        config = {
            "farend_dirs": [str(root / "nope")],
            "nearend_dirs": [str(corpus["nearend"])],
            "count": 1,
            "seed": 1,
            "output_dir": str(root / "x"),
        }
        response = client.post("/synth", json={"config": config})
        assert response.status_code == 400
        assert "nope" in response.json()["detail"]

    def test_eval_scores_processed_directory(self, client, dataset, tmp_path):
        out, _ = dataset
        processed = tmp_path / "processed"
        processed.mkdir()
        for record in ("record_00000", "record_00001"):
            write_wav(processed / f"{record}.wav", read_wav(out / record / "s.wav"))
        response = client.post("/eval", json={
            "manifest_path": str(out / "manifest.jsonl"),
            "processed_dir": str(processed),
        })
        assert response.status_code == 200
        report = response.json()["report"]
        assert report["overall"]["count"] == 2
        assert report["missing"] == []
        assert report["overall"]["mean_stoi"] == pytest.approx(1.0, abs=1e-6)

    def test_eval_missing_manifest_rejected(self, client):
        response = client.post("/eval", json={
            "manifest_path": "/nonexistent/manifest.jsonl",
            "processed_dir": "/tmp",
        })
        assert response.status_code == 400

    def test_targets_dump_roundtrip(self, client, dataset, tmp_path):
        out, _ = dataset
        dumps = tmp_path / "dumps"
        response = client.post("/dataset/targets", json={
            "manifest_path": str(out / "manifest.jsonl"),
            "out_dir": str(dumps),
        })
        assert response.status_code == 200
        written = response.json()["written"]
        assert len(written) == 2
        targets = load_targets(written[0])
        assert len(targets) == (int(1.5 * 16000) - 128) // 64 + 1

    def test_targets_missing_manifest_rejected(self, client):
        response = client.post("/dataset/targets", json={
            "manifest_path": "/nonexistent/manifest.jsonl",
        })
        assert response.status_code == 400


class TestBench:
    def test_reports_rt_and_complexity(self, client, random_model_path):
        response = client.post("/bench", json={
            "weights_path": random_model_path,
            "seconds": 10.0,
        })
        assert response.status_code == 200
        body = response.json()
        assert 0.0 < body["rt_factor"] < 1.0
        assert body["mflops_per_frame"] == pytest.approx(5.065315)
        assert body["parameters"] == 587_403
        assert body["model_bytes"] > 2_000_000

    def test_short_audio_rejected(self, client, random_model_path):
        response = client.post("/bench", json={
            "weights_path": random_model_path,
            "seconds": 1.0,
        })
        assert response.status_code == 400
        assert "at least 10" in response.json()["detail"]
