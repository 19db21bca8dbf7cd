from __future__ import annotations

import base64
import json

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlogsmith.providers import http as H
from vlogsmith.providers.base import (
    AuthError,
    ChatRequest,
    ConfigError,
    MalformedOutput,
    Part,
    PreconditionError,
    ProviderConfig,
    ProviderRejected,
    ProviderTimeout,
    RetryPolicy,
    TokenBucket,
    TransportError,
    call_with_retry,
)
from vlogsmith.providers.mock import (
    MockChatModel,
    MockEmbedder,
    MockImageEditor,
    MockPoseEstimator,
    MockSpeechSynthesizer,
    MockVideoAnalyzer,
    MockVideoGenerator,
    decode_mock,
    make_mock_video,
    speech_duration,
)

PNG = b"\x89PNG\r\n\x1a\n" + b"\x00" * 16


def text_request(text="hello", **kw):
    return ChatRequest(system="sys", parts=(Part(text=text),), **kw)


# -- config -------------------------------------------------------------------

def test_image_edit_defaults():
    cfg = ProviderConfig()
    assert (cfg.inference_steps, cfg.guidance_scale, cfg.width, cfg.height) == (20, 3.5, 768, 1360)


@pytest.mark.parametrize("kw", [{"inference_steps": 0}, {"guidance_scale": 0}, {"timeout": 0}])
def test_config_invariants(kw):
    with pytest.raises(ConfigError):
        ProviderConfig(**kw)


def test_part_carries_exactly_one_payload(reference):
    with pytest.raises(PreconditionError):
        Part()
    with pytest.raises(PreconditionError):
        Part(text="x", image=reference)


# -- retry and rate limiting ----------------------------------------------------

class Flaky:
    def __init__(self, errors, result="ok"):
        self.errors = list(errors)
        self.calls = 0
        self.result = result

    def __call__(self):
        self.calls += 1
        if self.errors:
            raise self.errors.pop(0)
        return self.result


def test_retry_recovers_from_transient_errors():
    fn = Flaky([TransportError("a"), ProviderTimeout("b")])
    sleeps = []
    assert call_with_retry(fn, RetryPolicy(3, 0.5), sleep=sleeps.append) == "ok"
    assert fn.calls == 3 and sleeps == [0.5, 1.0]


def test_retry_never_retries_fatal_errors():
    fn = Flaky([AuthError("no")])
    with pytest.raises(AuthError):
        call_with_retry(fn, RetryPolicy(5), sleep=lambda s: None)
    assert fn.calls == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10))
def test_total_attempts_bounded(max_attempts, failures):
    fn = Flaky([TransportError("x")] * failures)
    try:
        call_with_retry(fn, RetryPolicy(max_attempts, 0.0), sleep=lambda s: None)
    except TransportError:
        assert failures >= max_attempts
    assert fn.calls == min(failures + 1, max_attempts)


def test_backoff_is_capped():
    p = RetryPolicy(10, 1.0, 4.0)
    assert [p.delay(i) for i in range(1, 6)] == [1.0, 2.0, 4.0, 4.0, 4.0]


def test_token_bucket_waits_when_empty():
    now = [0.0]
    slept = []

    def sleep(s):
        slept.append(s)
        now[0] += s

    bucket = TokenBucket(2.0, 2, clock=lambda: now[0], sleep=sleep)
    for _ in range(4):
        bucket.acquire()
    assert slept == [0.5, 0.5]


# -- mocks ----------------------------------------------------------------------

def test_pass_table_and_determinism():
    chat = MockChatModel(7, table="pass")
    assert chat.chat(text_request()).text == "PASS"
    a, b = MockChatModel(7), MockChatModel(7)
    req = text_request("write", schema_id="story", route="story.generator", hints={"theme": "x"})
    assert a.chat(req).text == b.chat(req).text


def test_empty_parts_rejected():
    with pytest.raises(PreconditionError):
        MockChatModel().chat(ChatRequest(system="s", parts=()))


def test_scripted_replies_repeat_last():
    chat = MockChatModel(script={"r": ["one", "two"]})
    assert [chat.chat(text_request(route="r")).text for _ in range(3)] == ["one", "two", "two"]
    assert chat.calls("r") == 3


def test_edit_image_deterministic_and_prompt_sensitive(store, reference):
    ed = MockImageEditor(store, seed=1)
    a = ed.edit_image("style A", reference)
    assert a == MockImageEditor(store, seed=1).edit_image("style A", reference)
    assert a.content_hash != ed.edit_image("style B", reference).content_hash
    assert (a.width, a.height) == (768, 1360)
    assert decode_mock(store.get(a))["steps"] == 20


def test_video_generation_contract(store, reference):
    gen = MockVideoGenerator(store, seed=1)
    v = gen.image_to_video("walk", reference)
    assert v == MockVideoGenerator(store, seed=1).image_to_video("walk", reference)
    assert v.duration > 0 and v.kind == "video"
    assert v.content_hash != gen.image_to_video("run", reference).content_hash
    with pytest.raises(PreconditionError):
        gen.image_to_video("walk", v)


@pytest.mark.parametrize("words,expected", [(1, 1.0), (16, 1.0), (17, 1.02), (50, 3.0)])
def test_speech_duration_formula(store, words, expected):
    tts = MockSpeechSynthesizer(store)
    ref = tts.text_to_speech(" ".join(["word"] * words))
    assert ref.duration == pytest.approx(expected, abs=1e-12)
    assert speech_duration(" ".join(["w"] * words)) == ref.duration


def test_empty_speech_text(store):
    with pytest.raises(PreconditionError):
        MockSpeechSynthesizer(store).text_to_speech("  ")


def test_embeddings_unit_norm_and_stable(store, reference):
    emb = MockEmbedder(store, 64)
    for v in (emb.embed_image(reference), emb.embed_text("a walk by the river")):
        assert len(v) == 64
        assert abs(np.linalg.norm(v) - 1.0) < 1e-9
    assert emb.embed_image(reference) == emb.embed_image(reference)


def test_pose_contract(store, reference):
    pose = MockPoseEstimator(store, 17)
    pts = pose.estimate_pose(reference)
    assert len(pts) == 17 and all(0 <= x <= 1 and 0 <= y <= 1 for x, y in pts)
    assert MockPoseEstimator(store, 17, unavailable=[reference.content_hash]).estimate_pose(reference) == []


def test_constant_video_has_zero_flow(store):
    v = make_mock_video(store, [5] * 8)
    an = MockVideoAnalyzer(store)
    assert an.estimate_flow(v) == [0.0] * 7
    scores = an.score_frames(v, "aesthetic")
    assert len(scores) == 8 and all(0 <= s <= 1 for s in scores)


def test_undecodable_video(store):
    ref = store.put(b"not a video", "video", width=1, height=1, duration=1.0)
    with pytest.raises(MalformedOutput):
        MockVideoAnalyzer(store).estimate_flow(ref)


# -- http adapters ----------------------------------------------------------------

def adapter(cls, handler, store, **cfg):
    config = ProviderConfig(name="acme", endpoint="https://svc.test", model_name="m1",
                            retry=RetryPolicy(3, 0.0), **cfg)
    client = httpx.Client(transport=httpx.MockTransport(handler))
    extra = (64,) if cls is H.HttpEmbedder else ()
    return cls(config, store, *extra, client=client, sleep=lambda s: None)


def test_credential_env_name():
    assert H.credential_env("acme-chat") == "PV_ACME_CHAT_KEY"


def test_chat_adapter_sends_auth_and_images(store, reference, monkeypatch):
    monkeypatch.setenv("PV_ACME_KEY", "secret")
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "hi"}}],
                                         "usage": {"prompt_tokens": 3, "completion_tokens": 1}})

    chat = adapter(H.HttpChatModel, handler, store)
    resp = chat.chat(ChatRequest("sys", (Part(text="q"), Part(image=reference))))
    assert resp.text == "hi" and resp.prompt_tokens == 3
    assert seen["auth"] == "Bearer secret"
    content = seen["body"]["messages"][1]["content"]
    assert content[1]["type"] == "image_url" and content[1]["image_url"]["url"].startswith("data:")


@pytest.mark.parametrize("status,exc,calls", [(401, AuthError, 1), (400, ProviderRejected, 1),
                                              (503, TransportError, 3), (429, TransportError, 3)])
def test_status_mapping_and_retry(store, status, exc, calls):
    n = [0]

    def handler(request):
        n[0] += 1
        return httpx.Response(status, text="nope")

    chat = adapter(H.HttpChatModel, handler, store)
    with pytest.raises(exc):
        chat.chat(text_request())
    assert n[0] == calls


def test_timeout_is_retried(store):
    n = [0]

    def handler(request):
        n[0] += 1
        if n[0] < 3:
            raise httpx.ReadTimeout("slow", request=request)
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    assert adapter(H.HttpChatModel, handler, store).chat(text_request()).text == "ok"
    assert n[0] == 3


def test_image_editor_uses_configured_knobs(store, reference):
    seen = {}

    def handler(request):
        seen.update(json.loads(request.content))
        return httpx.Response(200, json={"data": base64.b64encode(PNG).decode()})

    ref = adapter(H.HttpImageEditor, handler, store).edit_image("make it watercolor", reference)
    assert (seen["width"], seen["height"], seen["num_inference_steps"], seen["guidance_scale"]) == (768, 1360, 20, 3.5)
    assert (ref.width, ref.height) == (768, 1360) and store.get(ref) == PNG


def test_image_editor_rejects_non_image_bytes(store, reference):
    handler = lambda r: httpx.Response(200, json={"data": base64.b64encode(b"garbage").decode()})
    with pytest.raises(MalformedOutput):
        adapter(H.HttpImageEditor, handler, store).edit_image("x", reference)


def test_embedder_normalizes_and_checks_dimension(store, reference):
    handler = lambda r: httpx.Response(200, json={"embedding": [2.0] + [0.0] * 63})
    emb = adapter(H.HttpEmbedder, handler, store)
    assert emb.embed_image(reference)[0] == pytest.approx(1.0)
    bad = adapter(H.HttpEmbedder, lambda r: httpx.Response(200, json={"embedding": [1.0, 2.0]}), store)
    with pytest.raises(MalformedOutput):
        bad.embed_text("hello")


def test_media_adapters(store, reference):
    audio = base64.b64encode(b"RIFF....").decode()
    handler = lambda r: httpx.Response(200, json={"data": audio, "duration": 2.5})
    assert adapter(H.HttpMusicGenerator, handler, store).text_to_music("piano").duration == 2.5
    assert adapter(H.HttpSpeechSynthesizer, handler, store).text_to_speech("hi").kind == "audio"
    v = adapter(H.HttpVideoGenerator, handler, store).image_to_video("walk", reference)
    assert v.kind == "video" and v.duration == 2.5
    no_dur = lambda r: httpx.Response(200, json={"data": audio})
    with pytest.raises(MalformedOutput):
        adapter(H.HttpMusicGenerator, no_dur, store).text_to_music("piano")


def test_pose_and_analyzer_adapters(store, reference):
    def handler(request):
        path = request.url.path
        if path == "/pose":
            return httpx.Response(200, json={"keypoints": [[1.5, -0.2], [0.3, 0.4]]})
        if path == "/flow":
            return httpx.Response(200, json={"flow": [0.1, 0.2]})
        if path == "/frame_scores":
            return httpx.Response(200, json={"scores": [0.5, 0.6, 0.7]})
        if path == "/frame_features":
            return httpx.Response(200, json={"features": [[1, 0], [0, 1]]})
        return httpx.Response(200, json={"score": 0.93})

    assert adapter(H.HttpPoseEstimator, handler, store).estimate_pose(reference) == [(1.0, 0.0), (0.3, 0.4)]
    video = store.put(b"video", "video", width=1, height=1, duration=1.0)
    an = adapter(H.HttpVideoAnalyzer, handler, store)
    assert an.estimate_flow(video) == [0.1, 0.2]
    assert an.embed_frames(video, "subject") == [[1.0, 0.0], [0.0, 1.0]]
    assert an.interpolation_smoothness(video) is None
    an2 = adapter(H.HttpVideoAnalyzer, handler, store, options={"interpolation": True})
    assert an2.interpolation_smoothness(video) == 0.93


def test_missing_endpoint(store):
    with pytest.raises(PreconditionError):
        H.HttpChatModel(ProviderConfig(name="x"), store)
