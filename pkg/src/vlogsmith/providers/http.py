"""JSON-over-HTTP adapters for remote model services.

Chat uses the widely supported ``/chat/completions`` shape. Media and
measurement services share one small convention: POST a JSON body, get a
JSON body back, binary payloads base64-encoded under ``data``.
"""

from __future__ import annotations

import base64
import logging
import os
import time
from typing import Any, Sequence

import httpx
import numpy as np

from ..domain import AssetRef
from ..store import AssetStore
from .base import (
    AuthError,
    ChatRequest,
    ChatResponse,
    MalformedOutput,
    PreconditionError,
    ProviderConfig,
    ProviderRejected,
    ProviderTimeout,
    TokenBucket,
    TransportError,
    call_with_retry,
    check_chat_request,
)

log = logging.getLogger(__name__)


def credential_env(provider: str) -> str:
    return "PV_" + "".join(c if c.isalnum() else "_" for c in provider.upper()) + "_KEY"


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _sniff_image(data: bytes) -> bool:
    return data.startswith(b"\x89PNG\r\n\x1a\n") or data.startswith(b"\xff\xd8\xff") or data[8:12] == b"WEBP"


class HttpAdapter:
    """Shared transport: auth header, timeout, retries, optional token bucket."""

    def __init__(self, config: ProviderConfig, *, client: httpx.Client | None = None, sleep=time.sleep):
        if not config.endpoint:
            raise PreconditionError(f"provider {config.name} has no endpoint configured")
        self.config = config
        self.name = f"{config.name}:{config.model_name}" if config.model_name else config.name
        self._client = client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep
        self._bucket = TokenBucket(config.rate_per_second, config.burst, sleep=sleep) if config.rate_per_second else None

    def _headers(self) -> dict[str, str]:
        env = self.config.auth_env or credential_env(self.config.name)
        key = os.environ.get(env)
        return {"Authorization": f"Bearer {key}"} if key else {}

    def _post_once(self, path: str, body: dict[str, Any]) -> dict[str, Any]:
        if self._bucket is not None:
            self._bucket.acquire()
        url = self.config.endpoint.rstrip("/") + path
        try:
            resp = self._client.post(url, json=body, headers=self._headers(), timeout=self.config.timeout)
        except httpx.TimeoutException as exc:
            raise ProviderTimeout(f"{self.name}: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransportError(f"{self.name}: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"{self.name}: HTTP {resp.status_code}")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"{self.name}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderRejected(f"{self.name}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            out = resp.json()
        except ValueError as exc:
            raise MalformedOutput(f"{self.name}: response is not JSON") from exc
        if not isinstance(out, dict):
            raise MalformedOutput(f"{self.name}: response is not a JSON object")
        return out

    def post(self, path: str, body: dict[str, Any]) -> dict[str, Any]:
        def warn(attempt: int, exc: Exception) -> None:
            log.warning("%s attempt %d failed: %s", self.name, attempt, exc)

        return call_with_retry(lambda: self._post_once(path, body), self.config.retry, sleep=self._sleep,
                               on_retry=warn)


class HttpChatModel(HttpAdapter):
    def __init__(self, config: ProviderConfig, store: AssetStore, **kw):
        super().__init__(config, **kw)
        self.store = store

    def chat(self, request: ChatRequest) -> ChatResponse:
        check_chat_request(request)
        content = []
        for part in request.parts:
            if part.text is not None:
                content.append({"type": "text", "text": part.text})
            elif part.image is not None:
                data = self.store.get(part.image)
                mime = "image/png" if data.startswith(b"\x89PNG") else "image/jpeg"
                content.append({"type": "image_url", "image_url": {"url": f"data:{mime};base64,{_b64(data)}"}})
            else:
                data = self.store.get(part.video)
                content.append({"type": "video_url", "video_url": {"url": f"data:video/mp4;base64,{_b64(data)}"}})
        body = {
            "model": self.config.model_name,
            "messages": [{"role": "system", "content": request.system}, {"role": "user", "content": content}],
        }
        t0 = time.monotonic()
        out = self.post("/chat/completions", body)
        try:
            text = out["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedOutput(f"{self.name}: no message content in response") from exc
        usage = out.get("usage") or {}
        return ChatResponse(
            text=text,
            model=self.name,
            latency_s=time.monotonic() - t0,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
        )


class _MediaAdapter(HttpAdapter):
    def __init__(self, config: ProviderConfig, store: AssetStore, **kw):
        super().__init__(config, **kw)
        self.store = store

    def _payload(self, out: dict[str, Any]) -> bytes:
        try:
            return base64.b64decode(out["data"], validate=True)
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedOutput(f"{self.name}: missing or invalid base64 'data'") from exc

    def _duration(self, out: dict[str, Any]) -> float:
        d = out.get("duration")
        if not isinstance(d, (int, float)) or d <= 0:
            raise MalformedOutput(f"{self.name}: response lacks a positive duration")
        return float(d)


class HttpImageEditor(_MediaAdapter):
    def edit_image(self, prompt: str, reference: AssetRef, *, context: Sequence[str] = ()) -> AssetRef:
        if reference.kind != "image":
            raise PreconditionError("edit_image needs an image reference")
        cfg = self.config
        body = {
            "model": cfg.model_name,
            "prompt": prompt,
            "context": list(context),
            "image": _b64(self.store.get(reference)),
            "num_inference_steps": cfg.inference_steps,
            "guidance_scale": cfg.guidance_scale,
            "width": cfg.width,
            "height": cfg.height,
        }
        data = self._payload(self.post("/edit", body))
        if not _sniff_image(data):
            raise MalformedOutput(f"{self.name}: returned bytes are not an image")
        return self.store.put(data, "image", width=cfg.width, height=cfg.height)


class HttpVideoGenerator(_MediaAdapter):
    def image_to_video(self, prompt: str, keyframe: AssetRef) -> AssetRef:
        if keyframe.kind != "image":
            raise PreconditionError("image_to_video needs an image keyframe")
        out = self.post("/i2v", {"model": self.config.model_name, "prompt": prompt,
                                 "image": _b64(self.store.get(keyframe))})
        return self.store.put(self._payload(out), "video", width=keyframe.width, height=keyframe.height,
                              duration=self._duration(out))


class HttpMusicGenerator(_MediaAdapter):
    def text_to_music(self, prompt: str) -> AssetRef:
        if not prompt.strip():
            raise PreconditionError("music prompt must be nonempty")
        out = self.post("/t2m", {"model": self.config.model_name, "prompt": prompt})
        return self.store.put(self._payload(out), "audio", duration=self._duration(out))


class HttpSpeechSynthesizer(_MediaAdapter):
    def text_to_speech(self, text: str, voice_reference: AssetRef | None = None) -> AssetRef:
        if not text.strip():
            raise PreconditionError("speech text must be nonempty")
        body: dict[str, Any] = {"model": self.config.model_name, "text": text}
        if voice_reference is not None:
            body["voice"] = _b64(self.store.get(voice_reference))
        out = self.post("/tts", body)
        return self.store.put(self._payload(out), "audio", duration=self._duration(out))


def _unit(vec: Any, dim: int, who: str) -> list[float]:
    try:
        v = np.asarray(vec, dtype=float)
    except (TypeError, ValueError) as exc:
        raise MalformedOutput(f"{who}: embedding is not numeric") from exc
    if v.shape != (dim,) or not np.all(np.isfinite(v)):
        raise MalformedOutput(f"{who}: expected a finite {dim}-vector")
    n = np.linalg.norm(v)
    if n == 0:
        raise MalformedOutput(f"{who}: zero embedding")
    return [float(x) for x in v / n]


class HttpEmbedder(_MediaAdapter):
    def __init__(self, config: ProviderConfig, store: AssetStore, dim: int, **kw):
        super().__init__(config, store, **kw)
        self.dim = dim

    def embed_image(self, asset: AssetRef) -> list[float]:
        out = self.post("/embed", {"model": self.config.model_name, "image": _b64(self.store.get(asset))})
        return _unit(out.get("embedding"), self.dim, self.name)

    def embed_text(self, text: str) -> list[float]:
        if not text.strip():
            raise PreconditionError("text to embed must be nonempty")
        out = self.post("/embed", {"model": self.config.model_name, "text": text})
        return _unit(out.get("embedding"), self.dim, self.name)


class HttpPoseEstimator(_MediaAdapter):
    def estimate_pose(self, asset: AssetRef) -> list[tuple[float, float]]:
        out = self.post("/pose", {"model": self.config.model_name, "image": _b64(self.store.get(asset))})
        pts = out.get("keypoints") or []
        try:
            return [(min(1.0, max(0.0, float(x))), min(1.0, max(0.0, float(y)))) for x, y in pts]
        except (TypeError, ValueError) as exc:
            raise MalformedOutput(f"{self.name}: malformed keypoints") from exc


class HttpVideoAnalyzer(_MediaAdapter):
    def _video(self, video: AssetRef) -> str:
        return _b64(self.store.get(video))

    def _floats(self, values: Any) -> list[float]:
        try:
            return [float(v) for v in values]
        except (TypeError, ValueError) as exc:
            raise MalformedOutput(f"{self.name}: expected a list of numbers") from exc

    def estimate_flow(self, video: AssetRef) -> list[float]:
        return self._floats(self.post("/flow", {"video": self._video(video)}).get("flow"))

    def score_frames(self, video: AssetRef, criterion: str) -> list[float]:
        out = self.post("/frame_scores", {"video": self._video(video), "criterion": criterion})
        return self._floats(out.get("scores"))

    def embed_frames(self, video: AssetRef, space: str) -> list[list[float]]:
        out = self.post("/frame_features", {"video": self._video(video), "space": space})
        feats = out.get("features")
        if not isinstance(feats, list):
            raise MalformedOutput(f"{self.name}: expected a list of feature vectors")
        return [self._floats(f) for f in feats]

    def interpolation_smoothness(self, video: AssetRef) -> float | None:
        if not self.config.options.get("interpolation"):
            return None
        out = self.post("/motion_smoothness", {"video": self._video(video)})
        score = out.get("score")
        if not isinstance(score, (int, float)):
            raise MalformedOutput(f"{self.name}: missing motion smoothness score")
        return float(score)
