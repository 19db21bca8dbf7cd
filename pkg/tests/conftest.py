from __future__ import annotations

from pathlib import Path

import pytest

from vlogsmith.providers.mock import encode_mock, mock_providers
from vlogsmith.store import AssetStore

FIXTURE = Path(__file__).resolve().parents[1] / "src/vlogsmith/resources/benchmark_mini"
GOLDEN = Path(__file__).resolve().parent / "golden/benchmark_mini"


def reference_bytes(anchor: int = 7) -> bytes:
    return encode_mock({"kind": "image", "anchor_seed": anchor, "feature_seed": 0, "mix": [1.0, 0.0, 0.0],
                        "text": "", "width": 512, "height": 768})


@pytest.fixture
def store(tmp_path):
    return AssetStore(tmp_path / "store")


@pytest.fixture
def reference(store):
    return store.put(reference_bytes(), "image", width=512, height=768)


@pytest.fixture
def providers(store):
    return mock_providers(store, seed=1)


@pytest.fixture
def reference_file(tmp_path):
    p = tmp_path / "reference.img"
    p.write_bytes(reference_bytes())
    return p
