from __future__ import annotations

import json

import pytest

from vlogsmith.store import AssetNotFound, AssetStore, IntegrityError, atomic_write, sha256_hex


def test_put_layout_and_sidecar(tmp_path):
    store = AssetStore(tmp_path)
    ref = store.put(b"hello", "audio", duration=1.5)
    assert ref.content_hash == sha256_hex(b"hello")
    path = tmp_path / "assets" / ref.content_hash[:2] / ref.content_hash
    assert path.read_bytes() == b"hello"
    meta = json.loads(path.with_name(path.name + ".meta.json").read_text())
    assert meta["kind"] == "audio" and meta["duration"] == 1.5 and meta["size"] == 5


def test_put_is_idempotent(tmp_path):
    store = AssetStore(tmp_path)
    assert store.put(b"x", "image", width=1, height=1) == store.put(b"x", "image", width=1, height=1)


def test_tamper_detected(tmp_path):
    store = AssetStore(tmp_path)
    ref = store.put(b"original", "image", width=1, height=1)
    store.path_of(ref).write_bytes(b"tampered")
    with pytest.raises(IntegrityError):
        store.get(ref)


def test_missing_asset(tmp_path):
    store = AssetStore(tmp_path)
    ref = store.put(b"gone", "image", width=1, height=1)
    store.path_of(ref).unlink()
    assert not store.exists(ref)
    with pytest.raises(AssetNotFound):
        store.get(ref)


def test_unknown_kind(tmp_path):
    with pytest.raises(ValueError):
        AssetStore(tmp_path).put(b"x", "text")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "sub" / "doc.json"
    atomic_write(target, b"1")
    atomic_write(target, b"2")
    assert target.read_bytes() == b"2"
    assert [p.name for p in target.parent.iterdir()] == ["doc.json"]
