import numpy as np
import pytest

from maskvid import formats


def test_video_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(3, 8, 16, 3), dtype=np.uint8)
    path = tmp_path / "clip.dvid"
    formats.write_video(path, pixels)
    assert np.array_equal(formats.read_video(path), pixels)


def test_tokens_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    tokens = rng.integers(0, 513, size=(2, 4, 4), dtype=np.int32)
    path = tmp_path / "grid.dtok"
    formats.write_tokens(path, tokens, 512)
    back, vocab = formats.read_tokens(path)
    assert vocab == 512
    assert np.array_equal(back, tokens)


def test_codebook_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    vectors = rng.random((16, 48), dtype=np.float32)
    path = tmp_path / "cb.dcbk"
    formats.write_codebook(path, vectors, 4)
    back, patch = formats.read_codebook(path)
    assert patch == 4
    assert np.array_equal(back, vectors)  # bitwise


def test_actions_round_trip(tmp_path):
    actions = np.array([[0.1, 0.5], [-0.1, 0.25]], dtype=np.float32)
    path = tmp_path / "track.dact"
    formats.write_actions(path, actions)
    assert np.array_equal(formats.read_actions(path), actions)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "clip.dvid"
    formats.write_video(path, np.zeros((1, 4, 4, 3), dtype=np.uint8))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(formats.FormatError, match="bad magic"):
        formats.read_video(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "grid.dtok"
    formats.write_tokens(path, np.zeros((1, 2, 2), dtype=np.int32), 4)
    path.write_bytes(path.read_bytes()[:-2])
    with pytest.raises(formats.FormatError, match="payload"):
        formats.read_tokens(path)


def test_wrong_version_rejected(tmp_path):
    path = tmp_path / "track.dact"
    formats.write_actions(path, np.zeros((1, 2), dtype=np.float32))
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(formats.FormatError, match="version"):
        formats.read_actions(path)


def test_token_overflow_rejected(tmp_path):
    with pytest.raises(formats.FormatError, match="u16"):
        formats.write_tokens(tmp_path / "x.dtok", np.full((1, 1, 1), 70000), 70001)
