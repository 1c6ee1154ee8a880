import torch

import pytest

from maskvid.prompt import PromptEncoder, fnv1a_64, text_to_ids


def reference_fnv1a(word: str) -> int:
    """Independent restatement of the hash for cross-checking."""
    h = 14695981039346656037
    for b in word.encode("utf-8"):
        h = ((h ^ b) * 1099511628211) % (1 << 64)
    return h


def make_encoder(seed=0, text_vocab=64, text_channels=16, text_len=8, channels=32):
    torch.manual_seed(seed)
    enc = PromptEncoder(text_vocab, text_channels, text_len, channels)
    for p in enc.parameters():
        p.data.normal_(generator=torch.Generator().manual_seed(seed))
    return enc


def test_hash_matches_reference():
    for word in ("a", "red", "square", "Flying", "éclair"):
        assert fnv1a_64(word) == reference_fnv1a(word)


def test_empty_string_gives_pad_rows():
    ids = text_to_ids("", 64, 8)
    assert ids.tolist() == [64] * 8  # pad id is the table's extra row


def test_identical_strings_identical_ids():
    a = text_to_ids("A Red Square", 64, 8)
    b = text_to_ids("a red square", 64, 8)
    assert torch.equal(a, b)  # lowercased before hashing


def test_long_prompt_truncated_to_k():
    words = "one two three four five six seven eight nine ten"
    ids = text_to_ids(words, 64, 8)
    expected = [fnv1a_64(w) % 64 for w in words.split()[:8]]
    assert ids.tolist() == expected


def test_embed_text_shape_and_determinism():
    enc = make_encoder()
    ids = text_to_ids("a red square moving east", 64, 8).unsqueeze(0)
    a = enc.embed_text(ids)
    b = enc.embed_text(ids.clone())
    assert a.shape == (1, 8, 32)
    assert torch.equal(a, b)


def test_zero_action_mlp_gives_zero_rows():
    enc = make_encoder()
    with torch.no_grad():
        for layer in (enc.action_in, enc.action_out):
            layer.weight.zero_()
            layer.bias.zero_()
    out = enc.embed_action(torch.rand(2, 3, 2), frames=3)
    assert torch.equal(out, torch.zeros(2, 3, 32))


def test_identical_actions_identical_rows():
    enc = make_encoder()
    track = torch.tensor([[[0.1, 0.5], [0.1, 0.5], [0.2, 0.5]]])
    out = enc.embed_action(track, frames=3)
    assert torch.equal(out[0, 0], out[0, 1])
    assert not torch.equal(out[0, 0], out[0, 2])


def test_action_length_mismatch_rejected():
    enc = make_encoder()
    with pytest.raises(ValueError, match="does not match frame count"):
        enc.embed_action(torch.rand(1, 2, 2), frames=3)


def test_prompt_shape_all_combinations():
    enc = make_encoder()
    ids = text_to_ids("a red square", 64, 8).unsqueeze(0)
    actions = torch.rand(1, 5, 2)
    for text in (ids, None):
        for act in (actions, None):
            prompt = enc(1, 5, text, act)
            assert prompt.shape == (1, 5, 9, 32)
            assert torch.isfinite(prompt).all()


def test_drop_overrides_everything():
    enc = make_encoder()
    ids = text_to_ids("a red square moving east", 64, 8).unsqueeze(0)
    actions = torch.rand(1, 4, 2)
    drop = torch.tensor([True])
    dropped = enc(1, 4, ids, actions, drop=drop)
    null = enc.null_prompt(1, 4)
    assert torch.equal(dropped, null)
    other = enc(1, 4, None, None, drop=drop)
    assert torch.equal(dropped, other)  # independent of the inputs


def test_absent_action_uses_null_row():
    enc = make_encoder()
    ids = text_to_ids("a red square", 64, 8).unsqueeze(0)
    prompt = enc(1, 3, ids, None)
    text_rows = enc.embed_text(ids)
    assert torch.equal(prompt[0, 0, :8], text_rows[0])
    assert torch.equal(prompt[0, 2, 8], enc.null_action)


def test_absent_text_uses_null_rows():
    enc = make_encoder()
    actions = torch.rand(1, 3, 2)
    prompt = enc(1, 3, None, actions)
    assert torch.equal(prompt[0, 1, :8], enc.null_text)


def test_per_sample_action_presence():
    enc = make_encoder()
    actions = torch.rand(2, 3, 2)
    present = torch.tensor([True, False])
    prompt = enc(2, 3, None, actions, action_present=present)
    assert torch.equal(prompt[1, 0, 8], enc.null_action)
    assert not torch.equal(prompt[0, 0, 8], enc.null_action)
