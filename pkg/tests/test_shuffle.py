import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shuffledp import crypto
from shuffledp import shuffle as sh
from shuffledp.errors import InputError, ProtocolAbort


@pytest.mark.parametrize("r", [2, 3, 4, 5, 7])
def test_partition_schedule(r):
    sched = sh.partition_schedule(r)
    t = r // 2 + 1
    assert len(sched) == math.comb(r, t) == sh.ShuffleConfig(r).rounds
    for hiders, seekers in sched:
        assert len(hiders) == t and set(hiders) | set(seekers) == set(range(r))
    # every minority coalition is entirely among the seekers in some round
    for coalition in map(set, itertools.combinations(range(r), r - t)):
        assert any(coalition <= set(s) for _, s in sched)


def test_config_validation():
    with pytest.raises(InputError):
        sh.ShuffleConfig(1)
    with pytest.raises(InputError):
        sh.ShuffleConfig(3, ell=65)


def test_streams_are_independent_and_reproducible():
    a, b = sh.Streams(5), sh.Streams(5)
    assert a.party(0, "perm").integers(0, 2**63) == b.party(0, "perm").integers(0, 2**63)
    x = sh.Streams(5)
    assert x.party(0, "perm").integers(0, 2**63) != x.party(1, "perm").integers(0, 2**63)
    assert sh.Streams(5).party(0, "mask").integers(0, 2**63) != sh.Streams(6).party(0, "mask").integers(0, 2**63)
    assert sh.party_name(sh.SERVER) == "server" and sh.party_name(2) == "shuffler:2"


def test_agreed_permutation():
    p = sh.agreed_permutation(9, 10)
    assert sorted(p.tolist()) == list(range(10))
    assert np.array_equal(p, sh.agreed_permutation(9, 10))
    blocked = sh.agreed_permutation(9, 12, block=3)
    assert all(sorted(blocked[i:i + 3].tolist()) == list(range(i, i + 3)) for i in range(0, 12, 3))


def test_fakes_per_shuffler():
    assert sh.fakes_per_shuffler(10, 3) == [4, 3, 3]
    assert sum(sh.fakes_per_shuffler(1001, 7)) == 1001
    with pytest.raises(InputError):
        sh.fakes_per_shuffler(-1, 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.lists(st.integers(0, 2**64 - 1), min_size=1, max_size=25), st.integers(0, 2**31),
       st.integers(1, 64))
def test_oblivious_shuffle_preserves_multiset(r, values, seed, ell):
    v = np.array([x % (1 << ell) for x in values], dtype=np.uint64)
    cfg = sh.ShuffleConfig(r, ell)
    streams = sh.Streams(seed)
    out = sh.oblivious_shuffle(sh.share_state(v, cfg, streams), cfg, streams)
    assert sorted(sh.reveal(out).tolist()) == sorted(v.tolist())


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.lists(st.integers(0, 2**64 - 1), min_size=1, max_size=25), st.integers(0, 2**31))
def test_eos_preserves_multiset(r, values, seed):
    v = np.array(values, dtype=np.uint64)
    cfg = sh.ShuffleConfig(r)
    scheme = crypto.IdentityScheme()
    streams = sh.Streams(seed)
    out = sh.eos(sh.share_state(v, cfg, streams, scheme), cfg, scheme, streams)
    assert sum(isinstance(c, crypto.CipherVector) for c in out.columns) == 1
    assert sorted(sh.reveal(out, scheme).tolist()) == sorted(v.tolist())


def test_eos_rejects_bad_states():
    cfg = sh.ShuffleConfig(3)
    streams = sh.Streams(0)
    plain = sh.share_state(np.arange(4), cfg, streams)
    with pytest.raises(ProtocolAbort):
        sh.eos(plain, cfg, crypto.IdentityScheme(), streams)
    enc = sh.share_state(np.arange(4), cfg, streams, crypto.IdentityScheme())
    with pytest.raises(ProtocolAbort):
        sh.oblivious_shuffle(enc, cfg, streams)
    with pytest.raises(ProtocolAbort):
        sh.ShuffleState(64, [np.zeros(3, np.uint64), np.zeros(4, np.uint64)])
    with pytest.raises(ProtocolAbort):
        sh.oblivious_shuffle(sh.share_state(np.arange(4), sh.ShuffleConfig(4), streams), cfg, streams)
    with pytest.raises(InputError):
        sh.reveal(enc)


def test_shuffle_transcript_structure():
    cfg = sh.ShuffleConfig(5)
    t = sh.Transcript()
    streams = sh.Streams(1)
    sh.oblivious_shuffle(sh.share_state(np.arange(8), cfg, streams), cfg, streams, t)
    assert t.rounds_of_kind("perm_seed") == set(range(1, cfg.rounds + 1))
    # seekers never receive the permutation seed
    for rnd, (hiders, seekers) in enumerate(cfg.schedule, start=1):
        got = {m.recipient for m in t.messages if m.round == rnd and m.kind == "perm_seed"}
        assert got == {sh.party_name(h) for h in hiders[1:]}
    assert all(m.payload is None for m in t.messages)
    assert sum(t.bytes_sent().values()) == sum(m.byte_length for m in t.messages)


def test_transcript_disabled_and_dump(tmp_path):
    t = sh.Transcript(enabled=False)
    t.send(0, "a", "b", "share", b"xx")
    assert t.messages == []
    t = sh.Transcript(keep_payloads=False)
    t.send(0, "a", "server", "share", b"xx")
    t.send(0, "a", "b", "share", b"yy")
    assert t.messages[0].payload == b"xx" and t.messages[1].payload is None
    t.dump(tmp_path / "t.jsonl")
    recs = sh.Transcript.load_records(tmp_path / "t.jsonl")
    assert recs == t.records() and recs[0]["byte_length"] == 2


@pytest.mark.parametrize("onion", [crypto.TransparentOnion(), crypto.X25519Onion()])
def test_sequential_shuffle(onion):
    streams = sh.Streams(3)
    keys = sh.onion_keys(3, streams, onion)
    env_rng = streams.party(sh.USERS, "onion")
    payloads = [bytes([i]) for i in range(20)]
    envs = [onion.encrypt(p, [k[1] for k in keys], env_rng) for p in payloads]
    t = sh.Transcript()
    out = sh.sequential_shuffle(envs, keys, [1, 0, 2], streams, onion=onion,
                                fake_payloads=lambda c, rng: [b"\xff"] * c, transcript=t)
    assert sorted(out) == sorted(payloads + [b"\xff"] * 3)
    assert [m.recipient for m in t.messages] == ["shuffler:1", "shuffler:2", "server"]


def test_sequential_shuffle_aborts_on_wrong_key():
    onion = crypto.TransparentOnion()
    streams = sh.Streams(3)
    keys = sh.onion_keys(2, streams, onion)
    bad = [onion.encrypt(b"x", [keys[1][1], keys[0][1], keys[2][1]])]
    with pytest.raises(ProtocolAbort, match="layer 0"):
        sh.sequential_shuffle(bad, keys, 0, streams, onion=onion)
    short = [onion.encrypt(b"x", [keys[0][1]])]
    with pytest.raises(ProtocolAbort, match="layer 0"):
        sh.sequential_shuffle(short, keys, 0, streams, onion=onion)
    with pytest.raises(InputError):
        sh.sequential_shuffle([], keys, 1, streams, onion=onion)


def test_residue_bytes_width():
    assert len(sh.residue_bytes(np.arange(5), 64)) == 40
    assert len(sh.residue_bytes(np.arange(5), 12)) == 10
