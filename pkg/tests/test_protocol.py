import math

import numpy as np
import pytest

from shuffledp import amplification as amp
from shuffledp import crypto
from shuffledp import mechanisms as mech
from shuffledp.errors import ConfigurationError, InputError, ResourceError
from shuffledp.hashing import enumerable_family
from shuffledp.protocol import (PeosConfig, debias, exact_epsilon, extract_view, hockey_stick, output_distribution,
                                peos_run, poisoning_resistance_check, privacy_loss_oracle, ss_run)


def test_noiseless_grr_recovers_histogram():
    g = np.random.default_rng(0)
    values = g.integers(0, 7, 500)
    cfg = PeosConfig(mech.GrrConfig(math.inf, 7), r=3, seed=4)
    f, t = peos_run(values, cfg)
    assert np.allclose(f, np.bincount(values, minlength=7) / 500, atol=1e-12)
    assert t.output is f


def test_noiseless_solh_with_paillier():
    kp = crypto.ahe_keygen(512, 64, np.random.default_rng(1))
    values = np.array([0, 1, 1, 2, 2, 2])
    cfg = PeosConfig(mech.SolhConfig(math.inf, 3, 3, hash_family=enumerable_family(4, 3, 3)), r=3,
                     scheme=crypto.PaillierScheme(kp), seed=2)
    decoded_ident = PeosConfig(cfg.mechanism, r=3, seed=2)
    f_real, t_real = peos_run(values, cfg)
    f_ident, t_ident = peos_run(values, decoded_ident)
    assert np.array_equal(t_real.tapes["server"]["report_index"], t_ident.tapes["server"]["report_index"])
    assert np.allclose(f_real, f_ident)


def test_fakes_are_debiased():
    g = np.random.default_rng(3)
    values = g.integers(0, 5, 2000)
    cfg = PeosConfig(mech.GrrConfig(math.inf, 5), n_r=300, seed=9, record=False)
    f, _ = peos_run(values, cfg)
    truth = np.bincount(values, minlength=5) / 2000
    # fakes add Multinomial noise of total 300/2000 around 1/d per bin
    assert np.abs(f - truth).max() < 0.03
    assert debias(np.full(4, 0.25), 100, 100, 4) == pytest.approx(np.full(4, 0.25))
    assert debias(np.array([0.5]), 100, 100, math.inf)[0] == pytest.approx(1.0)
    with pytest.raises(InputError):
        debias([0.1], 0, 1, 2)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        PeosConfig(mech.UeConfig(1.0, 4))
    with pytest.raises(ConfigurationError):
        PeosConfig(mech.GrrConfig(1.0, 4), n_r=-1)
    with pytest.raises(ConfigurationError):
        PeosConfig(mech.SolhConfig(1.0, 50, 5), ell=32)
    with pytest.raises(ConfigurationError):
        PeosConfig(mech.GrrConfig(1.0, 4), ell=32, scheme=crypto.IdentityScheme(64))
    with pytest.raises(InputError):
        peos_run([], PeosConfig(mech.GrrConfig(1.0, 4)))
    with pytest.raises(InputError):
        peos_run([5], PeosConfig(mech.GrrConfig(1.0, 4)))


def test_plaintext_and_encrypted_runs_coincide():
    values = np.random.default_rng(5).integers(0, 10, 300)
    m = mech.GrrConfig(1.0, 10)
    a, _ = peos_run(values, PeosConfig(m, r=4, n_r=50, seed=8, encrypt=True))
    b, _ = peos_run(values, PeosConfig(m, r=4, n_r=50, seed=8, encrypt=False))
    assert np.array_equal(a, b)


def test_transcript_upload_shape():
    values = np.arange(10) % 4
    cfg = PeosConfig(mech.GrrConfig(1.0, 4), r=5, n_r=7, seed=1)
    _, t = peos_run(values, cfg)
    ups = t.filter(lambda m: m.round == 0)
    assert len(ups) == 10 * 5
    per_user = {}
    for m in ups:
        per_user.setdefault(m.sender, []).append(m.kind)
    assert all(sorted(k) == ["ciphertext"] + ["share"] * 4 for k in per_user.values())
    assert t.tapes["meta"]["n_r"] == 7
    assert len(t.tapes["server"]["report_index"]) == 17


def test_adversary_views():
    values = np.arange(12) % 3
    cfg = PeosConfig(mech.GrrConfig(1.0, 3), r=5, n_r=4, seed=1)
    _, t = peos_run(values, cfg)
    server = extract_view(t, "server")
    assert {m.recipient for m in server.messages} == {"server"}
    assert set(server.tapes) == {"server", "meta"}
    users = extract_view(t, amp.AdversaryModel.SERVER_PLUS_USERS)
    assert users.victim == 11
    assert len(users.tapes["users"]["values"]) == 11
    assert "user:11" not in {m.sender for m in users.messages}
    aux = extract_view(t, "server+aux", [0, 3])
    assert not aux.degraded and set(aux.tapes) >= {"shuffler:0", "shuffler:3"}
    assert all(m.recipient == "server" or {m.sender, m.recipient} & {"shuffler:0", "shuffler:3"}
               for m in aux.messages)
    assert extract_view(t, "server+aux", [0, 1, 2]).degraded
    with pytest.raises(InputError):
        extract_view(t, "server+aux", [9])
    with pytest.raises(InputError):
        extract_view(t, "server", [0])
    assert aux.to_jsonl().count("\n") == len(aux.messages) + 1


def test_ss_run_estimates():
    g = np.random.default_rng(2)
    values = g.integers(0, 4, 400)
    f = ss_run(values, mech.GrrConfig(math.inf, 4), r=3, n_r=0, seed=1, onion=crypto.TransparentOnion())
    assert np.allclose(f, np.bincount(values, minlength=4) / 400)
    f = ss_run(values, mech.GrrConfig(math.inf, 4), r=3, n_r=30, seed=1)
    assert np.abs(f - np.bincount(values, minlength=4) / 400).max() < 0.05


@pytest.mark.parametrize("m", [mech.GrrConfig(1.0, 6), mech.SolhConfig(1.0, 40, 5)])
def test_poisoning(m):
    cfg = PeosConfig(m, r=3, seed=3)
    ok = poisoning_resistance_check(cfg, adversarial={0}, trials=20000)
    assert ok.uniform and ok.honest == 2 and not ok.vacuous
    bad = poisoning_resistance_check(cfg, adversarial={0, 1, 2}, trials=20000)
    assert not bad.uniform and bad.vacuous
    with pytest.raises(InputError):
        poisoning_resistance_check(cfg, adversarial={5})


def test_hockey_stick_basics():
    P = {"a": 0.5, "b": 0.5}
    Q = {"a": 0.25, "b": 0.75}
    assert hockey_stick(P, Q, 0.0) == pytest.approx(0.25)
    assert hockey_stick(P, Q, math.log(2)) == pytest.approx(0.0)
    assert hockey_stick({"c": 1.0}, Q, 5.0) == 1.0


def test_output_distribution_dual_routes_agree():
    cfg = mech.GrrConfig(1.0, 2)
    multiset = output_distribution(cfg, [0, 1, 1], n_r=1)
    literal = output_distribution(cfg, [0, 1, 1], n_r=1, literal=True)
    folded = {}
    for k, p in literal.items():
        key = tuple(sorted(k))
        folded[key] = folded.get(key, 0.0) + p
    assert set(folded) == set(multiset)
    assert all(folded[k] == pytest.approx(multiset[k]) for k in multiset)
    assert sum(multiset.values()) == pytest.approx(1.0)


def test_oracle_single_user_is_exact_ldp():
    cfg = mech.GrrConfig(1.3, 2)
    assert privacy_loss_oracle(cfg, [0], [1], 1.3) == pytest.approx(0.0, abs=1e-15)
    assert privacy_loss_oracle(cfg, [0], [1], 1.2) > 0
    assert exact_epsilon(cfg, [0], [1], 0.0) == pytest.approx(1.3, abs=1e-6)


def test_oracle_shuffling_helps():
    cfg = mech.GrrConfig(2.0, 2)
    e3 = exact_epsilon(cfg, [0, 0, 0], [0, 0, 1], 1e-3)
    assert e3 < 2.0
    e_fakes = exact_epsilon(cfg, [0, 0, 0], [0, 0, 1], 1e-3, n_r=3, collude=True)
    assert e_fakes < 2.0


def test_oracle_limits():
    with pytest.raises(ResourceError):
        output_distribution(mech.GrrConfig(1.0, 50), list(range(6)), max_outcomes=10**5)
    with pytest.raises(InputError):
        privacy_loss_oracle(mech.GrrConfig(1.0, 2), [0], [0, 1], 1.0)
