import csv
import logging
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdan.network import Domain, NetworkConfig, build_network, forward, partition
from mdan.selftrain import (SelfTrainConfig, acceptance, generate_pseudo_labels, pseudo_dataset,
                            records_from_outputs, selftrain_finetune, write_audit)

from conftest import changed, snapshot


def rule_oracle(d: Fraction, p_m: Fraction, hi=Fraction(7, 10), lo=Fraction(6, 10), m=Fraction(8, 10)):
    """Acceptance truth table evaluated in exact rational arithmetic."""
    p_d = max(d, 1 - d)
    fooled = d >= Fraction(1, 2) and p_d >= hi
    unsure_target = d < Fraction(1, 2) and p_d <= lo
    return (fooled or unsure_target) and p_m >= m


def test_hand_fixture_accepted_set():
    cfg = SelfTrainConfig()
    probs = np.array([
        [0.95, 0.03, 0.02],  # fools D with confidence -> accepted
        [0.10, 0.85, 0.05],  # recognised as target but D unsure -> accepted
        [0.20, 0.50, 0.30],  # fools D, model unsure
        [0.05, 0.05, 0.90],  # D says source with only 0.6
        [0.90, 0.05, 0.05],  # D confidently says target
        [0.02, 0.08, 0.90],  # d = 0.5 counts as source, p_d 0.5
    ])
    d = np.array([0.9, 0.45, 0.9, 0.6, 0.2, 0.5])
    ids = np.array([15, 11, 12, 13, 14, 10])
    recs = records_from_outputs(ids, probs, d, cfg)
    assert [r.id for r in recs] == [10, 11, 12, 13, 14, 15]
    accepted = {(r.id, r.yhat) for r in recs if r.accepted}
    assert accepted == {(15, 0), (11, 1)}
    reasons = {r.id: r.reason for r in recs}
    assert reasons == {10: "discriminator-unsure", 11: "", 12: "model-confidence",
                       13: "discriminator-unsure", 14: "discriminator-recognised", 15: ""}
    r11 = next(r for r in recs if r.id == 11)
    assert not r11.disc_says_source and r11.p_d == pytest.approx(0.55) and r11.p_m == 0.85


def test_exhaustive_grid_matches_truth_table():
    cfg = SelfTrainConfig()
    for i in range(1, 20):
        for j in range(1, 11):
            d, p_m = Fraction(i, 20), Fraction(j, 10)
            ok, why = acceptance(j / 10, i / 20, cfg)
            assert ok == rule_oracle(d, p_m), (i / 20, j / 10)
            assert (why == "") == ok


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 0.95), st.floats(0.5, 0.95), st.floats(0.4, 0.95))
def test_accepted_count_monotone_in_thresholds(seed, a, b, m):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(60, 3)) * 3
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    d = rng.uniform(size=60)
    ids = np.arange(60)

    def n_acc(hi, lo, tm):
        return sum(r.accepted for r in records_from_outputs(ids, probs, d, SelfTrainConfig(hi, lo, tm)))

    lo, hi = min(a, b), max(a, b)
    base = n_acc(hi, lo, m)
    assert n_acc(min(hi + 0.03, 0.99), lo, m) <= base
    assert n_acc(hi, lo, min(m + 0.05, 0.99)) <= base
    assert n_acc(hi, max(lo - 0.05, 0.5), m) <= base


def test_config_invariants():
    with pytest.raises(ValueError):
        SelfTrainConfig(tau_hi=0.6, tau_lo=0.7)
    with pytest.raises(ValueError):
        SelfTrainConfig(tau_lo=0.4)
    with pytest.raises(ValueError):
        SelfTrainConfig(tau_m=1.0)


def trained_like(seed=0):
    net = build_network(NetworkConfig.tiny(), seed)
    rng = np.random.default_rng(seed + 100)
    for name, t in net.params.items():
        if name.startswith(("tgt.", "disc.out")):
            t.data[...] = t.data + rng.normal(0, 0.3, size=t.shape)
    net.params["sh.head.w"].data[...] *= 8.0  # confident predictions
    return net


def test_generate_pseudo_labels_consistent_with_records(small_data):
    net = trained_like()
    D_t = small_data[1].select(split="train").without_labels()
    cfg = SelfTrainConfig(tau_m=0.5)
    pseudo, records = generate_pseudo_labels(net, D_t, cfg)
    assert len(records) == len(D_t)
    assert [r.id for r in records] == sorted(int(i) for i in D_t.ids)
    assert pseudo == [(r.id, r.yhat) for r in records if r.accepted]
    for r in records:
        assert 1 / 3 <= r.p_m <= 1 and 0.5 <= r.p_d < 1


def test_tau_m_must_exceed_chance(small_data):
    net = build_network(NetworkConfig.tiny(), 0)
    with pytest.raises(ValueError, match="1/C"):
        generate_pseudo_labels(net, small_data[1], SelfTrainConfig(tau_m=0.3))


def test_audit_csv(tmp_path, small_data):
    net = trained_like()
    _, records = generate_pseudo_labels(net, small_data[1].select(split="train"), SelfTrainConfig(tau_m=0.5))
    write_audit(records, tmp_path / "audit.csv")
    rows = list(csv.reader(open(tmp_path / "audit.csv")))
    assert rows[0] == ["id", "yhat", "p_m", "d", "p_d", "verdict", "reason"]
    assert len(rows) == 1 + len(records)
    for row, r in zip(rows[1:], records):
        assert int(row[0]) == r.id and float(row[3]) == r.d
        assert row[5] == ("accepted" if r.accepted else "rejected")


def test_finetune_updates_only_target_attention(small_data):
    net = trained_like()
    D_t = small_data[1].select(split="train")
    pseudo = pseudo_dataset(D_t, [(int(i), int(i) % 3) for i in D_t.ids[:12]])
    assert len(pseudo) == 12 and pseudo.labels.tolist() == [int(i) % 3 for i in pseudo.ids]
    xs = small_data[0].images
    before_src = forward(net, xs, Domain.SOURCE)[0].data.tobytes()
    before = snapshot(net)
    _, losses = selftrain_finetune(net, pseudo, SelfTrainConfig(lr=1e-2, epochs=2, batch_size=5))
    assert len(losses) == 2 * 3
    moved = changed(before, snapshot(net))
    assert moved and moved <= set(partition(net, "t"))
    assert forward(net, xs, Domain.SOURCE)[0].data.tobytes() == before_src


def test_finetune_reduces_pseudo_label_loss(small_data):
    net = trained_like(1)
    D_t = small_data[1].select(split="train")
    pseudo = pseudo_dataset(D_t, [(int(i), 0) for i in D_t.ids])
    _, losses = selftrain_finetune(net, pseudo, SelfTrainConfig(lr=1e-2, epochs=5, batch_size=24))
    assert losses[-1] < losses[0]


def test_empty_pseudo_set_is_a_noop(small_data, caplog):
    net = trained_like()
    before = snapshot(net)
    empty = pseudo_dataset(small_data[1], [])
    with caplog.at_level(logging.WARNING):
        _, losses = selftrain_finetune(net, empty, SelfTrainConfig())
    assert losses == [] and snapshot(net) == before
    assert "skipped" in caplog.text
