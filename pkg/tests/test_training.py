import math

import numpy as np
import pytest

from mdan import autodiff as ad
from mdan import training
from mdan.autodiff import Tensor
from mdan.losses import domain_confusion_loss, loss_adv, loss_dis, loss_task
from mdan.network import NetworkConfig, build_network, partition
from mdan.optim import AdamState, adam_step
from mdan.training import TrainConfig, TrainingError, train_ablation, train_alg1

from conftest import StepRecorder, changed, snapshot


# ---------------------------------------------------------------- loss anchors


def test_loss_task_uniform_is_log_c():
    assert loss_task(np.zeros(3), 1).item() == pytest.approx(math.log(3), abs=1e-12)
    assert loss_task(np.zeros((4, 3)), [0, 1, 2, 0]).item() == pytest.approx(math.log(3), abs=1e-12)


def test_loss_task_confident_and_range_check():
    assert loss_task(np.array([50.0, 0.0, 0.0]), 0).item() < 1e-12
    with pytest.raises(ValueError, match="out of range"):
        loss_task(np.zeros(3), 3)


def test_loss_task_matches_direct_formula():
    z = np.random.default_rng(0).normal(size=(5, 4))
    y = np.array([0, 3, 1, 1, 2])
    ref = np.mean([-(z[i, y[i]] - math.log(sum(math.exp(v) for v in z[i]))) for i in range(5)])
    assert loss_task(z, y).item() == pytest.approx(ref, abs=1e-12)


def test_discriminator_and_adversarial_anchors():
    assert loss_dis(np.array(0.5), np.array(0.5)).item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert loss_adv(np.array(0.5)).item() == pytest.approx(math.log(2), abs=1e-12)
    assert loss_dis(np.array(0.5), np.array(0.5)).item() == pytest.approx(2 * loss_adv(np.array(0.5)).item(), abs=1e-12)
    assert loss_dis(np.array(1.0), np.array(0.0)).item() < 1e-6  # clamped, finite
    assert np.isfinite(loss_adv(np.array(0.0)).item())
    assert loss_adv(np.array(0.0)).item() == pytest.approx(-math.log(1e-7), abs=1e-9)


def test_domain_confusion_anchors():
    assert domain_confusion_loss(np.array(0.5)).item() == pytest.approx(math.log(2), abs=1e-12)
    assert domain_confusion_loss(np.array(0.9)).item() == pytest.approx(-0.5 * (math.log(0.9) + math.log(0.1)), abs=1e-12)
    grid = np.linspace(0.01, 0.99, 99)
    vals = [domain_confusion_loss(np.array(d)).item() for d in grid]
    assert grid[int(np.argmin(vals))] == pytest.approx(0.5)
    for k in range(1, 64):  # dyadic values make 1 - d exact
        d = k / 64
        assert domain_confusion_loss(np.array(d)).item() == domain_confusion_loss(np.array(1.0 - d)).item()


def test_discriminator_loss_gradient_sign():
    # raising d on source samples and lowering it on target samples lowers the loss
    d_s = Tensor(np.array([0.4, 0.6]), requires_grad=True)
    d_t = Tensor(np.array([0.3, 0.7]), requires_grad=True)
    with ad.GradTape() as tape:
        loss = loss_dis(d_s, d_t)
    tape.backward(loss)
    assert np.all(d_s.grad < 0) and np.all(d_t.grad > 0)


# ---------------------------------------------------------------- configuration


def test_train_config_validation():
    with pytest.raises(ValueError, match="strategy"):
        TrainConfig(strategy="magic")
    with pytest.raises(ValueError):
        TrainConfig(lr_task=0.0)
    with pytest.raises(ValueError, match="warmup"):
        TrainConfig(epochs=2, warmup_epochs=3)


def test_default_hyperparameters():
    cfg = TrainConfig()
    assert (cfg.lr_task, cfg.lr_adv, cfg.lr_dis) == (1e-4, 1e-5, 1e-3)
    assert (cfg.beta1, cfg.beta2, cfg.weight_decay) == (0.5, 0.999, 2.5e-5)


# ---------------------------------------------------------------- step isolation


def small_sets(small_data):
    src, tgt = small_data
    return src.select(split="train"), tgt.select(split="train").without_labels()


def test_three_step_isolation(small_data, tiny_net, monkeypatch):
    rec = StepRecorder(tiny_net, monkeypatch)
    D_s, D_t = small_sets(small_data)
    cfg = TrainConfig(epochs=1, batch_size=8, lr_task=1e-2, lr_adv=1e-2, lr_dis=1e-2)
    train_alg1(tiny_net, D_s, D_t, cfg)
    expected = [set(partition(tiny_net, s)) for s in ("sh+s", "t", "disc")]
    assert len(rec.events) == 3 * 3  # 24 target samples / batch 8
    for i, (given, moved) in enumerate(rec.events):
        allowed = expected[i % 3]
        assert given == allowed
        assert moved <= allowed, moved - allowed
    # every step does move something, including the adversarial step once D is non-trivial
    assert all(moved for _, moved in rec.events[3:])


def test_joint_model_step_leaves_discriminator(small_data, tiny_net, monkeypatch):
    rec = StepRecorder(tiny_net, monkeypatch)
    D_s, D_t = small_sets(small_data)
    train_ablation(tiny_net, D_s, D_t, TrainConfig(epochs=1, batch_size=8, strategy="joint", max_iters=2))
    model, disc = set(partition(tiny_net, "sh+s+t")), set(partition(tiny_net, "disc"))
    kinds = [model, disc] * 2
    for (given, moved), allowed in zip(rec.events, kinds):
        assert given == allowed and moved <= allowed


def test_shared_vs_specific_partitions(small_data, tiny_net, monkeypatch):
    rec = StepRecorder(tiny_net, monkeypatch)
    D_s, D_t = small_sets(small_data)
    train_ablation(tiny_net, D_s, D_t, TrainConfig(epochs=1, batch_size=8, strategy="shared-vs-specific",
                                                   max_iters=2))
    kinds = [set(partition(tiny_net, s)) for s in ("sh", "s+t", "disc")] * 2
    for (given, moved), allowed in zip(rec.events, kinds):
        assert given == allowed and moved <= allowed


def test_source_only_never_touches_target_or_disc(small_data, tiny_net):
    D_s, D_t = small_sets(small_data)
    before = snapshot(tiny_net)
    train_alg1(tiny_net, D_s, D_t, TrainConfig(epochs=1, batch_size=8, strategy="source-only"))
    moved = changed(before, snapshot(tiny_net))
    assert moved and moved <= set(partition(tiny_net, "sh+s"))


def test_source_path_of_alternating_run_equals_source_only(small_data):
    D_s, D_t = small_sets(small_data)
    a = build_network(NetworkConfig.tiny(), 0)
    b = build_network(NetworkConfig.tiny(), 0)
    kw = dict(epochs=3, warmup_epochs=1, warmup_lr=3e-2, batch_size=8, lr_task=1e-2, lr_adv=1e-2)
    train_alg1(a, D_s, D_t, TrainConfig(**kw))
    train_alg1(b, D_s, D_t, TrainConfig(strategy="source-only", **kw))
    for name in partition(a, "sh+s"):
        assert a.params[name].data.tobytes() == b.params[name].data.tobytes()


def test_warmup_copies_source_attention(small_data, tiny_net, monkeypatch):
    rec = StepRecorder(tiny_net, monkeypatch)
    D_s, D_t = small_sets(small_data)
    train_alg1(tiny_net, D_s, D_t, TrainConfig(epochs=2, warmup_epochs=1, batch_size=8, lr_task=1e-2))
    # epoch 0 runs the task step only, epoch 1 all three
    assert len(rec.events) == 3 + 9
    assert all(given == set(partition(tiny_net, "sh+s")) for given, _ in rec.events[:3])


@pytest.mark.parametrize("strategy", ["ours", "joint"])
def test_warmup_lr_applies_only_during_warmup(small_data, tiny_net, monkeypatch, strategy):
    lrs = []
    real = training.adam_step
    monkeypatch.setattr(training, "adam_step", lambda p, s, lr: (lrs.append(lr), real(p, s, lr)))
    D_s, D_t = small_sets(small_data)
    cfg = TrainConfig(epochs=2, warmup_epochs=1, warmup_lr=5e-3, batch_size=8, lr_task=2e-4,
                      lr_adv=3e-4, lr_dis=4e-4, strategy=strategy)
    train_ablation(tiny_net, D_s, D_t, cfg)
    assert lrs[:3] == [5e-3] * 3
    expected = [2e-4, 3e-4, 4e-4] if strategy == "ours" else [2e-4, 4e-4]
    assert lrs[3:] == expected * 3


@pytest.mark.parametrize("strategy,steps", [("joint", ("sh+s+t", "disc")),
                                            ("shared-vs-specific", ("sh", "s+t", "disc"))])
def test_ablation_strategies_share_the_warmup(small_data, tiny_net, monkeypatch, strategy, steps):
    rec = StepRecorder(tiny_net, monkeypatch)
    D_s, D_t = small_sets(small_data)
    synced = {}
    real_sync = training.sync_target_attention

    def sync(net):
        real_sync(net)
        synced["at"] = len(rec.events)

    monkeypatch.setattr(training, "sync_target_attention", sync)
    train_ablation(tiny_net, D_s, D_t, TrainConfig(epochs=2, warmup_epochs=1, batch_size=8, strategy=strategy))
    assert synced["at"] == 3
    assert all(given == set(partition(tiny_net, "sh+s")) for given, _ in rec.events[:3])
    kinds = [set(partition(tiny_net, s)) for s in steps] * 3
    assert [given for given, _ in rec.events[3:]] == kinds


def test_step3_line_search_decreases_loss():
    net = build_network(NetworkConfig.tiny(), 0)
    rng = np.random.default_rng(1)
    net.params["disc.out.w"].data[...] = rng.normal(0, 0.5, size=net.params["disc.out.w"].shape)
    f_s = Tensor(np.abs(rng.normal(size=(6, 8))))
    f_t = Tensor(np.abs(rng.normal(size=(6, 8))) + 0.5)
    lr = 1e-3 / 10

    def current():
        return loss_dis(net.discriminator(f_s), net.discriminator(f_t))

    before = current().item()
    loss = training._step(net, "disc", AdamState(), lr, current)
    assert loss == before
    assert current().item() < before


# ---------------------------------------------------------------- runs


def test_training_errors(small_data, tiny_net):
    D_s, D_t = small_sets(small_data)
    with pytest.raises(TrainingError, match="non-empty"):
        train_alg1(tiny_net, D_s.select(split="none"), D_t, TrainConfig(epochs=1))
    with pytest.raises(TrainingError, match="labeled"):
        train_alg1(tiny_net, D_s.without_labels(), D_t, TrainConfig(epochs=1))
    with pytest.raises(TrainingError, match="flags"):
        train_alg1(tiny_net, D_s, D_t, TrainConfig(epochs=1, use_se=False))
    with pytest.raises(TrainingError, match="strategy"):
        train_alg1(tiny_net, D_s, D_t, TrainConfig(epochs=1, strategy="joint"))


def test_non_finite_loss_aborts_with_context(small_data, tiny_net):
    D_s, D_t = small_sets(small_data)
    tiny_net.params["sh.head.w"].data[...] = 1e200
    with pytest.raises(TrainingError, match="iteration 1"):
        train_alg1(tiny_net, D_s, D_t, TrainConfig(epochs=1, batch_size=8))


def test_target_labels_are_never_read(small_data):
    D_s, _ = small_sets(small_data)
    D_t = small_data[1].select(split="train")
    scrambled = small_data[1].select(split="train")
    scrambled.labels = np.roll(scrambled.labels, 1)
    a, b = build_network(NetworkConfig.tiny(), 0), build_network(NetworkConfig.tiny(), 0)
    la = train_alg1(a, D_s, D_t, TrainConfig(epochs=1, batch_size=8))[1]
    lb = train_alg1(b, D_s, scrambled, TrainConfig(epochs=1, batch_size=8))[1]
    assert la.iterations == lb.iterations


def test_training_is_deterministic(small_data, tmp_path):
    D_s, D_t = small_sets(small_data)
    val_s, val_t = small_data[0].select(split="val"), small_data[1].select(split="val")
    outs = []
    for k in range(2):
        net = build_network(NetworkConfig.tiny(), 0)
        net, log = train_alg1(net, D_s, D_t, TrainConfig(epochs=2, batch_size=8, lr_task=1e-2), val_s, val_t)
        log.write_csv(tmp_path / f"log{k}.csv")
        outs.append(snapshot(net))
    assert outs[0] == outs[1]
    assert (tmp_path / "log0.csv").read_bytes() == (tmp_path / "log1.csv").read_bytes()


def test_log_csv_layout(small_data, tiny_net, tmp_path):
    D_s, D_t = small_sets(small_data)
    _, log = train_alg1(tiny_net, D_s, D_t, TrainConfig(epochs=2, batch_size=8),
                        small_data[0].select(split="val"), small_data[1].select(split="val"))
    log.write_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "iteration,epoch,l_task,l_adv,l_dis,val_src_acc,val_tgt_acc"
    assert len(lines) == 1 + 6
    assert lines[3].split(",")[5] != "" and lines[2].split(",")[5] == ""
    assert [r[0] for r in log.iterations] == list(range(1, 7))


def test_ablation_without_attention_runs(small_data):
    D_s, D_t = small_sets(small_data)
    net = build_network(NetworkConfig.tiny(use_adapter=False, use_se=False), 0)
    cfg = TrainConfig(epochs=1, batch_size=8, use_adapter=False, use_se=False, strategy="shared-vs-specific")
    _, log = train_ablation(net, D_s, D_t, cfg)
    assert len(log.iterations) == 3


@pytest.mark.slow
def test_two_epochs_reduce_task_loss():
    from mdan.data import GenSpec, generate_dataset
    src, tgt = generate_dataset(GenSpec(n_train=125, n_val=1, n_test=1))
    net = build_network(NetworkConfig(), 0)
    _, log = train_alg1(net, src.select(split="train"), tgt.select(split="train").without_labels(),
                        TrainConfig(epochs=2, lr_task=1e-3))
    lt = log.column("l_task")
    per_epoch = len(lt) // 2
    assert lt[per_epoch:].mean() < lt[:per_epoch].mean()
