import csv
import os

import numpy as np
import pytest

from mdan.cli import main
from mdan.network import NetworkConfig, build_network, load_checkpoint, save_checkpoint

SPEC = "classes = disk,square,triangle\nn_train = 8\nn_val = 3\nn_test = 4\nsize = 8\nseed = 2\n"
TRAIN = """# tiny run
epochs = 2
batch_size = 8
lr_task = 0.01
lr_adv = 0.001
lr_dis = 0.001
warmup_epochs = 1
net.input_size = 8
net.widths = 4, 8
net.blocks_per_stage = 1
net.disc_hidden = 8, 8
"""
SELF = "tau_hi = 0.7\ntau_lo = 0.6\ntau_m = 0.5\nlr = 0.001\n"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "spec.cfg").write_text(SPEC)
    (d / "train.cfg").write_text(TRAIN)
    (d / "self.cfg").write_text(SELF)
    assert main(["gen-data", str(d / "spec.cfg"), str(d / "data")]) == 0
    return d


def run(*args):
    return main([str(a) for a in args])


def tree_bytes(path):
    return {p: open(os.path.join(r, p), "rb").read()
            for r, _, files in os.walk(path) for p in files}


def test_usage_errors(capsys, tmp_path):
    assert run() == 1
    assert run("no-such-command") == 1
    assert "usage" in capsys.readouterr().err
    assert run("eval", tmp_path / "x", tmp_path / "y", "--bogus") == 1
    assert run("gen-data", "default", tmp_path / "out", "--seed", "abc") == 1
    assert not (tmp_path / "out").exists()


def test_runtime_errors(tmp_path, capsys):
    assert run("eval", tmp_path / "missing.ckpt", tmp_path) == 2
    (tmp_path / "bad.ckpt").write_bytes(b"JUNK")
    assert run("eval", tmp_path / "bad.ckpt", tmp_path) == 2
    assert "magic" in capsys.readouterr().err


def test_config_errors_are_usage_errors(workdir, tmp_path):
    (tmp_path / "t.cfg").write_text("epochs = 1\nmystery = 3\n")
    assert run("train", tmp_path / "t.cfg", workdir / "data", tmp_path / "o.ckpt") == 1
    (tmp_path / "u.cfg").write_text("epochs = one\n")
    assert run("train", tmp_path / "u.cfg", workdir / "data", tmp_path / "o.ckpt") == 1
    assert not (tmp_path / "o.ckpt").exists()


def test_gradcheck_command(capsys):
    assert run("gradcheck") == 0
    out = capsys.readouterr().out
    assert "max relative error" in out
    err = float(out.strip().split()[-1])
    assert err < 1e-4
    assert run("gradcheck", "--epsilon", "0.1") == 2


def test_pipeline_and_outputs(workdir, tmp_path, capsys):
    data = workdir / "data"
    before = tree_bytes(data)
    ck = tmp_path / "net.ckpt"
    assert run("train", workdir / "train.cfg", data, ck, "--seed", 3) == 0
    assert ck.exists() and (tmp_path / "net.ckpt.log.csv").exists()
    assert run("selftrain", workdir / "self.cfg", ck, data, tmp_path / "st.ckpt") == 0
    audit = list(csv.reader(open(tmp_path / "st.ckpt.audit.csv")))
    assert audit[0] == ["id", "yhat", "p_m", "d", "p_d", "verdict", "reason"] and len(audit) == 1 + 24
    assert run("eval", tmp_path / "st.ckpt", data, "--out", tmp_path / "rep.csv") == 0
    assert "average=" in capsys.readouterr().out
    assert run("eval", ck, data, "--domain", "source", "--split", "val") == 0
    assert run("export-features", ck, data, tmp_path / "feat.csv", "--split", "val") == 0
    assert len(list(csv.reader(open(tmp_path / "feat.csv")))) == 1 + 9
    assert run("export-attention", ck, data, tmp_path / "att", "--sample-id", 5, "--block", 1) == 0
    assert len(list(csv.reader(open(tmp_path / "att" / "se_weights.csv")))) == 1 + 8
    assert run("export-attention", ck, data, tmp_path / "att2", "--sample-id", 99999) == 2
    assert run("export-attention", ck, data, tmp_path / "att3", "--sample-id", 5, "--block", 7) == 2
    # self-training leaves every non-target parameter untouched
    a, b = load_checkpoint(ck), load_checkpoint(tmp_path / "st.ckpt")
    for name, t in a.params.items():
        if not name.startswith("tgt."):
            assert t.data.tobytes() == b.params[name].data.tobytes()
    assert tree_bytes(data) == before


def test_seed_flag_changes_run(workdir, tmp_path):
    for s in (1, 2):
        assert run("train", workdir / "train.cfg", workdir / "data", tmp_path / f"{s}.ckpt", "--seed", s) == 0
    assert (tmp_path / "1.ckpt").read_bytes() != (tmp_path / "2.ckpt").read_bytes()


def test_ablate_command(workdir, tmp_path, capsys):
    cfg = tmp_path / "abl.cfg"
    cfg.write_text(TRAIN.replace("epochs = 2", "epochs = 1").replace("warmup_epochs = 1", "max_iters = 2"))
    assert run("ablate", cfg, workdir / "data", tmp_path / "abl") == 0
    rows = list(csv.reader(open(tmp_path / "abl" / "ablation.csv")))
    assert len(rows) == 1 + 9
    assert len(capsys.readouterr().out.strip().splitlines()) == 9


def test_eval_on_fresh_network_is_near_chance(tmp_path, capsys):
    spec = tmp_path / "spec.cfg"
    spec.write_text("n_train = 1\nn_val = 1\nn_test = 100\n")
    assert run("gen-data", spec, tmp_path / "data") == 0
    save_checkpoint(build_network(NetworkConfig(), seed=0), tmp_path / "fresh.ckpt")
    assert run("eval", tmp_path / "fresh.ckpt", tmp_path / "data", "--out", tmp_path / "r.csv") == 0
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    macro = float(rows[-1][1])
    assert 15.0 <= macro <= 35.0, macro
