import shutil
import subprocess
import sys

import numpy as np
import pytest

from myow.cli import main, mining_report
from myow.data import BinnedDataset, load_dataset, save_dataset
from oracles import recount_mining

CONFIG = """preset = reach-desk
data.path = reach.csv
train.epochs = 2
train.batch_size = 32
miner.pool_size = 64
mining.lam_warmup_epochs = 1
optim.warmup_epochs = 1
model.encoder_hidden = 16, 16
model.rep_size = 8
model.predictor_hidden = 16
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli")
    assert main(["generate", "reach", str(ws / "reach.csv"), "--seed", "0", "--set", "n_trials=24",
                 "--set", "n_neurons=12"]) == 0
    (ws / "run.cfg").write_text(CONFIG)
    assert main(["train", str(ws / "run.cfg"), str(ws / "run")]) == 0
    assert main(["split", str(ws / "reach.csv"), str(ws / "split.csv")]) == 0
    return ws


def test_generate_is_byte_identical(tmp_path):
    for name in ("a.csv", "b.csv"):
        assert main(["generate", "reach", str(tmp_path / name), "--seed", "3", "--set", "n_trials=16"]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert sorted(set(load_dataset(tmp_path / "a.csv").labels.tolist())) == list(range(8))


def test_generate_manifold_pair_shares_no_tuple(tmp_path):
    assert main(["generate", "manifold", str(tmp_path / "m.csv"), "--set", "rate=0.075"]) == 0
    tr, te = load_dataset(tmp_path / "m.train.csv"), load_dataset(tmp_path / "m.test.csv")
    assert not set(tr.timestamps.tolist()) & set(te.timestamps.tolist())
    assert len(tr) and len(te)


@pytest.mark.parametrize("args", [["reach", "x.csv", "--set", "n_trials=-1"], ["reach", "x.csv", "--set", "bogus=1"],
                                  ["manifold", "x.csv", "--set", "rate=0.0000001"]])
def test_generate_invalid_spec_exit_2(tmp_path, args):
    args = [args[0], str(tmp_path / args[1])] + args[2:]
    assert main(["generate"] + args) == 2


def test_train_outputs(workspace):
    run = workspace / "run"
    for name in ("trace.csv", "metrics.csv", "mining_audit.csv", "config.txt", "checkpoint_final.ckpt"):
        assert (run / name).exists(), name
    header = (run / "metrics.csv").read_text().splitlines()[0].split(",")
    assert {"loss_total", "loss_aug", "loss_mined", "lam", "tau", "lr"} <= set(header)


def test_train_invalid_config_exit_2(tmp_path):
    (tmp_path / "bad.cfg").write_text("miner.k = 0\n")
    assert main(["train", str(tmp_path / "bad.cfg"), str(tmp_path / "o")]) == 2
    (tmp_path / "bad2.cfg").write_text("nonsense = 1\n")
    assert main(["train", str(tmp_path / "bad2.cfg"), str(tmp_path / "o")]) == 2
    assert main(["train", str(tmp_path / "missing.cfg"), str(tmp_path / "o")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_nan_exit_3(tmp_path, workspace):
    ds = load_dataset(workspace / "reach.csv")
    ds.rates[:] = ds.rates * 1e300  # overflows once the views are normalized and squared
    save_dataset(ds, tmp_path / "reach.csv")
    (tmp_path / "run.cfg").write_text(CONFIG.replace("optim.warmup_epochs = 1", "optim.warmup_epochs = 0\n"
                                                     "optim.lr = 1e300"))
    assert main(["train", str(tmp_path / "run.cfg"), str(tmp_path / "o")]) == 3


def test_train_refuses_non_empty_dir_without_force(tmp_path, workspace):
    shutil.copy(workspace / "reach.csv", tmp_path / "reach.csv")
    (tmp_path / "run.cfg").write_text(CONFIG.replace("train.epochs = 2", "train.epochs = 1"))
    out = tmp_path / "o"
    out.mkdir()
    (out / "junk.txt").write_text("x")
    assert main(["train", str(tmp_path / "run.cfg"), str(out)]) == 2
    assert main(["train", str(tmp_path / "run.cfg"), str(out), "--force"]) == 0


def test_byol_mode_log_has_no_mined_column(tmp_path, workspace):
    shutil.copy(workspace / "reach.csv", tmp_path / "reach.csv")
    (tmp_path / "run.cfg").write_text(CONFIG)
    assert main(["train", str(tmp_path / "run.cfg"), str(tmp_path / "o"), "--mode", "byol"]) == 0
    assert "loss_mined" not in (tmp_path / "o" / "metrics.csv").read_text().splitlines()[0]
    assert "mining.lam = 0.0" in (tmp_path / "o" / "config.txt").read_text()


def test_seed_env_override(tmp_path, workspace, monkeypatch):
    shutil.copy(workspace / "reach.csv", tmp_path / "reach.csv")
    (tmp_path / "run.cfg").write_text(CONFIG.replace("train.epochs = 2", "train.epochs = 1"))
    monkeypatch.setenv("MYOW_SEED", "7")
    assert main(["train", str(tmp_path / "run.cfg"), str(tmp_path / "o")]) == 0
    assert "seed = 7" in (tmp_path / "o" / "config.txt").read_text()


def test_cli_resume_matches_unbroken(tmp_path, workspace):
    shutil.copy(workspace / "reach.csv", tmp_path / "reach.csv")
    (tmp_path / "run.cfg").write_text(CONFIG)
    out = tmp_path / "o"
    assert main(["train", str(tmp_path / "run.cfg"), str(out), "--stop-at", "3"]) == 0
    assert main(["train", str(tmp_path / "run.cfg"), str(out), "--resume", str(out / "checkpoint_step3.ckpt")]) == 0
    assert (out / "trace.csv").read_bytes() == (workspace / "run" / "trace.csv").read_bytes()


def test_linear_eval_deterministic_with_baseline_row(tmp_path, workspace):
    ck, ds, sp = (str(workspace / p) for p in ("run/checkpoint_final.ckpt", "reach.csv", "split.csv"))
    for name in ("a.csv", "b.csv"):
        assert main(["linear-eval", ck, ds, "--split", sp, "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a.csv").read_text()
    assert a == (tmp_path / "b.csv").read_text()
    names = [line.split(",")[0] for line in a.splitlines()]
    assert names == ["metric", "accuracy", "delta_accuracy", "macro_f1", "baseline_accuracy",
                     "baseline_delta_accuracy", "baseline_macro_f1"]


def test_linear_eval_train_tag_guard(tmp_path, workspace):
    ck, ds, sp = (str(workspace / p) for p in ("run/checkpoint_final.ckpt", "reach.csv", "split.csv"))
    out = str(tmp_path / "m.csv")
    assert main(["linear-eval", ck, ds, "--split", sp, "--tag", "train", "--out", out]) == 2
    assert main(["linear-eval", ck, ds, "--split", sp, "--tag", "train", "--allow-train", "--out", out]) == 0


def test_linear_eval_width_mismatch_exit_2(tmp_path, workspace):
    assert main(["generate", "reach", str(tmp_path / "w.csv"), "--set", "n_neurons=5", "--set", "n_trials=8"]) == 0
    assert main(["split", str(tmp_path / "w.csv"), str(tmp_path / "s.csv")]) == 0
    assert main(["linear-eval", str(workspace / "run/checkpoint_final.ckpt"), str(tmp_path / "w.csv"),
                 "--split", str(tmp_path / "s.csv"), "--out", str(tmp_path / "m.csv")]) == 2


def test_inspect_mining_matches_recount_oracle(tmp_path, workspace):
    audit, ds_path = workspace / "run" / "mining_audit.csv", workspace / "reach.csv"
    assert main(["inspect-mining", str(audit), str(ds_path), "--out", str(tmp_path / "r.csv")]) == 0
    rows = [line.split(",") for line in (tmp_path / "r.csv").read_text().splitlines()[1:]]
    oracle = recount_mining(audit, load_dataset(ds_path).labels)
    assert {int(r[0]): float(r[2]) for r in rows} == oracle
    assert all(r[3] == "0" for r in rows)


def test_inspect_mining_all_same_label(tmp_path, workspace):
    ds = load_dataset(workspace / "reach.csv")
    ds.labels[:] = 3
    save_dataset(ds, tmp_path / "same.csv")
    report = mining_report(workspace / "run" / "mining_audit.csv", ds)
    assert report and all(r["agreement"] == 1.0 for r in report)


def test_inspect_mining_flags_violations_and_bad_ids(tmp_path, workspace):
    ds = load_dataset(workspace / "reach.csv")
    lines = ["# mask=exclude-same-trial window_s=1800.0 k=5", "step,epoch,anchor,candidate,distance,rank",
             "0,0,0,1,0.5,0"]  # rows 0 and 1 share trial 0
    (tmp_path / "a.csv").write_text("\n".join(lines) + "\n")
    assert main(["inspect-mining", str(tmp_path / "a.csv"), str(workspace / "reach.csv")]) == 1
    lines[-1] = f"0,0,0,{len(ds) + 5},0.5,0"
    (tmp_path / "b.csv").write_text("\n".join(lines) + "\n")
    assert main(["inspect-mining", str(tmp_path / "b.csv"), str(workspace / "reach.csv")]) == 2


def test_split_command(tmp_path, workspace):
    assert main(["split", str(workspace / "reach.csv"), str(tmp_path / "s.csv"), "--ratios", "0.5,0.5"]) == 2
    assert main(["split", str(workspace / "reach.csv"), str(tmp_path / "s.csv")]) == 0


def test_missing_dataset_exit_2(tmp_path):
    assert main(["split", str(tmp_path / "nope.csv"), str(tmp_path / "s.csv")]) == 2


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "myow.cli", "generate", "reach", str(tmp_path / "r.csv"),
                          "--set", "n_trials=8"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert isinstance(load_dataset(tmp_path / "r.csv"), BinnedDataset)
    exe = shutil.which("myow")
    if exe:
        assert subprocess.run([exe, "--help"], capture_output=True).returncode == 0
    assert np.isfinite(load_dataset(tmp_path / "r.csv").rates).all()


def test_generate_creates_missing_directories(tmp_path):
    out = tmp_path / "new" / "dir" / "reach.csv"
    assert main(["generate", "reach", str(out), "--set", "n_trials=8", "--set", "n_neurons=4"]) == 0
    assert load_dataset(out).d == 4
