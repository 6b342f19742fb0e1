"""CLI behaviour: config plumbing, run artifacts, exit codes.

Every test drives `main(argv)` in-process; one subprocess test proves the
module entry point works end to end. Runs land in tmp_path via chdir so
nothing leaks into the repo.
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

import fwl.cli as cli
import fwl.model as model
import fwl.verify as verify_mod
from fwl.cli import ConfigError, apply_overrides, main, parse_override
from fwl.train import RunRecord


@pytest.fixture(autouse=True)
def _in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


TOY_TRAIN = """
[model]
variant = "DeltaNet"
n_layers = 1
d_model = 16
heads = 2
ffn_dim = 32

[train]
lr = 1e-3
batch_size = 8
epochs = 2
bptt_span = 64
seed = 3

[data]
task = "code_exec"
n_statements = 3
n_variables = 2
train_episodes = 16
valid_episodes = 8
"""

TOY_EVAL = """
[data]
task = "code_exec"
n_statements = 3
n_variables = 2
test_episodes = 8

[eval]
batch_size = 4
"""


def write(path, text):
    Path(path).write_text(text)
    return str(path)


def only_run_dir(base) -> Path:
    dirs = [p for p in Path(base).iterdir() if p.is_dir()]
    assert len(dirs) == 1
    return dirs[0]


def run_toy_training(out="t", extra=()):
    write("toy.toml", TOY_TRAIN)
    rc = main(["train", "--config", "toy.toml", "--out", out, *extra])
    assert rc == 0
    return only_run_dir(out)


# ----------------------------------------------------------- config layer


def test_parse_override_types():
    assert parse_override("train.lr=1e-3") == ("train.lr", 1e-3)
    assert parse_override("train.epochs=5") == ("train.epochs", 5)
    assert parse_override("train.carryover=true") == ("train.carryover", True)
    assert parse_override('model.variant="RDN"') == ("model.variant", "RDN")
    # A bare word is not valid TOML; it falls back to a plain string.
    assert parse_override("model.variant=DeltaNet") == \
        ("model.variant", "DeltaNet")


def test_parse_override_rejects_shapeless_text():
    with pytest.raises(ConfigError, match="section.key=value"):
        parse_override("no_equals_sign")
    with pytest.raises(ConfigError, match="section.key=value"):
        parse_override("=5")


def test_apply_overrides_nests_and_wins():
    cfg = {"train": {"lr": 1.0}}
    apply_overrides(cfg, ["train.lr=2.5", "data.task=listops"])
    assert cfg == {"train": {"lr": 2.5}, "data": {"task": "listops"}}


def test_apply_overrides_refuses_to_replace_a_scalar_with_a_table():
    with pytest.raises(ConfigError, match="not a table"):
        apply_overrides({"train": {"lr": 1.0}}, ["train.lr.nested=1"])


def test_load_config_errors_are_exit_code_two(capsys):
    assert main(["train", "--config", "absent.toml"]) == 2
    assert "not found" in capsys.readouterr().err
    write("broken.toml", "[model\n")
    assert main(["train", "--config", "broken.toml"]) == 2
    assert "not valid TOML" in capsys.readouterr().err


def test_code_version_is_a_stable_short_hash():
    assert cli.code_version() == cli.code_version()
    assert len(cli.code_version()) == 12
    int(cli.code_version(), 16)


def test_run_dirs_never_collide(tmp_path):
    a = cli.make_run_dir(tmp_path / "runs", {"x": 1})
    b = cli.make_run_dir(tmp_path / "runs", {"x": 1})
    assert a != b and a.is_dir() and b.is_dir()


# ------------------------------------------------------------------- gen


def gen_argv(out, seed="1"):
    return ["gen", "--task", "listops", "--depth", "10", "--seed", seed,
            "--train-count", "12", "--valid-count", "4", "--test-count", "4",
            "--out", out]


def test_gen_twice_writes_identical_files():
    assert main(gen_argv("g1")) == 0
    assert main(gen_argv("g2")) == 0
    d1, d2 = only_run_dir("g1"), only_run_dir("g2")
    names = sorted(p.name for p in d1.iterdir())
    assert names == ["manifest.json", "test.jsonl", "train.jsonl",
                     "valid.jsonl", "vocab.json"]
    for name in names:
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_gen_manifest_records_the_resolved_run():
    assert main(gen_argv("g")) == 0
    doc = json.loads((only_run_dir("g") / "manifest.json").read_text())
    assert doc["command"] == "gen"
    assert doc["config"]["task"] == "listops"
    assert doc["config"]["spec"]["depth"] == 10
    assert doc["config"]["counts"] == {"train": 12, "valid": 4, "test": 4}
    assert doc["code_version"] == cli.code_version()
    assert doc["seeds"] == {"data": 1}


def test_gen_bad_task_settings_exit_two(capsys):
    rc = main(["gen", "--task", "listops", "--depth", "0", "--out", "g"])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


# ----------------------------------------------------------------- train


def test_train_writes_all_run_artifacts():
    run = run_toy_training()
    assert (run / "manifest.json").is_file()
    assert (run / "metrics.jsonl").is_file()
    assert (run / "checkpoint.fwl").is_file()

    doc = json.loads((run / "manifest.json").read_text())
    assert doc["command"] == "train"
    assert doc["config"]["train"]["lr"] == 1e-3
    assert doc["config"]["model"]["variant"] == "DeltaNet"
    assert doc["config"]["data"]["task"] == "code_exec"
    assert doc["seeds"] == {"model": 0, "train": 3, "data": 0}

    spec, params, ck_manifest = model.load_checkpoint(run / "checkpoint.fwl")
    assert spec.variant == "DeltaNet" and spec.vocab_in == 39
    assert ck_manifest["config"] == doc["config"]


def test_train_metrics_stream_has_monotone_steps():
    run = run_toy_training()
    lines = (run / "metrics.jsonl").read_text().splitlines()
    records = [RunRecord.from_json(line) for line in lines]
    steps = [r.step for r in records]
    assert steps == sorted(steps)
    assert steps[0] == 1
    # two epochs of 16 episodes at batch 8 -> 4 train steps + 2 validations
    assert len([r for r in records if not r.metrics]) == 4
    assert len([r for r in records if "sequence_accuracy" in r.metrics]) == 2


def test_train_set_overrides_reach_the_manifest_and_the_run():
    run = run_toy_training(extra=["--set", "train.lr=5e-4",
                                  "--set", "train.epochs=1"])
    doc = json.loads((run / "manifest.json").read_text())
    assert doc["config"]["train"]["lr"] == 5e-4
    assert doc["config"]["train"]["epochs"] == 1
    records = [RunRecord.from_json(line) for line in
               (run / "metrics.jsonl").read_text().splitlines()]
    assert all(r.lr == 5e-4 for r in records if not r.metrics)
    assert len([r for r in records if not r.metrics]) == 2


def test_train_config_mistakes_exit_two(capsys):
    write("toy.toml", TOY_TRAIN)
    cases = [
        ["--set", "train.bogus=1"],
        ["--set", "model.variant=NoSuchVariant"],
        ["--set", "data.task=nope"],
    ]
    for extra in cases:
        assert main(["train", "--config", "toy.toml", "--out", "x",
                     *extra]) == 2, extra
        assert "error:" in capsys.readouterr().err
    write("extra.toml", TOY_TRAIN + "\n[mystery]\nx = 1\n")
    assert main(["train", "--config", "extra.toml", "--out", "x"]) == 2
    assert "unknown config sections" in capsys.readouterr().err
    write("nomodel.toml", TOY_TRAIN.replace("[model]", "[removed]", 1))
    assert main(["train", "--config", "nomodel.toml", "--out", "x"]) == 2


def test_train_supports_the_lstm_baseline():
    write("lstm.toml", TOY_TRAIN.replace(
        'variant = "DeltaNet"\nn_layers = 1\nd_model = 16\nheads = 2\n'
        'ffn_dim = 32',
        'variant = "LSTM"\nembed_dim = 8\nhidden = 12'))
    assert main(["train", "--config", "lstm.toml", "--out", "L"]) == 0
    spec, params, _ = model.load_checkpoint(
        only_run_dir("L") / "checkpoint.fwl")
    assert isinstance(spec, model.LstmSpec)
    assert spec.hidden == 12


# ------------------------------------------------------------------ eval


def test_eval_scores_a_checkpoint(capsys):
    run = run_toy_training()
    capsys.readouterr()
    write("ev.toml", TOY_EVAL)
    rc = main(["eval", "--checkpoint", str(run / "checkpoint.fwl"),
               "--config", "ev.toml", "--out", "e"])
    assert rc == 0
    out = capsys.readouterr().out
    scores = json.loads(out.splitlines()[-1])
    assert set(scores) == {"loss", "sequence_accuracy",
                           "print_token_accuracy"}
    stored = json.loads((only_run_dir("e") / "metrics.json").read_text())
    assert stored == scores
    assert (only_run_dir("e") / "manifest.json").is_file()


def test_eval_vocab_mismatch_is_a_runtime_failure(capsys):
    write("lo.toml", TOY_TRAIN.replace('task = "code_exec"',
                                       'task = "listops"')
                              .replace("n_statements = 3", "depth = 1")
                              .replace("n_variables = 2", ""))
    assert main(["train", "--config", "lo.toml", "--out", "L"]) == 0
    capsys.readouterr()
    write("ev.toml", TOY_EVAL)
    ck = only_run_dir("L") / "checkpoint.fwl"
    rc = main(["eval", "--checkpoint", str(ck), "--config", "ev.toml",
               "--out", "e"])
    assert rc == 1
    assert "vocab" in capsys.readouterr().err


def test_eval_unknown_eval_key_exits_two():
    run = run_toy_training()
    write("ev.toml", TOY_EVAL + "\nshuffle = true\n")
    assert main(["eval", "--checkpoint", str(run / "checkpoint.fwl"),
                 "--config", "ev.toml", "--out", "e"]) == 2


# ----------------------------------------------------------------- bench


def test_bench_writes_the_csv_it_prints(capsys):
    rc = main(["bench", "--variants", "DeltaNet,BaselineSoftmax",
               "--lengths", "16,32", "--d-model", "16", "--heads", "2",
               "--n-layers", "1", "--reps", "1", "--out", "b"])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.startswith("variant,T,d_model,H,ns_per_token,state_bytes,reps")
    stored = (only_run_dir("b") / "scaling.csv").read_text()
    assert out == stored
    assert len(stored.splitlines()) == 1 + 4


def test_bench_ordering_flag_adds_a_ranking(capsys):
    rc = main(["bench", "--variants", "LinearTransformer,DeltaNet",
               "--lengths", "16", "--d-model", "16", "--heads", "2",
               "--n-layers", "1", "--reps", "2", "--ordering", "--out", "b"])
    assert rc == 0
    rows = json.loads((only_run_dir("b") / "ordering.json").read_text())
    assert [set(r) >= {"variant", "tokens_per_second", "relative"}
            for r in rows] == [True, True]
    assert "tokens/s" in capsys.readouterr().out


def test_bench_rejects_unknown_variants_and_bad_lengths(capsys):
    assert main(["bench", "--variants", "NoSuch", "--lengths", "8"]) == 2
    assert "unknown variants" in capsys.readouterr().err
    assert main(["bench", "--variants", "DeltaNet",
                 "--lengths", "8,oops"]) == 2
    assert "integers" in capsys.readouterr().err


# ---------------------------------------------------------------- verify


def test_verify_prints_a_full_pass_table(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out.splitlines()
    table = [l for l in out if l.startswith(("PASS", "FAIL"))]
    assert len(table) == len(verify_mod.CHECKS)
    assert all(l.startswith("PASS") for l in table)
    assert f"{len(table)}/{len(table)} invariants hold" in out


def test_verify_failure_names_the_invariant_and_exits_one(
        capsys, monkeypatch):
    fake = [verify_mod.CheckResult("always green", True),
            verify_mod.CheckResult("broken law", False, "off by 1")]
    monkeypatch.setattr(cli.verify_mod, "run_checks", lambda: fake)
    assert main(["verify"]) == 1
    captured = capsys.readouterr()
    assert "FAIL  broken law  (off by 1)" in captured.out
    assert "invariant failed: broken law" in captured.err


def test_verify_out_flag_stores_results(capsys):
    assert main(["verify", "--out", "v"]) == 0
    run = only_run_dir("v")
    results = json.loads((run / "results.json").read_text())
    assert all(r["ok"] for r in results)
    assert (run / "manifest.json").is_file()


# --------------------------------------------------------------- inspect


def test_inspect_describes_a_checkpoint(capsys):
    run = run_toy_training()
    capsys.readouterr()
    assert main(["inspect", str(run / "checkpoint.fwl")]) == 0
    out = capsys.readouterr().out
    assert "kind: ModelSpec" in out
    assert "variant = DeltaNet" in out
    assert "parameters: 3,242" in out
    assert "embed" in out and "39x16" in out


def test_inspect_rejects_tampered_magic(capsys):
    run = run_toy_training()
    blob = bytearray((run / "checkpoint.fwl").read_bytes())
    blob[:4] = b"XXXX"
    Path("evil.fwl").write_bytes(blob)
    capsys.readouterr()
    assert main(["inspect", "evil.fwl"]) == 2
    assert "bad magic" in capsys.readouterr().err


def test_inspect_rejects_truncated_payload(capsys):
    run = run_toy_training()
    blob = (run / "checkpoint.fwl").read_bytes()
    Path("cut.fwl").write_bytes(blob[:len(blob) - 64])
    capsys.readouterr()
    assert main(["inspect", "cut.fwl"]) == 2
    assert "truncated" in capsys.readouterr().err


# ------------------------------------------------------------ entry point


def test_unknown_subcommand_exits_two():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_module_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "fwl", "--help"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert "gen" in proc.stdout and "verify" in proc.stdout
