"""End-to-end tests for the command-line interface.

Every test shells out through ``python -m cfnlab.cli`` so the whole stack is
exercised exactly as a user would drive it: argument parsing, file IO, exit
codes, and the determinism contract (byte-identical artifacts on rerun,
thread count never changes results).
"""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

import cfnlab
from cfnlab.numkit import Rng
from cfnlab.stack import init_stack, save_checkpoint
from cfnlab.toytext import write_toy_corpus


def run_cli(args, cwd=None, env_extra=None):
    env = os.environ.copy()
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        [sys.executable, "-m", "cfnlab.cli"] + [str(a) for a in args],
        capture_output=True, text=True, cwd=cwd, env=env)


def stdout_value(proc, key):
    # Lines look like "val_perplexity 12.5"; return the value for `key`.
    for line in proc.stdout.splitlines():
        parts = line.split()
        if parts and parts[0] == key:
            return " ".join(parts[1:])
    raise AssertionError(f"no '{key}' line in: {proc.stdout!r}")


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    write_toy_corpus(str(d), n_tokens=12_000, vocab_words=120, seed=7)
    return d


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, corpus_dir):
    out = tmp_path_factory.mktemp("run")
    proc = run_cli([
        "train", "--train", corpus_dir / "train.txt",
        "--valid", corpus_dir / "valid.txt",
        "--cell", "cfn", "--depth", 2, "--hidden", 16,
        "--epochs", 2, "--lr0", 1.0, "--max-vocab", 150,
        "--seed", 3, "--out", out])
    assert proc.returncode == 0, proc.stderr
    return out, proc


class TestTrainEval:
    def test_train_writes_artifacts(self, trained_run):
        out, proc = trained_run
        for name in ("checkpoint.txt", "vocab.tsv", "train-log.csv",
                     "run-manifest.json"):
            assert (out / name).exists(), name
        assert "val_perplexity" in proc.stdout
        # One progress line per epoch.
        assert sum(1 for l in proc.stdout.splitlines()
                   if l.startswith("epoch ")) == 2

    def test_train_log_header_and_rows(self, trained_run):
        out, _ = trained_run
        lines = (out / "train-log.csv").read_text().splitlines()
        assert lines[0] == "epoch,step,lr,train_nll,val_perp"
        assert len(lines) == 3
        lr0, lr1 = (float(l.split(",")[2]) for l in lines[1:])
        assert lr1 == pytest.approx(lr0 / 3.0)

    def test_manifest_shape(self, trained_run):
        out, _ = trained_run
        man = json.loads((out / "run-manifest.json").read_text())
        assert sorted(man) == ["artifact", "config", "summary", "version"]
        assert man["artifact"] == "cfnlab"
        assert man["version"] == cfnlab.__version__
        assert man["config"]["cell"] == "cfn"
        assert man["config"]["epochs"] == 2
        assert "val_perplexity" in man["summary"]
        # No wall-clock contamination anywhere.
        blob = json.dumps(man).lower()
        assert "time" not in blob and "date" not in blob

    def test_eval_matches_train_val_perplexity(self, trained_run, corpus_dir,
                                               tmp_path):
        out, proc = trained_run
        ev = run_cli(["eval", "--checkpoint", out / "checkpoint.txt",
                      "--vocab", out / "vocab.tsv",
                      "--data", corpus_dir / "valid.txt",
                      "--out", tmp_path])
        assert ev.returncode == 0, ev.stderr
        assert (float(stdout_value(ev, "perplexity"))
                == float(stdout_value(proc, "val_perplexity")))

    def test_eval_deterministic(self, trained_run, corpus_dir, tmp_path):
        out, _ = trained_run
        args = ["eval", "--checkpoint", out / "checkpoint.txt",
                "--vocab", out / "vocab.tsv",
                "--data", corpus_dir / "valid.txt", "--out", tmp_path]
        a, b = run_cli(args), run_cli(args)
        assert a.stdout == b.stdout

    def test_zero_weights_give_uniform_perplexity(self, corpus_dir, tmp_path):
        # All-zero weights make every softmax uniform, so the perplexity
        # equals the vocabulary size exactly.
        vocab_proc = run_cli(["eval", "--checkpoint", "missing",
                              "--vocab", "missing", "--data", "missing"])
        assert vocab_proc.returncode == 1  # sanity: bad paths fail loudly
        run = run_cli(["train", "--train", corpus_dir / "train.txt",
                       "--valid", corpus_dir / "valid.txt",
                       "--hidden", 8, "--epochs", 1, "--max-vocab", 50,
                       "--out", tmp_path])
        assert run.returncode == 0, run.stderr
        man = json.loads((tmp_path / "run-manifest.json").read_text())
        vocab = man["summary"]["vocab"]
        stack = init_stack("cfn", 1, 8, vocab, Rng(0), scale=0.0)
        save_checkpoint(stack, str(tmp_path / "zero.txt"))
        ev = run_cli(["eval", "--checkpoint", tmp_path / "zero.txt",
                      "--vocab", tmp_path / "vocab.tsv",
                      "--data", corpus_dir / "valid.txt", "--out", tmp_path])
        assert ev.returncode == 0, ev.stderr
        assert float(stdout_value(ev, "perplexity")) == pytest.approx(
            vocab, rel=1e-12)

    def test_eval_vocab_size_mismatch_exits_1(self, trained_run, corpus_dir,
                                              tmp_path):
        out, _ = trained_run
        stack = init_stack("cfn", 1, 4, 9, Rng(0))  # tiny, wrong vocab
        save_checkpoint(stack, str(tmp_path / "small.txt"))
        ev = run_cli(["eval", "--checkpoint", tmp_path / "small.txt",
                      "--vocab", out / "vocab.tsv",
                      "--data", corpus_dir / "valid.txt", "--out", tmp_path])
        assert ev.returncode == 1
        assert ev.stderr.strip() != ""

    def test_out_dir_env_fallback(self, corpus_dir, tmp_path):
        run = run_cli(["train", "--train", corpus_dir / "train.txt",
                       "--valid", corpus_dir / "valid.txt",
                       "--hidden", 8, "--epochs", 1, "--max-vocab", 50],
                      env_extra={"CFNLAB_OUT": str(tmp_path)})
        assert run.returncode == 0, run.stderr
        assert (tmp_path / "checkpoint.txt").exists()


class TestExitCodes:
    def test_unknown_subcommand_is_usage_error(self):
        assert run_cli(["frobnicate"]).returncode == 2

    def test_unknown_flag_is_usage_error(self):
        assert run_cli(["dynamics", "henon", "--bogus"]).returncode == 2

    def test_missing_subcommand_is_usage_error(self):
        assert run_cli([]).returncode == 2

    def test_domain_error_is_exit_1(self, tmp_path):
        # checkpoint-backed map without a checkpoint path
        proc = run_cli(["dynamics", "attractor", "--map", "checkpoint",
                        "--out", tmp_path])
        assert proc.returncode == 1
        assert proc.stderr.strip() != ""

    def test_gradcheck_pass_and_corrupt_fail(self, tmp_path):
        ok = run_cli(["gradcheck", "--cell", "cfn", "--seeds", 1,
                      "--out", tmp_path])
        assert ok.returncode == 0, ok.stderr
        assert "PASS" in ok.stdout
        bad = run_cli(["gradcheck", "--cell", "cfn", "--seeds", 1,
                       "--corrupt", "--out", tmp_path])
        assert bad.returncode == 1
        assert "FAIL" in bad.stdout and "worst_tensor" in bad.stdout


class TestDynamicsCommands:
    def test_henon_cloud(self, tmp_path):
        proc = run_cli(["dynamics", "henon", "--n-init", 20, "--keep", 20,
                        "--burn-in", 200, "--out", tmp_path])
        assert proc.returncode == 0, proc.stderr
        lines = (tmp_path / "cloud.csv").read_text().splitlines()
        assert lines[0] == "x,y"
        pts = np.array([[float(v) for v in l.split(",")] for l in lines[1:]])
        assert len(pts) == 400
        assert np.all(np.abs(pts[:, 0]) < 1.5)
        assert np.all(np.abs(pts[:, 1]) < 0.45)

    def test_attractor_single_orbit_files(self, tmp_path):
        proc = run_cli(["dynamics", "attractor", "--map", "paper-lstm",
                        "--steps", 300, "--keep-from", 200,
                        "--out", tmp_path])
        assert proc.returncode == 0, proc.stderr
        orbit = (tmp_path / "orbit.csv").read_text().splitlines()
        assert orbit[0] == "t,h0,h1,c0,c1"
        assert len(orbit) == 1 + 101
        assert (tmp_path / "cloud.csv").read_text().splitlines()[0] == "h0,h1"

    def test_impulse_certificates(self, tmp_path):
        proc = run_cli(["dynamics", "impulse", "--spike", 5,
                        "--horizon", 40, "--out", tmp_path])
        assert proc.returncode == 0, proc.stderr
        certs = (tmp_path / "certificates.csv").read_text().splitlines()
        assert certs[0] == "i,T,k,Theta,H,bound,observed,satisfied"
        assert all(l.endswith(",true") for l in certs[1:])

    def test_lemma1_and_lemma2_pass(self, tmp_path):
        l1 = run_cli(["dynamics", "lemma1", "--trials", 10, "--out", tmp_path])
        assert l1.returncode == 0, l1.stderr
        assert "PASS" in l1.stdout
        l2 = run_cli(["dynamics", "lemma2", "--maps", 2, "--trials", 10,
                      "--out", tmp_path])
        assert l2.returncode == 0, l2.stderr
        assert "PASS" in l2.stdout

    def test_lyapunov_reports_sign(self, tmp_path):
        proc = run_cli(["dynamics", "lyapunov", "--map", "paper-gru",
                        "--steps", 2000, "--out", tmp_path])
        assert proc.returncode == 0, proc.stderr
        assert float(stdout_value(proc, "lyapunov")) > 0.0
        assert stdout_value(proc, "chaotic") == "true"

    def test_multilayer_on_checkpoint(self, trained_run, corpus_dir,
                                      tmp_path):
        out, _ = trained_run
        proc = run_cli(["dynamics", "multilayer",
                        "--checkpoint", out / "checkpoint.txt",
                        "--vocab", out / "vocab.tsv",
                        "--data", corpus_dir / "valid.txt",
                        "--warm", 30, "--horizon", 100, "--out", tmp_path])
        assert proc.returncode == 0, proc.stderr
        hl = stdout_value(proc, "half_lives").split()
        assert len(hl) == 2 and all(v.isdigit() for v in hl)
        lines = (tmp_path / "decay.csv").read_text().splitlines()
        assert lines[0] == "t,layer,unit,value"


class TestDeterminism:
    def test_rerun_byte_identical(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            proc = run_cli(["dynamics", "diverge", "--map", "paper-lstm",
                            "--trials", 20, "--steps", 100, "--seed", 5,
                            "--out", out])
            assert proc.returncode == 0, proc.stderr
        for name in ("diverge.csv", "run-manifest.json"):
            assert ((out_a / name).read_bytes()
                    == (out_b / name).read_bytes()), name

    def test_threads_do_not_change_csv(self, tmp_path):
        outs = {}
        for threads in (1, 4):
            out = tmp_path / f"t{threads}"
            proc = run_cli(["dynamics", "diverge", "--map", "paper-gru",
                            "--trials", 40, "--steps", 120, "--seed", 2,
                            "--threads", threads, "--out", out])
            assert proc.returncode == 0, proc.stderr
            outs[threads] = ((out / "diverge.csv").read_bytes(), proc.stdout)
        assert outs[1] == outs[4]

    def test_csv_line_endings_are_lf(self, tmp_path):
        proc = run_cli(["dynamics", "henon", "--n-init", 5, "--keep", 5,
                        "--burn-in", 50, "--out", tmp_path])
        assert proc.returncode == 0, proc.stderr
        raw = (tmp_path / "cloud.csv").read_bytes()
        assert b"\r" not in raw
