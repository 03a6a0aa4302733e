import numpy as np
import pytest

from qgen import dsl, policy
from qgen.board import board_entropy
from qgen.datagen import CorpusEntry, read_corpus
from qgen.evalcli import (
    DumpRecord, MetricsRow, TooFewBoards, cli, entropy_groups, format_report, frequency_table, generation_dump,
    leave_one_out, loglikelihood, metrics, metrics_from_dump, read_boards, read_dump, uniform_policy,
    write_boards, write_dump,
)
from qgen.policy import PolicyConfig
from qgen.train import TrainConfig

from conftest import random_boards


@pytest.fixture(scope="module")
def params():
    return policy.init(PolicyConfig(hidden=16, init_scale=0.5), np.random.default_rng(0))


def test_metrics_fields_and_dump_identity(tmp_path, params):
    boards = random_boards(30)
    records = generation_dump(params, boards, np.random.default_rng(0))
    row = metrics_from_dump(records)
    assert row == metrics(params, boards, rng=np.random.default_rng(0))
    write_dump(records, tmp_path / "d.txt")
    back = read_dump(tmp_path / "d.txt")
    assert back == records
    assert metrics_from_dump(back) == row
    assert 0 <= row.frac_eig_gt_095 <= row.frac_eig_gt_0 <= 1
    assert row.n_unique_novel <= row.n_unique


def test_novelty_against_reference():
    b = random_boards(1)[0]
    recs = [DumpRecord(b, "(size Blue)", 1.0, 3), DumpRecord(b, "(size Red)", 1.2, 3), DumpRecord(b, None, None, 9)]
    row = metrics_from_dump(recs, {"(size Blue)"})
    assert row == MetricsRow(avg_eig=2.2 / 3, frac_eig_gt_095=2 / 3, frac_eig_gt_0=2 / 3, n_unique=2,
                             n_unique_novel=1, avg_length_tokens=4.0, n_invalid=1)
    lines = format_report({"m": row}).splitlines()
    assert lines[0].split("\t")[1:] == ["avg_eig", "frac_eig_gt_095", "frac_eig_gt_0", "n_unique",
                                        "n_unique_novel", "avg_length_tokens", "n_invalid"]


def test_loglikelihood_reports_errors_per_program(params, grammar):
    b = random_boards(1)[0]
    res = loglikelihood(params, b, ["(size Red)", "(size", "(size 3)"])
    assert res.values[0] is not None and res.values[1] is None and res.values[2] is None
    assert res.errors[0] is None and "ParseError" in res.errors[1]
    assert res.total == res.values[0]


def test_uniform_policy_value(grammar):
    res = loglikelihood(uniform_policy(), random_boards(1)[0], ["(size Red)"])
    assert res.total == pytest.approx(-(np.log(5) + np.log(13) + np.log(5)))


def test_entropy_groups():
    boards = random_boards(12, cap=None)
    high, low = entropy_groups(boards, 5)
    assert min(map(board_entropy, high)) >= max(map(board_entropy, low))
    assert not set(high) & set(low)
    with pytest.raises(TooFewBoards):
        entropy_groups(boards[:9], 5)


def test_frequency_table(params):
    table = frequency_table(params, random_boards(5), 10)
    fracs = [f for _, f in table]
    assert fracs == sorted(fracs, reverse=True)
    assert sum(fracs) <= 1 + 1e-12


def test_leave_one_out(grammar):
    boards = random_boards(10)
    texts = ["(size Blue)", "(size Red)", "(orient Purple)"]
    questions = {b: texts for b in boards}
    p = policy.init(PolicyConfig(hidden=8), np.random.default_rng(0))
    out = leave_one_out(p, questions, TrainConfig(epochs=2, lr=0.5))
    assert set(out["per_board"]) == set(boards)
    assert "ll_high" in out and "ll_low" in out
    base = np.mean([loglikelihood(p, b, texts).total for b in boards])
    assert out["ll_all"] > base


def test_board_list_round_trip(tmp_path):
    boards = random_boards(4)
    write_boards(boards, tmp_path / "b.txt")
    assert read_boards(tmp_path / "b.txt") == boards


def test_cli_exit_codes(tmp_path, capsys):
    assert cli(["parse", "(size Red)"]) == 0
    assert "(size Red)\nNum" in capsys.readouterr().out
    assert cli(["parse", "(size"]) == 2
    assert cli(["frobnicate"]) == 1
    assert cli([]) == 1
    assert cli(["enumerate", str(tmp_path / "missing.txt")]) == 2
    bad = tmp_path / "bad.ckpt"
    bad.write_text("qgen-policy v1 grammar=deadbeef\n")
    assert cli(["evaluate", "--checkpoint", str(bad), "--n-boards", "2"]) == 2


def test_cli_pipeline(tmp_path, capsys):
    boards = tmp_path / "boards.txt"
    assert cli(["sample-boards", "--n", "3", "--seed", "2", "--out", str(boards)]) == 0
    assert len(read_boards(boards)) == 3
    corpus = tmp_path / "c.txt"
    assert cli(["gen-corpus", "--boards", str(boards), "--k", "2", "--pool-size", "10", "--out", str(corpus)]) == 0
    assert len(read_corpus(corpus)) == 6
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("hidden = 8\nepochs = 1  # quick\n")
    ckpt = tmp_path / "p.ckpt"
    assert cli(["train-supervised", "--corpus", str(corpus), "--config", str(cfg), "--out", str(ckpt)]) == 0
    assert policy.load(ckpt).W1.shape[1] == 8
    assert cli(["train-rl", "--iterations", "2", "--config", str(cfg), "--out", str(ckpt)]) == 0
    one = tmp_path / "one.txt"
    one.write_text(read_boards(boards)[0].to_text())
    assert cli(["generate", str(one), "--checkpoint", str(ckpt), "--start", "B", "--n", "3"]) == 0
    assert cli(["eig", str(one), "(size Blue)"]) == 0
    dump = tmp_path / "d.txt"
    assert cli(["evaluate", "--checkpoint", str(ckpt), "--boards", str(boards), "--dump", str(dump)]) == 0
    assert len(read_dump(dump)) == 3
    assert cli(["grammar-dump"]) == 0
    capsys.readouterr()
    bad_cfg = tmp_path / "bad.txt"
    bad_cfg.write_text("colour = 3\n")
    assert cli(["train-rl", "--config", str(bad_cfg), "--out", str(ckpt)]) == 2
