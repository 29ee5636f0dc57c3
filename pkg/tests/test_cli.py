"""Command-line behavior: happy paths, exit codes, bench artifacts."""

import csv
import os

import pytest

from aggtree import Node, SqliteStore, WriteSet, make_sum
from aggtree.cli import main
from conftest import k


@pytest.fixture
def db(tmp_path):
    return str(tmp_path / "cli.sqlite")


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    return str(path)


def build(db, tmp_path, rows=((1, 10), (2, 20), (5, 50), (9, 90)), args=(),
          capsys=None):
    src = write_csv(tmp_path / "data.csv", rows)
    rc = main(["build", src, "--db", db, *args])
    assert rc == 0
    if capsys is not None:
        capsys.readouterr()
    return src


class TestLifecycle:
    def test_build_query_mutate(self, db, tmp_path, capsys):
        build(db, tmp_path, capsys=capsys)
        assert main(["query", "1", "5", "--db", db]) == 0
        assert capsys.readouterr().out.strip() == "80"

        assert main(["insert", "3", "30", "--db", db]) == 0
        assert main(["query", "1", "5", "--db", db]) == 0
        assert capsys.readouterr().out.strip() == "110"

        assert main(["update", "3", "31", "--db", db]) == 0
        assert main(["get", "3", "--db", db]) == 0
        assert capsys.readouterr().out.strip() == "31"

        assert main(["delete", "3", "--db", db]) == 0
        assert main(["query", "1", "5", "--db", db]) == 0
        assert capsys.readouterr().out.strip() == "80"

    def test_verify_ok(self, db, tmp_path, capsys):
        build(db, tmp_path, capsys=capsys)
        assert main(["verify", "--db", db]) == 0
        assert "ok" in capsys.readouterr().out

    def test_stats_go_to_stderr(self, db, tmp_path, capsys):
        build(db, tmp_path, capsys=capsys)
        assert main(["query", "1", "9", "--db", db, "--stats"]) == 0
        captured = capsys.readouterr()
        assert "read_rounds=1" in captured.err
        assert captured.out.strip() == "170"

    def test_aggregation_choice(self, db, tmp_path, capsys):
        build(db, tmp_path, args=("--agg", "max"), capsys=capsys)
        assert main(["query", "1", "9", "--db", db]) == 0
        assert capsys.readouterr().out.strip() == "90"

    def test_env_var_supplies_db(self, db, tmp_path, capsys, monkeypatch):
        build(db, tmp_path, capsys=capsys)
        monkeypatch.setenv("AGGTREE_DB", db)
        assert main(["get", "5"]) == 0
        assert capsys.readouterr().out.strip() == "50"


class TestComposite:
    def test_groupby_csv_output(self, db, tmp_path, capsys):
        rows = [(1, 100, 7), (1, 200, 8), (2, 150, 9), (2, 900, 4)]
        src = write_csv(tmp_path / "g.csv", rows)
        assert main(["build", src, "--db", db,
                     "--key-codec", "composite:uint64:uint64"]) == 0
        capsys.readouterr()
        assert main(["groupby", "100", "500", "--db", db]) == 0
        out = capsys.readouterr().out
        assert list(csv.reader(out.splitlines())) == [["1", "15"], ["2", "9"]]

    def test_groupby_explicit_groups(self, db, tmp_path, capsys):
        rows = [(1, 100, 7), (2, 150, 9)]
        src = write_csv(tmp_path / "g.csv", rows)
        assert main(["build", src, "--db", db,
                     "--key-codec", "composite:uint64:uint64"]) == 0
        capsys.readouterr()
        assert main(["groupby", "100", "500", "--db", db,
                     "--x", "2", "--x", "9"]) == 0
        out = capsys.readouterr().out
        assert list(csv.reader(out.splitlines())) == [["2", "9"], ["9", "0"]]

    def test_composite_point_ops(self, db, tmp_path, capsys):
        rows = [(1, 100, 7)]
        src = write_csv(tmp_path / "g.csv", rows)
        assert main(["build", src, "--db", db,
                     "--key-codec", "composite:uint64:uint64"]) == 0
        capsys.readouterr()
        assert main(["get", "1,100", "--db", db]) == 0
        assert capsys.readouterr().out.strip() == "7"
        assert main(["insert", "3,250", "11", "--db", db]) == 0
        assert main(["get", "3,250", "--db", db]) == 0
        assert capsys.readouterr().out.strip() == "11"


class TestExitCodes:
    def test_no_db_is_usage_error(self, capsys, monkeypatch):
        monkeypatch.delenv("AGGTREE_DB", raising=False)
        assert main(["get", "5"]) == 2

    def test_missing_tree_is_data_error(self, db):
        assert main(["get", "5", "--db", db]) == 3

    def test_duplicate_insert(self, db, tmp_path):
        build(db, tmp_path)
        assert main(["insert", "5", "1", "--db", db]) == 3

    def test_key_not_found(self, db, tmp_path):
        build(db, tmp_path)
        assert main(["get", "777", "--db", db]) == 3
        assert main(["delete", "777", "--db", db]) == 3

    def test_unparseable_key(self, db, tmp_path):
        build(db, tmp_path)
        assert main(["get", "banana", "--db", db]) == 3

    def test_verify_reports_corruption(self, db, tmp_path, capsys):
        build(db, tmp_path)
        codec_store = SqliteStore(db, _sum_codec())
        root = next(n for n in codec_store.snapshot() if n.is_root)
        codec_store.write_round(WriteSet(upserts=(
            Node(root.level, root.min, root.max, (root.aggs[0] + 1,), ()),)))
        codec_store.close()
        assert main(["verify", "--db", db]) == 4
        assert "FAIL" in capsys.readouterr().out


def _sum_codec():
    from aggtree import Int64ValueCodec, NodeCodec
    return NodeCodec(make_sum().codec, Int64ValueCodec())


class TestAuth:
    def test_prove_and_verify_round_trip(self, db, tmp_path, capsys):
        build(db, tmp_path, args=("--auth",), capsys=capsys)
        assert main(["auth-root", "--db", db]) == 0
        root = capsys.readouterr().out.strip()
        proof = str(tmp_path / "p.bin")
        assert main(["auth-prove", "5", "--db", db, "--out", proof]) == 0
        capsys.readouterr()
        assert main(["auth-verify", "5", "--proof", proof, "--root", root]) == 0
        assert "verified present: 50" in capsys.readouterr().out

    def test_verify_fails_against_wrong_root(self, db, tmp_path, capsys):
        build(db, tmp_path, args=("--auth",))
        proof = str(tmp_path / "p.bin")
        assert main(["auth-prove", "5", "--db", db, "--out", proof]) == 0
        assert main(["auth-verify", "5", "--proof", proof,
                     "--root", "00" * 32]) == 4
        assert "invalid" in capsys.readouterr().out

    def test_root_updates_after_mutation(self, db, tmp_path, capsys):
        build(db, tmp_path, args=("--auth",), capsys=capsys)
        assert main(["auth-root", "--db", db]) == 0
        before = capsys.readouterr().out.strip()
        assert main(["insert", "7", "70", "--db", db]) == 0
        assert main(["auth-root", "--db", db]) == 0
        after = capsys.readouterr().out.strip()
        assert before != after
        # proofs made now verify against the new anchor
        proof = str(tmp_path / "p7.bin")
        assert main(["auth-prove", "7", "--db", db, "--out", proof]) == 0
        assert main(["auth-verify", "7", "--proof", proof, "--root", after]) == 0

    def test_range_query_refused_on_auth_tree(self, db, tmp_path):
        build(db, tmp_path, args=("--auth",))
        assert main(["query", "1", "9", "--db", db]) == 3


class TestBench:
    def test_emits_csv_and_figures(self, tmp_path, capsys):
        out = str(tmp_path / "bench")
        assert main(["bench", "--n", "500", "--ranges", "3", "--min-r", "16",
                     "--max-r", "64", "--mutations", "5",
                     "--out-dir", out]) == 0
        printed = capsys.readouterr().out.splitlines()
        csv_path = os.path.join(out, "bench.csv")
        assert csv_path in printed
        with open(csv_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        ops = {r["operation"] for r in rows}
        assert {"build", "query", "scan", "insert", "delete"} <= ops
        q = next(r for r in rows if r["operation"] == "query")
        assert q["read_rounds"] == "1" and q["write_rounds"] == "0"
        scans = [r for r in rows if r["operation"] == "scan"]
        assert all(int(r["rows_scanned"]) == int(r["r"]) for r in scans)
        for fig in ("bench_query_cost.png", "bench_levels.png"):
            assert os.path.exists(os.path.join(out, fig))

    def test_no_figures_flag(self, tmp_path, capsys):
        out = str(tmp_path / "bench2")
        assert main(["bench", "--n", "200", "--ranges", "2", "--min-r", "16",
                     "--max-r", "32", "--mutations", "2", "--no-figures",
                     "--out-dir", out]) == 0
        capsys.readouterr()
        assert os.path.exists(os.path.join(out, "bench.csv"))
        assert not os.path.exists(os.path.join(out, "bench_query_cost.png"))

    def test_sqlite_backend(self, tmp_path, capsys):
        out = str(tmp_path / "bench3")
        assert main(["bench", "--backend", "sqlite", "--n", "200",
                     "--ranges", "2", "--min-r", "16", "--max-r", "32",
                     "--mutations", "2", "--no-figures", "--out-dir", out]) == 0
        capsys.readouterr()
        with open(os.path.join(out, "bench.csv"), newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert all(r["backend"] == "sqlite" for r in rows)
