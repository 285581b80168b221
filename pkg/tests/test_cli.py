"""CLI subcommands, output schemas and exit codes."""
from __future__ import annotations

import csv
import gzip
import json

import pytest

from matchlearn.cli import main
from matchlearn.market import load_market, save_market


@pytest.fixture
def m2_file(tmp_path, m2):
    path = tmp_path / "m2.json"
    save_market(m2, path)
    return str(path)


@pytest.fixture
def m2b_file(tmp_path, m2b):
    path = tmp_path / "m2b.json"
    save_market(m2b, path)
    return str(path)


class TestGs:
    def test_m2_report(self, m2_file, capsys):
        assert main(["gs", "--market", m2_file]) == 0
        out = capsys.readouterr().out
        assert "(P1,A2) (P2,A1)" in out
        assert "stable: true" in out
        assert "optimal: true (1 stable match)" in out

    def test_m2b_two_stable(self, m2b_file, capsys):
        assert main(["gs", "--market", m2b_file]) == 0
        out = capsys.readouterr().out
        assert "(P1,A1) (P2,A2)" in out
        assert "2 stable matches" in out

    def test_malformed_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"proposers": [,]}')
        assert main(["gs", "--market", str(bad)]) == 1
        assert "line 1" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["gs", "--market", str(tmp_path / "nope.json")]) == 1

    def test_usage_error(self):
        assert main(["gs"]) == 1


class TestGenMarket:
    def test_deterministic(self, tmp_path, capsys):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["gen-market", "--n", "3", "--m", "3", "--seed", "7", "--out", str(a)]) == 0
        assert main(["gen-market", "--n", "3", "--m", "3", "--seed", "7", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_rank_mode_values(self, tmp_path):
        out = tmp_path / "mk.json"
        main(["gen-market", "--n", "2", "--m", "2", "--seed", "3", "--out", str(out)])
        market = load_market(out)
        for p in market.proposers:
            assert sorted(market.proposer_prefs[p].values()) == [0.5, 1.0]

    def test_uniform_mode_valid(self, tmp_path):
        out = tmp_path / "mk.json"
        main(["gen-market", "--n", "3", "--m", "2", "--seed", "5", "--mode", "uniform", "--out", str(out)])
        market = load_market(out)
        assert market.n == 3 and market.m == 2

    def test_empty_side_rejected(self, tmp_path):
        assert main(["gen-market", "--n", "0", "--m", "2", "--seed", "1", "--out", str(tmp_path / "x.json")]) == 1


class TestSimulate:
    def test_metrics_csv_schema_and_determinism(self, m2_file, tmp_path, capsys):
        out1, out2 = tmp_path / "m1.csv", tmp_path / "m2.csv"
        args = [
            "simulate", "--market", m2_file, "--epsilon", "0.1", "--steps", "20000",
            "--seed", "1", "--seed", "2", "--window", "0.5",
        ]
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        rows = list(csv.reader(out1.open()))
        assert rows[0] == [
            "epsilon", "seed", "posm_frequency", "stable_frequency",
            "time_to_first_posm", "mean_welfare", "modal_match",
        ]
        assert len(rows) == 3
        assert "median posm_frequency" in capsys.readouterr().out

    def test_gzip_output(self, m2_file, tmp_path):
        out = tmp_path / "metrics.csv.gz"
        main([
            "simulate", "--market", m2_file, "--epsilon", "0.1", "--steps", "5000",
            "--seed", "1", "--out", str(out),
        ])
        with gzip.open(out, "rt") as fh:
            assert fh.readline().startswith("epsilon,")

    def test_trace_output(self, m2_file, tmp_path):
        tdir = tmp_path / "traces"
        main([
            "simulate", "--market", m2_file, "--epsilon", "0.1", "--steps", "50",
            "--seed", "4", "--trace-dir", str(tdir),
        ])
        files = list(tdir.glob("trace_*.csv"))
        assert len(files) == 1
        rows = list(csv.reader(files[0].open()))
        assert rows[0] == ["t", "actions", "match", "utilities", "moods"]
        assert len(rows) == 51

    def test_json_format(self, m2_file, tmp_path):
        out = tmp_path / "metrics.json"
        main([
            "simulate", "--market", m2_file, "--epsilon", "0.1", "--steps", "5000",
            "--seed", "1", "--out", str(out), "--format", "json",
        ])
        payload = json.loads(out.read_text())
        assert payload[0]["epsilon"] == "0.1"

    def test_zero_steps_rejected(self, m2_file):
        assert main([
            "simulate", "--market", m2_file, "--epsilon", "0.1", "--steps", "0", "--seed", "1",
        ]) == 1


class TestChain:
    def test_sweep_csv_and_verdict(self, m2_file, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        code = main([
            "chain", "--market", m2_file,
            "--epsilon", "0.2", "--epsilon", "0.1", "--epsilon", "0.05",
            "--epsilon", "0.02", "--epsilon", "0.005", "--epsilon", "0.001",
            "--out", str(out),
        ])
        assert code == 0
        assert "posm mass nondecreasing as epsilon falls: true" in capsys.readouterr().out
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["epsilon", "posm_mass", "top_state", "residual"]
        masses = [float(r[1]) for r in rows[1:]]
        assert masses == sorted(masses, reverse=False) or all(
            b >= a - 1e-9 for a, b in zip(masses, masses[1:])
        )
        assert masses[-1] >= 0.9

    def test_dump_chain_files(self, m2_file, tmp_path):
        prefix = str(tmp_path / "dump")
        main(["chain", "--market", m2_file, "--epsilon", "0.1", "--dump-chain", prefix])
        trans = list(csv.reader(open(f"{prefix}_eps0.1_transitions.csv")))
        assert trans[0] == ["row", "col", "prob"]
        legend = json.loads(open(f"{prefix}_eps0.1_states.json").read())
        assert legend["0"][0]["proposer"] == "P1"
        pi_rows = list(csv.reader(open(f"{prefix}_eps0.1_pi.csv")))
        assert pi_rows[0] == ["state_index", "probability"]

    def test_too_large_market(self, tmp_path, capsys):
        big = tmp_path / "big.json"
        main(["gen-market", "--n", "4", "--m", "4", "--seed", "1", "--out", str(big)])
        assert main(["chain", "--market", str(big), "--epsilon", "0.1"]) == 2

    def test_epsilon_bounds(self, m2_file):
        assert main(["chain", "--market", m2_file, "--epsilon", "0.7"]) == 1
        assert main(["chain", "--market", m2_file, "--epsilon", "0.5"]) == 0


class TestResistance:
    def test_fit_table(self, m2_file, tmp_path, capsys):
        out = tmp_path / "slopes.csv"
        assert main(["resistance", "--market", m2_file, "--out", str(out)]) == 0
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["kind", "delta_u", "theory", "fitted_slope", "abs_error", "status"]
        kinds = {r[0] for r in rows[1:]}
        assert "content_adopt" in kinds and "content_remain_single" in kinds
        two_rows = [r for r in rows[1:] if r[0] == "content_remain_single"]
        assert all(r[2] == "2" for r in two_rows)
        assert all(r[5] == "pass" for r in rows[1:])
        assert "true" in capsys.readouterr().out

    def test_small_grid_rejected(self, m2_file):
        assert main([
            "resistance", "--market", m2_file, "--epsilon", "0.1", "--epsilon", "0.05",
        ]) == 1

    def test_non_2x2_rejected(self, tmp_path):
        big = tmp_path / "m33.json"
        main(["gen-market", "--n", "3", "--m", "3", "--seed", "2", "--out", str(big)])
        assert main(["resistance", "--market", str(big)]) == 1
