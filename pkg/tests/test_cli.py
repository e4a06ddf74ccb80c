import csv
import json

import pytest

from darboux.cli import main

from conftest import FIXTURES


def run(*argv):
    return main([str(a) for a in argv])


class TestCheck:
    def test_so3_passes(self, capsys):
        assert run("check", FIXTURES / "so3.json") == 0
        out = capsys.readouterr().out
        assert "generic rank: 2" in out

    def test_non_jacobi_fails_naming_triple(self, capsys):
        assert run("check", FIXTURES / "non_jacobi.json") == 1
        assert "(1, 2, 3)" in capsys.readouterr().out

    def test_zero_matrix_rank_zero(self, capsys):
        assert run("check", FIXTURES / "zero3.json") == 0
        assert "generic rank: 0" in capsys.readouterr().out

    def test_missing_file_is_input_error(self):
        assert run("check", "no-such-file.json") == 2

    def test_malformed_json_is_input_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run("check", bad) == 2

    def test_undeclared_symbol_is_input_error(self, tmp_path):
        doc = {"format_version": 1, "variables": ["x1", "x2"],
               "matrix": [["0", "q"], ["-1*q", "0"]]}
        path = tmp_path / "undeclared.json"
        path.write_text(json.dumps(doc))
        assert run("check", path) == 2


class TestRank:
    def test_toda_rank(self, capsys):
        assert run("rank", FIXTURES / "toda3.json") == 0
        assert "generic rank: 4" in capsys.readouterr().out


class TestReduce:
    def test_kermack_succeeds(self, tmp_path):
        out = tmp_path / "result.json"
        assert run("reduce", FIXTURES / "kermack.json", "-o", out) == 0
        doc = json.loads(out.read_text())
        assert doc["status"] == "jacobian-congruence"
        assert doc["casimirs"] == ["x1 + x2 + x3"]
        assert doc["target"] == {"n": 3, "r": 2}

    def test_so3_require_jacobian_is_congruence_only(self, tmp_path):
        out = tmp_path / "result.json"
        code = run("reduce", FIXTURES / "so3.json", "--require-jacobian",
                   "-o", out)
        assert code == 3
        assert json.loads(out.read_text())["status"] == "congruence-only"

    def test_so3_allow_ntt(self, tmp_path):
        out = tmp_path / "result.json"
        assert run("reduce", FIXTURES / "so3.json", "--allow-ntt", "-o", out) == 0
        doc = json.loads(out.read_text())
        assert doc["status"] == "ntt-congruence"
        assert doc["ntt_factor"] == "x1*x2*x3"
        assert doc["branch"]
        assert doc["reparametrization"].startswith("dtau = ")

    def test_budget_exhaustion_exit_4(self, tmp_path):
        out = tmp_path / "result.json"
        code = run("reduce", FIXTURES / "so3.json", "--max-steps", "1",
                   "-o", out)
        assert code == 4
        assert json.loads(out.read_text())["status"] == "failed"

    def test_trace_steps_have_kinds_and_flags(self, tmp_path):
        out = tmp_path / "result.json"
        run("reduce", FIXTURES / "kermack.json", "-o", out)
        doc = json.loads(out.read_text())
        assert doc["trace"]
        for step in doc["trace"]:
            assert step["kind"] in ("permute", "scale", "combine")
            assert isinstance(step["jetm"], bool)

    def test_byte_identical_given_same_seed(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            run("reduce", FIXTURES / "toda3.json", "--seed", "5", "-o", out)
        assert a.read_bytes() == b.read_bytes()


class TestVerify:
    @pytest.fixture
    def kermack_result(self, tmp_path):
        out = tmp_path / "result.json"
        run("reduce", FIXTURES / "kermack.json", "-o", out)
        return out

    def test_round_trip_passes(self, kermack_result, capsys):
        assert run("verify", FIXTURES / "kermack.json", kermack_result) == 0
        assert "overall: pass" in capsys.readouterr().out

    def test_toda_round_trip(self, tmp_path):
        out = tmp_path / "result.json"
        run("reduce", FIXTURES / "toda3.json", "-o", out)
        assert run("verify", FIXTURES / "toda3.json", out) == 0

    def test_tampered_result_fails_with_witness(self, kermack_result, tmp_path,
                                                capsys):
        doc = json.loads(kermack_result.read_text())
        doc["K"][0][0] = doc["K"][0][0] + " + 1/1000"
        tampered = tmp_path / "tampered.json"
        tampered.write_text(json.dumps(doc))
        assert run("verify", FIXTURES / "kermack.json", tampered) == 1
        out = capsys.readouterr().out
        assert "FAIL" in out and "witness" in out

    def test_failed_result_is_input_error(self, tmp_path):
        out = tmp_path / "failed.json"
        run("reduce", FIXTURES / "so3.json", "--max-steps", "1", "-o", out)
        assert run("verify", FIXTURES / "so3.json", out) == 2


class TestSimulate:
    def test_toda_writes_csv_with_contract_columns(self, tmp_path, capsys):
        out = tmp_path / "traj.csv"
        code = run("simulate", FIXTURES / "toda3.json", "--x0", "1,1,0.5,0,-0.5",
                   "--t-end", "1", "--dt", "0.001", "-o", out)
        assert code == 0
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "x1", "x2", "x3", "x4", "x5", "H", "C1"]
        assert len(rows) == 1002
        assert "drift" in capsys.readouterr().out

    def test_parameters_required(self):
        assert run("simulate", FIXTURES / "kermack.json", "--x0", "1,1,1",
                   "--t-end", "1", "--dt", "0.01") == 2

    def test_parameters_accepted(self, capsys):
        assert run("simulate", FIXTURES / "kermack.json", "--x0", "1,1,1",
                   "--t-end", "1", "--dt", "0.01", "--params", "b=0.5") == 0
        assert "casimir C1 drift" in capsys.readouterr().out

    def test_missing_hamiltonian_is_input_error(self):
        assert run("simulate", FIXTURES / "zero3.json", "--x0", "1,1,1",
                   "--t-end", "1", "--dt", "0.01") == 2

    def test_x0_outside_domain_is_input_error(self):
        assert run("simulate", FIXTURES / "so3.json", "--x0=-1,1,1",
                   "--t-end", "1", "--dt", "0.01") == 2
