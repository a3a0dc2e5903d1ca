import json
import subprocess
import sys
from pathlib import Path

import pytest

from wignersim.cli import EXIT_ENGINE, EXIT_FALSIFIED, EXIT_INPUT, EXIT_OK, main
from wignersim.protofile import parse

HERE = Path(__file__).parent
GOLDEN = HERE / "golden"

FIELDS = [
    "format_version", "protocol", "model", "trials", "seed", "histogram",
    "expectations", "return_rate", "bayes_factor", "wall_ms",
]


def invoke(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestRun:
    def test_unitary_passes(self, capsys):
        code, out, err = invoke(capsys, "run", "--builtin", "deutsch-wigner", "--model", "unitary",
                                "--trials", "100", "--seed", "7")
        assert code == EXIT_OK and err == ""
        report = json.loads(out)
        assert list(report) == FIELDS
        assert report["format_version"] == 1
        assert report["return_rate"] == 1.0
        assert report["histogram"] == [{"outcome": [0, 0, 0, 0, 1], "count": 100}]
        assert report["expectations"][0]["pass"] is True
        assert report["bayes_factor"] == 2.0**100

    def test_collapse_falsifies(self, capsys):
        code, out, err = invoke(capsys, "run", "--builtin", "deutsch-wigner", "--model", "collapse",
                                "--trials", "100000", "--seed", "7")
        assert code == EXIT_FALSIFIED
        verdict = json.loads(out)["expectations"][0]
        assert verdict["pass"] is False
        assert abs(verdict["observed_prob"] - 0.5) <= 0.0047
        assert "expectation at step 10 failed" in err

    def test_tsv(self, capsys):
        code, out, _ = invoke(capsys, "run", "--builtin", "photon-mirror", "--model", "unitary",
                              "--trials", "20", "--format", "tsv")
        assert code == EXIT_OK
        assert out == "photon\tmirror\tcount\n0\t0\t20\n"

    def test_out_file(self, capsys, tmp_path):
        target = tmp_path / "r.json"
        code, out, _ = invoke(capsys, "run", "--builtin", "chain-3", "--model", "collapse",
                              "--trials", "5", "--out", str(target))
        assert code == EXIT_OK and out == ""
        assert json.loads(target.read_text())["trials"] == 5

    def test_byte_determinism(self, capsys):
        argv = ("run", "--builtin", "which-outcome", "--model", "collapse", "--trials", "2000", "--seed", "3")
        outs = []
        for _ in range(2):
            _, out, _ = invoke(capsys, *argv)
            outs.append([ln for ln in out.splitlines() if '"wall_ms"' not in ln])
        assert outs[0] == outs[1]

    def test_workers_flag_does_not_change_report(self, capsys):
        argv = ["run", "--builtin", "deutsch-wigner", "--model", "collapse", "--trials", "1500", "--seed", "1"]
        _, a, _ = invoke(capsys, *argv)
        _, b, _ = invoke(capsys, *argv, "--workers", "2")
        a, b = json.loads(a), json.loads(b)
        a.pop("wall_ms"), b.pop("wall_ms")
        assert a == b

    def test_collapse_sites_selection(self, capsys):
        code, out, _ = invoke(capsys, "run", "--builtin", "deutsch-wigner", "--model", "collapse",
                              "--trials", "50", "--collapse-sites", "")
        assert code == EXIT_OK
        assert json.loads(out)["return_rate"] == 1.0

    def test_broken_file_located(self, capsys, tmp_path):
        broken = tmp_path / "broken.wproto"
        text = (GOLDEN / "deutsch-wigner.wproto").read_text().replace("step couple poison cat", "step couple poison")
        broken.write_text(text)
        code, out, err = invoke(capsys, "run", "--protocol", str(broken), "--model", "unitary")
        assert code == EXIT_INPUT and out == ""
        assert f"{broken}:11:19: error: expected register name" in err

    def test_validation_error_located(self, capsys, tmp_path):
        bad = tmp_path / "bad.wproto"
        bad.write_text("protocol x\nregisters\n  a 2\ninit a=0\nstep superpose a theta=0.1 phi=0.0\nreverse 1..2\n")
        code, _, err = invoke(capsys, "validate", "--protocol", str(bad))
        assert code == EXIT_INPUT
        assert ":6:1: error: SelfReferentialReverse" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = invoke(capsys, "validate", "--protocol", str(tmp_path / "nope.wproto"))
        assert code == EXIT_INPUT and "nope.wproto" in err

    def test_engine_assertion(self, capsys, tmp_path):
        f = tmp_path / "e.wproto"
        f.write_text(
            "protocol e\nregisters\n  a 2\n  b 2\ninit a=0 b=0\n"
            "step superpose a theta=0.7853981633974483 phi=0.0\nstep couple a b\n"
            "check-factorized b tol=1e-10\nmeasure all\n"
        )
        code, out, err = invoke(capsys, "run", "--protocol", str(f), "--model", "unitary", "--trials", "3")
        assert code == EXIT_ENGINE and out == ""
        assert "trial 0" in err

    @pytest.mark.parametrize("argv", [
        ["run", "--builtin", "deutsch-wigner"],
        ["run", "--builtin", "deutsch-wigner", "--model", "unitary", "--trials", "0"],
        ["run", "--builtin", "deutsch-wigner", "--protocol", "x", "--model", "unitary"],
        ["run", "--builtin", "chain-0", "--model", "unitary"],
        ["frobnicate"],
    ])
    def test_usage_errors(self, capsys, argv):
        with pytest.raises(SystemExit) as info:
            code = main(argv)
            raise SystemExit(code)
        assert info.value.code == EXIT_INPUT


class TestTextCommands:
    def test_validate(self, capsys):
        assert invoke(capsys, "validate", "--builtin", "deutsch-wigner") == (EXIT_OK, "ok 10 steps\n", "")

    def test_validate_file(self, capsys):
        code, out, _ = invoke(capsys, "validate", "--protocol", str(GOLDEN / "photon-mirror.wproto"))
        assert (code, out) == (EXIT_OK, "ok 6 steps\n")

    def test_validate_too_large(self, capsys):
        code, out, err = invoke(capsys, "validate", "--builtin", "chain-30")
        assert code == EXIT_INPUT and out == ""
        assert "SystemTooLarge" in err

    def test_canon_messy_matches_golden(self, capsys):
        code, out, _ = invoke(capsys, "canon", "--protocol", str(HERE / "data" / "deutsch-wigner-messy.wproto"))
        assert code == EXIT_OK
        assert out.encode("utf-8") == (GOLDEN / "deutsch-wigner.wproto").read_bytes()

    def test_invert_expands_reverse(self, capsys):
        code, out, _ = invoke(capsys, "invert", "--builtin", "deutsch-wigner")
        assert code == EXIT_OK
        assert "reverse" not in out
        lines = out.splitlines()
        at = lines.index("check-factorized paper tol=1e-10")
        assert lines[at + 1:at + 5] == [
            "step couple cat bob",
            "step couple poison cat",
            "step couple atom poison",
            "step superpose atom theta=-0.7853981633974483 phi=0.0",
        ]
        assert len(parse(out).steps) == 13


class TestDistinguish:
    @pytest.mark.parametrize("b,n", [("100", 7), ("2", 1), ("1000000", 20)])
    def test_threshold(self, capsys, b, n):
        code, out, _ = invoke(capsys, "distinguish", "--bayes-factor", b)
        assert code == EXIT_OK
        lines = out.splitlines()
        assert lines[0] == f"trials_to_threshold {n}"
        assert lines[1] == "n\tbayes_factor"
        assert len(lines) == n + 2
        assert lines[-1] == f"{n}\t{2**n}"

    @pytest.mark.parametrize("b", ["1", "0.5", "-2"])
    def test_rejects_small(self, capsys, b):
        code, out, err = invoke(capsys, "distinguish", "--bayes-factor", b)
        assert code == EXIT_INPUT and out == "" and err


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "wignersim", "distinguish", "--bayes-factor", "100"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert proc.stdout.startswith("trials_to_threshold 7\n")
