"""Command-line interface tests: argument handling, artifacts, exit codes."""

import json

import numpy as np
import pytest
import scipy.io

from sbpsat import cli


def run(argv):
    return cli.main(argv)


class TestArguments:
    def test_unknown_variant_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as err:
            run(["converge", "--sat", "foo"])
        assert err.value.code == cli.USAGE_ERROR
        message = capsys.readouterr().err
        assert "br2" in message and "ldg" in message

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as err:
            run(["frobnicate"])
        assert err.value.code == cli.USAGE_ERROR

    def test_unknown_family(self):
        with pytest.raises(SystemExit) as err:
            run(["validate", "--family", "hex"])
        assert err.value.code == cli.USAGE_ERROR

    def test_degree_out_of_range(self):
        with pytest.raises(SystemExit) as err:
            run(["validate", "--p", "9"])
        assert err.value.code == cli.USAGE_ERROR

    def test_config_file_merging(self, tmp_path):
        config = tmp_path / "run.toml"
        config.write_text('family = "omega"\np = 3\nsat = "cdg"\n')
        args = cli.build_parser().parse_args(
            ["certify", "--config", str(config), "--p", "2"])
        cfg = cli.resolve_config(args)
        assert cfg.family == "omega"  # from config
        assert cfg.p == 2  # flag overrides config
        assert cfg.sat == "cdg"

    def test_config_unknown_key_rejected(self, tmp_path):
        config = tmp_path / "run.toml"
        config.write_text("threads = 4\n")
        assert run(["certify", "--config", str(config)]) == cli.USAGE_ERROR


class TestCommands:
    def test_validate_passes(self, capsys):
        assert run(["validate", "--family", "gamma", "--p", "2"]) == 0
        out = capsys.readouterr().out
        assert "[PASS]" in out and "[FAIL]" not in out

    def test_converge_writes_artifacts(self, tmp_path, capsys):
        code = run(["converge", "--sat", "br2", "--family", "gamma",
                    "--p", "1", "--levels", "16,64,256",
                    "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "convergence.csv").exists()
        svgs = list(tmp_path.glob("*.svg"))
        assert len(svgs) == 1
        header = (tmp_path / "convergence.csv").read_text().splitlines()[0]
        assert header == "level,n_e,h,err_u,err_psi,err_I,rate_u,rate_psi,rate_I"

    def test_spectra_writes_csv(self, tmp_path, capsys):
        code = run(["spectra", "--sat", "br2", "--family", "gamma",
                    "--p", "2", "--nx", "4", "--ny", "2",
                    "--out", str(tmp_path)])
        assert code == 0
        csv = (tmp_path / "spectrum_br2_gamma_p2.csv").read_text()
        assert csv.splitlines()[0] == "re,im"
        out = capsys.readouterr().out
        assert "rho=" in out

    def test_certify_json(self, tmp_path):
        code = run(["certify", "--sat", "sipg", "--family", "gamma",
                    "--p", "2", "--nx", "4", "--ny", "2",
                    "--out", str(tmp_path)])
        assert code == 0
        data = json.loads(
            (tmp_path / "certificate_sipg_gamma_p2.json").read_text())
        assert data["variant"] == "sipg"
        assert data["passed"] is True

    def test_certify_unproven_variant_uses_spectrum(self, tmp_path, capsys):
        code = run(["certify", "--sat", "br1u", "--family", "diage",
                    "--p", "2", "--nx", "4", "--ny", "2",
                    "--out", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "not applicable" in out

    def test_sparsity_bound(self, tmp_path, capsys):
        code = run(["sparsity", "--sat", "cdg", "--family", "gamma",
                    "--p", "2", "--nx", "8", "--ny", "4",
                    "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "sparsity_cdg_gamma_p2.csv").exists()

    def test_dump_writes_matrix_and_rhs(self, tmp_path):
        code = run(["spectra", "--sat", "br2", "--family", "gamma",
                    "--p", "2", "--nx", "2", "--ny", "1",
                    "--out", str(tmp_path), "--dump"])
        assert code == 0
        A = scipy.io.mmread(tmp_path / "spectra_br2_gamma_p2_matrix.mtx")
        b = np.loadtxt(tmp_path / "spectra_br2_gamma_p2_rhs.txt")
        assert A.shape[0] == len(b)

    def test_deterministic_artifacts(self, tmp_path):
        for sub in ("a", "b"):
            run(["converge", "--sat", "br2", "--family", "gamma", "--p", "1",
                 "--levels", "16,64,256", "--out", str(tmp_path / sub)])
        assert (tmp_path / "a" / "convergence.csv").read_bytes() \
            == (tmp_path / "b" / "convergence.csv").read_bytes()
        a_svg = sorted((tmp_path / "a").glob("*.svg"))[0]
        b_svg = sorted((tmp_path / "b").glob("*.svg"))[0]
        assert a_svg.read_bytes() == b_svg.read_bytes()

    def test_all_subcommand(self, tmp_path):
        code = run(["all", "--sat", "br2", "--family", "gamma", "--p", "1",
                    "--levels", "16,64,256", "--nx", "4", "--ny", "2",
                    "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "convergence.csv").exists()
        assert (tmp_path / "certificate_br2_gamma_p1.json").exists()
