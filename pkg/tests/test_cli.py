import csv
import io

import numpy as np
import pytest

from dmcv_keyrate import cli
from dmcv_keyrate.cli import (
    EXIT_CONFIG,
    EXIT_FAILED,
    EXIT_OK,
    KEYRATE_COLUMNS,
    ConfigError,
    load_config,
    main,
    parse_values,
    run_keyrate,
)
from dmcv_keyrate.fock_ops import FockDim, interval_operators


def _read(text):
    return list(csv.DictReader(io.StringIO(text)))


def _run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestGrammar:
    def test_values(self):
        assert parse_values("1.5") == (1.5,)
        assert parse_values("0.3, 0.35") == (0.3, 0.35)
        assert parse_values("0.35:0.6:0.05") == (0.35, 0.4, 0.45, 0.5, 0.55, 0.6)
        assert parse_values("") == ()

    @pytest.mark.parametrize("text", ["1:2", "0.6:0.3:0.1", "0:1:0", "abc", "1,x"])
    def test_bad_values(self, text):
        with pytest.raises(ConfigError):
            parse_values(text)

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# sweep\nprotocol.detection = heterodyne\ngrid.L = 10, 20\n"
                        "grid.alpha = 0.6:0.7:0.05   # inline comment\nfock.cutoff = 6\nsolver.max_iters = 50\n")
        cfg = load_config(str(path), overrides={"grid.L": "30"})
        assert cfg.protocol == "heterodyne"
        assert cfg.grids["L"] == (30.0,)
        assert cfg.grids["alpha"] == (0.6, 0.65, 0.7)
        assert cfg.cutoff == 6
        assert cfg.solver_options().max_iters == 50
        assert len(cli.grid_points(cfg)) == 3

    @pytest.mark.parametrize("text, where", [
        ("grid.alpha = 0.4\nfoo = 1\n", ":2:"),
        ("grid.alpha = 0.4\n\ngrid.bogus = 1\n", ":3:"),
        ("grid.alpha = 0.4,abc\n", ":1: grid.alpha"),
        ("fock.cutoff = ten\n", ":1: fock.cutoff"),
        ("grid.L = 1\ngrid.L = 2\n", ":2:"),
        ("no equals sign\n", ":1:"),
    ])
    def test_errors_carry_line_numbers(self, text, where):
        with pytest.raises(ConfigError, match=where):
            load_config(text=text)

    @pytest.mark.parametrize("text, field", [
        ("grid.alpha =\n", "grid.alpha"),
        ("grid.beta = 1.5\n", "grid.beta"),
        ("fock.cutoff = 0\n", "fock.cutoff"),
        ("protocol.detection = direct\n", "protocol.detection"),
        ("solver.backend = mosek\n", "solver.backend"),
        ("solver.gap_tol = -1\n", "solver"),
        ("run.jobs = 0\n", "run.jobs"),
    ])
    def test_range_errors_name_the_field(self, text, field):
        with pytest.raises(ConfigError, match=field):
            load_config(text=text)


class TestExitCodes:
    def test_empty_grid(self, capsys, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("grid.alpha =\n")
        code, _, err = _run(["sweep", "--config", str(path)], capsys)
        assert code == EXIT_CONFIG
        assert "grid.alpha" in err

    def test_bad_flag(self, capsys):
        assert _run(["keyrate", "--protocol", "direct"], capsys)[0] == EXIT_CONFIG

    def test_keyrate_needs_single_point(self, capsys):
        assert _run(["keyrate", "--alpha", "0.3,0.4"], capsys)[0] == EXIT_CONFIG

    def test_oracle_rejects_noise(self, capsys):
        assert _run(["oracle", "--xi", "0.01"], capsys)[0] == EXIT_CONFIG

    def test_failed_point_is_recorded(self, capsys, monkeypatch):
        def broken(*args, **kwargs):
            raise RuntimeError("injected failure")

        monkeypatch.setattr(cli, "key_rate", broken)
        code, out, _ = _run(["sweep", "--alpha", "0.3,0.4", "--cutoff", "3"], capsys)
        assert code == EXIT_FAILED
        rows = _read(out)
        assert len(rows) == 2
        assert all(r["key_rate"] == "0" and "injected failure" in r["status"] for r in rows)


class TestKeyrate:
    def test_single_point(self, capsys, tmp_path):
        out = tmp_path / "one.csv"
        code, _, _ = _run(["keyrate", "--protocol", "homodyne", "--L", "20", "--xi", "0.01",
                           "--alpha", "0.4", "--out", str(out)], capsys)
        assert code == EXIT_OK
        rows = _read(out.read_text())
        assert len(rows) == 1
        assert list(rows[0]) == list(KEYRATE_COLUMNS)
        row = rows[0]
        assert float(row["key_rate"]) > 0
        assert float(row["eta"]) == pytest.approx(10 ** -0.4, rel=1e-9)
        assert row["Nc"] == "10" and row["status"] == "ok"
        assert float(row["lower_bound"]) <= float(row["step1_value"]) + 1e-6

    def test_reproducible(self):
        cfg = load_config(text="grid.alpha = 0.4, 0.5\nfock.cutoff = 4\ngrid.L = 30\n")
        numeric = [c for c in KEYRATE_COLUMNS if c != "wall_time_s"]
        a = cli.format_csv(run_keyrate(cfg), numeric)
        b = cli.format_csv(run_keyrate(cfg), numeric)
        assert a == b

    def test_parallel_matches_serial(self):
        text = "grid.alpha = 0.35, 0.45\ngrid.L = 10, 30\nfock.cutoff = 4\n"
        numeric = [c for c in KEYRATE_COLUMNS if c != "wall_time_s"]
        serial = cli.format_csv(run_keyrate(load_config(text=text)), numeric)
        parallel = cli.format_csv(run_keyrate(load_config(text=text + "run.jobs = 2\n")), numeric)
        assert serial == parallel
        assert len(_read(serial)) == 4


class TestOracle:
    def test_plob_column(self, capsys):
        code, out, _ = _run(["oracle", "--L", "50", "--alpha", "0.45"], capsys)
        assert code == EXIT_OK
        row = _read(out)[0]
        assert float(row["plob"]) == pytest.approx(0.15200, abs=1e-5)
        assert 0 < float(row["dw_rate"]) < float(row["plob"])

    @pytest.mark.parametrize("protocol", ["homodyne", "heterodyne"])
    def test_full_transmission(self, capsys, protocol):
        code, out, _ = _run(["oracle", "--protocol", protocol, "--L", "0", "--alpha", "0.5,0.8",
                             "--beta", "0.9,0.95"], capsys)
        assert code == EXIT_OK
        rows = _read(out)
        assert len(rows) == 4
        for row in rows:
            assert float(row["dw_rate"]) == pytest.approx(float(row["beta"]) * float(row["I_XZ"]), rel=1e-9)
            assert row["plob"] == "inf"


class TestDump:
    def test_number_operator(self, capsys):
        code, out, _ = _run(["dump-operators", "--cutoff", "3"], capsys)
        assert code == EXIT_OK
        rows = _read(out)
        assert [(r["row"], r["col"], float(r["re"])) for r in rows] == [
            ("0", "0", 0.0), ("1", "1", 1.0), ("2", "2", 2.0), ("3", "3", 3.0)]

    def test_bit_exact_roundtrip(self, capsys):
        code, out, _ = _run(["dump-operators", "--cutoff", "5", "--delta-c", "0.6", "--operator", "I0",
                             "--dense"], capsys)
        assert code == EXIT_OK
        mat = np.zeros((6, 6), dtype=complex)
        for r in _read(out):
            mat[int(r["row"]), int(r["col"])] = float(r["re"]) + 1j * float(r["im"])
        np.testing.assert_array_equal(mat, interval_operators(0.6, FockDim(5))[0].matrix)

    def test_several_operators(self, capsys):
        code, out, _ = _run(["dump-operators", "--cutoff", "2", "--operator", "a", "--operator", "sqrt_R1"],
                            capsys)
        assert code == EXIT_OK
        names = {r["name"] for r in _read(out)}
        assert names == {"a", "sqrt_R1"}

    def test_unknown_operator(self, capsys):
        assert _run(["dump-operators", "--operator", "zz"], capsys)[0] == EXIT_CONFIG
