import csv
import math
from pathlib import Path

import numpy as np
import pytest

from chks import cli, config, output
from chks.diagnostics import COLUMNS
from chks.errors import ConfigError
from chks.grid import Grid

DATA = Path(__file__).parent / "data"
BASE = str(DATA / "base.ini")


def run(capsys, *argv):
    code = cli.main(list(argv))
    return code, capsys.readouterr().err


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ----------------------------------------------------------------------
# PRNG and presets


def test_splitmix64_reference_outputs():
    assert int(config.splitmix64(0, 1)[0]) == 0xE220A8397B1DCDAF
    assert [int(v) for v in config.splitmix64(1234567, 3)] == [
        6457827717110365317, 3203168211198807973, 9817491932198370423,
    ]


def test_uniform_draws():
    u = config.uniform01(42, 10000)
    assert u.min() >= 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.01
    assert np.array_equal(u, config.uniform01(42, 10000))
    assert not np.array_equal(u, config.uniform01(43, 10000))


def test_presets():
    g = Grid(2, 16, 8, 2.0, 1.0)
    assert np.all(config.build_field(g, "uniform(value=0.25)") == 0.25)
    c = config.build_field(g, "cosineBump(mean=0.1, amplitude=0.2, kx=1, ky=0)")
    assert g.mean(c) == pytest.approx(0.1, abs=1e-15)
    t = config.build_field(g, "tumorSeed(radius=0.3, width=0.01, inside=1, outside=0)")
    x, y = g.centers()
    r = np.hypot(x - 1.0, y - 0.5)
    assert np.all(t[r < 0.2] > 0.99) and np.all(t[r > 0.4] < 0.01)
    a = config.build_field(g, "randomPerturbed(mean=1, amplitude=0.5)", seed=3)
    b = config.build_field(g, "randomPerturbed(mean=1, amplitude=0.5, seed=3)", seed=99)
    assert np.array_equal(a, b)
    assert np.all(np.abs(a - 1) <= 0.5)


@pytest.mark.parametrize("text,match", [
    ("nope(value=1)", "unknown initial-condition preset"),
    ("uniform(val=1)", "has no argument"),
    ("uniform()", "needs argument"),
    ("uniform(value=abc)", "not a number"),
    ("uniform(value)", "key=value"),
])
def test_bad_presets(text, match):
    with pytest.raises(ConfigError, match=match):
        config.parse_preset(text)


def test_mobility_descriptors():
    m = config.parse_mobility("rational(m0=0.5, M=1, a=2)")
    assert (m.shape, m.m0, m.M, m.a) == ("rational", 0.5, 1.0, 2.0)
    assert config.parse_mobility("constant(2.5)").value == 2.5
    assert config.parse_mobility("constant").value == 1.0
    with pytest.raises(ConfigError):
        config.parse_mobility("cubic(1)")


def test_config_structure_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown config section"):
        config.load(text="[bogus]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown key"):
        config.load(text="[grid]\nnz = 3\n")
    with pytest.raises(ConfigError, match="section.key=value"):
        config.load(BASE, ["chi=1"])
    with pytest.raises(ConfigError, match="not a valid number"):
        config.load(BASE, ["params.chi=fast"])
    with pytest.raises(ConfigError, match="not found"):
        config.load(tmp_path / "missing.ini")
    with pytest.raises(ConfigError, match="scheme.mode"):
        config.load(BASE, ["scheme.mode=explicit"])


def test_config_round_trip():
    rc = config.load(BASE, ["output.subvolume=0, 0.5, 0.25, 1", "params.mobM=rational(m0=0.5,M=1,a=1)"])
    assert rc.grid == Grid(2, 12, 12)
    assert rc.n_steps == 5
    assert rc.params.mob_m.shape == "rational"
    assert (rc.subvolume.i0, rc.subvolume.i1, rc.subvolume.j0, rc.subvolume.j1) == (0, 6, 3, 12)
    assert config.load(BASE, seed=5).seed == 5


def test_h_table_config():
    rc = config.load(BASE, ["params.hPhi=-1,1", "params.hSigma=0,2", "params.hTable=0.1,0.2,-0.3,0.4"])
    assert rc.params.H == pytest.approx(0.4)
    assert float(rc.params.h(1.0, 2.0)) == pytest.approx(0.4)


# ----------------------------------------------------------------------
# output formats


def test_pgm_round_trip(tmp_path):
    g = Grid(2, 10, 6)
    x, y = g.centers()
    f = np.sin(3 * x) + y
    output.write_pgm(tmp_path / "f.pgm", f)
    levels, offset, scale = output.read_pgm(tmp_path / "f.pgm")
    assert levels.shape == (6, 10)
    back = (offset + scale * levels.astype(float))[::-1].T
    assert np.max(np.abs(back - f)) <= 0.5 * scale + 1e-15
    assert (tmp_path / "f.pgm").read_bytes().startswith(b"P5\n# affine value = ")


def test_pgm_constant_field(tmp_path):
    output.write_pgm(tmp_path / "c.pgm", np.full((4, 4), 2.0))
    levels, offset, scale = output.read_pgm(tmp_path / "c.pgm")
    assert offset == 2.0 and scale == 0.0 and not levels.any()


def test_raw_round_trip_is_exact(tmp_path):
    f = np.random.default_rng(0).normal(size=(7, 5))
    output.write_raw(tmp_path / "f.raw", f)
    assert (tmp_path / "f.raw").stat().st_size == 8 * 35
    assert np.array_equal(output.read_raw(tmp_path / "f.raw", f.shape), f)


def test_csv_cells_round_trip(tmp_path):
    vals = [1, 0.1 + 0.2, math.nan, -1e-300]
    output.write_csv(tmp_path / "t.csv", ["a", "b", "c", "d"], [vals])
    header, data = output.read_csv(tmp_path / "t.csv")
    assert header == ["a", "b", "c", "d"]
    assert data[0][1] == 0.1 + 0.2 and math.isnan(data[0][2]) and data[0][3] == -1e-300


# ----------------------------------------------------------------------
# commands


def test_run_writes_schema_and_snapshots(tmp_path, capsys):
    code, err = run(capsys, "run", "--config", BASE, "--out", str(tmp_path),
                    "--override", "output.snapshotEvery=2", "--override", "output.snapshotFormat=pgm,raw")
    assert code == 0, err
    table = rows(tmp_path / "diagnostics.csv")
    assert tuple(table[0]) == COLUMNS
    assert len(table) == 6
    assert (tmp_path / "snapshots" / "sigma_000004.raw").exists()
    assert (tmp_path / "snapshots" / "phi_000000.pgm").exists()
    final = output.read_raw(tmp_path / "final_phi.raw", (12, 12))
    snap = output.read_raw(tmp_path / "snapshots" / "phi_000004.raw", (12, 12))
    assert not np.array_equal(final, snap)


def test_run_matches_golden_csv(tmp_path, capsys):
    code, _ = run(capsys, "run", "--config", BASE, "--out", str(tmp_path))
    assert code == 0
    got = rows(tmp_path / "diagnostics.csv")
    want = rows(DATA / "golden_run.csv")
    assert got[0] == want[0]
    assert len(got) == len(want)
    for a, b in zip(got[1:], want[1:]):
        np.testing.assert_allclose(np.array(a, float), np.array(b, float), rtol=1e-9, atol=1e-15)


def test_run_is_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "run", "--config", BASE, "--out", str(tmp_path / d), "--seed", "77")[0] == 0
    assert (tmp_path / "a" / "diagnostics.csv").read_bytes() == (tmp_path / "b" / "diagnostics.csv").read_bytes()
    run(capsys, "run", "--config", BASE, "--out", str(tmp_path / "c"), "--seed", "78")
    assert (tmp_path / "a" / "diagnostics.csv").read_bytes() != (tmp_path / "c" / "diagnostics.csv").read_bytes()


def test_conservative_preset_energy_never_increases(tmp_path, capsys):
    code, _ = run(capsys, "run", "--config", BASE, "--out", str(tmp_path),
                  "--override", "params.chi=0", "--override", "scheme.mode=sourceless",
                  "--override", "scheme.tEnd=0.04")
    assert code == 0
    _, data = output.read_csv(tmp_path / "diagnostics.csv")
    e = np.array([r[COLUMNS.index("energy_total")] for r in data])
    assert np.all(np.diff(e) <= 1e-12 * np.abs(e[1:]))


def test_step_failure_appends_row_and_exits_1(tmp_path, capsys):
    code, err = run(capsys, "run", "--config", BASE, "--out", str(tmp_path),
                    "--override", "scheme.newtonMaxIter=0")
    assert code == 1
    assert "step 1" in err
    table = rows(tmp_path / "diagnostics.csv")
    assert len(table) == 2
    fail = dict(zip(table[0], table[1]))
    assert fail["step"] == "1" and fail["newton_iters"] == "-1" and fail["energy_total"] == "nan"


def test_config_rejection_exits_2(tmp_path, capsys):
    code, err = run(capsys, "run", "--config", BASE, "--out", str(tmp_path), "--override", "params.eps=2")
    assert code == 2
    assert err == "interface parameter: eps = 2 must lie in (0, 1]\n"
    assert not (tmp_path / "diagnostics.csv").exists()


def test_twin_identical_configs_give_zero_metrics(tmp_path, capsys):
    code, _ = run(capsys, "twin", "--config", BASE, "--config-b", BASE, "--out", str(tmp_path))
    assert code == 0
    header, data = output.read_csv(tmp_path / "twin.csv")
    assert header[0] == "t" and len(data) == 6
    assert all(v == 0.0 for r in data for v in r[1:])


def test_twin_perturbation(tmp_path, capsys):
    code, _ = run(capsys, "twin", "--config", BASE, "--out", str(tmp_path),
                  "--override", "twin.perturb=sigma:cosineBump(mean=0,amplitude=1e-3,kx=2,ky=1)")
    assert code == 0
    summary = dict((r[0], float(r[1])) for r in rows(tmp_path / "twin_summary.csv")[1:])
    assert summary["sigma0_fluct_dual_sq"] > 0
    assert 0 < summary["ratio"] < math.inf


def test_twin_rejects_mismatched_grids(tmp_path, capsys):
    other = tmp_path / "b.ini"
    other.write_text((DATA / "base.ini").read_text().replace("nx = 12", "nx = 16"))
    code, err = run(capsys, "twin", "--config", BASE, "--config-b", str(other), "--out", str(tmp_path))
    assert code == 2
    assert "grids differ" in err


def test_nconv_table(tmp_path, capsys):
    code, _ = run(capsys, "nconv", "--config", BASE, "--out", str(tmp_path), "--n-list", "4,8")
    assert code == 0
    header, data = output.read_csv(tmp_path / "nconv.csv")
    assert header == list(cli.NCONV_COLUMNS)
    assert [r[0] for r in data] == [4, 8]
    assert data[1][2] <= data[0][2]


def test_nconv_reference_only(tmp_path, capsys):
    code, _ = run(capsys, "nconv", "--config", BASE, "--out", str(tmp_path), "--n-list", "")
    assert code == 0
    assert rows(tmp_path / "nconv.csv") == [list(cli.NCONV_COLUMNS)]


def test_compare_without_chemotaxis_traces_coincide(tmp_path, capsys):
    code, _ = run(capsys, "compare", "--config", BASE, "--out", str(tmp_path), "--override", "params.chi=0")
    assert code == 0
    header, data = output.read_csv(tmp_path / "compare.csv")
    a = np.array([r[header.index("sigma_min_full")] for r in data])
    b = np.array([r[header.index("sigma_min_old")] for r in data])
    assert np.max(np.abs(a - b)) < 1e-10


def test_compare_reports_both_chemotaxis_forms(tmp_path, capsys):
    code, _ = run(capsys, "compare", "--config", BASE, "--out", str(tmp_path))
    assert code == 0
    header, data = output.read_csv(tmp_path / "compare.csv")
    assert tuple(header) == cli.COMPARE_COLUMNS
    last = dict(zip(header, data[-1]))
    assert last["chemo_weighted_full"] != last["chemo_plain_full"]
    assert abs(last["imbalance_full"]) < 1e-12 and abs(last["imbalance_old"]) < 1e-12


def test_argument_errors(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["run"])
    assert e.value.code == 2
    with pytest.raises(SystemExit):
        cli.main(["run", "--config", BASE, "--seed", "-1"])
    with pytest.raises(SystemExit):
        cli.main(["run", "--config", BASE, "--threads", "0"])
