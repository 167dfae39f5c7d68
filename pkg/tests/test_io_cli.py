import json

import numpy as np
import pytest

from euyso import cli
from euyso import io as fio
from euyso.branching import RabiRecord, power_calibrate
from euyso.fieldfit import ConvergenceError, ShbLine, ShbMeasurement, synthetic_rhs
from euyso.spin import ConfigError, FieldVector, SpinModel, Tensor3

from conftest import CONFIGS, DATA

MODEL = str(CONFIGS / "surrogate_model.json")
FIELD = "--field=-26.9,227.5,0"


def run(*argv):
    return cli.main([str(a) for a in argv])


def small_scheme(tmp_path, stages, split=None):
    scheme = {"grid": {"half_span_MHz": 40.0, "step_MHz": 0.01}, "stages": stages}
    if split is not None:
        scheme["split"] = split
    p = tmp_path / "scheme.json"
    p.write_text(json.dumps(scheme))
    return p


# -- file formats -----------------------------------------------------------------


def test_rabi_csv_reads_table(tmp_path):
    recs = fio.read_rabi_csv(DATA / "table1_rabi.csv")
    assert len(recs) == 21
    bad = tmp_path / "bad.csv"
    bad.write_text("transition,raw_kHz,err_kHz,power_W\n3g-6e,abc,1,0.3\n")
    with pytest.raises(ConfigError, match=":2:"):
        fio.read_rabi_csv(bad)
    bad.write_text("transition,raw_kHz\n3g-6e,1\n")
    with pytest.raises(ConfigError, match="missing column"):
        fio.read_rabi_csv(bad)


def test_calibrated_roundtrip(tmp_path):
    cal = power_calibrate(fio.read_rabi_csv(DATA / "table1_rabi.csv"))
    back = fio.read_calibrated_csv(fio.write_calibrated_csv(tmp_path / "c.csv", cal))
    assert back == cal


def test_rhs_roundtrip(tmp_path, surrogate):
    meas = synthetic_rhs(surrogate, FieldVector(-20, 230, 1), ("1", "2"), 0.001, 3)
    back = fio.read_rhs_csv(fio.write_rhs_csv(tmp_path / "r.csv", meas))
    assert back == meas


def test_shb_roundtrip(tmp_path):
    meas = ShbMeasurement([ShbLine("hole", 1.25, (0, 2, 0, 3)), ShbLine("antihole", -3.5, None, 0.5)])
    back = fio.read_shb_csv(fio.write_shb_csv(tmp_path / "s.csv", meas))
    assert back == meas
    partial = tmp_path / "p.csv"
    partial.write_text("kind,offset_MHz,i,j,i2,j2\nhole,1.0,1,2,,\n")
    with pytest.raises(ConfigError, match="partial"):
        fio.read_shb_csv(partial)


def test_spectrum_roundtrip(tmp_path):
    f = np.linspace(-1, 1, 7)
    cols = {"od": np.sin(f), "diff": f**2}
    freqs, back = fio.read_spectrum_csv(fio.write_spectrum_csv(tmp_path / "s.csv", f, cols))
    assert np.array_equal(freqs, f)
    assert all(np.array_equal(back[k], cols[k]) for k in cols)


def test_percent_table(tmp_path):
    g = fio.read_percent_table(DATA / "table3_gamma_theory.csv")
    assert g.shape == (6, 6)
    assert np.allclose(g.sum(0), 1, atol=0.02) and np.allclose(g.sum(1), 1, atol=0.02)
    back = fio.read_percent_table(fio.write_matrix_csv(tmp_path / "m.csv", g, 100.0))
    assert np.allclose(back, g)


def test_json_line_numbers(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{\n  "a": 1,\n  "b": \n}')
    with pytest.raises(ConfigError, match=":4:"):
        fio.read_json(p)


def test_manifest_digests(tmp_path):
    f = tmp_path / "in.txt"
    f.write_text("hello")
    m = fio.RunManifest.create("levels", {"config": str(f), "unused": None}, {"x": 1})
    assert m.input_digests == {"config": "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"}
    d = json.loads(m.write(tmp_path).read_text())
    assert d["command"] == "levels" and d["parameters"] == {"x": 1}


# -- CLI --------------------------------------------------------------------------


def test_levels_outputs(tmp_path):
    out = tmp_path / "lv"
    assert run("levels", "--config", MODEL, FIELD, "--out", out) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["outputs"]) == {"levels.csv", "transitions.csv", "levels.json"}
    assert man["input_digests"]["config"] == fio.digest(MODEL)
    lv = json.loads((out / "levels.json").read_text())
    assert lv["ground_MHz"][0] == 0.0 and len(lv["excited_MHz"]) == 6


def test_zero_tensors_give_zero_levels(tmp_path):
    z = SpinModel(Tensor3.zero(), Tensor3.zero(), Tensor3.zero(), Tensor3.zero())
    cfg = tmp_path / "zero.json"
    cfg.write_text(json.dumps(z.to_dict()))
    assert run("levels", "--config", cfg, "--field", "1,2,3", "--out", tmp_path / "o") == 0
    lv = json.loads((tmp_path / "o" / "levels.json").read_text())
    assert lv["ground_MHz"] == [0.0] * 6 and lv["excited_MHz"] == [0.0] * 6


def test_branching_percent_table(tmp_path):
    assert run("branching", "--config", MODEL, FIELD, "--out", tmp_path) == 0
    g = fio.read_percent_table(tmp_path / "branching_percent.csv")
    assert np.allclose(g.sum(0), 1) and np.allclose(g.sum(1), 1)


def test_outputs_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("shb-catalog", "--config", MODEL, FIELD, "--out", tmp_path / name) == 0
    for f in ("catalog.csv", "catalog.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_empty_scheme_matches_unpumped(tmp_path, surrogate):
    scheme = small_scheme(tmp_path, [])
    out = tmp_path / "sim"
    assert run("simulate", "--config", MODEL, FIELD, "--scheme", scheme, "--out", out) == 0
    _, before = fio.read_spectrum_csv(out / "spectrum_before.csv")
    _, after = fio.read_spectrum_csv(out / "spectrum_after.csv")
    _, diff = fio.read_spectrum_csv(out / "spectrum_diff.csv")
    assert np.array_equal(before["od"], after["od"])
    assert np.all(diff["od"] == 0)
    meta = json.loads((out / "spectrum.json").read_text())
    assert meta["summary"]["holes"] == 0


def test_burn_makes_a_hole(tmp_path):
    scheme = small_scheme(tmp_path, [{"pumps": [{"center_MHz": 0.0}]}], split=0)
    out = tmp_path / "sim"
    assert run("simulate", "--config", MODEL, FIELD, "--scheme", scheme, "--out", out) == 0
    f, diff = fio.read_spectrum_csv(out / "spectrum_diff.csv")
    assert diff["od"][np.argmin(np.abs(f))] < 0


def test_fit_field_cli(tmp_path, surrogate):
    B = FieldVector(-26.9, 227.5, 0.4)
    data = fio.write_rhs_csv(tmp_path / "rhs.csv", synthetic_rhs(surrogate, B, ("1", "2")))
    out = tmp_path / "fit"
    assert run("fit-field", "--config", MODEL, "--data", data, "--init=-20,240,1", "--out", out) == 0
    res = json.loads((out / "field_fit.json").read_text())
    assert np.allclose(res["B_mT"], B.as_array(), atol=1e-4)


def test_fit_gamma_cli(tmp_path):
    out = tmp_path / "g"
    code = run(
        "fit-gamma",
        "--data", DATA / "table1_rabi.csv",
        "--zeros", "5g-1e,5g-2e,6g-1e,6g-2e",
        "--initial", DATA / "table3_gamma_theory.csv",
        "--optics", CONFIGS / "optics.json",
        "--out", out,
    )
    assert code == 0
    res = json.loads((out / "gamma_fit.json").read_text())
    assert res["rank"]["rank"] == 36
    assert res["mu_Cm"] > 0


def test_calibrate_cli(tmp_path):
    assert run("calibrate", "--data", DATA / "table1_rabi.csv", "--out", tmp_path) == 0
    cal = {r.label: r for r in fio.read_calibrated_csv(tmp_path / "calibrated.csv")}
    assert round(cal["6g-3e"].calibrated) == 175


def test_rabi_trace_cli(tmp_path):
    t = np.linspace(0, 20, 200)
    y = 0.5 + 0.4 * np.exp(-t / 8) * np.cos(2 * np.pi * 0.266 * t)
    data = tmp_path / "trace.csv"
    data.write_text("tau_us,od\n" + "".join(f"{a},{b}\n" for a, b in zip(t.tolist(), y.tolist())))
    assert run("fit-rabi-trace", "--data", data, "--out", tmp_path / "o") == 0
    fit = json.loads((tmp_path / "o" / "rabi_trace_fit.json").read_text())
    assert fit["freq_khz"] == pytest.approx(266, rel=1e-3)


# -- failures: exit codes and no partial outputs ---------------------------------------


def test_missing_config_exit_1(tmp_path, capsys):
    out = tmp_path / "never"
    assert run("levels", "--config", tmp_path / "nope.json", FIELD, "--out", out) == 1
    assert "not found" in capsys.readouterr().err
    assert not out.exists()


def test_bad_field_exit_1(tmp_path):
    assert run("levels", "--config", MODEL, "--field", "1,2", "--out", tmp_path / "x") == 1
    assert not (tmp_path / "x").exists()


def test_bad_scheme_exit_1(tmp_path):
    scheme = small_scheme(tmp_path, [{"pumps": [{"sweep_MHz": 1.0}]}])
    out = tmp_path / "x"
    assert run("simulate", "--config", MODEL, FIELD, "--scheme", scheme, "--out", out) == 1
    assert not out.exists()


def test_singular_selection_exit_3(tmp_path):
    out = tmp_path / "x"
    code = run("fit-gamma", "--data", DATA / "table1_rabi.csv", "--zeros", "5g-1e",
               "--initial", DATA / "table3_gamma_theory.csv", "--out", out)
    assert code == 3
    assert not out.exists()


def test_convergence_failure_exit_2(tmp_path, monkeypatch, surrogate):
    def fail(*a, **k):
        raise ConvergenceError("field fit did not converge in 1 iterations")

    monkeypatch.setattr(cli, "fit_field_rhs", fail)
    data = fio.write_rhs_csv(tmp_path / "rhs.csv", synthetic_rhs(surrogate, FieldVector(0, 230, 0)))
    out = tmp_path / "x"
    assert run("fit-field", "--config", MODEL, "--data", data, "--init", "0,230,0", "--out", out) == 2
    assert not out.exists()


def test_too_short_trace_exit_1(tmp_path):
    data = tmp_path / "t.csv"
    data.write_text("tau_us,od\n0,1\n1,0\n2,1\n")
    assert run("fit-rabi-trace", "--data", data, "--out", tmp_path / "x") == 1
    assert not (tmp_path / "x").exists()


def test_record_equality_sanity():
    assert RabiRecord(1, 2, 3.0, 1.0, 0.5) == RabiRecord(1, 2, 3.0, 1.0, 0.5)
