import numpy as np
import pytest

from nwacal.cli import RunConfig, config_hash, main, parse_config


def test_defaults_are_reference_settings():
    cfg = parse_config(None)
    assert cfg.N == 1000
    assert cfg.n == 100
    assert cfg.reps == 10000
    assert cfg.lam == (0.1, 0.4)
    assert cfg.rho == 0.6
    assert cfg.design == "srs"


def test_out_of_range_value_names_key():
    with pytest.raises(ValueError, match="rho"):
        parse_config(None, {"rho": 1.5})


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("bogus = 3\n")
    with pytest.raises(ValueError, match="bogus"):
        parse_config(path)


def test_flag_overrides_file(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("# comment\nrho = 0.3\nreps = 50\n")
    cfg = parse_config(path, {"rho": 0.0})
    assert cfg.rho == 0.0
    assert cfg.reps == 50


def test_pair_values_parse(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("mu = 3.5,4.5\nlam = 0.2,0.3\n")
    cfg = parse_config(path)
    assert cfg.mu == (3.5, 4.5)
    assert cfg.lam == (0.2, 0.3)


def test_config_hash_tracks_content():
    a = RunConfig()
    b = RunConfig(rho=0.3)
    assert config_hash(a) == config_hash(RunConfig())
    assert config_hash(a) != config_hash(b)


def _write_fit_csv(path, with_y_gap=True):
    rng = np.random.default_rng(3)
    n = 40
    x1 = rng.normal(4, 1, n)
    pi = rng.uniform(0.2, 0.8, n)
    p = 1 / (1 + np.exp(-(0.1 + 0.4 * x1)))
    r = (rng.random(n) < p).astype(int)
    y = 2.0 + 0.7 * x1 + rng.normal(0, 0.4, n)
    lines = ["unit,pi,r,x1,y"]
    for i in range(n):
        y_cell = f"{y[i]:.17g}" if (r[i] == 1 or not with_y_gap) else ""
        lines.append(f"u{i},{pi[i]:.17g},{r[i]},{x1[i]:.17g},{y_cell}")
    path.write_text("\n".join(lines) + "\n")
    return float(np.sum(1.0))


def test_fit_subcommand(tmp_path):
    csv_path = tmp_path / "units.csv"
    _write_fit_csv(csv_path)
    out = tmp_path / "out"
    rc = main(["fit", "--input", str(csv_path), "--out", str(out)])
    assert rc == 0
    est = (out / "estimates.csv").read_text().splitlines()
    assert est[0] == "variant,value,n,n_r,max_weight,status,iterations"
    variants = {ln.split(",")[0] for ln in est[1:]}
    # population-level calibration needs --totals and is skipped without it
    assert variants == {"mle_1", "mle_invpi", "cal_S"}
    weights = (out / "weights.csv").read_text().splitlines()
    assert all(float(ln.split(",")[2]) > 0 for ln in weights[1:])
    var_lines = (out / "variance.csv").read_text().splitlines()
    assert var_lines[0] == "variant,v_sam,v_nr,v_total,ci_low,ci_high"
    assert len(var_lines) == 4


def test_fit_with_population_totals(tmp_path):
    csv_path = tmp_path / "units.csv"
    _write_fit_csv(csv_path)
    out = tmp_path / "out"
    rc = main(
        ["fit", "--input", str(csv_path), "--totals", "120,485", "--out", str(out)]
    )
    assert rc == 0
    est = (out / "estimates.csv").read_text().splitlines()
    variants = {ln.split(",")[0] for ln in est[1:]}
    assert "cal_U" in variants


def test_fit_rejects_bad_header(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("unit,pi,x1,y\nu0,0.5,4.0,3.0\n")
    rc = main(["fit", "--input", str(bad), "--out", str(tmp_path / "o")])
    assert rc == 1


def test_trace_subcommand(tmp_path):
    csv_path = tmp_path / "units.csv"
    _write_fit_csv(csv_path)
    out = tmp_path / "tr"
    rc = main(["trace", "--input", str(csv_path), "--out", str(out)])
    assert rc == 0
    trace = (out / "trace_mle_1.csv").read_text().splitlines()
    assert trace[0] == "iteration,residual_norm,step_size"
    assert len(trace) > 1
    # residual norms decrease monotonically under the damped iteration
    norms = [float(ln.split(",")[1]) for ln in trace[1:]]
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_scenario_subcommand(tmp_path):
    out = tmp_path / "scen"
    rc = main(
        ["scenario", "--reps", "25", "--seed", "4", "--design", "poisson",
         "--rho", "0.3", "--out", str(out), "--emit-raw"]
    )
    assert rc == 0
    report = (out / "report.csv").read_text().splitlines()
    assert report[0].startswith("# master_seed=4 config_hash=")
    assert len(report) == 2 + 6  # header comment, column row, six variants
    raw = (out / "raw.csv").read_text().splitlines()
    assert len(raw) == 2 + 25 * 6


def test_study_structure_and_determinism(tmp_path):
    out1 = tmp_path / "s1"
    out2 = tmp_path / "s2"
    args = ["study", "--reps", "20", "--seed", "9", "--threads", "1"]
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    for name in ("table2.csv", "table3.csv", "table4.csv", "tables.txt"):
        a = (out1 / name).read_bytes()
        b = (out2 / name).read_bytes()
        assert a == b, f"{name} not reproducible"
    table2 = (out1 / "table2.csv").read_text().splitlines()
    assert table2[0].startswith("# master_seed=9")
    assert table2[1] == "design,rho,variant,rb,rrvar"
    # six scenario blocks x six variants
    assert len(table2) == 2 + 36
    scenarios = {tuple(ln.split(",")[:2]) for ln in table2[2:]}
    assert len(scenarios) == 6
    table4 = (out1 / "table4.csv").read_text().splitlines()
    assert len(table4) == 2 + 24  # four reweighted variants per scenario
