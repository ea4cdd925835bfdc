import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ommpp import harness
from ommpp.cli import main
from ommpp.dense import SpectralData


def small_cfg(**kw):
    base = dict(test_id="test2", ells=[1], methods=["none", "tpa", "pp"], repeats=2)
    base.update(kw)
    return harness.ExperimentConfig(**base)


def test_parse_method():
    assert harness.parse_method("gtpa(3)") == ("gtpa", 3)
    assert harness.parse_method("gtpa") == ("gtpa", 5)
    assert harness.parse_method("spp") == ("spp", None)
    for bad in ("foo", "tpa(3)", "gtpa(x)"):
        with pytest.raises(ValueError):
            harness.parse_method(bad)


def test_config_text_roundtrip():
    text = """
    # a comment
    test = test3
    ell = 2, 3
    methods = tpa, gtpa(4), spp
    seeds = 4, 5, 6
    gmres_tol = 1e-6
    omm_tol = 1e-12
    omm_criterion = relative
    p = 20
    """
    cfg = harness.parse_config_text(text)
    assert cfg.test_id == "test3" and cfg.ells == [2, 3]
    assert cfg.methods == ["tpa", "gtpa(4)", "spp"]
    assert cfg.seeds == [4, 5, 6] and cfg.repeats == 3
    assert cfg.gmres.rel_tol == 1e-6 and cfg.omm.tol == 1e-12 and cfg.omm.criterion == "relative"
    assert cfg.poles == 20


@pytest.mark.parametrize(
    "text",
    ["test = test9", "nonsense", "colour = red", "methods = jacobi", "repeats = 2\nseeds = 1, 2, 3", "ell = 0"],
)
def test_bad_config(text):
    with pytest.raises(ValueError):
        harness.parse_config_text(text)


def test_potential_presets():
    spec = harness.ExperimentConfig(test_id="test3").potential_spec()
    assert spec.global_scale == 100.0 and spec.vacancy_mode == "fraction" and spec.vacancies == 0.25
    spec = harness.ExperimentConfig(test_id="test2").potential_spec()
    assert spec.vacancy_mode == "fixed_count" and spec.vacancies == 1
    assert harness.ExperimentConfig(test_id="test1").potential_spec().global_scale == 0.01


def test_initial_guess_contract():
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.standard_normal((30, 3)))
    s = SpectralData(np.arange(30.0), Q, 3)
    assert np.array_equal(harness.make_initial_guess(s, 1, variance_factor=0.0), Q)
    a = harness.make_initial_guess(s, np.random.default_rng(7))
    b = harness.make_initial_guess(s, np.random.default_rng(7))
    assert np.array_equal(a, b)
    M = np.abs(Q).max()
    draws = [np.sum((harness.make_initial_guess(s, np.random.default_rng(k)) - Q) ** 2) for k in range(100)]
    assert abs(np.mean(draws) / (0.1 * M**2 * 30 * 3) - 1) <= 0.05
    filt = harness.make_initial_guess(s, 3, precond=lambda X: 2 * X)
    assert np.allclose(filt, 2 * harness.make_initial_guess(s, 3))


def test_run_experiment_rows_and_report(tmp_path):
    cfg = small_cfg(ells=[1, 2], output_path=str(tmp_path / "t.csv"), trace_path=str(tmp_path / "tr.csv"))
    rows = harness.run_experiment(cfg)
    assert [(r.l, r.method) for r in rows] == [(l, m) for l in (1, 2) for m in ("none", "tpa", "pp")]
    for r in rows:
        assert r.Ttot == pytest.approx(r.Tst + r.Tomm)
        assert not r.status.startswith("error")
    by = {(r.l, r.method): r for r in rows}
    for l in (1, 2):
        assert by[(l, "pp")].iter <= by[(l, "none")].iter
        assert by[(l, "pp")].iter <= by[(l, "tpa")].iter
    back = harness.read_report(cfg.output_path)
    assert len(back) == len(rows)
    for a, b in zip(rows, back):
        assert a.as_list() == b.as_list()
    trace = (tmp_path / "tr.csv").read_text().splitlines()
    assert trace[0] == "test,l,method,seed,iter,energy" and len(trace) > 10


def test_emit_empty_rows(tmp_path):
    with pytest.raises(ValueError):
        harness.emit_report([], tmp_path / "x.csv")


def test_classify():
    assert harness.classify(1e-6, True) == "accurate"
    assert harness.classify(5e-4, True) == "ok"
    assert harness.classify(5e-3, True) == "failed"
    assert harness.classify(1e-6, False) == "unconverged"
    assert harness.classify(np.nan, True) == "error"


def test_failed_cell_is_recorded():
    cfg = small_cfg(methods=["pp"], repeats=1, poles=4)
    prob = harness.build_problem(cfg, 1)
    cfg.pp_mode = "precomputed"
    cfg.oversample = 10**6  # more columns than grid points
    cell = harness.run_single(cfg, prob, "pp", 0)
    assert cell["status"].startswith("error:")
    row = harness.aggregate(cfg, prob, [cell])
    assert not harness.all_succeeded([row])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 4), st.integers(0, 20))
def test_cell_seeds_ignore_method(base, ell, seed):
    cfg = harness.ExperimentConfig(base_seed=base)
    a = np.random.default_rng(harness.cell_seed(cfg, ell, seed)).standard_normal(3)
    b = np.random.default_rng(harness.cell_seed(cfg, ell, seed)).standard_normal(3)
    c = np.random.default_rng(harness.cell_seed(cfg, ell, seed + 1)).standard_normal(3)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def strip_timing(path):
    rows = [line.split(",") for line in open(path).read().splitlines()]
    return [[v for k, v in enumerate(r) if k not in (5, 6, 7)] for r in rows]


def test_cli_bench_deterministic(tmp_path, capsys):
    cfg = tmp_path / "b.cfg"
    cfg.write_text("test = test1\nell = 1\nmethods = lap, gtpa(3), pp\nrepeats = 2\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["bench", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["bench", "--config", str(cfg), "--out", str(b)]) == 0
    assert strip_timing(a) == strip_timing(b)
    assert len(strip_timing(a)) == 4
    assert "method,l,n,cond" in capsys.readouterr().out


def test_cli_other_commands(tmp_path, capsys):
    assert main(["gen", "--test", "test3", "--ell", "2", "--out", str(tmp_path / "v.csv")]) == 0
    assert (tmp_path / "v.csv").read_text().startswith("index,x,y,value")
    assert main(["poles", "--test", "test2", "--ell", "1", "--out", str(tmp_path / "p.csv")]) == 0
    assert "indicator_error" in capsys.readouterr().out
    assert main(["solve", "--test", "test2", "--ell", "1", "--method", "tpa", "--seed", "3"]) == 0
    assert capsys.readouterr().out.splitlines()[1].startswith("tpa,1,64,")
    assert main(["bench", "--config", str(tmp_path / "missing.cfg")]) == 2
