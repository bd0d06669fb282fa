import math
import threading

import numpy as np
import pytest

from homoglab import harness
from homoglab.errors import ConvergenceError, FormatError, InstabilityError, ValidationError
from homoglab.harness import ExperimentConfig

SMALL = dict(eps_ladder=(0.5, 0.25), T=0.5, window=(1.0, 0.1, 0.5), L=4.0)


# ---------------------------------------------------------------------------
# configuration


def test_config_defaults_are_valid():
    cfg = ExperimentConfig()
    assert cfg.eps_ladder == (0.25, 0.125, 0.0625, 0.03125)
    assert cfg.window == (2.0, 0.1, 1.0) and cfg.n_realizations == 50


@pytest.mark.parametrize("kw", [
    dict(eps_ladder=(0.25, 0.5)),
    dict(eps_ladder=(0.5, 0.5)),
    dict(eps_ladder=(1.5,)),
    dict(eps_ladder=()),
    dict(n_realizations=0),
    dict(window=(20.0, 0.1, 1.0)),
    dict(window=(1.0, 0.5, 2.0)),
    dict(vbar_method="guess"),
    dict(threads=0),
])
def test_config_rejects_invalid(kw):
    with pytest.raises(ValidationError):
        ExperimentConfig(**kw)


def test_config_from_toml(tmp_path, monkeypatch):
    monkeypatch.setenv("HOMOGLAB_THREADS", "3")
    p = tmp_path / "c.toml"
    p.write_text('[model]\nkind = "zero"\n[experiment]\neps = [0.5, 0.25]\nrealizations = 4\n'
                 'seed = 9\nT = 0.5\nwindow = [1.0, 0.1, 0.5]\n[solver]\nL = 4.0\n'
                 '[output]\ndir = "o"\n')
    cfg = ExperimentConfig.from_toml(p)
    assert cfg.eps_ladder == (0.5, 0.25) and cfg.n_realizations == 4 and cfg.master_seed == 9
    assert cfg.L == 4.0 and cfg.out_dir == "o" and cfg.threads == 3
    assert cfg.covariance.is_zero
    assert ExperimentConfig.from_toml(p, master_seed=5, threads=1).master_seed == 5


def test_config_file_errors(tmp_path, monkeypatch):
    bad = tmp_path / "bad.toml"
    bad.write_text("[experiment\n")
    with pytest.raises(FormatError):
        ExperimentConfig.from_toml(bad)
    bad.write_text("[experiment]\nbogus = 1\n")
    with pytest.raises(FormatError):
        ExperimentConfig.from_toml(bad)
    bad.write_text("[solver]\nh = 1\n")
    with pytest.raises(FormatError):
        ExperimentConfig.from_toml(bad)
    monkeypatch.setenv("HOMOGLAB_THREADS", "many")
    with pytest.raises(ValidationError):
        ExperimentConfig.from_mapping({})


# ---------------------------------------------------------------------------
# determinism helpers


def test_realization_seed():
    s = harness.realization_seed(1234, 0, 0)
    assert s == harness.realization_seed(1234, 0, 0)
    assert 0 <= s < 2**64
    seeds = {harness.realization_seed(m, i, r) for m in (1, 2) for i in range(4) for r in range(50)}
    assert len(seeds) == 400


def test_map_ordered_preserves_order():
    seen = set()

    def f(i):
        seen.add(threading.get_ident())
        return i * i

    assert harness.map_ordered(f, range(40), threads=4) == [i * i for i in range(40)]
    assert harness.map_ordered(f, [], threads=4) == []


# ---------------------------------------------------------------------------
# degenerate model


def test_zero_model_convergence_error_is_identical_across_eps(tmp_path):
    cfg = ExperimentConfig(model={"kind": "zero"}, n_realizations=2, **SMALL)
    res = harness.run_convergence_study(cfg, tmp_path)
    errs = {r.u_error for r in res.records}
    assert len(errs) == 1 and errs.pop() < 1e-12
    assert all(r.sup_Y == 0 and r.sup_Z == 0 for r in res.records)


def test_zero_model_moments_vanish(tmp_path):
    cfg = ExperimentConfig(model={"kind": "zero"}, n_realizations=3, moment_L=2.0,
                           eps_ladder=(0.5, 0.25))
    res = harness.run_moment_study(cfg, tmp_path)
    assert res.summary and all(row[2] == 0.0 and row[3] == 0.0 for row in res.summary)
    assert res.fits == {}


def test_zero_model_vbar_study(tmp_path):
    cfg = ExperimentConfig(model={"kind": "zero"}, eps_ladder=(0.5, 0.25))
    res = harness.run_vbar_study(cfg, tmp_path)
    assert len(res.summary) == 6
    assert all(v == 0.0 and rel == 0.0 for _, _, v, _, rel in res.summary)


# ---------------------------------------------------------------------------
# gaussian studies on a tiny ladder


@pytest.fixture(scope="module")
def study(tmp_path_factory):
    cfg = ExperimentConfig(n_realizations=3, master_seed=11, **SMALL)
    out = tmp_path_factory.mktemp("conv")
    return cfg, harness.run_convergence_study(cfg, out), out


def test_convergence_records(study):
    cfg, res, out = study
    assert [(r.eps, r.realization) for r in res.records] == [(e, i) for e in cfg.eps_ladder for i in range(3)]
    for r in res.records:
        assert r.status == "ok"
        assert all(math.isfinite(v) and v >= 0 for v in (r.u_error, r.sup_Y, r.sup_Z))
    assert set(res.fits) == set(harness.QUANTITIES)
    assert (out / "convergence_timings.json").exists()


def test_summary_recomputes_from_raw_csv(study, tmp_path):
    cfg, res, out = study
    header, rows = harness._read_csv(out / "convergence.csv")
    assert header == harness.CONVERGENCE_HEADER
    recs = [harness.ConvergenceRecord(float(r[0]), int(r[1]), int(r[2]), float(r[3]), float(r[4]),
                                      float(r[5]), r[6]) for r in rows]
    summary, _ = harness.summarize_convergence(recs, cfg.eps_ladder)
    again = harness._write_csv(tmp_path / "s.csv", harness.SUMMARY_HEADER, summary)
    assert again.read_bytes() == (out / "convergence_summary.csv").read_bytes()


def test_rerun_is_byte_identical_and_thread_independent(study, tmp_path):
    cfg, res, out = study
    harness.run_convergence_study(ExperimentConfig(n_realizations=3, master_seed=11, threads=2,
                                                   **SMALL), tmp_path)
    for name in ("convergence.csv", "convergence_summary.csv", "convergence_fit.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_dropping_a_realization_leaves_others_unchanged(study, tmp_path):
    cfg, res, out = study
    fewer = harness.run_convergence_study(ExperimentConfig(n_realizations=2, master_seed=11, **SMALL),
                                          tmp_path)
    keep = [r for r in res.records if r.realization < 2]
    strip = lambda rs: [(r.eps, r.realization, r.seed, r.u_error, r.sup_Y, r.sup_Z) for r in rs]
    assert strip(fewer.records) == strip(keep)


def test_different_master_seed_changes_results(study, tmp_path):
    cfg, res, out = study
    other = harness.run_convergence_study(ExperimentConfig(n_realizations=1, master_seed=12, **SMALL),
                                          tmp_path)
    assert other.records[0].u_error != res.records[0].u_error


def test_moment_study_schema_and_determinism(tmp_path):
    cfg = ExperimentConfig(n_realizations=4, moment_L=2.0, eps_ladder=(0.5, 0.25), master_seed=3)
    a = harness.run_moment_study(cfg, tmp_path / "a", with_Z=False)
    b = harness.run_moment_study(cfg, tmp_path / "b", with_Z=False)
    assert (tmp_path / "a" / "moments.csv").read_bytes() == (tmp_path / "b" / "moments.csv").read_bytes()
    names = {row[1] for row in a.summary}
    assert names == {"Y2", "dY2", "d2Y2"}
    assert all(row[2] > 0 and row[3] >= 0 for row in a.summary)
    assert set(a.fits) == names


def test_vbar_study_monte_carlo_path(tmp_path):
    cfg = ExperimentConfig(eps_ladder=(0.5,), times=(1.0,), vbar_method="monte-carlo",
                           n_realizations=200, moment_L=3.0)
    (row,) = harness.run_vbar_study(cfg, tmp_path).summary
    quad = harness.homog.vbar_eps_quadrature(cfg.covariance, 0.5, 1.0, 1.0)
    assert row[3] > 0 and abs(row[2] - quad) <= 4 * row[3]


# ---------------------------------------------------------------------------
# plot data


def test_plot_data_from_convergence_csv(study, tmp_path):
    cfg, res, out = study
    paths, fits = harness.emit_plot_data(out / "convergence.csv", tmp_path)
    assert set(fits) == set(harness.QUANTITIES)
    assert {"u_error", "sup_Y", "sup_Z", "svg"} <= set(paths)
    data = np.loadtxt(paths["u_error"])
    assert data.shape == (2, 3)
    assert np.allclose(data[:, 1], [row[2] for row in res.summary], rtol=0, atol=0)
    for q in harness.QUANTITIES:
        assert fits[q].slope == pytest.approx(res.fits[q].slope, abs=1e-12)
        assert f"slope {res.fits[q].slope:.3f}" in paths["svg"].read_text()


def test_plot_data_from_moment_and_vbar_csv(tmp_path):
    cfg = ExperimentConfig(eps_ladder=(0.5, 0.25, 0.125))
    res = harness.run_vbar_study(cfg, tmp_path)
    paths, fits = harness.emit_plot_data(res.paths["summary"], tmp_path / "p")
    assert {"t=1", "t=2", "t=4"} <= set(paths)
    moments = tmp_path / "moments.csv"
    moments.write_text("eps,moment,estimate,stderr\n0.5,Y2,0.2,0.01\n0.25,Y2,0.1,0.01\n")
    _, fits = harness.emit_plot_data(moments, tmp_path / "m")
    assert fits["Y2"].slope == pytest.approx(1.0, abs=1e-12)


def test_plot_data_empty_csv(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert harness.emit_plot_data(empty, tmp_path / "a") == ({}, {})
    header_only = tmp_path / "convergence.csv"
    header_only.write_text(",".join(harness.CONVERGENCE_HEADER) + "\n")
    assert harness.emit_plot_data(header_only, tmp_path / "b") == ({}, {})


def test_plot_data_unknown_schema(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(FormatError):
        harness.emit_plot_data(p, tmp_path)


# ---------------------------------------------------------------------------
# failure handling


def test_failed_realization_is_recorded(monkeypatch, tmp_path):
    cfg = ExperimentConfig(n_realizations=2, eps_ladder=(0.5,), T=0.5, window=(1.0, 0.1, 0.5), L=4.0)
    calls = []
    real = harness.solve_potential

    def solve(problem, config):
        calls.append(1)
        if len(calls) == 1:
            raise InstabilityError("forced", step=1)
        return real(problem, config)

    monkeypatch.setattr(harness, "solve_potential", solve)
    res = harness.run_convergence_study(cfg, tmp_path)
    assert res.records[0].status == "failed: InstabilityError" and math.isnan(res.records[0].u_error)
    assert res.records[1].status == "ok"
    assert res.summary[0][1] == 1


def test_study_aborts_when_every_realization_fails(monkeypatch, tmp_path):
    cfg = ExperimentConfig(n_realizations=2, eps_ladder=(0.5,), T=0.5, window=(1.0, 0.1, 0.5), L=4.0)

    def solve(problem, config):
        raise InstabilityError("forced", step=1)

    monkeypatch.setattr(harness, "solve_potential", solve)
    with pytest.raises(ConvergenceError):
        harness.run_convergence_study(cfg, tmp_path)
