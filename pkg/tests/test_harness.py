import csv
import json
import math

import numpy as np
import pytest

from cubepersist.grid import GridSpec
from cubepersist.harness import (ConfigError, ExperimentConfig, ExperimentReport, emit_report,
                                 kl_brute, kl_bound, raw_csv_text, run, tail_fit, tail_within_bound,
                                 true_diagram)
from cubepersist.metrics import bottleneck_all_degrees
from cubepersist.persistence import build_filtration, compute_persistence
from cubepersist.signals import (CosSineDisc, LowerBoundBase, LowerBoundBump, oracle_tolerance,
                                 sample_on_grid)


def small(**kw):
    base = dict(resolutions=[20, 40], repetitions=3, seed=1, oracle_N=800, eval_N=200)
    return ExperimentConfig(**(base | kw))


@pytest.mark.parametrize("kw", [
    dict(kind="nope"), dict(repetitions=0), dict(resolutions=[40, 20]),
    dict(resolutions=[20, 20]), dict(oracle_N=30), dict(sigma=-1.0),
    dict(alphas=[1.5]), dict(prefactor=0.0), dict(workers=0),
])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        small(**kw)


def test_config_from_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"resolutions": [20, 40], "signal": {"variant": "CosSineDisc"}}))
    cfg = ExperimentConfig.from_json(p)
    assert cfg.base_signal() == CosSineDisc()
    p.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(p)
    p.write_text(json.dumps({"signal": {"variant": "Nope"}}))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(p).base_signal()


def test_convergence_rows_and_summary(tmp_path):
    rep = run(small(alphas=[0.5, 1.0]))
    assert len(rep.rows) == 2 * 2 * 3
    assert [(r.alpha, r.N, r.rep) for r in rep.rows][:4] == [(0.5, 20, 0), (0.5, 20, 1), (0.5, 20, 2), (0.5, 40, 0)]
    out = emit_report(rep, tmp_path / "out")
    raw = list(csv.DictReader(open(out / "raw.csv")))
    summ = list(csv.DictReader(open(out / "summary.csv")))
    for s in summ:
        sel = [float(r["bottleneck"]) for r in raw if r["alpha"] == s["alpha"] and r["N"] == s["N"]]
        assert float(s["mean_bottleneck"]) == pytest.approx(np.mean(sel), abs=1e-12)
        sup = [float(r["supnorm"]) for r in raw if r["alpha"] == s["alpha"] and r["N"] == s["N"]]
        assert float(s["mean_supnorm"]) == pytest.approx(np.mean(sup), abs=1e-12)
        assert float(s["se_bottleneck"]) == pytest.approx(np.std(sel, ddof=1) / math.sqrt(3), abs=1e-12)
    assert {p.name for p in (out / "plotdata").iterdir()} == {
        "bottleneck_alpha0.5.csv", "bottleneck_alpha1.csv", "supnorm_alpha0.5.csv", "supnorm_alpha1.csv"}
    echo = json.loads((out / "config.json").read_text())
    assert echo["config"]["resolutions"] == [20, 40] and len(echo["hash"]) == 64
    assert all(r["time_s"] == "" for r in raw)


def test_determinism_and_workers():
    a = raw_csv_text(run(small()))
    assert a == raw_csv_text(run(small()))
    assert a == raw_csv_text(run(small(workers=2)))
    assert a != raw_csv_text(run(small(seed=2)))


def test_empty_report_writes_headers(tmp_path):
    out = emit_report(ExperimentReport(small()), tmp_path)
    assert (out / "raw.csv").read_text() == "kind,alpha,N,rep,seed,bottleneck,supnorm,time_s\n"
    assert (out / "summary.csv").read_text().count("\n") == 1


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_report(ExperimentReport(small()), blocker / "sub")


def test_noiseless_identity_pipeline():
    # sigma = 0, b = 1 and truth computed by the oracle at the same resolution
    spec = CosSineDisc()
    N = 200
    dgm = compute_persistence(build_filtration(sample_on_grid(spec, GridSpec(2, N))))
    truth = true_diagram(spec, 800)
    assert bottleneck_all_degrees(dgm, truth) <= oracle_tolerance(spec, N)


def test_oracle_cache_reused(tmp_path, monkeypatch):
    monkeypatch.setenv("CUBEPERSIST_CACHE_DIR", str(tmp_path))
    a = true_diagram(CosSineDisc(), 800)
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    assert true_diagram(CosSineDisc(), 800) == a


def test_tail_fit_basics():
    T = np.random.default_rng(0).rayleigh(size=4000)
    rows, slope, _ = tail_fit(T, np.linspace(0, 2.5, 8))
    assert rows[0]["tail"] == 1.0 and slope < 0
    # Rayleigh tail is exp(-t^2 / 2)
    assert slope == pytest.approx(-0.5, abs=0.05)


def test_tail_stderr_scales_with_reps():
    rng = np.random.default_rng(1)
    se = []
    for r in (200, 800):
        rows, _, _ = tail_fit(rng.normal(size=r), [0.5])
        se.append(rows[0]["stderr"])
    # four times the repetitions halve the binomial standard error
    assert se[1] == pytest.approx(se[0] / 2, rel=0.3)


@pytest.mark.slow
def test_concentration_slope_negative():
    cfg = small(kind="concentration", signal={"variant": "CosSineDisc"}, resolutions=[150],
                repetitions=200, eval_N=150)
    rep = run(cfg)
    fit = rep.tables["tail_fit"][0]
    assert fit["slope"] < 0
    assert rep.tables["tail"][0]["tail"] == 1.0


def test_lower_bound_sweep():
    cfg = ExperimentConfig(kind="lower_bound_kl", resolutions=[40, 80], blocks=[2, 4], sigma=1.0)
    rep = run(cfg)
    rows = rep.tables["kl"]
    assert all(r["bound_ok"] for r in rows)
    avg = {(r["N"], r["block"]): r["avg_quantity"] for r in rep.tables["kl_average"]}
    # halving h at fixed n shrinks the averaged divergence
    assert avg[(80, 2)] < avg[(80, 4)]
    assert avg[(40, 2)] < avg[(40, 4)]


def test_kl_bound_against_brute():
    g = GridSpec(1, 40)
    spec = LowerBoundBump(h=0.1, m=3)
    assert kl_brute(spec, LowerBoundBase(), g, 0.5) <= kl_bound(spec, g, 0.5)


def test_timing_grows_with_resolution():
    rep = run(ExperimentConfig(kind="timing", resolutions=[10, 510], repetitions=2,
                               prefactor=0.1, sigma=0.1))
    t = {s["N"]: s["mean_time_s"] for s in rep.summary()}
    assert t[510] > t[10]
    assert all(math.isnan(r.bottleneck) for r in rep.rows)
    assert raw_csv_text(rep).splitlines()[1].split(",")[-1] != ""


def test_sandwich_run_summary():
    cfg = small(kind="sandwich", signal={"variant": "CosSineDisc"}, resolutions=[50], repetitions=2,
                prefactor=0.25, lambdas=[0.0])
    rep = run(cfg)
    assert rep.tables["sandwich_summary"][0]["reps"] == 2
    assert rep.tables["sandwich"][0]["block"] == 3


def test_noise_tail_run():
    cfg = ExperimentConfig(kind="noise_tail", resolutions=[24], block=4, repetitions=200, seed=3)
    rows = run(cfg).tables["noise_tail"]
    assert [r["t"] for r in rows] == [1.5, 2.0, 2.5]
    assert tail_within_bound(0, 100, 1e-9)
    assert not tail_within_bound(5, 100, 1e-9)


@pytest.mark.parametrize("path", sorted((__import__("pathlib").Path(__file__).parent.parent / "configs").glob("*.json")))
def test_shipped_configs_parse(path):
    cfg = ExperimentConfig.from_json(path)
    if cfg.kind not in ("noise_tail", "lower_bound_kl"):
        cfg.signal_for(cfg.alphas[0])
