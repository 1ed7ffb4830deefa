import json

import numpy as np
import pytest

from latentid import pipeline
from latentid.errors import AssumptionError, ConfigError, DegeneracyError, IdentifiabilityError
from latentid.model import simulate
from latentid.pipeline import PipelineConfig, load_block_csv, run_identify, run_montecarlo, write_block_csv

from helpers import EXP1, THEOREM1_LOADINGS, random_exp_spec, shared_component_spec, theorem1_config

QUICK_GRIDS = {"factor": {"T": 3.0, "step": 0.05}}


def _quick(**extra):
    extra.setdefault("grids", QUICK_GRIDS)
    return theorem1_config(n=20_000, seed=3, **extra)


@pytest.mark.parametrize("patch, match", [
    ({"mode": "other"}, "mode"),
    ({"n": 0}, "n must be"),
    ({"seed": -1}, "seed"),
    ({"bogus": 1}, "unknown config keys"),
    ({"floor": 1.5}, "floor"),
    ({"stop_after": "errors"}, "stop_after"),
    ({"cpd": {"method": "magic"}}, "cpd.method"),
    ({"cpd": {"restart": 3}}, "unknown config keys"),
    ({"cpd": {"rank_sweep": 0}}, "rank_sweep"),
    ({"L": 3}, "L disagrees"),
    ({"data": {"x1": "a.csv", "x2": "b.csv", "x3": "c.csv"}}, "exactly one"),
    ({"grids": {"factor": {"T": -1.0, "step": 0.1}}}, "grids.factor"),
])
def test_config_errors(patch, match):
    cfg = theorem1_config()
    cfg.update(patch)
    with pytest.raises(ConfigError, match=match):
        PipelineConfig.from_dict(cfg)


def test_config_from_json_errors(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig.from_json(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        PipelineConfig.from_json(bad)


def test_config_roundtrip():
    cfg = PipelineConfig.from_dict(_quick(out="somewhere"))
    again = PipelineConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert "out" not in cfg.to_dict(include_out=False)


def test_quick_theorem1_run(tmp_path):
    rec = run_identify(_quick(out=str(tmp_path)))
    m = rec.metrics
    assert m["loading_error"] < 0.05
    assert max(m["factor_cf_sup_error"]) < 0.05
    assert max(m["factor_density_l1_bandlimited"]) < 0.1
    assert all(p.certified for p in rec.pairs)
    assert set(rec.error_cfs) == {"1", "2", "3"}
    assert max(rec.diagnostics["reconstruction_error"].values()) < 1e-10
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["metrics"]["loading_error"] == pytest.approx(m["loading_error"])
    assert "out" not in report["config"]
    for name in ("moments.csv", "factor_cf_1.csv", "factor_density_2.csv", "error_cf_3.csv"):
        assert (tmp_path / name).exists()


def test_stop_after_cpd():
    rec = run_identify(_quick(stop_after="cpd"), write=False)
    assert rec.factor_cfs == [] and rec.metrics["loading_error"] < 0.05


def test_gaussian_factors_fail_validation():
    cfg = _quick()
    cfg["model"]["factors"] = [{"family": "gaussian", "sigma": 1.0}] * 2
    with pytest.raises(AssumptionError) as exc:
        run_identify(cfg, write=False)
    assert exc.value.stage == "validate"
    assert str(exc.value).startswith("[validate]")


def test_forced_gaussian_fails_in_cpd():
    # the population third-moment tensor vanishes identically
    cfg = _quick(force=True)
    del cfg["n"]
    cfg["model"]["factors"] = [{"family": "gaussian", "sigma": 1.0}] * 2
    with pytest.raises(DegeneracyError) as exc:
        run_identify(cfg, write=False)
    assert exc.value.stage == "cpd"


def test_population_beyond_full_column_rank():
    spec = random_exp_spec(np.random.default_rng(11), (4, 4, 4), 5)
    cfg = {"mode": "theorem1", "model": spec.to_dict(), "seed": 0, "stop_after": "cpd",
           "cpd": {"method": "als", "restarts": 50}}
    rec = run_identify(cfg, write=False)
    assert rec.metrics["loading_error"] <= 1e-4
    assert rec.rank_report.kappas == (4, 4, 4)


def test_csv_data_input(tmp_path):
    spec = PipelineConfig.from_dict(_quick()).model
    data = simulate(spec, 5000, 1)
    paths = {}
    for i, x in enumerate(data.blocks, start=1):
        paths[f"x{i}"] = str(tmp_path / f"x{i}.csv")
        write_block_csv(paths[f"x{i}"], x)
    np.testing.assert_array_equal(load_block_csv(paths["x1"]), data.x1)
    rec = run_identify({"data": paths, "L": 2, "grids": QUICK_GRIDS}, write=False)
    assert rec.metrics is None
    assert len(rec.factor_cfs) == 2


def test_csv_bad_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError):
        load_block_csv(p)


def test_known_loadings_with_single_row_block():
    model = {"loadings": [THEOREM1_LOADINGS[0], THEOREM1_LOADINGS[1], [[0.8, 0.5]]],
             "factors": [EXP1, EXP1], "errors": [{"cov": 0.1 * np.eye(k)} for k in (2, 2, 1)]}
    model["errors"] = [{"cov": e["cov"].tolist()} for e in model["errors"]]
    cfg = {"mode": "theorem1", "model": model, "n": 2000, "seed": 1, "cpd": {"method": "known"}}
    with pytest.raises(IdentifiabilityError) as exc:
        run_identify(cfg, write=False)
    assert exc.value.margin == -1


def test_proposition1_quick_run():
    spec = shared_component_spec()
    cfg = {"mode": "proposition1", "model": spec.to_dict(), "n": 20_000, "seed": 11, "cpd": {"method": "known"},
           "grids": {"factor": {"T": 2.0, "step": 0.05}, "joint": {"T": 1.5, "step": 0.25}, "n_lambda": 16}}
    rec = run_identify(cfg, write=False)
    assert rec.joint_cf is not None
    assert rec.metrics["joint_cf_sup_error"] < 0.05
    assert max(rec.metrics["factor_cf_sup_error"]) < 0.05


def test_montecarlo_single_replication_matches_run():
    cfg = _quick()
    res = run_montecarlo(cfg, 1)
    row = res["runs"][0]
    single = run_identify(dict(cfg, seed=row["seed"], stop_after="latent"), write=False)
    assert row["ok"] and row["loading_error"] == single.metrics["loading_error"]
    assert row["cf_sup_error"] == max(single.metrics["factor_cf_sup_error"])


def test_montecarlo_is_deterministic_and_writes(tmp_path):
    cfg = _quick()
    a = run_montecarlo(cfg, 2, [2000, 4000], out=str(tmp_path))
    b = run_montecarlo(cfg, 2, [2000, 4000], threads=2)
    assert a["runs"] == b["runs"]
    assert [g["n"] for g in a["aggregate"]] == [2000, 4000]
    lines = (tmp_path / "montecarlo.csv").read_text().splitlines()
    assert lines[0].startswith("n,replication,seed") and len(lines) == 5
    assert json.loads((tmp_path / "aggregate.json").read_text())["replications"] == 2


def test_montecarlo_counts_failures(monkeypatch):
    real = pipeline.run_identify
    bad_seed = pipeline._derived_seed(3, 100, 1)

    def flaky(cfg, write=True):
        if cfg.seed == bad_seed:
            raise DegeneracyError("synthetic failure")
        return real(cfg, write)

    monkeypatch.setattr(pipeline, "run_identify", flaky)
    res = run_montecarlo(_quick(), 3, [2000])
    agg = res["aggregate"][0]
    assert agg["failures"] == 1 and agg["replications"] == 3
    assert [r["ok"] for r in res["runs"]] == [True, False, True]


def test_montecarlo_needs_model():
    with pytest.raises(ConfigError):
        run_montecarlo({"data": {"x1": "a", "x2": "b", "x3": "c"}, "L": 2}, 2)


def test_rank_sweep_diagnostic():
    rec = run_identify(_quick(stop_after="cpd", cpd={"rank_sweep": 3}), write=False)
    res = rec.diagnostics["residual_by_L"]
    assert len(res) == 3 and res[1] < 0.05 < res[0]


def test_nearly_collinear_loadings_warn_about_conditioning():
    model = {"loadings": [[[1.0, 0.0], [0.0, 1.0]], [[1.0, 1.0], [1.0, 1.01]], [[0.8, 0.5], [-0.5, 1.0]]],
             "factors": [EXP1, EXP1], "errors": [{"cov": [[0.1, 0.0], [0.0, 0.1]]}] * 3}
    cfg = {"mode": "theorem1", "model": model, "cpd": {"method": "known"}, "stop_after": "latent",
           "grids": QUICK_GRIDS}
    # warnings raised inside a run are recorded in the report rather than propagated
    rec = run_identify(cfg, write=False)
    assert min(rec.diagnostics["pair_gamma_cosine"]) < 0.05
    assert any("nearly orthogonal" in w for w in rec.diagnostics["warnings"])
