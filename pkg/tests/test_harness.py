import math
import warnings

import numpy as np
import pytest

from openasep import tables
from openasep.cli import main
from openasep.config import parse_kv, parse_list
from openasep.harness import (
    ExperimentConfig, FitRefused, fit_coalescence, fit_loglog, replica_key, sweep_coalescence,
    sweep_current_variance, sweep_second_class,
)


def test_fit_exact_power_law():
    x = np.array([10, 20, 40, 80.0])
    f = fit_loglog(x, 3 * x ** 1.5)
    assert f.slope == pytest.approx(1.5) and f.r_squared == pytest.approx(1.0)
    assert math.exp(f.intercept) == pytest.approx(3.0)
    assert max(abs(r) for r in f.residuals) < 1e-12
    with pytest.raises(FitRefused):
        fit_loglog([1.0], [2.0])


def test_fit_refusals():
    med = {32: 10.0, 64: 30.0}
    with pytest.raises(FitRefused, match="R=1"):
        fit_coalescence(med, {32: 0.0, 64: 0.0}, 1)
    with pytest.raises(FitRefused, match="5%"):
        fit_coalescence(med, {32: 0.0, 64: 0.06}, 100)
    with pytest.warns(UserWarning):
        fit_coalescence(med, {32: 0.0, 64: 0.02}, 100)


def test_config_parsing():
    kv = parse_kv("experiment = couple-sweep\n# comment\nkappa = 0\npsi = 0.7  # trailing\nn_list = 8 16\n"
                  "replicas = 3\nseed = 5\n")
    cfg = ExperimentConfig.from_kv(kv)
    assert cfg.kind == "couple-sweep" and cfg.n_list == (8, 16) and cfg.replicas == 3
    assert cfg.scaling.psi == 0.7 and cfg.seed == 5
    with pytest.raises(ValueError):
        parse_kv("a = 1\na = 2")
    with pytest.raises(ValueError):
        parse_kv("no equals sign")
    with pytest.raises(ValueError):
        ExperimentConfig(kind="bogus")
    with pytest.raises(ValueError):
        ExperimentConfig(kind="couple-sweep", n_list=(16, 8))
    assert parse_list("1, 2 3", int) == [1, 2, 3]


def test_replica_keys_distinct():
    assert len({replica_key(n, r) for n in (32, 64) for r in range(100)}) == 200


def test_sweep_independent_of_threads():
    base = dict(kind="couple-sweep", n_list=(6, 12), replicas=6, seed=3)
    from openasep.params import ScalingSpec
    sc = ScalingSpec(0.0, math.log(2))
    a = sweep_coalescence(ExperimentConfig(scaling=sc, threads=1, **base))
    b = sweep_coalescence(ExperimentConfig(scaling=sc, threads=3, **base))
    assert a.rows == b.rows and a.medians == b.medians
    assert a.fit is not None and a.fit.slope > 0


def test_event_budget_caps_coalescence():
    from openasep.params import ScalingSpec
    cfg = ExperimentConfig(kind="couple-sweep", scaling=ScalingSpec(0.0, math.log(2)), n_list=(40,),
                           replicas=4, seed=1, event_budget=50)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = sweep_coalescence(cfg)
    assert all(r[8] for r in res.rows)
    assert res.fit is None and "5%" in res.fit_error


def test_variance_sweep_small():
    from openasep.params import BoundaryParams
    cfg = ExperimentConfig(kind="var-sweep", params=BoundaryParams(0.5, 0.5, 0.25, 0.25, 0.5),
                           n_list=(8,), replicas=40, seed=2)
    (row,) = sweep_current_variance(cfg)
    assert row[0] == 8 and row[1] == pytest.approx(8 ** 1.5 / 0.5)
    assert abs(row[3] - row[5]) < 5 * row[4]


def test_variance_sweep_requires_product_line():
    from openasep.params import BoundaryParams
    cfg = ExperimentConfig(kind="var-sweep", params=BoundaryParams(1, 1, 0, 0, 0), n_list=(4,), replicas=2)
    with pytest.raises(ValueError):
        sweep_current_variance(cfg)


def test_second_class_small():
    cfg = ExperimentConfig(kind="second-class", replicas=30, seed=1,
                           extra={"rho": "0.5", "q": "0", "times": "5 10 20 40"})
    rows, fit = sweep_second_class(cfg)
    assert [r[0] for r in rows] == [5, 10, 20, 40]
    assert fit is not None and fit.slope > 0.5


def _run(args, path):
    assert main(args + ["--out", str(path)]) == 0
    return path.read_bytes()


def test_cli_byte_identical_reruns(tmp_path):
    a = _run(["exact-current"], tmp_path / "a.csv")
    b = _run(["exact-current"], tmp_path / "b.csv")
    assert a == b
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n_list = 4 8\nreplicas = 5\n", encoding="utf-8")
    a = _run(["couple-sweep", "--config", str(cfg), "--seed", "9"], tmp_path / "c1.csv")
    b = _run(["couple-sweep", "--config", str(cfg), "--seed", "9", "--threads", "2"], tmp_path / "c2.csv")
    assert a == b
    meta, header, rows = tables.read(tmp_path / "c1.csv")
    assert header[:2] == ["N", "kappa"] and len(rows) == 10
    assert meta["seed"] == "9" and "slope" in meta and meta["build"].startswith("openasep-")


def test_cli_other_commands(tmp_path):
    _run(["specialfn-check"], tmp_path / "s.csv")
    _, header, rows = tables.read(tmp_path / "s.csv")
    assert rows[0][0] == "gamma(5)"
    cfg = tmp_path / "m.cfg"
    cfg.write_text("n_list = 2 3\nreplicas = 20\n", encoding="utf-8")
    _run(["mix-exact", "--config", str(cfg)], tmp_path / "m.csv")
    _, header, rows = tables.read(tmp_path / "m.csv")
    assert header[:3] == ["N", "epsilon", "t_mix"] and len(rows) == 4
    # eps = 0.5 never needs longer than eps = 0.25
    assert float(rows[1][2]) <= float(rows[0][2])
    for method in ("exact", "contour"):
        _run(["current", "--method", method], tmp_path / f"{method}.csv")
    ex = tables.read(tmp_path / "exact.csv")[2]
    co = tables.read(tmp_path / "contour.csv")[2]
    assert all(abs(float(a[6]) - float(b[6])) < 1e-10 for a, b in zip(ex, co))


def test_cli_errors(tmp_path, capsys):
    assert main(["current", "--method", "asymptotic", "--out", str(tmp_path / "x.csv")]) == 2
    assert "scaling" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["exact-current", "--seed", str(2 ** 64)])


def test_table_round_trip():
    text = tables.render(("a", "b"), [(1, 0.1), (True, "x,y")], {"k": 3})
    meta, header, rows = tables.read(text)
    assert meta == {"k": "3"} and header == ["a", "b"]
    assert rows == [["1", "0.10000000000000001"], ["1", "x,y"]]
    assert text.endswith("\r\n")
