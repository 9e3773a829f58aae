import csv
import json

import numpy as np
import pytest

from pushid import cli, scen


def _table(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _notes(path):
    return dict(ln[2:].split(": ", 1) for ln in path.read_text().splitlines()
                if ln.startswith("# ") and ": " in ln)


@pytest.fixture(scope="module")
def square_set(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "square.json"
    assert cli.main(["generate", "--archetype", "uniform", "--k", "4", "--seed", "3",
                     "--out", str(path)]) == cli.EXIT_OK
    return path


def test_generate_is_reproducible(tmp_path):
    out = tmp_path / "h.json"
    argv = ["generate", "--archetype", "hammer", "--k", "9", "--seed", "7", "--out", str(out)]
    assert cli.main(argv) == 0
    first = out.read_bytes()
    assert cli.main(argv) == 0
    assert out.read_bytes() == first


def test_unknown_archetype_lists_choices(tmp_path, capsys):
    code = cli.main(["generate", "--archetype", "anvil", "--out", str(tmp_path / "x.json")])
    assert code == cli.EXIT_USAGE
    err = capsys.readouterr().err
    assert "hammer" in err and "ranch" in err
    assert not (tmp_path / "x.json").exists()


@pytest.mark.parametrize("k", ["3", "201"])
def test_k_out_of_range(tmp_path, k):
    code = cli.main(["generate", "--archetype", "uniform", "--k", k,
                     "--out", str(tmp_path / "x.json")])
    assert code == cli.EXIT_DATA


def test_outputs_carry_provenance(square_set, tmp_path):
    out = tmp_path / "r.csv"
    cli.main(["identify", str(square_set), "--max-epochs", "3", "--out", str(out)])
    head = out.read_text().splitlines()[:2]
    assert head[0].startswith("# pushid ")
    assert head[1].startswith("# invocation: pushid identify")


def test_identify_uniform_square(square_set, tmp_path):
    out, heat, params = tmp_path / "r.csv", tmp_path / "h.csv", tmp_path / "p.json"
    argv = ["identify", str(square_set), "--identify-mass", "--out", str(out),
            "--heatmap", str(heat), "--params-out", str(params)]
    assert cli.main(argv) == 0
    assert float(_notes(out)["test_error"]) < 0.015
    rows = _table(heat)
    assert len(rows) == 4 and set(rows[0]) == {"cell_x", "cell_y", "mass_friction"}
    first = [p.read_bytes() for p in (out, heat, params)]
    assert cli.main(argv) == 0
    assert [p.read_bytes() for p in (out, heat, params)] == first


def test_report_has_one_row_per_epoch(square_set, tmp_path):
    out = tmp_path / "r.csv"
    cli.main(["identify", str(square_set), "--max-epochs", "5", "--loss-threshold", "0",
              "--eval-every", "2", "--out", str(out)])
    rows = _table(out)
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3, 4, 5]
    assert [r["test_error"] != "" for r in rows] == [True, False, True, False, True]


def test_missing_dataset(tmp_path):
    code = cli.main(["identify", str(tmp_path / "nope.json"), "--out", str(tmp_path / "r.csv")])
    assert code == cli.EXIT_DATA


def test_benchmark_budget_zero_writes_nothing(square_set, tmp_path):
    out = tmp_path / "b.csv"
    assert cli.main(["benchmark", str(square_set), "--budget", "0", "--out", str(out)]) \
        == cli.EXIT_DATA
    assert not out.exists()


def test_benchmark_unknown_method(square_set, tmp_path):
    code = cli.main(["benchmark", str(square_set), "--budget", "5", "--methods", "magic",
                     "--out", str(tmp_path / "b.csv")])
    assert code == cli.EXIT_USAGE


def test_benchmark_rows_match_evaluations(square_set, tmp_path):
    out = tmp_path / "b.csv"
    argv = ["benchmark", str(square_set), "--budget", "12", "--eval-every", "4",
            "--out", str(out)]
    assert cli.main(argv) == 0
    rows = _table(out)
    ds = scen.load_dataset(square_set)
    config = cli._config(cli.build_parser().parse_args(argv), ds)
    expected = sum(len(cli.run_method(m, ds, config, 12).checkpoints) for m in cli.METHODS)
    assert len(rows) == expected
    assert {r["method"] for r in rows} == set(cli.METHODS)
    assert all(r["status"] == "ok" for r in rows)
    assert all(int(r["sim_count"]) <= 12 for r in rows)
    first = out.read_bytes()
    assert cli.main(argv) == 0
    assert out.read_bytes() == first


def test_benchmark_parallel_matches_sequential(square_set, tmp_path):
    out = tmp_path / "b.csv"
    base = ["benchmark", str(square_set), "--budget", "6", "--out", str(out)]
    cli.main(base)
    seq = _table(out)
    cli.main(base + ["--jobs", "2"])
    assert _table(out) == seq


def _true_params_file(ds, path):
    p = ds.scenario.true_params
    path.write_text(json.dumps({"masses": p.masses.tolist(), "inertias": p.inertias.tolist(),
                                "frictions": p.frictions.tolist()}))


def test_simulate_true_params_reproduce_data(square_set, tmp_path):
    params, out, pred = tmp_path / "p.json", tmp_path / "s.csv", tmp_path / "pred.json"
    ds = scen.load_dataset(square_set)
    _true_params_file(ds, params)
    assert cli.main(["simulate", str(square_set), "--params", str(params), "--out", str(out),
                     "--predicted", str(pred)]) == 0
    assert float(_notes(out)["mean_error"]) <= 1e-9
    assert len(_table(out)) == 4 * len(ds.test)
    traj = json.loads(pred.read_text())["trajectories"]
    assert np.allclose(traj[0], ds.test[0].states, atol=1e-9)


def test_simulate_uniform_worse_than_identified(tmp_path):
    data, out = tmp_path / "h.json", tmp_path / "s.csv"
    cli.main(["generate", "--archetype", "hammer", "--k", "9", "--seed", "0",
              "--out", str(data)])
    ident_params, flat = tmp_path / "id.json", tmp_path / "flat.json"
    cli.main(["identify", str(data), "--identify-mass", "--eval-every", "0",
              "--out", str(tmp_path / "r.csv"), "--params-out", str(ident_params)])
    p = json.loads(ident_params.read_text())["params"]
    k, m = len(p["masses"]), sum(p["masses"])
    ds = scen.load_dataset(data)
    flat_mass = m / k
    inertia = flat_mass * ds.scenario.grid.cell_size ** 2 / 6
    mean_fric = sum(p["frictions"]) / k
    flat.write_text(json.dumps({"masses": [flat_mass] * k, "inertias": [inertia] * k,
                                "frictions": [mean_fric] * k}))
    errors = []
    for params in (ident_params, flat):
        assert cli.main(["simulate", str(data), "--params", str(params), "--out", str(out)]) == 0
        errors.append(float(_notes(out)["mean_error"]))
    assert errors[1] > errors[0]


def test_simulate_missing_params(square_set, tmp_path):
    code = cli.main(["simulate", str(square_set), "--params", str(tmp_path / "none.json"),
                     "--out", str(tmp_path / "s.csv")])
    assert code == cli.EXIT_DATA


def test_simulate_grid_mismatch(square_set, tmp_path):
    params = tmp_path / "p.json"
    params.write_text(json.dumps({"masses": [0.1] * 3, "inertias": [1e-5] * 3,
                                  "frictions": [0.1] * 3}))
    code = cli.main(["simulate", str(square_set), "--params", str(params),
                     "--out", str(tmp_path / "s.csv")])
    assert code == cli.EXIT_DATA


def test_version_flag(capsys):
    assert cli.main(["--version"]) == 0
    assert "pushid" in capsys.readouterr().out
