import csv
import io
import json

import numpy as np
import pytest

from ccsampling.cli import EXIT_INVALID, EXIT_SKIPPED, SCENARIO_COLS, SCENARIO_ROWS, main
from ccsampling.io import read_manifest, read_population


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def csv_body(text):
    lines = text.splitlines()
    assert lines[0].startswith("# config: ")
    return json.loads(lines[0][len("# config: "):]), list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


@pytest.fixture
def pop(tmp_path):
    path = tmp_path / "p.csv"
    assert main(["gen-pop", "--nm", "30", "--nd", "25", "--seed", "1", "--out", str(path)]) == 0
    return path


def test_gen_pop_header_and_determinism(tmp_path, pop):
    header = pop.read_text().splitlines()[0]
    assert header.startswith("# ccs-pop v1, nm=30, nd=25, label=model(")
    assert "mu=200.0" in header and "seed=1" in header
    again = tmp_path / "q.csv"
    main(["gen-pop", "--nm", "30", "--nd", "25", "--seed", "1", "--out", str(again)])
    assert again.read_bytes() == pop.read_bytes()


def test_gen_pop_constant(tmp_path):
    path = tmp_path / "c.csv"
    assert main(["gen-pop", "--nm", "4", "--nd", "3", "--sigma-m", "0", "--sigma-d", "0", "--sigma-e", "0", "--out", str(path)]) == 0
    assert np.all(read_population(path).values == 200.0)


def test_gen_pop_needs_out(capsys):
    code, _, err = run(capsys, "gen-pop", "--nm", "3", "--nd", "3")
    assert code == EXIT_INVALID and "--out" in err


def test_gen_pop_count_pair(tmp_path):
    out = tmp_path / "pair.json"
    assert main(["gen-pop", "--nm", "10", "--nd", "10", "--count-pair", "logit", "--out", str(out)]) == 0
    variables = read_manifest(out)
    assert sorted(variables) == ["x", "y"]
    assert np.all(variables["y"].values <= variables["x"].values)
    assert "beta=" in (tmp_path / "pair_y.csv").read_text().splitlines()[0]


def test_round_trip_into_simulate(pop, capsys):
    code, out, _ = run(capsys, "simulate", "--pop", str(pop), "--dm", "si(n=5)", "--dd", "si(n=5)",
                       "--reps", "200", "--truth-reps", "300", "--seed", "7")
    assert code == 0
    doc = json.loads(out)
    assert set(doc["rb_mc"]) == {"v_ht", "v_yg", "v_simp1", "v_simp2", "v_simp3"}
    assert doc["config"]["seed"] == 7 and doc["config"]["reps"] == 200
    # the file values are what the simulator saw
    assert doc["parameter"] == read_population(pop).total


def test_simulate_rerun_from_config_is_identical(pop, capsys):
    argv = ["simulate", "--pop", str(pop), "--reps", "50", "--truth-reps", "60", "--seed", "3"]
    _, first, _ = run(capsys, *argv)
    _, second, _ = run(capsys, *argv, "--threads", "2")
    a, b = json.loads(first), json.loads(second)
    for doc in (a, b):
        doc.pop("elapsed_ms")
        doc["config"].pop("threads")
    assert a == b


def test_simulate_oversized_design(pop, capsys):
    code, _, err = run(capsys, "simulate", "--pop", str(pop), "--dm", "si(n=2000)", "--reps", "5")
    assert code == EXIT_INVALID and "error" in err


def test_simulate_ratio_needs_denominator(pop, capsys):
    code, _, err = run(capsys, "simulate", "--pop", str(pop), "--target", "ratio", "--reps", "5")
    assert code == EXIT_INVALID and "denominator" in err


def test_design_parse_error_points_at_position(pop, capsys):
    code, _, err = run(capsys, "estimate", "--pop", str(pop), "--dm", "si(n=5", "--dd", "si(n=2)")
    assert code == EXIT_INVALID
    assert "^" in err


def test_simulate_ratio_from_manifest(tmp_path, capsys):
    out = tmp_path / "pair.json"
    main(["gen-pop", "--nm", "12", "--nd", "12", "--count-pair", "constant", "--out", str(out)])
    code, text, _ = run(capsys, "simulate", "--pop", str(out), "--var", "y", "--x-var", "x", "--target", "ratio",
                        "--reps", "100", "--truth-reps", "100")
    assert code == 0
    doc = json.loads(text)
    assert 0.2 < doc["parameter"] < 0.4 and doc["skipped"] == 0


def test_simulate_sizes_csv(pop, capsys):
    code, text, _ = run(capsys, "simulate", "--pop", str(pop), "--sizes", "5x5,10x10", "--reps", "20",
                        "--truth-reps", "20", "--format", "csv")
    assert code == 0
    config, rows = csv_body(text)
    assert config["sizes"] == "5x5,10x10"
    assert [r["design_m"] for r in rows] == ["si(n=5)", "si(n=10)"]


def test_simulate_skipped_exit_code(tmp_path, capsys):
    x = tmp_path / "x.csv"
    x.write_text("# ccs-pop v1, nm=3, nd=3, label=sparse\n1,0,0\n0,0,0\n0,0,0\n")
    code, _, err = run(capsys, "simulate", "--pop", str(x), "--x", str(x), "--target", "ratio",
                       "--dm", "si(n=1)", "--dd", "si(n=1)", "--reps", "30", "--truth-reps", "30")
    assert code == EXIT_SKIPPED and "skipped" in err
    code, _, _ = run(capsys, "simulate", "--pop", str(x), "--x", str(x), "--target", "ratio",
                     "--dm", "si(n=1)", "--dd", "si(n=1)", "--reps", "30", "--truth-reps", "30", "--max-skipped", "100")
    assert code == 0


def test_estimate_json_and_csv(pop, capsys):
    code, text, _ = run(capsys, "estimate", "--pop", str(pop), "--dm", "si(n=4)", "--dd", "stsi(10:2,15:3)", "--seed", "5")
    assert code == 0
    doc = json.loads(text)
    assert len(doc["sample"]["rows"]) == 4 and min(doc["sample"]["rows"]) >= 1
    assert doc["variances"]["v_ht"] == pytest.approx(doc["variances"]["v_yg"], rel=1e-9)
    code, text, _ = run(capsys, "estimate", "--pop", str(pop), "--dm", "si(n=4)", "--dd", "stsi(10:2,15:3)",
                        "--seed", "5", "--format", "csv")
    _, rows = csv_body(text)
    assert float(rows[0]["t_hat"]) == doc["t_hat"]


def test_exact_variance_methods_agree(tmp_path, capsys):
    small = tmp_path / "s.csv"
    main(["gen-pop", "--nm", "5", "--nd", "4", "--out", str(small)])
    _, fast, _ = run(capsys, "exact-variance", "--pop", str(small), "--dm", "si(n=2)", "--dd", "poisson(p=0.5)")
    _, slow, _ = run(capsys, "exact-variance", "--pop", str(small), "--dm", "si(n=2)", "--dd", "poisson(p=0.5)",
                     "--method", "generic")
    a, b = json.loads(fast), json.loads(slow)
    assert a["v_ccs"] == pytest.approx(b["v_ccs"], rel=1e-9)
    assert a["dd"]["kind"] == "poisson"


def test_poisson_probability_file(tmp_path, capsys):
    small = tmp_path / "s.csv"
    main(["gen-pop", "--nm", "3", "--nd", "3", "--out", str(small)])
    (tmp_path / "probs.csv").write_text("# column probabilities\n0.2, 0.5\n0.9\n")
    code, text, _ = run(capsys, "exact-variance", "--pop", str(small), "--dm", "si(n=2)", "--dd", "poisson(file=probs.csv)")
    assert code == 0
    assert json.loads(text)["v_ccs"] > 0


def test_compare_designs_csv(pop, capsys):
    code, text, _ = run(capsys, "compare-designs", "--pop", str(pop), "--sizes", "5,25")
    assert code == 0
    _, rows = csv_body(text)
    assert len(rows) == 4
    assert rows[-1]["n_d"] == "25"
    code, _, err = run(capsys, "compare-designs", "--pop", str(pop), "--sizes", "5,big")
    assert code == EXIT_INVALID and "sizes" in err


def test_model_bias_json(capsys):
    code, text, _ = run(capsys, "model-bias", "--rm", "1", "--rd", "1", "--nm", "5", "--NM", "1000", "--nd", "5", "--ND", "1000")
    assert code == 0
    doc = json.loads(text)
    assert doc["a1"] == pytest.approx(1.1988011988, abs=1e-9)
    assert doc["rb1"] == pytest.approx(-0.454793, abs=1e-6)
    assert doc["rb3"] == pytest.approx(0.0904134, abs=1e-6)
    code, _, _ = run(capsys, "model-bias", "--rm", "1", "--rd", "1", "--nm", "5", "--NM", "5", "--nd", "5", "--ND", "10")
    assert code == EXIT_INVALID


def test_elfe_scenario(capsys, tmp_path):
    assert sum(n for _, n in SCENARIO_ROWS) == 287 and sum(n for _, n in SCENARIO_COLS) == 25
    assert sum(N for N, _ in SCENARIO_ROWS) == 544 and sum(N for N, _ in SCENARIO_COLS) == 365
    out = tmp_path / "scenario.json"
    code, _, _ = run(capsys, "elfe-scenario", "--sigma-m", "50", "--sigma-d", "1", "--out", str(out), "--seed", "2")
    assert code == 0
    doc = json.loads(out.read_text())
    assert (doc["sample_rows"], doc["sample_cols"]) == (287, 25)
    v = doc["variances"]
    assert v["v_simp3"] == v["v_simp1"] + v["v_simp2"]
    assert abs(doc["rd"]["v_simp1"]) < 0.2
    assert doc["rd"]["v_simp2"] < -0.8


def test_bad_seed_and_threads(pop, capsys):
    code, _, _ = run(capsys, "model-bias", "--rm", "1", "--rd", "1", "--nm", "5", "--NM", "10", "--nd", "5", "--ND", "10",
                     "--seed", "-1")
    assert code == EXIT_INVALID
    code, _, _ = run(capsys, "simulate", "--pop", str(pop), "--threads", "0")
    assert code == EXIT_INVALID


def test_unknown_subcommand_exits_nonzero():
    with pytest.raises(SystemExit) as info:
        main(["nope"])
    assert info.value.code != 0
