import csv
import json
import math

import numpy as np
import pytest

from minvine.basis import gram_schmidt_orthonormal, tensor
from minvine.cli import main
from minvine.data import Dataset, ingest_csv, rank_transform
from minvine.errors import EmptyDataset, NonFiniteValue, ParseError
from minvine.fit import PairSample, empirical_moments
from minvine.vine import VineModel, VineStructure, VineEdge, fit_vine

SMALL = ["--grid", "30", "--k", "2"]


def write(path, text):
    path.write_text(text)
    return str(path)


def read_table(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def synthetic_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthetic")
    assert main(["ingest", "--out", str(out), "--seed", "4"]) == 0
    return out


@pytest.fixture(scope="module")
def vine_run(tmp_path_factory, synthetic_dir):
    out = tmp_path_factory.mktemp("vine")
    code = main(["fit-vine", "--data", str(synthetic_dir / "raw.csv"), "--out", str(out),
                 "--bins", "4", "--k", "6", "--grid", "24"])
    assert code == 0
    return out


# ------------------------------------------------------------------ ingest

def test_ingest_four_columns(tmp_path):
    path = write(tmp_path / "d.csv", "T,M,B,S\n1,2,3,4\n5,6,7,8\n9,10,11,12.5\n")
    d = ingest_csv(path)
    assert d.labels == ("T", "M", "B", "S")
    assert d.shape == (3, 4)
    assert not d.pseudo
    assert d.values[2, 3] == 12.5


def test_ingest_reports_bad_cell(tmp_path):
    path = write(tmp_path / "d.csv", "T,M\n1,2\n3,abc\n")
    with pytest.raises(ParseError, match=r"line 3, column 'M'"):
        ingest_csv(path)


def test_ingest_ragged_row(tmp_path):
    with pytest.raises(ParseError, match="line 2"):
        ingest_csv(write(tmp_path / "d.csv", "T,M\n1\n"))


def test_ingest_non_finite(tmp_path):
    with pytest.raises(NonFiniteValue):
        ingest_csv(write(tmp_path / "d.csv", "T,M\n1,inf\n"))


def test_ingest_empty(tmp_path):
    with pytest.raises(EmptyDataset):
        ingest_csv(write(tmp_path / "d.csv", "T,M\n"))
    with pytest.raises(EmptyDataset):
        ingest_csv(write(tmp_path / "e.csv", ""))


def test_duplicate_labels_rejected(tmp_path):
    with pytest.raises(ParseError):
        ingest_csv(write(tmp_path / "d.csv", "T,T\n1,2\n"))


# ---------------------------------------------------------- rank transform

def test_rank_transform_example():
    out = rank_transform(Dataset(("a",), np.array([[3.0], [1.0], [2.0]])))
    assert out.pseudo
    assert out.values[:, 0].tolist() == [0.75, 0.25, 0.5]


def test_rank_transform_constant_column():
    out = rank_transform(Dataset(("a",), np.full((5, 1), 7.0)))
    assert np.all(out.values == 0.5)


def test_rank_transform_is_uniform_grid():
    rng = np.random.default_rng(0)
    n = 97
    out = rank_transform(Dataset(("a", "b"), rng.standard_normal((n, 2))))
    expected = np.arange(1, n + 1) / (n + 1)
    for j in range(2):
        assert np.array_equal(np.sort(out.values[:, j]), expected)


def test_constant_tensor_moment_after_ranks_is_exactly_one():
    rng = np.random.default_rng(1)
    out = rank_transform(Dataset(("a", "b"), rng.standard_normal((50, 2))))
    phi = gram_schmidt_orthonormal(0)
    m = empirical_moments(PairSample(out.values[:, 0], out.values[:, 1]),
                          [tensor(phi[0], phi[0])])
    assert m[0] == 1.0


# -------------------------------------------------------------- commands

def test_ingest_command_writes_pseudo_observations(synthetic_dir):
    rows = read_table(synthetic_dir / "pseudo.csv")
    assert rows[0] == ["T", "M", "B", "S"]
    vals = np.array(rows[1:], dtype=float)
    assert vals.min() > 0 and vals.max() < 1


def test_fit_pair_outputs_and_determinism(tmp_path, synthetic_dir, capsys):
    args = ["fit-pair", "--data", str(synthetic_dir / "raw.csv"), "--pair", "T", "M"] + SMALL
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "fit.json").read_bytes()
    assert a == (tmp_path / "b" / "fit.json").read_bytes()
    doc = json.loads(a)
    assert set(doc) >= {"bases", "alphas", "lambdas", "loglik", "grid_n", "residual", "stages"}
    assert doc["pair"] == ["T", "M"]
    trace = read_table(tmp_path / "a" / "trace.csv")
    assert trace[0] == ["base", "parameter_values", "log_likelihood"]
    assert len(trace) == 3 and trace[2][0].startswith("previous + ")
    density = np.loadtxt(tmp_path / "a" / "density.csv", delimiter=",", comments="#")
    assert density.shape == (30, 30)
    assert "log_likelihood" in capsys.readouterr().out


def test_fit_pair_on_independent_columns(tmp_path):
    rng = np.random.default_rng(8)
    n = 2000
    rows = "\n".join(f"{a:.17g},{b:.17g}" for a, b in rng.standard_normal((n, 2)))
    path = write(tmp_path / "ind.csv", "X,Y\n" + rows + "\n")
    assert main(["fit-pair", "--data", path, "--out", str(tmp_path)] + SMALL) == 0
    doc = json.loads((tmp_path / "fit.json").read_text())
    assert max(abs(x) for x in doc["lambdas"]) < 5 / math.sqrt(n)
    assert abs(doc["loglik"]) < 10


def test_fit_pair_k_zero_is_config_error(tmp_path):
    assert main(["fit-pair", "--out", str(tmp_path), "--k", "0"]) == 2


def test_unknown_label_is_config_error(tmp_path):
    assert main(["fit-pair", "--out", str(tmp_path), "--pair", "T", "Q"] + SMALL) == 2


def test_config_file_errors(tmp_path):
    assert main(["fit-pair", "--config", write(tmp_path / "c.json", "{bad"), "--out", str(tmp_path)]) == 2
    assert main(["fit-pair", "--config", write(tmp_path / "d.json", '{"nope": 1}'),
                 "--out", str(tmp_path)]) == 2
    assert main(["fit-pair", "--config", write(tmp_path / "e.json", '{"fit": {"grid_n": 1}}'),
                 "--out", str(tmp_path)]) == 2
    assert main(["fit-pair", "--out", str(tmp_path), "--bases", "fourier"]) == 2


def test_config_file_is_applied(tmp_path, synthetic_dir):
    cfg = {"pair": ["B", "S"], "k": 1, "candidates": ["phi1 x phi1", "phi2 x phi2"],
           "fit": {"grid_n": 20}}
    path = write(tmp_path / "c.json", json.dumps(cfg))
    assert main(["fit-pair", "--config", path, "--data", str(synthetic_dir / "raw.csv"),
                 "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "fit.json").read_text())
    assert doc["pair"] == ["B", "S"] and doc["grid_n"] == 20 and len(doc["bases"]) == 1


def test_bad_data_exit_code(tmp_path):
    path = write(tmp_path / "d.csv", "T,M\n1,x\n")
    assert main(["fit-pair", "--data", path, "--out", str(tmp_path)]) == 3
    assert main(["ingest", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 3


def test_numerical_failure_exit_code(tmp_path):
    path = write(tmp_path / "c.json", json.dumps({"fit": {"opt_max_evals": 2}}))
    assert main(["fit-pair", "--config", path, "--out", str(tmp_path)] + SMALL) == 4


def test_empty_bin_exit_code(tmp_path, synthetic_dir, capsys):
    code = main(["fit-vine", "--data", str(synthetic_dir / "raw.csv"), "--out", str(tmp_path),
                 "--bins", "20"] + SMALL)
    assert code == 3
    assert "fewer bins" in capsys.readouterr().err


def test_vine_report_has_all_components(vine_run):
    rows = read_table(vine_run / "bins.csv")
    body = rows[1:-1]
    assert len(body) == 3 + 8 + 16
    assert rows[-1][0] == "total"
    total = float(rows[-1][-1])
    model = json.loads((vine_run / "model.json").read_text())
    exact = sum(f["fit"]["loglik"] for e in model["edges"]
                for f in ([e["model"]] if e["model"]["type"] == "unconditional" else e["model"]["fits"]))
    assert abs(model["total_loglik"] - exact) < 1e-9
    assert abs(total - exact) < 1e-4
    assert all(len(r[3].split("; ")) == 6 for r in body)


def test_vine_edge_table_layout(vine_run):
    rows = read_table(vine_run / "edges.csv")
    assert rows[0] == ["edge", "interval", "n", "base", "alpha", "lambda", "log_likelihood"]
    assert len(rows) == 1 + 27 * 6
    assert rows[-1][1] == "0.75<M<1 0.75<B<1"


def test_model_json_reserializes_identically(vine_run):
    text = (vine_run / "model.json").read_text()
    again = json.dumps(VineModel.from_dict(json.loads(text)).to_dict(), sort_keys=True, indent=2) + "\n"
    assert again == text


def test_sample_command(vine_run, tmp_path):
    model = str(vine_run / "model.json")
    assert main(["sample", "--model", model, "--out", str(tmp_path / "a"), "--count", "300",
                 "--seed", "5"]) == 0
    assert main(["sample", "--model", model, "--out", str(tmp_path / "b"), "--count", "300",
                 "--seed", "5"]) == 0
    a = (tmp_path / "a" / "samples.csv").read_bytes()
    assert a == (tmp_path / "b" / "samples.csv").read_bytes()
    rows = read_table(tmp_path / "a" / "samples.csv")
    assert rows[0] == ["T", "M", "B", "S"]
    vals = np.array(rows[1:], dtype=float)
    assert vals.shape == (300, 4)
    assert vals.min() >= 0 and vals.max() <= 1


def test_sample_from_pair_fit(tmp_path, synthetic_dir):
    assert main(["fit-pair", "--data", str(synthetic_dir / "raw.csv"), "--out", str(tmp_path)]
                + SMALL) == 0
    assert main(["sample", "--model", str(tmp_path / "fit.json"), "--out", str(tmp_path),
                 "--count", "10"]) == 0
    assert read_table(tmp_path / "samples.csv")[0] == ["T", "M"]


def test_sample_refuses_non_path_vine(tmp_path, synthetic_dir):
    data = rank_transform(ingest_csv(synthetic_dir / "raw.csv")).values[:, :3]
    edges = (VineEdge(1, (1, 0)), VineEdge(1, (0, 2)), VineEdge(2, (1, 2), (0,), (0, 1)))
    s = VineStructure(("T", "M", "B"), edges)
    from minvine.basis import candidate_pool
    from minvine.fit import FitConfig
    m = fit_vine(data, s, candidate_pool("orthonormal", 2), 1, 2, FitConfig(grid_n=20))
    path = write(tmp_path / "cvine.json", json.dumps(m.to_dict()))
    assert main(["sample", "--model", path, "--out", str(tmp_path)]) == 2


def test_export_density(vine_run, tmp_path):
    assert main(["export-density", "--model", str(vine_run / "model.json"),
                 "--out", str(tmp_path), "--grid", "12"]) == 0
    index = read_table(tmp_path / "densities.csv")
    assert len(index) == 1 + 27
    grid = np.loadtxt(tmp_path / index[5][2], delimiter=",", comments="#")
    assert grid.shape == (12, 12)
    np.testing.assert_allclose(grid.mean(axis=0), 1.0, atol=1e-9)
    np.testing.assert_allclose(grid.mean(axis=1), 1.0, atol=1e-9)


def test_report_command(vine_run, tmp_path, capsys):
    assert main(["report", "--model", str(vine_run / "model.json"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "bins.csv").read_text() == (vine_run / "bins.csv").read_text()
    assert "total" in capsys.readouterr().out


def test_report_missing_model_is_config_error(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 2
    assert main(["report", "--model", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2


def test_compare_mode(tmp_path, synthetic_dir):
    code = main(["fit-vine", "--compare", "--data", str(synthetic_dir / "raw.csv"),
                 "--out", str(tmp_path), "--grid", "16", "--k", "1", "--bins", "2"])
    assert code == 0
    rows = read_table(tmp_path / "comparison.csv")
    assert rows[0] == ["model", "log_likelihood"]
    assert [r[0].split(", ")[1] for r in rows[1:]] == [
        "ordinary polynomial basis", "orthonormal polynomial basis", "Legendre multiwavelet basis"]
    for short in ("ordinary", "orthonormal", "multiwavelet"):
        assert (tmp_path / f"model-{short}.json").exists()
