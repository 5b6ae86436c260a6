import json

import numpy as np
import pytest

from mdlae import synth


def test_noiseless_one_dimensional_linear_data_lies_on_a_line():
    X = synth.generate("linear-gaussian(1, 1, 0)", 50, np.random.default_rng(0)).data
    assert X.shape == (50, 1)
    X2 = synth.generate("linear-gaussian(1, 2, 0)", 50, np.random.default_rng(1)).data
    # rank one through the origin: every point is a multiple of the first
    assert np.linalg.matrix_rank(X2, tol=1e-12) == 1


def test_discrete_mixture_has_four_centers():
    ds = synth.generate("discrete-mixture(2, 4, 0)", 500, np.random.default_rng(2))
    assert len(np.unique(np.round(ds.data, 12), axis=0)) == 4
    W, b = np.array(ds.truth["W"]), np.array(ds.truth["b"])
    assert np.allclose(W.T @ W, 4 * np.eye(2), atol=1e-12)  # orthogonal columns of length 2
    codes = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    centers = codes @ W.T + b
    assert all(np.min(np.abs(centers - x).sum(axis=1)) < 1e-12 for x in ds.data)


def test_two_scale_variances():
    X = synth.generate("two-scale", 10_000, np.random.default_rng(3)).data
    var = X.var(axis=0)
    assert abs(var[0] - 1) < 0.1 and abs(var[1] - 1e-4) < 1e-5


def test_spec_parsing_and_errors():
    assert synth.parse_spec("linear-gaussian(2, 4, 0.1)") == ("linear-gaussian", [2.0, 4.0, 0.1])
    assert synth.parse_spec("two-scale") == ("two-scale", [])
    for bad in ("gaussian-blob(1)", "discrete-mixture(7, 8)", "linear-gaussian(1.5, 2, 0)", "linear-gaussian(1, 2)"):
        with pytest.raises(ValueError):
            synth.generate(bad, 5, np.random.default_rng(0))


def test_same_stream_same_data():
    a = synth.generate("discrete-mixture(3, 5)", 20, np.random.default_rng(4)).data
    b = synth.generate("discrete-mixture(3, 5)", 20, np.random.default_rng(4)).data
    assert np.array_equal(a, b)


def test_csv_and_sidecar_round_trip(tmp_path):
    ds = synth.generate("linear-gaussian(2, 3, 0.1)", 7, np.random.default_rng(5))
    ds.write(tmp_path / "d.csv", tmp_path / "d.json")
    assert np.array_equal(np.loadtxt(tmp_path / "d.csv", delimiter=","), ds.data)
    truth = json.loads((tmp_path / "d.json").read_text())
    assert truth["generator"] == "linear-gaussian" and np.array(truth["W"]).shape == (3, 2)
