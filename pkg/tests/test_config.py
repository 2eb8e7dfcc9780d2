import numpy as np
import pytest

from lookahead_impute.config import ExperimentConfig, load, loads
from lookahead_impute.consensus import EuclideanBall, Polyhedron
from lookahead_impute.exceptions import ConfigError
from lookahead_impute.panel import MCAR


def test_defaults():
    c = ExperimentConfig()
    assert (c.n, c.splits, c.K, c.simulations, c.imputations) == (10, (100, 100, 1000), 5, 100, 10)
    assert c.mechanisms == ("forward_kl", "wasserstein", "restricted_wasserstein")
    assert c.mode == "cond_expect" and c.omega == "truth"
    assert isinstance(c.missing_mechanism(), MCAR)
    assert c.gaussian_prior() is None
    assert isinstance(c.bias(10), EuclideanBall)
    assert c.annualization_factor() == 1.0


def test_empty_file_is_default():
    assert loads("") == ExperimentConfig()


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match=r"cfg.yaml:3: unknown key 'simulatons'"):
        loads("n: 5\nK: 3\nsimulatons: 4\n", "cfg.yaml")


def test_type_errors():
    with pytest.raises(ConfigError, match=r"<config>:2: K must be of type int"):
        loads("n: 5\nK: three\n")
    with pytest.raises(ConfigError, match="of type int, got bool"):
        loads("seed: true\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        loads("n: [1, 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        loads("- 1\n- 2\n")


def test_value_errors_name_field_and_line():
    with pytest.raises(ConfigError, match=r"<config>:2: K: need at least 2"):
        loads("n: 4\nK: 1\n")
    with pytest.raises(ConfigError, match="mechanisms: unknown mechanism 'sinkhorn'"):
        loads("mechanisms: [forward_kl, sinkhorn]\n")
    with pytest.raises(ConfigError, match="missing: unknown keys"):
        loads("missing: {kind: mcar, q: 0.5}\n")
    with pytest.raises(ConfigError, match="omega"):
        loads("source: csv\ncsv_path: x.csv\nomega: truth\n")
    with pytest.raises(ConfigError, match="bias_set"):
        loads("bias_set: {kind: sphere}\n")
    with pytest.raises(ConfigError, match="prior"):
        loads("prior: {kind: gaussian, mean: [0, 0]}\n")


def test_derived_objects():
    c = loads(
        "n: 2\nsplits: [20, 10, 5]\nK: 3\n"
        "prior: {kind: gaussian, mean: [0, 0], cov: [[1, 0], [0, 1]]}\n"
        "bias_set: {kind: box, radius: 2}\n"
        "missing: {kind: block, fraction: 0.5}\n"
    )
    assert np.array_equal(c.gaussian_prior().cov, np.eye(2))
    assert isinstance(c.bias(2), Polyhedron)
    assert c.missing_mechanism().fraction == 0.5
    csv = loads("source: csv\ncsv_path: x.csv\nomega: sample\n")
    assert csv.annualization_factor() == 252.0


def test_roundtrip_and_digest(tmp_path):
    c = ExperimentConfig(simulations=7, mechanisms=("wasserstein",))
    p = tmp_path / "c.yaml"
    p.write_text(c.to_yaml())
    back = load(p)
    assert back == c and back.digest() == c.digest()
    assert c.replace(output_dir="/elsewhere").digest() == c.digest()
    assert c.replace(seed=1).digest() != c.digest()
    with pytest.raises(ConfigError, match="cannot read"):
        load(tmp_path / "missing.yaml")


def test_shipped_configs_load():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.yaml"))
    assert files
    for f in files:
        load(f)
