import numpy as np
import pytest

from radial_ids.config import DEFAULTS, apply_override, load_config, parse_config
from radial_ids.errors import ConfigError


def test_minimal_document_gets_defaults():
    cfg = parse_config("mode: spherical\nr0: 2.0\n")
    assert cfg.r0 == 2.0 and cfg.n == 3 and cfg.r_max == DEFAULTS["r_max"]
    assert cfg.grid["radial_nodes"] == 400
    assert cfg.tolerances["rtol"] == 1e-9
    assert cfg.f_choices == ["zero", {"eps_full": 0.0}, "angular_ratio"]


def test_empty_document():
    assert parse_config("").mode == "spherical"


@pytest.mark.parametrize("text,key", [
    ("matter: {decay_b: 1.2}", "matter.decay_b"),
    ("matter: {decay_c: 2.4}", "matter.decay_c"),
    ("lapse_mode: fast", "lapse_mode"),
    ("grid: {n_rows: 4}", "grid.n_rows"),
    ("Lambda: 1.0", "Lambda"),
    ("r0: 5\nr_max: 4", "r_max"),
    ("n: 2", "n"),
    ("r0: -1", "r0"),
    ("r0: .nan", "r0"),
    ("mode: sideways", "mode"),
    ("boundary: prescribed", "boundary_value"),
    ("grid: {radial_nodes: 4}", "grid.radial_nodes"),
    ("family: {kind: exp_perturbed}", "family.generator"),
    ("family: {kind: exp_perturbed, generator: [[1, 2, 0], [0, 1, 0], [0, 0, 1]]}", "family.generator"),
    ("matter: {A_j: {q: 1.0}}", "matter.A_j"),
    ("matter: {A_mu: true}", "matter.A_mu"),
    ("oracle: {enabled: 1}", "oracle.enabled"),
    ("oracle: {r_window: [3, 2]}", "oracle.r_window"),
])
def test_rejections_name_the_key(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key


def test_decay_threshold_follows_dimension():
    assert parse_config("n: 3\nmatter: {decay_b: 1.6}").matter["decay_b"] == 1.6
    with pytest.raises(ConfigError):
        parse_config("n: 4\nmatter: {decay_b: 1.6, decay_c: 3.5}")


def test_malformed_yaml():
    with pytest.raises(ConfigError):
        parse_config("mode: [unclosed")
    with pytest.raises(ConfigError):
        parse_config("- a\n- b\n")


def test_overrides_apply_before_validation():
    cfg = parse_config("r0: 2.0", overrides=["r_max=50", "matter.A_j={'1': 0.1, z: 0.02}",
                                              "grid.n_theta=8"])
    assert cfg.r_max == 50.0 and cfg.grid["n_theta"] == 8
    assert cfg.matter["A_j"] == {"1": 0.1, "z": 0.02}
    with pytest.raises(ConfigError):
        parse_config("", overrides=["r_max"])
    doc = {"r0": 1.0}
    apply_override(doc, "oracle.stride=3")
    assert doc["oracle"] == {"stride": 3}


def test_f_choices_validation():
    cfg = parse_config("f_choices: [eps_full, {eps_full: 0.5}]")
    assert cfg.f_choices == [{"eps_full": 0.0}, {"eps_full": 0.5}]
    for bad in ("[]", "[cubic]", "[{eps_full: 2.0}]", "[{eps_full: 0.1, extra: 1}]"):
        with pytest.raises(ConfigError) as info:
            parse_config(f"f_choices: {bad}")
        assert info.value.key == "f_choices"


def test_generator_file_resolved_against_config_dir(tmp_path):
    np.savetxt(tmp_path / "gen.txt", np.zeros((4, 3)))
    path = tmp_path / "run.yaml"
    path.write_text("family: {kind: exp_perturbed, generator_file: gen.txt}\n")
    cfg = load_config(path)
    assert cfg.base_dir == tmp_path
    path.write_text("family: {kind: exp_perturbed, generator_file: missing.txt}\n")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.key == "family.generator_file"


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


def test_solver_kind_and_f_tuples():
    cfg = parse_config("solver: umbilic\nf_choices: [zero, {eps_full: 0.25}]")
    # the solver key only matters for diagnose_only, otherwise the mode picks it
    assert cfg.solver_kind == "spherical"
    assert parse_config("mode: diagnose_only\nsolver: umbilic").solver_kind == "umbilic"
    assert parse_config("mode: umbilic").solver_kind == "umbilic"
    assert cfg.f_choice_tuples() == ["zero", ("eps_full", 0.25)]
