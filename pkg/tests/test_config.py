import pytest

from chipprint.config import (
    PipelineConfig,
    apply_overrides,
    config_from_dict,
    config_snapshot,
    load_config,
)
from chipprint.errors import ParameterError


def test_defaults_load_and_validate():
    cfg = load_config(None)
    cfg.validate()
    assert cfg.render.dims == (512, 512)
    assert cfg.specular.n_points == 100
    assert cfg.specular.sample_count == 10
    assert cfg.specular.tau == 0.25
    assert cfg.mask.edge_margin_px == 12


def test_defaults_build_owned_types():
    cfg = PipelineConfig()
    params = cfg.render.reflection_params()
    traj = cfg.render.trajectory()
    assert params.w_d + params.w_s == pytest.approx(1.0)
    assert traj.polar_start_deg > traj.polar_end_deg


def test_toml_file_round_trip(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text(
        "[render]\nn_frames = 40\nnoise_sigma = 0.002\ndims = [256, 256]\n"
        "[specular]\ntau = 0.3\nn_points = 64\n"
        "[paths]\nout_dir = \"results\"\n"
    )
    cfg = load_config(p)
    assert cfg.render.n_frames == 40
    assert cfg.render.noise_sigma == 0.002
    assert cfg.render.dims == (256, 256)
    assert cfg.specular.tau == 0.3
    assert cfg.specular.n_points == 64
    assert cfg.paths.out_dir == "results"
    # untouched sections keep their defaults
    assert cfg.registration.refine is True


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ParameterError):
        load_config(tmp_path / "nope.toml")


def test_load_config_bad_toml(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[render\nn_frames = 40\n")
    with pytest.raises(ParameterError):
        load_config(p)


def test_unknown_section_rejected():
    with pytest.raises(ParameterError, match="unknown config section"):
        config_from_dict({"renders": {"n_frames": 10}})


def test_unknown_key_rejected():
    with pytest.raises(ParameterError, match=r"unknown key\(s\) in \[render\]"):
        config_from_dict({"render": {"frames": 10}})


def test_section_must_be_table():
    with pytest.raises(ParameterError):
        config_from_dict({"render": 3})


def test_int_promotes_to_float_but_not_reverse():
    cfg = config_from_dict({"render": {"noise_sigma": 0}})
    assert cfg.render.noise_sigma == 0.0
    with pytest.raises(ParameterError):
        config_from_dict({"render": {"n_frames": 12.5}})


def test_bool_is_not_an_int():
    with pytest.raises(ParameterError):
        config_from_dict({"specular": {"n_points": True}})
    cfg = config_from_dict({"render": {"markings": False}})
    assert cfg.render.markings is False
    with pytest.raises(ParameterError):
        config_from_dict({"render": {"markings": 1}})


def test_field_validation_still_applies():
    with pytest.raises(ParameterError):
        config_from_dict({"specular": {"tau": 1.5}})
    with pytest.raises(ParameterError):
        config_from_dict({"render": {"n_frames": 0}})


def test_validate_sample_count_vs_frames():
    with pytest.raises(ParameterError):
        config_from_dict({"render": {"n_frames": 5}, "specular": {"sample_count": 10}})


def test_apply_overrides():
    cfg = PipelineConfig()
    out = apply_overrides(cfg, {"specular.n_points": 50, "render.noise_sigma": 0.01})
    assert out.specular.n_points == 50
    assert out.render.noise_sigma == 0.01
    assert cfg.specular.n_points == 100  # original untouched


def test_apply_overrides_rejects_unknown():
    cfg = PipelineConfig()
    with pytest.raises(ParameterError):
        apply_overrides(cfg, {"specular.npoints": 50})
    with pytest.raises(ParameterError):
        apply_overrides(cfg, {"n_points": 50})


def test_snapshot_round_trips():
    cfg = config_from_dict({"render": {"dims": [128, 96], "n_frames": 12}})
    snap = config_snapshot(cfg)
    assert snap["render"]["dims"] == [128, 96]
    assert isinstance(snap["render"]["dims"], list)
    again = config_from_dict(snap)
    assert again == cfg
