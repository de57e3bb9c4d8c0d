# tests/helpers/test_config_loader.py
import pytest

from src.exceptions import ConfigError, ParseError
from src.helpers.config_loader import PROJECT_ROOT, load_config, load_manifest, save_manifest
from src.helpers.utils import list_clouds, worker_count
from src.core.gradcheck import reduced_encoder_config
from src.schemas.config_schemas import EncoderConfig, GediConfig
from src.schemas.dataset_schemas import DatasetManifest, PairEntry


def test_default_file_carries_indoor_defaults():
    config = load_config()
    assert config.sampling.radius == 0.5
    assert config.loss.anchors_per_pair == 350
    assert config.encoder == GediConfig().encoder
    assert config.fmr.tau1_sweep[-1] == pytest.approx(0.2)


def test_shipped_configs_validate():
    for path in (PROJECT_ROOT / "configs").glob("*.yaml"):
        load_config(path)


def test_shipped_configs_keep_the_bottleneck_width():
    for path in (PROJECT_ROOT / "configs").glob("*.yaml"):
        assert load_config(path).encoder.global_mlp[-1] == 1024, path.name


def test_narrow_bottleneck_is_rejected(tmp_path):
    path = tmp_path / "narrow.yaml"
    path.write_text("encoder:\n  global_mlp: [128, 256, 512]\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="1024"):
        load_config(path)


def test_reduced_encoder_is_exempt_from_bottleneck_width():
    config = reduced_encoder_config(seed=1)
    assert config.reduced_width and config.global_mlp[-1] == 512
    assert EncoderConfig(**config.model_dump()).global_mlp[-1] == 512
    with pytest.raises(ValueError):
        EncoderConfig(**{**config.model_dump(), "reduced_width": False})


def test_none_gives_defaults():
    assert load_config(None) == GediConfig()


def test_partial_file_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("ransac:\n  inlier_threshold: 0.3\nsampling:\n  radius: 1.2\n", encoding="utf-8")
    config = load_config(path)
    assert config.ransac.inlier_threshold == 0.3
    assert config.sampling.radius == 1.2
    assert config.loss.resolve_exclusion_radius(config.sampling.radius) == pytest.approx(0.24)


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("", encoding="utf-8")
    assert load_config(path) == GediConfig()


def test_invalid_values(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("sampling:\n  m: 100\n  n_train: 200\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text("- a list\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


def test_yaml_syntax_error_has_line(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("ransac:\n  seed: [1, 2\n", encoding="utf-8")
    with pytest.raises(ParseError) as err:
        load_config(path)
    assert err.value.line is not None


def test_manifest_round_trip(tmp_path):
    manifest = DatasetManifest(pairs=[PairEntry(name="p", cloud_a="a.ply", cloud_b="b.ply", pose="p.txt",
                                                overlap=0.5)], seed=3)
    save_manifest(manifest, tmp_path / "m.yaml")
    assert load_manifest(tmp_path / "m.yaml") == manifest


def test_list_clouds_is_case_insensitive(tmp_path):
    for name in ("a.PLY", "b.xyz", "c.txt", "d.json"):
        (tmp_path / name).write_text("", encoding="utf-8")
    assert [p.name for p in list_clouds(tmp_path)] == ["a.PLY", "b.xyz", "c.txt"]


def test_worker_count_from_env(monkeypatch):
    monkeypatch.setenv("GEDI_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("GEDI_THREADS", "many")
    with pytest.raises(ValueError):
        worker_count()
