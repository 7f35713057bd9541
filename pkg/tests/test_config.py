from pathlib import Path

import pytest

import lsembed
from lsembed.config import DataSection, EvalSection, RunConfig, config_from_dict, get_config
from lsembed.utils.errors import ConfigError

CONFIG_DIR = Path(lsembed.__file__).parent / "configs"


def _write(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestGetConfig:
    @pytest.mark.parametrize("name", ["hierarchy.yaml", "hierarchy3.yaml", "attributes.yaml", "gradcheck.yaml"])
    def test_shipped_configs_load(self, name):
        config = get_config(CONFIG_DIR / name)
        assert isinstance(config, RunConfig)

    def test_shipped_hierarchy_values(self):
        config = get_config(CONFIG_DIR / "hierarchy3.yaml")
        assert config.data.hierarchy.branching == (3, 2, 5)
        assert config.eval.predicates == ("fine@19", "level2@99", "level1@199")

    def test_yaml_values(self, tmp_path):
        path = _write(tmp_path, "seed: 4\ntrain:\n  learning_rate: '0.01'\n  epochs: 3\nnet:\n  hidden_dims: [8, 4]\n")
        config = get_config(path)
        assert config.seed == 4
        assert config.train.learning_rate == 0.01
        assert config.train.epochs == 3
        assert config.net.hidden_dims == (8, 4)

    def test_json_document(self, tmp_path):
        path = _write(tmp_path, '{"seed": 2, "sampler": {"mode": "semi-hard"}}', "run.json")
        assert get_config(path).sampler.mode == "semi-hard"

    def test_unknown_key_has_location(self, tmp_path):
        path = _write(tmp_path, "seed: 1\ntrain:\n  lr: 0.1\n")
        with pytest.raises(ConfigError) as info:
            get_config(path)
        assert (info.value.line, info.value.column) == (3, 3)
        assert "train.lr" in str(info.value)

    def test_invalid_section_points_at_section(self, tmp_path):
        path = _write(tmp_path, "seed: 1\n\ntrain:\n  lambda_s: 2\n")
        with pytest.raises(ConfigError) as info:
            get_config(path)
        assert info.value.line == 3

    def test_yaml_syntax_error(self, tmp_path):
        path = _write(tmp_path, "train:\n  epochs: [1, 2\n")
        with pytest.raises(ConfigError) as info:
            get_config(path)
        assert info.value.line is not None
        assert str(path) in str(info.value)

    def test_json_syntax_error(self, tmp_path):
        path = _write(tmp_path, '{\n  "seed": 1,\n}\n', "run.json")
        with pytest.raises(ConfigError) as info:
            get_config(path)
        assert (info.value.line, info.value.column) == (3, 1)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            get_config(tmp_path / "absent.yaml")


class TestConfigFromDict:
    @pytest.mark.parametrize(
        "document",
        [
            {"train": {"seed": 3}},
            {"train": {"epochs": "many"}},
            {"train": {"epochs": 2.5}},
            {"eval": {"probe": "yes"}},
            {"net": {"hidden_dims": 16}},
            {"data": {"kind": "images"}},
            {"data": {"hierarchy": {"branching": [2, 0]}}},
            {"eval": {"gallery": "all"}},
            {"train": []},
        ],
    )
    def test_rejected(self, document):
        with pytest.raises(ConfigError):
            config_from_dict(document)

    def test_empty_document_is_default(self):
        assert config_from_dict(None) == RunConfig()


class TestRunConfig:
    def test_derived_seeds(self):
        config = RunConfig(seed=5)
        seeds = config.seeds()
        assert seeds == RunConfig(seed=5).seeds()
        assert len(set(seeds.values())) == 3
        assert seeds != RunConfig(seed=6).seeds()
        assert config.train_config().seed == seeds["init"]
        assert config.sampler_config().seed == seeds["sampler"]
        assert config.data_section().hierarchy.seed == seeds["data"]

    def test_overrides(self):
        config = RunConfig().with_overrides(output_dir="elsewhere", seed=9)
        assert (config.output_dir, config.seed) == ("elsewhere", 9)
        assert RunConfig().with_overrides() == RunConfig()

    def test_to_dict(self):
        resolved = RunConfig(seed=1).to_dict()
        assert resolved["derived_seeds"] == RunConfig(seed=1).seeds()
        assert resolved["train"]["lambda_s"] == 0.8

    def test_default_predicates(self, hier_dataset, attr_dataset):
        assert EvalSection().resolve_predicates(hier_dataset) == ("fine", "level1")
        assert EvalSection().resolve_predicates(attr_dataset) == ("fine", "attribute")
        assert EvalSection(predicates=("fine@3",)).resolve_predicates(hier_dataset) == ("fine@3",)

    def test_data_section_kind(self):
        with pytest.raises(ConfigError):
            DataSection(kind="images")
