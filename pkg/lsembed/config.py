"""Run configuration: one YAML (or JSON) document mapped onto dataclasses.

The top-level ``seed`` is the only seed in a config file. Data generation,
parameter initialization and tuplet sampling get sub-seeds derived from it.
"""
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from lsembed.dataloaders.datasets.synthetic import AttrGenConfig, HierGenConfig
from lsembed.dataloaders.samplers import SamplerConfig
from lsembed.exp_data import EMBED_DIM
from lsembed.modeling.mlp import NetConfig
from lsembed.trainer import TrainConfig
from lsembed.utils.errors import ConfigError, LSEmbedError
from lsembed.utils.gradcheck import GradcheckConfig

logger = logging.getLogger(__name__)

# seeds are derived from RunConfig.seed, never read from a section
_DERIVED = {"seed"}


@dataclass(frozen=True)
class NetSection:
    embed_dim: int = EMBED_DIM
    hidden_dims: tuple = (128,)
    activation: str = "relu"

    def net_config(self, input_dim, num_classes):
        return NetConfig(input_dim, self.embed_dim, num_classes, self.hidden_dims, self.activation)


@dataclass(frozen=True)
class DataSection:
    kind: str = "hierarchy"
    # a manifest directory; when set, the generator sections are ignored
    path: str = None
    hierarchy: HierGenConfig = field(default_factory=HierGenConfig)
    attributes: AttrGenConfig = field(default_factory=AttrGenConfig)

    def __post_init__(self):
        if self.kind not in ("hierarchy", "attributes"):
            raise ConfigError(f"data.kind must be 'hierarchy' or 'attributes', got '{self.kind}'")


@dataclass(frozen=True)
class EvalSection:
    # empty means fine, every coarser level and, with attributes, the attribute predicate
    predicates: tuple = ()
    gallery: str = "test"
    probe: bool = False
    per_query: bool = False
    plots: bool = True

    def __post_init__(self):
        if self.gallery not in ("test", "train"):
            raise ConfigError(f"eval.gallery must be 'test' or 'train', got '{self.gallery}'")

    def resolve_predicates(self, dataset):
        if self.predicates:
            return self.predicates
        specs = ["fine"] + [f"level{level}" for level in range(1, dataset.num_levels)]
        if dataset.attributes is not None:
            specs.append("attribute")
        return tuple(specs)


@dataclass(frozen=True)
class RunConfig:
    output_dir: str = "run"
    seed: int = 0
    net: NetSection = field(default_factory=NetSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    data: DataSection = field(default_factory=DataSection)
    eval: EvalSection = field(default_factory=EvalSection)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)

    def seeds(self):
        data, init, sampler = np.random.SeedSequence(self.seed).generate_state(3)
        return {"data": int(data), "init": int(init), "sampler": int(sampler)}

    def train_config(self):
        return dataclasses.replace(self.train, seed=self.seeds()["init"])

    def sampler_config(self):
        return dataclasses.replace(self.sampler, seed=self.seeds()["sampler"])

    def data_section(self):
        seed = self.seeds()["data"]
        return dataclasses.replace(
            self.data,
            hierarchy=dataclasses.replace(self.data.hierarchy, seed=seed),
            attributes=dataclasses.replace(self.data.attributes, seed=seed),
        )

    def with_overrides(self, output_dir=None, seed=None):
        changes = {}
        if output_dir is not None:
            changes["output_dir"] = str(output_dir)
        if seed is not None:
            changes["seed"] = int(seed)
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        resolved = dataclasses.asdict(self)
        resolved["derived_seeds"] = self.seeds()
        return resolved


def _coerce(value, default, key):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{key}' must be true or false, got {value!r}")
        return value
    if isinstance(default, (int, float)):
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"'{key}' must be a number, got {value!r}")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{key}' must be a number, got {value!r}")
        if isinstance(default, int):
            if value != int(value):
                raise ConfigError(f"'{key}' must be an integer, got {value!r}")
            return int(value)
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"'{key}' must be a list, got {value!r}")
        return tuple(value)
    if isinstance(default, str) or default is None:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"'{key}' must be a string, got {value!r}")
        return value
    return value


def _build(cls, mapping, prefix=""):
    """Instantiate dataclass cls from a mapping, rejecting unknown keys."""
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"'{prefix or '<root>'}' must be a mapping")
    defaults = cls()
    known = {f.name: f for f in dataclasses.fields(cls) if not (prefix and f.name in _DERIVED)}
    kwargs = {}
    for key, value in mapping.items():
        dotted = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(f"unknown key '{dotted}'", key_path=dotted)
        default = getattr(defaults, key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, dotted + ".")
        else:
            try:
                kwargs[key] = _coerce(value, default, dotted)
            except ConfigError as e:
                raise ConfigError(str(e), key_path=dotted)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (LSEmbedError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid '{prefix.rstrip('.') or '<root>'}' section: {e}", key_path=prefix.rstrip("."))


def _yaml_mark(text, key_path):
    """(line, column) of a dotted key in a YAML document, 1-based, or None."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    mark = None
    for key in key_path.split("."):
        if not isinstance(node, yaml.MappingNode):
            break
        for key_node, value_node in node.value:
            if key_node.value == key:
                mark, node = key_node.start_mark, value_node
                break
        else:
            break
    if mark is None:
        return None
    return mark.line + 1, mark.column + 1


def parse_document(text, filename="<config>"):
    """Parse YAML or JSON text into a plain mapping."""
    if str(filename).endswith(".json"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(e.msg, filename, e.lineno, e.colno)
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        problem = getattr(e, "problem", None) or str(e)
        if mark is None:
            raise ConfigError(problem, filename)
        raise ConfigError(problem, filename, mark.line + 1, mark.column + 1)


def config_from_dict(document, filename=None, text=None):
    try:
        return _build(RunConfig, document)
    except ConfigError as e:
        line = column = None
        if text is not None and e.key_path and not str(filename).endswith(".json"):
            mark = _yaml_mark(text, e.key_path)
            if mark is not None:
                line, column = mark
        raise ConfigError(e.message, filename, line, column)


def get_config(filename):
    """Load and validate a run config file."""
    filename = Path(filename)
    try:
        text = filename.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", str(filename))
    document = parse_document(text, str(filename))
    config = config_from_dict(document, str(filename), text)
    logger.info("loaded config %s (seed %d)", filename, config.seed)
    return config
