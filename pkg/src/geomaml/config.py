"""Line-based experiment configuration.

One setting per line, ``section.key = value``, with ``#`` starting a comment::

    seed = 3
    generator.shift = 2.0
    dataset.split = clustered
    train.iterations = 300
    eval.shots = 0,1,2,5,10

Every key has a default (the dataclass field defaults below). Unknown
sections or keys are errors, never silently ignored. Values are coerced to the
type of the default: ``true``/``false`` for booleans and comma-separated
lists for tuples.
"""
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import SyntheticConfig
from .training import TrainConfig


class ConfigSyntaxError(ValueError):
    """A config line could not be parsed or names an unknown setting."""

    def __init__(self, source, line, message):
        super().__init__(f"{source}:{line}: {message}")
        self.line = line


@dataclass(frozen=True)
class DatasetConfig:
    """Where the tiles come from and how regions are split into meta-sets.

    ``source`` is ``synthetic`` (generated from the ``generator`` section) or
    ``files`` (an ``index.tsv`` at ``index``). ``split`` is ``random`` or
    ``clustered`` (k-means over per-region features).
    """

    source: str = "synthetic"
    index: str = ""
    split: str = "random"
    fractions: tuple = (0.6, 0.2, 0.2)
    num_clusters: int = 6
    support_fraction: float = 0.5


@dataclass(frozen=True)
class ModelConfig:
    """Architecture choice. Channels, classes and input size follow the data.

    ``depth = 0`` means ``log2(image_size)``, the depth at which the last CNN
    block reduces the tile to a single pixel.
    """

    architecture: str = "cnn"
    width: int = 16
    depth: int = 0
    batchnorm: bool = True
    levels: int = 2
    base_width: int = 8


@dataclass(frozen=True)
class EvalConfig:
    """Shot curve and fine-tuning grids.

    Non-MAML checkpoints search ``alphas x steps`` on meta-val for every shot;
    MAML checkpoints search ``maml_alphas x maml_steps``.
    """

    shots: tuple = tuple(range(11))
    tasks_per_point: int = 100
    query_per_class: int = 10
    grid_tasks: int = 20
    alphas: tuple = (0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5)
    steps: tuple = (1, 2, 5, 10, 25)
    maml_alphas: tuple = (0.1, 0.25, 0.4, 0.75, 1.0)
    maml_steps: tuple = (1, 2, 5, 10)
    ignore_classes: tuple = ()


@dataclass(frozen=True)
class AnalysisConfig:
    pca_tasks: int = 200
    pca_alpha: float = 0.75
    pca_shots: int = 1
    slice_points: int = 64
    slice_query_tasks: int = 4
    slice_shots: int = 1


@dataclass(frozen=True)
class PathsConfig:
    """File names are relative to the output directory unless absolute."""

    out: str = "run"
    dataset_dir: str = "dataset"
    maml_checkpoint: str = "maml.ckpt"
    pretrained_checkpoint: str = "pretrained.ckpt"
    random_checkpoint: str = "random.ckpt"


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    generator: SyntheticConfig = field(default_factory=lambda: SyntheticConfig(image_size=16))
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def with_seed(self, seed):
        return replace(self, seed=int(seed), train=replace(self.train, seed=int(seed)))

    def validate(self):
        if self.dataset.source not in ("synthetic", "files"):
            raise ValueError(f"dataset.source must be synthetic or files, got {self.dataset.source!r}")
        if self.dataset.source == "files" and not self.dataset.index:
            raise ValueError("dataset.source = files needs dataset.index")
        if self.dataset.split not in ("random", "clustered"):
            raise ValueError(f"dataset.split must be random or clustered, got {self.dataset.split!r}")
        if len(self.dataset.fractions) != 3:
            raise ValueError("dataset.fractions needs three values (train, val, test)")
        if self.model.architecture not in ("cnn", "unet"):
            raise ValueError(f"model.architecture must be cnn or unet, got {self.model.architecture!r}")
        if not self.eval.shots:
            raise ValueError("eval.shots must list at least one shot")
        self.generator.validate()
        self.train.validate()
        return self


SECTIONS = ("dataset", "generator", "model", "train", "eval", "analysis", "paths")


def _coerce(text, default, where):
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"{where}: expected true or false, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        kind = type(default[0]) if default else (int if all(_is_int(t) for t in items) else float)
        return tuple(kind(t) for t in items)
    return text


def _is_int(text):
    try:
        int(text)
    except ValueError:
        return False
    return True


def parse_config(text, source="<config>", base=None):
    """Parse config text on top of ``base`` (defaults when omitted)."""
    cfg = base or ExperimentConfig()
    updates = {s: {} for s in SECTIONS}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigSyntaxError(source, lineno, f"expected 'section.key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in seen:
            raise ConfigSyntaxError(source, lineno, f"{key} already set on line {seen[key]}")
        seen[key] = lineno
        if key == "seed":
            try:
                cfg = replace(cfg, seed=int(value))
            except ValueError as exc:
                raise ConfigSyntaxError(source, lineno, str(exc)) from None
            continue
        section, _, name = key.partition(".")
        if section not in SECTIONS:
            raise ConfigSyntaxError(source, lineno, f"unknown section {section!r} in {key!r}")
        current = getattr(cfg, section)
        known = {f.name: f for f in fields(current)}
        if name not in known:
            raise ConfigSyntaxError(source, lineno, f"unknown key {key!r}; known: "
                                    + ", ".join(f"{section}.{k}" for k in known))
        try:
            updates[section][name] = _coerce(value, getattr(current, name), key)
        except ValueError as exc:
            raise ConfigSyntaxError(source, lineno, f"bad value for {key}: {exc}") from None
    for section, vals in updates.items():
        if vals:
            cfg = replace(cfg, **{section: replace(getattr(cfg, section), **vals)})
    # the train seed always follows the global seed
    return cfg.with_seed(cfg.seed)


def load_config(path):
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))


def dump_config(cfg):
    """Render every setting, so ``parse_config(dump_config(c)) == c``."""
    lines = [f"seed = {cfg.seed}"]
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{section}.{f.name} = {v}")
    return "\n".join(lines) + "\n"
