"""
DistilVAD - Run configuration

One JSON document configures a whole run. Each top-level section maps onto a
dataclass; values in the file overlay the dataclass defaults and any key
outside the schema is rejected with its dotted path.

    {
      "model":    {...ModelConfig},
      "train":    {...TrainConfig},
      "scene":    {...SceneConfig},
      "teachers": [{...TeacherSpec}, ...],
      "paths":    {"run_dir": "runs/default", "data_dir": ""},
      "eval":     {"scorer": "student", "batch_size": 64},
      "bench":    {...BenchConfig},
      "ablation": {"axes": [...]}
    }
"""
import copy
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field

from distilvad.exceptions import ConfigError, UnknownAxisError
from distilvad.models import ModelConfig
from distilvad.synthvid import SceneConfig
from distilvad.teachers import TeacherSpec
from distilvad.training import TrainConfig

# Configure logger
logger = logging.getLogger(__name__)

ABLATION_AXES = ("losses", "teachers", "alpha", "heads", "frames", "ffn", "blocks", "attn_heads")


@dataclass
class PathsConfig:
    """
    Attributes:
        run_dir (str): every artifact of the run is written here
        data_dir (str): dataset root, ``<run_dir>/data`` when empty
    """

    run_dir: str = os.path.join("runs", "default")
    data_dir: str = ""

    @property
    def data(self):
        return self.data_dir or os.path.join(self.run_dir, "data")

    def artifact(self, name):
        return os.path.join(self.run_dir, name)

    @property
    def encoder_checkpoint(self):
        return self.artifact("encoder.ckpt")

    @property
    def student_checkpoint(self):
        return self.artifact("student.ckpt")

    @property
    def loss_csv(self):
        return self.artifact("losses.csv")

    @property
    def report_csv(self):
        return self.artifact("eval_report.csv")

    @property
    def frame_scores_csv(self):
        return self.artifact("frame_scores.csv")

    @property
    def bench_csv(self):
        return self.artifact("bench.csv")

    @property
    def ablation_csv(self):
        return self.artifact("ablation.csv")


@dataclass
class EvalConfig:
    """
    Attributes:
        scorer (str): "student", "ae" or "teacher:<i>" (1-based)
        batch_size (int): sequences per forward pass
    """

    scorer: str = "student"
    batch_size: int = 64


@dataclass
class BenchConfig:
    """
    Attributes:
        warmup_frames (int): frames run before timing
        measured_frames (int): frames per timed repetition
        repetitions (int): timed repetitions; the median is reported
        batch_size (int): sequences per forward pass
        replicas (int): model replicas run by parallel workers
        variants (list): ModelConfig overrides, one benchmark row each
    """

    warmup_frames: int = 100
    measured_frames: int = 2000
    repetitions: int = 5
    batch_size: int = 1
    replicas: int = 1
    variants: list = field(default_factory=lambda: [
        {"ffn_kind": "pointwise"},
        {"ffn_kind": "dense"},
        {"blocks": 3}, {"blocks": 4}, {"blocks": 6}, {"blocks": 7},
    ])

    def validate(self):
        for name in ("measured_frames", "repetitions", "batch_size", "replicas"):
            if getattr(self, name) < 1:
                raise ConfigError(f"must be >= 1, got {getattr(self, name)}", key=f"bench.{name}")
        if self.warmup_frames < 0:
            raise ConfigError(f"must be >= 0, got {self.warmup_frames}", key="bench.warmup_frames")
        model_fields = {f.name for f in dataclasses.fields(ModelConfig)}
        for i, variant in enumerate(self.variants):
            unknown = set(variant) - model_fields
            if unknown:
                raise ConfigError("unknown model field", key=f"bench.variants[{i}].{sorted(unknown)[0]}")
        return self


@dataclass
class AblationConfig:
    axes: list = field(default_factory=lambda: ["losses", "teachers", "alpha"])

    def validate(self):
        for axis in self.axes:
            if axis not in ABLATION_AXES:
                raise UnknownAxisError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")
        return self


def _default_teachers():
    return [TeacherSpec(seed=1), TeacherSpec(seed=2)]


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    teachers: list = field(default_factory=_default_teachers)
    paths: PathsConfig = field(default_factory=PathsConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def validate(self):
        """
        Check every section and their cross-constraints.

        Raises:
            ConfigError: naming the offending key
        """
        self.model.validate()
        self.train.validate()
        self.scene.validate()
        self.bench.validate()
        if not self.teachers:
            raise ConfigError("at least one teacher is required", key="teachers")
        for i, spec in enumerate(self.teachers):
            spec.validate(key=f"teachers[{i}]")
        if len(self.train.teacher_weights) != len(self.teachers):
            raise ConfigError(f"{len(self.train.teacher_weights)} weights for {len(self.teachers)} teachers",
                              key="train.teacher_weights")
        if tuple(self.scene.resolution) != tuple(self.model.input_resolution):
            raise ConfigError(f"scene resolution {self.scene.resolution} differs from the model input "
                              f"{self.model.input_resolution}", key="scene.resolution")
        if self.model.frame_channels != 1:
            raise ConfigError("synthetic frames are grayscale", key="model.frame_channels")
        needed = (self.model.input_frames - 1) * self.train.stride + 1
        if needed > self.scene.clip_length:
            raise ConfigError(f"a sequence spans {needed} frames, clips have {self.scene.clip_length}",
                              key="train.stride")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def save(self, path):
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)


def _overlay(instance, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object, got {type(data).__name__}", key=path)
    names = {f.name: f for f in dataclasses.fields(instance)}
    for key, value in data.items():
        dotted = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError("unknown key", key=dotted)
        current = getattr(instance, key)
        if dataclasses.is_dataclass(current):
            _overlay(current, value, dotted)
        elif key == "teachers" and not path:
            if not isinstance(value, list):
                raise ConfigError("expected a list of teacher objects", key=dotted)
            specs = []
            for i, entry in enumerate(value):
                spec = TeacherSpec()
                _overlay(spec, entry, f"teachers[{i}]")
                specs.append(spec)
            setattr(instance, key, specs)
        else:
            setattr(instance, key, copy.deepcopy(value))
    if hasattr(instance, "__post_init__"):
        instance.__post_init__()
    return instance


def config_from_dict(data):
    """
    Build a RunConfig from a parsed JSON document.

    Raises:
        ConfigError: for unknown keys or invalid values
    """
    try:
        return _overlay(RunConfig(), data, "").validate()
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"invalid value: {e}") from e


def load_config(path=None, seed=None, out=None):
    """
    Load a run configuration file and apply command-line overrides.

    Args:
        path (str, optional): JSON file; defaults only when omitted
        seed (int, optional): overrides the training and scene seeds
        out (str, optional): overrides the run directory

    Returns:
        RunConfig: validated configuration
    """
    data = {}
    if path:
        try:
            with open(path) as f:
                data = json.load(f)
        except FileNotFoundError as e:
            logger.error(f"Config file not found: {path}")
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            logger.error(f"Config file {path} is not valid JSON: {e}")
            raise ConfigError(f"invalid JSON at line {e.lineno}: {e.msg}") from e
    cfg = config_from_dict(data)
    if seed is not None:
        cfg.train.seed = int(seed)
        cfg.scene.seed = int(seed)
    if out:
        cfg.paths.run_dir = out
    logger.debug(f"Loaded configuration from {path or 'defaults'}")
    return cfg
