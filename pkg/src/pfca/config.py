"""Run configuration files: ``[model]``, ``[train]`` and ``[data]`` sections of ``key = value`` lines."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .attention import AttentionKind
from .models import ModelSpec, spec_from_name
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    source: str = "synthetic"  # synthetic | cifar100 | folder | imagenet
    samples: int = 64
    eval_samples: int = 16
    image_size: int = 16
    hr_size: int = 64
    patch: int = 32
    augment: bool = True
    root: str = ""
    hr: str = ""
    lr: str = ""
    eval_hr: str = ""
    eval_lr: str = ""
    border: int = 4

    def __post_init__(self):
        if self.source not in ("synthetic", "cifar100", "folder", "imagenet"):
            raise ValueError(f"unknown data source {self.source!r}")


MODEL_KEYS = {
    "name": str,
    "attention": str,
    "reduction": int,
    "lambda": float,
    "width": int,
    "blocks": int,
    "stage_blocks": str,
    "classes": int,
    "stem": str,
    "bottleneck_stride": str,
    "upscale": int,
}


@dataclass
class RunConfig:
    model_name: str
    model: ModelSpec
    train: TrainConfig
    data: DataConfig
    raw_model: dict = field(default_factory=dict)

    def resolved(self) -> str:
        """Every effective setting, in the same file format."""
        lines = ["[model]"]
        lines += [f"{k} = {v}" for k, v in self.raw_model.items()]
        lines.append("")
        lines.append("[train]")
        for f in dataclasses.fields(TrainConfig):
            lines.append(f"{f.name} = {_fmt(getattr(self.train, f.name))}")
        lines.append("")
        lines.append("[data]")
        for f in dataclasses.fields(DataConfig):
            lines.append(f"{f.name} = {_fmt(getattr(self.data, f.name))}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(map(str, v))
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _convert(key: str, text: str, typ):
    text = text.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError
            return low in ("true", "yes", "1")
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        if typ == "optfloat":
            return None if text.lower() in ("", "none") else float(text)
        if typ == "ints":
            return tuple(int(t) for t in text.split(",") if t.strip())
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def _dataclass_types(cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        t = f.type if isinstance(f.type, str) else f.type.__name__
        if t.startswith("tuple"):
            out[f.name] = "ints"
        elif "None" in t and "float" in t:
            out[f.name] = "optfloat"
        else:
            out[f.name] = {"int": int, "float": float, "bool": bool, "str": str}[t]
    return out


def parse_config(text: str, seed: int | None = None) -> RunConfig:
    cp = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    unknown_sections = set(cp.sections()) - {"model", "train", "data"}
    if unknown_sections:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown_sections))}")
    if "model" not in cp:
        raise ConfigError("config needs a [model] section")

    raw_model = {}
    for key, value in cp["model"].items():
        if key not in MODEL_KEYS:
            raise ConfigError(f"unknown key [model] {key}")
        raw_model[key] = _convert(key, value, MODEL_KEYS[key])
    name = raw_model.get("name")
    if not name:
        raise ConfigError("[model] needs a name")

    spec_kw = {}
    mapping = {"width": "width", "blocks": "num_blocks", "classes": "num_classes", "stem": "stem",
               "bottleneck_stride": "bottleneck_stride", "upscale": "upscale"}
    for k, target in mapping.items():
        if k in raw_model:
            spec_kw[target] = raw_model[k]
    if "stage_blocks" in raw_model:
        spec_kw["stage_blocks"] = _convert("stage_blocks", raw_model["stage_blocks"], "ints")

    train_kw = _section(cp, "train", TrainConfig)
    data_kw = _section(cp, "data", DataConfig)
    if seed is not None:
        train_kw["seed"] = seed
    try:
        attention = AttentionKind(
            raw_model.get("attention", "none"), raw_model.get("reduction", 16), raw_model.get("lambda", 1e-4)
        )
        spec = spec_from_name(name, attention, **spec_kw)
        train = TrainConfig(**train_kw)
        data = DataConfig(**data_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(name, spec, train, data, raw_model)


def _section(cp, section: str, cls) -> dict:
    if section not in cp:
        return {}
    types = _dataclass_types(cls)
    out = {}
    for key, value in cp[section].items():
        if key not in types:
            raise ConfigError(f"unknown key [{section}] {key}")
        out[key] = _convert(key, value, types[key])
    return out


BUNDLED = ("desk_classify.cfg", "desk_sr.cfg", "imagenet_resnet18.cfg", "imagenet_resnet50.cfg",
           "imagenet_resnet101.cfg", "cifar100_resnet18.cfg", "div2k_msrresnet.cfg")


def read_config_text(path: str) -> str:
    """Read ``path``, falling back to a bundled config of that name."""
    p = Path(path)
    if p.exists():
        return p.read_text()
    if p.name in BUNDLED and p.parent == Path("."):
        return resources.files("pfca").joinpath("configs", p.name).read_text()
    raise ConfigError(f"config file {path} not found")


def load_config(path: str, seed: int | None = None) -> RunConfig:
    return parse_config(read_config_text(path), seed)
