"""Run configuration: a flat, sectioned key = value text format.

Sections are ``[model]``, ``[data]``, ``[train]`` and ``[ablation]``. Values
are integers, floats, booleans (true/false), bare strings, or comma-separated
lists.  Unknown sections or keys are rejected with the offending line number.
``model.variant`` may name a preset (nano / tiny / base) whose defaults are
applied before explicit keys override them.  ``write_config`` emits a
canonical form that re-parses to an equal RunConfig.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError
from .losses import LossConfig
from .network import NetworkConfig
from .training import TrainConfig

_MODEL_KEYS = ("variant", "embed_dims", "heads", "depths", "neighborhood",
               "patch_size", "num_classes", "deep_supervision", "attention",
               "posenc", "embedding", "window", "bottleneck_depth")
_DATA_KEYS = ("image_size", "num_classes", "train_count", "test_count", "seed")
_TRAIN_KEYS = ("lr", "steps", "batch", "lambda", "weight_decay", "seed")
_ABLATION_KEYS = ("attention", "posenc", "embedding")

_PRESETS = {
    "nano": dict(embed_dims=(16, 32, 64, 128), heads=(1, 2, 4, 8)),
    "tiny": dict(embed_dims=(64, 128, 256, 512), heads=(2, 4, 8, 16)),
    "base": dict(embed_dims=(128, 256, 512, 1024), heads=(4, 8, 16, 32)),
}


@dataclass(frozen=True)
class DataConfig:
    image_size: int = 64
    num_classes: int = 3
    train_count: int = 200
    test_count: int = 50
    seed: int = 1


@dataclass(frozen=True)
class AblationConfig:
    attention: tuple[str, ...] = ("nmsa+dmsa", "wmsa+wmsa")
    posenc: tuple[str, ...] = ("msdepe", "none")
    embedding: tuple[str, ...] = ("deformable", "rigid")


@dataclass(frozen=True)
class RunConfig:
    model: NetworkConfig = field(default_factory=NetworkConfig.nano)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self):
        if self.model.num_classes != self.data.num_classes:
            raise ConfigError(
                f"model.num_classes={self.model.num_classes} disagrees with "
                f"data.num_classes={self.data.num_classes}")

    def loss_config(self) -> LossConfig:
        return LossConfig(self.train.lam)


def _parse_value(raw: str):
    raw = raw.strip()
    if "," in raw:
        return tuple(_parse_value(part) for part in raw.split(","))
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def _read_sections(text: str) -> dict[str, dict[str, object]]:
    sections: dict[str, dict[str, object]] = {}
    current: str | None = None
    known = {"model": _MODEL_KEYS, "data": _DATA_KEYS,
             "train": _TRAIN_KEYS, "ablation": _ABLATION_KEYS}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in known:
                raise ConfigError(f"line {lineno}: unknown section [{current}]")
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known[current]:
            raise ConfigError(f"line {lineno}: unknown key '{key}' in section [{current}]")
        if key in sections[current]:
            raise ConfigError(f"line {lineno}: duplicate key '{key}' in section [{current}]")
        sections[current][key] = _parse_value(value)
    return sections


def parse_config(text: str) -> RunConfig:
    sections = _read_sections(text)
    model_raw = dict(sections.get("model", {}))
    variant = model_raw.get("variant", "nano")
    model_kwargs = dict(_PRESETS.get(variant, {}))
    model_kwargs["variant"] = variant
    data_raw = dict(sections.get("data", {}))
    model_kwargs["num_classes"] = data_raw.get("num_classes", DataConfig.num_classes)
    for key, value in model_raw.items():
        if key == "variant":
            continue
        model_kwargs[key] = value
    try:
        model = NetworkConfig(**model_kwargs)
    except TypeError as e:
        raise ConfigError(f"invalid model section: {e}") from e
    data = DataConfig(**data_raw)
    train_raw = dict(sections.get("train", {}))
    if "lambda" in train_raw:
        train_raw["lam"] = train_raw.pop("lambda")
    train = TrainConfig(**train_raw)
    LossConfig(train.lam)  # validate the range eagerly
    ablation_raw = {k: (v if isinstance(v, tuple) else (v,))
                    for k, v in sections.get("ablation", {}).items()}
    ablation = AblationConfig(**ablation_raw)
    return RunConfig(model=model, data=data, train=train, ablation=ablation)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def write_config(cfg: RunConfig) -> str:
    m, d, t, a = cfg.model, cfg.data, cfg.train, cfg.ablation
    lines = ["[model]"]
    for key in _MODEL_KEYS:
        attr = {"lambda": "lam"}.get(key, key)
        lines.append(f"{key} = {_fmt(getattr(m, attr))}")
    lines.append("")
    lines.append("[data]")
    for key in _DATA_KEYS:
        lines.append(f"{key} = {_fmt(getattr(d, key))}")
    lines.append("")
    lines.append("[train]")
    for key in _TRAIN_KEYS:
        attr = "lam" if key == "lambda" else key
        lines.append(f"{key} = {_fmt(getattr(t, attr))}")
    lines.append("")
    lines.append("[ablation]")
    for key in _ABLATION_KEYS:
        lines.append(f"{key} = {_fmt(getattr(a, key))}")
    return "\n".join(lines) + "\n"
