"""Line-based `key = value` run configuration with sections.

Format: INI-style sections [train], [data], [ablation]; `#` starts a comment;
blank lines ignored. Unknown keys warn instead of failing so configs stay
forward-compatible; values that do not parse under the key's declared type
are rejected with their line number. Command-line flags override file values.
"""

import warnings
from dataclasses import dataclass, field, fields, replace

from .train import TrainConfig


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data_dir: str = "data"
    out_dir: str = "out"
    image_size: int = 32
    source_count: int = 60
    target_count: int = 20
    seeds: tuple = (1, 2, 3)
    pretrain_epochs: int = 0      # 0 means "same as epochs"
    fm: bool = True
    mixup: bool = True
    csdm: bool = True

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("need at least one seed")

    def resolved_pretrain_epochs(self) -> int:
        return self.pretrain_epochs or self.train.epochs


_PARSERS = {int: int, "int": int, float: float, "float": float,
            str: str, "str": str, bool: _parse_bool, "bool": _parse_bool}

_SCHEMA = {("train", f.name): _PARSERS[f.type] for f in fields(TrainConfig)}
_SCHEMA.update({
    ("data", "dir"): str,
    ("data", "out"): str,
    ("data", "image_size"): int,
    ("data", "source_count"): int,
    ("data", "target_count"): int,
    ("ablation", "seeds"): _parse_int_list,
    ("ablation", "pretrain_epochs"): int,
    ("ablation", "fm"): _parse_bool,
    ("ablation", "mixup"): _parse_bool,
    ("ablation", "csdm"): _parse_bool,
})

_DATA_KEYMAP = {"dir": "data_dir", "out": "out_dir"}


def load_config(path: str) -> RunConfig:
    """Parse a config file into a RunConfig; missing file keys keep defaults."""
    values = {}
    section = ""
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip().lower()
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            spot = (section, key)
            if spot not in _SCHEMA:
                warnings.warn(f"{path}:{lineno}: unknown config key [{section}] {key}",
                              stacklevel=2)
                continue
            try:
                values[spot] = _SCHEMA[spot](value)
            except ValueError as err:
                raise ValueError(f"{path}:{lineno}: bad value for [{section}] {key}: "
                                 f"{err}") from None
    train_kwargs = {key: v for (sec, key), v in values.items() if sec == "train"}
    run_kwargs = {}
    for (sec, key), v in values.items():
        if sec == "data":
            run_kwargs[_DATA_KEYMAP.get(key, key)] = v
        elif sec == "ablation":
            run_kwargs[key] = v
    return RunConfig(train=TrainConfig(**train_kwargs), **run_kwargs)


def override_train(cfg: RunConfig, **kwargs) -> RunConfig:
    """New RunConfig with non-None train-field overrides applied."""
    updates = {k: v for k, v in kwargs.items() if v is not None}
    return replace(cfg, train=replace(cfg.train, **updates)) if updates else cfg
