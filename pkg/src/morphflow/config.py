"""Run configuration: a small TOML-style text format, defaults, validation.

The format is intentionally tiny so it parses the same way it is emitted:
``[section]`` headers and ``key = value`` lines where a value is a quoted
string, true/false, an integer, a float, or a flat list of numbers.
``parse_config_text(emit_config_text(cfg))`` reproduces the config
exactly, which is what the config-echo round trip relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _parse_scalar(token: str, where: str):
    token = token.strip()
    if token.startswith('"') and token.endswith('"') and len(token) >= 2:
        return token[1:-1]
    if token == "true":
        return True
    if token == "false":
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse value {token!r}") from None


def _strip_comment(line: str) -> str:
    out = []
    quoted = False
    for ch in line:
        if ch == '"':
            quoted = not quoted
        if ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out)


def parse_config_text(text: str) -> dict:
    """Parse the config text into {section: {key: value}}; '' is top level."""
    sections: dict = {"": {}}
    cur = sections[""]
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        where = f"line {lineno}"
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"{where}: empty section name")
            cur = sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {line!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        val = val.strip()
        if val.startswith("[") and val.endswith("]"):
            inner = val[1:-1].strip()
            items = [t for t in (s.strip() for s in inner.split(",")) if t]
            cur[key] = [_parse_scalar(t, where) for t in items]
        else:
            cur[key] = _parse_scalar(val, where)
    return sections


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic_shapes"
    path: str = ""
    image_side: int = 28
    count: int = 1000
    holdout_count: int = 256
    rotate: bool = False
    rotate_min_deg: float = 0.0
    rotate_max_deg: float = 360.0


@dataclass(frozen=True)
class ModelConfig:
    block: str = "cde"
    base_channels: int = 32
    channel_mults: tuple = (1, 2)
    middle_blocks: int = 2
    attention: bool = True
    attn_heads: int = 1
    image_channels: int = 1
    k: float = 2.0
    window_radius: int = 3
    distance_mode: str = "hyperbolic_embedded"
    metric_scale: float = 1.0
    norm_groups: int = 1
    stem_kernel: int = 3
    time_dim: int = 0
    padding: str = "periodic"


@dataclass(frozen=True)
class DiffusionConfig:
    steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    ema_decay: float = 0.995
    ema_every: int = 10
    batch_size: int = 32
    iterations: int = 2000


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs/out"
    sample_every: int = 500
    sample_count: int = 16
    grid_cols: int = 4
    mmd_iters: tuple = ()
    mmd_count: int = 256
    checkpoint_every: int = 0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


_SECTION_TYPES = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "diffusion": DiffusionConfig,
    "optimizer": OptimConfig,
    "output": OutputConfig,
}


def _coerce_field(section: str, f, value):
    key = f"{section}.{f.name}" if section else f.name
    want = f.type
    if want == "tuple" or isinstance(f.default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list")
        return tuple(value)
    if isinstance(f.default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false")
        return value
    if isinstance(f.default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer")
        return value
    if isinstance(f.default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number")
        return float(value)
    if isinstance(f.default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a quoted string")
        return value
    raise ConfigError(f"{key}: unsupported field type")


def _build_section(name: str, cls, raw: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"[{name}]: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        kwargs[key] = _coerce_field(name, known[key], value)
    return cls(**kwargs)


def config_from_sections(sections: dict) -> RunConfig:
    top = dict(sections.get("", {}))
    seed = top.pop("seed", 0)
    if top:
        raise ConfigError(f"unknown top-level key(s) {', '.join(sorted(top))}")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed: expected a nonnegative integer")
    unknown = sorted(set(sections) - set(_SECTION_TYPES) - {""})
    if unknown:
        raise ConfigError(f"unknown section(s) {', '.join(unknown)}")
    parts = {name: _build_section(name, cls, sections.get(name, {}))
             for name, cls in _SECTION_TYPES.items()}
    cfg = RunConfig(seed=seed, **parts)
    validate_config(cfg)
    return cfg


def parse_config(text: str) -> RunConfig:
    return config_from_sections(parse_config_text(text))


def emit_config_text(cfg: RunConfig) -> str:
    """Canonical text form; parsing it reproduces the config exactly."""
    lines = [f"seed = {cfg.seed}", ""]
    for name in _SECTION_TYPES:
        sec = getattr(cfg, name if name != "optimizer" else "optimizer")
        lines.append(f"[{name}]")
        for f in fields(sec):
            lines.append(f"{f.name} = {_format_value(getattr(sec, f.name))}")
        lines.append("")
    return "\n".join(lines)


def validate_config(cfg: RunConfig):
    ds, md, df, op, out = cfg.dataset, cfg.model, cfg.diffusion, cfg.optimizer, cfg.output
    if ds.source not in ("synthetic_shapes", "idx_file", "gaussian_toy"):
        raise ConfigError("dataset.source: must be synthetic_shapes, idx_file, or gaussian_toy")
    if ds.source == "idx_file" and not ds.path:
        raise ConfigError("dataset.path: required when dataset.source is idx_file")
    if ds.image_side < 8:
        raise ConfigError("dataset.image_side: must be >= 8")
    if ds.count < 0 or ds.holdout_count < 0:
        raise ConfigError("dataset.count / dataset.holdout_count: must be >= 0")
    if md.block not in ("cde", "resnet"):
        raise ConfigError("model.block: must be cde or resnet")
    if md.base_channels < 1:
        raise ConfigError("model.base_channels: must be >= 1")
    if any((not isinstance(m, int)) or m < 1 for m in md.channel_mults):
        raise ConfigError("model.channel_mults: must be positive integers")
    if ds.image_side % (1 << len(md.channel_mults)):
        raise ConfigError("dataset.image_side: must be divisible by 2^len(model.channel_mults)")
    if md.k <= 1.0:
        raise ConfigError("model.k: must be > 1")
    if md.window_radius < 1:
        raise ConfigError("model.window_radius: must be >= 1")
    if md.distance_mode not in ("euclidean", "hyperbolic_embedded"):
        raise ConfigError("model.distance_mode: must be euclidean or hyperbolic_embedded")
    if md.padding not in ("periodic", "zero"):
        raise ConfigError("model.padding: must be periodic or zero")
    if df.steps < 1:
        raise ConfigError("diffusion.steps: must be >= 1")
    if not 0.0 < df.beta_start <= df.beta_end < 1.0:
        raise ConfigError("diffusion.beta_start/beta_end: need 0 < start <= end < 1")
    if op.lr <= 0:
        raise ConfigError("optimizer.lr: must be > 0")
    if not (0.0 <= op.beta1 < 1.0 and 0.0 <= op.beta2 < 1.0):
        raise ConfigError("optimizer.beta1/beta2: must lie in [0, 1)")
    if not 0.0 <= op.ema_decay <= 1.0:
        raise ConfigError("optimizer.ema_decay: must lie in [0, 1]")
    if op.ema_every < 1:
        raise ConfigError("optimizer.ema_every: must be >= 1")
    if op.batch_size < 1:
        raise ConfigError("optimizer.batch_size: must be >= 1")
    if op.iterations < 0:
        raise ConfigError("optimizer.iterations: must be >= 0")
    if out.sample_every < 0 or out.checkpoint_every < 0:
        raise ConfigError("output.sample_every/checkpoint_every: must be >= 0")
    if out.sample_count < 1 or out.grid_cols < 1:
        raise ConfigError("output.sample_count/grid_cols: must be >= 1")
    if any((not isinstance(i, int)) or i < 1 for i in out.mmd_iters):
        raise ConfigError("output.mmd_iters: must be positive integers")
    if out.mmd_count < 2:
        raise ConfigError("output.mmd_count: must be >= 2")
    if out.mmd_iters and ds.holdout_count < out.mmd_count:
        raise ConfigError("dataset.holdout_count: must cover output.mmd_count")


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def seeded_rng(*key) -> np.random.Generator:
    """Deterministic generator for a (seed, purpose, step...) key tuple."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))
