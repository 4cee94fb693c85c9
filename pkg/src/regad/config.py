"""Pipeline configuration with a flat ``key = value`` text form."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass

from .anomaly import AnomalyConfig
from .descriptor import DescriptorConfig
from .exceptions import RegadError
from .losses import CircleLossConfig
from .registration import MatchingConfig, RansacConfig

__all__ = ["BankConfig", "LossConfig", "PipelineConfig"]


@dataclass
class BankConfig:
    rate: float = 0.1
    seed: int = 0
    template_index: int = 0


@dataclass
class LossConfig:
    circle: CircleLossConfig = field(default_factory=CircleLossConfig)
    n_g: int = 128
    t: float | None = None  # None: fine voxel size
    overlap_radius: float | None = None
    patch_overlap_threshold: float = 0.1


@dataclass
class PipelineConfig:
    target_fine: int = 4096
    coarse_factor: float = 8.0
    descriptor: DescriptorConfig = field(default_factory=DescriptorConfig)
    matching: MatchingConfig = field(default_factory=MatchingConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    bank: BankConfig = field(default_factory=BankConfig)
    anomaly: AnomalyConfig = field(default_factory=AnomalyConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.target_fine < 1:
            raise RegadError("target_fine must be >= 1")
        if not self.coarse_factor > 1:
            raise RegadError("coarse_factor must be > 1")

    # flat dotted keys, e.g. "matching.n_c"
    def to_flat(self) -> dict:
        out = {}

        def walk(obj, prefix):
            for f in fields(obj):
                v = getattr(obj, f.name)
                if is_dataclass(v):
                    walk(v, prefix + f.name + ".")
                else:
                    out[prefix + f.name] = v

        walk(self, "")
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(self.to_flat().items()))

    @classmethod
    def loads(cls, text: str, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        pairs = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise RegadError(f"config line {lineno}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            pairs[k] = v
        return (base or cls()).with_overrides(pairs)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.loads(fh.read())

    def with_overrides(self, pairs: dict) -> "PipelineConfig":
        """Copy with dotted keys replaced; string values are parsed by field type."""
        flat = self.to_flat()
        for k, v in pairs.items():
            if k not in flat:
                raise RegadError(f"unknown config key {k!r}")
            flat[k] = _parse(v, flat[k], k) if isinstance(v, str) else v
        return _build(type(self), flat, "")


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text, current, key):
    low = text.lower()
    if low == "none":
        return None
    try:
        if isinstance(current, bool):
            if low not in ("true", "false"):
                raise ValueError(text)
            return low == "true"
        if isinstance(current, int):
            return int(text)
        return float(text)
    except ValueError:
        raise RegadError(f"bad value for {key}: {text!r}") from None


def _build(cls, flat, prefix):
    kwargs = {}
    for f in fields(cls):
        key = prefix + f.name
        default = f.default_factory() if callable(f.default_factory) else None
        if is_dataclass(default):
            kwargs[f.name] = _build(type(default), flat, key + ".")
        else:
            kwargs[f.name] = flat[key]
    return cls(**kwargs)
