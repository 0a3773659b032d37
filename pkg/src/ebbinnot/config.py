"""Pipeline configuration: plain-text ``key = value`` files with sections.

Every section maps onto a dataclass whose defaults are the reference
parameter values.  Unknown sections or keys are hard errors so that a typo
never silently falls back to a default.

Example::

    seed = 3

    [frames]
    t_F = 66000

    [tracker]
    t_ov = 0.2
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .nndc.train import TrainConfig
from .synth import ConfigError
from .tracker.ot import OTConfig


@dataclass
class FrameSettings:
    t_F: int = 66_000
    start: int | None = None       # None: first event rounded down to t_F
    p: int = 3                     # median window side
    median: bool = True
    refractory_us: int = 0         # 0 disables the refractory filter
    nn_filter: bool = False
    t_corr: int = 5_000

    def __post_init__(self):
        if self.t_F <= 0:
            raise ConfigError("frames.t_F must be positive")
        if self.p < 3 or self.p % 2 == 0:
            raise ConfigError("frames.p must be odd and >= 3")
        if self.refractory_us < 0 or self.t_corr <= 0:
            raise ConfigError("frames.refractory_us must be >= 0 and frames.t_corr > 0")


@dataclass
class ProposalSettings:
    method: str = "nndc"           # nndc | ccl (bare proposals, no network)
    s1: int = 6
    s2: int = 3
    max_rp: int = 8
    side: int = 42

    def __post_init__(self):
        if self.method not in ("nndc", "ccl"):
            raise ConfigError(f"proposals.method must be nndc or ccl, got {self.method!r}")
        if self.s1 < 1 or self.s2 < 1 or self.side < 1:
            raise ConfigError("proposals.s1, s2 and side must be >= 1")
        if self.max_rp < 0:
            raise ConfigError("proposals.max_rp must be >= 0")


@dataclass
class DetectorSettings:
    thr: float = 0.1
    thr_ns: float = 0.3
    weights: str | None = None
    anchors: str | None = None

    def __post_init__(self):
        for name in ("thr", "thr_ns"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"detector.{name} must lie in (0, 1)")


@dataclass
class TrackerSettings:
    kind: str = "ot"               # ot | kf
    max_trackers: int = 8
    t_ov: float = 0.2
    n_occl: int = 2
    kappa_pos: float = 0.5
    kappa_vel: float = 0.5
    max_invisible: int = 5
    min_visibility: float = 0.6
    min_locked_frames: int = 3
    occl_min_rel_speed: float = 0.5

    def __post_init__(self):
        if self.kind not in ("ot", "kf"):
            raise ConfigError(f"tracker.kind must be ot or kf, got {self.kind!r}")
        try:
            self.ot_config(240, 180)
        except ValueError as exc:
            raise ConfigError(f"tracker: {exc}") from None

    def ot_config(self, A: int, B: int) -> OTConfig:
        kw = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "kind"}
        return OTConfig(A=A, B=B, **kw)


@dataclass
class PathSettings:
    events: str | None = None
    annotations: str | None = None
    scene: str | None = None
    output: str | None = None


@dataclass
class PipelineConfig:
    frames: FrameSettings = field(default_factory=FrameSettings)
    proposals: ProposalSettings = field(default_factory=ProposalSettings)
    detector: DetectorSettings = field(default_factory=DetectorSettings)
    tracker: TrackerSettings = field(default_factory=TrackerSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathSettings = field(default_factory=PathSettings)
    seed: int = 0

    def check_paths(self, *names: str) -> None:
        """Raise when a referenced input file is missing."""
        for name in names:
            section, key = name.split(".")
            value = getattr(getattr(self, section), key)
            if value is not None and not Path(value).exists():
                raise FileNotFoundError(f"{name} = {value}: no such file")


SECTIONS = ("frames", "proposals", "detector", "tracker", "train", "paths")


def _convert(type_name: str, raw: str, where: str):
    raw = raw.strip()
    if "None" in type_name and raw.lower() in ("none", "auto", ""):
        return None
    try:
        if type_name.startswith("bool"):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {raw!r}")
            return low in ("true", "1", "yes")
        if type_name.startswith("int"):
            return int(raw)
        if type_name.startswith("float"):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return raw


def _apply(obj, values: dict, section: str, source: str):
    types = {f.name: f.type if isinstance(f.type, str) else f.type.__name__ for f in fields(obj)}
    kw = {}
    for key, (ln, raw) in values.items():
        if key not in types:
            raise ConfigError(f"{source}:{ln}: unknown key {section + '.' if section else ''}{key}")
        kw[key] = _convert(types[key], raw, f"{source}:{ln}")
    try:
        return replace(obj, **kw)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    top: dict = {}
    sections: dict = {s: {} for s in SECTIONS}
    cur = top
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in sections:
                raise ConfigError(f"{source}:{ln}: unknown section [{name}]")
            cur = sections[name]
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{ln}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        cur[key] = (ln, raw)
    cfg = PipelineConfig()
    for key, (ln, _) in top.items():
        if key != "seed":
            raise ConfigError(f"{source}:{ln}: unknown key {key}")
    if "seed" in top:
        cfg.seed = _convert("int", top["seed"][1], f"{source}:{top['seed'][0]}")
    for name in SECTIONS:
        setattr(cfg, name, _apply(getattr(cfg, name), sections[name], name, source))
    return cfg


def read_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def format_config(cfg: PipelineConfig) -> str:
    lines = [f"seed = {cfg.seed}"]
    for name in SECTIONS:
        lines += ["", f"[{name}]"]
        sec = getattr(cfg, name)
        for f in fields(sec):
            v = getattr(sec, f.name)
            lines.append(f"{f.name} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"
