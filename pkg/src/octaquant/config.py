"""Run configuration: documented keys, defaults, and a flat key=value parser.

Config files are plain text, one `section.key = value` per line, `#`
comments allowed. Every key has a default, so an empty file (or no file) is
a complete configuration; unknown keys are rejected rather than ignored so
typos cannot silently fall back to defaults. CLI flags override file values.

Keys:
  segmentation.threshold_mode   otsu | fixed          (default otsu)
  segmentation.fixed_threshold  float in [0, 1]       (default 0.5)
  segmentation.min_component_px int >= 0              (default 20)
  segmentation.opening_radius   int >= 0              (default 1)
  vasculature.min_branch_px     float >= 0            (default 3.0)
  biomarkers.scale_factor       float > 0             (default 1.0)
  quality.ssim.window           odd int >= 3          (default 11)
  quality.ssim.sigma            float > 0             (default 1.5)
  quality.ssim.k1               float > 0             (default 0.01)
  quality.ssim.k2               float > 0             (default 0.03)
  quality.ssim.dynamic_range    float > 0             (default 1.0)
  quality.pcqi.window           int >= 3              (default 11)
  quality.pcqi.stride           int >= 1              (default 4)
  quality.fid.grid              int >= 1              (default 8)
  quality.fid.embedding         builtin | file:<path> (default builtin)
  stats.ttest                   welch | student       (default welch)
  stats.paired                  true | false          (default false)
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .quality import SsimParams


@dataclass(frozen=True)
class SegmentationConfig:
    threshold_mode: str = "otsu"
    fixed_threshold: float = 0.5
    min_component_px: int = 20
    opening_radius: int = 1


@dataclass(frozen=True)
class VasculatureConfig:
    min_branch_px: float = 3.0


@dataclass(frozen=True)
class BiomarkerConfig:
    scale_factor: float = 1.0


@dataclass(frozen=True)
class QualityConfig:
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    ssim_dynamic_range: float = 1.0
    pcqi_window: int = 11
    pcqi_stride: int = 4
    fid_grid: int = 8
    fid_embedding: str = "builtin"

    def ssim_params(self) -> SsimParams:
        return SsimParams(
            window=self.ssim_window,
            gaussian_sigma=self.ssim_sigma,
            k1=self.ssim_k1,
            k2=self.ssim_k2,
            dynamic_range=self.ssim_dynamic_range,
        )


@dataclass(frozen=True)
class StatsConfig:
    ttest: str = "welch"
    paired: bool = False


@dataclass(frozen=True)
class AnalysisConfig:
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    vasculature: VasculatureConfig = field(default_factory=VasculatureConfig)
    biomarkers: BiomarkerConfig = field(default_factory=BiomarkerConfig)
    quality: QualityConfig = field(default_factory=QualityConfig)
    stats: StatsConfig = field(default_factory=StatsConfig)


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


# dotted key -> (converter, validator, validator description)
_SCHEMA = {
    "segmentation.threshold_mode": (str, lambda v: v in ("otsu", "fixed"), "otsu|fixed"),
    "segmentation.fixed_threshold": (float, lambda v: 0.0 <= v <= 1.0, "in [0, 1]"),
    "segmentation.min_component_px": (int, lambda v: v >= 0, ">= 0"),
    "segmentation.opening_radius": (int, lambda v: v >= 0, ">= 0"),
    "vasculature.min_branch_px": (float, lambda v: v >= 0.0, ">= 0"),
    "biomarkers.scale_factor": (float, lambda v: v > 0.0, "> 0"),
    "quality.ssim.window": (int, lambda v: v >= 3 and v % 2 == 1, "odd, >= 3"),
    "quality.ssim.sigma": (float, lambda v: v > 0.0, "> 0"),
    "quality.ssim.k1": (float, lambda v: v > 0.0, "> 0"),
    "quality.ssim.k2": (float, lambda v: v > 0.0, "> 0"),
    "quality.ssim.dynamic_range": (float, lambda v: v > 0.0, "> 0"),
    "quality.pcqi.window": (int, lambda v: v >= 3, ">= 3"),
    "quality.pcqi.stride": (int, lambda v: v >= 1, ">= 1"),
    "quality.fid.grid": (int, lambda v: v >= 1, ">= 1"),
    "quality.fid.embedding": (
        str,
        lambda v: v == "builtin" or (v.startswith("file:") and len(v) > 5),
        "builtin|file:<path>",
    ),
    "stats.ttest": (str, lambda v: v in ("welch", "student"), "welch|student"),
    "stats.paired": (_parse_bool, lambda v: True, "true|false"),
}

# dotted key -> (section attribute on AnalysisConfig, field name)
_TARGETS = {
    "segmentation.threshold_mode": ("segmentation", "threshold_mode"),
    "segmentation.fixed_threshold": ("segmentation", "fixed_threshold"),
    "segmentation.min_component_px": ("segmentation", "min_component_px"),
    "segmentation.opening_radius": ("segmentation", "opening_radius"),
    "vasculature.min_branch_px": ("vasculature", "min_branch_px"),
    "biomarkers.scale_factor": ("biomarkers", "scale_factor"),
    "quality.ssim.window": ("quality", "ssim_window"),
    "quality.ssim.sigma": ("quality", "ssim_sigma"),
    "quality.ssim.k1": ("quality", "ssim_k1"),
    "quality.ssim.k2": ("quality", "ssim_k2"),
    "quality.ssim.dynamic_range": ("quality", "ssim_dynamic_range"),
    "quality.pcqi.window": ("quality", "pcqi_window"),
    "quality.pcqi.stride": ("quality", "pcqi_stride"),
    "quality.fid.grid": ("quality", "fid_grid"),
    "quality.fid.embedding": ("quality", "fid_embedding"),
    "stats.ttest": ("stats", "ttest"),
    "stats.paired": ("stats", "paired"),
}

_SECTION_CLASSES = {
    "segmentation": SegmentationConfig,
    "vasculature": VasculatureConfig,
    "biomarkers": BiomarkerConfig,
    "quality": QualityConfig,
    "stats": StatsConfig,
}


def _coerce(key: str, raw) -> object:
    converter, validator, description = _SCHEMA[key]
    if isinstance(raw, str):
        text = raw.strip()
        if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
            text = text[1:-1]
        try:
            value = converter(text)
        except ValueError as err:
            raise ValueError(f"config key {key}: {err}") from err
    else:
        value = raw  # already typed (programmatic override)
        if converter in (int, float) and isinstance(raw, (int, float)):
            value = converter(raw)
        elif converter is _parse_bool and not isinstance(raw, bool):
            raise ValueError(f"config key {key}: expected a boolean, got {raw!r}")
    if not validator(value):
        raise ValueError(f"config key {key}: value {value!r} must be {description}")
    return value


def config_from_mapping(mapping) -> AnalysisConfig:
    """Build a config from {dotted key: value}; unknown keys are errors."""
    unknown = sorted(set(mapping) - set(_SCHEMA))
    if unknown:
        raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
    fields: dict[str, dict[str, object]] = {}
    for key, raw in mapping.items():
        section, attr = _TARGETS[key]
        fields.setdefault(section, {})[attr] = _coerce(key, raw)
    sections = {
        name: cls(**fields.get(name, {})) for name, cls in _SECTION_CLASSES.items()
    }
    return AnalysisConfig(**sections)


def config_snapshot(config: AnalysisConfig) -> dict[str, object]:
    """The effective configuration as {dotted key: value}, for report records."""
    return {
        key: getattr(getattr(config, section), attr)
        for key, (section, attr) in _TARGETS.items()
    }


def load_config(path) -> AnalysisConfig:
    """Parse a flat key=value config file (see module docstring for keys)."""
    mapping: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as err:
        raise ValueError(f"cannot read config {path}: {err}") from err
    for line_no, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{line_no}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key in mapping:
            raise ValueError(f"{path}:{line_no}: duplicate key {key}")
        mapping[key] = raw.strip()
    try:
        return config_from_mapping(mapping)
    except ValueError as err:
        raise ValueError(f"{path}: {err}") from err
