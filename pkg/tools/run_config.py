"""
Run configuration files

Flat `section.key = value` text, `#` comments and blank lines allowed:

    train.iterations = 500
    refine.gamma = 0.25
    refine.fixed_alpha = none
    scene.height = 32
    taxonomy.large_static = 0,1,2

Every key of TrainConfig, RefineConfig, LossConfig, SceneConfig,
AlignmentConfig and the class taxonomy may be set; unknown keys are rejected.
Validation enumerates every problem before anything is computed.
"""

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

from config.config import DEFAULT_TAXONOMY
from tools.alignment import AlignmentConfig
from tools.losses import LossConfig
from tools.refine import ClassTaxonomy, RefineConfig, taxonomy_from_lists
from tools.scenes import SceneConfig
from tools.selftrain import TrainConfig
from utils.helper import ConfigError, RefignError, parse_index_list

logger = logging.getLogger(__name__)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: '{text}'")


def _optional(parser: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(text: str) -> Any:
        return None if text.strip().lower() in ("none", "") else parser(text)
    return parse


# key -> parser; the section prefix selects the target dataclass
SCHEMA: Dict[str, Callable[[str], Any]] = {
    "train.iterations": int,
    "train.learning_rate": float,
    "train.ema_momentum": float,
    "train.rng_seed": int,
    "train.reference_adaptation": _parse_bool,
    "train.pseudo_threshold": _optional(float),
    "train.eval_interval": int,
    "train.bypass_refine": _parse_bool,
    "refine.gamma": float,
    "refine.enable_mask_m": _parse_bool,
    "refine.enable_trust": _parse_bool,
    "refine.fixed_alpha": _optional(float),
    "refine.fixed_confidence": _optional(float),
    "loss.lambda_weight": float,
    "loss.huber_delta": float,
    "loss.alpha1": float,
    "loss.alpha2": float,
    "scene.height": int,
    "scene.width": int,
    "scene.class_count": int,
    "scene.num_buildings": int,
    "scene.num_poles": int,
    "scene.num_dynamic": int,
    "scene.corruption": float,
    "scene.homography_strength": float,
    "scene.dynamic_shift": float,
    "scene.pool_size": int,
    "alignment.mode": str,
    "alignment.flow_noise": float,
    "alignment.noise_spread": float,
    "alignment.radius": float,
    "alignment.confidence_from": str,
    "alignment.fit_observations": int,
    "alignment.fit_steps": int,
    "alignment.fit_learning_rate": float,
    "taxonomy.large_static": parse_index_list,
    "taxonomy.small_static": parse_index_list,
    "taxonomy.dynamic": parse_index_list,
}


@dataclass(frozen=True)
class RunConfig:
    """Every setting of a self-training run"""

    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    taxonomy: ClassTaxonomy = field(default_factory=ClassTaxonomy.default)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, train=replace(self.train, rng_seed=seed))

    def with_refine(self, refine_cfg: RefineConfig, **train_overrides) -> "RunConfig":
        return replace(self, train=replace(self.train, refine=refine_cfg, **train_overrides))


def parse_run_config_text(text: str) -> Tuple[Dict[str, str], List[str]]:
    """Split text into raw key/value strings; returns (values, syntax errors)"""
    values: Dict[str, str] = {}
    errors: List[str] = []
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            errors.append(f"line {number}: expected 'key = value', got '{stripped}'")
            continue
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key in values:
            errors.append(f"line {number}: duplicate key '{key}'")
            continue
        values[key] = value
    return values, errors


def _build(parsed: Dict[str, Any], errors: List[str]) -> Optional[RunConfig]:
    sections: Dict[str, Dict[str, Any]] = {}
    for key, value in parsed.items():
        section, name = key.split(".", 1)
        sections.setdefault(section, {})[name] = value

    def construct(name: str, cls, **extra):
        try:
            return cls(**sections.get(name, {}), **extra)
        except (RefignError, ValueError, TypeError) as e:
            errors.append(f"{name}: {e}")
            return None

    refine_cfg = construct("refine", RefineConfig)
    train_cfg = construct("train", TrainConfig, refine=refine_cfg or RefineConfig())
    loss_cfg = construct("loss", LossConfig)
    scene_cfg = construct("scene", SceneConfig)
    alignment_cfg = construct("alignment", AlignmentConfig)

    tax_values = sections.get("taxonomy", {})
    taxonomy = None
    class_count = scene_cfg.class_count if scene_cfg else DEFAULT_TAXONOMY["class_count"]
    try:
        taxonomy = taxonomy_from_lists(
            class_count,
            tax_values.get("large_static", DEFAULT_TAXONOMY["large_static"]),
            tax_values.get("small_static", DEFAULT_TAXONOMY["small_static"]),
            tax_values.get("dynamic", DEFAULT_TAXONOMY["dynamic"]),
        )
    except RefignError as e:
        errors.append(f"taxonomy: {e}")

    if errors:
        return None
    return RunConfig(train_cfg, loss_cfg, scene_cfg, alignment_cfg, taxonomy)


def validate_run_config(text: str) -> Dict[str, Union[bool, str, List[str], Optional[RunConfig]]]:
    """
    Validate configuration text

    Parameters:
    -----------
    text : str
        Raw configuration file content

    Returns:
    --------
    Dict
        Validation result with status, message, the enumerated errors and
        the parsed RunConfig (None when invalid)
    """
    values, errors = parse_run_config_text(text)
    parsed: Dict[str, Any] = {}
    for key, raw in values.items():
        if key not in SCHEMA:
            errors.append(f"unknown key '{key}'")
            continue
        try:
            parsed[key] = SCHEMA[key](raw)
        except ValueError as e:
            errors.append(f"{key}: cannot parse '{raw}' ({e})")

    config = _build(parsed, errors)
    if errors:
        return {
            "valid": False,
            "message": f"Configuration has {len(errors)} error(s)",
            "errors": errors,
            "config": None,
        }
    return {
        "valid": True,
        "message": f"Configuration accepted with {len(parsed)} override(s)",
        "errors": [],
        "config": config,
    }


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Read and validate a configuration file; None gives all defaults"""
    if path is None:
        return RunConfig()
    text = Path(path).read_text(encoding="utf-8")
    result = validate_run_config(text)
    if not result["valid"]:
        for error in result["errors"]:
            logger.error(f"{path}: {error}")
        raise ConfigError(result["message"], result["errors"])
    logger.info(f"Loaded run configuration from {path}: {result['message']}")
    return result["config"]


def describe(config: RunConfig) -> Dict[str, Any]:
    """Flat key -> value view of a RunConfig, in the file's key names"""
    out: Dict[str, Any] = {}
    for section, obj in (("train", config.train), ("refine", config.train.refine), ("loss", config.loss),
                         ("scene", config.scene), ("alignment", config.alignment)):
        for f in fields(obj):
            key = f"{section}.{f.name}"
            if key in SCHEMA:
                out[key] = getattr(obj, f.name)
    out["taxonomy.large_static"] = sorted(config.taxonomy.large_static)
    out["taxonomy.small_static"] = sorted(config.taxonomy.small_static)
    out["taxonomy.dynamic"] = sorted(config.taxonomy.dynamic)
    return out


def load_taxonomy(path: Union[str, Path]) -> ClassTaxonomy:
    """
    Read a taxonomy file

    Keys: class_count, large_static, small_static, dynamic (comma-separated
    class indices). Missing role keys default to empty.
    """
    values, errors = parse_run_config_text(Path(path).read_text(encoding="utf-8"))
    unknown = sorted(set(values) - {"class_count", "large_static", "small_static", "dynamic"})
    errors += [f"unknown key '{key}'" for key in unknown]
    if "class_count" not in values:
        errors.append("missing key 'class_count'")
    if errors:
        raise ConfigError(f"{path}: invalid taxonomy file", errors)
    try:
        return taxonomy_from_lists(int(values["class_count"]),
                                   parse_index_list(values.get("large_static", "")),
                                   parse_index_list(values.get("small_static", "")),
                                   parse_index_list(values.get("dynamic", "")))
    except ValueError as e:
        raise ConfigError(f"{path}: invalid taxonomy file", [str(e)])
