"""
Experiment runners

- run_experiment: one self-training run on a freshly generated scene pool
- run_ablation: the five refinement component rows, from naive averaging
  to the full adaptive scheme, trained on the target branch only, plus a
  sixth row that adds concurrent adaptation to the reference images
- run_gamma_sweep: one row per trust-score exponent

Each report row holds: label, final target mIoU, final diversity, mean trust.
"""

import logging
from dataclasses import replace
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from config.config import GAMMA_SWEEP
from tools.alignment import AlignmentProvider, IdentityAlignment, build_alignment
from tools.metrics import miou
from tools.refine import RefineConfig
from tools.run_config import RunConfig
from tools.scenes import SceneTriplet, generate_pool
from tools.selftrain import TrainingResult, evaluate_target, refign_train

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["label", "target_miou", "diversity", "mean_trust"]


class AblationRow(NamedTuple):
    label: str
    refine: RefineConfig
    aligned: bool
    reference_adaptation: bool


class ExperimentOutcome(NamedTuple):
    label: str
    result: TrainingResult
    target_miou: float
    diversity: float

    def row(self) -> Dict[str, object]:
        return {
            "label": self.label,
            "target_miou": self.target_miou,
            "diversity": self.diversity,
            "mean_trust": float(np.nanmean(self.result.metrics["trust"].to_numpy(dtype=np.float64)))
            if self.result.metrics["trust"].notna().any() else float("nan"),
        }


def run_experiment(config: RunConfig, label: str = "run", align: Optional[AlignmentProvider] = None,
                   pool: Optional[Sequence[SceneTriplet]] = None) -> ExperimentOutcome:
    """
    Train on a scene pool and evaluate the final student on the targets

    Parameters:
    -----------
    config : RunConfig
        All settings; the scene pool is seeded with train.rng_seed
    label : str
        Row label for reports
    align : AlignmentProvider, optional
        Defaults to the provider named by config.alignment
    pool : Sequence[SceneTriplet], optional
        Reuse an existing pool instead of generating one

    Returns:
    --------
    ExperimentOutcome
    """
    pool = pool if pool is not None else generate_pool(config.train.rng_seed, config.scene, config.taxonomy)
    align = align or build_alignment(config.alignment, config.loss, config.train.rng_seed)
    result = refign_train(pool, config.train, align, config.taxonomy)
    cm, diversity = evaluate_target(result.student, pool)
    _, mean_iou = miou(cm)
    logger.info(f"{label}: target mIoU {mean_iou:.4f}, diversity {diversity:.4f}")
    return ExperimentOutcome(label, result, mean_iou, diversity)


def ablation_configs(base: RefineConfig) -> List[AblationRow]:
    """Ablation rows in order; only the last one adapts to the reference images"""
    rows = [
        ("naive_average", RefineConfig(gamma=base.gamma, fixed_alpha=0.5), False),
        ("aligned_half_confidence", RefineConfig(gamma=base.gamma, enable_mask_m=False, enable_trust=False,
                                                 fixed_confidence=0.5), True),
        ("with_confidence", RefineConfig(gamma=base.gamma, enable_mask_m=False, enable_trust=False), True),
        ("with_static_mask", RefineConfig(gamma=base.gamma, enable_trust=False), True),
        ("with_trust_score", RefineConfig(gamma=base.gamma), True),
    ]
    component_rows = [AblationRow(label, cfg, aligned, False) for label, cfg, aligned in rows]
    return component_rows + [AblationRow("with_reference_adaptation", RefineConfig(gamma=base.gamma), True, True)]


def run_ablation(config: RunConfig) -> pd.DataFrame:
    """One report row per ablation configuration, sharing one scene pool"""
    pool = generate_pool(config.train.rng_seed, config.scene, config.taxonomy)
    rows = []
    for row in ablation_configs(config.train.refine):
        run_cfg = config.with_refine(row.refine, reference_adaptation=row.reference_adaptation)
        align = build_alignment(config.alignment, config.loss, config.train.rng_seed) if row.aligned \
            else IdentityAlignment(config.alignment)
        rows.append(run_experiment(run_cfg, row.label, align, pool).row())
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def run_gamma_sweep(config: RunConfig, gammas: Sequence[float] = GAMMA_SWEEP) -> pd.DataFrame:
    """Full refinement with each trust-score exponent"""
    pool = generate_pool(config.train.rng_seed, config.scene, config.taxonomy)
    rows = []
    for gamma in gammas:
        run_cfg = config.with_refine(replace(config.train.refine, gamma=gamma))
        rows.append(run_experiment(run_cfg, f"gamma={gamma:g}", pool=pool).row())
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def write_report(report: pd.DataFrame, path) -> None:
    report.to_csv(path, index=False, lineterminator="\n")
