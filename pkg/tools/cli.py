"""
Command-line interface for the Refign toolkit

Subcommands:
- compose: chain two GaussianFlow containers
- refine: one test-time refinement pass over stored predictions
- selftrain: self-training run, optionally the ablation or gamma sweep
- eval: mIoU / PCK / AEPE / AUSE reports from stored predictions
- generate: write one synthetic scene and its oracle flow as containers

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from config.config import DEFAULT_TAXONOMY, GAMMA_SWEEP, OUTPUT_DIR, REFINE_CONFIG
from tools import alignment as alignment_tools
from tools.experiments import run_ablation, run_experiment, run_gamma_sweep, write_report
from tools.fields import FlowField
from tools.metrics import ConfusionMatrix, MatchSet, aepe, ause, match_set_from_flows, miou, pck, report_rows
from tools.refine import RefineConfig
from tools.run_config import load_run_config, load_taxonomy
from tools.scenes import generate_triplet
from tools.selftrain import write_metrics_csv
from tools.tensor_io import (
    params_to_array,
    read_gaussian_flow,
    read_label_map,
    read_prob_map,
    read_tensor,
    write_gaussian_flow,
    write_image,
    write_label_map,
    write_tensor,
)
from tools.uncertainty import GaussianFlow, compose_gaussian
from utils.helper import ContainerFormatError, RefignError, parse_float_list

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

METRICS = ("miou", "pck", "aepe", "ause")
DEFAULT_GAMMAS = ",".join(f"{g:g}" for g in GAMMA_SWEEP)


def cmd_compose(args: argparse.Namespace) -> int:
    first = read_gaussian_flow(args.first)
    second = read_gaussian_flow(args.second)
    composed = compose_gaussian(first, second)
    write_gaussian_flow(args.out, composed)
    logger.info(f"Composed flow written to {args.out} ({composed.validity.fraction():.3f} valid)")
    return EXIT_OK


def cmd_refine(args: argparse.Namespace) -> int:
    q_t = read_prob_map(args.q_t)
    q_r = read_prob_map(args.q_r)
    g_tr = read_gaussian_flow(args.flow)
    tax = load_taxonomy(args.taxonomy)
    cfg = RefineConfig(gamma=args.gamma, enable_mask_m=not args.no_mask, enable_trust=not args.no_trust,
                       fixed_alpha=args.fixed_alpha, fixed_confidence=args.fixed_confidence)
    output = alignment_tools.test_time_refine(q_t, q_r, g_tr, tax, cfg, args.radius, args.threshold)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_tensor(out_dir / "refined.rftn", output.refined)
    write_label_map(out_dir / "labels.rftn", output.labels)
    print(f"trust_score={output.trust:.6f}")
    logger.info(f"Refined predictions written to {out_dir}")
    return EXIT_OK


def cmd_selftrain(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.ablate:
        write_report(run_ablation(config), out_dir / "ablation.csv")
        logger.info(f"Ablation report written to {out_dir / 'ablation.csv'}")
    if args.gamma_sweep is not None:
        gammas = parse_float_list(args.gamma_sweep) if args.gamma_sweep else GAMMA_SWEEP
        write_report(run_gamma_sweep(config, gammas), out_dir / "gamma_sweep.csv")
        logger.info(f"Gamma sweep written to {out_dir / 'gamma_sweep.csv'}")
    if not args.ablate and args.gamma_sweep is None:
        outcome = run_experiment(config, "selftrain")
        write_metrics_csv(outcome.result.metrics, out_dir / "metrics.csv")
        write_tensor(out_dir / "params.rftn", params_to_array(outcome.result.student))
        print(f"target_miou={outcome.target_miou:.6f} diversity={outcome.diversity:.6f}")
        logger.info(f"Self-training artifacts written to {out_dir}")
    return EXIT_OK


def _flow_field(path: str) -> FlowField:
    array = read_tensor(path)
    if array.ndim != 3 or array.shape[2] not in (2, 4):
        raise ContainerFormatError(f"{path}: expected a (h, w, 2) flow or (h, w, 4) GaussianFlow")
    return FlowField(array[..., :2])


def cmd_eval(args: argparse.Namespace) -> int:
    rows = []
    if args.metric == "miou":
        cm = ConfusionMatrix(args.classes)
        for pred_path, gt_path in zip(args.pred, args.gt):
            cm.add(read_label_map(pred_path, args.classes), read_label_map(gt_path, args.classes))
        per_class, mean = miou(cm)
        rows += [("iou", f"class={k}", value) for k, value in enumerate(per_class)]
        rows.append(("miou", "", mean))
    else:
        matches = [match_set_from_flows(_flow_field(gt_path), read_gaussian_flow(pred_path))
                   for pred_path, gt_path in zip(args.pred, args.gt)]
        ms = matches[0] if len(matches) == 1 else _concat_matches(matches)
        if args.metric == "pck":
            rows += [("pck", f"t={t:g}", pck(ms, t)) for t in parse_float_list(args.thresholds)]
        elif args.metric == "aepe":
            rows.append(("aepe", "", aepe(ms)))
        else:
            rows.append(("ause", "", ause(ms)))

    report = report_rows(rows)
    if args.out:
        report.to_csv(args.out, index=False, lineterminator="\n")
        logger.info(f"Report written to {args.out}")
    else:
        sys.stdout.write(report.to_csv(index=False, lineterminator="\n"))
    return EXIT_OK


def _concat_matches(matches: List[MatchSet]) -> MatchSet:
    return MatchSet(np.concatenate([m.gt for m in matches]), np.concatenate([m.pred for m in matches]),
                    np.concatenate([m.variance for m in matches]))


def cmd_generate(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    seed = args.seed if args.seed is not None else config.train.rng_seed
    triplet = generate_triplet(seed, config.scene, config.taxonomy)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    write_image(out_dir / "source.rftn", triplet.source)
    write_label_map(out_dir / "source_labels.rftn", triplet.source_labels)
    write_image(out_dir / "target.rftn", triplet.target)
    write_label_map(out_dir / "target_labels.rftn", triplet.target_labels)
    write_image(out_dir / "reference.rftn", triplet.reference)

    oracle = alignment_tools.OracleAlignment(config.alignment)
    g_tr, _ = oracle.flows(triplet, np.random.default_rng(seed))
    gt_tr, _ = alignment_tools.ground_truth_flows(triplet)
    write_gaussian_flow(out_dir / "flow_tr.rftn", g_tr)
    write_gaussian_flow(out_dir / "flow_tr_true.rftn", GaussianFlow.from_variance(gt_tr, np.zeros(triplet.shape)))
    logger.info(f"Scene {seed} written to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refign", description="Reference-guided pseudo-label refinement toolkit")
    parser.add_argument("--log-level", default=None, help="Override the logging level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compose", help="Compose two GaussianFlow containers")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("refine", help="Refine a target prediction with an aligned reference prediction")
    p.add_argument("--q-t", dest="q_t", required=True)
    p.add_argument("--q-r", dest="q_r", required=True)
    p.add_argument("--flow", required=True, help="Target->reference GaussianFlow container")
    p.add_argument("--taxonomy", required=True, help="Taxonomy file (class_count, large_static, ...)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--gamma", type=float, default=REFINE_CONFIG["gamma"])
    p.add_argument("--fixed-alpha", type=float, default=None)
    p.add_argument("--fixed-confidence", type=float, default=None)
    p.add_argument("--no-mask", action="store_true")
    p.add_argument("--no-trust", action="store_true")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--radius", type=float, default=1.0)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("selftrain", help="Run self-training on synthetic scenes")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=str(OUTPUT_DIR))
    p.add_argument("--ablate", action="store_true",
                   help="Run the six ablation rows (five components, then reference adaptation)")
    p.add_argument("--gamma-sweep", nargs="?", const="", default=None,
                   help=f"Comma-separated gammas (default {DEFAULT_GAMMAS})")
    p.set_defaults(func=cmd_selftrain)

    p = sub.add_parser("eval", help="Evaluate stored predictions")
    p.add_argument("--metric", choices=METRICS, required=True)
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--gt", nargs="+", required=True)
    p.add_argument("--classes", type=int, default=DEFAULT_TAXONOMY["class_count"])
    p.add_argument("--thresholds", default="1,3,5", help="PCK thresholds in pixels")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", help="Write a synthetic scene triplet as containers")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    if args.log_level:
        logging.getLogger().setLevel(args.log_level.upper())
    if args.command == "eval" and len(args.pred) != len(args.gt):
        parser.print_usage(sys.stderr)
        logger.error("--pred and --gt need the same number of files")
        return EXIT_USAGE

    try:
        return args.func(args)
    except (RefignError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME
