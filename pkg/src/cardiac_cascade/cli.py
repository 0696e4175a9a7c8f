"""Command-line entry point: ``cardiac-cascade <command> ...``.

Every failure prints one line starting with ``error:`` and exits nonzero.
Outputs are byte-identical when a command is rerun with the same inputs.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .dataset import DatasetError, read_case, read_dataset, read_grid, read_manifest
from .metrics import ClassReport, evaluate_case, summarize, write_report_csv, write_summary_json
from .phantom import PhantomError, case_seeds, generate_dataset, write_dataset
from .pipeline import (
    ArchitectureMismatch,
    TrainingError,
    classify,
    make_folds,
    run_pipeline,
    train_stage,
)
from .preprocess import RESAMPLE_THEN_ZSCORE, preprocess_image, preprocess_label
from .unet import CheckpointError, read_checkpoint
from .volume import GridError, LabelMap, write_miv

log = logging.getLogger("cardiac_cascade")

EXPECTED_ERRORS = (
    ArchitectureMismatch,
    CheckpointError,
    ConfigError,
    DatasetError,
    GridError,
    OSError,
    PhantomError,
    TrainingError,
    ValueError,
)


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _map(fn, items, jobs: int):
    """Ordered map; processes are used when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- phantom-gen ----------------------------------------------------------

def cmd_phantom_gen(args, cfg: RunConfig) -> None:
    n = cfg.n_cases if args.n_cases is None else args.n_cases
    frac = cfg.pathological_fraction if args.fraction is None else args.fraction
    if n < 1:
        raise CliError(f"n_cases must be >= 1, got {n}")
    if not 0 <= frac <= 1:
        raise CliError(f"pathological_fraction must lie in [0, 1], got {frac}")
    cases = generate_dataset(cfg.phantom, n, frac, cfg.seed)
    seeds = dict(zip((c.case_id for c in cases), case_seeds(n, cfg.seed)))
    extra = {
        "generator": {"phantom": cfg.phantom.to_dict(), "n_cases": n, "pathological_fraction": frac},
        "seed": cfg.seed,
    }
    path = write_dataset(cases, args.out_dir, extra=extra, seeds=seeds)
    log.info("wrote %d cases to %s", n, path.parent)


# -- preprocess -----------------------------------------------------------

def _preprocess_one(task):
    in_dir, out_dir, entry, pcfg = task
    case = read_case(in_dir, entry)
    out = {"case_id": case.case_id, "image": f"{case.case_id}_image.miv",
           "source_spacing": list(case.image.spacing.as_tuple()), "source_shape": list(case.image.shape)}
    write_miv(preprocess_image(case.image, pcfg), out_dir / out["image"])
    if case.labels is not None:
        out["label"] = f"{case.case_id}_label.miv"
        write_miv(preprocess_label(case.labels, pcfg), out_dir / out["label"])
    if case.pathological is not None:
        out["pathological"] = case.pathological
    return out


def cmd_preprocess(args, cfg: RunConfig) -> None:
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    manifest = read_manifest(in_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(in_dir, out_dir, e, cfg.preprocess) for e in manifest["cases"]]
    entries = _map(_preprocess_one, tasks, args.jobs)
    k = cfg.folds if args.folds is None else args.folds
    stubs = [_Stub(e["case_id"], e.get("pathological")) for e in entries]
    folds = make_folds(stubs, k, cfg.seed)
    for e in entries:
        e["fold"] = folds[e["case_id"]]
    _dump_json({
        "preprocessing_order": RESAMPLE_THEN_ZSCORE,
        "target_spacing": list(cfg.preprocess.target_spacing.as_tuple()),
        "zscore_epsilon": cfg.preprocess.zscore_epsilon,
        "folds": k,
        "fold_assignment": folds,
        "seed": cfg.seed,
        "source": str(in_dir),
        "cases": entries,
    }, out_dir / "manifest.json")


class _Stub:
    # the fields make_folds looks at
    def __init__(self, case_id, pathological):
        self.case_id = case_id
        self.pathological = pathological


# -- train ----------------------------------------------------------------

def cmd_train(args, cfg: RunConfig) -> None:
    stage = cfg.stage(args.stage)
    if args.epochs is not None:
        stage = replace(stage, hyper=replace(stage.hyper, max_epochs=args.epochs))
    _, cases = read_dataset(args.dataset, require_labels=True)
    missing = [c.case_id for c in cases if c.fold is None]
    if missing:
        raise CliError(f"no fold assignment for case {missing[0]} (run preprocess first)")
    known = sorted({c.fold for c in cases})
    if args.fold not in known:
        raise CliError(f"fold {args.fold} not in the dataset's folds {known}")
    if args.max_cases is not None:
        cases = cases[:args.max_cases]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"stage{args.stage}_fold{args.fold}"
    ckpt = out_dir / f"{stem}.ckpt"
    trace = out_dir / f"{stem}.trace.tsv"
    result = train_stage(cases, stage, args.fold, cfg.seed, ckpt, trace, cfg.roi_margin)
    _dump_json({
        "command": "train",
        "stage": args.stage,
        "fold": args.fold,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "stage_config": stage.to_dict(),
        "dataset": str(args.dataset),
        "fold_assignment": {c.case_id: c.fold for c in cases},
        "training_cases": sorted(c.case_id for c in cases if c.fold != args.fold),
        "checkpoint": ckpt.name,
        "loss_trace": trace.name,
        "iterations": len(result.trace),
        "final_loss": result.trace[-1][3],
    }, out_dir / f"{stem}.manifest.json")


# -- predict --------------------------------------------------------------

def _load_models(paths, stage: int):
    if not paths:
        raise CliError(f"at least one stage-{stage} checkpoint is required")
    loaded = []
    for p in paths:
        params, meta = read_checkpoint(p)
        if meta.get("stage", stage) != stage:
            raise CliError(f"{p}: checkpoint is for stage {meta['stage']}, not {stage}")
        loaded.append((meta.get("fold", 0), str(p), params))
    # fold order fixes the ensemble membership order
    loaded.sort(key=lambda t: (t[0], t[1]))
    return [p for *_, p in loaded], [path for _, path, _ in loaded]


def _predict_one(task):
    data_dir, out_dir, entry, m1, m2, pcfg = task
    case = read_case(data_dir, entry)
    out = run_pipeline(case.image, m1, m2, pcfg)
    name = f"{case.case_id}_pred.miv"
    write_miv(out.labels, out_dir / name)
    return {"case_id": case.case_id, "prediction": name, "diagnosis": out.diagnosis.value}


def _write_classes(rows, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["case_id", "prediction"])
        for cid, diag in sorted(rows):
            writer.writerow([cid, diag])


def cmd_predict(args, cfg: RunConfig) -> None:
    data_dir, out_dir = Path(args.dataset), Path(args.out_dir)
    m1, p1 = _load_models(args.stage1, 1)
    m2, p2 = _load_models(args.stage2, 2)
    manifest = read_manifest(data_dir)
    entries = manifest["cases"]
    folds = None
    if args.fold is not None:
        if args.folds_from is None:
            raise CliError("--fold needs --folds-from <preprocessed dataset>")
        folds = read_manifest(args.folds_from).get("fold_assignment")
        if not folds:
            raise CliError(f"{args.folds_from}: manifest has no fold assignment")
        entries = [e for e in entries if folds.get(e["case_id"]) == args.fold]
        if not entries:
            raise CliError(f"no cases in fold {args.fold}")
    out_dir.mkdir(parents=True, exist_ok=True)
    pcfg = cfg.pipeline()
    rows = _map(_predict_one, [(data_dir, out_dir, e, m1, m2, pcfg) for e in entries], args.jobs)
    rows.sort(key=lambda r: r["case_id"])
    _write_classes([(r["case_id"], r["diagnosis"]) for r in rows], out_dir / "classification.csv")
    _dump_json({
        "command": "predict",
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "preprocessing_order": RESAMPLE_THEN_ZSCORE,
        "dataset": str(data_dir),
        "checkpoints": {"stage1": p1, "stage2": p2},
        "fold": args.fold,
        "fold_assignment": folds,
        "cases": rows,
    }, out_dir / "manifest.json")


# -- evaluate -------------------------------------------------------------

def _evaluate_one(task):
    pred_path, gt_path, cid = task
    pred = read_grid(pred_path, LabelMap)
    gt = read_grid(gt_path, LabelMap)
    if pred.shape != gt.shape or pred.spacing != gt.spacing:
        raise DatasetError(f"{cid}: prediction grid {pred.shape} does not match ground truth {gt.shape}")
    return evaluate_case(pred, gt, cid)


def cmd_evaluate(args, cfg: RunConfig) -> None:
    pred_dir, gt_dir, out_dir = Path(args.pred_dir), Path(args.gt_dir), Path(args.out_dir)
    preds = read_manifest(pred_dir)["cases"]
    gts = {e["case_id"]: e for e in read_manifest(gt_dir)["cases"]}
    tasks = []
    for e in sorted(preds, key=lambda e: e["case_id"]):
        cid = e["case_id"]
        if cid not in gts or "label" not in gts[cid]:
            raise CliError(f"no ground truth for case {cid} in {gt_dir}")
        if "prediction" not in e:
            raise CliError(f"{cid}: manifest entry has no prediction")
        tasks.append((pred_dir / e["prediction"], gt_dir / gts[cid]["label"], cid))
    reports = _map(_evaluate_one, tasks, args.jobs)
    classes = None
    scored = [e for e in preds if "diagnosis" in e and gts[e["case_id"]].get("pathological") is not None]
    if scored:
        scored.sort(key=lambda e: e["case_id"])
        truth = ["pathological" if gts[e["case_id"]]["pathological"] else "normal" for e in scored]
        classes = ClassReport([e["case_id"] for e in scored], [e["diagnosis"] for e in scored], truth)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(reports, out_dir / "report.csv")
    write_summary_json(summarize(reports, classes), out_dir / "summary.json")


# -- classify -------------------------------------------------------------

def cmd_classify(args, cfg: RunConfig) -> None:
    directory = Path(args.labels_dir)
    rows = []
    for e in read_manifest(directory)["cases"]:
        key = "prediction" if "prediction" in e else "label"
        if key not in e:
            raise CliError(f"{e['case_id']}: no label map to classify")
        labels = read_grid(directory / e[key], LabelMap)
        rows.append((e["case_id"], classify(labels, cfg.classifier).value))
    _write_classes(rows, Path(args.out))


# -- entry point ----------------------------------------------------------

def _non_negative(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _global_flags(parser, suppress: bool) -> None:
    # accepted before or after the command; the subcommand copy only sets what was given
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    parser.add_argument("--config", help="run configuration JSON", **({"default": None} | kw))
    parser.add_argument("--seed", type=_non_negative, help="overrides the config seed",
                        **({"default": None} | kw))
    parser.add_argument("--jobs", type=_positive, help="case-level worker processes",
                        **({"default": 1} | kw))
    parser.add_argument("-v", "--verbose", action="store_true", **({"default": False} | kw))


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)

    parser = _Parser(prog="cardiac-cascade", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom-gen", parents=[common], help="generate a synthetic dataset")
    p.add_argument("out_dir")
    p.add_argument("--n-cases", type=int)
    p.add_argument("--fraction", type=float, help="pathological fraction")
    p.set_defaults(func=cmd_phantom_gen)

    p = sub.add_parser("preprocess", parents=[common], help="resample, z-score and assign folds")
    p.add_argument("in_dir")
    p.add_argument("out_dir")
    p.add_argument("--folds", type=_positive)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="train one stage on one fold split")
    p.add_argument("dataset", help="preprocessed dataset directory")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--fold", type=_non_negative, required=True, help="held-out fold")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--epochs", type=_positive)
    p.add_argument("--max-cases", type=_positive, help="use only the first N cases")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="run the cascade on raw images")
    p.add_argument("dataset")
    p.add_argument("--stage1", nargs="+", default=[], metavar="CKPT")
    p.add_argument("--stage2", nargs="+", default=[], metavar="CKPT")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fold", type=_non_negative, help="only predict this held-out fold")
    p.add_argument("--folds-from", help="preprocessed dataset holding the fold assignment")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against ground truth")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("classify", parents=[common], help="normal/pathological from label maps")
    p.add_argument("labels_dir")
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_classify)
    return parser


def _one_line(msg) -> str:
    return " ".join(str(msg).split()) or "unknown failure"


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        args.func(args, cfg)
    except (CliError, *EXPECTED_ERRORS) as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
