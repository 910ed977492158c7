"""Command-line interface: one subcommand per pipeline stage.

Subcommands: prep-labels, generate, resample, ensemble, postproc, evaluate,
volumetry, split-folds. Exit codes: 0 success, 1 usage error, 2 data error,
3 internal error. Every run writes a machine-readable manifest (inputs,
effective config and its hash, seed, versions) next to its outputs; reruns
with identical inputs, config, and seed reproduce outputs bit for bit.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .errors import DataError
from .genmodel import (
    GenerativeConfig,
    _load_config_mapping,
    generate_sample,
    sample_seed_sequence,
)
from .labelprep import prepare_training_labels
from .metrics import DEFAULT_EVAL_LABELS, aggregate, evaluate
from .postproc import PostprocPolicy, ProbabilityStack, apply_policy, ensemble
from .resample import ResampleSpec, resample_image, resample_labelmap
from .volume import read_volume, write_volume
from .volumetry import RoiVolumeRecord, mann_whitney_u

THREADS_ENV = "VOXTK_THREADS"


class UsageError(Exception):
    """Bad command line; maps to exit code 1."""


# ---------------------------------------------------------------------------
# Pipeline configuration

_PIPELINE_KEYS = ("target_spacing", "seed", "threads", "folds", "train_fraction")


@dataclass(frozen=True)
class PipelineConfig:
    """Effective run configuration: generative priors plus plumbing knobs."""

    generative: GenerativeConfig
    resample: ResampleSpec
    seed: int = 0
    threads: int = 1
    folds: int = 5
    train_fraction: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError(f"train_fraction must be in (0, 1), "
                            f"got {self.train_fraction}")
        if self.folds < 1:
            raise DataError(f"fold count must be >= 1, got {self.folds}")
        if self.threads < 1:
            raise DataError(f"thread count must be >= 1, got {self.threads}")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "PipelineConfig":
        mapping = dict(mapping)
        spacing = mapping.pop("target_spacing", 0.7)
        if isinstance(spacing, (int, float)):
            spacing = (float(spacing),) * 3
        seed = int(mapping.pop("seed", 0))
        threads = int(mapping.pop("threads", 1))
        folds = int(mapping.pop("folds", 5))
        fraction = float(mapping.pop("train_fraction", 0.8))
        generative = GenerativeConfig.from_mapping(mapping)  # rejects unknowns
        return cls(generative=generative,
                   resample=ResampleSpec(target_spacing=tuple(spacing)),
                   seed=seed, threads=threads, folds=folds,
                   train_fraction=fraction)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        return cls.from_mapping(_load_config_mapping(path))

    def to_dict(self) -> dict:
        out = self.generative.to_dict()
        out.update(target_spacing=list(self.resample.target_spacing),
                   seed=self.seed, threads=self.threads, folds=self.folds,
                   train_fraction=self.train_fraction)
        return out


def config_hash(config: dict) -> str:
    """Stable hash of an effective-parameter dict (canonical JSON)."""
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def write_manifest(out_path: Path, command: str, inputs: Sequence[str],
                   config: dict, seed: Optional[int]) -> Path:
    """Write the run manifest next to the outputs and return its path."""
    manifest = {
        "command": command,
        "inputs": [str(p) for p in inputs],
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "versions": {
            "voxtk": __version__,
            "numpy": np.__version__,
            "python": ".".join(map(str, sys.version_info[:3])),
        },
    }
    out_path = Path(out_path)
    if out_path.is_dir():
        path = out_path / "run_manifest.json"
    else:
        path = out_path.with_name(out_path.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# Fold splitting

@dataclass(frozen=True)
class FoldAssignment:
    """Per-fold train/validation subject lists; folds partition the cohort."""

    k: int
    seed: int
    folds: List[dict]
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "degenerate": self.degenerate,
                "folds": self.folds}


def split_folds(subjects: Sequence[str], k: int, seed: int) -> FoldAssignment:
    """Seeded shuffle then contiguous k-way partition.

    Fold i validates partition i and trains on the rest; every subject
    validates exactly once. ``k=1`` is allowed but flagged: the single fold
    both trains and validates on everything.
    """
    subjects = sorted(str(s) for s in subjects)
    if len(set(subjects)) != len(subjects):
        raise DataError("duplicate subject ids in fold split")
    if len(subjects) < k:
        raise DataError(f"cannot split {len(subjects)} subjects into {k} folds")
    if k < 1:
        raise DataError(f"fold count must be >= 1, got {k}")
    order = np.random.default_rng(seed).permutation(len(subjects))
    shuffled = [subjects[i] for i in order]
    if k == 1:
        return FoldAssignment(1, seed, [{"fold": 0, "train": shuffled,
                                         "val": shuffled}], degenerate=True)
    chunks = np.array_split(np.arange(len(shuffled)), k)
    folds = []
    for i, chunk in enumerate(chunks):
        val = [shuffled[j] for j in chunk]
        train = [s for s in shuffled if s not in set(val)]
        folds.append({"fold": i, "train": train, "val": val})
    return FoldAssignment(k, seed, folds)


# ---------------------------------------------------------------------------
# Helpers

def _case_name(path: Path) -> str:
    name = path.name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[:-len(suffix)]
    return path.stem


def _collect_volumes(path: Path) -> List[Path]:
    path = Path(path)
    if path.is_file():
        return [path]
    if path.is_dir():
        files = sorted(p for p in path.iterdir()
                       if p.name.endswith((".nii", ".nii.gz")))
        if not files:
            raise DataError(f"no NIfTI volumes found in {path}")
        return files
    raise DataError(f"no such file or directory: {path}")


def _resolve_threads(args, cfg_threads: int) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise DataError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    return max(1, cfg_threads)


def _load_pipeline_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config \
        else PipelineConfig.from_mapping({})
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


# ---------------------------------------------------------------------------
# Subcommands

def _cmd_prep_labels(args) -> int:
    labels = read_volume(args.in_labels, kind="labels")
    image = read_volume(args.image, kind="image") if args.image else None
    new_labels, _, stripped = prepare_training_labels(labels, image,
                                                      radius=args.radius)
    out_labels = Path(args.out_labels)
    out_labels.parent.mkdir(parents=True, exist_ok=True)
    write_volume(new_labels, out_labels)
    inputs = [args.in_labels]
    if image is not None:
        if not args.out_image:
            raise UsageError("--out-image is required when --image is given")
        out_image = Path(args.out_image)
        out_image.parent.mkdir(parents=True, exist_ok=True)
        write_volume(stripped, out_image)
        inputs.append(args.image)
    write_manifest(out_labels, "prep-labels", inputs,
                   {"radius": args.radius}, None)
    return 0


def _cmd_generate(args) -> int:
    cfg = _load_pipeline_config(args)
    threads = _resolve_threads(args, cfg.threads)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = _collect_volumes(Path(args.labels))

    if args.n_per_subject < 1:
        raise UsageError("--n-per-subject must be >= 1")

    tasks = []
    for path in files:
        case = _case_name(path)
        labels = read_volume(path, kind="labels")
        for k in range(args.n_per_subject):
            tasks.append((case, k, labels))

    train_dir = None
    if args.export_training_layout:
        train_dir = out_dir
        (train_dir / "imagesTr").mkdir(exist_ok=True)
        (train_dir / "labelsTr").mkdir(exist_ok=True)

    def run_one(task):
        case, k, labels = task
        stream = sample_seed_sequence(cfg.seed, case, k)
        img, target = generate_sample(labels, cfg.generative, stream)
        write_volume(img, out_dir / f"{case}_{k}_img.nii.gz")
        write_volume(target, out_dir / f"{case}_{k}_lbl.nii.gz")
        if train_dir is not None:
            write_volume(img, train_dir / "imagesTr" / f"{case}_{k}_0000.nii.gz")
            write_volume(target, train_dir / "labelsTr" / f"{case}_{k}.nii.gz")
        return case, k

    if threads == 1:
        for task in tasks:
            run_one(task)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_one, tasks))

    write_manifest(out_dir, "generate", [args.labels], cfg.to_dict(), cfg.seed)
    if args.verbose:
        print(f"generated {len(tasks)} pairs into {out_dir}")
    return 0


def _cmd_resample(args) -> int:
    parts = [float(v) for v in str(args.target_res).split(",")]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise UsageError("--target-res takes one value or three comma-separated")
    spec = ResampleSpec(target_spacing=tuple(parts))
    if args.kind == "image":
        vol = read_volume(args.in_path, kind="image")
        out = resample_image(vol, spec)
    else:
        vol = read_volume(args.in_path, kind="labels")
        out = resample_labelmap(vol, spec)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_volume(out, out_path)
    write_manifest(out_path, "resample", [args.in_path],
                   {"target_spacing": parts, "kind": args.kind}, None)
    return 0


def _cmd_ensemble(args) -> int:
    files = _collect_volumes(Path(args.probs))
    stacks = [ProbabilityStack.from_file(p) for p in files]
    out = ensemble(stacks)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_volume(out, out_path)
    write_manifest(out_path, "ensemble", [str(p) for p in files], {}, None)
    return 0


def _cmd_postproc(args) -> int:
    labels = read_volume(args.in_path, kind="labels")
    try:
        policy = PostprocPolicy.from_json(Path(args.policy).read_text())
    except OSError as exc:
        raise DataError(f"cannot read policy {args.policy}: {exc}") from exc
    out = apply_policy(labels, policy)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_volume(out, out_path)
    write_manifest(out_path, "postproc", [args.in_path, args.policy],
                   {"policy": sorted(policy.enabled)}, None)
    return 0


def _parse_label_list(text: str):
    if text == "default":
        return DEFAULT_EVAL_LABELS
    try:
        labels = tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise UsageError(f"--labels expects 'default' or a comma list: {text!r}") \
            from exc
    if not labels:
        raise UsageError("--labels list is empty")
    return labels


def _pair_files(gt: Path, pred: Path):
    gt_files = _collect_volumes(gt)
    pred_files = _collect_volumes(pred)
    if len(gt_files) == 1 and len(pred_files) == 1:
        return [(_case_name(gt_files[0]), gt_files[0], pred_files[0])]
    gt_map = {_case_name(p): p for p in gt_files}
    pred_map = {_case_name(p): p for p in pred_files}
    common = sorted(set(gt_map) & set(pred_map))
    if not common:
        raise DataError("no matching subject filenames between --gt and --pred")
    return [(c, gt_map[c], pred_map[c]) for c in common]


def _summary_dict(values) -> Optional[dict]:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return None
    s = aggregate(finite)
    return {"median": s.median, "ci_low": s.ci_low, "ci_high": s.ci_high}


def _cmd_evaluate(args) -> int:
    labels = _parse_label_list(args.labels)
    pairs = _pair_files(Path(args.gt), Path(args.pred))
    rows = []
    for case, gt_path, pred_path in pairs:
        gt = read_volume(gt_path, kind="labels")
        pred = read_volume(pred_path, kind="labels")
        for rec in evaluate(gt, pred, labels=labels):
            rows.append((case, rec.label, rec.dsc, rec.asd_mm))

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["subject", "label", "dsc", "asd_mm"])
        for case, label, d, a in rows:
            writer.writerow([case, label, f"{d:.6f}",
                             "nan" if math.isnan(a) else f"{a:.6f}"])

    per_label = {}
    for label in labels:
        dscs = [r[2] for r in rows if r[1] == label]
        asds = [r[3] for r in rows if r[1] == label]
        per_label[str(label)] = {"dsc": _summary_dict(dscs),
                                 "asd_mm": _summary_dict(asds)}
    summary = {
        "n_subjects": len(pairs),
        "labels": list(labels),
        "per_label": per_label,
        "overall": {"dsc": _summary_dict([r[2] for r in rows]),
                    "asd_mm": _summary_dict([r[3] for r in rows])},
    }
    summary_path = out_path.with_name(out_path.stem + ".summary.json")
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    write_manifest(out_path, "evaluate", [args.gt, args.pred],
                   {"labels": list(labels)}, None)
    if args.verbose:
        print(f"evaluated {len(pairs)} pairs, {len(rows)} records -> {out_path}")
    return 0


def _read_two_column_csv(path: Path, what: str) -> Dict[str, str]:
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {what} file {path}: {exc}") from exc
    out: Dict[str, str] = {}
    for i, row in enumerate(csv.reader(text.splitlines())):
        if not row or not "".join(row).strip():
            continue
        if len(row) < 2:
            raise DataError(f"{what} file {path}: row {i + 1} needs 2 columns")
        key, value = row[0].strip(), row[1].strip()
        if i == 0 and key.lower() == "subject":
            continue  # header
        out[key] = value
    if not out:
        raise DataError(f"{what} file {path} is empty")
    return out


def _cmd_volumetry(args) -> int:
    rois = _parse_label_list(args.rois)
    groups = _read_two_column_csv(Path(args.groups), "groups")
    tiv_raw = _read_two_column_csv(Path(args.tiv), "tiv")
    tiv = {}
    for subject, value in tiv_raw.items():
        try:
            tiv[subject] = float(value)
        except ValueError as exc:
            raise DataError(f"tiv for subject {subject} is not numeric: "
                            f"{value!r}") from exc

    group_names = sorted(set(groups.values()))
    if len(group_names) != 2:
        raise DataError(f"volumetry needs exactly 2 groups, got {group_names}")

    labels_dir = Path(args.labels_dir)
    records = []
    for subject in sorted(groups):
        if subject not in tiv:
            raise DataError(f"subject {subject} missing from tiv file")
        candidates = [labels_dir / f"{subject}.nii.gz", labels_dir / f"{subject}.nii"]
        path = next((p for p in candidates if p.exists()), None)
        if path is None:
            raise DataError(f"no label map for subject {subject} in {labels_dir}")
        vol = read_volume(path, kind="labels")
        for roi in rois:
            records.append(RoiVolumeRecord.compute(subject, vol, roi, tiv[subject]))

    m_tests = args.m_tests if args.m_tests else len(rois) * args.n_methods
    tests = {}
    for roi in rois:
        by_group = {g: [r.normalized for r in records
                        if r.label == roi and groups[r.subject] == g]
                    for g in group_names}
        res = mann_whitney_u(by_group[group_names[0]], by_group[group_names[1]],
                             alpha=args.alpha, m_tests=m_tests)
        tests[str(roi)] = {
            "groups": group_names,
            "n": [len(by_group[g]) for g in group_names],
            "u": res.u,
            "p_value": res.p_value,
            "threshold": res.threshold,
            "significant": res.significant,
            "method": res.method,
        }

    report = {
        "alpha": args.alpha,
        "m_tests": m_tests,
        "rois": list(rois),
        "tests": tests,
        "volumes": [{"subject": r.subject, "label": r.label,
                     "raw_mm3": r.raw_mm3, "tiv_mm3": r.tiv_mm3,
                     "normalized": r.normalized, "group": groups[r.subject]}
                    for r in records],
    }
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report, indent=2) + "\n")
    write_manifest(out_path, "volumetry",
                   [args.labels_dir, args.groups, args.tiv],
                   {"rois": list(rois), "alpha": args.alpha, "m_tests": m_tests},
                   None)
    return 0


def _cmd_split_folds(args) -> int:
    src = Path(args.subjects)
    if src.is_dir():
        subjects = [_case_name(p) for p in _collect_volumes(src)]
    elif src.is_file():
        subjects = [line.strip() for line in src.read_text().splitlines()
                    if line.strip()]
    else:
        raise DataError(f"no such file or directory: {src}")
    seed = args.seed if args.seed is not None else 0
    assignment = split_folds(subjects, args.k, seed)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(assignment.to_dict(), indent=2) + "\n")
    write_manifest(out_path, "split-folds", [args.subjects],
                   {"k": args.k}, seed)
    return 0


# ---------------------------------------------------------------------------
# Parser / entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_global_flags(parser, suppress=False):
    # the same flags parse before or after the subcommand; the subparser
    # copies use SUPPRESS so an absent flag keeps the top-level value
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default,
                        help="pipeline config file (JSON or TOML)")
    parser.add_argument("--seed", type=int, default=default, help="master seed")
    parser.add_argument("--threads", type=int, default=default,
                        help=f"worker threads (or ${THREADS_ENV})")
    parser.add_argument("--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def build_parser() -> _Parser:
    parser = _Parser(prog="voxtk", description=__doc__.splitlines()[0])
    _add_global_flags(parser)
    common = _Parser(add_help=False)
    _add_global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep-labels", parents=[common],
                       help="add the extra-cerebral label and "
                            "skull-strip the image")
    p.add_argument("--in", dest="in_labels", required=True)
    p.add_argument("--image", default=None)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--out-image", default=None)
    p.add_argument("--radius", type=int, default=None,
                   help="dilation radius in voxels (default: resolution rule)")
    p.set_defaults(func=_cmd_prep_labels)

    p = sub.add_parser("generate", parents=[common], help="generate synthetic training pairs")
    p.add_argument("--labels", required=True, help="label map file or directory")
    p.add_argument("--n-per-subject", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--export-training-layout", action="store_true",
                   help="also write imagesTr/<case>_<k>_0000 + labelsTr/<case>_<k>")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("resample", parents=[common], help="resample a volume to a target resolution")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--target-res", required=True)
    p.add_argument("--kind", choices=("image", "labels"), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_resample)

    p = sub.add_parser("ensemble", parents=[common], help="average probability stacks and argmax")
    p.add_argument("--probs", required=True,
                   help="directory of 4D probability stacks (4th dim = label)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ensemble)

    p = sub.add_parser("postproc", parents=[common], help="apply keep-largest-component policy")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--policy", required=True,
                   help="JSON list of enabled label indices")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_postproc)

    p = sub.add_parser("evaluate", parents=[common], help="per-label DSC/ASD metrics")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--labels", default="default",
                   help="'default' (all structures except WM-hypointensities) "
                        "or comma list")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("volumetry", parents=[common], help="ROI volumes and group statistics")
    p.add_argument("--labels-dir", required=True)
    p.add_argument("--groups", required=True, help="CSV: subject,group")
    p.add_argument("--tiv", required=True, help="CSV: subject,tiv_mm3")
    p.add_argument("--rois", required=True, help="comma list of label indices")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--n-methods", type=int, default=1,
                   help="methods compared; m = rois x methods")
    p.add_argument("--m-tests", type=int, default=None,
                   help="override the Bonferroni test count")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=_cmd_volumetry)

    p = sub.add_parser("split-folds", parents=[common], help="deterministic cross-validation split")
    p.add_argument("--subjects", required=True,
                   help="text file of ids or directory of volumes")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_split_folds)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        code = exc.code if isinstance(exc.code, int) else 0
        return code
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
