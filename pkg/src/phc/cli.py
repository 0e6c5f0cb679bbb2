"""Batch command line: simulate, fit, cut, evaluate, compare.

Every command writes a ``config.lock`` of its effective parameters into the
output directory; replaying that file reproduces byte-identical primary
outputs. Flags override config-file values, which override defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import baseline as bl
from .cluster import (
    PhcRunError,
    cut_tree,
    export_dendrogram,
    load_dendrogram,
    read_assignment_csv,
    run_phc,
    write_assignment_csv,
)
from .data import (
    DataError,
    apply_normal_scores,
    assign_splits,
    export_split_manifest,
    filter_min_group_size,
    load_csv,
    write_csv,
)
from .glm import ConvergenceError, GlmOptions
from .metrics import evaluate_clustering, write_metric_report, write_pr_csv, write_roc_csv
from .simulate import SimConfig, simulate, write_truth_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _paths(text):
    if isinstance(text, list):
        return text
    out = [tok.strip() for tok in str(text).split(",") if tok.strip()]
    if not out:
        raise ValueError("empty path list")
    return out


# (name, type, default, help) per subcommand; None defaults mean "required"
_COMMON_GLM = [
    ("folds", int, 5, "cross-validation folds for the penalty"),
    ("n_lambda", int, 50, "penalty path length"),
    ("threads", int, os.cpu_count() or 1, "worker threads (outputs never depend on it)"),
]
_OPTIONS = {
    "simulate": [
        ("out", str, None, "output directory"),
        ("seed", int, 0, "generator seed"),
        ("subgroups", int, 20, "number of subgroups"),
        ("clusters", int, 4, "number of true clusters"),
        ("rows", int, 1000, "rows per subgroup"),
        ("features", int, 30, "feature count"),
        ("binary_fraction", float, 0.5, "fraction of features thresholded to binary"),
    ],
    "fit": [
        ("input", str, None, "dataset CSV"),
        ("out", str, None, "output directory"),
        ("alpha", float, 1.0, "merge-prior concentration"),
        ("seed", int, 0, "split and CV seed"),
        ("min_group_size", int, 1, "drop subgroups smaller than this"),
        ("validation_fraction", float, 0.2, "validation share carved out first"),
        *_COMMON_GLM,
        ("no_cache", _bool, False, "diagnostic: rescore every pair each iteration"),
    ],
    "cut": [
        ("input", str, None, "dendrogram JSON"),
        ("out", str, None, "output directory"),
        ("threshold", float, 0.5, "cut below this merge posterior"),
    ],
    "evaluate": [
        ("input", str, None, "dataset CSV"),
        ("out", str, None, "output directory"),
        ("assignment", _paths, None, "assignment CSV; repeat the flag for several"),
        ("seed", int, 0, "split and CV seed (must match the fit)"),
        ("min_group_size", int, 1, "drop subgroups smaller than this"),
        ("validation_fraction", float, 0.2, "validation share carved out first"),
        *_COMMON_GLM,
    ],
    "compare": [
        ("input", str, None, "dataset CSV"),
        ("out", str, None, "output directory"),
        ("alpha", float, 1.0, "merge-prior concentration"),
        ("seed", int, 0, "split and CV seed"),
        ("min_group_size", int, 1, "drop subgroups smaller than this"),
        ("validation_fraction", float, 0.2, "validation share carved out first"),
        ("threshold", float, 0.5, "tree-cut threshold"),
        ("linkage", str, bl.COMPLETE, "baseline linkage: complete|average"),
        *_COMMON_GLM,
        ("no_cache", _bool, False, "diagnostic: rescore every pair each iteration"),
    ],
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for command, options in _OPTIONS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="flat key=value config file; flags override it")
        for name, typ, _default, help_text in options:
            flag = "--" + name.replace("_", "-")
            if typ is _bool:
                p.add_argument(flag, action="store_const", const=True, default=None, help=help_text)
            elif typ is _paths:
                p.add_argument(flag, action="append", default=None, help=help_text)
            else:
                p.add_argument(flag, type=typ, default=None, help=help_text)
    return parser


def _read_config_file(path, command: str) -> dict:
    known = {name: typ for name, typ, _d, _h in _OPTIONS[command]}
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}: line {line_no}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            value = value.strip()
            if key == "command":
                if value != command:
                    logger.warning("config file was written by %r, replaying under %r", value, command)
                continue
            if key not in known:
                raise DataError(f"{path}: line {line_no}: unknown key {key!r} for {command}")
            try:
                out[key] = known[key](value)
            except ValueError:
                raise DataError(f"{path}: line {line_no}: bad value for {key!r}: {value!r}") from None
    return out


def _effective_config(args: argparse.Namespace, command: str) -> dict:
    from_file = _read_config_file(args.config, command) if args.config else {}
    effective = {}
    for name, _typ, default, _help in _OPTIONS[command]:
        flag_value = getattr(args, name)
        if flag_value is not None:
            effective[name] = flag_value
        elif name in from_file:
            effective[name] = from_file[name]
        else:
            effective[name] = default
    missing = [name for name, value in effective.items() if value is None]
    if missing:
        raise DataError(f"missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return effective


def _write_lock(cfg: dict, command: str, out_dir: Path) -> None:
    lines = [f"command = {command}"]
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    (out_dir / "config.lock").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _ensure_out(cfg: dict) -> Path:
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _glm_opts(cfg: dict) -> GlmOptions:
    return GlmOptions(n_lambda=cfg["n_lambda"], n_folds=cfg["folds"])


def _load_pipeline(cfg: dict):
    """load -> min-size filter -> normal scores -> splits, the shared front half."""
    dataset = load_csv(cfg["input"])
    result = filter_min_group_size(dataset, cfg["min_group_size"])
    logger.info(
        "loaded %d rows, %d subgroups; retained fraction %.4f at min size %d",
        dataset.n_rows,
        len(dataset.subgroups),
        result.retained_fraction,
        cfg["min_group_size"],
    )
    dataset = apply_normal_scores(result.dataset)
    splits = assign_splits(dataset, validation_fraction=cfg["validation_fraction"], seed=cfg["seed"])
    return dataset, splits


def cmd_simulate(cfg: dict) -> int:
    out_dir = _ensure_out(cfg)
    sim_cfg = SimConfig(
        n_subgroups=cfg["subgroups"],
        n_true_clusters=cfg["clusters"],
        rows_per_subgroup=cfg["rows"],
        n_features=cfg["features"],
        binary_fraction=cfg["binary_fraction"],
        seed=cfg["seed"],
    )
    dataset, truth = simulate(sim_cfg)
    write_csv(dataset, out_dir / "dataset.csv")
    write_truth_csv(truth.assignment, out_dir / "truth.csv")
    _write_lock(cfg, "simulate", out_dir)
    logger.info("wrote %d rows to %s", dataset.n_rows, out_dir / "dataset.csv")
    return EXIT_OK


def cmd_fit(cfg: dict) -> int:
    out_dir = _ensure_out(cfg)
    merge_log = logging.FileHandler(out_dir / "merges.log", mode="w", encoding="utf-8")
    merge_log.setFormatter(logging.Formatter("%(message)s"))
    cluster_logger = logging.getLogger("phc.cluster")
    previous_level = cluster_logger.level
    cluster_logger.setLevel(logging.INFO)
    cluster_logger.addHandler(merge_log)
    try:
        dataset, splits = _load_pipeline(cfg)
        export_split_manifest(splits, out_dir / "splits.csv")
        try:
            dendrogram = run_phc(
                dataset,
                splits,
                alpha=cfg["alpha"],
                glm_opts=_glm_opts(cfg),
                seed=cfg["seed"],
                n_threads=cfg["threads"],
                use_cache=not cfg["no_cache"],
            )
        except PhcRunError as exc:
            if exc.dendrogram is not None:
                export_dendrogram(exc.dendrogram, out_dir / "dendrogram.partial.json")
            raise
        export_dendrogram(dendrogram, out_dir / "dendrogram.json")
        _write_lock(cfg, "fit", out_dir)
        logger.info("wrote %s", out_dir / "dendrogram.json")
    finally:
        cluster_logger.removeHandler(merge_log)
        cluster_logger.setLevel(previous_level)
        merge_log.close()
    return EXIT_OK


def cmd_cut(cfg: dict) -> int:
    out_dir = _ensure_out(cfg)
    dendrogram = load_dendrogram(cfg["input"])
    assignment = cut_tree(dendrogram, threshold=cfg["threshold"])
    write_assignment_csv(assignment, out_dir / "clusters.csv")
    _write_lock(cfg, "cut", out_dir)
    logger.info("%d clusters at threshold %g", assignment.n_clusters, cfg["threshold"])
    return EXIT_OK


def cmd_evaluate(cfg: dict) -> int:
    out_dir = _ensure_out(cfg)
    dataset, splits = _load_pipeline(cfg)
    reports = {}
    for path in cfg["assignment"]:
        name = Path(path).stem
        assignment = read_assignment_csv(path)
        report = evaluate_clustering(
            dataset, splits, assignment, glm_opts=_glm_opts(cfg), seed=cfg["seed"],
            n_threads=cfg["threads"],
        )
        reports[name] = report
        write_metric_report(report, out_dir / f"metrics_{name}.json")
        write_roc_csv(report.pooled.y_true, report.pooled.scores, out_dir / f"roc_{name}.csv")
        write_pr_csv(report.pooled.y_true, report.pooled.scores, out_dir / f"pr_{name}.csv")
        logger.info("%s: AUROC=%.4f AUPRC=%.4f n=%d", name, report.auroc, report.auprc, report.n)
    _write_lock(cfg, "evaluate", out_dir)
    return EXIT_OK


def cmd_compare(cfg: dict) -> int:
    out_dir = _ensure_out(cfg)
    dataset, splits = _load_pipeline(cfg)
    glm_opts = _glm_opts(cfg)

    dendrogram = run_phc(
        dataset,
        splits,
        alpha=cfg["alpha"],
        glm_opts=glm_opts,
        seed=cfg["seed"],
        n_threads=cfg["threads"],
        use_cache=not cfg["no_cache"],
    )
    export_dendrogram(dendrogram, out_dir / "dendrogram.json")
    phc_assignment = cut_tree(dendrogram, threshold=cfg["threshold"])
    k = phc_assignment.n_clusters

    gids, means = bl.subgroup_means(dataset)
    linkage = bl.linkage_cluster(bl.euclidean_distances(means), cfg["linkage"], labels=gids)
    bl.export_linkage_dendrogram(linkage, out_dir / "linkage.json")
    linkage_assignment = bl.cut_k(linkage, k)

    singleton_assignment = {g: i + 1 for i, g in enumerate(dataset.subgroups)}

    rows = []
    combined = {}
    for name, assignment in (
        ("phc", phc_assignment),
        ("linkage", linkage_assignment),
        ("singleton", singleton_assignment),
    ):
        report = evaluate_clustering(
            dataset, splits, assignment, glm_opts=glm_opts, seed=cfg["seed"], n_threads=cfg["threads"]
        )
        n_clusters = (
            assignment.n_clusters
            if hasattr(assignment, "n_clusters")
            else len(set(assignment.values()))
        )
        combined[name] = {"n_clusters": n_clusters, **report.to_json_dict()}
        rows.append((name, n_clusters, report.auroc, report.auprc, report.n, report.prevalence))
        if hasattr(assignment, "mapping"):
            write_assignment_csv(assignment, out_dir / f"clusters_{name}.csv")
        logger.info("%s (k=%d): AUROC=%.4f AUPRC=%.4f", name, n_clusters, report.auroc, report.auprc)

    with open(out_dir / "compare.json", "w", encoding="utf-8") as fh:
        json.dump(combined, fh, indent=2)
        fh.write("\n")
    with open(out_dir / "compare.csv", "w", encoding="utf-8") as fh:
        fh.write("name,n_clusters,auroc,auprc,n,prevalence\n")
        for name, n_clusters, rauroc, rauprc, n, prev in rows:
            fh.write(f"{name},{n_clusters},{rauroc!r},{rauprc!r},{n},{prev!r}\n")
    _write_lock(cfg, "compare", out_dir)
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(sys.argv[1:] if argv is None else argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _effective_config(args, args.command)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "cut":
            return cmd_cut(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "compare":
            return cmd_compare(cfg)
        raise DataError(f"unknown command {args.command!r}")
    except (DataError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_INPUT
    except (ConvergenceError, PhcRunError, FloatingPointError) as exc:
        logger.error("%s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
