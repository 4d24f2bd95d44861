"""Command-line entry point wiring the scoring, ranking and bandit modules.

Subcommands: ingest, score, rank, bandit-run, prompts, report-auc.
Exit codes: 0 success, 2 configuration/input error, 3 runtime/learner error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bandit import ArmSpec
from .config import (
    BASE_METRICS,
    ConfigError,
    RunConfig,
    SUPPORTED_METRICS,
    normalize_metric,
)
from .images import ImageError, read_image
from .metrics import (
    MetricError,
    ProbMatrix,
    aggregate_scores,
    fit_gaussian,
    pair_nearest_real,
    per_image_fid_scores,
    per_image_is_scores,
    psnr,
    ssim,
)
from .promptgen import (
    AttributePool,
    PromptgenError,
    ProviderConfig,
    ProviderError,
    create_prompts,
    extract_attributes,
    generate_images,
    load_templates,
)
from .store import EmbeddingSet, StoreError, ingest_embeddings
from .trainer import (
    ExternalLearner,
    LearnerError,
    SurrogateLearner,
    auc_report,
    run_training,
)
from .usability import (
    UsabilityError,
    compute_dps_scores,
    compute_fcs_scores,
    select_top_m,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _fmt(value: float) -> str:
    return repr(float(value))


@dataclass
class ScoreTable:
    """Per-image scores for every computed metric, in synthetic set order."""

    image_ids: list[str]
    scores: dict[str, dict[str, float]]
    dps_components: dict[str, tuple[float, float, float]] = field(default_factory=dict)


def _require_set(cfg: RunConfig, key: str, why: str) -> EmbeddingSet:
    if key not in cfg.data:
        raise ConfigError(f"data.{key} is required {why}")
    return ingest_embeddings(cfg.data[key])


def _image_file(directory: Path, image_id: str) -> Path:
    for ext in (".png", ".ppm"):
        candidate = directory / f"{image_id}{ext}"
        if candidate.exists():
            return candidate
    raise ConfigError(f"no image file (.png/.ppm) for {image_id!r} under {directory}")


def _read_probs_csv(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "image_id":
            raise ConfigError(f"{path}: expected header starting with image_id")
        rows = {}
        for row in reader:
            if not row:
                continue
            rows[row[0]] = np.array([float(x) for x in row[1:]])
    return rows


def _expand_metrics(requested: list[str]) -> list[str]:
    need = {normalize_metric(m) for m in requested}
    if need & {"me", "md", "mx", "mn"}:
        need |= set(BASE_METRICS)
    if "mean_dps_fcs" in need:
        need |= {"dps", "fcs"}
    return [m for m in SUPPORTED_METRICS if m in need]


def compute_score_table(cfg: RunConfig, requested: list[str]) -> ScoreTable:
    """Compute every requested metric (plus dependencies) per synthetic image."""
    metrics_needed = _expand_metrics(requested)
    need_mid = bool({"dps", "ssim", "psnr", "fid"} & set(metrics_needed))
    syn_mid = real_mid = syn_high = real_high = None
    if need_mid:
        syn_mid = _require_set(cfg, "syn_midlevel", "for mid-level metrics")
        real_mid = _require_set(cfg, "real_midlevel", "for mid-level metrics")
    if "fcs" in metrics_needed:
        syn_high = _require_set(cfg, "syn_highlevel", "when FCS is requested")
        real_high = _require_set(cfg, "real_highlevel", "when FCS is requested")

    universe = syn_mid if syn_mid is not None else syn_high
    if universe is None:
        raise ConfigError("no synthetic embedding set available for scoring")
    ids = [r.image_id for r in universe.records]
    if syn_mid is not None and syn_high is not None:
        if {r.image_id for r in syn_high.records} != set(ids):
            raise ConfigError("synthetic mid-level and high-level sets cover different ids")

    table = ScoreTable(image_ids=ids, scores={})
    if "dps" in metrics_needed:
        triples = compute_dps_scores(real_mid, syn_mid, (cfg.usability.w_p, cfg.usability.w_d))
        table.dps_components = triples
        table.scores["dps"] = {i: triples[i][0] for i in ids}
    if "fcs" in metrics_needed:
        table.scores["fcs"] = compute_fcs_scores(
            real_high,
            syn_high,
            cfg.usability.k,
            seed=cfg.seed,
            eps=cfg.usability.eps_kl,
            cap=cfg.usability.phi_cap,
        )
    if {"ssim", "psnr"} & set(metrics_needed):
        for key in ("real_dir", "syn_dir"):
            if key not in cfg.images:
                raise ConfigError(f"images.{key} is required for SSIM/PSNR")
        pairs = pair_nearest_real(syn_mid, real_mid)
        ssim_scores: dict[str, float] = {}
        psnr_scores: dict[str, float] = {}
        for image_id in ids:
            syn_img = read_image(_image_file(cfg.images["syn_dir"], image_id))
            real_img = read_image(_image_file(cfg.images["real_dir"], pairs[image_id]))
            if "ssim" in metrics_needed:
                ssim_scores[image_id] = ssim(syn_img, real_img)
            if "psnr" in metrics_needed:
                psnr_scores[image_id] = psnr(syn_img, real_img)
        if "ssim" in metrics_needed:
            table.scores["ssim"] = ssim_scores
        if "psnr" in metrics_needed:
            table.scores["psnr"] = psnr_scores
    if "is" in metrics_needed:
        if cfg.probs_path is None:
            raise ConfigError("probs.path is required for the IS metric")
        rows = _read_probs_csv(cfg.probs_path)
        missing = [i for i in ids if i not in rows]
        if missing:
            raise ConfigError(f"probs file lacks rows for: {missing[:5]}")
        matrix = ProbMatrix(np.stack([rows[i] for i in ids]))
        kls = per_image_is_scores(matrix)
        table.scores["is"] = {i: float(k) for i, k in zip(ids, kls)}
    if "fid" in metrics_needed:
        real_stats = fit_gaussian(real_mid)
        deltas = per_image_fid_scores(real_stats, syn_mid.vectors().astype(np.float64))
        table.scores["fid"] = {i: float(d) for i, d in zip(ids, deltas)}
    if "mean_dps_fcs" in metrics_needed:
        agg = aggregate_scores(
            {m: [table.scores[m][i] for i in ids] for m in ("dps", "fcs")}, "ME"
        )
        table.scores["mean_dps_fcs"] = {i: float(v) for i, v in zip(ids, agg)}
    for kind in ("me", "md", "mx", "mn"):
        if kind in metrics_needed:
            agg = aggregate_scores(
                {m: [table.scores[m][i] for i in ids] for m in BASE_METRICS}, kind
            )
            table.scores[kind] = {i: float(v) for i, v in zip(ids, agg)}
    return table


def write_metrics_csv(path: Path, table: ScoreTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "metric", "score"])
        for metric in SUPPORTED_METRICS:
            if metric not in table.scores:
                continue
            for image_id in table.image_ids:
                writer.writerow([image_id, metric, _fmt(table.scores[metric][image_id])])


def read_metrics_csv(path: Path) -> tuple[list[str], dict[str, dict[str, float]]]:
    ids: list[str] = []
    seen = set()
    scores: dict[str, dict[str, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["image_id", "metric", "score"]:
            raise ConfigError(f"{path}: expected header image_id,metric,score")
        for row in reader:
            if not row:
                continue
            image_id, metric, score = row
            scores.setdefault(metric, {})[image_id] = float(score)
            if image_id not in seen:
                seen.add(image_id)
                ids.append(image_id)
    return ids, scores


def write_usability_outputs(out_dir: Path, table: ScoreTable) -> None:
    rows = []
    for image_id in table.image_ids:
        psi = p_term = d_term = None
        if table.dps_components:
            psi, p_term, d_term = table.dps_components[image_id]
        phi = table.scores.get("fcs", {}).get(image_id)
        rows.append(
            {"image_id": image_id, "psi": psi, "phi": phi, "P": p_term, "D": d_term}
        )
    with open(out_dir / "usability.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "psi", "phi", "P", "D"])
        for row in rows:
            writer.writerow(
                [row["image_id"]]
                + ["" if row[k] is None else _fmt(row[k]) for k in ("psi", "phi", "P", "D")]
            )
    (out_dir / "usability.json").write_text(json.dumps(rows, indent=1), encoding="utf-8")


def cmd_score(args: argparse.Namespace) -> int:
    cfg = RunConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir is not None:
        cfg.out_dir = Path(args.out_dir)
    if args.metrics:
        cfg.metrics = [normalize_metric(m) for m in args.metrics.split(",")]
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    table = compute_score_table(cfg, cfg.metrics)
    write_metrics_csv(cfg.out_dir / "metrics.csv", table)
    if {"dps", "fcs"} & set(table.scores):
        write_usability_outputs(cfg.out_dir, table)
    print(
        json.dumps(
            {
                "images": len(table.image_ids),
                "metrics": sorted(table.scores),
                "out_dir": str(cfg.out_dir),
            }
        )
    )
    return EXIT_OK


def cmd_rank(args: argparse.Namespace) -> int:
    metric = normalize_metric(args.metric)
    _, scores = read_metrics_csv(Path(args.scores))
    if metric not in scores:
        raise ConfigError(f"metric {metric!r} not present in {args.scores}")
    ranked = select_top_m(list(scores[metric].items()), args.m)
    payload = json.dumps({"metric": metric, "m": args.m, "ids": ranked}, indent=1)
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
    print(payload)
    return EXIT_OK


def _build_arms(
    cfg: RunConfig, ids: list[str], scores: dict[str, dict[str, float]]
) -> list[ArmSpec]:
    if not cfg.arms:
        raise ConfigError("bandit.arms must list at least one arm")
    if cfg.m > len(ids):
        raise ConfigError(f"m={cfg.m} exceeds the {len(ids)} scored synthetic images")
    arms = []
    for name in cfg.arms:
        metric = normalize_metric(name)
        if metric not in scores:
            raise ConfigError(f"arm {name!r}: metric {metric!r} missing from scores file")
        per_image = [(i, scores[metric][i]) for i in ids]
        arms.append(ArmSpec(name=name, image_ids=tuple(select_top_m(per_image, cfg.m))))
    return arms


def cmd_bandit_run(args: argparse.Namespace) -> int:
    cfg = RunConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir is not None:
        cfg.out_dir = Path(args.out_dir)
    if args.no_reset_on_switch:
        cfg.reset_on_switch = False
    scores_path = cfg.scores_csv or (cfg.out_dir / "metrics.csv")
    if not Path(scores_path).exists():
        raise ConfigError(f"scores file {scores_path} not found; run `score` first")
    ids, scores = read_metrics_csv(Path(scores_path))
    arms = _build_arms(cfg, ids, scores)

    closer = None
    if cfg.learner.kind == "surrogate":
        missing = [a.name for a in arms if a.name not in cfg.learner.qualities]
        if missing:
            raise ConfigError(f"learner.qualities missing for arms: {missing}")
        learner: SurrogateLearner | ExternalLearner = SurrogateLearner.for_arms(
            arms,
            cfg.learner.qualities,
            base=cfg.learner.base,
            cap=cfg.learner.cap,
            rate=cfg.learner.rate,
            noise=cfg.learner.noise,
            seed=cfg.seed,
        )
    else:
        if not cfg.learner.command:
            raise ConfigError("learner.command is required for the external learner")
        learner = ExternalLearner(cfg.learner.command)
        closer = learner

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    log_path = cfg.out_dir / "runlog.jsonl"
    if log_path.exists():
        log_path.unlink()
    try:
        records = run_training(
            arms,
            learner,
            total_epochs=cfg.total_epochs,
            patience=cfg.patience,
            seed=cfg.seed,
            log_path=log_path,
            state_path=cfg.out_dir / "bandit_state.json",
            reset_on_switch=cfg.reset_on_switch,
        )
    finally:
        if closer is not None:
            closer.close()

    final = records[-1]
    total = sum(final.counts)
    switches = sum(1 for a, b in zip(records, records[1:]) if a.arm_index != b.arm_index)
    summary = {
        "arms": [a.name for a in arms],
        "total_epochs": cfg.total_epochs,
        "seed": cfg.seed,
        "final_accuracy": final.val_accuracy,
        "best_accuracy": max(r.val_accuracy for r in records),
        "pull_counts": {a.name: final.counts[i] for i, a in enumerate(arms)},
        "pull_shares": {a.name: final.counts[i] / total for i, a in enumerate(arms)},
        "arm_changes": switches,
        "run_log": log_path.name,
    }
    (cfg.out_dir / "summary.json").write_text(json.dumps(summary, indent=1), encoding="utf-8")
    print(json.dumps(summary, indent=1))
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    emb_set = ingest_embeddings(args.path)
    print(
        json.dumps(
            {
                "dataset_tag": emb_set.dataset_tag,
                "domain": emb_set.domain,
                "extractor": emb_set.extractor,
                "dim": emb_set.dim,
                "num_classes": emb_set.num_classes,
                "num_records": len(emb_set.records),
            }
        )
    )
    return EXIT_OK


def cmd_prompts(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    provider = ProviderConfig(
        endpoint=args.endpoint,
        auth_env=args.auth_env,
        mode="fixture" if args.fixtures else "live",
        fixture_dir=Path(args.fixtures) if args.fixtures else None,
        parallelism=args.parallelism,
    )
    if args.pool:
        pool = AttributePool.from_json(Path(args.pool).read_text(encoding="utf-8"))
    else:
        kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
        if not kinds:
            raise ConfigError("--kinds must name at least one attribute kind")
        pool = extract_attributes(args.domain_context, provider, kinds)
    (out_dir / "attribute_pool.json").write_text(pool.to_json(), encoding="utf-8")
    templates = load_templates(args.templates)
    specs = create_prompts(pool, args.n, args.style, seed=args.seed, templates=templates)
    (out_dir / "prompts.json").write_text(
        json.dumps(
            [{"style": s.style, "attributes": s.attributes, "prompt": s.prompt} for s in specs],
            indent=1,
        ),
        encoding="utf-8",
    )
    result = {"prompts": len(specs), "out_dir": str(out_dir)}
    if args.images:
        manifest = generate_images(specs, provider, out_dir / "images")
        result["generated"] = sum(1 for e in manifest["entries"] if e["status"] == "ok")
        result["failed"] = sum(1 for e in manifest["entries"] if e["status"] == "failed")
    print(json.dumps(result))
    return EXIT_OK


def cmd_report_auc(args: argparse.Namespace) -> int:
    try:
        raw = json.loads(Path(args.accuracy_file).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {args.accuracy_file}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("accuracy file must map proportion -> accuracy")
    report = auc_report(raw)
    print(
        json.dumps(
            {
                "auc_normalized": report.auc_normalized,
                "auc_raw": report.auc_raw,
                "proportions": list(report.proportions),
                "accuracies": report.accuracies,
            }
        )
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synbandit",
        description="Score synthetic training images and run UCB-bandit subset selection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate an embedding file and print its summary")
    p.add_argument("path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("score", help="compute per-image usability and baseline metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--metrics", default=None, help="comma-separated metric list")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("rank", help="top-M image ids under one metric")
    p.add_argument("--scores", required=True, help="metrics.csv produced by `score`")
    p.add_argument("--metric", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("bandit-run", help="run the UCB training loop over ranked arms")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument(
        "--no-reset-on-switch",
        action="store_true",
        help="literal pseudocode mode: keep the patience counter across switches",
    )
    p.set_defaults(func=cmd_bandit_run)

    p = sub.add_parser("prompts", help="attribute extraction, sampling, prompt assembly")
    p.add_argument("--domain-context", default="")
    p.add_argument("--kinds", default="weather,accident,color,model")
    p.add_argument("--pool", default=None, help="skip extraction, load a pool JSON file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--style", choices=("artistic", "photorealistic"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--templates", default=None)
    p.add_argument("--fixtures", default=None, help="fixture directory (mock providers)")
    p.add_argument("--endpoint", default="http://localhost:8080")
    p.add_argument("--auth-env", default="")
    p.add_argument("--parallelism", type=int, default=4)
    p.add_argument("--images", action="store_true", help="also request/generate images")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_prompts)

    p = sub.add_parser("report-auc", help="AUC over the five-proportion accuracy curve")
    p.add_argument("accuracy_file")
    p.set_defaults(func=cmd_report_auc)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except LearnerError as exc:
        print(f"learner error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (
        ConfigError,
        StoreError,
        MetricError,
        UsabilityError,
        ImageError,
        PromptgenError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception:
        traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
