"""Command-line orchestration: forge pipeline stages, scoring, evaluation.

Each forge stage reads its input manifest, writes its output manifest plus
a sidecar stage report (counts kept/rejected per reason), and is
independently rerunnable: identical inputs, seed, and config reproduce
identical bytes.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import assemble as assemble_mod
from . import metaeval, pairgen, promptgen, scoring
from .config import RunConfig
from .core import DomainError
from .identgen import PatchConfig, build_ident_pairs, read_subject_manifest
from .metaeval import UndefinedAUCError
from .clients.base import InpaintParams
from .wiring import build_clients, gold_from_manifest, make_store

SCHEMA_VERSION = assemble_mod.SCHEMA_VERSION


def _load_config(ctx) -> RunConfig:
    return ctx.obj["config"]


def _write_report(config: RunConfig, path: str | Path, payload: dict) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "seed": config.seed,
        "config_digest": config.digest(),
        **payload,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _maybe_strict_fail(ctx, n_rejections: int) -> None:
    if n_rejections and ctx.obj["strict"]:
        raise click.ClickException(f"{n_rejections} rejection(s) with --strict enabled")


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON run configuration file.")
@click.option("--seed", type=int, default=None, help="Override the configured seed.")
@click.option("--strict", is_flag=True, help="Escalate any rejection to a nonzero exit.")
@click.option("--concurrency", type=int, default=1, help="Bounded client parallelism.")
@click.pass_context
def main(ctx, config_path, seed, strict, concurrency):
    """Data forging and meta-evaluation for subject-driven T2I metrics."""
    config = RunConfig.from_file(config_path) if config_path else RunConfig()
    if seed is not None:
        config.seed = seed
    ctx.obj = {"config": config, "strict": strict, "concurrency": concurrency}


@main.group()
def forge():
    """Dataset construction stages."""


@forge.command("pairs")
@click.option("--scenes", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def forge_pairs(ctx, scenes, out):
    """Build subject-preservation pairs from a scene manifest."""
    config = _load_config(ctx)
    store = make_store(config)
    clients = build_clients(config, store)
    scene_list = pairgen.read_scene_manifest(scenes, config.image_root)
    pairs, rejections, report = pairgen.build_pairs_from_scenes(
        scene_list, store, clients.quality, config.blur_threshold
    )
    pairgen.write_pair_manifest(pairs, out)
    _write_report(config, f"{out}.report.json", report)
    click.echo(f"wrote {len(pairs)} pairs to {out} ({len(rejections)} rejections)")
    _maybe_strict_fail(ctx, len(rejections))


@forge.command("ident")
@click.option("--subjects", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def forge_ident(ctx, subjects, out):
    """Build identity-sensitive pairs via masked inpainting."""
    config = _load_config(ctx)
    store = make_store(config)
    clients = build_clients(config, store)
    subject_list = read_subject_manifest(subjects, config.image_root)
    patch_config = PatchConfig(
        size_range=tuple(config.patch.size_range),
        unit=config.patch.unit,
        max_patches=config.patch.max_patches,
        coverage=tuple(config.patch.coverage),
        max_attempts=config.patch.max_attempts,
    )
    pairs, audits = build_ident_pairs(
        subject_list, clients.inpaint, store, config.seed,
        k=config.inpaint.variants, config=patch_config,
        params=InpaintParams(config.inpaint.eta, config.inpaint.guidance_scale),
        min_area=config.min_mask_area, mse_cutoffs=config.mse_cutoffs,
    )
    pairgen.write_pair_manifest(pairs, out)
    dropped = [a for a in audits if a.verdict != "keep"]
    _write_report(config, f"{out}.report.json", {
        "subjects_in": len(subject_list),
        "pairs": len(pairs),
        "dropped": len(dropped),
        "audit": [a.to_dict() for a in audits],
    })
    click.echo(f"wrote {len(pairs)} pairs to {out} ({len(dropped)} subjects dropped)")
    _maybe_strict_fail(ctx, len(dropped))


@forge.command("prompts")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def forge_prompts(ctx, pairs_path, out):
    """Generate positive, swap-negative, and hard-negative prompts."""
    config = _load_config(ctx)
    store = make_store(config)
    clients = build_clients(config, store)
    pairs = pairgen.read_pair_manifest(pairs_path)
    records, rejections = promptgen.generate_prompts(
        pairs, clients.caption, clients.perturb, store
    )
    promptgen.write_prompt_manifest(records, out)
    reasons: dict[str, int] = {}
    for r in rejections:
        reasons[r.reason] = reasons.get(r.reason, 0) + 1
    _write_report(config, f"{out}.report.json", {
        "prompts": len(records),
        "rejections": reasons,
    })
    click.echo(f"wrote {len(records)} prompts to {out} ({len(rejections)} rejections)")
    _maybe_strict_fail(ctx, len(rejections))


@forge.command("assemble")
@click.option("--pairs", "pairs_paths", required=True, multiple=True,
              type=click.Path(exists=True))
@click.option("--prompts", "prompts_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--balance/--no-balance", default=False)
@click.pass_context
def forge_assemble(ctx, pairs_paths, prompts_path, out, balance):
    """Join pair and prompt manifests into a labeled triplet dataset."""
    config = _load_config(ctx)
    pairs = []
    for p in pairs_paths:
        pairs.extend(pairgen.read_pair_manifest(p))
    prompts = promptgen.read_prompt_manifest(prompts_path)
    triplets, warnings = assemble_mod.assemble_triplets(pairs, prompts)
    if balance:
        triplets, more = assemble_mod.balance_by_undersampling(triplets, config.seed)
        warnings.extend(more)
    manifest = assemble_mod.DatasetManifest(
        triplets, run_seed=config.seed, config_digest=config.digest(), warnings=warnings
    )
    assemble_mod.write_manifest(manifest, out)
    _write_report(config, f"{out}.report.json", {
        "triplets": len(triplets),
        "label_histogram": manifest.label_histogram,
        "warnings": warnings,
    })
    click.echo(f"wrote {len(triplets)} triplets to {out} "
               f"(histogram {manifest.label_histogram})")
    _maybe_strict_fail(ctx, len(warnings))


@main.group()
def score():
    """Metric scoring over a triplet manifest."""


@score.command("run")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--metric", required=True)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def score_run(ctx, manifest_path, metric, out):
    """Score every manifest instance with a registered metric (resumable)."""
    config = _load_config(ctx)
    store = make_store(config)
    manifest = assemble_mod.read_manifest(manifest_path, verify_images=False)
    gold = gold_from_manifest(manifest) if config.clients.mode == "mock" else None
    clients = build_clients(config, store, gold=gold)
    registry = scoring.build_registry(clients, store)
    records = scoring.batch_score(
        manifest.triplets, metric, registry.get(metric),
        concurrency=ctx.obj["concurrency"],
    )
    scoring.write_scores(records, out)
    errors = sum(1 for r in records if r.error)
    _write_report(config, f"{out}.report.json", {
        "metric": metric,
        "scored": len(records),
        "errors": errors,
    })
    click.echo(f"wrote {len(records)} scores to {out} ({errors} errors)")
    _maybe_strict_fail(ctx, errors)


@main.group(name="eval")
def eval_group():
    """Meta-evaluation reports and metric comparisons."""


@eval_group.command("report")
@click.option("--benchmark", default="fixture")
@click.option("--category", default="Object")
@click.option("--annotations", type=click.Path(exists=True), default=None,
              help="Benchmark annotation JSONL to binarize and join against.")
@click.option("--scores", "score_specs", multiple=True,
              help="metric=path score-file specs (repeatable).")
@click.option("--ref-metric", default=None)
@click.option("--auc-table", type=click.Path(exists=True), default=None,
              help="Precomputed TA/SP AUC rows (recorded-score ingestion).")
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def eval_report(ctx, benchmark, category, annotations, score_specs, ref_metric,
                auc_table, out):
    """Render a per-metric AUC/unified report with significance marks."""
    config = _load_config(ctx)
    try:
        if auc_table:
            report = _report_from_auc_table(auc_table)
            table = metaeval.format_table(report)
        else:
            if not (annotations and score_specs):
                raise click.UsageError("need --annotations and --scores, or --auc-table")
            gold = metaeval.read_annotations(annotations, benchmark)
            runs = []
            for spec in score_specs:
                name, _, path = spec.partition("=")
                rows = scoring.read_scores(path)
                runs.append(metaeval.join_eval_run(
                    benchmark, category, name, rows, gold, config.seed))
            report, table = metaeval.render_report(
                runs, ref_metric,
                n_bootstrap=config.eval.n_bootstrap, seed=config.seed,
                min_sample=config.eval.min_sample, p_level=config.eval.p_level,
            )
    except UndefinedAUCError as exc:
        raise click.ClickException(f"undefined AUC: {exc}")
    payload = report.to_dict()
    payload.update({"schema_version": SCHEMA_VERSION, "seed": config.seed,
                    "config_digest": config.digest()})
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    Path(str(out) + ".txt").write_text(table + "\n")
    click.echo(table)


def _report_from_auc_table(path) -> metaeval.ComparisonReport:
    """Ingest recorded per-metric TA/SP AUCs (0-100 or 0-1) and derive unified."""
    data = json.loads(Path(path).read_text())
    rows = []
    for row in data["rows"]:
        ta, sp = float(row["ta"]), float(row["sp"])
        if ta > 1 or sp > 1:
            ta, sp = ta / 100.0, sp / 100.0
        rows.append(metaeval.MetricRow(
            row["metric"], {"ta": ta, "sp": sp, "unified": metaeval.unified_auc(ta, sp)}
        ))
    return metaeval.ComparisonReport(
        benchmark=data.get("benchmark", "ingested"),
        category=data.get("category", "all"),
        reference_metric=data.get("reference_metric", rows[0].metric_name if rows else ""),
        rows=rows, n_bootstrap=0, p_level=0.05,
    )


@eval_group.command("compare")
@click.option("--benchmark", default="fixture")
@click.option("--annotations", required=True, type=click.Path(exists=True))
@click.option("--criterion", type=click.Choice(["ta", "sp"]), required=True)
@click.option("--ref-scores", required=True, type=click.Path(exists=True))
@click.option("--other-scores", required=True, type=click.Path(exists=True))
@click.option("--out", default=None, type=click.Path())
@click.pass_context
def eval_compare(ctx, benchmark, annotations, criterion, ref_scores, other_scores, out):
    """Paired bootstrap comparison of two metrics on one criterion."""
    config = _load_config(ctx)
    gold = metaeval.read_annotations(annotations, benchmark)
    ref_rows = {r["instance_id"]: r for r in scoring.read_scores(ref_scores)}
    other_rows = {r["instance_id"]: r for r in scoring.read_scores(other_scores)}
    shared = [i for i in ref_rows if i in other_rows and i in gold
              and not ref_rows[i].get("error") and not other_rows[i].get("error")]
    if not shared:
        raise click.ClickException("no shared scored instances")
    labels = [getattr(gold[i], criterion) for i in shared]
    try:
        result = metaeval.bootstrap_compare(
            [ref_rows[i][criterion] for i in shared],
            [other_rows[i][criterion] for i in shared],
            labels,
            n=config.eval.n_bootstrap, seed=config.seed,
            min_sample=config.eval.min_sample, p_level=config.eval.p_level,
        )
    except UndefinedAUCError as exc:
        raise click.ClickException(f"undefined AUC: {exc}")
    payload = {
        "criterion": criterion,
        "verdict": result.verdict,
        "ci": [result.ci_low, result.ci_high],
        "mean_diff": result.mean_diff,
        "n_bootstrap": result.n_bootstrap,
        "resample_size": result.resample_size,
        "p_level": result.p_level,
        "seed": config.seed,
        "config_digest": config.digest(),
        "schema_version": SCHEMA_VERSION,
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    click.echo(text)


if __name__ == "__main__":
    main()
