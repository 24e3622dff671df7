"""The four pipeline stages behind the CLI subcommands.

Each stage reads the previous stage's canonical outputs, writes its own
atomically, and updates the run manifest. Stage functions return a
:class:`StageOutcome` whose ``partial`` flag maps to exit code 3 when the
stage finished but some per-item work failed (excluded tasks, a regression
spec that errored, occupations that could not be scored).
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from . import analytics as an
from . import consensus as cns
from . import exposure as exp
from . import gateway as gw
from . import onet
from .config import RegressionConfig, RunConfig, RunManifest
from .errors import ConfigError, DataValidationError
from .storage import atomic_write_text, read_csv, read_jsonl, write_csv, write_jsonl

logger = logging.getLogger(__name__)

OCCUPATIONS_CSV = "occupations.csv"
TASKS_CSV = "tasks.csv"
SKILLS_CSV = "skills.csv"
EMPLOYMENT_CSV = "employment.csv"
ASSESSMENTS_JSONL = "assessments.jsonl"
EXCLUDED_CSV = "excluded.csv"
SCORES_CSV = "occupation_scores.csv"
SKILL_RELEVANCE_CSV = "skill_relevance.csv"
TERTILES_CSV = "tertiles.csv"
CORRELATIONS_CSV = "correlations.csv"
REGRESSIONS_CSV = "regressions.csv"
REPORT_TXT = "report.txt"


@dataclass
class StageOutcome:
    partial: bool = False
    summary: list[str] = field(default_factory=list)

    def line(self, text: str) -> None:
        self.summary.append(text)
        logger.info("%s", text)


def _manifest(config: RunConfig) -> RunManifest:
    config.output_dir.mkdir(parents=True, exist_ok=True)
    return RunManifest(
        config.output_dir / "manifest.json",
        config.config_hash(),
        config.template_version,
        [m.model_id for m in config.models],
        parameters={
            "decoding": {
                m.model_id: [m.decoding.temperature, m.decoding.max_tokens, m.decoding.seed]
                for m in config.models
            },
            "max_retries": config.max_retries,
            "requery_budget": config.requery_budget,
            "similarity_variant": config.consensus.similarity_variant,
            "imputation_policy": config.imputation.policy,
            "mock": config.mock,
            "seed": config.seed,
        },
    )


def cmd_ingest(config: RunConfig) -> StageOutcome:
    """Parse the O*NET directory (and employment table) into canonical CSVs."""
    outcome = StageOutcome()
    manifest = _manifest(config)

    statements = onet.parse_task_statements(config.onet_file("task_statements"))
    ratings = onet.parse_task_ratings(config.onet_file("task_ratings"))
    overrides = (
        onet.parse_weight_overrides(config.imputation.override_file)
        if config.imputation.override_file
        else None
    )
    tasks = onet.merge_tasks(statements, ratings, config.imputation.policy, overrides)
    onet.write_tasks_csv(tasks, config.output_dir / TASKS_CSV, manifest.config_hash)

    occupations = [onet.Occupation(soc, title) for soc, title in sorted(statements.occupations().items())]
    write_csv(
        config.output_dir / OCCUPATIONS_CSV,
        ("soc", "title"),
        [(o.soc.code, o.title) for o in occupations],
        manifest.config_hash,
    )

    class_map = (
        onet.load_class_map(config.class_map_file)
        if config.class_map_file
        else onet.default_class_map()
    )
    skills = onet.parse_skills(config.onet_file("skills"), class_map)
    write_csv(
        config.output_dir / SKILLS_CSV,
        ("soc", "skill_id", "skill_name", "level", "importance", "class"),
        [
            (r.soc.code, r.skill_id, r.skill_name, repr(r.level), repr(r.importance), r.skill_class)
            for r in skills.records
        ],
        manifest.config_hash,
    )

    n_employment = 0
    if config.employment_file:
        employment = onet.parse_employment(config.employment_file, config.employment_year)
        write_csv(
            config.output_dir / EMPLOYMENT_CSV,
            ("soc", "employment", "wage", "sector", "year"),
            [
                (
                    r.soc.code,
                    repr(r.employment),
                    repr(r.wage) if r.wage is not None else "",
                    r.sector or "",
                    r.year,
                )
                for r in sorted(employment.records, key=lambda r: (r.soc, r.sector or ""))
            ],
            manifest.config_hash,
        )
        n_employment = len(employment.records)

    n_imputed = sum(1 for t in tasks if t.weights_imputed)
    manifest.record(
        "ingest",
        {
            "tasks_parsed": len(tasks),
            "occupations": statements.n_occupations,
            "tasks_imputed": n_imputed,
            "statement_rows_skipped": len(statements.skipped),
            "rating_rows_skipped": len(ratings.skipped),
            "skill_records": len(skills.records),
            "employment_records": n_employment,
        },
    )
    outcome.line(
        f"ingest: {len(tasks)} tasks / {statements.n_occupations} occupations "
        f"({n_imputed} with imputed weights), {len(skills.records)} skill records, "
        f"{n_employment} employment records"
    )
    return outcome


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{path} not found; run `teai {produced_by}` first")
    return path


def cmd_score(config: RunConfig) -> StageOutcome:
    """Judge every task with the model ensemble and fuse the verdicts."""
    outcome = StageOutcome()
    manifest = _manifest(config)
    tasks = onet.read_tasks_csv(_require(config.output_dir / TASKS_CSV, "ingest"))

    if config.mock:
        transport: gw.ChatTransport = gw.MockChatTransport(config.seed)
        embed_endpoint = gw.MockEmbeddingEndpoint()
    else:
        # Misconfiguration must be fatal before the first network call.
        for spec in config.models:
            if not spec.endpoint_url:
                raise ConfigError(f"model {spec.model_id} has no endpoint_url")
            if spec.api_key_ref and spec.api_key_ref not in os.environ:
                raise ConfigError(f"environment variable {spec.api_key_ref} is not set for {spec.model_id}")
        if not config.embedding.endpoint_url:
            raise ConfigError("embedding.endpoint_url is required for live runs")
        transport = gw.HttpChatTransport()
        embed_endpoint = gw.HttpEmbeddingEndpoint(
            config.embedding.model_id,
            config.embedding.endpoint_url,
            config.embedding.api_key_ref,
            max_retries=config.max_retries,
        )

    cache = gw.ReplyCache(config.cache_dir)
    gateway = gw.LlmGateway(
        config.models,
        config.load_template(),
        transport,
        cache,
        max_retries=config.max_retries,
        requery_budget=config.requery_budget,
        max_in_flight=config.max_in_flight,
        backoff=0.0 if config.mock else 0.5,
    )
    embedder = cns.Embedder(embed_endpoint, config.cache_dir)
    scale = cns.RatingScale(
        config.consensus.scale_min,
        config.consensus.scale_max,
        config.consensus.width_override,
    )

    ordered = sorted(tasks, key=lambda t: (t.soc, t.task_id))

    def process(task: onet.TaskRecord):
        verdicts = gateway.assess_task(task)
        usable = [v for v in verdicts if v is not None]
        if len(usable) < 2:
            return task, None, len(usable)
        assessment = cns.fuse(
            task,
            verdicts,
            embedder=embedder,
            scale=scale,
            similarity_variant=config.consensus.similarity_variant,
            template_version=config.template_version,
        )
        return task, assessment, len(usable)

    workers = max(1, config.max_in_flight * max(1, len(config.models)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(process, ordered))

    records = []
    excluded = []
    for task, assessment, n_usable in results:
        if assessment is None:
            excluded.append((task.soc.code, task.task_id, f"only {n_usable} usable verdict(s)"))
            continue
        records.append(
            {
                "soc": assessment.soc.code,
                "task_id": assessment.task_id,
                "verdicts": [
                    None
                    if v is None
                    else {
                        "model_id": v.model_id,
                        "rating": v.rating,
                        "motivation": v.motivation,
                        "attempts": v.attempt_count,
                    }
                    for v in assessment.verdicts
                ],
                "te": assessment.te,
                "consensus": assessment.consensus,
                "similarity": assessment.similarity,
                "similarity_note": assessment.similarity_note,
                "template_version": assessment.template_version,
                "embedding_model_id": assessment.embedding_model_id,
            }
        )

    write_jsonl(config.output_dir / ASSESSMENTS_JSONL, records, manifest.config_hash)
    write_csv(config.output_dir / EXCLUDED_CSV, ("soc", "task_id", "reason"), excluded, manifest.config_hash)

    # Agreement levels are reported, never asserted: they depend on the models.
    metrics: dict[str, float] = {}
    if records:
        metrics["mean_consensus"] = sum(r["consensus"] for r in records) / len(records)
        similarities = [r["similarity"] for r in records if r["similarity"] is not None]
        if similarities:
            metrics["mean_similarity"] = sum(similarities) / len(similarities)

    manifest.record(
        "score",
        {
            "tasks_scored": len(records),
            "tasks_excluded": len(excluded),
            "transport_calls": getattr(transport, "calls", 0),
        },
        metrics,
    )
    outcome.line(f"score: {len(records)} tasks assessed, {len(excluded)} excluded")
    if metrics:
        similarity_part = (
            f", mean similarity {metrics['mean_similarity']:.4f}" if "mean_similarity" in metrics else ""
        )
        outcome.line(f"score: mean consensus {metrics['mean_consensus']:.4f}{similarity_part}")
    if excluded:
        outcome.partial = True
        outcome.line(f"score: excluded tasks listed in {EXCLUDED_CSV}")
    return outcome


def cmd_index(config: RunConfig) -> StageOutcome:
    """Aggregate task assessments into occupation scores and skill relevance."""
    outcome = StageOutcome()
    manifest = _manifest(config)
    assessments, _ = read_jsonl(_require(config.output_dir / ASSESSMENTS_JSONL, "score"))
    tasks = onet.read_tasks_csv(_require(config.output_dir / TASKS_CSV, "ingest"))
    _, occupation_rows, _ = read_csv(_require(config.output_dir / OCCUPATIONS_CSV, "ingest"))
    titles = {row["soc"]: row["title"] for row in occupation_rows}

    by_task = {t.task_id: t for t in tasks}
    grouped: dict[onet.SocCode, list[tuple[float, float, float, float]]] = {}
    imputed: dict[onet.SocCode, int] = {}
    for record in assessments:
        task = by_task.get(record["task_id"])
        if task is None:
            logger.warning("assessment for unknown task %s ignored", record["task_id"])
            continue
        grouped.setdefault(task.soc, []).append(
            (float(record["te"]), task.relevance, task.importance, task.frequency)
        )
        imputed[task.soc] = imputed.get(task.soc, 0) + (1 if task.weights_imputed else 0)

    raws: dict[onet.SocCode, float] = {}
    unscored: list[str] = []
    for soc in sorted({t.soc for t in tasks}):
        cells = grouped.get(soc)
        if not cells:
            unscored.append(soc.code)
            continue
        try:
            raws[soc] = exp.compute_teai(cells)
        except DataValidationError as exc:
            unscored.append(soc.code)
            logger.warning("occupation %s not scored: %s", soc, exc)
    if unscored:
        outcome.partial = True
        outcome.line(f"index: {len(unscored)} occupation(s) without scored tasks: {', '.join(unscored)}")

    normalized = exp.normalize_scores(raws)
    scores = [
        exp.OccupationScore(
            soc=soc,
            title=titles.get(soc.code, ""),
            teai_raw=raw,
            teai_norm=normalized[soc][0],
            percentile=normalized[soc][1],
            n_tasks=len(grouped[soc]),
            n_imputed=imputed.get(soc, 0),
        )
        for soc, raw in sorted(raws.items())
    ]
    write_csv(
        config.output_dir / SCORES_CSV,
        ("soc", "title", "teai_raw", "teai_norm", "teai_percentile", "n_tasks", "n_imputed"),
        [
            (s.soc.code, s.title, repr(s.teai_raw), repr(s.teai_norm), repr(s.percentile), s.n_tasks, s.n_imputed)
            for s in scores
        ],
        manifest.config_hash,
    )

    _, skill_rows, _ = read_csv(_require(config.output_dir / SKILLS_CSV, "ingest"))
    skill_records = [
        onet.SkillRecord(
            soc=onet.SocCode(row["soc"]),
            skill_id=row["skill_id"],
            skill_name=row["skill_name"],
            level=float(row["level"]),
            importance=float(row["importance"]),
            skill_class=row["class"],
        )
        for row in skill_rows
    ]
    relevance = exp.skill_relevance_table(skill_records, config.analytics.skill_value_source)
    write_csv(
        config.output_dir / SKILL_RELEVANCE_CSV,
        ("soc", "class", "sr", "n_skills"),
        [(r.soc.code, r.skill_class, repr(r.sr), r.n_skills) for r in relevance],
        manifest.config_hash,
    )

    manifest.record(
        "index",
        {"occupations_scored": len(scores), "occupations_unscored": len(unscored), "skill_relevance_rows": len(relevance)},
    )
    outcome.line(f"index: {len(scores)} occupations scored, {len(relevance)} skill relevance rows")
    return outcome


def _load_soc_value_file(path: Path) -> dict[onet.SocCode, float]:
    """Two-column (soc, value) table, comma- or tab-delimited, header optional."""
    text = Path(path).read_text(encoding="utf-8-sig")
    delimiter = "\t" if "\t" in text.splitlines()[0] else ","
    values: dict[onet.SocCode, float] = {}
    for row in csv.reader(text.splitlines(), delimiter=delimiter):
        if len(row) < 2 or row[0].lstrip().startswith("#"):
            continue
        try:
            values[onet.SocCode.parse(row[0])] = float(row[1])
        except ValueError:
            continue  # header or stray row
    return values


def _load_skill_groups(path: Path) -> dict[onet.SocCode, str]:
    text = Path(path).read_text(encoding="utf-8-sig")
    delimiter = "\t" if "\t" in text.splitlines()[0] else ","
    groups: dict[onet.SocCode, str] = {}
    for row in csv.reader(text.splitlines(), delimiter=delimiter):
        if len(row) < 2 or row[0].lstrip().startswith("#"):
            continue
        try:
            groups[onet.SocCode.parse(row[0])] = row[1].strip()
        except ValueError:
            continue
    return groups


def _default_regressions(growth: pd.DataFrame) -> list[RegressionConfig]:
    """Growth regressions run when a panel is supplied without explicit specs.

    Employment growth controls for the initial employment level; wage growth
    adds the initial wage level and its square. Sector fixed effects and
    sector clustering apply when the panel distinguishes sectors.
    """
    multi_sector = growth["sector"].nunique() > 1
    fe = ("sector",) if multi_sector else ()
    cluster = "sector" if multi_sector else None
    specs = [
        RegressionConfig(
            spec_id="employment_growth",
            dependent="dlog_employment",
            regressors=("teai", "log_emp_initial"),
            fixed_effects=fe,
            cluster=cluster,
        )
    ]
    if "dlog_wage" in growth.columns:
        specs.append(
            RegressionConfig(
                spec_id="wage_growth",
                dependent="dlog_wage",
                regressors=("teai", "log_emp_initial", "log_wage_initial", "log_wage_initial_sq"),
                fixed_effects=fe,
                cluster=cluster,
            )
        )
    return specs


def cmd_analyze(config: RunConfig) -> StageOutcome:
    """Tertiles, correlations, and fixed-effect regressions over the scores."""
    outcome = StageOutcome()
    manifest = _manifest(config)
    _, score_rows, _ = read_csv(_require(config.output_dir / SCORES_CSV, "index"))

    unit_column = {"raw": "teai_raw", "norm": "teai_norm", "percentile": "teai_percentile"}[
        config.analytics.score_unit
    ]
    scores = {onet.SocCode(row["soc"]): float(row[unit_column]) for row in score_rows}

    employment: dict[onet.SocCode, float] = {}
    employment_path = config.output_dir / EMPLOYMENT_CSV
    if employment_path.exists():
        _, employment_rows, _ = read_csv(employment_path)
        for row in employment_rows:
            soc = onet.SocCode(row["soc"])
            employment[soc] = employment.get(soc, 0.0) + float(row["employment"])

    skill_groups = (
        _load_skill_groups(config.analytics.skill_group_file)
        if config.analytics.skill_group_file
        else None
    )
    report_lines = [f"run report (manifest {manifest.config_hash[:12]})", ""]

    tertiles = an.classify_tertiles(
        scores,
        employment or None,
        skill_groups,
        weighted=config.analytics.weighted_tertiles,
    )
    tertile_rows = []
    for bucket in tertiles.buckets:
        tertile_rows.append(
            (
                bucket.label,
                "all",
                "",
                bucket.occupation_count,
                repr(bucket.employment_total) if bucket.employment_total is not None else "",
                repr(bucket.employment_share) if bucket.employment_share is not None else "",
                repr(tertiles.cutpoints[0]),
                repr(tertiles.cutpoints[1]),
            )
        )
        for group, measure in bucket.by_major_group.items():
            tertile_rows.append((bucket.label, "soc_major", group, "", repr(measure), "", "", ""))
        for group, measure in bucket.by_skill_group.items():
            tertile_rows.append((bucket.label, "skill_intensity", group, "", repr(measure), "", "", ""))
    write_csv(
        config.output_dir / TERTILES_CSV,
        ("tertile", "group_type", "group", "occupation_count", "employment_total",
         "employment_share", "cutpoint_low", "cutpoint_high"),
        tertile_rows,
        manifest.config_hash,
    )
    report_lines.append(f"tertile cutpoints: {tertiles.cutpoints[0]:.6g}, {tertiles.cutpoints[1]:.6g}")
    for bucket in tertiles.buckets:
        share = f", employment share {bucket.employment_share:.4f}" if bucket.employment_share is not None else ""
        report_lines.append(f"  {bucket.label}: {bucket.occupation_count} occupation(s){share}")
    if tertiles.unmatched_occupations:
        report_lines.append(f"  unmatched occupations (no employment): {', '.join(tertiles.unmatched_occupations)}")
    report_lines.append("")

    correlation_rows = []
    for name, path in config.analytics.external_indexes:
        external = _load_soc_value_file(path)
        for method in ("pearson", "spearman"):
            try:
                result = an.correlate(scores, external, method)
            except DataValidationError as exc:
                outcome.partial = True
                report_lines.append(f"correlation {name}/{method} failed: {exc}")
                continue
            correlation_rows.append(
                (name, method, repr(result.coefficient), repr(result.p_value), result.n)
            )
            report_lines.append(
                f"correlation with {name} ({method}): {result.coefficient:.4f} (p={result.p_value:.4g}, n={result.n})"
            )
    write_csv(
        config.output_dir / CORRELATIONS_CSV,
        ("index", "method", "coefficient", "p_value", "n"),
        correlation_rows,
        manifest.config_hash,
    )
    if correlation_rows:
        report_lines.append("")

    growth: pd.DataFrame | None = None
    growth_dropped = 0
    if config.analytics.panel_file:
        panel = pd.read_csv(config.analytics.panel_file)
        growth, growth_dropped = an.growth_table(panel, config.analytics.window_years)
        growth["teai"] = growth["soc"].map({s.code: v for s, v in scores.items()})
        report_lines.append(
            f"growth table: {len(growth)} window rows "
            f"(window {config.analytics.window_years}y, {growth_dropped} dropped)"
        )

    regressions = list(config.analytics.regressions)
    if not regressions and growth is not None and len(growth):
        regressions = _default_regressions(growth)

    regression_rows = []
    for reg in regressions:
        if reg.table_file is not None:
            table = pd.read_csv(reg.table_file)
            if "soc" in table.columns and "teai" not in table.columns:
                table["teai"] = table["soc"].map({s.code: v for s, v in scores.items()})
        elif growth is not None:
            table = growth
        else:
            outcome.partial = True
            report_lines.append(f"regression {reg.spec_id} skipped: no panel_file or table_file")
            continue
        spec = an.RegressionSpec(
            spec_id=reg.spec_id,
            dependent=reg.dependent,
            regressors=reg.regressors,
            fixed_effects=reg.fixed_effects,
            cluster=reg.cluster,
            weights=reg.weights,
        )
        try:
            result = an.ols_fit(table, spec)
        except (DataValidationError, ValueError) as exc:
            outcome.partial = True
            report_lines.append(f"regression {reg.spec_id} failed: {exc}")
            logger.warning("regression %s failed: %s", reg.spec_id, exc)
            continue
        for term in result.coefficients:
            cluster_se = (
                repr(result.cluster_std_errors[term]) if result.cluster_std_errors else ""
            )
            regression_rows.append(
                (
                    result.spec_id,
                    term,
                    repr(result.coefficients[term]),
                    repr(result.std_errors[term]),
                    cluster_se,
                    result.n_observations,
                    repr(result.r_squared),
                )
            )
        report_lines.append(
            f"regression {reg.spec_id}: n={result.n_observations}, R2={result.r_squared:.4f}, "
            + ", ".join(f"{t}={c:.4g}" for t, c in result.coefficients.items())
        )
        for note in result.notes:
            report_lines.append(f"  note: {note}")
    write_csv(
        config.output_dir / REGRESSIONS_CSV,
        ("spec_id", "term", "coefficient", "se", "se_cluster", "n", "r2"),
        regression_rows,
        manifest.config_hash,
    )

    atomic_write_text(config.output_dir / REPORT_TXT, "\n".join(report_lines) + "\n")
    manifest.record(
        "analyze",
        {
            "tertile_rows": len(tertile_rows),
            "correlation_rows": len(correlation_rows),
            "regression_rows": len(regression_rows),
            "growth_rows_dropped": growth_dropped,
        },
    )
    outcome.line(
        f"analyze: {len(tertile_rows)} tertile rows, {len(correlation_rows)} correlations, "
        f"{len(regression_rows)} regression terms"
    )
    return outcome
