"""Command-line pipeline: ingest -> correct -> pair -> ridge -> train ->
predict -> evaluate -> report, plus the synthetic corpus generator."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import correction, evaluation, ingest as ingest_mod, ridge as ridge_mod
from .core import Period, RampTransferError, SiteMap
from .correction import Dataset, pair_before_after, temporal_correct
from .evaluation import GridSpec, MetricEntry, MetricReport, ModelSpec
from .synth import SynthConfig, generate, manifest_json
from .transfer import TwoStageTrAdaBoostR2, TransferModel, transfer_predict

log = logging.getLogger("ramp_transfer")

DEFAULT_CONFIG = {
    "seed": 0,
    "runs": 1,
    "jobs": 1,
    "budget": None,
    "out": "out",
    "paths": {
        "site_map": None,  # defaults to <out>/sitemap.json
        "loop_before": None,
        "loop_after": None,
        "probe_before": None,
        "probe_after": None,
    },
    "ingest": {
        "min_loop_coverage": 0.8,
        "min_probe_minutes": 10,
        "operating_hours": [6, 7, 8, 15, 16, 17, 18],
        "weekdays": [3, 4, 5],
    },
    "ridge": {
        "lambda_grid": [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0],
        "thresholds": {"speed": 0.5, "occupancy": 0.5, "flow": 50.0},
        "runs": 10,
        "subsample": 0.8,
        "folds": 5,
    },
    "transfer": {
        "steps": 10,
        "folds": 5,
        "theta": 0.5,
        "n_estimators": 50,
        "max_depth": 5,
        "substitute_comparator": "le",
    },
    "knn": {"n_neighbors": 5},
    "grids": evaluation.DEFAULT_GRIDS,
    "evaluate": {
        "models": ["tra", "knn"],
        "targets": list(correction.TARGET_COLUMNS),
    },
    "synth": {
        "n_sections": 14,
        "weeks": 4,
        "regime": "linear",
        "noise_speed": 0.0,
        "noise_occupancy": 0.0,
        "noise_flow": 0.0,
        "domain_shift": 0.0,
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


class Context:
    def __init__(self, config: dict):
        self.config = config
        self.hash = config_hash(config)
        self.out = Path(config["out"])

    @property
    def seed(self) -> int:
        return int(self.config["seed"])

    def header(self) -> str:
        return f"# config_hash={self.hash} seed={self.seed}"

    def path(self, name: str, default: str) -> Path:
        configured = self.config["paths"].get(name)
        return Path(configured) if configured else self.out / default

    def require(self, path: Path) -> Path:
        if not path.exists():
            fail(f"required input not found: {path}")
        return path

    def write(self, filename: str, text: str, with_header: bool = True) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / filename
        if with_header:
            text = self.header() + "\n" + text
        path.write_text(text)
        return path

    def read_csv(self, path: Path) -> str:
        """Read a CSV artifact, dropping provenance comment lines."""
        lines = self.require(path).read_text().splitlines()
        kept = [line for line in lines if not line.startswith("#")]
        return "\n".join(kept) + "\n"

    def aggregation_config(self) -> ingest_mod.AggregationConfig:
        c = self.config["ingest"]
        return ingest_mod.AggregationConfig(
            min_loop_coverage=float(c["min_loop_coverage"]),
            min_probe_minutes=int(c["min_probe_minutes"]),
            operating_hours=tuple(c["operating_hours"]),
            weekdays=tuple(c["weekdays"]))


def fail(message: str, code: int = 1):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _setup_logging():
    level = os.environ.get("RAMP_TRANSFER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


_common_options = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="JSON config file; flags override its values."),
    click.option("--seed", type=int, default=None),
    click.option("--out", type=click.Path(), default=None,
                 help="Output directory (unit of provenance)."),
    click.option("--jobs", type=int, default=None),
]


def common_options(func):
    for option in reversed(_common_options):
        func = option(func)
    return func


def build_context(config_path, overrides: dict) -> Context:
    config = DEFAULT_CONFIG
    if config_path:
        path = Path(config_path)
        if not path.exists():
            fail(f"config file not found: {path}")
        try:
            config = _deep_merge(config, json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            fail(f"config file is not valid JSON: {exc}")
    config = _deep_merge(config, {k: v for k, v in overrides.items()
                                  if v is not None})
    return Context(config)


def guarded(func):
    """Translate validation errors to exit 1 and runtime errors to exit 2."""

    def wrapper(*args, **kwargs):
        _setup_logging()
        try:
            return func(*args, **kwargs)
        except SystemExit:
            raise
        except RampTransferError as exc:
            fail(str(exc), code=1)
        except Exception as exc:  # pragma: no cover - defensive
            click.echo(f"runtime error: {exc}", err=True)
            sys.exit(2)

    wrapper.__name__ = func.__name__
    return wrapper


@click.group()
def main():
    """Predict post-intervention freeway traffic parameters."""


@main.command()
@common_options
@click.option("--n-sections", type=int, default=None)
@click.option("--weeks", type=int, default=None)
@click.option("--regime", type=click.Choice(["linear", "piecewise"]),
              default=None)
@click.option("--domain-shift", type=float, default=None)
@guarded
def synth(config_path, seed, out, jobs, n_sections, weeks, regime,
          domain_shift):
    """Generate a synthetic raw corpus with a known ground truth."""
    synth_over = {k: v for k, v in {
        "n_sections": n_sections, "weeks": weeks, "regime": regime,
        "domain_shift": domain_shift}.items() if v is not None}
    ctx = build_context(config_path, {"seed": seed, "out": out, "jobs": jobs,
                                      "synth": synth_over})
    s = ctx.config["synth"]
    cfg = SynthConfig(seed=ctx.seed, n_sections=int(s["n_sections"]),
                      weeks=int(s["weeks"]), regime=s["regime"],
                      noise_speed=float(s["noise_speed"]),
                      noise_occupancy=float(s["noise_occupancy"]),
                      noise_flow=float(s["noise_flow"]),
                      domain_shift=float(s["domain_shift"]),
                      weekdays=tuple(ctx.config["ingest"]["weekdays"]),
                      operating_hours=tuple(
                          ctx.config["ingest"]["operating_hours"]))
    corpus = generate(cfg)
    ctx.out.mkdir(parents=True, exist_ok=True)
    (ctx.out / "sitemap.json").write_text(
        json.dumps(corpus.site_map.to_dict(), indent=2, sort_keys=True) + "\n")
    (ctx.out / "manifest.json").write_text(manifest_json(corpus) + "\n")
    for period in (Period.BEFORE, Period.AFTER):
        (ctx.out / f"loop_{period.value}.csv").write_text(
            corpus.loop_csv(period))
        (ctx.out / f"probe_{period.value}.csv").write_text(
            corpus.probe_csv(period))
    click.echo(f"synth: wrote {cfg.n_sections}-section corpus to {ctx.out}")


def _load_site_map(ctx: Context) -> SiteMap:
    path = ctx.path("site_map", "sitemap.json")
    ctx.require(path)
    return SiteMap.from_json(path.read_text())


def _run_ingest(ctx: Context, period: Period) -> Path:
    site_map = _load_site_map(ctx)
    loop_path = ctx.path(f"loop_{period.value}", f"loop_{period.value}.csv")
    probe_path = ctx.path(f"probe_{period.value}",
                          f"probe_{period.value}.csv")
    loops, loop_skips = ingest_mod.parse_loop_csv(
        ctx.read_csv(loop_path), site_map)
    probes, probe_skips = ingest_mod.parse_probe_csv(
        ctx.read_csv(probe_path), site_map)
    samples, coverage = ingest_mod.aggregate(
        loops, probes, site_map, period, ctx.aggregation_config())
    path = ctx.write(f"samples_{period.value}.csv",
                     ingest_mod.samples_to_csv(samples))
    click.echo(
        f"ingest[{period.value}]: {len(samples)} samples "
        f"(loop skips: {loop_skips.malformed_count} malformed, "
        f"{loop_skips.unmapped} unmapped, {loop_skips.excluded} excluded; "
        f"probe skips: {probe_skips.malformed_count} malformed, "
        f"{probe_skips.unmapped} unmapped; "
        f"slots dropped: {coverage.insufficient_loop} loop, "
        f"{coverage.insufficient_probe} probe)")
    return path


@main.command(name="ingest")
@common_options
@click.option("--period", type=click.Choice(["before", "after", "both"]),
              default="both")
@guarded
def ingest_cmd(config_path, seed, out, jobs, period):
    """Parse raw CSVs and aggregate 15-minute samples."""
    ctx = build_context(config_path, {"seed": seed, "out": out, "jobs": jobs})
    periods = ([Period(period)] if period != "both"
               else [Period.BEFORE, Period.AFTER])
    for p in periods:
        _run_ingest(ctx, p)


def _run_correct(ctx: Context, period: Period) -> Path:
    samples = ingest_mod.samples_from_csv(
        ctx.read_csv(ctx.out / f"samples_{period.value}.csv"))
    by_group = {}
    for s in samples:
        by_group.setdefault((s.section, s.position), []).append(s)
    profiles = [temporal_correct(group)
                for _, group in sorted(by_group.items(),
                                       key=lambda kv: (kv[0][0],
                                                       int(kv[0][1])))]
    path = ctx.write(f"corrected_{period.value}.csv",
                     correction.profiles_to_csv(profiles))
    click.echo(f"correct[{period.value}]: {len(profiles)} profiles")
    return path


@main.command()
@common_options
@click.option("--period", type=click.Choice(["before", "after", "both"]),
              default="both")
@guarded
def correct(config_path, seed, out, jobs, period):
    """Average samples by time-of-week across weeks."""
    ctx = build_context(config_path, {"seed": seed, "out": out, "jobs": jobs})
    periods = ([Period(period)] if period != "both"
               else [Period.BEFORE, Period.AFTER])
    for p in periods:
        _run_correct(ctx, p)


def _run_pair(ctx: Context) -> Path:
    before = correction.profiles_from_csv(
        ctx.read_csv(ctx.out / "corrected_before.csv"))
    after = correction.profiles_from_csv(
        ctx.read_csv(ctx.out / "corrected_after.csv"))
    by_section = {}
    for profile in before:
        by_section.setdefault(profile.section, [{}, {}])[0][
            profile.position] = profile
    for profile in after:
        by_section.setdefault(profile.section, [{}, {}])[1][
            profile.position] = profile
    rows = []
    dropped = 0
    for section in sorted(by_section):
        b, a = by_section[section]
        section_rows, section_dropped = pair_before_after(b, a, section)
        rows.extend(section_rows)
        dropped += section_dropped
    dataset = Dataset(rows)
    path = ctx.write("features.csv", dataset.to_csv())
    click.echo(f"pair: {len(rows)} feature rows ({dropped} keys dropped)")
    return path


@main.command()
@common_options
@guarded
def pair(config_path, seed, out, jobs):
    """Join corrected before/after profiles into feature rows."""
    ctx = build_context(config_path, {"seed": seed, "out": out, "jobs": jobs})
    _run_pair(ctx)


def _load_dataset(ctx: Context) -> Dataset:
    return Dataset.from_csv(ctx.read_csv(ctx.out / "features.csv"))


def _run_ridge(ctx: Context) -> Path:
    dataset = _load_dataset(ctx)
    c = ctx.config["ridge"]
    coefficients = {}
    for target in dataset.target_columns:
        coefficients[target] = ridge_mod.averaged_fit(
            dataset, target, runs=int(c["runs"]),
            subsample=float(c["subsample"]), seed=ctx.seed,
            lambda_grid=tuple(c["lambda_grid"]), folds=int(c["folds"]))
    result = ridge_mod.filter_variables(coefficients,
                                        thresholds=c["thresholds"])
    ctx.write("coefficients.csv", ridge_mod.selection_to_csv(result))
    selection = {
        "config_hash": ctx.hash,
        "seed": ctx.seed,
        "thresholds": result.thresholds,
        "selected": {t: list(v) for t, v in result.selected.items()},
        "fallback": list(result.fallback),
        "coefficients": result.coefficients,
    }
    path = ctx.out / "selection.json"
    path.write_text(json.dumps(selection, indent=2, sort_keys=True) + "\n")
    n_selected = sum(len(v) for v in result.selected.values())
    click.echo(f"ridge: {n_selected} selected coefficients over "
               f"{len(dataset.target_columns)} targets")
    return path


@main.command(name="ridge")
@common_options
@click.option("--thresholds", type=str, default=None,
              help='JSON map, e.g. \'{"speed":0.5,"occupancy":0.5,"flow":50}\'')
@guarded
def ridge_cmd(config_path, seed, out, jobs, thresholds):
    """Averaged ridge coefficients and threshold-based variable selection."""
    overrides = {"seed": seed, "out": out, "jobs": jobs}
    if thresholds is not None:
        overrides["ridge"] = {"thresholds": json.loads(thresholds)}
    ctx = build_context(config_path, overrides)
    _run_ridge(ctx)


def _transfer_params(ctx: Context) -> dict:
    t = ctx.config["transfer"]
    return {"steps": int(t["steps"]), "folds": int(t["folds"]),
            "theta": float(t["theta"]),
            "n_estimators": int(t["n_estimators"]),
            "max_depth": int(t["max_depth"]),
            "substitute_comparator": t["substitute_comparator"]}


def _selected_columns(ctx: Context, dataset: Dataset, target: str):
    selection_path = ctx.out / "selection.json"
    if not selection_path.exists():
        return list(dataset.input_columns)
    selection = json.loads(selection_path.read_text())
    return selection["selected"].get(target, list(dataset.input_columns))


def _column_matrix(dataset: Dataset, columns) -> np.ndarray:
    return np.array([[row.inputs[c] for c in columns]
                     for row in dataset.rows], dtype=float)


@main.command()
@common_options
@click.option("--target", required=True)
@click.option("--target-section", required=True,
              help="Section treated as the new (target-domain) section.")
@click.option("--theta", type=float, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--folds", type=int, default=None)
@click.option("--max-depth", type=int, default=None)
@click.option("--n-estimators", type=int, default=None)
@guarded
def train(config_path, seed, out, jobs, target, target_section, theta, steps,
          folds, max_depth, n_estimators):
    """Fit the two-stage transfer model for one target variable."""
    transfer_over = {k.replace("-", "_"): v for k, v in {
        "theta": theta, "steps": steps, "folds": folds,
        "max_depth": max_depth, "n_estimators": n_estimators}.items()
        if v is not None}
    ctx = build_context(config_path, {"seed": seed, "out": out, "jobs": jobs,
                                      "transfer": transfer_over})
    dataset = _load_dataset(ctx)
    if target_section not in dataset.sections():
        fail(f"section {target_section!r} not present in features")
    held, rest = dataset.split_by_section(target_section)
    columns = _selected_columns(ctx, dataset, target)
    model = TwoStageTrAdaBoostR2(seed=ctx.seed, column_roster=columns,
                                 **_transfer_params(ctx))
    model.fit(_column_matrix(rest, columns), rest.y(target),
              target_inputs=_column_matrix(held, columns))
    doc = model.model_.to_dict()
    doc["config_hash"] = ctx.hash
    doc["seed"] = ctx.seed
    doc["target"] = target
    doc["target_section"] = target_section
    path = ctx.out / f"model_{target}.json"
    ctx.out.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True) + "\n")
    click.echo(f"train: {target} model selected step "
               f"{model.model_.selected_step} "
               f"(cv errors {['%.3f' % e for e in model.model_.step_errors]})")


@main.command()
@common_options
@click.option("--model", "model_path", type=click.Path(), required=True)
@click.option("--section", "section_filter", default=None,
              help="Restrict prediction to one section's rows.")
@guarded
def predict(config_path, seed, out, jobs, model_path, section_filter):
    """Predict with a trained model over the feature file's input rows."""
    ctx = build_context(config_path, {"seed": seed, "out": out, "jobs": jobs})
    path = ctx.require(Path(model_path))
    doc = json.loads(path.read_text())
    model = TransferModel.from_dict(doc)
    dataset = _load_dataset(ctx)
    if section_filter:
        dataset, _ = dataset.split_by_section(section_filter)
    columns = list(model.column_roster) or list(dataset.input_columns)
    predictions = transfer_predict(model, _column_matrix(dataset, columns))
    lines = ["section,dow,hod,moh,prediction"]
    for row, value in zip(dataset.rows, predictions):
        lines.append(f"{row.section},{row.key.dow},{row.key.hod},"
                     f"{row.key.moh},{value!r}")
    out_path = ctx.write("predictions.csv", "\n".join(lines) + "\n")
    click.echo(f"predict: {len(predictions)} predictions -> {out_path}")


def _model_spec(ctx: Context, name: str) -> ModelSpec:
    if name == "tra":
        return ModelSpec(name="tra", params=_transfer_params(ctx))
    if name == "knn":
        return ModelSpec(name="knn", params={
            "n_neighbors": int(ctx.config["knn"]["n_neighbors"])})
    if name == "adaboost":
        t = ctx.config["transfer"]
        return ModelSpec(name="adaboost", params={
            "n_estimators": int(t["n_estimators"]),
            "max_depth": int(t["max_depth"])})
    fail(f"unknown model {name!r}")


def _run_evaluate(ctx: Context) -> MetricReport:
    dataset = _load_dataset(ctx)
    models = ctx.config["evaluate"]["models"]
    targets = ctx.config["evaluate"]["targets"]
    runs = int(ctx.config["runs"])
    combined = MetricReport()
    accumulator = {}
    for run in range(runs):
        run_seed = ctx.seed + run
        for model_name in models:
            spec = _model_spec(ctx, model_name)
            for target in targets:
                report = evaluation.loso_cv(dataset, target, spec,
                                            seed=run_seed)
                for entry in report.entries:
                    accumulator.setdefault(
                        (entry.model, entry.target, entry.section),
                        []).append(entry)
    for (model_name, target, section), entries in sorted(
            accumulator.items()):
        combined.entries.append(MetricEntry(
            target=target, section=section, model=model_name,
            mae=float(np.mean([e.mae for e in entries])),
            rmse=float(np.mean([e.rmse for e in entries])),
            mape=float(np.mean([e.mape for e in entries])),
            mape_skipped=int(sum(e.mape_skipped for e in entries)),
            seconds=float(sum(e.seconds for e in entries))))
    evaluation.emit_report(
        combined, ctx.out,
        header_lines=[f"config_hash={ctx.hash} seed={ctx.seed}"],
        provenance={"config_hash": ctx.hash, "seed": ctx.seed, "runs": runs})
    click.echo(f"evaluate: {len(combined.entries)} (model,target,section) "
               f"entries over {runs} run(s)")
    return combined


@main.command()
@common_options
@click.option("--runs", type=int, default=None)
@guarded
def evaluate(config_path, seed, out, jobs, runs):
    """Leave-one-section-out evaluation of the configured models."""
    ctx = build_context(config_path, {"seed": seed, "out": out, "jobs": jobs,
                                      "runs": runs})
    _run_evaluate(ctx)


@main.command(name="grid-search")
@common_options
@click.option("--model", "model_name",
              type=click.Choice(["tra", "knn"]), default="tra")
@click.option("--target", required=True)
@click.option("--budget", type=int, default=None)
@guarded
def grid_search_cmd(config_path, seed, out, jobs, model_name, target, budget):
    """Exhaustive hyperparameter search scored by mean LOSO MAE."""
    ctx = build_context(config_path, {"seed": seed, "out": out, "jobs": jobs,
                                      "budget": budget})
    dataset = _load_dataset(ctx)
    grid = GridSpec(values={k: list(v) for k, v
                            in ctx.config["grids"][model_name].items()})
    base = (_transfer_params(ctx) if model_name == "tra" else {})
    for dim in grid.values:
        base.pop(dim, None)
    result = evaluation.grid_search(
        dataset, target, grid, model_name=model_name, base_params=base,
        seed=ctx.seed, budget=ctx.config["budget"])
    lines = [",".join(list(grid.values) + ["mean_mae"])]
    for params, score in result.table:
        lines.append(",".join([str(params[k]) for k in grid.values]
                              + [f"{score:.6f}"]))
    ctx.write(f"grid_{model_name}_{target}.csv", "\n".join(lines) + "\n")
    best_path = ctx.out / f"grid_{model_name}_{target}_best.json"
    best_path.write_text(json.dumps(
        {"config_hash": ctx.hash, "seed": ctx.seed,
         "best_params": result.best_params}, indent=2, sort_keys=True) + "\n")
    click.echo(f"grid-search[{model_name}/{target}]: "
               f"{len(result.table)} combinations, best {result.best_params}")


@main.command(name="report")
@common_options
@guarded
def report_cmd(config_path, seed, out, jobs):
    """Re-emit CSV report tables from an existing report.json."""
    ctx = build_context(config_path, {"seed": seed, "out": out, "jobs": jobs})
    path = ctx.require(ctx.out / "report.json")
    report = MetricReport.from_json(json.dumps(
        {"entries": json.loads(path.read_text())["entries"]}))
    evaluation.emit_report(
        report, ctx.out,
        header_lines=[f"config_hash={ctx.hash} seed={ctx.seed}"],
        provenance={"config_hash": ctx.hash, "seed": ctx.seed})
    click.echo(f"report: re-emitted {len(report.entries)} entries")


@main.command()
@common_options
@guarded
def pipeline(config_path, seed, out, jobs):
    """Run ingest, correct, pair, ridge and evaluate in sequence."""
    ctx = build_context(config_path, {"seed": seed, "out": out, "jobs": jobs})
    for period in (Period.BEFORE, Period.AFTER):
        _run_ingest(ctx, period)
        _run_correct(ctx, period)
    _run_pair(ctx)
    _run_ridge(ctx)
    _run_evaluate(ctx)
    click.echo("pipeline: complete")


if __name__ == "__main__":
    main()
