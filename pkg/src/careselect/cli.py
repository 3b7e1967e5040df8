"""Command line entry points: datagen, weights, train, recommend, experiment, serve.

Every command that takes a seed and a simulation-count budget writes
byte-identical output files across runs; nothing nondeterministic (timings,
timestamps) goes into output files, only to stderr.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import click
import numpy as np

from . import catalog as cat
from . import datagen, harness, propensity, scoring, search
from .feature_select import EnsembleSpec, build_ensemble
from .glm import roc_auc
from .scoring import score_risk


def _echo_err(msg):
    click.echo(msg, err=True)


@click.group()
def main():
    """Care-service selection: synthetic data, risk models and plan search."""


@main.command("datagen")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--truth", "truth_path", required=True, type=click.Path())
@click.option("--catalog", "catalog_path", type=click.Path(), default=None,
              help="Catalog JSON output (default: catalog.json next to --out).")
@click.option("--from-truth", "from_truth", type=click.Path(exists=True), default=None,
              help="Sample from an existing truth file (e.g. a held-out evaluation "
                   "cohort with a different seed) instead of generating a new one.")
def datagen_cmd(spec_path, out_path, truth_path, catalog_path, from_truth):
    """Generate a synthetic cohort plus its generating ground truth."""
    spec = datagen.CohortSpec(**cat.load_json(spec_path))
    if from_truth:
        truth = datagen.load_truth(from_truth)
        cohort = datagen.sample_cohort(truth, spec)
    else:
        truth = datagen.generate_ground_truth(spec)
        cohort = datagen.sample_cohort(truth)
    catalog = truth.catalog()
    datagen.save_truth(truth, truth_path)
    datagen.export_cohort(cohort, catalog, out_path)
    if catalog_path is None:
        catalog_path = str(Path(out_path).parent / "catalog.json")
    cat.save_json(cat.catalog_to_json(catalog), catalog_path)
    _echo_err(f"wrote {len(cohort)} patients to {out_path}, truth to {truth_path}, "
              f"catalog to {catalog_path}")


@main.command("weights")
@click.option("--cohort", "cohort_path", required=True, type=click.Path(exists=True))
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--clip", default="0.05,20", show_default=True,
              help="Per-factor clip bounds lo,hi.")
def weights_cmd(cohort_path, catalog_path, out_path, clip):
    """Fit per-service propensities and write record-level weights."""
    catalog = cat.catalog_from_json(cat.load_json(catalog_path))
    cohort = datagen.import_cohort(cohort_path, catalog)
    lo, hi = (float(v) for v in clip.split(","))
    names = sorted(cohort[0].characteristics)
    models = propensity.fit_all_propensities(cohort, catalog, names)
    weights = propensity.compute_weights(cohort, models, names, (lo, hi))
    cat.save_json(
        {
            "weights": weights.weights,
            "metadata": {
                "clip": [lo, hi],
                "stabilized": weights.stabilized,
                "degenerate_services": list(weights.degenerate_services),
            },
        },
        out_path,
    )
    _echo_err(f"wrote weights for {len(cohort)} records to {out_path}")


@main.command("train")
@click.option("--cohort", "cohort_path", required=True, type=click.Path(exists=True))
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True))
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=True))
@click.option("--target-models", default=15, show_default=True)
@click.option("--alpha", default=0.05, show_default=True)
@click.option("--features-per-group", default=50.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--trace-out", type=click.Path(), default=None,
              help="CSV with the per-iteration (groups, features, pruned) trace.")
@click.option("--exclude", "exclude_path", type=click.Path(exists=True), default=None,
              help="JSON test-set file whose pool ids are held out of training.")
def train_cmd(cohort_path, catalog_path, weights_path, target_models, alpha,
              features_per_group, seed, out_path, trace_out, exclude_path):
    """Build the ensemble risk model from a weighted cohort."""
    catalog = cat.catalog_from_json(cat.load_json(catalog_path))
    cohort = datagen.import_cohort(cohort_path, catalog)
    wdoc = cat.load_json(weights_path)
    weights_map = {str(k): float(v) for k, v in wdoc["weights"].items()}
    if exclude_path:
        held_out = set(harness.load_test_set(exclude_path).excluded_ids)
        cohort = [p for p in cohort if p.id not in held_out]
    names = sorted(cohort[0].characteristics)
    spec = EnsembleSpec(target_models=target_models, alpha=alpha,
                        features_per_group=features_per_group, seed=seed)
    w = np.array([weights_map[p.id] for p in cohort])
    ensemble = build_ensemble(spec, cohort, w, catalog, names)
    scores = [score_risk(ensemble, p, p.observed_plan) for p in cohort]
    ensemble.metadata["training_auc"] = roc_auc(scores, [p.observed_outcome for p in cohort])
    scoring.save_model(ensemble, out_path)
    if trace_out:
        with open(trace_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["iteration", "groups", "features_per_group", "pruned", "remaining"]
            )
            writer.writeheader()
            writer.writerows(ensemble.metadata["trace"])
    _echo_err(
        f"ensemble: {len(ensemble.members)} members, "
        f"{ensemble.total_coefficients()} coefficients, "
        f"training AUC {ensemble.metadata['training_auc']:.3f}"
    )


def _load_model_and_cohort(model_path, cohort_path):
    ensemble = scoring.load_model(model_path)
    catalog = scoring.catalog_of(ensemble)
    if catalog is None:
        raise click.ClickException("model has no embedded catalog metadata")
    cohort = datagen.import_cohort(cohort_path, catalog)
    return ensemble, catalog, {p.id: p for p in cohort}


@main.command("recommend")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--cohort", "cohort_path", required=True, type=click.Path(exists=True))
@click.option("--patient", "patient_id", required=True)
@click.option("--mode", default="ph_and_time", show_default=True,
              type=click.Choice(list(search.MODES) + ["dijkstra"]))
@click.option("--budget-sims", default=10000, show_default=True)
@click.option("--budget-seconds", default=None, type=float)
@click.option("--plan-size", default=8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--pin", "pins", multiple=True, help="Service code to force into the plan.")
@click.option("--exploration", default=0.05, show_default=True)
@click.option("--history-influence", default=0.1, show_default=True)
@click.option("--epsilon", default=0.1, show_default=True)
@click.option("--score-only", is_flag=True, help="Score a plan instead of searching.")
@click.option("--plan", "plan_codes", multiple=True,
              help="With --score-only: plan codes (default: the observed plan).")
@click.option("--out", "out_path", type=click.Path(), default=None)
def recommend_cmd(model_path, cohort_path, patient_id, mode, budget_sims, budget_seconds,
                  plan_size, seed, pins, exploration, history_influence, epsilon,
                  score_only, plan_codes, out_path):
    """Search a low-risk plan for one patient (or just score a plan)."""
    ensemble, catalog, by_id = _load_model_and_cohort(model_path, cohort_path)
    if patient_id not in by_id:
        raise click.ClickException(f"unknown patient id {patient_id!r}")
    patient = by_id[patient_id]

    try:
        pinned = tuple(catalog.index_of(c) for c in pins)
        given_plan = catalog.plan_from_codes(plan_codes) if plan_codes else None
    except cat.SchemaError as exc:
        raise click.ClickException(str(exc))

    if score_only:
        plan = given_plan if given_plan is not None else patient.observed_plan
        risk = scoring.score_risk(ensemble, patient, plan)
        doc = {
            "patient_id": patient_id,
            "plan": catalog.codes_of_plan(plan),
            "risk": risk,
            "reward": 1.0 - risk,
        }
    else:
        if mode == "dijkstra":
            result = search.dijkstra_search(ensemble, patient, plan_size, pinned=pinned,
                                            eval_limit=budget_sims, seed=seed)
        else:
            cfg = search.SearchConfig(
                plan_size=plan_size, exploration=exploration,
                history_influence=history_influence, epsilon=epsilon,
                budget_sims=None if budget_seconds else budget_sims,
                budget_seconds=budget_seconds, mode=mode, seed=seed, pinned=pinned,
            )
            result = search.run_search(ensemble, patient, cfg)
        doc = {"patient_id": patient_id, **result.to_json(catalog)}
        _echo_err(f"{result.simulations} simulations in {result.elapsed_seconds:.2f}s "
                  f"({result.sims_per_second:.0f}/s)")
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(text + "\n", encoding="utf-8")
    else:
        click.echo(text)


@main.command("experiment")
@click.option("--suite", required=True,
              type=click.Choice(["tuning", "enhancements", "plan-size", "dijkstra", "roc"]))
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--cohort", "cohort_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--budget-sims", default=2000, show_default=True)
@click.option("--plan-size", default=8, show_default=True)
@click.option("--repeats", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--pool-size", default=500, show_default=True)
def experiment_cmd(suite, model_path, cohort_path, out_dir, budget_sims, plan_size,
                   repeats, seed, pool_size):
    """Run one experiment suite and write tables, raw rows and plot data."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ensemble, catalog, by_id = _load_model_and_cohort(model_path, cohort_path)
    cohort = list(by_id.values())

    if suite == "roc":
        names = sorted(cohort[0].characteristics)
        spec = EnsembleSpec(
            target_models=int(ensemble.metadata.get("target_models", 5)),
            alpha=float(ensemble.metadata.get("alpha", 0.05)),
            seed=seed,
        )
        report = harness.evaluate_model(cohort, catalog, names, spec, seed=seed)
        with open(out / "roc_points.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fpr", "tpr"])
            writer.writerows(report.pop("roc_points"))
        cat.save_json(report, out / "auc_report.json")
        _echo_err(f"ensemble AUC {report['auc_mean']:.3f} ± {report['auc_sd']:.3f}")
        return

    test_set = harness.build_test_set(cohort, ensemble, seed, pool_size=pool_size)
    harness.save_test_set(test_set, out / "test_set.json")
    with open(out / "risk_scatter.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "risk", "decile"])
        writer.writerows((r["id"], r["risk"], r["decile"]) for r in test_set.pool)

    def cfg(moniker, **kw):
        base = dict(plan_size=plan_size, budget_sims=budget_sims, mode=moniker)
        base.update(kw)
        return search.SearchConfig(**base)

    if suite == "tuning":
        configs = [
            ("C=0.05 (vanilla)", cfg("vanilla")),
            ("W=0.1 (PH/MAST)", cfg("ph_mast")),
            ("W=0 (MAST only)", cfg("ph_mast", history_influence=0.0)),
        ]
        report = harness.run_sweep(ensemble, by_id, test_set, configs,
                                   repeats=repeats, base_seed=seed + 1000)
    elif suite == "enhancements":
        configs = []
        for budget in (max(1, budget_sims // 4), budget_sims):
            for mode in search.MODES:
                configs.append((f"{mode} @{budget}", cfg(mode, budget_sims=budget)))
        report = harness.run_sweep(ensemble, by_id, test_set, configs,
                                   repeats=repeats, base_seed=seed + 1000)
    elif suite == "plan-size":
        sizes = sorted({1, max(2, plan_size // 2), plan_size})
        configs = [(f"{d} services", cfg("ph_and_time", plan_size=d)) for d in sizes]
        report = harness.run_sweep(ensemble, by_id, test_set, configs,
                                   repeats=repeats, base_seed=seed + 1000)
    else:  # dijkstra
        report = harness.compare_algorithms(ensemble, by_id, test_set, plan_size=plan_size,
                                            budget=budget_sims, repeats=repeats,
                                            base_seed=seed + 1000)

    report.write_rows_csv(out / "rows.csv")
    (out / "tables.md").write_text(report.to_markdown() + "\n", encoding="utf-8")

    # one showcase case report per low / medium / high risk patient
    cases = []
    for decile in (1, 5, 10):
        pid = test_set.ids_in_decile(decile)[0]
        cfg_case = search.SearchConfig(plan_size=plan_size, budget_sims=budget_sims,
                                       mode="ph_and_time", seed=seed + 1)
        result = search.run_search(ensemble, by_id[pid], cfg_case)
        cases.append(harness.case_report(by_id[pid], result, catalog))
    cat.save_json({"cases": cases}, out / "cases.json")

    for config in report.config_names:
        rate = report.simulation_rate(config)
        if rate > 0:
            _echo_err(f"{config}: {rate:.0f} simulations/s")
        else:
            rows = [r for r in report.rows if r["config"] == config]
            evals = sum(r["evaluations"] for r in rows)
            secs = sum(r["elapsed_seconds"] for r in rows)
            _echo_err(f"{config}: {evals / secs if secs else 0:.0f} evaluations/s")
    sample = by_id[test_set.patient_ids[0]]
    rate = scoring.measure_throughput(ensemble, sample, sample.observed_plan)
    _echo_err(f"scoring throughput: {rate:.0f} plan evaluations/s")
    _echo_err(f"report written to {out_dir}")


@main.command("serve")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True),
              envvar="CARESELECT_MODEL")
@click.option("--cohort", "cohort_path", required=True, type=click.Path(exists=True),
              envvar="CARESELECT_COHORT")
@click.option("--host", default="127.0.0.1", show_default=True, envvar="CARESELECT_HOST")
@click.option("--port", default=8000, show_default=True, envvar="CARESELECT_PORT")
@click.option("--max-budget", default=200000, show_default=True,
              envvar="CARESELECT_MAX_BUDGET",
              help="Largest accepted simulation budget per request.")
def serve_cmd(model_path, cohort_path, host, port, max_budget):
    """Serve the scoring and recommendation HTTP API."""
    import uvicorn

    from .service import create_app

    app = create_app(model_path, cohort_path, max_budget=max_budget)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main(prog_name="careselect")
