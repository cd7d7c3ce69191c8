"""Experiment orchestration: config, staged pipeline, artifacts, reports, CLI.

The pipeline runs in file-driven stages so any stage can be re-executed from
the artifacts of the previous one:

    prepare-data -> splits/            (cached encoded train/test splits)
    train        -> models/, predictions/biased_run<r>.csv
    mitigate     -> models/, predictions/<method>_run<r>.csv
    plsda        -> report/plsda*.csv, report/plsda.json
    audit        -> report/audit.json
    report       -> report/tables/*.csv

Every artifact embeds the experiment config hash; stages refuse to mix
artifacts produced under different configs.  All randomness derives from
base_seed (run r uses base_seed + r), making reruns byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adversarial_debias import AdvConfig, save_adversarial, train_adversarial
from .data_ingest import (DataIngestError, DatasetManifest, load_dataset_with_report,
                          load_split, save_split)
from .delta_audit import (AuditError, AuditReport, compute_delta, direction_table,
                          group_outcome_rates, impact_fraction, iou, split_signature,
                          stability)
from .fairness_metrics import DegenerateGroupError, compute_fairness_scores
from .lfr import LfrConfig, fit_lfr, lfr_predict_split, save_lfr
from .mlp_core import (MlpError, PredictionSet, TrainConfig, forward, load_model,
                       predict_split, save_model, train_biased)
from .plsda import (PlsError, changed_populations, discriminant_auc,
                    feature_correlations, fit_plsda, project)
from .postprocessing import (apply_group_thresholds, fit_group_thresholds,
                             roc_flip, roc_search)
from .synthetic import ensure_dataset

logger = logging.getLogger(__name__)

REPORT_VERSION = "fairdelta-report v1"
OUTPUT_DIR_ENV = "FAIRDELTA_OUTPUT_DIR"
ALL_METHODS = ("lfr", "adversarial_dp", "adversarial_eo", "roc", "threshold_opt")
_ADV_SEED_OFFSET = 104729  # fixed prime: adversary stream never collides with run seeds

METHOD_DEFAULTS = {
    "lfr": {"K": 10, "reconstruct_weight": 0.01, "target_weight": 10.0,
            "fairness_weight": 15.0, "iterations": 1500, "learning_rate": 0.05},
    "adversarial_dp": {"adversary_weight": 0.3, "adversary_hidden": [16],
                       "adversary_lr": 0.001, "adversary_steps": 1,
                       "projection_enabled": True},
    "adversarial_eo": {"adversary_weight": 40.0, "adversary_hidden": [16],
                       "adversary_lr": 0.001, "adversary_steps": 1,
                       "projection_enabled": True},
    "roc": {"theta": None, "objective_target": 0.9, "search_grid": 0.005},
    "threshold_opt": {},
}

CLASSIFIER_DEFAULTS = {"hidden_sizes": [32, 32], "learning_rate": 0.001,
                       "epochs": 30, "batch_size": 128, "optimizer": "adam",
                       "beta1": 0.9, "beta2": 0.999, "adam_eps": 1e-8,
                       "weight_init_scale": 1.0}


class ExperimentError(RuntimeError):
    """Bad config, missing artifacts, config-hash mismatches."""


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    manifest_path: str
    output_dir: str
    runs: int
    base_seed: int
    fixed_biased_model: bool
    methods: tuple[str, ...]
    classifier: dict
    method_params: dict
    plsda_pairs: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if self.runs < 1:
            raise ExperimentError("runs must be >= 1")
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ExperimentError(f"unknown method {m!r}; choose from {ALL_METHODS}")
        for a, b in self.plsda_pairs:
            if a not in self.methods or b not in self.methods:
                raise ExperimentError(f"plsda pair ({a}, {b}) not covered by methods")

    @classmethod
    def load(cls, path, seed_override: int | None = None,
             out_override: str | None = None) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ExperimentError(f"missing config file: {path}")
        doc = json.loads(path.read_text())
        manifest = Path(doc["manifest"])
        if not manifest.is_absolute():
            manifest = path.parent / manifest
        methods = tuple(doc.get("methods", list(ALL_METHODS)))
        params = {}
        for m in methods:
            block = dict(METHOD_DEFAULTS.get(m, {}))
            block.update(doc.get(m, {}))
            params[m] = block
        classifier = dict(CLASSIFIER_DEFAULTS)
        classifier.update(doc.get("classifier", {}))
        out = doc.get("output_dir", "out")
        if os.environ.get(OUTPUT_DIR_ENV):
            out = os.environ[OUTPUT_DIR_ENV]
        if out_override is not None:
            out = out_override
        base_seed = int(doc.get("base_seed", 0))
        if seed_override is not None:
            base_seed = seed_override
        return cls(
            name=doc.get("name", path.stem),
            manifest_path=str(manifest),
            output_dir=str(out),
            runs=int(doc.get("runs", 10)),
            base_seed=base_seed,
            fixed_biased_model=bool(doc.get("fixed_biased_model", True)),
            methods=methods,
            classifier=classifier,
            method_params=params,
            plsda_pairs=tuple((a, b) for a, b in doc.get("plsda_pairs", [])),
        )

    def effective_dict(self) -> dict:
        # output_dir is a location, not part of the experiment identity
        return {
            "name": self.name,
            "manifest": str(Path(self.manifest_path).name),
            "runs": self.runs,
            "base_seed": self.base_seed,
            "fixed_biased_model": self.fixed_biased_model,
            "methods": list(self.methods),
            "classifier": self.classifier,
            "method_params": self.method_params,
            "plsda_pairs": [list(p) for p in self.plsda_pairs],
        }

    def config_hash(self) -> str:
        text = json.dumps(self.effective_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def classifier_config(self, seed: int) -> TrainConfig:
        block = dict(self.classifier)
        block["hidden_sizes"] = tuple(block["hidden_sizes"])
        return TrainConfig(seed=seed, **block)

    def run_seed(self, run: int) -> int:
        return self.base_seed + run


class Workspace:
    """Canonical artifact layout under the experiment output directory."""

    def __init__(self, config: ExperimentConfig):
        self.root = Path(config.output_dir)
        self.splits = self.root / "splits"
        self.models = self.root / "models"
        self.predictions = self.root / "predictions"
        self.report = self.root / "report"
        self.tables = self.report / "tables"

    def ensure(self):
        for d in (self.splits, self.models, self.predictions, self.tables):
            d.mkdir(parents=True, exist_ok=True)

    def split_path(self, part: str) -> Path:
        return self.splits / f"{part}.txt"

    def model_path(self, role: str, run: int) -> Path:
        ext = "json" if role in ("roc", "threshold_opt") else "txt"
        return self.models / f"{role}_run{run}.{ext}"

    def predictions_path(self, role: str, run: int) -> Path:
        return self.predictions / f"{role}_run{run}.csv"

    @property
    def gaps_path(self) -> Path:
        return self.root / "gaps.json"

    @property
    def audit_path(self) -> Path:
        return self.report / "audit.json"

    @property
    def plsda_path(self) -> Path:
        return self.report / "plsda.json"

    @property
    def dataset_report_path(self) -> Path:
        return self.root / "dataset_report.json"


# ---------------------------------------------------------------------------
# Predictions files: delimited text with a two-line comment header.
# Scores print as %.17g so parse -> serialize round-trips bit-exactly.
# ---------------------------------------------------------------------------

def save_predictions(path, preds: PredictionSet, role: str, run: int,
                     config_hash: str) -> None:
    if preds.s is None or preds.y is None:
        raise ExperimentError("pipeline predictions need s and y columns")
    lines = ["# fairdelta-predictions v1",
             f"# role={role} run={run} config={config_hash}",
             "id,s,y,score,label"]
    for i in range(preds.n):
        lines.append("%d,%d,%d,%s,%d" % (preds.ids[i], preds.s[i], preds.y[i],
                                         "%.17g" % preds.scores[i], preds.labels[i]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_predictions(path) -> tuple[PredictionSet, dict]:
    path = Path(path)
    if not path.exists():
        raise ExperimentError(f"missing predictions file: {path}")
    lines = path.read_text().splitlines()
    if len(lines) < 3 or lines[0] != "# fairdelta-predictions v1":
        raise ExperimentError(f"{path} is not a fairdelta predictions file")
    header = dict(part.split("=", 1) for part in lines[1][2:].split())
    header["run"] = int(header["run"])
    rows = [ln.split(",") for ln in lines[3:] if ln]
    ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    s = np.array([int(r[1]) for r in rows], dtype=np.int64)
    y = np.array([int(r[2]) for r in rows], dtype=np.int64)
    scores = np.array([float(r[3]) for r in rows], dtype=float)
    labels = np.array([int(r[4]) for r in rows], dtype=np.int64)
    return PredictionSet(ids=ids, scores=scores, labels=labels, s=s, y=y), header


def _check_hash(header: dict, config: ExperimentConfig, path) -> None:
    if header.get("config") != config.config_hash():
        raise ExperimentError(
            f"config hash mismatch: {path} was produced under config "
            f"{header.get('config')}, current config is {config.config_hash()}")


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_prepare(config: ExperimentConfig) -> Workspace:
    ws = Workspace(config)
    ws.ensure()
    manifest = DatasetManifest.from_json(config.manifest_path)
    ensure_dataset(manifest)
    train, test, report = load_dataset_with_report(manifest)
    save_split(train, ws.split_path("train"))
    save_split(test, ws.split_path("test"))
    doc = {
        "config_hash": config.config_hash(),
        "dataset": manifest.name,
        "rows_total": report.rows_total,
        "rows_dropped_missing": report.rows_dropped_missing,
        "n_train": report.n_train,
        "n_test": report.n_test,
        "n_features": len(report.columns),
        "split_signature": split_signature(test.ids),
    }
    ws.dataset_report_path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return ws


def _load_split_or_fail(ws: Workspace, part: str):
    path = ws.split_path(part)
    if not path.exists():
        raise ExperimentError(f"missing split file: {path} (run prepare-data first)")
    return load_split(path)


def stage_train(config: ExperimentConfig) -> None:
    ws = Workspace(config)
    ws.ensure()
    train = _load_split_or_fail(ws, "train")
    test = _load_split_or_fail(ws, "test")
    chash = config.config_hash()
    fixed_model = None
    for run in range(config.runs):
        seed = config.base_seed if config.fixed_biased_model else config.run_seed(run)
        if config.fixed_biased_model and fixed_model is not None:
            model = fixed_model
        else:
            model = train_biased(train, config.classifier_config(seed))
            if config.fixed_biased_model:
                fixed_model = model
        save_model(model, ws.model_path("biased", run))
        preds = predict_split(model, test)
        save_predictions(ws.predictions_path("biased", run), preds, "biased", run, chash)


def stage_mitigate(config: ExperimentConfig) -> list[dict]:
    ws = Workspace(config)
    ws.ensure()
    train = _load_split_or_fail(ws, "train")
    test = _load_split_or_fail(ws, "test")
    chash = config.config_hash()
    gaps: list[dict] = []
    for run in range(config.runs):
        model_path = ws.model_path("biased", run)
        if not model_path.exists():
            raise ExperimentError(f"missing model file: {model_path} (run train first)")
        biased = load_model(model_path)
        biased_scores = forward(biased.params, test.X)
        for method in config.methods:
            try:
                preds = _mitigate_cell(config, ws, method, run, train, test,
                                       biased_scores)
                save_predictions(ws.predictions_path(method, run), preds, method,
                                 run, chash)
            except (MlpError, DegenerateGroupError, DataIngestError, PlsError,
                    RuntimeError) as exc:
                logger.warning("cell (%s, run %d) failed: %s", method, run, exc)
                gaps.append({"method": method, "run": run, "error": str(exc)})
    ws.gaps_path.write_text(json.dumps(gaps, sort_keys=True, indent=1) + "\n")
    return gaps


def _mitigate_cell(config, ws, method, run, train, test, biased_scores) -> PredictionSet:
    params = config.method_params[method]
    seed = config.run_seed(run)
    if method == "lfr":
        lcfg = LfrConfig(seed=seed, **params)
        lparams, _ = fit_lfr(train, lcfg)
        save_lfr(lparams, ws.model_path(method, run), lcfg)
        return lfr_predict_split(lparams, test)
    if method in ("adversarial_dp", "adversarial_eo"):
        block = dict(params)
        block["adversary_hidden"] = tuple(block["adversary_hidden"])
        acfg = AdvConfig(mode="DP" if method.endswith("dp") else "EO",
                         classifier=config.classifier_config(seed),
                         adversary_seed=seed + _ADV_SEED_OFFSET, **block)
        result = train_adversarial(train, acfg)
        save_adversarial(result, ws.model_path(method, run))
        return predict_split(result.model, test)
    if method == "roc":
        theta = params.get("theta")
        search = None
        if theta is None:
            search = roc_search(biased_scores, test.s, params["objective_target"],
                                params["search_grid"])
            theta = search.theta
        flipped = roc_flip(biased_scores, test.s, theta)
        doc = {"theta": theta, "searched": search is not None}
        if search is not None:
            doc.update({"p_rule": search.p_rule, "reached": search.reached})
        ws.model_path(method, run).write_text(json.dumps(doc, sort_keys=True) + "\n")
        return PredictionSet(ids=test.ids, scores=flipped.scores,
                             labels=flipped.labels, s=test.s, y=test.y)
    if method == "threshold_opt":
        thresholds = fit_group_thresholds(biased_scores, test.y, test.s, rng_seed=seed)
        applied = apply_group_thresholds(biased_scores, test.s, thresholds)
        ws.model_path(method, run).write_text(thresholds.to_json() + "\n")
        return PredictionSet(ids=test.ids, scores=applied.scores,
                             labels=applied.labels, s=test.s, y=test.y)
    raise ExperimentError(f"unknown method {method!r}")


def stage_plsda(config: ExperimentConfig) -> dict:
    ws = Workspace(config)
    ws.ensure()
    if not config.plsda_pairs:
        ws.plsda_path.write_text("{}\n")
        return {}
    test = _load_split_or_fail(ws, "test")
    summaries = {}
    run = 0
    biased, header = load_predictions(ws.predictions_path("biased", run))
    _check_hash(header, config, ws.predictions_path("biased", run))
    for a, b in config.plsda_pairs:
        key = f"{a}|{b}"
        try:
            preds_a, ha = load_predictions(ws.predictions_path(a, run))
            preds_b, hb = load_predictions(ws.predictions_path(b, run))
            _check_hash(ha, config, ws.predictions_path(a, run))
            _check_hash(hb, config, ws.predictions_path(b, run))
            delta_a = compute_delta(biased, preds_a, a, run)
            delta_b = compute_delta(biased, preds_b, b, run)
            X, labels, ids = changed_populations(test, delta_a, delta_b)
            model = fit_plsda(X, labels, c=2)
            scores = project(model, X)
            corr = feature_correlations(model, X)
            _write_table(ws.report / f"plsda_{a}__{b}_projection.csv",
                         ["id", "label"] + [f"comp{k+1}" for k in range(model.c)],
                         [[int(ids[i]), int(labels[i])] +
                          ["%.17g" % v for v in scores[i]] for i in range(len(ids))])
            _write_table(ws.report / f"plsda_{a}__{b}_correlations.csv",
                         ["feature"] + [f"comp{k+1}" for k in range(model.c)],
                         [[test.columns[j]] + ["%.17g" % v for v in corr[j]]
                          for j in range(len(test.columns))])
            summaries[key] = {
                "auc": discriminant_auc(model, X, labels),
                "n_only_first": int(labels.sum()),
                "n_only_second": int((labels == 0).sum()),
                "components": model.c,
                "rank_deficient": model.rank_deficient,
            }
        except (PlsError, ExperimentError, AuditError) as exc:
            summaries[key] = {"error": str(exc)}
    ws.plsda_path.write_text(json.dumps(summaries, sort_keys=True, indent=1) + "\n")
    return summaries


def stage_audit(config: ExperimentConfig) -> AuditReport:
    ws = Workspace(config)
    ws.ensure()
    test = _load_split_or_fail(ws, "test")
    gaps = []
    if ws.gaps_path.exists():
        gaps = json.loads(ws.gaps_path.read_text())
    failed = {(g["method"], g["run"]) for g in gaps}

    biased_preds = {}
    fairness = {"biased": []}
    group_rates = {"biased": []}
    for run in range(config.runs):
        path = ws.predictions_path("biased", run)
        preds, header = load_predictions(path)
        _check_hash(header, config, path)
        biased_preds[run] = (preds, path)
        fairness["biased"].append(_scores_dict(preds))
        group_rates["biased"].append(
            group_outcome_rates(preds, preds.s, preds.y).as_dict())

    deltas = {m: {} for m in config.methods}
    impact = {}
    directions = {}
    for method in config.methods:
        fairness[method] = []
        group_rates[method] = []
        impact[method] = []
        directions[method] = []
        for run in range(config.runs):
            if (method, run) in failed:
                fairness[method].append(None)
                group_rates[method].append(None)
                impact[method].append(None)
                directions[method].append(None)
                continue
            path = ws.predictions_path(method, run)
            preds, header = load_predictions(path)
            _check_hash(header, config, path)
            base, base_path = biased_preds[run]
            try:
                delta = compute_delta(base, preds, method, run)
            except AuditError as exc:
                raise ExperimentError(f"{exc} ({base_path} vs {path})") from None
            deltas[method][run] = delta
            fairness[method].append(_scores_dict(preds))
            group_rates[method].append(
                group_outcome_rates(preds, preds.s, preds.y).as_dict())
            impact[method].append(impact_fraction(delta))
            directions[method].append(direction_table(delta).as_dict())

    stability_docs = {}
    iou_runs = {}
    for method in config.methods:
        runs_deltas = [deltas[method][r] for r in sorted(deltas[method])]
        if len(runs_deltas) >= 2:
            stability_docs[method] = stability(runs_deltas).as_dict()
            pairwise = [[iou([a, b]) for b in runs_deltas] for a in runs_deltas]
            iou_runs[method] = {"global": iou(runs_deltas), "pairwise": pairwise}

    iou_methods = {"methods": list(config.methods), "per_run": [], "pairwise": {}}
    for run in range(config.runs):
        present = [deltas[m][run] for m in config.methods if run in deltas[m]]
        iou_methods["per_run"].append(iou(present) if len(present) >= 2 else None)
    for i, a in enumerate(config.methods):
        for b in config.methods[i + 1:]:
            vals = []
            for run in range(config.runs):
                if run in deltas[a] and run in deltas[b]:
                    vals.append(iou([deltas[a][run], deltas[b][run]]))
                else:
                    vals.append(None)
            iou_methods["pairwise"][f"{a}|{b}"] = vals

    plsda_doc = {}
    if ws.plsda_path.exists():
        plsda_doc = json.loads(ws.plsda_path.read_text())

    report = AuditReport(
        version=REPORT_VERSION,
        metadata={
            "dataset": json.loads(ws.dataset_report_path.read_text())["dataset"]
            if ws.dataset_report_path.exists() else config.name,
            "config_hash": config.config_hash(),
            "base_seed": config.base_seed,
            "seeds": [config.run_seed(r) for r in range(config.runs)],
            "runs": config.runs,
            "n_test": test.n,
            "split_signature": split_signature(test.ids),
            "methods": list(config.methods),
            "fixed_biased_model": config.fixed_biased_model,
        },
        fairness=fairness,
        impact=impact,
        stability=stability_docs,
        iou_across_runs=iou_runs,
        iou_across_methods=iou_methods,
        directions=directions,
        group_rates=group_rates,
        plsda=plsda_doc,
        gaps=gaps,
    )
    report.validate()
    ws.audit_path.write_text(report.to_json() + "\n")
    return report


def _scores_dict(preds: PredictionSet) -> dict:
    sc = compute_fairness_scores(preds, preds.y, preds.s)
    return {
        "accuracy": sc.accuracy,
        "positive_rate_by_group": list(sc.positive_rate_by_group),
        "p_rule": sc.p_rule,
        "tpr_by_group": list(sc.tpr_by_group),
        "fpr_by_group": list(sc.fpr_by_group),
        "d_tpr": sc.d_tpr,
        "d_fpr": sc.d_fpr,
    }


def stage_report(config: ExperimentConfig, fmt: str = "tables") -> list[Path]:
    ws = Workspace(config)
    ws.ensure()
    if not ws.audit_path.exists():
        raise ExperimentError(f"missing report file: {ws.audit_path} (run audit first)")
    report = AuditReport.from_json(ws.audit_path.read_text())
    return render_report(report, fmt, ws)


def render_report(report: AuditReport, fmt: str, ws: Workspace) -> list[Path]:
    if fmt == "structured":
        ws.audit_path.write_text(report.to_json() + "\n")
        return [ws.audit_path]
    if fmt != "tables":
        raise ExperimentError(f"unknown report format {fmt!r}")
    ws.tables.mkdir(parents=True, exist_ok=True)
    written = []
    methods = list(report.metadata["methods"])
    roles = ["biased"] + methods

    rows = []
    for role in roles:
        per_run = [f for f in report.fairness.get(role, []) if f]
        if not per_run:
            rows.append([role, "NA", "NA", "NA", "NA", 0])
            continue
        mean = lambda key: "%.4f" % float(np.mean([f[key] for f in per_run]))
        rows.append([role, mean("accuracy"), mean("p_rule"), mean("d_tpr"),
                     mean("d_fpr"), len(per_run)])
    written.append(_write_table(ws.tables / "table1.csv",
                                ["model", "accuracy", "p_rule", "d_tpr", "d_fpr",
                                 "runs_used"], rows))

    rows = []
    for method in methods:
        for run, frac in enumerate(report.impact.get(method, [])):
            rows.append([method, run, "NA" if frac is None else "%.6f" % frac])
    written.append(_write_table(ws.tables / "impact.csv",
                                ["method", "run", "impact_fraction"], rows))

    rows = []
    for method, doc in report.stability.items():
        rows.append([method, doc["run_count"], "%.2f" % doc["mean_changed_pct"],
                     "%.2f" % doc["always_changed_pct"]])
    written.append(_write_table(ws.tables / "stability.csv",
                                ["method", "runs", "mean_changed_pct",
                                 "always_changed_pct"], rows))

    rows = []
    for method, doc in report.iou_across_runs.items():
        rows.append(["across_runs", method, "%.6f" % doc["global"]])
    per_run = report.iou_across_methods.get("per_run", [])
    for run, v in enumerate(per_run):
        rows.append(["across_methods", f"run{run}", "NA" if v is None else "%.6f" % v])
    for pair, vals in report.iou_across_methods.get("pairwise", {}).items():
        for run, v in enumerate(vals):
            rows.append([f"pair:{pair}", f"run{run}", "NA" if v is None else "%.6f" % v])
    written.append(_write_table(ws.tables / "iou.csv",
                                ["scope", "key", "iou"], rows))

    for method in methods:
        rows = []
        for run, doc in enumerate(report.directions.get(method, [])):
            if doc is None:
                rows.append([run, "NA", "NA", "NA", "NA"])
                continue
            for direction in ("positive", "negative"):
                for group in ("s0", "s1"):
                    rows.append([run, direction, group,
                                 "%.2f" % doc["cells"][direction][group],
                                 doc["counts"][direction][group]])
        written.append(_write_table(ws.tables / f"directions_{method}.csv",
                                    ["run", "direction", "group", "pct", "count"],
                                    rows))

    rows = []
    for role in roles:
        for run, doc in enumerate(report.group_rates.get(role, [])):
            if doc is None:
                rows.append([role, run] + ["NA"] * 6)
                continue
            tpr = doc["tpr"] or ["NA", "NA"]
            fpr = doc["fpr"] or ["NA", "NA"]
            rows.append([role, run,
                         "%.4f" % doc["e_yhat"][0], "%.4f" % doc["e_yhat"][1],
                         _fmt4(tpr[0]), _fmt4(tpr[1]), _fmt4(fpr[0]), _fmt4(fpr[1])])
    written.append(_write_table(ws.tables / "group_rates.csv",
                                ["model", "run", "e_yhat_s0", "e_yhat_s1",
                                 "tpr_s0", "tpr_s1", "fpr_s0", "fpr_s1"], rows))

    rows = [[g["method"], g["run"], g["error"]] for g in report.gaps]
    written.append(_write_table(ws.tables / "gaps.csv",
                                ["method", "run", "error"], rows))
    return written


def _fmt4(v) -> str:
    return v if isinstance(v, str) else "%.4f" % v


def _write_table(path: Path, header: list, rows: list) -> Path:
    lines = [",".join(str(h) for h in header)]
    for row in rows:
        lines.append(",".join(str(c) for c in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def run_experiment(config: ExperimentConfig) -> Path:
    """Full pipeline; returns the artifact directory."""
    ws = stage_prepare(config)
    stage_train(config)
    stage_mitigate(config)
    stage_plsda(config)
    report = stage_audit(config)
    render_report(report, "tables", ws)
    return ws.root


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairdelta",
        description="Train a biased classifier, derive fair counterparts, and "
                    "audit who the debiasing changes.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("prepare-data", "load the dataset and cache encoded train/test splits"),
        ("train", "train the biased baseline per run and write its predictions"),
        ("mitigate", "derive each fair model per run and write its predictions"),
        ("plsda", "characterize changed populations for configured method pairs"),
        ("audit", "compute the audit report from prediction files"),
        ("report", "render the audit report"),
        ("run-all", "run every stage in order"),
    ):
        p = sub.add_parser(name, help=desc)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override base_seed")
        p.add_argument("--out", default=None, help="override output directory")
        if name == "report":
            p.add_argument("--format", choices=("structured", "tables"),
                           default="tables")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        config = ExperimentConfig.load(args.config, seed_override=args.seed,
                                       out_override=args.out)
        if args.command == "prepare-data":
            stage_prepare(config)
        elif args.command == "train":
            stage_train(config)
        elif args.command == "mitigate":
            stage_mitigate(config)
        elif args.command == "plsda":
            stage_plsda(config)
        elif args.command == "audit":
            stage_audit(config)
        elif args.command == "report":
            stage_report(config, args.format)
        elif args.command == "run-all":
            run_experiment(config)
    except (ExperimentError, DataIngestError, MlpError, AuditError, PlsError,
            DegenerateGroupError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
