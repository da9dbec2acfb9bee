"""Variant-suite runner: per-run CSVs, aggregate tables, latent projections."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from typing import Sequence

import numpy as np

from . import data as dat
from . import metrics as met
from . import model as mdl
from . import trainer as trn
from .config import ExperimentConfig

RUNS_CSV = "results_runs.csv"
AGGREGATE_CSV = "results_aggregate.csv"
TABLE_MD = "results_table.md"
METADATA_JSON = "run_metadata.json"


def atomic_write_text(path, text: str) -> None:
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return repr(float(x))


def write_training_log(path, log: trn.TrainLog) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["step", "cls", "cen", "latent", "total", "val_loss"])
    for step, cls, cen, latent, total, val in log.rows:
        writer.writerow([step, _fmt(cls), _fmt(cen), _fmt(latent), _fmt(total), "" if val is None else _fmt(val)])
    atomic_write_text(path, buf.getvalue())


def write_runs_csv(path, results: Sequence[trn.RunResult]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["variant", "run", "domain", "accuracy", "kappa", "auroc"])
    for r in results:
        for domain, scores in (("target", r.target), ("source", r.source)):
            writer.writerow([r.variant, r.run_index, domain, _fmt(scores.accuracy), _fmt(scores.kappa), _fmt(scores.auroc)])
    atomic_write_text(path, buf.getvalue())


def _aggregate_rows(results: Sequence[trn.RunResult]) -> dict[str, dict[str, dict[str, tuple[float, float]]]]:
    by_variant: dict[str, list[trn.RunResult]] = {}
    for r in results:
        by_variant.setdefault(r.variant, []).append(r)
    out = {}
    for variant, rows in by_variant.items():
        out[variant] = {
            "target": met.aggregate([r.target for r in rows]),
            "source": met.aggregate([r.source for r in rows]),
        }
    return out


def write_aggregate_csv(path, results: Sequence[trn.RunResult]) -> None:
    agg = _aggregate_rows(results)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["variant", "domain", "accuracy_mean", "accuracy_std", "kappa_mean", "kappa_std", "auroc_mean", "auroc_std"])
    for variant, domains in agg.items():
        for domain in ("target", "source"):
            stats = domains[domain]
            writer.writerow(
                [variant, domain]
                + [_fmt(v) for pair in (stats["accuracy"], stats["kappa"], stats["auroc"]) for v in pair]
            )
    atomic_write_text(path, buf.getvalue())


def format_table(results: Sequence[trn.RunResult]) -> str:
    """Markdown table: variants as rows, Target/Source score groups as
    'mean [std]' cells."""
    agg = _aggregate_rows(results)
    header = (
        "| variant | target accuracy | target kappa | target AUROC "
        "| source accuracy | source kappa | source AUROC |"
    )
    sep = "|---" * 7 + "|"
    lines = [header, sep]
    for variant, domains in agg.items():
        cells = [variant]
        for domain in ("target", "source"):
            stats = domains[domain]
            for metric in ("accuracy", "kappa", "auroc"):
                cells.append(met.format_mean_std(*stats[metric]))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def pca_project(latents: np.ndarray) -> np.ndarray:
    """Top-2 principal-component coordinates of the given latent rows.

    Component signs follow a fixed convention (largest-magnitude loading
    positive) so repeated runs produce identical output.
    """
    if latents.shape[0] < 3:
        raise ValueError(f"projection needs at least 3 samples, got {latents.shape[0]}")
    centered = latents - latents.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2]
    for i in range(components.shape[0]):
        j = int(np.argmax(np.abs(components[i])))
        if components[i, j] < 0:
            components[i] = -components[i]
    return centered @ components.T


def dump_latent_projection(params: mdl.ModelParams, samples: Sequence[dat.Sample], out_path) -> None:
    latents = mdl.encode_batch(params, dat.feature_matrix(samples)).values
    coords = pca_project(latents)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["pc1", "pc2", "class_label", "domain_role"])
    for (x, y), s in zip(coords, samples):
        writer.writerow([_fmt(x), _fmt(y), s.class_label, s.domain_role])
    atomic_write_text(out_path, buf.getvalue())


def run_suite(cfg: ExperimentConfig) -> dict:
    """Run every configured variant for n_runs seeds and write the result
    files into cfg.output_dir. Returns a summary dict with per-variant
    failures; a variant that completes no run at all marks the suite failed."""
    cfg.validate()
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)

    all_results: list[trn.RunResult] = []
    failures: dict[str, list[tuple[int, str]]] = {}
    for variant in cfg.variants:
        variant_dir = os.path.join(out_dir, variant.value)
        os.makedirs(variant_dir, exist_ok=True)

        def save_run(result, params, model_cfg, log, _dir=variant_dir):
            run_dir = os.path.join(_dir, f"run_{result.run_index}")
            os.makedirs(run_dir, exist_ok=True)
            mdl.save_checkpoint(os.path.join(run_dir, "checkpoint.npz"), params, model_cfg)
            write_training_log(os.path.join(run_dir, "training_log.csv"), log)

        results, fails = trn.run_experiment(
            variant,
            cfg.n_runs,
            cfg.master_seed,
            cfg.dataset,
            cfg.model,
            cfg.loss,
            cfg.optimizer,
            cfg.early_stop,
            on_run=save_run,
        )
        all_results.extend(results)
        if fails:
            failures[variant.value] = fails

    write_runs_csv(os.path.join(out_dir, RUNS_CSV), all_results)
    write_aggregate_csv(os.path.join(out_dir, AGGREGATE_CSV), all_results)
    atomic_write_text(os.path.join(out_dir, TABLE_MD), format_table(all_results))

    from .config import emit_config

    metadata = {
        "config": emit_config(cfg),
        "notes": {
            "baseline_validation": "baseline variants monitor classification loss on target validation",
            "weight_decay": "coupled, applied to encoder and classifier groups only",
        },
        "failures": failures,
        "runs": [
            {
                "variant": r.variant,
                "run": r.run_index,
                "steps": r.steps_run,
                "best_val": r.best_val,
                "max_latent_norm_dev": r.max_latent_norm_dev,
                "max_center_norm_dev": r.max_center_norm_dev,
                "center_separation": r.center_separation,
            }
            for r in all_results
        ],
    }
    atomic_write_text(os.path.join(out_dir, METADATA_JSON), json.dumps(metadata, indent=2) + "\n")

    completed = {r.variant for r in all_results}
    fully_failed = [v.value for v in cfg.variants if v.value not in completed]
    return {
        "results": all_results,
        "failures": failures,
        "fully_failed": fully_failed,
        "output_dir": out_dir,
    }
